//! Aggregation of metric reports into a summary table and SVG histograms.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::metrics::MetricsReport;
use crate::pipeline::PipelineError;

/// Every `*.report.json` directly inside `dir`, sorted by file name.
pub fn load_reports(dir: &Path) -> Result<Vec<MetricsReport>, PipelineError> {
    let io_err = |source| PipelineError::Io { path: dir.display().to_string(), source };
    let mut paths: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_err)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().is_some_and(|n| n.to_string_lossy().ends_with(".report.json")))
        .collect();
    paths.sort();
    if paths.is_empty() {
        return Err(PipelineError::Input(format!("{}: no report files", dir.display())));
    }
    paths
        .iter()
        .map(|p| {
            let text = fs::read_to_string(p).map_err(|source| PipelineError::Io { path: p.display().to_string(), source })?;
            serde_json::from_str(&text).map_err(|e| PipelineError::Input(format!("{}: {e}", p.display())))
        })
        .collect()
}

/// Named per-report values plotted and averaged by the report command.
pub fn series(reports: &[MetricsReport]) -> Vec<(&'static str, Vec<Option<f64>>)> {
    let col = |f: &dyn Fn(&MetricsReport) -> Option<f64>| reports.iter().map(f).collect::<Vec<_>>();
    vec![
        ("realism_meta", col(&|r| r.realism_meta)),
        ("kinematic", col(&|r| r.groups.kinematic)),
        ("interactive", col(&|r| r.groups.interactive)),
        ("map", col(&|r| r.groups.map)),
        ("linear_speed", col(&|r| r.components.linear_speed)),
        ("linear_accel", col(&|r| r.components.linear_accel)),
        ("angular_speed", col(&|r| r.components.angular_speed)),
        ("angular_accel", col(&|r| r.components.angular_accel)),
        ("collision_indication", col(&|r| r.components.collision_indication)),
        ("distance_to_nearest", col(&|r| r.components.distance_to_nearest)),
        ("ttc", col(&|r| r.components.ttc)),
        ("offroad_indication", col(&|r| r.components.offroad_indication)),
        ("distance_to_road_edge", col(&|r| r.components.distance_to_road_edge)),
        ("collision_rate", col(&|r| Some(r.collision_rate))),
        ("offroad_rate", col(&|r| Some(r.offroad_rate))),
        ("min_ade", col(&|r| r.min_ade)),
    ]
}

/// Mean of every metric over the reports that have a value for it.
#[derive(Debug, Clone, PartialEq)]
pub struct Aggregate {
    pub n_reports: usize,
    pub means: Vec<(&'static str, Option<f64>)>,
}

pub fn aggregate(reports: &[MetricsReport]) -> Aggregate {
    let means = series(reports)
        .into_iter()
        .map(|(name, vals)| {
            let v: Vec<f64> = vals.into_iter().flatten().collect();
            (name, (!v.is_empty()).then(|| v.iter().sum::<f64>() / v.len() as f64))
        })
        .collect();
    Aggregate { n_reports: reports.len(), means }
}

/// Header plus one data row; empty cells mark metrics no report scored.
pub fn aggregate_csv(agg: &Aggregate) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["n_reports".to_string()];
    header.extend(agg.means.iter().map(|(n, _)| format!("mean_{n}")));
    let mut row = vec![agg.n_reports.to_string()];
    row.extend(agg.means.iter().map(|(_, m)| m.map(|m| format!("{m:.6}")).unwrap_or_default()));
    w.write_record(&header).expect("in-memory write");
    w.write_record(&row).expect("in-memory write");
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv is utf-8")
}

const BINS: usize = 10;
const W: f64 = 420.0;
const H: f64 = 240.0;
const PAD: f64 = 36.0;

/// Bar histogram of `values` over ten equal bins on `[0, 1]`, or on
/// `[0, max]` when values exceed one.
pub fn histogram_svg(title: &str, values: &[f64]) -> String {
    let hi = values.iter().copied().fold(1.0, f64::max);
    let mut counts = [0usize; BINS];
    for &v in values {
        let k = ((v / hi) * BINS as f64).floor().clamp(0.0, (BINS - 1) as f64) as usize;
        counts[k] += 1;
    }
    let peak = counts.iter().copied().max().unwrap_or(0).max(1);
    let plot_w = W - 2.0 * PAD;
    let plot_h = H - 2.0 * PAD;
    let bar_w = plot_w / BINS as f64;
    let mut s = String::new();
    let _ = writeln!(s, "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">");
    let _ = writeln!(s, "  <rect width=\"{W}\" height=\"{H}\" fill=\"white\"/>");
    let _ = writeln!(s, "  <text x=\"{}\" y=\"20\" font-family=\"sans-serif\" font-size=\"14\" text-anchor=\"middle\">{title} (n={})</text>", W / 2.0, values.len());
    for (k, &c) in counts.iter().enumerate() {
        let h = plot_h * c as f64 / peak as f64;
        let x = PAD + k as f64 * bar_w;
        let _ = writeln!(s, "  <rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{h:.1}\" fill=\"#4878a8\"/>", H - PAD - h, bar_w - 2.0);
    }
    let _ = writeln!(s, "  <line x1=\"{PAD}\" y1=\"{0}\" x2=\"{1}\" y2=\"{0}\" stroke=\"black\"/>", H - PAD, W - PAD);
    for (x, label) in [(PAD, "0".to_string()), (W - PAD, format!("{hi:.2}"))] {
        let _ = writeln!(s, "  <text x=\"{x}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"middle\">{label}</text>", H - PAD + 16.0);
    }
    let _ = writeln!(s, "  <text x=\"{}\" y=\"{}\" font-family=\"sans-serif\" font-size=\"11\" text-anchor=\"end\">{peak}</text>", PAD - 4.0, PAD + 4.0);
    s.push_str("</svg>\n");
    s
}

/// Writes `aggregate.csv`, `reports.csv` and one SVG per metric into `out`.
pub fn write_report_artifacts(reports: &[MetricsReport], out: &Path) -> Result<Vec<PathBuf>, PipelineError> {
    let io_err = |p: &Path| {
        let path = p.display().to_string();
        move |source| PipelineError::Io { path, source }
    };
    fs::create_dir_all(out).map_err(io_err(out))?;
    let mut files = Vec::new();
    let mut put = |name: String, text: String| -> Result<(), PipelineError> {
        let p = out.join(name);
        fs::write(&p, text).map_err(io_err(&p))?;
        files.push(p);
        Ok(())
    };
    put("aggregate.csv".into(), aggregate_csv(&aggregate(reports)))?;
    put("reports.csv".into(), crate::metrics::summary_csv(reports))?;
    for (name, vals) in series(reports) {
        let v: Vec<f64> = vals.into_iter().flatten().collect();
        put(format!("{name}.svg"), histogram_svg(name, &v))?;
    }
    Ok(files)
}
