//! Behavior parameter distributions.

use rand::Rng;
use rand_distr::{Distribution, Exp, LogNormal, StandardNormal};
use serde::{Deserialize, Serialize};

/// Standard normal truncated to `[a, b]` via Robert's accept-reject scheme:
/// normal or uniform proposals when the interval covers the mode, a shifted
/// exponential proposal in the tails.
pub fn std_trunc_normal<R: Rng + ?Sized>(rng: &mut R, a: f64, b: f64) -> f64 {
    assert!(a < b, "empty truncation interval [{a}, {b}]");
    if b <= 0.0 {
        return -std_trunc_normal(rng, -b, -a);
    }
    if a <= 0.0 {
        // interval contains the mode
        if b - a >= (2.0 * std::f64::consts::PI).sqrt() {
            loop {
                let z: f64 = rng.sample(StandardNormal);
                if z >= a && z <= b {
                    return z;
                }
            }
        }
        loop {
            let z = rng.gen_range(a..=b);
            if rng.gen::<f64>() <= (-0.5 * z * z).exp() {
                return z;
            }
        }
    }
    // a > 0: right tail
    let lambda = 0.5 * (a + (a * a + 4.0).sqrt());
    let root = (a * a + 4.0).sqrt();
    let uniform_better = b - a < ((a * a - a * root) / 4.0 + 0.5).exp() / lambda;
    if uniform_better {
        loop {
            let z = rng.gen_range(a..=b);
            if rng.gen::<f64>() <= (0.5 * (a * a - z * z)).exp() {
                return z;
            }
        }
    }
    loop {
        let z = a - rng.gen::<f64>().ln() / lambda;
        if z > b {
            continue;
        }
        if rng.gen::<f64>() <= (-0.5 * (z - lambda) * (z - lambda)).exp() {
            return z;
        }
    }
}

/// `N(mu, sigma^2)` truncated to `[lo, hi]`.
pub fn trunc_normal<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let z = std_trunc_normal(rng, (lo - mu) / sigma, (hi - mu) / sigma);
    (mu + sigma * z).clamp(lo, hi)
}

/// Lognormal with log-space `mu`, `sigma`, truncated to `[lo, hi]` in value space.
pub fn trunc_lognormal<R: Rng + ?Sized>(rng: &mut R, mu: f64, sigma: f64, lo: f64, hi: f64) -> f64 {
    let llo = if lo > 0.0 { lo.ln() } else { f64::NEG_INFINITY };
    let lhi = hi.ln();
    trunc_normal(rng, mu, sigma, llo, lhi).exp().clamp(lo, hi)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BehaviorParams {
    pub speed_factor: f64,
    pub min_gap: f64,
    pub accel: f64,
    pub decel: f64,
    pub sigma: f64,
    pub tau: f64,
    pub startup_delay: f64,
    pub min_gap_lat: f64,
    pub lc_keep_right: f64,
    pub lc_sublane: f64,
    pub jm_stop_line_gap: f64,
    pub jm_sigma_minor: f64,
    pub jm_ignore_keep_clear_time: Option<f64>,
}

/// Truncation bounds per parameter, `(name, lo, hi)`.
pub const PARAM_BOUNDS: [(&str, f64, f64); 12] = [
    ("speedFactor", 0.0, f64::INFINITY),
    ("minGap", 0.0, 5.0),
    ("accel", 1.0, 4.5),
    ("decel", 1.0, 4.5),
    ("sigma", 0.0, 1.0),
    ("tau", 0.0, 5.0),
    ("startupDelay", 0.0, f64::INFINITY),
    ("minGapLat", 0.4, 0.8),
    ("lcKeepRight", 0.0, 1.5),
    ("lcSublane", 0.0, 10.0),
    ("jmStopLineGap", 1.0, f64::INFINITY),
    ("jmSigmaMinor", 0.0, 1.0),
];

/// Mean of startupDelay's exponential, seconds.
pub const STARTUP_DELAY_MEAN: f64 = 3.0;
pub const SPEED_FACTOR_FLOOR: f64 = 0.75;

impl BehaviorParams {
    /// Values in `PARAM_BOUNDS` order, under their SUMO attribute names.
    pub fn named(&self) -> [(&'static str, f64); 12] {
        [
            ("speedFactor", self.speed_factor),
            ("minGap", self.min_gap),
            ("accel", self.accel),
            ("decel", self.decel),
            ("sigma", self.sigma),
            ("tau", self.tau),
            ("startupDelay", self.startup_delay),
            ("minGapLat", self.min_gap_lat),
            ("lcKeepRight", self.lc_keep_right),
            ("lcSublane", self.lc_sublane),
            ("jmStopLineGap", self.jm_stop_line_gap),
            ("jmSigmaMinor", self.jm_sigma_minor),
        ]
    }

    pub fn within_bounds(&self) -> bool {
        self.named().iter().zip(PARAM_BOUNDS.iter()).all(|((_, v), (_, lo, hi))| v.is_finite() && v >= lo && v <= hi)
    }
}

/// Mean of the speedFactor normal: the historical speed ratio, floored.
/// `None` when the speed limit is unusable.
pub fn speed_factor_mean(v_history: f64, v_limit: f64) -> Option<f64> {
    (v_limit > 0.0 && v_limit.is_finite()).then(|| SPEED_FACTOR_FLOOR.max(v_history / v_limit))
}

/// Draws one parameter set. Draw order is fixed so a given rng state always
/// yields the same parameters.
pub fn sample_with<R: Rng + ?Sized>(rng: &mut R, speed_factor_mean: f64, keep_clear: Option<f64>) -> BehaviorParams {
    let startup = Exp::new(1.0 / STARTUP_DELAY_MEAN).expect("positive rate");
    let stop_gap = LogNormal::new(0.4, 0.5).expect("valid lognormal");
    BehaviorParams {
        speed_factor: trunc_normal(rng, speed_factor_mean, 0.1, 0.0, f64::INFINITY),
        min_gap: trunc_normal(rng, 2.5, 0.5, 0.0, 5.0),
        accel: trunc_normal(rng, 2.0, 0.2, 1.0, 4.5),
        decel: trunc_normal(rng, 2.5, 0.2, 1.0, 4.5),
        sigma: trunc_normal(rng, 0.5, 0.2, 0.0, 1.0),
        tau: trunc_lognormal(rng, 0.0, 0.1, 0.0, 5.0),
        startup_delay: startup.sample(rng),
        min_gap_lat: trunc_normal(rng, 0.6, 0.08, 0.4, 0.8),
        lc_keep_right: trunc_lognormal(rng, 100.0, 0.1, 0.0, 1.5),
        lc_sublane: trunc_normal(rng, 0.4, 0.3, 0.0, 10.0),
        jm_stop_line_gap: stop_gap.sample(rng) + 1.0,
        jm_sigma_minor: trunc_normal(rng, 0.5, 0.2, 0.0, 1.0),
        jm_ignore_keep_clear_time: keep_clear,
    }
}
