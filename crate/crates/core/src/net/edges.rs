//! Partition of refined lanes into edges of parallel lanes.

use std::collections::HashMap;

use crate::geom::Polyline;
use crate::scenario::{LaneCenter, LaneId};

use super::ConversionError;

/// One group of mutually adjacent lanes, ordered rightmost first.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EdgeCandidate {
    pub lanes: Vec<LaneId>,
}

/// Connected components of the (undirected) adjacency graph, each ordered
/// right to left by signed lateral offset; ties go to the lower lane id.
pub fn group_into_edges(lanes: &[LaneCenter]) -> Result<Vec<EdgeCandidate>, ConversionError> {
    let index: HashMap<LaneId, usize> = lanes.iter().enumerate().map(|(i, l)| (l.id, i)).collect();
    let n = lanes.len();
    let mut undirected: Vec<Vec<usize>> = vec![Vec::new(); n];
    // left_of[i] lists lanes lying to the left of lane i
    let mut left_of: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, lane) in lanes.iter().enumerate() {
        for adj in &lane.left_neighbors {
            if let Some(&j) = index.get(&adj.neighbor_id) {
                undirected[i].push(j);
                undirected[j].push(i);
                left_of[i].push(j);
            }
        }
        for adj in &lane.right_neighbors {
            if let Some(&j) = index.get(&adj.neighbor_id) {
                undirected[i].push(j);
                undirected[j].push(i);
                left_of[j].push(i);
            }
        }
    }
    if let Some(cycle) = find_cycle(&left_of) {
        let mut ids: Vec<LaneId> = cycle.into_iter().map(|i| lanes[i].id).collect();
        ids.sort_unstable();
        return Err(ConversionError::AdjacencyCycle { lane_ids: ids });
    }

    let mut comp = vec![usize::MAX; n];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    for start in 0..n {
        if comp[start] != usize::MAX {
            continue;
        }
        let g = groups.len();
        let mut stack = vec![start];
        comp[start] = g;
        let mut members = Vec::new();
        while let Some(i) = stack.pop() {
            members.push(i);
            for &j in &undirected[i] {
                if comp[j] == usize::MAX {
                    comp[j] = g;
                    stack.push(j);
                }
            }
        }
        groups.push(members);
    }

    let mut out = Vec::with_capacity(groups.len());
    for members in groups {
        out.push(EdgeCandidate { lanes: order_right_to_left(lanes, &members) });
    }
    Ok(out)
}

fn order_right_to_left(lanes: &[LaneCenter], members: &[usize]) -> Vec<LaneId> {
    if members.len() == 1 {
        return vec![lanes[members[0]].id];
    }
    let polys: Vec<Polyline> =
        members.iter().map(|&i| Polyline::new(lanes[i].polyline.clone()).expect("validated lane")).collect();
    let reference = (0..members.len())
        .max_by(|&a, &b| polys[a].length().partial_cmp(&polys[b].length()).unwrap().then(b.cmp(&a)))
        .unwrap();
    let mut keyed: Vec<(f64, LaneId)> = members
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            let mid = polys[k].point_at(polys[k].length() / 2.0);
            (polys[reference].project(mid).lateral, lanes[i].id)
        })
        .collect();
    keyed.sort_by(|a, b| {
        if (a.0 - b.0).abs() < 1e-6 {
            a.1.cmp(&b.1)
        } else {
            a.0.partial_cmp(&b.0).unwrap()
        }
    });
    keyed.into_iter().map(|(_, id)| id).collect()
}

/// Some directed cycle of the graph, if one exists.
fn find_cycle(graph: &[Vec<usize>]) -> Option<Vec<usize>> {
    let n = graph.len();
    let mut color = vec![0u8; n];
    let mut parent = vec![usize::MAX; n];
    for root in 0..n {
        if color[root] != 0 {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(root, 0)];
        color[root] = 1;
        while let Some(&mut (v, ref mut k)) = stack.last_mut() {
            if *k < graph[v].len() {
                let w = graph[v][*k];
                *k += 1;
                if color[w] == 1 {
                    let mut cycle = vec![w];
                    let mut x = v;
                    while x != w && x != usize::MAX {
                        cycle.push(x);
                        x = parent[x];
                    }
                    return Some(cycle);
                }
                if color[w] == 0 {
                    color[w] = 1;
                    parent[w] = v;
                    stack.push((w, 0));
                }
            } else {
                color[v] = 2;
                stack.pop();
            }
        }
    }
    None
}
