//! Edge-heterophily and label-dynamics metrics.
//!
//! The static metric treats the event multiset as one graph and counts the
//! fraction of events whose endpoints disagree at a reference time. The
//! temporal metric restricts to one node's incident events inside a time
//! window and compares each counterpart's label at the event time against
//! the node's label at the window end; a zero denominator yields an explicit
//! `None` rather than 0, since 0 would falsely assert homophily.

use crate::error::{Error, Result};
use crate::graph::{counterpart, EventGraph, IncidenceIndex, NodeId};

fn coverage_error(what: &str, mut nodes: Vec<NodeId>, at: f64) -> Error {
    nodes.sort_unstable();
    nodes.dedup();
    let shown: Vec<String> = nodes.iter().take(20).map(|n| n.to_string()).collect();
    let suffix = if nodes.len() > 20 { format!(" and {} more", nodes.len() - 20) } else { String::new() };
    Error::Coverage(format!("{what} unlabeled at {at}: nodes [{}]{suffix}", shown.join(", ")))
}

/// Fraction of events whose endpoint labels (resolved at `label_at`) differ.
/// Each event row counts once, repeated pairs included.
pub fn static_edge_heterophily(g: &EventGraph, label_at: f64) -> Result<f64> {
    if g.events().is_empty() {
        return Err(Error::Contract("edge heterophily of a graph with no events".into()));
    }
    let mut unlabeled = Vec::new();
    let mut differing = 0usize;
    for e in g.events() {
        match (g.resolve_label(e.src, label_at), g.resolve_label(e.dst, label_at)) {
            (Some(a), Some(b)) => {
                if a != b {
                    differing += 1;
                }
            }
            (a, b) => {
                if a.is_none() {
                    unlabeled.push(e.src);
                }
                if b.is_none() {
                    unlabeled.push(e.dst);
                }
            }
        }
    }
    if !unlabeled.is_empty() {
        return Err(coverage_error("event endpoints", unlabeled, label_at));
    }
    Ok(differing as f64 / g.events().len() as f64)
}

/// Fraction of events incident to `vj` in `[t1, t2)` whose counterpart label
/// at the event time differs from `vj`'s label at `t2`. `None` when no
/// incident events fall in the window.
pub fn temporal_edge_heterophily(
    g: &EventGraph,
    index: &IncidenceIndex,
    t1: f64,
    t2: f64,
    vj: NodeId,
) -> Result<Option<f64>> {
    if t1 >= t2 {
        return Err(Error::Contract(format!("window [{t1}, {t2}) is empty or reversed")));
    }
    let own = g
        .resolve_label(vj, t2)
        .ok_or_else(|| coverage_error("target node", vec![vj], t2))?;
    let in_window = index.events_in_window(g, vj, t1, t2);
    if in_window.is_empty() {
        return Ok(None);
    }
    let mut unlabeled = Vec::new();
    let mut differing = 0usize;
    for &i in in_window {
        let e = &g.events()[i as usize];
        let vi = counterpart(e, vj);
        match g.resolve_label(vi, e.time) {
            Some(l) => {
                if l != own {
                    differing += 1;
                }
            }
            None => unlabeled.push(vi),
        }
    }
    if !unlabeled.is_empty() {
        return Err(coverage_error("counterpart nodes", unlabeled, t1));
    }
    Ok(Some(differing as f64 / in_window.len() as f64))
}

/// Among nodes with at least two label records in the closed window
/// `[t_a, t_b]`, the fraction whose recorded classes are not all equal.
pub fn temporal_changing_ratio(g: &EventGraph, window: (f64, f64)) -> Result<f64> {
    let (ta, tb) = window;
    if ta > tb {
        return Err(Error::Contract(format!("window [{ta}, {tb}] is reversed")));
    }
    let mut eligible = 0usize;
    let mut changed = 0usize;
    for node in 0..g.num_nodes() {
        let tl = g.label_timeline(node);
        let lo = tl.partition_point(|&(t, _)| t < ta);
        let hi = tl.partition_point(|&(t, _)| t <= tb);
        let slice = &tl[lo..hi];
        if slice.len() < 2 {
            continue;
        }
        eligible += 1;
        if slice.iter().any(|&(_, c)| c != slice[0].1) {
            changed += 1;
        }
    }
    if eligible == 0 {
        return Err(Error::Contract(format!(
            "no node has two label records inside [{ta}, {tb}]"
        )));
    }
    Ok(changed as f64 / eligible as f64)
}
