//! Time-respecting sampling of event neighborhoods.
//!
//! A query `(vj, t')` is answered from a bounded context of past events: up
//! to `n_max` events incident to the target inside `[t0, t')`, then
//! recursively up to `n_max` events incident to each counterpart strictly
//! before the event that introduced it, down to `h_max` hops. The context is
//! then flattened into a static multigraph whose vertices are `(node, time)`
//! instances, so the same node observed at different moments stays distinct.
//!
//! Every random choice flows through one ChaCha stream derived from
//! `(stream seed, target node, query time)`, so contexts for different
//! targets can be built in any order, or concurrently, without changing the
//! result.

use std::collections::{HashMap, HashSet};

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;

use crate::error::{Error, Result};
use crate::graph::{counterpart, EventGraph, IncidenceIndex, NodeId};

/// One sampled event, tagged with how it was reached.
///
/// `anchor` is the (node, reference time) whose neighborhood the event was
/// drawn from: the target `(vj, t')` at hop 1, and `(counterpart, event
/// time)` of the introducing event at deeper hops. `delta` is the anchor's
/// reference time minus the event time, which is strictly positive because
/// expansion windows exclude their right endpoint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SampledEvent {
    pub event_idx: u32,
    pub hop: usize,
    pub anchor: (NodeId, f64),
    pub counterpart: NodeId,
    pub delta: f64,
}

/// The sampled event context for one query.
#[derive(Debug, Clone, PartialEq)]
pub struct SampledContext {
    /// `(vj, t')`: the node and time the prediction is for.
    pub target: (NodeId, f64),
    /// `(t0, t')`: all sampled event times lie in this half-open interval.
    pub window: (f64, f64),
    /// Sampled events in discovery order, shallower hops first.
    pub entries: Vec<SampledEvent>,
}

/// Sampling bounds and the optional recency bias.
#[derive(Debug, Clone, Copy)]
pub struct SampleParams {
    /// Maximum hop depth, at least 1.
    pub h_max: usize,
    /// Per-anchor sample cap, at least 1.
    pub n_max: usize,
    /// When set, candidates are drawn with weight exp(-decay * delta)
    /// instead of uniformly, favouring events close to the anchor time.
    pub recency_decay: Option<f64>,
}

impl SampleParams {
    pub fn uniform(h_max: usize, n_max: usize) -> Self {
        SampleParams { h_max, n_max, recency_decay: None }
    }

    /// Upper bound on the context size: sum of n_max^k over hops 1..=h_max.
    pub fn budget(&self) -> usize {
        let mut total = 0usize;
        let mut layer = 1usize;
        for _ in 0..self.h_max {
            layer = layer.saturating_mul(self.n_max);
            total = total.saturating_add(layer);
        }
        total
    }
}

/// Chooses which candidate indices (into the window slice) survive, in
/// ascending order. Consumes randomness only when the candidate set
/// overflows `n_max`.
fn choose_candidates(
    times: &[f64],
    anchor_time: f64,
    params: &SampleParams,
    rng: &mut ChaCha12Rng,
) -> Vec<usize> {
    let len = times.len();
    if len <= params.n_max {
        return (0..len).collect();
    }
    let mut chosen: Vec<usize> = match params.recency_decay {
        None => index::sample(rng, len, params.n_max).into_vec(),
        Some(decay) => {
            // Weighted reservoir keys per Efraimidis-Spirakis: the n_max
            // smallest values of -ln(u)/w are a weight-proportional sample
            // without replacement.
            use rand::Rng;
            let mut keyed: Vec<(f64, usize)> = times
                .iter()
                .enumerate()
                .map(|(i, &t)| {
                    let weight = (-decay * (anchor_time - t)).exp();
                    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
                    (-u.ln() / weight, i)
                })
                .collect();
            keyed.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
            keyed.truncate(params.n_max);
            keyed.into_iter().map(|(_, i)| i).collect()
        }
    };
    chosen.sort_unstable();
    chosen
}

/// Builds the sampled context for the query `(vj, t_query)` over events in
/// `[t0, t_query)`.
///
/// Hop-1 candidates are all events incident to `vj` in the window; if there
/// are at most `n_max` of them all are taken, otherwise a uniform random
/// subset of size `n_max` is drawn. Each taken event's counterpart `(vi, t)`
/// is expanded the same way over `[t0, t)` - strictly before the event that
/// introduced it - until `h_max` hops. A `(node, time)` instance reached
/// twice is expanded only once.
pub fn sample_context(
    g: &EventGraph,
    idx: &IncidenceIndex,
    vj: NodeId,
    t_query: f64,
    t0: f64,
    params: &SampleParams,
    stream_seed: u64,
) -> Result<SampledContext> {
    if !(t0 < t_query) {
        return Err(Error::Contract(format!(
            "sampling window [{t0}, {t_query}) is empty or reversed"
        )));
    }
    if params.h_max < 1 {
        return Err(Error::Contract("h_max must be at least 1".into()));
    }
    if params.n_max < 1 {
        return Err(Error::Contract("n_max must be at least 1".into()));
    }
    if vj >= g.num_nodes() {
        return Err(Error::Contract(format!(
            "target node {vj} out of range for {} nodes",
            g.num_nodes()
        )));
    }
    let mut rng =
        ChaCha12Rng::from_seed(crate::derive_seed(&[stream_seed, vj as u64, t_query.to_bits()]));
    let mut entries: Vec<SampledEvent> = Vec::new();
    let mut visited: HashSet<(NodeId, u64)> = HashSet::new();
    visited.insert((vj, t_query.to_bits()));
    let mut frontier: Vec<(NodeId, f64)> = vec![(vj, t_query)];
    let mut scratch_times: Vec<f64> = Vec::new();

    for hop in 1..=params.h_max {
        let mut next: Vec<(NodeId, f64)> = Vec::new();
        for &(anchor_node, anchor_time) in &frontier {
            let window = idx.events_in_window(g, anchor_node, t0, anchor_time);
            if window.is_empty() {
                continue;
            }
            scratch_times.clear();
            scratch_times.extend(window.iter().map(|&e| g.events()[e as usize].time));
            let chosen = choose_candidates(&scratch_times, anchor_time, params, &mut rng);
            for wi in chosen {
                let event_idx = window[wi];
                let event = &g.events()[event_idx as usize];
                let vi = counterpart(event, anchor_node);
                entries.push(SampledEvent {
                    event_idx,
                    hop,
                    anchor: (anchor_node, anchor_time),
                    counterpart: vi,
                    delta: anchor_time - event.time,
                });
                if hop < params.h_max && visited.insert((vi, event.time.to_bits())) {
                    next.push((vi, event.time));
                }
            }
        }
        if next.is_empty() {
            break;
        }
        frontier = next;
    }

    Ok(SampledContext { target: (vj, t_query), window: (t0, t_query), entries })
}

/// An edge of the flattened static view: the sampled event `entry` connects
/// the instance it was drawn from to the counterpart's instance at the
/// event time.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ViewEdge {
    pub anchor: usize,
    pub counterpart: usize,
    pub entry: usize,
}

/// A sampled context flattened into a static multigraph over time-stamped
/// node instances.
#[derive(Debug, Clone, PartialEq)]
pub struct StaticView {
    /// Distinct `(node, time)` instances; index 0 is the target `(vj, t')`.
    pub instances: Vec<(NodeId, f64)>,
    /// One edge per sampled event, in context order.
    pub edges: Vec<ViewEdge>,
}

impl StaticView {
    /// Number of incident edges per instance.
    pub fn degrees(&self) -> Vec<usize> {
        let mut deg = vec![0usize; self.instances.len()];
        for e in &self.edges {
            deg[e.anchor] += 1;
            if e.counterpart != e.anchor {
                deg[e.counterpart] += 1;
            } else {
                // a self-loop instance pair still contributes one incidence
                deg[e.counterpart] += 1;
            }
        }
        deg
    }
}

/// Flattens a context into its static view.
///
/// Both endpoints of every sampled event become `(node, event time)`
/// instances, deduplicated exactly on the time bits; the event's edge joins
/// the anchor's instance to the counterpart's instance, so the non-expanded
/// endpoint of an event can appear as an isolated instance.
pub fn context_to_static_view(g: &EventGraph, ctx: &SampledContext) -> StaticView {
    let mut lookup: HashMap<(NodeId, u64), usize> = HashMap::new();
    let mut instances: Vec<(NodeId, f64)> = vec![ctx.target];
    lookup.insert((ctx.target.0, ctx.target.1.to_bits()), 0);
    let mut edges: Vec<ViewEdge> = Vec::with_capacity(ctx.entries.len());
    for (entry, s) in ctx.entries.iter().enumerate() {
        let event = &g.events()[s.event_idx as usize];
        let mut intern = |node: NodeId, time: f64| -> usize {
            *lookup.entry((node, time.to_bits())).or_insert_with(|| {
                instances.push((node, time));
                instances.len() - 1
            })
        };
        let src_inst = intern(event.src, event.time);
        let dst_inst = intern(event.dst, event.time);
        let counterpart_inst = if s.counterpart == event.src { src_inst } else { dst_inst };
        let anchor_inst = *lookup
            .get(&(s.anchor.0, s.anchor.1.to_bits()))
            .expect("anchor instance is interned before its expansions");
        edges.push(ViewEdge { anchor: anchor_inst, counterpart: counterpart_inst, entry });
    }
    StaticView { instances, edges }
}

/// Asserts every causality and budget invariant of a sampled context.
///
/// Violations are internal bugs, surfaced as integrity errors so tests and
/// debug runs fail loudly instead of silently training on leaked futures.
pub fn validate_context(
    g: &EventGraph,
    ctx: &SampledContext,
    params: &SampleParams,
) -> Result<()> {
    let (t0, t_query) = ctx.window;
    if ctx.entries.len() > params.budget() {
        return Err(Error::Integrity(format!(
            "context holds {} entries, budget is {}",
            ctx.entries.len(),
            params.budget()
        )));
    }
    let mut per_anchor: HashMap<(NodeId, u64), usize> = HashMap::new();
    for s in &ctx.entries {
        let event = &g.events()[s.event_idx as usize];
        if s.hop < 1 || s.hop > params.h_max {
            return Err(Error::Integrity(format!("hop {} outside [1, {}]", s.hop, params.h_max)));
        }
        if !(event.time >= t0 && event.time < t_query) {
            return Err(Error::Integrity(format!(
                "event time {} outside window [{t0}, {t_query})",
                event.time
            )));
        }
        if event.time >= s.anchor.1 {
            return Err(Error::Integrity(format!(
                "event at {} not strictly before its anchor time {}",
                event.time, s.anchor.1
            )));
        }
        if s.hop == 1 && s.anchor != ctx.target {
            return Err(Error::Integrity("hop-1 entry anchored away from the target".into()));
        }
        if !(s.delta > 0.0) || !s.delta.is_finite() && s.anchor.1.is_finite() {
            return Err(Error::Integrity(format!("non-causal delta {}", s.delta)));
        }
        if event.src != s.anchor.0 && event.dst != s.anchor.0 {
            return Err(Error::Integrity("entry's event is not incident to its anchor".into()));
        }
        if counterpart(event, s.anchor.0) != s.counterpart {
            return Err(Error::Integrity("entry's counterpart mismatches its event".into()));
        }
        let n = per_anchor.entry((s.anchor.0, s.anchor.1.to_bits())).or_insert(0);
        *n += 1;
        if *n > params.n_max {
            return Err(Error::Integrity(format!(
                "anchor ({}, {}) exceeds the per-anchor cap {}",
                s.anchor.0, s.anchor.1, params.n_max
            )));
        }
    }
    Ok(())
}
