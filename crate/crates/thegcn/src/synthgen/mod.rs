//! Synthetic event graphs with planted class structure.
//!
//! [`generate_synthetic`] plants two independent knobs: a spatial one (the
//! fraction of events connecting different base classes is hit by exact
//! count) and a temporal one (labels rotate, drift, or spike over time).
//! Feature snapshots track each node's label as it changes, so the label
//! signal lives in observing the right neighbors at the right times.
//! Ground truth comes back as [`SynthMeta`] alongside the graph.
//!
//! Submodule [`pems`] holds the sensor-series binning construction.

pub mod pems;

pub use pems::{build_pems_style, PemsParams, SensorSeries};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Directedness, EventGraph, LabeledQuery, NodeFeatures, TemporalEvent};
use crate::{derive_seed, seed_domain};

/// How node labels evolve over the generated duration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TemporalPattern {
    /// One monotone pass through the classes over the duration.
    Linear,
    /// Labels cycle through all classes once per period.
    Periodic { period: f64 },
    /// Transient flips to the next class, starting at the given per-node
    /// rate and reverting after a tenth of the mean gap.
    Spike { rate: f64 },
}

/// Everything that determines one generated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthSpec {
    pub num_nodes: usize,
    pub num_classes: usize,
    pub feature_dim: usize,
    /// Expected events per unit time over the whole graph.
    pub event_rate: f64,
    pub duration: f64,
    /// Target fraction of events whose endpoints have different base
    /// classes, hit by exact count.
    pub spatial_heterophily: f64,
    pub temporal_pattern: TemporalPattern,
    /// Distance of each class's feature-cluster mean from the origin.
    pub feature_separation: f64,
    /// Per-dimension Gaussian feature noise.
    pub feature_noise: f64,
    /// Position within a label phase at which its record is written,
    /// in (0, 1]. Labels are observed late: the phase starts (and the
    /// feature snapshot lands) at the phase boundary, the record follows.
    pub record_phase: f64,
    /// Leading phases that emit no label records (events and feature
    /// snapshots still cover them), so every query has history behind it.
    pub warmup_slots: usize,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        SynthSpec {
            num_nodes: 100,
            num_classes: 2,
            feature_dim: 4,
            event_rate: 200.0,
            duration: 30.0,
            spatial_heterophily: 0.7,
            temporal_pattern: TemporalPattern::Periodic { period: 10.0 },
            feature_separation: 1.0,
            feature_noise: 1.0,
            record_phase: 0.9,
            warmup_slots: 0,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        if self.num_nodes == 0 || self.num_classes == 0 {
            return Err(Error::Config("node and class counts must be positive".into()));
        }
        if !(self.event_rate > 0.0) || !(self.duration > 0.0) {
            return Err(Error::Config(format!(
                "event rate {} and duration {} must be positive",
                self.event_rate, self.duration
            )));
        }
        if !(0.0..=1.0).contains(&self.spatial_heterophily) {
            return Err(Error::Config(format!(
                "spatial heterophily {} must lie in [0, 1]",
                self.spatial_heterophily
            )));
        }
        if !(self.record_phase > 0.0 && self.record_phase <= 1.0) {
            return Err(Error::Config(format!(
                "record phase {} must lie in (0, 1]",
                self.record_phase
            )));
        }
        if !(self.feature_separation.is_finite() && self.feature_noise >= 0.0) {
            return Err(Error::Config("feature separation/noise out of range".into()));
        }
        match self.temporal_pattern {
            TemporalPattern::Periodic { period } if !(period > 0.0) => {
                Err(Error::Config(format!("period {period} must be positive")))
            }
            TemporalPattern::Spike { rate } if !(rate > 0.0) => {
                Err(Error::Config(format!("spike rate {rate} must be positive")))
            }
            _ => Ok(()),
        }
    }
}

/// Planted ground truth emitted with every generated graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthMeta {
    pub spec: SynthSpec,
    /// Base class per node; labels rotate starting from it.
    pub base_class: Vec<usize>,
    /// Whether each event crosses base classes, aligned with the graph's
    /// time-sorted event order.
    pub cross_class: Vec<bool>,
    /// Exact cross-class fraction of the emitted events.
    pub realized_heterophily: f64,
    /// Label phase length for the slotted (linear/periodic) patterns.
    pub slot_length: Option<f64>,
}

/// Standard normal via the Box-Muller transform.
fn sample_normal(rng: &mut impl Rng) -> f64 {
    // u stays away from zero so the log is finite
    let u: f64 = rng.gen_range(f64::MIN_POSITIVE..1.0);
    let v: f64 = rng.gen_range(0.0..std::f64::consts::TAU);
    (-2.0 * u.ln()).sqrt() * v.cos()
}

/// Per-node label trajectory as (change time, label), starting at t = 0.
fn label_changes(spec: &SynthSpec, node: usize, base: usize, rng: &mut impl Rng) -> Vec<(f64, usize)> {
    let c = spec.num_classes;
    match spec.temporal_pattern {
        TemporalPattern::Linear | TemporalPattern::Periodic { .. } => {
            let s = slot_length(spec).expect("slotted pattern");
            let num_slots = (spec.duration / s).ceil() as usize;
            (0..num_slots.max(1)).map(|m| (m as f64 * s, (base + m) % c)).collect()
        }
        TemporalPattern::Spike { rate } => {
            // distinct per-node stream, offset from the shared event stream
            let _ = node;
            let spike_len = 0.1 / rate;
            let mut changes = vec![(0.0, base)];
            let mut t = 0.0;
            loop {
                // exponential inter-arrival gap
                let gap = -rng.gen_range(f64::MIN_POSITIVE..1.0f64).ln() / rate;
                t += gap;
                if t >= spec.duration {
                    break;
                }
                changes.push((t, (base + 1) % c));
                t += spike_len;
                if t >= spec.duration {
                    break;
                }
                changes.push((t, base));
            }
            changes
        }
    }
}

fn slot_length(spec: &SynthSpec) -> Option<f64> {
    match spec.temporal_pattern {
        TemporalPattern::Linear => Some(spec.duration / spec.num_classes as f64),
        TemporalPattern::Periodic { period } => Some(period / spec.num_classes as f64),
        TemporalPattern::Spike { .. } => None,
    }
}

/// Label records derived from a trajectory: slotted patterns record each
/// phase late (at `record_phase` into the phase, skipping the warmup),
/// spikes record every change as it happens.
fn label_records(
    spec: &SynthSpec,
    node: usize,
    changes: &[(f64, usize)],
) -> Vec<LabeledQuery> {
    match spec.temporal_pattern {
        TemporalPattern::Linear | TemporalPattern::Periodic { .. } => {
            let s = slot_length(spec).expect("slotted pattern");
            changes
                .iter()
                .enumerate()
                .skip(spec.warmup_slots)
                .filter_map(|(m, &(_, label))| {
                    let time = m as f64 * s + spec.record_phase * s;
                    (time <= spec.duration).then_some(LabeledQuery { node, time, label })
                })
                .collect()
        }
        TemporalPattern::Spike { .. } => changes
            .iter()
            .map(|&(time, label)| LabeledQuery { node, time, label })
            .collect(),
    }
}

/// Generates an event graph with planted spatial and temporal structure,
/// plus the ground truth that went into it.
pub fn generate_synthetic(spec: &SynthSpec) -> Result<(EventGraph, SynthMeta)> {
    spec.validate()?;
    let n = spec.num_nodes;
    let c = spec.num_classes;
    let base_class: Vec<usize> = (0..n).map(|v| v % c).collect();
    let mut members: Vec<Vec<usize>> = vec![Vec::new(); c];
    for v in 0..n {
        members[base_class[v]].push(v);
    }
    let nonempty_groups = members.iter().filter(|m| !m.is_empty()).count();

    let num_events = (spec.event_rate * spec.duration).round() as usize;
    let num_cross = (spec.spatial_heterophily * num_events as f64).round() as usize;
    let num_same = num_events - num_cross;
    if num_cross > 0 && nonempty_groups < 2 {
        return Err(Error::Contract(format!(
            "cannot plant cross-class events with {nonempty_groups} populated class(es)"
        )));
    }
    let same_eligible: Vec<usize> = members
        .iter()
        .filter(|m| m.len() >= 2)
        .flat_map(|m| m.iter().copied())
        .collect();
    if num_same > 0 && same_eligible.is_empty() {
        return Err(Error::Contract(
            "cannot plant same-class events: every class has a single node".into(),
        ));
    }

    let mut rng = ChaCha12Rng::from_seed(derive_seed(&[spec.seed, seed_domain::SYNTH]));

    // exact-count cross flags in random time order
    let mut flags = vec![true; num_cross];
    flags.extend(std::iter::repeat(false).take(num_same));
    flags.shuffle(&mut rng);

    let mut events = Vec::with_capacity(num_events);
    for cross in flags {
        let time = rng.gen_range(0.0..spec.duration);
        let (src, dst) = if cross {
            let src = rng.gen_range(0..n);
            let g_src = base_class[src];
            let mut k = rng.gen_range(0..n - members[g_src].len());
            let mut dst = None;
            for (g, m) in members.iter().enumerate() {
                if g == g_src {
                    continue;
                }
                if k < m.len() {
                    dst = Some(m[k]);
                    break;
                }
                k -= m.len();
            }
            (src, dst.expect("counted into some other group"))
        } else {
            let src = same_eligible[rng.gen_range(0..same_eligible.len())];
            let group = &members[base_class[src]];
            let pos = group.iter().position(|&v| v == src).expect("member of its group");
            let mut j = rng.gen_range(0..group.len() - 1);
            if j == pos {
                j = group.len() - 1;
            }
            (src, group[j])
        };
        events.push(TemporalEvent { src, dst, time, edge_feat: None });
    }

    // labels and label-tracking feature snapshots
    let mut records = Vec::new();
    let mut per_node_feats: Vec<Vec<(f64, Vec<f64>)>> = Vec::with_capacity(n);
    let d = spec.feature_dim;
    for v in 0..n {
        let changes = label_changes(spec, v, base_class[v], &mut rng);
        records.extend(label_records(spec, v, &changes));
        if d > 0 {
            let snaps = changes
                .iter()
                .map(|&(time, label)| {
                    let mut x: Vec<f64> =
                        (0..d).map(|_| spec.feature_noise * sample_normal(&mut rng)).collect();
                    x[label % d] += spec.feature_separation;
                    (time, x)
                })
                .collect();
            per_node_feats.push(snaps);
        }
    }
    if records.is_empty() {
        return Err(Error::Contract(
            "the label schedule leaves no records inside the duration".into(),
        ));
    }

    let features = if d > 0 {
        NodeFeatures::Snapshots { dim: d, per_node: per_node_feats }
    } else {
        NodeFeatures::None
    };
    let graph = EventGraph::new(n, events, features, records, c, Directedness::Undirected)?;

    let cross_class: Vec<bool> = graph
        .events()
        .iter()
        .map(|e| base_class[e.src] != base_class[e.dst])
        .collect();
    let realized_heterophily = if num_events == 0 {
        0.0
    } else {
        num_cross as f64 / num_events as f64
    };
    let meta = SynthMeta {
        spec: spec.clone(),
        base_class,
        cross_class,
        realized_heterophily,
        slot_length: slot_length(spec),
    };
    Ok((graph, meta))
}
