//! Event-based continuous graphs.
//!
//! An [`EventGraph`] is an immutable, time-sorted store of timestamped
//! interactions plus two time-indexed providers: node features and node
//! labels, both resolved by the latest record at or before a query time.
//! Ingestion, persistence and the heterophily metrics live in the [`io`] and
//! [`metrics`] submodules.

use crate::error::{Error, Result};

pub mod io;
pub mod metrics;

pub type NodeId = usize;

/// One timestamped interaction between two nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TemporalEvent {
    pub src: NodeId,
    pub dst: NodeId,
    pub time: f64,
    /// Present on every event or on none, with a dataset-wide dimension.
    pub edge_feat: Option<Vec<f64>>,
}

/// Whether event rows carry an orientation. Storage is identical; this only
/// drives the default incidence treatment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Directedness {
    Undirected,
    Directed,
}

/// Node feature provider.
#[derive(Debug, Clone, PartialEq)]
pub enum NodeFeatures {
    /// No feature table loaded; metrics work, model training does not.
    None,
    /// One row per node, independent of time.
    Static { dim: usize, table: Vec<Vec<f64>> },
    /// Per-node time-sorted snapshots resolved latest-at-or-before.
    Snapshots { dim: usize, per_node: Vec<Vec<(f64, Vec<f64>)>> },
}

/// A supervision point: this node carries this label at this time.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LabeledQuery {
    pub node: NodeId,
    pub time: f64,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EventGraph {
    num_nodes: usize,
    events: Vec<TemporalEvent>,
    node_feats: NodeFeatures,
    /// Per node, (time, class) sorted by time with distinct times.
    labels: Vec<Vec<(f64, usize)>>,
    num_classes: usize,
    directedness: Directedness,
    edge_feat_dim: usize,
}

impl EventGraph {
    /// Validates and indexes raw parts. Events are stably sorted by
    /// (time, src, dst), so full ties keep their input order.
    pub fn new(
        num_nodes: usize,
        mut events: Vec<TemporalEvent>,
        node_feats: NodeFeatures,
        label_records: Vec<LabeledQuery>,
        num_classes: usize,
        directedness: Directedness,
    ) -> Result<Self> {
        if num_nodes == 0 {
            return Err(Error::Contract("graph with zero nodes".into()));
        }
        if num_classes == 0 {
            return Err(Error::Contract("graph with zero classes".into()));
        }

        let mut edge_feat_dim = None;
        for (i, e) in events.iter().enumerate() {
            if e.src >= num_nodes || e.dst >= num_nodes {
                return Err(Error::Integrity(format!(
                    "event {i} connects ({}, {}) but the graph has {num_nodes} nodes",
                    e.src, e.dst
                )));
            }
            if !e.time.is_finite() {
                return Err(Error::Integrity(format!("event {i} has non-finite time")));
            }
            let dim = e.edge_feat.as_ref().map(|f| f.len());
            match (edge_feat_dim, dim) {
                (None, d) => edge_feat_dim = Some(d),
                (Some(seen), d) if seen != d => {
                    return Err(Error::Schema {
                        path: "<events>".into(),
                        msg: format!(
                            "event {i} has edge-feature arity {dim:?} but earlier events have {seen:?}"
                        ),
                    })
                }
                _ => {}
            }
        }
        let edge_feat_dim = edge_feat_dim.flatten().unwrap_or(0);

        match &node_feats {
            NodeFeatures::None => {}
            NodeFeatures::Static { dim, table } => {
                if table.len() != num_nodes {
                    return Err(Error::Integrity(format!(
                        "static feature table has {} rows for {num_nodes} nodes",
                        table.len()
                    )));
                }
                if let Some((i, row)) = table.iter().enumerate().find(|(_, r)| r.len() != *dim) {
                    return Err(Error::Schema {
                        path: "<node_feats>".into(),
                        msg: format!("node {i} has {} features, expected {dim}", row.len()),
                    });
                }
            }
            NodeFeatures::Snapshots { dim, per_node } => {
                if per_node.len() != num_nodes {
                    return Err(Error::Integrity(format!(
                        "snapshot table covers {} nodes of {num_nodes}",
                        per_node.len()
                    )));
                }
                for (node, snaps) in per_node.iter().enumerate() {
                    for w in snaps.windows(2) {
                        if w[1].0 <= w[0].0 {
                            return Err(Error::Integrity(format!(
                                "node {node} has unsorted or duplicate snapshot times"
                            )));
                        }
                    }
                    if let Some((t, row)) = snaps.iter().find(|(_, r)| r.len() != *dim) {
                        return Err(Error::Schema {
                            path: "<node_feats>".into(),
                            msg: format!(
                                "snapshot (node {node}, t={t}) has {} features, expected {dim}",
                                row.len()
                            ),
                        });
                    }
                }
            }
        }

        let mut labels: Vec<Vec<(f64, usize)>> = vec![Vec::new(); num_nodes];
        for q in &label_records {
            if q.node >= num_nodes {
                return Err(Error::Integrity(format!(
                    "label record names node {} but the graph has {num_nodes} nodes",
                    q.node
                )));
            }
            if q.label >= num_classes {
                return Err(Error::Integrity(format!(
                    "label {} on node {} outside 0..{num_classes}",
                    q.label, q.node
                )));
            }
            if !q.time.is_finite() {
                return Err(Error::Integrity(format!("label on node {} has non-finite time", q.node)));
            }
            labels[q.node].push((q.time, q.label));
        }
        for (node, timeline) in labels.iter_mut().enumerate() {
            timeline.sort_by(|a, b| a.0.total_cmp(&b.0));
            if timeline.windows(2).any(|w| w[0].0 == w[1].0) {
                return Err(Error::Integrity(format!("node {node} has two labels at one time")));
            }
        }

        events.sort_by(|a, b| {
            a.time.total_cmp(&b.time).then(a.src.cmp(&b.src)).then(a.dst.cmp(&b.dst))
        });

        Ok(EventGraph { num_nodes, events, node_feats, labels, num_classes, directedness, edge_feat_dim })
    }

    pub fn num_nodes(&self) -> usize {
        self.num_nodes
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn events(&self) -> &[TemporalEvent] {
        &self.events
    }

    pub fn directedness(&self) -> Directedness {
        self.directedness
    }

    pub fn edge_feat_dim(&self) -> usize {
        self.edge_feat_dim
    }

    pub fn node_feats(&self) -> &NodeFeatures {
        &self.node_feats
    }

    /// Feature dimension, when a feature table is loaded.
    pub fn feature_dim(&self) -> Option<usize> {
        match &self.node_feats {
            NodeFeatures::None => None,
            NodeFeatures::Static { dim, .. } | NodeFeatures::Snapshots { dim, .. } => Some(*dim),
        }
    }

    /// Label from the latest record at or before `time`, if any.
    pub fn resolve_label(&self, node: NodeId, time: f64) -> Option<usize> {
        let timeline = self.labels.get(node)?;
        let idx = timeline.partition_point(|&(t, _)| t <= time);
        idx.checked_sub(1).map(|i| timeline[i].1)
    }

    /// Feature vector for `node` as seen at `time` (latest-at-or-before for
    /// snapshot tables, time-independent for static tables).
    pub fn feature_at(&self, node: NodeId, time: f64) -> Option<&[f64]> {
        match &self.node_feats {
            NodeFeatures::None => None,
            NodeFeatures::Static { table, .. } => table.get(node).map(|r| r.as_slice()),
            NodeFeatures::Snapshots { per_node, .. } => {
                let snaps = per_node.get(node)?;
                let idx = snaps.partition_point(|(t, _)| *t <= time);
                idx.checked_sub(1).map(|i| snaps[i].1.as_slice())
            }
        }
    }

    /// All label records as supervision queries, ordered by (node, time).
    pub fn labeled_queries(&self) -> Vec<LabeledQuery> {
        let mut out = Vec::new();
        for (node, timeline) in self.labels.iter().enumerate() {
            for &(time, label) in timeline {
                out.push(LabeledQuery { node, time, label });
            }
        }
        out
    }

    /// Label timeline of one node, time-sorted.
    pub fn label_timeline(&self, node: NodeId) -> &[(f64, usize)] {
        &self.labels[node]
    }

    /// True when no labeled node ever changes class, the regime where splits
    /// should be made per node rather than per (node, time) query.
    pub fn labels_are_static(&self) -> bool {
        self.labels
            .iter()
            .all(|tl| tl.windows(2).all(|w| w[0].1 == w[1].1))
    }

    /// (min, max) over event and label times; `None` for an empty graph.
    pub fn time_range(&self) -> Option<(f64, f64)> {
        let mut range: Option<(f64, f64)> = None;
        let mut fold = |t: f64| {
            range = Some(match range {
                None => (t, t),
                Some((lo, hi)) => (lo.min(t), hi.max(t)),
            });
        };
        for e in &self.events {
            fold(e.time);
        }
        for tl in &self.labels {
            for &(t, _) in tl {
                fold(t);
            }
        }
        range
    }
}

// ── incidence index ────────────────────────────────────────────────────────

/// Which events count as incident to a node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IncidenceDirection {
    /// An event touches both endpoints (undirected reading).
    Both,
    /// An event touches only its destination.
    DstOnly,
}

/// Per-node lists of incident event indices in time order, enabling
/// windowed queries by binary search.
#[derive(Debug, Clone)]
pub struct IncidenceIndex {
    direction: IncidenceDirection,
    lists: Vec<Vec<u32>>,
}

impl IncidenceIndex {
    pub fn build(g: &EventGraph, direction: IncidenceDirection) -> Self {
        let mut lists = vec![Vec::new(); g.num_nodes()];
        // events are time-sorted, so each list is too
        for (i, e) in g.events().iter().enumerate() {
            let i = i as u32;
            match direction {
                IncidenceDirection::Both => {
                    lists[e.dst].push(i);
                    if e.src != e.dst {
                        lists[e.src].push(i);
                    }
                }
                IncidenceDirection::DstOnly => lists[e.dst].push(i),
            }
        }
        IncidenceIndex { direction, lists }
    }

    pub fn direction(&self) -> IncidenceDirection {
        self.direction
    }

    /// Indices of events incident to `node` with time in `[t0, t_end)`.
    pub fn events_in_window(&self, g: &EventGraph, node: NodeId, t0: f64, t_end: f64) -> &[u32] {
        let list = &self.lists[node];
        let events = g.events();
        let lo = list.partition_point(|&i| events[i as usize].time < t0);
        let hi = list.partition_point(|&i| events[i as usize].time < t_end);
        &list[lo..hi]
    }

    /// All events incident to `node`.
    pub fn all_events(&self, node: NodeId) -> &[u32] {
        &self.lists[node]
    }
}

/// The endpoint of `event` that is not `node`; for self-loops this is the
/// node itself.
pub fn counterpart(event: &TemporalEvent, node: NodeId) -> NodeId {
    if event.src == node {
        event.dst
    } else {
        event.src
    }
}
