//! Event graphs built from sensor-like time series.
//!
//! Per interval, each node proposes its `k` flow-nearest peers; proposals
//! surviving the position-distance filter become events at that interval's
//! timestamp, deduplicated per unordered pair. Speed bins (equal width over
//! the global range) become one-hot feature snapshots and occupancy bins
//! become label records.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Directedness, EventGraph, LabeledQuery, NodeFeatures, TemporalEvent};

/// Per-node, per-interval sensor readings with static positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SensorSeries {
    /// Length of one reading interval in time units.
    pub interval_len: f64,
    /// One (lat, lon) pair per node, in raw degrees.
    pub positions: Vec<(f64, f64)>,
    /// `flow[node][interval]`.
    pub flow: Vec<Vec<f64>>,
    pub speed: Vec<Vec<f64>>,
    pub occupancy: Vec<Vec<f64>>,
}

impl SensorSeries {
    pub fn num_nodes(&self) -> usize {
        self.positions.len()
    }

    pub fn num_intervals(&self) -> usize {
        self.flow.first().map_or(0, Vec::len)
    }

    fn validate(&self) -> Result<()> {
        let n = self.num_nodes();
        let t = self.num_intervals();
        if n == 0 || t == 0 {
            return Err(Error::Contract("sensor series with no nodes or no intervals".into()));
        }
        if !(self.interval_len > 0.0) {
            return Err(Error::Contract(format!(
                "interval length {} must be positive",
                self.interval_len
            )));
        }
        for (name, series) in
            [("flow", &self.flow), ("speed", &self.speed), ("occupancy", &self.occupancy)]
        {
            if series.len() != n || series.iter().any(|row| row.len() != t) {
                return Err(Error::Contract(format!(
                    "{name} series must be {n} nodes x {t} intervals"
                )));
            }
        }
        Ok(())
    }
}

/// Construction knobs; the defaults mirror the usual sensor setup.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PemsParams {
    /// Flow-nearest peers each node proposes per interval.
    pub k_nearest: usize,
    /// Maximum Euclidean position distance for a proposal to survive.
    pub dist_threshold: f64,
    pub n_speed_bins: usize,
    pub n_occ_bins: usize,
}

impl Default for PemsParams {
    fn default() -> Self {
        PemsParams { k_nearest: 5, dist_threshold: 1e-6, n_speed_bins: 10, n_occ_bins: 5 }
    }
}

/// Equal-width bin edges over a quantity's global range; a flat range
/// cannot be binned.
struct Binner {
    min: f64,
    width: f64,
    bins: usize,
}

impl Binner {
    fn over(name: &str, values: impl Iterator<Item = f64>, bins: usize) -> Result<Binner> {
        let (mut min, mut max) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            min = min.min(v);
            max = max.max(v);
        }
        if !(max > min) {
            return Err(Error::Contract(format!(
                "{name} range is degenerate (min = max = {min}); equal-width bins are undefined"
            )));
        }
        Ok(Binner { min, width: (max - min) / bins as f64, bins })
    }

    /// Bin index with the global top edge inclusive.
    fn bin(&self, v: f64) -> usize {
        (((v - self.min) / self.width) as usize).min(self.bins - 1)
    }
}

fn euclid(a: (f64, f64), b: (f64, f64)) -> f64 {
    ((a.0 - b.0).powi(2) + (a.1 - b.1).powi(2)).sqrt()
}

/// Builds the event graph of a sensor series: flow-similarity events,
/// speed-bin one-hot features, occupancy-bin labels.
pub fn build_pems_style(series: &SensorSeries, params: &PemsParams) -> Result<EventGraph> {
    series.validate()?;
    if params.k_nearest == 0 {
        return Err(Error::Contract("k_nearest must be at least 1".into()));
    }
    if !(params.dist_threshold > 0.0) {
        return Err(Error::Contract(format!(
            "distance threshold {} must be positive",
            params.dist_threshold
        )));
    }
    if params.n_speed_bins == 0 || params.n_occ_bins == 0 {
        return Err(Error::Contract("bin counts must be positive".into()));
    }
    let n = series.num_nodes();
    let intervals = series.num_intervals();

    let speed_bins = Binner::over(
        "speed",
        series.speed.iter().flatten().copied(),
        params.n_speed_bins,
    )?;
    let occ_bins = Binner::over(
        "occupancy",
        series.occupancy.iter().flatten().copied(),
        params.n_occ_bins,
    )?;

    let mut events = Vec::new();
    for t in 0..intervals {
        let time = t as f64 * series.interval_len;
        let mut pairs = std::collections::BTreeSet::new();
        for i in 0..n {
            // k flow-nearest peers, ties broken by node id
            let mut order: Vec<usize> = (0..n).filter(|&j| j != i).collect();
            order.sort_by(|&a, &b| {
                let da = (series.flow[a][t] - series.flow[i][t]).abs();
                let db = (series.flow[b][t] - series.flow[i][t]).abs();
                da.total_cmp(&db).then(a.cmp(&b))
            });
            for &j in order.iter().take(params.k_nearest) {
                if euclid(series.positions[i], series.positions[j]) <= params.dist_threshold {
                    pairs.insert((i.min(j), i.max(j)));
                }
            }
        }
        events.extend(pairs.into_iter().map(|(src, dst)| TemporalEvent {
            src,
            dst,
            time,
            edge_feat: None,
        }));
    }

    let per_node: Vec<Vec<(f64, Vec<f64>)>> = (0..n)
        .map(|i| {
            (0..intervals)
                .map(|t| {
                    let mut one_hot = vec![0.0; params.n_speed_bins];
                    one_hot[speed_bins.bin(series.speed[i][t])] = 1.0;
                    (t as f64 * series.interval_len, one_hot)
                })
                .collect()
        })
        .collect();

    let mut labels = Vec::with_capacity(n * intervals);
    for node in 0..n {
        for t in 0..intervals {
            labels.push(LabeledQuery {
                node,
                time: t as f64 * series.interval_len,
                label: occ_bins.bin(series.occupancy[node][t]),
            });
        }
    }

    EventGraph::new(
        n,
        events,
        NodeFeatures::Snapshots { dim: params.n_speed_bins, per_node },
        labels,
        params.n_occ_bins,
        Directedness::Undirected,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::derive_seed;
    use crate::graph::metrics::temporal_changing_ratio;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn random_series(n: usize, intervals: usize, spread: f64, seed: u64) -> SensorSeries {
        let mut rng = ChaCha12Rng::from_seed(derive_seed(&[seed, 0x9e75]));
        SensorSeries {
            interval_len: 5.0,
            positions: (0..n)
                .map(|_| (rng.gen_range(-spread..=spread), rng.gen_range(-spread..=spread)))
                .collect(),
            flow: (0..n)
                .map(|_| (0..intervals).map(|_| rng.gen_range(0.0..400.0)).collect())
                .collect(),
            speed: (0..n)
                .map(|_| (0..intervals).map(|_| rng.gen_range(20.0..80.0)).collect())
                .collect(),
            occupancy: (0..n)
                .map(|_| (0..intervals).map(|_| rng.gen_range(0.0..1.0)).collect())
                .collect(),
        }
    }

    #[test]
    fn identical_positions_yield_one_event_per_interval() {
        let mut series = random_series(2, 8, 0.0, 1);
        series.positions = vec![(3.0, 4.0); 2];
        let g = build_pems_style(&series, &PemsParams::default()).unwrap();
        assert_eq!(g.events().len(), 8);
        for (t, e) in g.events().iter().enumerate() {
            assert_eq!((e.src, e.dst), (0, 1));
            assert_eq!(e.time, t as f64 * 5.0);
        }
        assert_eq!(g.num_classes(), 5);
        assert_eq!(g.labeled_queries().len(), 16);
    }

    #[test]
    fn the_global_speed_maximum_lands_in_the_top_bin() {
        let mut series = random_series(4, 3, 10.0, 2);
        series.speed[2][1] = 120.0; // global max
        series.speed[0][0] = 10.0; // global min
        let g = build_pems_style(&series, &PemsParams::default()).unwrap();
        let top = g.feature_at(2, 5.0).unwrap();
        assert_eq!(top[9], 1.0, "max speed one-hot {top:?}");
        assert_eq!(top.iter().sum::<f64>(), 1.0);
        let bottom = g.feature_at(0, 0.0).unwrap();
        assert_eq!(bottom[0], 1.0, "min speed one-hot {bottom:?}");
    }

    /// Membership oracle: `j` is proposed by `i` iff fewer than `k` other
    /// nodes are strictly flow-closer (ties by id), computed by counting
    /// rather than sorting.
    #[test]
    fn construction_matches_a_counting_oracle() {
        let series = random_series(20, 15, 1.0, 3);
        let params = PemsParams { dist_threshold: 0.8, ..PemsParams::default() };
        let g = build_pems_style(&series, &params).unwrap();

        let mut expected = Vec::new();
        for t in 0..15 {
            let mut pairs = std::collections::BTreeSet::new();
            for i in 0..20 {
                for j in 0..20 {
                    if i == j {
                        continue;
                    }
                    let dj = (series.flow[j][t] - series.flow[i][t]).abs();
                    let closer = (0..20)
                        .filter(|&l| l != i && l != j)
                        .filter(|&l| {
                            let dl = (series.flow[l][t] - series.flow[i][t]).abs();
                            dl < dj || (dl == dj && l < j)
                        })
                        .count();
                    let proposed = closer < params.k_nearest;
                    let close_enough =
                        euclid(series.positions[i], series.positions[j]) <= params.dist_threshold;
                    if proposed && close_enough {
                        pairs.insert((i.min(j), i.max(j)));
                    }
                }
            }
            expected.extend(pairs.into_iter().map(|(a, b)| (t as f64 * 5.0, a, b)));
        }
        let got: Vec<(f64, usize, usize)> =
            g.events().iter().map(|e| (e.time, e.src, e.dst)).collect();
        assert!(!got.is_empty(), "threshold 0.8 over +-1 degree should keep some pairs");
        assert_eq!(got, expected);
    }

    #[test]
    fn degenerate_ranges_are_rejected_by_name() {
        let mut series = random_series(3, 4, 1.0, 4);
        for row in &mut series.speed {
            row.fill(55.0);
        }
        match build_pems_style(&series, &PemsParams::default()) {
            Err(Error::Contract(msg)) => assert!(msg.contains("speed"), "{msg}"),
            other => panic!("expected contract error, got {other:?}"),
        }
        let mut series = random_series(3, 4, 1.0, 5);
        for row in &mut series.occupancy {
            row.fill(0.5);
        }
        match build_pems_style(&series, &PemsParams::default()) {
            Err(Error::Contract(msg)) => assert!(msg.contains("occupancy"), "{msg}"),
            other => panic!("expected contract error, got {other:?}"),
        }
    }

    #[test]
    fn malformed_series_and_params_are_rejected() {
        let mut series = random_series(3, 4, 1.0, 6);
        series.flow[1].pop();
        assert!(build_pems_style(&series, &PemsParams::default()).is_err());
        let series = random_series(3, 4, 1.0, 7);
        let bad = PemsParams { dist_threshold: 0.0, ..PemsParams::default() };
        assert!(build_pems_style(&series, &bad).is_err());
        let bad = PemsParams { k_nearest: 0, ..PemsParams::default() };
        assert!(build_pems_style(&series, &bad).is_err());
    }

    #[test]
    fn iid_occupancy_changes_nearly_every_label() {
        let series = random_series(30, 12, 1.0, 8);
        let g = build_pems_style(&series, &PemsParams::default()).unwrap();
        let ratio = temporal_changing_ratio(&g, (0.0, 11.0 * 5.0)).unwrap();
        assert!(ratio > 0.9, "changing ratio {ratio}");
    }
}
