//! Controlled comparisons: ablation variants on shared splits and the
//! sampler-size/depth parameter study.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EventGraph, IncidenceIndex};
use crate::model::{AttentionRecord, SignedMode};
use crate::training::{
    collect_attention, train, RunConfig, RunReport, SplitGranularity,
};
use crate::{derive_u64, seed_domain};

/// One model variant aggregated over the shared seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub name: String,
    pub config: RunConfig,
    /// Per-seed split digests; identical across variants by construction.
    pub split_digests: Vec<String>,
    pub test_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Ablation outcome: the full model against its two reduced variants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub variants: Vec<VariantSummary>,
    /// `full - variant` mean-accuracy gaps, aligned with `variants`
    /// (the leading entry, full against itself, is zero).
    pub mean_deltas: Vec<f64>,
    /// Edge-weight diagnostics of the full variant over every labeled
    /// query and every seed.
    pub attention_samples: Vec<AttentionRecord>,
    /// Signed-weight counts over `[-1, 1]` in ten width-0.2 bins.
    pub signed_histogram: [usize; 10],
}

/// One grid cell of the parameter study.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepCell {
    pub n_max: usize,
    pub smp_layers: usize,
    pub test_accuracies: Vec<f64>,
    pub mean_accuracy: f64,
    pub std_accuracy: f64,
}

/// Parameter-study outcome over the `n_max` x layer-count grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub seeds: Vec<u64>,
    pub cells: Vec<SweepCell>,
}

fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

fn population_std(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / xs.len() as f64).sqrt()
}

/// Bin index of a signed weight in `[-1, 1]`: ten width-0.2 bins, interior
/// edges going to the upper bin and the top edge of the last bin inclusive.
/// The guard absorbs representation error of the decimal edges (-0.8 stored
/// as a double sits just below the exact boundary).
pub fn signed_bin(w: f64) -> usize {
    debug_assert!((-1.0..=1.0).contains(&w), "signed weight {w} out of range");
    (((w + 1.0) * 5.0 + 1e-12).floor() as usize).min(9)
}

fn run_variant_over_seeds(
    g: &EventGraph,
    base: &RunConfig,
    seeds: &[u64],
    name: &str,
    cfg_of: impl Fn(&RunConfig) -> RunConfig,
) -> Result<(VariantSummary, Vec<(u64, RunReport, crate::model::ThegcnModel)>)> {
    let mut digests = Vec::with_capacity(seeds.len());
    let mut accuracies = Vec::with_capacity(seeds.len());
    let mut runs = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        let cfg = RunConfig { seed, ..cfg_of(base) };
        let (model, report) = train(g, &cfg)?;
        let acc = report.test_accuracy.ok_or_else(|| {
            Error::Contract("controlled comparison needs a nonempty test split".into())
        })?;
        digests.push(report.split_digest.clone());
        accuracies.push(acc);
        runs.push((seed, report, model));
    }
    let summary = VariantSummary {
        name: name.to_string(),
        config: cfg_of(base),
        split_digests: digests,
        mean_accuracy: mean(&accuracies),
        std_accuracy: population_std(&accuracies),
        test_accuracies: accuracies,
    };
    Ok((summary, runs))
}

/// Trains the full model and its two reductions over `num_seeds` seeds
/// starting at the base config's seed, on identical splits, and collects
/// edge-weight diagnostics from the full variant.
pub fn run_ablation_suite(
    g: &EventGraph,
    base: &RunConfig,
    num_seeds: usize,
) -> Result<AblationReport> {
    if num_seeds == 0 {
        return Err(Error::Config("an ablation needs at least one seed".into()));
    }
    let seeds: Vec<u64> = (0..num_seeds as u64).map(|k| base.seed + k).collect();

    let (full, full_runs) =
        run_variant_over_seeds(g, base, &seeds, "full", |b| b.clone())?;
    let (nonneg, _) = run_variant_over_seeds(g, base, &seeds, "nonneg_sigmoid", |b| {
        RunConfig { signed_mode: SignedMode::NonnegSigmoid, ..b.clone() }
    })?;
    let (no_te, _) = run_variant_over_seeds(g, base, &seeds, "no_time_encoding", |b| {
        RunConfig { use_time_encoding: false, ..b.clone() }
    })?;

    let variants = vec![full, nonneg, no_te];
    for v in &variants[1..] {
        if v.split_digests != variants[0].split_digests {
            return Err(Error::Integrity(format!(
                "variant {} saw different splits than the full model",
                v.name
            )));
        }
    }
    let mean_deltas: Vec<f64> = variants
        .iter()
        .map(|v| variants[0].mean_accuracy - v.mean_accuracy)
        .collect();

    let mut attention_samples = Vec::new();
    let queries = g.labeled_queries();
    for (seed, _, model) in &full_runs {
        let cfg = RunConfig { seed: *seed, ..base.clone() };
        let index = IncidenceIndex::build(g, cfg.incidence);
        let stream = derive_u64(&[cfg.seed, seed_domain::EVAL]);
        attention_samples
            .extend(collect_attention(model, g, &index, &cfg, &queries, stream)?);
    }
    let mut signed_histogram = [0usize; 10];
    for rec in &attention_samples {
        signed_histogram[signed_bin(rec.signed)] += 1;
    }

    Ok(AblationReport { seeds, variants, mean_deltas, attention_samples, signed_histogram })
}

/// Trains one model per `(n_max, layers)` grid cell over `num_seeds`
/// seeds and aggregates test accuracy per cell.
pub fn run_param_study(
    g: &EventGraph,
    base: &RunConfig,
    n_max_grid: &[usize],
    layer_grid: &[usize],
    num_seeds: usize,
) -> Result<SweepReport> {
    if num_seeds == 0 || n_max_grid.is_empty() || layer_grid.is_empty() {
        return Err(Error::Config("the parameter study needs seeds and a nonempty grid".into()));
    }
    let seeds: Vec<u64> = (0..num_seeds as u64).map(|k| base.seed + k).collect();
    let mut cells = Vec::with_capacity(n_max_grid.len() * layer_grid.len());
    for &n_max in n_max_grid {
        for &layers in layer_grid {
            let name = format!("n_max={n_max} layers={layers}");
            let (summary, _) = run_variant_over_seeds(g, base, &seeds, &name, |b| {
                RunConfig { n_max, smp_layers: layers, ..b.clone() }
            })?;
            cells.push(SweepCell {
                n_max,
                smp_layers: layers,
                test_accuracies: summary.test_accuracies,
                mean_accuracy: summary.mean_accuracy,
                std_accuracy: summary.std_accuracy,
            });
        }
    }
    Ok(SweepReport { seeds, cells })
}

/// Forces query-granularity splits; controlled comparisons on graphs with
/// static labels would otherwise re-randomise whole nodes, which is still
/// shared across variants but harder to reason about in small fixtures.
pub fn comparison_base(cfg: &RunConfig) -> RunConfig {
    RunConfig { split_granularity: SplitGranularity::Query, ..cfg.clone() }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::{Directedness, NodeFeatures};
    use crate::training::LabeledQuery;

    fn fixture() -> EventGraph {
        let n = 24;
        let classes = 2;
        let features: Vec<Vec<f64>> = (0..n)
            .map(|v| (0..classes).map(|c| if v % classes == c { 1.0 } else { 0.0 }).collect())
            .collect();
        EventGraph::new(
            n,
            vec![],
            NodeFeatures::Static { dim: classes, table: features },
            (0..n).map(|v| LabeledQuery { node: v, time: 0.0, label: v % classes }).collect(),
            classes,
            Directedness::Undirected,
        )
        .unwrap()
    }

    fn tiny_cfg() -> RunConfig {
        RunConfig {
            epochs: 3,
            hidden_dim: 4,
            time_dim: 2,
            h_max: 1,
            n_max: 3,
            smp_layers: 1,
            batch_size: 8,
            seed: 21,
            split_granularity: SplitGranularity::Query,
            ..RunConfig::default()
        }
    }

    #[test]
    fn histogram_bins_cover_the_signed_range() {
        assert_eq!(signed_bin(-1.0), 0);
        assert_eq!(signed_bin(-0.81), 0);
        assert_eq!(signed_bin(-0.8), 1);
        assert_eq!(signed_bin(0.0), 5);
        assert_eq!(signed_bin(0.99), 9);
        assert_eq!(signed_bin(1.0), 9);
    }

    #[test]
    fn ablation_reports_three_variants_on_identical_splits() {
        let g = fixture();
        let report = run_ablation_suite(&g, &tiny_cfg(), 2).unwrap();
        assert_eq!(report.seeds, vec![21, 22]);
        let names: Vec<&str> = report.variants.iter().map(|v| v.name.as_str()).collect();
        assert_eq!(names, ["full", "nonneg_sigmoid", "no_time_encoding"]);
        for v in &report.variants {
            assert_eq!(v.split_digests, report.variants[0].split_digests);
            assert_eq!(v.test_accuracies.len(), 2);
        }
        assert_eq!(report.mean_deltas[0], 0.0);
        assert_eq!(report.mean_deltas.len(), 3);
        let total: usize = report.signed_histogram.iter().sum();
        assert_eq!(total, report.attention_samples.len());
    }

    #[test]
    fn variant_configs_echo_their_reduction() {
        let g = fixture();
        let report = run_ablation_suite(&g, &tiny_cfg(), 1).unwrap();
        assert_eq!(report.variants[0].config.signed_mode, SignedMode::SignedTanh);
        assert!(report.variants[0].config.use_time_encoding);
        assert_eq!(report.variants[1].config.signed_mode, SignedMode::NonnegSigmoid);
        assert!(!report.variants[2].config.use_time_encoding);
    }

    #[test]
    fn sweep_covers_the_grid_and_recounts_means() {
        let g = fixture();
        let report = run_param_study(&g, &tiny_cfg(), &[2, 4], &[1, 2], 2).unwrap();
        assert_eq!(report.cells.len(), 4);
        let combos: Vec<(usize, usize)> =
            report.cells.iter().map(|c| (c.n_max, c.smp_layers)).collect();
        assert_eq!(combos, [(2, 1), (2, 2), (4, 1), (4, 2)]);
        for cell in &report.cells {
            assert_eq!(cell.test_accuracies.len(), 2);
            let m = cell.test_accuracies.iter().sum::<f64>() / 2.0;
            assert!((cell.mean_accuracy - m).abs() < 1e-15);
            assert!(cell.std_accuracy >= 0.0);
        }
    }

    #[test]
    fn degenerate_suite_inputs_are_rejected() {
        let g = fixture();
        assert!(run_ablation_suite(&g, &tiny_cfg(), 0).is_err());
        assert!(run_param_study(&g, &tiny_cfg(), &[], &[1], 1).is_err());
        assert!(run_param_study(&g, &tiny_cfg(), &[2], &[1], 0).is_err());
    }
}
