//! Splits, the epoch loop, evaluation, and run reports.
//!
//! A run is fully determined by the graph, a [`RunConfig`] and its seed:
//! model initialisation, splitting, per-epoch shuffling, context sampling
//! and evaluation each draw from their own stream derived from the run seed,
//! so replaying a config reproduces every number bit for bit.
//!
//! Submodule [`suite`] drives the controlled comparisons: ablation variants
//! on shared splits and the sampler-size/depth parameter study.

pub mod suite;

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::graph::{EventGraph, IncidenceDirection, IncidenceIndex, LabeledQuery};
use crate::model::{AttentionRecord, ModelConfig, SignedMode, ThegcnModel};
use crate::sampler::{sample_context, validate_context, SampleParams, SampledContext};
use crate::tensor::{AdamState, Tape};
use crate::{derive_seed, derive_u64, seed_domain};

/// How labeled queries are assigned to splits.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitGranularity {
    /// Node granularity when every node's label never changes, query
    /// granularity otherwise.
    Auto,
    /// Each `(node, time)` query is assigned independently.
    Query,
    /// All queries of one node land in the same split.
    Node,
}

/// Everything that determines a training run besides the dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Maximum sampling depth.
    pub h_max: usize,
    /// Per-anchor sample cap.
    pub n_max: usize,
    /// Number of embedding-space reweighing layers.
    pub smp_layers: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    /// Embedding width `f`.
    pub hidden_dim: usize,
    /// Time encoding width.
    pub time_dim: usize,
    /// Sampling window width `W`: contexts cover `[t' - W, t')`. `None`
    /// reaches back to the dataset start.
    pub window_width: Option<f64>,
    pub seed: u64,
    pub signed_mode: SignedMode,
    pub use_time_encoding: bool,
    pub use_feature_proj: bool,
    /// Train/validation/test fractions, summing to 1.
    pub split_fractions: [f64; 3],
    pub batch_size: usize,
    /// Redraw every query's context each epoch; `false` freezes contexts.
    pub resample_per_epoch: bool,
    pub incidence: IncidenceDirection,
    /// Optional recency-biased sampling decay rate.
    pub recency_decay: Option<f64>,
    pub split_granularity: SplitGranularity,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            h_max: 2,
            n_max: 10,
            smp_layers: 2,
            epochs: 100,
            learning_rate: 0.01,
            hidden_dim: 64,
            time_dim: 8,
            window_width: None,
            seed: 0,
            signed_mode: SignedMode::SignedTanh,
            use_time_encoding: true,
            use_feature_proj: true,
            split_fractions: [0.6, 0.2, 0.2],
            batch_size: 64,
            resample_per_epoch: true,
            incidence: IncidenceDirection::Both,
            recency_decay: None,
            split_granularity: SplitGranularity::Auto,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("h_max", self.h_max),
            ("n_max", self.n_max),
            ("epochs", self.epochs),
            ("hidden_dim", self.hidden_dim),
            ("time_dim", self.time_dim),
            ("batch_size", self.batch_size),
        ];
        for (name, v) in counts {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(Error::Config(format!(
                "learning rate {} is not a positive real",
                self.learning_rate
            )));
        }
        if let Some(w) = self.window_width {
            if !(w > 0.0) {
                return Err(Error::Config(format!("window width {w} must be positive")));
            }
        }
        if let Some(d) = self.recency_decay {
            if !(d >= 0.0) || !d.is_finite() {
                return Err(Error::Config(format!("recency decay {d} must be nonnegative")));
            }
        }
        let sum: f64 = self.split_fractions.iter().sum();
        if self.split_fractions.iter().any(|&f| !(0.0..=1.0).contains(&f)) {
            return Err(Error::Config(format!(
                "split fractions {:?} must lie in [0, 1]",
                self.split_fractions
            )));
        }
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!(
                "split fractions {:?} sum to {sum}, expected 1",
                self.split_fractions
            )));
        }
        Ok(())
    }

    pub fn sample_params(&self) -> SampleParams {
        SampleParams { h_max: self.h_max, n_max: self.n_max, recency_decay: self.recency_decay }
    }

    fn model_config(&self, g: &EventGraph) -> ModelConfig {
        ModelConfig {
            feature_dim: g.feature_dim().unwrap_or(0),
            edge_feat_dim: g.edge_feat_dim(),
            hidden_dim: self.hidden_dim,
            time_dim: self.time_dim,
            num_classes: g.num_classes(),
            smp_layers: self.smp_layers,
            signed_mode: self.signed_mode,
            use_time_encoding: self.use_time_encoding,
            use_feature_proj: self.use_feature_proj,
        }
    }
}

/// The three query sets of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct Splits {
    pub train: Vec<LabeledQuery>,
    pub val: Vec<LabeledQuery>,
    pub test: Vec<LabeledQuery>,
}

impl Splits {
    pub fn sizes(&self) -> [usize; 3] {
        [self.train.len(), self.val.len(), self.test.len()]
    }

    /// Order-sensitive digest of all three parts, for verifying that
    /// controlled comparisons really share their splits.
    pub fn digest(&self) -> String {
        let mut hasher = Sha256::new();
        for part in [&self.train, &self.val, &self.test] {
            hasher.update((part.len() as u64).to_le_bytes());
            for q in part {
                hasher.update((q.node as u64).to_le_bytes());
                hasher.update(q.time.to_bits().to_le_bytes());
                hasher.update((q.label as u64).to_le_bytes());
            }
        }
        hex_digest(hasher)
    }
}

fn hex_digest(hasher: Sha256) -> String {
    hasher.finalize().iter().map(|b| format!("{b:02x}")).collect()
}

/// Rounded part sizes for `n` items, adjusted so that no part is empty
/// whenever `n` allows it.
fn part_sizes(n: usize, fractions: [f64; 3]) -> [usize; 3] {
    let train = (n as f64 * fractions[0]).round() as usize;
    let val = (n as f64 * fractions[1]).round() as usize;
    let train = train.min(n);
    let val = val.min(n - train);
    let mut sizes = [train, val, n - train - val];
    if n >= 3 {
        // steal from the largest part until every part is populated
        while sizes.iter().any(|&s| s == 0) {
            let largest = (0..3).max_by_key(|&i| sizes[i]).expect("three parts");
            let empty = (0..3).find(|&i| sizes[i] == 0).expect("loop condition");
            sizes[largest] -= 1;
            sizes[empty] += 1;
        }
    }
    sizes
}

/// Splits labeled queries into train/validation/test.
///
/// With `by_node` false every `(node, time)` query is shuffled and assigned
/// independently; with `by_node` true whole nodes are assigned, so no node
/// id crosses a split boundary. Fewer than three items cannot populate
/// three parts, in which case later parts may legitimately come out empty.
pub fn split_queries(
    queries: &[LabeledQuery],
    fractions: [f64; 3],
    seed: u64,
    by_node: bool,
) -> Result<Splits> {
    if queries.is_empty() {
        return Err(Error::Contract("cannot split an empty query set".into()));
    }
    let mut rng = ChaCha12Rng::from_seed(derive_seed(&[seed, seed_domain::SPLIT]));
    if by_node {
        let mut nodes: Vec<usize> = {
            let mut ids: Vec<usize> = queries.iter().map(|q| q.node).collect();
            ids.sort_unstable();
            ids.dedup();
            ids
        };
        nodes.shuffle(&mut rng);
        let sizes = part_sizes(nodes.len(), fractions);
        let assign = |ids: &[usize]| -> Vec<LabeledQuery> {
            let set: std::collections::HashSet<usize> = ids.iter().copied().collect();
            queries.iter().filter(|q| set.contains(&q.node)).copied().collect()
        };
        let (a, rest) = nodes.split_at(sizes[0]);
        let (b, c) = rest.split_at(sizes[1]);
        Ok(Splits { train: assign(a), val: assign(b), test: assign(c) })
    } else {
        let mut order: Vec<usize> = (0..queries.len()).collect();
        order.shuffle(&mut rng);
        let sizes = part_sizes(queries.len(), fractions);
        let pick = |range: &[usize]| -> Vec<LabeledQuery> {
            range.iter().map(|&i| queries[i]).collect()
        };
        let (a, rest) = order.split_at(sizes[0]);
        let (b, c) = rest.split_at(sizes[1]);
        Ok(Splits { train: pick(a), val: pick(b), test: pick(c) })
    }
}

/// One model prediction for a labeled query.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub node: usize,
    pub time: f64,
    pub label: usize,
    pub pred: usize,
}

/// Accuracy plus the per-query predictions it was counted from.
#[derive(Debug, Clone, PartialEq)]
pub struct Evaluation {
    /// `None` when the query set is empty.
    pub accuracy: Option<f64>,
    pub predictions: Vec<Prediction>,
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub config: RunConfig,
    /// The granularity actually used after resolving `Auto`.
    pub split_granularity_used: SplitGranularity,
    pub split_sizes: [usize; 3],
    pub split_digest: String,
    /// Mean training cross-entropy per epoch.
    pub train_loss: Vec<f64>,
    /// Validation accuracy per epoch; empty when the validation split is.
    pub val_accuracy: Vec<f64>,
    /// Epoch whose parameters were kept (1-based); the final epoch when no
    /// validation set exists.
    pub best_epoch: usize,
    pub best_val_accuracy: Option<f64>,
    /// Test accuracy of the kept parameters; `None` without a test split.
    pub test_accuracy: Option<f64>,
    pub epoch_seconds: Vec<f64>,
    pub total_seconds: f64,
}

/// The report serialized with wall-clock fields zeroed, so that repeated
/// runs of one config compare byte-identical.
pub fn canonical_report_json(report: &RunReport) -> Result<String> {
    let mut clean = report.clone();
    clean.epoch_seconds.clear();
    clean.total_seconds = 0.0;
    serde_json::to_string_pretty(&clean)
        .map_err(|e| Error::Contract(format!("report serialization failed: {e}")))
}

/// Hex SHA-256 of [`canonical_report_json`].
pub fn report_digest(report: &RunReport) -> Result<String> {
    let mut hasher = Sha256::new();
    hasher.update(canonical_report_json(report)?.as_bytes());
    Ok(hex_digest(hasher))
}

fn window_start(cfg: &RunConfig, t_query: f64) -> f64 {
    match cfg.window_width {
        Some(w) => t_query - w,
        None => f64::NEG_INFINITY,
    }
}

/// Samples (and re-validates) one context per query.
pub fn sample_batch(
    g: &EventGraph,
    index: &IncidenceIndex,
    cfg: &RunConfig,
    queries: &[LabeledQuery],
    stream: u64,
) -> Result<Vec<SampledContext>> {
    let params = cfg.sample_params();
    queries
        .iter()
        .map(|q| {
            let ctx =
                sample_context(g, index, q.node, q.time, window_start(cfg, q.time), &params, stream)?;
            validate_context(g, &ctx, &params)?;
            Ok(ctx)
        })
        .collect()
}

/// Fraction of queries whose argmax logit matches the label, with contexts
/// drawn from the given stream. Never touches gradients.
pub fn evaluate(
    model: &ThegcnModel,
    g: &EventGraph,
    index: &IncidenceIndex,
    cfg: &RunConfig,
    queries: &[LabeledQuery],
    stream: u64,
) -> Result<Evaluation> {
    let mut predictions = Vec::with_capacity(queries.len());
    let mut correct = 0usize;
    let classes = g.num_classes();
    for chunk in queries.chunks(cfg.batch_size) {
        let contexts = sample_batch(g, index, cfg, chunk, stream)?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let out = model.forward_batch(&mut tape, &bound, g, &contexts, false)?;
        let logits = tape.value(out.logits);
        for (i, q) in chunk.iter().enumerate() {
            let row = &logits[i * classes..(i + 1) * classes];
            let pred = argmax(row);
            if pred == q.label {
                correct += 1;
            }
            predictions.push(Prediction { node: q.node, time: q.time, label: q.label, pred });
        }
    }
    let accuracy =
        if queries.is_empty() { None } else { Some(correct as f64 / queries.len() as f64) };
    Ok(Evaluation { accuracy, predictions })
}

/// First index of the row maximum, so class ties resolve deterministically.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Attention diagnostics for the given queries, one record per sampled
/// event, flattened in query order.
pub fn collect_attention(
    model: &ThegcnModel,
    g: &EventGraph,
    index: &IncidenceIndex,
    cfg: &RunConfig,
    queries: &[LabeledQuery],
    stream: u64,
) -> Result<Vec<AttentionRecord>> {
    let mut records = Vec::new();
    for chunk in queries.chunks(cfg.batch_size) {
        let contexts = sample_batch(g, index, cfg, chunk, stream)?;
        let mut tape = Tape::new();
        let bound = model.bind(&mut tape);
        let out = model.forward_batch(&mut tape, &bound, g, &contexts, true)?;
        for per_ctx in out.diagnostics.expect("diagnostics requested") {
            records.extend(per_ctx);
        }
    }
    Ok(records)
}

fn grad_fingerprint(model: &ThegcnModel) -> Vec<Option<Vec<f64>>> {
    model.named_params().iter().map(|(_, t)| t.grad.clone()).collect()
}

fn assert_no_leakage(model: &ThegcnModel, before: &[Option<Vec<f64>>]) -> Result<()> {
    let after = grad_fingerprint(model);
    if after.as_slice() != before {
        return Err(Error::Integrity(
            "evaluation modified gradient accumulators; held-out leakage".into(),
        ));
    }
    Ok(())
}

/// Allocates zero gradients for parameters an all-empty batch never
/// reached, so the optimizer sees a full gradient set every step.
fn fill_missing_grads(model: &mut ThegcnModel) {
    for t in model.params_mut() {
        if t.grad.is_none() {
            t.grad = Some(vec![0.0; t.data.len()]);
        }
    }
}

/// A freshly initialised model matching the graph's dimensions and the
/// config's architecture, seeded from the config.
pub fn model_for(g: &EventGraph, cfg: &RunConfig) -> Result<ThegcnModel> {
    let mut init_rng = ChaCha12Rng::from_seed(derive_seed(&[cfg.seed, seed_domain::MODEL_INIT]));
    ThegcnModel::new(cfg.model_config(g), &mut init_rng)
}

/// The splits a config resolves to on this graph, with the granularity
/// actually used after resolving `Auto`.
pub fn resolved_splits(g: &EventGraph, cfg: &RunConfig) -> Result<(Splits, SplitGranularity)> {
    let queries = g.labeled_queries();
    if queries.is_empty() {
        return Err(Error::Contract("training needs at least one labeled query".into()));
    }
    let by_node = match cfg.split_granularity {
        SplitGranularity::Auto => g.labels_are_static(),
        SplitGranularity::Query => false,
        SplitGranularity::Node => true,
    };
    let splits = split_queries(&queries, cfg.split_fractions, cfg.seed, by_node)?;
    let used = if by_node { SplitGranularity::Node } else { SplitGranularity::Query };
    Ok((splits, used))
}

/// Trains a model per the config and returns it with the run's report.
///
/// The returned model carries the parameters of the best-validation epoch
/// (ties to the earlier epoch), or of the final epoch when the validation
/// split is empty.
pub fn train(g: &EventGraph, cfg: &RunConfig) -> Result<(ThegcnModel, RunReport)> {
    cfg.validate()?;
    let (splits, granularity_used) = resolved_splits(g, cfg)?;
    if splits.train.is_empty() {
        return Err(Error::Contract("the training split came out empty".into()));
    }

    let mut model = model_for(g, cfg)?;
    let index = IncidenceIndex::build(g, cfg.incidence);
    let mut adam = AdamState::new(cfg.learning_rate);
    let eval_stream = derive_u64(&[cfg.seed, seed_domain::EVAL]);

    let mut train_loss = Vec::with_capacity(cfg.epochs);
    let mut val_accuracy = Vec::new();
    let mut epoch_seconds = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, usize, ThegcnModel)> = None;
    let total_clock = Instant::now();

    for epoch in 1..=cfg.epochs {
        let epoch_clock = Instant::now();
        let stream_epoch = if cfg.resample_per_epoch { epoch as u64 } else { 0 };
        let sample_stream = derive_u64(&[cfg.seed, seed_domain::SAMPLING, stream_epoch]);
        let mut order: Vec<usize> = (0..splits.train.len()).collect();
        order.shuffle(&mut ChaCha12Rng::from_seed(derive_seed(&[
            cfg.seed,
            seed_domain::SHUFFLE,
            epoch as u64,
        ])));

        let mut loss_sum = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(cfg.batch_size) {
            let batch: Vec<LabeledQuery> = chunk.iter().map(|&i| splits.train[i]).collect();
            let contexts = sample_batch(g, &index, cfg, &batch, sample_stream)?;
            let labels: Vec<usize> = batch.iter().map(|q| q.label).collect();
            let mut tape = Tape::new();
            let bound = model.bind(&mut tape);
            let out = model.forward_batch(&mut tape, &bound, g, &contexts, false)?;
            let loss_id = tape.softmax_cross_entropy(out.logits, &labels)?;
            let loss = tape.value(loss_id)[0];
            if !loss.is_finite() {
                return Err(Error::Divergence { epoch, loss });
            }
            tape.backward(loss_id)?;
            model.absorb_grads(&tape, &bound)?;
            fill_missing_grads(&mut model);
            let mut params = model.params_mut();
            adam.step(&mut params)?;
            loss_sum += loss * labels.len() as f64;
            seen += labels.len();
        }
        train_loss.push(loss_sum / seen as f64);

        if !splits.val.is_empty() {
            let before = grad_fingerprint(&model);
            let eval = evaluate(&model, g, &index, cfg, &splits.val, eval_stream)?;
            assert_no_leakage(&model, &before)?;
            let acc = eval.accuracy.expect("validation split is nonempty");
            val_accuracy.push(acc);
            let improved = best.as_ref().is_none_or(|(b, _, _)| acc > *b);
            if improved {
                best = Some((acc, epoch, model.clone()));
            }
        }
        epoch_seconds.push(epoch_clock.elapsed().as_secs_f64());
    }

    let (best_epoch, best_val_accuracy) = match best {
        Some((acc, epoch, snapshot)) => {
            model = snapshot;
            (epoch, Some(acc))
        }
        None => (cfg.epochs, None),
    };

    let test_accuracy = if splits.test.is_empty() {
        None
    } else {
        let before = grad_fingerprint(&model);
        let eval = evaluate(&model, g, &index, cfg, &splits.test, eval_stream)?;
        assert_no_leakage(&model, &before)?;
        eval.accuracy
    };

    let report = RunReport {
        config: cfg.clone(),
        split_granularity_used: granularity_used,
        split_sizes: splits.sizes(),
        split_digest: splits.digest(),
        train_loss,
        val_accuracy,
        best_epoch,
        best_val_accuracy,
        test_accuracy,
        epoch_seconds,
        total_seconds: total_clock.elapsed().as_secs_f64(),
    };
    Ok((model, report))
}
