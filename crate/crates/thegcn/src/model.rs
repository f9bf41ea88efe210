//! Signed temporal message passing over sampled contexts.
//!
//! A context's static view is scored in two stages. The first stage weighs
//! every directed instance pair by a learned scalar computed from the raw
//! endpoint features, the event features, and a trainable cosine encoding of
//! the receiver's time distance to the event; the weight lives in (-1, 1),
//! so a neighbor can contribute positively (low-pass, homophilous) or
//! negatively (high-pass, heterophilous). Later stages reweigh the resulting
//! embeddings the same way, without time terms, and a linear head classifies
//! the target instance.
//!
//! All stages run batched on one tape: instances of every context in the
//! batch are stacked into one matrix, directed pairs into another, and the
//! per-instance means are sparse row scatters, so a batch costs a handful of
//! dense matmuls regardless of how many contexts it holds.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{EventGraph, NodeId};
use crate::sampler::{context_to_static_view, SampledContext, StaticView};
use crate::tensor::mlp::restore_tensor;
use crate::tensor::tape::sigmoid_scalar;
use crate::tensor::{BoundMlp, Mlp, Tape, Tensor, TensorId};

/// How the per-pair logit becomes an aggregation weight.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SignedMode {
    /// `tanh(z/2)`, equal to `p - q`: weights span (-1, 1).
    SignedTanh,
    /// `sigmoid(z)`: weights stay in (0, 1). Ablation mode.
    NonnegSigmoid,
}

/// The scalar aggregation weight a pair logit maps to under each mode.
///
/// With `p = sigmoid(z)` and `q = 1 - p`, the signed mode returns
/// `p - q = 2 sigmoid(z) - 1 = tanh(z / 2)`.
pub fn pair_weight(mode: SignedMode, z: f64) -> f64 {
    match mode {
        SignedMode::SignedTanh => (0.5 * z).tanh(),
        SignedMode::NonnegSigmoid => sigmoid_scalar(z),
    }
}

/// Dimensions and switches fixed at model construction.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// Raw node feature width `d` (0 when the dataset has none).
    pub feature_dim: usize,
    /// Event feature width `d_e` (0 when events carry none).
    pub edge_feat_dim: usize,
    /// Embedding width `f`.
    pub hidden_dim: usize,
    /// Time encoding width `d_t`.
    pub time_dim: usize,
    pub num_classes: usize,
    /// Number of embedding-space reweighing layers `L`; 0 keeps only the
    /// feature-space stage.
    pub smp_layers: usize,
    pub signed_mode: SignedMode,
    /// When false, the time encoding block is replaced by zeros. Ablation.
    pub use_time_encoding: bool,
    /// When false, raw features are used as embeddings directly, which
    /// requires `feature_dim == hidden_dim`.
    pub use_feature_proj: bool,
}

/// Trainable frequencies for the cosine time encoding `cos(w * delta)`.
#[derive(Debug, Clone)]
pub struct TimeEncoder {
    /// `[1 x d_t]`.
    pub w: Tensor,
}

impl TimeEncoder {
    /// Frequencies start on a geometric ladder from `pi` down to `pi/1000`,
    /// covering periods from two time units up to two thousand, and are
    /// trained from there.
    pub fn new(time_dim: usize) -> Result<Self> {
        if time_dim < 1 {
            return Err(Error::Contract("time encoding needs at least one frequency".into()));
        }
        let data = (0..time_dim)
            .map(|k| {
                let frac = if time_dim == 1 { 0.0 } else { k as f64 / (time_dim - 1) as f64 };
                std::f64::consts::PI * 1e-3f64.powf(frac)
            })
            .collect();
        Ok(TimeEncoder { w: Tensor::from_vec(1, time_dim, data)? })
    }

    /// Value-level `cos(w * delta)`.
    pub fn encode(&self, delta: f64) -> Result<Vec<f64>> {
        if !delta.is_finite() {
            return Err(Error::Contract(format!("non-finite time delta {delta}")));
        }
        Ok(self.w.data.iter().map(|&w| (w * delta).cos()).collect())
    }
}

/// One pair weight: `p` attends, `q = 1 - p` repels, `signed` is the
/// aggregation coefficient actually applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttentionPair {
    pub p: f64,
    pub q: f64,
    pub signed: f64,
}

/// Diagnostics for one sampled event: its hop, the anchor-side time delta,
/// and the weight the anchor-side direction received.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AttentionRecord {
    pub hop: usize,
    pub delta: f64,
    pub p: f64,
    pub q: f64,
    pub signed: f64,
}

/// The full model: time encoder, pair-weight MLPs, optional input
/// projection, and the classifier head.
#[derive(Debug, Clone)]
pub struct ThegcnModel {
    pub config: ModelConfig,
    pub time_encoder: TimeEncoder,
    /// Affine `d -> f`, present iff `config.use_feature_proj`.
    pub feature_proj: Option<Mlp>,
    /// `[2d + d_e + d_t] -> f -> 1`.
    pub tmp_mlp: Mlp,
    /// Layer `l`: `[2f] -> f -> 1`.
    pub smp_mlps: Vec<Mlp>,
    /// Affine `f -> C`.
    pub classifier: Mlp,
}

/// Tape bindings of every parameter for one forward pass.
pub struct BoundModel {
    w: TensorId,
    feature_proj: Option<BoundMlp>,
    tmp: BoundMlp,
    smps: Vec<BoundMlp>,
    classifier: BoundMlp,
}

/// Output of a batched forward pass.
pub struct BatchForward {
    /// `[batch x C]`, one row per context.
    pub logits: TensorId,
    /// Per context, one record per sampled event in entry order; `None`
    /// unless requested.
    pub diagnostics: Option<Vec<Vec<AttentionRecord>>>,
}

/// Stacked layout of a batch of static views.
struct BatchLayout {
    instance_nodes: Vec<NodeId>,
    instance_times: Vec<f64>,
    /// Row of each context's target instance.
    target_rows: Vec<usize>,
    /// Directed pairs: message `m` flows `send[m] -> recv[m]`.
    send: Vec<usize>,
    recv: Vec<usize>,
    /// Receiver's reference time minus event time, per message.
    deltas: Vec<f64>,
    /// `[messages x d_e]`, row-major.
    edge_feats: Vec<f64>,
    /// `Some((context, entry))` on the direction that flows into the
    /// instance the event was sampled from; diagnostics read these.
    anchor_tag: Vec<Option<(usize, usize)>>,
}

impl ThegcnModel {
    pub fn new<R: Rng>(config: ModelConfig, rng: &mut R) -> Result<Self> {
        if config.hidden_dim < 1 {
            return Err(Error::Contract("hidden width must be at least 1".into()));
        }
        if config.num_classes < 1 {
            return Err(Error::Contract("the classifier needs at least one class".into()));
        }
        if !config.use_feature_proj && config.feature_dim != config.hidden_dim {
            return Err(Error::Contract(format!(
                "feature projection disabled but feature dim {} != hidden dim {}",
                config.feature_dim, config.hidden_dim
            )));
        }
        let time_encoder = TimeEncoder::new(config.time_dim)?;
        let feature_proj = if config.use_feature_proj {
            Some(Mlp::new(&[config.feature_dim, config.hidden_dim], rng)?)
        } else {
            None
        };
        let tmp_in = 2 * config.feature_dim + config.edge_feat_dim + config.time_dim;
        let tmp_mlp = Mlp::new(&[tmp_in, config.hidden_dim, 1], rng)?;
        let smp_mlps = (0..config.smp_layers)
            .map(|_| Mlp::new(&[2 * config.hidden_dim, config.hidden_dim, 1], rng))
            .collect::<Result<Vec<_>>>()?;
        let classifier = Mlp::new(&[config.hidden_dim, config.num_classes], rng)?;
        Ok(ThegcnModel { config, time_encoder, feature_proj, tmp_mlp, smp_mlps, classifier })
    }

    /// Every parameter with a stable checkpoint name.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("time_encoder.w".to_string(), &self.time_encoder.w)];
        if let Some(p) = &self.feature_proj {
            out.extend(p.named("feature_proj"));
        }
        out.extend(self.tmp_mlp.named("tmp_mlp"));
        for (l, mlp) in self.smp_mlps.iter().enumerate() {
            out.extend(mlp.named(&format!("smp_mlps.{l}")));
        }
        out.extend(self.classifier.named("classifier"));
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.time_encoder.w];
        if let Some(p) = &mut self.feature_proj {
            out.extend(p.params_mut());
        }
        out.extend(self.tmp_mlp.params_mut());
        for mlp in &mut self.smp_mlps {
            out.extend(mlp.params_mut());
        }
        out.extend(self.classifier.params_mut());
        out
    }

    /// Restores all parameters from a loaded checkpoint map.
    pub fn restore(
        &mut self,
        tensors: &std::collections::BTreeMap<String, Tensor>,
    ) -> Result<()> {
        restore_tensor(&mut self.time_encoder.w, "time_encoder.w", tensors)?;
        if let Some(p) = &mut self.feature_proj {
            p.restore("feature_proj", tensors)?;
        }
        self.tmp_mlp.restore("tmp_mlp", tensors)?;
        for (l, mlp) in self.smp_mlps.iter_mut().enumerate() {
            mlp.restore(&format!("smp_mlps.{l}"), tensors)?;
        }
        self.classifier.restore("classifier", tensors)
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundModel {
        BoundModel {
            w: tape.param(&self.time_encoder.w),
            feature_proj: self.feature_proj.as_ref().map(|p| p.bind(tape)),
            tmp: self.tmp_mlp.bind(tape),
            smps: self.smp_mlps.iter().map(|m| m.bind(tape)).collect(),
            classifier: self.classifier.bind(tape),
        }
    }

    /// Copies gradients off the tape into the persistent parameters.
    pub fn absorb_grads(&mut self, tape: &Tape, bound: &BoundModel) -> Result<()> {
        if let Some(g) = tape.grad(bound.w) {
            self.time_encoder.w.accumulate_grad(g)?;
        }
        if let (Some(p), Some(b)) = (&mut self.feature_proj, &bound.feature_proj) {
            p.absorb_grads(tape, b)?;
        }
        self.tmp_mlp.absorb_grads(tape, &bound.tmp)?;
        for (mlp, b) in self.smp_mlps.iter_mut().zip(&bound.smps) {
            mlp.absorb_grads(tape, b)?;
        }
        self.classifier.absorb_grads(tape, &bound.classifier)
    }

    fn signed_of(&self, tape: &mut Tape, z: TensorId) -> TensorId {
        match self.config.signed_mode {
            SignedMode::SignedTanh => {
                let half = tape.scale(z, 0.5);
                tape.tanh(half)
            }
            SignedMode::NonnegSigmoid => tape.sigmoid(z),
        }
    }

    fn signed_scalar(&self, z: f64) -> f64 {
        pair_weight(self.config.signed_mode, z)
    }

    /// Stacks the static views of a batch of contexts into one layout.
    fn assemble(&self, g: &EventGraph, contexts: &[SampledContext]) -> Result<BatchLayout> {
        let d_e = self.config.edge_feat_dim;
        let mut layout = BatchLayout {
            instance_nodes: Vec::new(),
            instance_times: Vec::new(),
            target_rows: Vec::with_capacity(contexts.len()),
            send: Vec::new(),
            recv: Vec::new(),
            deltas: Vec::new(),
            edge_feats: Vec::new(),
            anchor_tag: Vec::new(),
        };
        for (ci, ctx) in contexts.iter().enumerate() {
            let view = context_to_static_view(g, ctx);
            let offset = layout.instance_nodes.len();
            layout.target_rows.push(offset);
            for &(node, time) in &view.instances {
                layout.instance_nodes.push(node);
                layout.instance_times.push(time);
            }
            for edge in &view.edges {
                let entry = &ctx.entries[edge.entry];
                let event = &g.events()[entry.event_idx as usize];
                let feat_row = |buf: &mut Vec<f64>| match &event.edge_feat {
                    Some(f) => buf.extend_from_slice(f),
                    None => buf.extend(std::iter::repeat(0.0).take(d_e)),
                };
                // the direction into the anchor carries the causal delta
                layout.send.push(offset + edge.counterpart);
                layout.recv.push(offset + edge.anchor);
                layout.deltas.push(entry.delta);
                feat_row(&mut layout.edge_feats);
                layout.anchor_tag.push(Some((ci, edge.entry)));
                // the echo into the counterpart happens at the event time
                layout.send.push(offset + edge.anchor);
                layout.recv.push(offset + edge.counterpart);
                layout.deltas.push(0.0);
                feat_row(&mut layout.edge_feats);
                layout.anchor_tag.push(None);
            }
        }
        Ok(layout)
    }

    /// Raw feature matrix for all instances in a layout.
    fn instance_features(&self, g: &EventGraph, layout: &BatchLayout) -> Result<Vec<f64>> {
        let d = self.config.feature_dim;
        if d == 0 {
            return Ok(Vec::new());
        }
        let mut data = Vec::with_capacity(layout.instance_nodes.len() * d);
        for (&node, &time) in layout.instance_nodes.iter().zip(&layout.instance_times) {
            let row = g.feature_at(node, time).ok_or_else(|| {
                Error::Coverage(format!("node {node} has no feature vector at time {time}"))
            })?;
            data.extend_from_slice(row);
        }
        Ok(data)
    }

    fn check_graph(&self, g: &EventGraph) -> Result<()> {
        let d = g.feature_dim().unwrap_or(0);
        if d != self.config.feature_dim {
            return Err(Error::Shape(format!(
                "graph features have width {d}, model expects {}",
                self.config.feature_dim
            )));
        }
        if g.edge_feat_dim() != self.config.edge_feat_dim {
            return Err(Error::Shape(format!(
                "graph event features have width {}, model expects {}",
                g.edge_feat_dim(),
                self.config.edge_feat_dim
            )));
        }
        Ok(())
    }

    /// Projects raw features and runs the feature-space aggregation stage.
    /// Returns the `[instances x f]` embedding and, when messages exist, the
    /// pair logits for diagnostics.
    fn first_stage(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        g: &EventGraph,
        layout: &BatchLayout,
    ) -> Result<(TensorId, Option<TensorId>)> {
        let n_inst = layout.instance_nodes.len();
        let n_msg = layout.send.len();
        let d_t = self.config.time_dim;
        let feat_data = self.instance_features(g, layout)?;
        let x_raw = tape.constant(n_inst, self.config.feature_dim, feat_data)?;
        let x = match &bound.feature_proj {
            Some(proj) => proj.forward(tape, x_raw)?,
            None => x_raw,
        };
        if n_msg == 0 {
            return Ok((x, None));
        }
        let te = if self.config.use_time_encoding {
            let delta_col = tape.constant(n_msg, 1, layout.deltas.clone())?;
            let phases = tape.matmul(delta_col, bound.w)?;
            tape.cos(phases)
        } else {
            tape.constant(n_msg, d_t, vec![0.0; n_msg * d_t])?
        };
        let m_e = tape.constant(n_msg, self.config.edge_feat_dim, layout.edge_feats.clone())?;
        let x_send_raw = tape.gather_rows(x_raw, &layout.send)?;
        let x_recv_raw = tape.gather_rows(x_raw, &layout.recv)?;
        let z_in = tape.concat_cols(&[x_send_raw, x_recv_raw, m_e, te])?;
        let z = bound.tmp.forward(tape, z_in)?;
        let signed = self.signed_of(tape, z);
        let x_send = tape.gather_rows(x, &layout.send)?;
        let weighted = tape.scale_rows(x_send, signed)?;
        let agg = tape.scatter_mean_rows(weighted, &layout.recv, n_inst)?;
        let h = tape.add(x, agg)?;
        Ok((h, Some(z)))
    }

    /// Batched forward pass: one tape, one logit row per context.
    pub fn forward_batch(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        g: &EventGraph,
        contexts: &[SampledContext],
        want_diagnostics: bool,
    ) -> Result<BatchForward> {
        if contexts.is_empty() {
            return Err(Error::Contract("forward pass over an empty batch".into()));
        }
        self.check_graph(g)?;
        let layout = self.assemble(g, contexts)?;
        let n_inst = layout.instance_nodes.len();
        let (h1, z) = self.first_stage(tape, bound, g, &layout)?;
        let mut diagnostics =
            if want_diagnostics { Some(vec![Vec::new(); contexts.len()]) } else { None };
        if let (Some(diags), Some(z)) = (diagnostics.as_mut(), z) {
            self.collect_diagnostics(tape, z, &layout, contexts, diags);
        }
        let mut h = h1;
        if !layout.send.is_empty() {
            for smp in &bound.smps {
                let h_send = tape.gather_rows(h, &layout.send)?;
                let h_recv = tape.gather_rows(h, &layout.recv)?;
                let z_in = tape.concat_cols(&[h_send, h_recv])?;
                let z = smp.forward(tape, z_in)?;
                let signed = self.signed_of(tape, z);
                let weighted = tape.scale_rows(h_send, signed)?;
                let agg = tape.scatter_mean_rows(weighted, &layout.recv, n_inst)?;
                h = tape.add(h, agg)?;
            }
        }
        let targets = tape.gather_rows(h, &layout.target_rows)?;
        let logits = bound.classifier.forward(tape, targets)?;
        Ok(BatchForward { logits, diagnostics })
    }

    fn collect_diagnostics(
        &self,
        tape: &Tape,
        z: TensorId,
        layout: &BatchLayout,
        contexts: &[SampledContext],
        diags: &mut [Vec<AttentionRecord>],
    ) {
        for (ci, ctx) in contexts.iter().enumerate() {
            diags[ci] = vec![
                AttentionRecord { hop: 0, delta: 0.0, p: 0.0, q: 0.0, signed: 0.0 };
                ctx.entries.len()
            ];
        }
        let zv = tape.value(z);
        for (m, tag) in layout.anchor_tag.iter().enumerate() {
            if let &Some((ci, entry)) = tag {
                let s = &contexts[ci].entries[entry];
                let p = sigmoid_scalar(zv[m]);
                diags[ci][entry] = AttentionRecord {
                    hop: s.hop,
                    delta: s.delta,
                    p,
                    q: 1.0 - p,
                    signed: self.signed_scalar(zv[m]),
                };
            }
        }
    }

    // ── single-value entry points ──────────────────────────────────────
    //
    // These run the same code path as the batched pass on a scratch tape,
    // for direct use and for oracle tests of the individual stages.

    /// The pair weight for one directed feature pair.
    pub fn tmp_edge_weight(
        &self,
        x_i: &[f64],
        x_j: &[f64],
        m_e: &[f64],
        delta: f64,
    ) -> Result<AttentionPair> {
        let d = self.config.feature_dim;
        if x_i.len() != d || x_j.len() != d {
            return Err(Error::Shape(format!(
                "feature widths {} and {} against declared {d}",
                x_i.len(),
                x_j.len()
            )));
        }
        if m_e.len() != self.config.edge_feat_dim {
            return Err(Error::Shape(format!(
                "event feature width {} against declared {}",
                m_e.len(),
                self.config.edge_feat_dim
            )));
        }
        let mut input = Vec::with_capacity(self.tmp_mlp.input_dim());
        input.extend_from_slice(x_i);
        input.extend_from_slice(x_j);
        input.extend_from_slice(m_e);
        if self.config.use_time_encoding {
            input.extend(self.time_encoder.encode(delta)?);
        } else {
            input.extend(std::iter::repeat(0.0).take(self.config.time_dim));
        }
        let mut tape = Tape::new();
        let bound = self.tmp_mlp.bind(&mut tape);
        let row = tape.constant(1, input.len(), input)?;
        let z = bound.forward(&mut tape, row)?;
        let z = tape.value(z)[0];
        let p = sigmoid_scalar(z);
        Ok(AttentionPair { p, q: 1.0 - p, signed: self.signed_scalar(z) })
    }

    /// First-stage embedding of one `(node, time)` instance of a context.
    pub fn tmp_block(
        &self,
        g: &EventGraph,
        ctx: &SampledContext,
        instance: (NodeId, f64),
    ) -> Result<Vec<f64>> {
        let view = context_to_static_view(g, ctx);
        let row = view
            .instances
            .iter()
            .position(|&(n, t)| n == instance.0 && t.to_bits() == instance.1.to_bits())
            .ok_or_else(|| {
                Error::Contract(format!(
                    "instance ({}, {}) is not part of the sampled context",
                    instance.0, instance.1
                ))
            })?;
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let h1 = self.forward_to_first_stage(&mut tape, &bound, g, ctx)?;
        let f = self.config.hidden_dim;
        Ok(tape.value(h1)[row * f..(row + 1) * f].to_vec())
    }

    /// Runs assembly, projection and the first aggregation stage for a
    /// single context, returning the `[instances x f]` embedding.
    fn forward_to_first_stage(
        &self,
        tape: &mut Tape,
        bound: &BoundModel,
        g: &EventGraph,
        ctx: &SampledContext,
    ) -> Result<TensorId> {
        self.check_graph(g)?;
        let layout = self.assemble(g, std::slice::from_ref(ctx))?;
        let (h1, _) = self.first_stage(tape, bound, g, &layout)?;
        Ok(h1)
    }

    /// One embedding-space reweighing layer applied to explicit embeddings.
    pub fn smp_layer(
        &self,
        layer: usize,
        view: &StaticView,
        embeddings: &[Vec<f64>],
    ) -> Result<Vec<Vec<f64>>> {
        let f = self.config.hidden_dim;
        if layer >= self.smp_mlps.len() {
            return Err(Error::Contract(format!(
                "layer {layer} of {} reweighing layers",
                self.smp_mlps.len()
            )));
        }
        if embeddings.len() != view.instances.len() {
            return Err(Error::Contract(format!(
                "{} embeddings for {} instances",
                embeddings.len(),
                view.instances.len()
            )));
        }
        if let Some(bad) = embeddings.iter().find(|e| e.len() != f) {
            return Err(Error::Shape(format!("embedding width {} against {f}", bad.len())));
        }
        let n_inst = view.instances.len();
        let mut tape = Tape::new();
        let bound = self.smp_mlps[layer].bind(&mut tape);
        let h_data: Vec<f64> = embeddings.iter().flatten().copied().collect();
        let h = tape.constant(n_inst, f, h_data)?;
        let mut send = Vec::with_capacity(2 * view.edges.len());
        let mut recv = Vec::with_capacity(2 * view.edges.len());
        for edge in &view.edges {
            send.push(edge.counterpart);
            recv.push(edge.anchor);
            send.push(edge.anchor);
            recv.push(edge.counterpart);
        }
        let out = if send.is_empty() {
            h
        } else {
            let h_send = tape.gather_rows(h, &send)?;
            let h_recv = tape.gather_rows(h, &recv)?;
            let z_in = tape.concat_cols(&[h_send, h_recv])?;
            let z = bound.forward(&mut tape, z_in)?;
            let signed = self.signed_of(&mut tape, z);
            let weighted = tape.scale_rows(h_send, signed)?;
            let agg = tape.scatter_mean_rows(weighted, &recv, n_inst)?;
            tape.add(h, agg)?
        };
        let v = tape.value(out);
        Ok((0..n_inst).map(|i| v[i * f..(i + 1) * f].to_vec()).collect())
    }

    /// Single-context forward pass: logits for the target plus per-event
    /// diagnostics.
    pub fn forward(
        &self,
        g: &EventGraph,
        ctx: &SampledContext,
    ) -> Result<(Vec<f64>, Vec<AttentionRecord>)> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let out = self.forward_batch(&mut tape, &bound, g, std::slice::from_ref(ctx), true)?;
        let logits = tape.value(out.logits).to_vec();
        let diags = out.diagnostics.expect("requested diagnostics").remove(0);
        Ok((logits, diags))
    }
}
