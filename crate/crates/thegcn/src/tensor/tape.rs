//! Reverse-mode automatic differentiation over a flat operation tape.
//!
//! A [`Tape`] owns every intermediate value of one forward pass. Operations
//! append nodes and return [`TensorId`] handles; `backward` walks the tape in
//! reverse and accumulates gradients for every node that (transitively)
//! depends on a differentiable leaf. Nodes are append-only, so an input's id
//! is always smaller than its consumer's, and a single reverse sweep visits
//! every node after all of its consumers.
//!
//! The operation set is closed: matrix multiply, additions, column
//! concatenation, elementwise maps (relu, sigmoid, tanh, cosine, product),
//! constant scaling, per-row scaling, row gather/scatter-mean, full
//! reductions, and fused softmax cross-entropy. Row gather and scatter-mean
//! are the sparse aggregation primitives; they replace multiplication by
//! one-hot selection matrices.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Handle to a node on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(TensorId, TensorId),
    Add(TensorId, TensorId),
    /// `[r x c] + [1 x c]`, the second operand broadcast over rows.
    AddRow(TensorId, TensorId),
    ConcatCols(Vec<TensorId>),
    Relu(TensorId),
    Sigmoid(TensorId),
    Tanh(TensorId),
    Cos(TensorId),
    Mul(TensorId, TensorId),
    Scale(TensorId, f64),
    /// `[r x c]` scaled row-wise by a `[r x 1]` column.
    ScaleRows(TensorId, TensorId),
    GatherRows(TensorId, Vec<usize>),
    /// Rows of the input averaged into `out_rows` buckets; empty buckets
    /// stay zero.
    ScatterMeanRows { input: TensorId, bucket: Vec<usize>, counts: Vec<usize> },
    SumAll(TensorId),
    MeanAll(TensorId),
    /// Mean over rows of `-log softmax(logits)[label]`; caches the softmax
    /// for the backward pass.
    SoftmaxCrossEntropy { logits: TensorId, labels: Vec<usize>, probs: Vec<f64> },
}

struct Node {
    op: Op,
    rows: usize,
    cols: usize,
    value: Vec<f64>,
    requires_grad: bool,
}

/// Computation tape for one forward/backward pass.
#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    grads: Vec<Option<Vec<f64>>>,
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn shape(&self, id: TensorId) -> (usize, usize) {
        let n = &self.nodes[id.0];
        (n.rows, n.cols)
    }

    pub fn value(&self, id: TensorId) -> &[f64] {
        &self.nodes[id.0].value
    }

    /// Gradient of the last `backward` root with respect to `id`, if `id`
    /// participated in that computation.
    pub fn grad(&self, id: TensorId) -> Option<&[f64]> {
        self.grads.get(id.0).and_then(|g| g.as_deref())
    }

    fn push(&mut self, op: Op, rows: usize, cols: usize, value: Vec<f64>, requires_grad: bool) -> TensorId {
        debug_assert_eq!(value.len(), rows * cols);
        self.nodes.push(Node { op, rows, cols, value, requires_grad });
        TensorId(self.nodes.len() - 1)
    }

    // ── leaves ─────────────────────────────────────────────────────────

    /// A differentiable leaf holding a copy of `data`.
    pub fn leaf(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<TensorId> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} leaf", data.len())));
        }
        Ok(self.push(Op::Leaf, rows, cols, data, true))
    }

    /// A non-differentiable leaf: gradients never flow into it.
    pub fn constant(&mut self, rows: usize, cols: usize, data: Vec<f64>) -> Result<TensorId> {
        if data.len() != rows * cols {
            return Err(Error::Shape(format!("{} values for a {rows}x{cols} constant", data.len())));
        }
        Ok(self.push(Op::Leaf, rows, cols, data, false))
    }

    /// Binds a persistent tensor as a leaf, respecting its `requires_grad`.
    pub fn param(&mut self, t: &Tensor) -> TensorId {
        self.push(Op::Leaf, t.rows, t.cols, t.data.clone(), t.requires_grad)
    }

    // ── operations ─────────────────────────────────────────────────────

    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (m, ka) = self.shape(a);
        let (kb, n) = self.shape(b);
        if ka != kb {
            return Err(Error::Shape(format!("matmul of {m}x{ka} by {kb}x{n}")));
        }
        let value = matmul_kernel(self.value(a), self.value(b), m, ka, n);
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::MatMul(a, b), m, n, value, rg))
    }

    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.same_shape("add", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x + y).collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Add(a, b), r, c, value, rg))
    }

    pub fn add_row(&mut self, a: TensorId, row: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let (rr, rc) = self.shape(row);
        if rr != 1 || rc != c {
            return Err(Error::Shape(format!("row add of {r}x{c} and {rr}x{rc}")));
        }
        let rowv = self.value(row).to_vec();
        let mut value = self.value(a).to_vec();
        for chunk in value.chunks_exact_mut(c.max(1)) {
            for (v, &b) in chunk.iter_mut().zip(&rowv) {
                *v += b;
            }
        }
        let rg = self.requires(a) || self.requires(row);
        Ok(self.push(Op::AddRow(a, row), r, c, value, rg))
    }

    pub fn concat_cols(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Contract("concat of zero tensors".into()));
        }
        let (r, _) = self.shape(parts[0]);
        let mut total = 0;
        for &p in parts {
            let (pr, pc) = self.shape(p);
            if pr != r {
                return Err(Error::Shape(format!("concat of {r}-row and {pr}-row tensors")));
            }
            total += pc;
        }
        let mut value = vec![0.0; r * total];
        let mut offset = 0;
        for &p in parts {
            let (_, pc) = self.shape(p);
            let src = self.value(p);
            for i in 0..r {
                value[i * total + offset..i * total + offset + pc]
                    .copy_from_slice(&src[i * pc..(i + 1) * pc]);
            }
            offset += pc;
        }
        let rg = parts.iter().any(|&p| self.requires(p));
        Ok(self.push(Op::ConcatCols(parts.to_vec()), r, total, value, rg))
    }

    pub fn relu(&mut self, a: TensorId) -> TensorId {
        self.map_unary(a, |x| x.max(0.0), Op::Relu(a))
    }

    pub fn sigmoid(&mut self, a: TensorId) -> TensorId {
        self.map_unary(a, sigmoid_scalar, Op::Sigmoid(a))
    }

    pub fn tanh(&mut self, a: TensorId) -> TensorId {
        self.map_unary(a, f64::tanh, Op::Tanh(a))
    }

    pub fn cos(&mut self, a: TensorId) -> TensorId {
        self.map_unary(a, f64::cos, Op::Cos(a))
    }

    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (r, c) = self.same_shape("elementwise multiply", a, b)?;
        let value = self.value(a).iter().zip(self.value(b)).map(|(x, y)| x * y).collect();
        let rg = self.requires(a) || self.requires(b);
        Ok(self.push(Op::Mul(a, b), r, c, value, rg))
    }

    pub fn scale(&mut self, a: TensorId, k: f64) -> TensorId {
        self.map_unary(a, |x| k * x, Op::Scale(a, k))
    }

    pub fn scale_rows(&mut self, a: TensorId, col: TensorId) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        let (sr, sc) = self.shape(col);
        if sr != r || sc != 1 {
            return Err(Error::Shape(format!("row scale of {r}x{c} by {sr}x{sc}")));
        }
        let scales = self.value(col).to_vec();
        let mut value = self.value(a).to_vec();
        for (i, chunk) in value.chunks_exact_mut(c.max(1)).enumerate() {
            let s = scales[i];
            chunk.iter_mut().for_each(|v| *v *= s);
        }
        let rg = self.requires(a) || self.requires(col);
        Ok(self.push(Op::ScaleRows(a, col), r, c, value, rg))
    }

    pub fn gather_rows(&mut self, a: TensorId, index: &[usize]) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= r) {
            return Err(Error::Contract(format!("gather row {bad} from a {r}-row tensor")));
        }
        let src = self.value(a);
        let mut value = vec![0.0; index.len() * c];
        for (out, &i) in value.chunks_exact_mut(c.max(1)).zip(index) {
            out.copy_from_slice(&src[i * c..(i + 1) * c]);
        }
        let rg = self.requires(a);
        Ok(self.push(Op::GatherRows(a, index.to_vec()), index.len(), c, value, rg))
    }

    /// Averages input rows into `out_rows` buckets according to `bucket`
    /// (one entry per input row). Buckets that receive no rows stay zero.
    pub fn scatter_mean_rows(&mut self, a: TensorId, bucket: &[usize], out_rows: usize) -> Result<TensorId> {
        let (r, c) = self.shape(a);
        if bucket.len() != r {
            return Err(Error::Shape(format!("{} bucket entries for {r} rows", bucket.len())));
        }
        if let Some(&bad) = bucket.iter().find(|&&b| b >= out_rows) {
            return Err(Error::Contract(format!("scatter into bucket {bad} of {out_rows}")));
        }
        let mut counts = vec![0usize; out_rows];
        for &b in bucket {
            counts[b] += 1;
        }
        let src = self.value(a);
        let mut value = vec![0.0; out_rows * c];
        for (row, &b) in bucket.iter().enumerate() {
            let dst = &mut value[b * c..(b + 1) * c];
            let s = &src[row * c..(row + 1) * c];
            for (d, &x) in dst.iter_mut().zip(s) {
                *d += x;
            }
        }
        for (b, chunk) in value.chunks_exact_mut(c.max(1)).enumerate() {
            if counts[b] > 1 {
                let inv = 1.0 / counts[b] as f64;
                chunk.iter_mut().for_each(|v| *v *= inv);
            }
        }
        let rg = self.requires(a);
        Ok(self.push(
            Op::ScatterMeanRows { input: a, bucket: bucket.to_vec(), counts },
            out_rows,
            c,
            value,
            rg,
        ))
    }

    pub fn sum_all(&mut self, a: TensorId) -> TensorId {
        let value = vec![self.value(a).iter().sum()];
        let rg = self.requires(a);
        self.push(Op::SumAll(a), 1, 1, value, rg)
    }

    pub fn mean_all(&mut self, a: TensorId) -> Result<TensorId> {
        let len = self.value(a).len();
        if len == 0 {
            return Err(Error::Contract("mean of an empty tensor".into()));
        }
        let value = vec![self.value(a).iter().sum::<f64>() / len as f64];
        let rg = self.requires(a);
        Ok(self.push(Op::MeanAll(a), 1, 1, value, rg))
    }

    /// Mean cross-entropy of row-wise softmax against integer labels.
    /// Row maxima are subtracted before exponentiation for stability.
    pub fn softmax_cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let (r, c) = self.shape(logits);
        if labels.len() != r {
            return Err(Error::Shape(format!("{} labels for {r} logit rows", labels.len())));
        }
        if r == 0 {
            return Err(Error::Contract("cross-entropy over zero rows".into()));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::Contract(format!("label {bad} outside {c} classes")));
        }
        let src = self.value(logits);
        let mut probs = vec![0.0; r * c];
        let mut loss = 0.0;
        for (i, &label) in labels.iter().enumerate() {
            let row = &src[i * c..(i + 1) * c];
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let mut denom = 0.0;
            let prow = &mut probs[i * c..(i + 1) * c];
            for (p, &x) in prow.iter_mut().zip(row) {
                *p = (x - max).exp();
                denom += *p;
            }
            prow.iter_mut().for_each(|p| *p /= denom);
            loss += denom.ln() - (row[label] - max);
        }
        let value = vec![loss / r as f64];
        let rg = self.requires(logits);
        Ok(self.push(
            Op::SoftmaxCrossEntropy { logits, labels: labels.to_vec(), probs },
            1,
            1,
            value,
            rg,
        ))
    }

    // ── backward ───────────────────────────────────────────────────────

    /// Accumulates `d root / d node` for every differentiable node on the
    /// tape. `root` must be scalar. Overwrites gradients of any previous
    /// backward pass on this tape.
    pub fn backward(&mut self, root: TensorId) -> Result<()> {
        let n = self.nodes.len();
        if self.nodes[root.0].value.len() != 1 {
            let (r, c) = self.shape(root);
            return Err(Error::Contract(format!("backward from a non-scalar {r}x{c} root")));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root.0] = Some(vec![1.0]);

        for i in (0..=root.0).rev() {
            if !self.nodes[i].requires_grad {
                continue;
            }
            let Some(g) = grads[i].take() else { continue };
            self.propagate(i, &g, &mut grads);
            grads[i] = Some(g);
        }
        self.grads = grads;
        Ok(())
    }

    /// Chain-rule dispatch: adds the contribution of node `i` (upstream
    /// gradient `g`) into the gradients of its differentiable inputs.
    fn propagate(&self, i: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let node = &self.nodes[i];
        let cols = node.cols;
        match &node.op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (m, k) = self.shape(*a);
                let (_, nb) = self.shape(*b);
                if self.requires(*a) {
                    // dA = G * B^T, computed as row-dot products
                    let bv = self.value(*b);
                    let da = self.slot(grads, *a);
                    for i in 0..m {
                        let grow = &g[i * nb..(i + 1) * nb];
                        let darow = &mut da[i * k..(i + 1) * k];
                        for (p, dap) in darow.iter_mut().enumerate() {
                            let brow = &bv[p * nb..(p + 1) * nb];
                            let mut dot = 0.0;
                            for (&gv, &bvv) in grow.iter().zip(brow) {
                                dot += gv * bvv;
                            }
                            *dap += dot;
                        }
                    }
                }
                if self.requires(*b) {
                    // dB = A^T * G, accumulated row by row
                    let av = self.value(*a);
                    let db = self.slot(grads, *b);
                    for i in 0..m {
                        let grow = &g[i * nb..(i + 1) * nb];
                        let arow = &av[i * k..(i + 1) * k];
                        for (p, &ap) in arow.iter().enumerate() {
                            let dbrow = &mut db[p * nb..(p + 1) * nb];
                            for (d, &gv) in dbrow.iter_mut().zip(grow) {
                                *d += ap * gv;
                            }
                        }
                    }
                }
            }
            Op::Add(a, b) => {
                for &side in &[*a, *b] {
                    if self.requires(side) {
                        let d = self.slot(grads, side);
                        for (dv, &gv) in d.iter_mut().zip(g) {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::AddRow(a, row) => {
                if self.requires(*a) {
                    let d = self.slot(grads, *a);
                    for (dv, &gv) in d.iter_mut().zip(g) {
                        *dv += gv;
                    }
                }
                if self.requires(*row) {
                    let d = self.slot(grads, *row);
                    for chunk in g.chunks_exact(cols.max(1)) {
                        for (dv, &gv) in d.iter_mut().zip(chunk) {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::ConcatCols(parts) => {
                let rows = node.rows;
                let mut offset = 0;
                for &p in parts {
                    let (_, pc) = self.shape(p);
                    if self.requires(p) {
                        let d = self.slot(grads, p);
                        for r in 0..rows {
                            let src = &g[r * cols + offset..r * cols + offset + pc];
                            let dst = &mut d[r * pc..(r + 1) * pc];
                            for (dv, &gv) in dst.iter_mut().zip(src) {
                                *dv += gv;
                            }
                        }
                    }
                    offset += pc;
                }
            }
            Op::Relu(a) => {
                if self.requires(*a) {
                    let av = self.value(*a);
                    let d = self.slot(grads, *a);
                    for ((dv, &gv), &x) in d.iter_mut().zip(g).zip(av) {
                        if x > 0.0 {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::Sigmoid(a) => {
                if self.requires(*a) {
                    let y = &node.value;
                    let d = self.slot(grads, *a);
                    for ((dv, &gv), &yv) in d.iter_mut().zip(g).zip(y) {
                        *dv += gv * yv * (1.0 - yv);
                    }
                }
            }
            Op::Tanh(a) => {
                if self.requires(*a) {
                    let y = &node.value;
                    let d = self.slot(grads, *a);
                    for ((dv, &gv), &yv) in d.iter_mut().zip(g).zip(y) {
                        *dv += gv * (1.0 - yv * yv);
                    }
                }
            }
            Op::Cos(a) => {
                if self.requires(*a) {
                    let av = self.value(*a);
                    let d = self.slot(grads, *a);
                    for ((dv, &gv), &x) in d.iter_mut().zip(g).zip(av) {
                        *dv -= gv * x.sin();
                    }
                }
            }
            Op::Mul(a, b) => {
                if self.requires(*a) {
                    let bv = self.value(*b);
                    let d = self.slot(grads, *a);
                    for ((dv, &gv), &x) in d.iter_mut().zip(g).zip(bv) {
                        *dv += gv * x;
                    }
                }
                if self.requires(*b) {
                    let av = self.value(*a);
                    let d = self.slot(grads, *b);
                    for ((dv, &gv), &x) in d.iter_mut().zip(g).zip(av) {
                        *dv += gv * x;
                    }
                }
            }
            Op::Scale(a, k) => {
                if self.requires(*a) {
                    let d = self.slot(grads, *a);
                    for (dv, &gv) in d.iter_mut().zip(g) {
                        *dv += k * gv;
                    }
                }
            }
            Op::ScaleRows(a, col) => {
                if self.requires(*a) {
                    let scales = self.value(*col);
                    let d = self.slot(grads, *a);
                    for (r, chunk) in d.chunks_exact_mut(cols.max(1)).enumerate() {
                        let s = scales[r];
                        let grow = &g[r * cols..(r + 1) * cols];
                        for (dv, &gv) in chunk.iter_mut().zip(grow) {
                            *dv += s * gv;
                        }
                    }
                }
                if self.requires(*col) {
                    let av = self.value(*a);
                    let d = self.slot(grads, *col);
                    for (r, dv) in d.iter_mut().enumerate() {
                        let arow = &av[r * cols..(r + 1) * cols];
                        let grow = &g[r * cols..(r + 1) * cols];
                        let mut dot = 0.0;
                        for (&x, &gv) in arow.iter().zip(grow) {
                            dot += x * gv;
                        }
                        *dv += dot;
                    }
                }
            }
            Op::GatherRows(a, index) => {
                if self.requires(*a) {
                    let d = self.slot(grads, *a);
                    for (out_row, &src_row) in index.iter().enumerate() {
                        let grow = &g[out_row * cols..(out_row + 1) * cols];
                        let drow = &mut d[src_row * cols..(src_row + 1) * cols];
                        for (dv, &gv) in drow.iter_mut().zip(grow) {
                            *dv += gv;
                        }
                    }
                }
            }
            Op::ScatterMeanRows { input, bucket, counts } => {
                if self.requires(*input) {
                    let d = self.slot(grads, *input);
                    for (row, &b) in bucket.iter().enumerate() {
                        let inv = 1.0 / counts[b] as f64;
                        let grow = &g[b * cols..(b + 1) * cols];
                        let drow = &mut d[row * cols..(row + 1) * cols];
                        for (dv, &gv) in drow.iter_mut().zip(grow) {
                            *dv += inv * gv;
                        }
                    }
                }
            }
            Op::SumAll(a) => {
                if self.requires(*a) {
                    let d = self.slot(grads, *a);
                    d.iter_mut().for_each(|dv| *dv += g[0]);
                }
            }
            Op::MeanAll(a) => {
                if self.requires(*a) {
                    let d = self.slot(grads, *a);
                    let inv = 1.0 / d.len() as f64;
                    d.iter_mut().for_each(|dv| *dv += g[0] * inv);
                }
            }
            Op::SoftmaxCrossEntropy { logits, labels, probs } => {
                if self.requires(*logits) {
                    let (r, c) = self.shape(*logits);
                    let d = self.slot(grads, *logits);
                    let scale = g[0] / r as f64;
                    for (i, &label) in labels.iter().enumerate() {
                        let prow = &probs[i * c..(i + 1) * c];
                        let drow = &mut d[i * c..(i + 1) * c];
                        for (j, (dv, &p)) in drow.iter_mut().zip(prow).enumerate() {
                            let target = if j == label { 1.0 } else { 0.0 };
                            *dv += scale * (p - target);
                        }
                    }
                }
            }
        }
    }

    // ── helpers ────────────────────────────────────────────────────────

    fn requires(&self, id: TensorId) -> bool {
        self.nodes[id.0].requires_grad
    }

    fn same_shape(&self, what: &str, a: TensorId, b: TensorId) -> Result<(usize, usize)> {
        let (ar, ac) = self.shape(a);
        let (br, bc) = self.shape(b);
        if (ar, ac) != (br, bc) {
            return Err(Error::Shape(format!("{what} of {ar}x{ac} and {br}x{bc}")));
        }
        Ok((ar, ac))
    }

    fn map_unary(&mut self, a: TensorId, f: impl Fn(f64) -> f64, op: Op) -> TensorId {
        let (r, c) = self.shape(a);
        let value = self.value(a).iter().map(|&x| f(x)).collect();
        let rg = self.requires(a);
        self.push(op, r, c, value, rg)
    }

    /// Gradient buffer for `id`, zero-allocated on first touch.
    #[allow(clippy::mut_from_ref)]
    fn slot<'g>(&self, grads: &'g mut [Option<Vec<f64>>], id: TensorId) -> &'g mut Vec<f64> {
        grads[id.0].get_or_insert_with(|| vec![0.0; self.nodes[id.0].value.len()])
    }
}

/// Numerically stable logistic function.
pub fn sigmoid_scalar(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// Row-major `[m x k] * [k x n]` with an i-k-j loop so the inner updates run
/// over contiguous slices.
fn matmul_kernel(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{central_difference_grad, grad_rel_error};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha12Rng;

    fn rng(tag: u64) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(crate::derive_seed(&[0x7e57, tag]))
    }

    /// Random values bounded away from zero so relu and division kinks are
    /// never straddled by the finite-difference probe.
    fn kink_free(rng: &mut ChaCha12Rng, n: usize) -> Vec<f64> {
        (0..n)
            .map(|_| {
                let mag = rng.gen_range(0.2..1.5);
                if rng.gen_bool(0.5) {
                    mag
                } else {
                    -mag
                }
            })
            .collect()
    }

    #[test]
    fn matmul_matches_triple_loop_oracle() {
        let mut r = rng(1);
        for &(m, k, n) in &[(1usize, 1usize, 1usize), (2, 3, 4), (5, 1, 7), (4, 6, 2)] {
            let a: Vec<f64> = (0..m * k).map(|_| r.gen_range(-2.0..2.0)).collect();
            let b: Vec<f64> = (0..k * n).map(|_| r.gen_range(-2.0..2.0)).collect();
            let mut expect = vec![0.0; m * n];
            for i in 0..m {
                for j in 0..n {
                    let mut s = 0.0;
                    for p in 0..k {
                        s += a[i * k + p] * b[p * n + j];
                    }
                    expect[i * n + j] = s;
                }
            }
            let mut tape = Tape::new();
            let ta = tape.leaf(m, k, a).unwrap();
            let tb = tape.leaf(k, n, b).unwrap();
            let tc = tape.matmul(ta, tb).unwrap();
            let got = tape.value(tc);
            for (x, y) in got.iter().zip(&expect) {
                assert!((x - y).abs() < 1e-12, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn matmul_rejects_inner_mismatch_and_handles_empty() {
        let mut tape = Tape::new();
        let a = tape.leaf(2, 3, vec![0.0; 6]).unwrap();
        let b = tape.leaf(2, 2, vec![0.0; 4]).unwrap();
        assert!(matches!(tape.matmul(a, b), Err(crate::Error::Shape(_))));
        // zero-row operand is legal and produces a zero-row result
        let e = tape.leaf(0, 3, vec![]).unwrap();
        let c = tape.leaf(3, 2, vec![1.0; 6]).unwrap();
        let out = tape.matmul(e, c).unwrap();
        assert_eq!(tape.shape(out), (0, 2));
    }

    /// Checks d(sum of root)/d(leaf) against central differences for a
    /// builder that maps one leaf to any tape expression.
    fn check_gradient<F>(build: F, rows: usize, cols: usize, x: Vec<f64>, tol: f64)
    where
        F: Fn(&mut Tape, TensorId) -> TensorId,
    {
        let mut tape = Tape::new();
        let leaf = tape.leaf(rows, cols, x.clone()).unwrap();
        let out = build(&mut tape, leaf);
        let root = tape.sum_all(out);
        tape.backward(root).unwrap();
        let analytic = tape.grad(leaf).expect("leaf grad").to_vec();

        let numeric = central_difference_grad(
            |probe| {
                let mut t = Tape::new();
                let l = t.leaf(rows, cols, probe.to_vec()).unwrap();
                let o = build(&mut t, l);
                let r = t.sum_all(o);
                t.value(r)[0]
            },
            &x,
            1e-5,
        );
        for (i, (&a, &n)) in analytic.iter().zip(&numeric).enumerate() {
            let err = grad_rel_error(a, n);
            assert!(err < tol, "component {i}: analytic {a}, numeric {n}, rel {err}");
        }
    }

    #[test]
    fn elementwise_gradients_match_finite_differences() {
        let mut r = rng(2);
        let x = kink_free(&mut r, 12);
        check_gradient(|t, l| t.relu(l), 3, 4, x.clone(), 1e-7);
        check_gradient(|t, l| t.sigmoid(l), 3, 4, x.clone(), 1e-7);
        check_gradient(|t, l| t.tanh(l), 3, 4, x.clone(), 1e-7);
        check_gradient(|t, l| t.cos(l), 3, 4, x.clone(), 1e-7);
        check_gradient(|t, l| t.scale(l, -2.5), 3, 4, x, 1e-7);
    }

    #[test]
    fn binary_op_gradients_match_finite_differences() {
        let mut r = rng(3);
        let other = kink_free(&mut r, 12);
        let x = kink_free(&mut r, 12);
        let o1 = other.clone();
        check_gradient(
            move |t, l| {
                let c = t.constant(3, 4, o1.clone()).unwrap();
                t.mul(l, c).unwrap()
            },
            3,
            4,
            x.clone(),
            1e-7,
        );
        let o2 = other.clone();
        check_gradient(
            move |t, l| {
                let c = t.constant(3, 4, o2.clone()).unwrap();
                t.add(l, c).unwrap()
            },
            3,
            4,
            x.clone(),
            1e-7,
        );
        // both matmul sides
        let o3 = other.clone();
        check_gradient(
            move |t, l| {
                let c = t.constant(4, 2, o3[..8].to_vec()).unwrap();
                t.matmul(l, c).unwrap()
            },
            3,
            4,
            x.clone(),
            1e-7,
        );
        let o4 = other;
        check_gradient(
            move |t, l| {
                let c = t.constant(2, 3, o4[..6].to_vec()).unwrap();
                t.matmul(c, l).unwrap()
            },
            3,
            4,
            x,
            1e-7,
        );
    }

    #[test]
    fn structural_op_gradients_match_finite_differences() {
        let mut r = rng(4);
        let x = kink_free(&mut r, 12);
        let bias = kink_free(&mut r, 4);
        check_gradient(
            move |t, l| {
                let b = t.constant(1, 4, bias.clone()).unwrap();
                t.add_row(l, b).unwrap()
            },
            3,
            4,
            x.clone(),
            1e-7,
        );
        // bias side of the broadcast
        let base = kink_free(&mut r, 12);
        check_gradient(
            move |t, l| {
                let a = t.constant(3, 4, base.clone()).unwrap();
                t.add_row(a, l).unwrap()
            },
            1,
            4,
            kink_free(&mut r, 4),
            1e-7,
        );
        check_gradient(
            |t, l| {
                let parts = [l, l];
                t.concat_cols(&parts).unwrap()
            },
            3,
            4,
            x.clone(),
            1e-7,
        );
        check_gradient(|t, l| t.gather_rows(l, &[2, 0, 0, 1]).unwrap(), 3, 4, x.clone(), 1e-7);
        check_gradient(
            |t, l| t.scatter_mean_rows(l, &[1, 0, 1], 4).unwrap(),
            3,
            4,
            x.clone(),
            1e-7,
        );
        let scales = kink_free(&mut r, 3);
        check_gradient(
            move |t, l| {
                let s = t.constant(3, 1, scales.clone()).unwrap();
                t.scale_rows(l, s).unwrap()
            },
            3,
            4,
            x.clone(),
            1e-7,
        );
        // column side of the row scale
        let base2 = kink_free(&mut r, 12);
        check_gradient(
            move |t, l| {
                let a = t.constant(3, 4, base2.clone()).unwrap();
                t.scale_rows(a, l).unwrap()
            },
            3,
            1,
            kink_free(&mut r, 3),
            1e-7,
        );
        check_gradient(|t, l| t.mean_all(l).unwrap(), 3, 4, x, 1e-7);
    }

    #[test]
    fn softmax_cross_entropy_matches_direct_formula_and_gradient() {
        let logits = vec![2.0, -1.0, 0.5, 0.0, 3.0, -2.0];
        let labels = vec![0usize, 2];
        // direct oracle: mean over rows of log(sum exp) - logit[label]
        let mut expect = 0.0;
        for (i, &lab) in labels.iter().enumerate() {
            let row = &logits[i * 3..(i + 1) * 3];
            let lse = row.iter().map(|x: &f64| x.exp()).sum::<f64>().ln();
            expect += lse - row[lab];
        }
        expect /= 2.0;

        let mut tape = Tape::new();
        let l = tape.leaf(2, 3, logits.clone()).unwrap();
        let loss = tape.softmax_cross_entropy(l, &labels).unwrap();
        assert!((tape.value(loss)[0] - expect).abs() < 1e-12);

        let labels2 = labels.clone();
        check_gradient(
            move |t, l| t.softmax_cross_entropy(l, &labels2).unwrap(),
            2,
            3,
            logits,
            1e-6,
        );
    }

    #[test]
    fn softmax_cross_entropy_survives_extreme_logits() {
        let mut tape = Tape::new();
        let l = tape.leaf(2, 2, vec![1e4, -1e4, -1e4, 1e4]).unwrap();
        let loss = tape.softmax_cross_entropy(l, &[0, 1]).unwrap();
        let v = tape.value(loss)[0];
        assert!(v.is_finite() && v.abs() < 1e-9, "loss {v}");
        let l2 = tape.softmax_cross_entropy(l, &[1, 0]).unwrap();
        assert!(tape.value(l2)[0] > 1e3);
    }

    #[test]
    fn gradients_accumulate_through_shared_subexpressions() {
        // y = sum(x * x) + sum(x): dy/dx = 2x + 1
        let x = vec![0.5, -1.25, 2.0];
        let mut tape = Tape::new();
        let l = tape.leaf(1, 3, x.clone()).unwrap();
        let sq = tape.mul(l, l).unwrap();
        let s1 = tape.sum_all(sq);
        let s2 = tape.sum_all(l);
        let y = tape.add(s1, s2).unwrap();
        tape.backward(y).unwrap();
        let g = tape.grad(l).unwrap();
        for (gi, xi) in g.iter().zip(&x) {
            assert!((gi - (2.0 * xi + 1.0)).abs() < 1e-12);
        }
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut tape = Tape::new();
        let a = tape.leaf(1, 2, vec![1.0, 2.0]).unwrap();
        let c = tape.constant(1, 2, vec![3.0, 4.0]).unwrap();
        let m = tape.mul(a, c).unwrap();
        let s = tape.sum_all(m);
        tape.backward(s).unwrap();
        assert_eq!(tape.grad(a).unwrap(), &[3.0, 4.0]);
        assert!(tape.grad(c).is_none());
    }

    #[test]
    fn backward_requires_scalar_root() {
        let mut tape = Tape::new();
        let a = tape.leaf(1, 2, vec![1.0, 2.0]).unwrap();
        assert!(matches!(tape.backward(a), Err(crate::Error::Contract(_))));
    }

    #[test]
    fn scatter_mean_leaves_empty_buckets_zero() {
        let mut tape = Tape::new();
        let a = tape.leaf(3, 2, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap();
        let out = tape.scatter_mean_rows(a, &[0, 2, 2], 4).unwrap();
        assert_eq!(tape.value(out), &[1.0, 2.0, 0.0, 0.0, 4.0, 5.0, 0.0, 0.0]);
    }

    #[test]
    fn identical_programs_are_bitwise_identical() {
        let run = || {
            let mut r = rng(9);
            let x: Vec<f64> = (0..24).map(|_| r.gen_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..12).map(|_| r.gen_range(-1.0..1.0)).collect();
            let mut tape = Tape::new();
            let lx = tape.leaf(4, 6, x).unwrap();
            let lw = tape.leaf(6, 2, w).unwrap();
            let h = tape.matmul(lx, lw).unwrap();
            let h = tape.tanh(h);
            let loss = tape.softmax_cross_entropy(h, &[0, 1, 1, 0]).unwrap();
            tape.backward(loss).unwrap();
            (
                tape.value(loss)[0].to_bits(),
                tape.grad(lw).unwrap().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
            )
        };
        assert_eq!(run(), run());
    }
}
