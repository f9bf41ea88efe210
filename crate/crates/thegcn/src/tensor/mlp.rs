//! Multi-layer perceptrons over the autodiff tape.
//!
//! Hidden layers use relu; the output layer is affine with no activation, so
//! callers decide how to squash logits. Weights are Glorot-uniform, biases
//! start at zero.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::tape::{Tape, TensorId};
use crate::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct Layer {
    /// `[fan_in x fan_out]`.
    pub weight: Tensor,
    /// `[1 x fan_out]`, broadcast over rows.
    pub bias: Tensor,
}

#[derive(Debug, Clone)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

impl Mlp {
    /// Builds an MLP through the given layer widths, e.g. `[12, 64, 1]` for
    /// one hidden layer of 64 units and a scalar output.
    pub fn new<R: Rng>(dims: &[usize], rng: &mut R) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::Contract(format!(
                "an MLP needs at least input and output widths, got {dims:?}"
            )));
        }
        // A zero input width is allowed (the first matmul then contributes
        // nothing and the bias carries the layer); later widths must be real.
        if dims[1..].contains(&0) {
            return Err(Error::Contract(format!("zero layer width in {dims:?}")));
        }
        let layers = dims
            .windows(2)
            .map(|w| Layer { weight: Tensor::glorot(w[0], w[1], rng), bias: Tensor::zeros(1, w[1]) })
            .collect();
        Ok(Mlp { layers })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weight.rows
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().expect("constructor guarantees at least one layer").weight.cols
    }

    /// Places all parameters on the tape as leaves; layer order, weight
    /// before bias. The binding is how one forward pass sees the model.
    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let ids = self
            .layers
            .iter()
            .map(|l| (tape.param(&l.weight), tape.param(&l.bias)))
            .collect();
        BoundMlp { ids }
    }

    /// Copies tape gradients back into the persistent tensors, adding to any
    /// gradient already accumulated there.
    pub fn absorb_grads(&mut self, tape: &Tape, bound: &BoundMlp) -> Result<()> {
        if bound.ids.len() != self.layers.len() {
            return Err(Error::Contract("binding does not match this MLP".into()));
        }
        for (layer, &(wid, bid)) in self.layers.iter_mut().zip(&bound.ids) {
            if let Some(g) = tape.grad(wid) {
                layer.weight.accumulate_grad(g)?;
            }
            if let Some(g) = tape.grad(bid) {
                layer.bias.accumulate_grad(g)?;
            }
        }
        Ok(())
    }

    /// Parameters with stable dotted names, for checkpoints and optimisers.
    pub fn named(&self, prefix: &str) -> Vec<(String, &Tensor)> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("{prefix}.{i}.weight"), &l.weight));
            out.push((format!("{prefix}.{i}.bias"), &l.bias));
        }
        out
    }

    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::with_capacity(self.layers.len() * 2);
        for l in &mut self.layers {
            out.push(&mut l.weight);
            out.push(&mut l.bias);
        }
        out
    }

    /// Restores parameter values from name-keyed tensors (shape-checked).
    pub fn restore(&mut self, prefix: &str, tensors: &std::collections::BTreeMap<String, Tensor>) -> Result<()> {
        for (i, l) in self.layers.iter_mut().enumerate() {
            restore_tensor(&mut l.weight, &format!("{prefix}.{i}.weight"), tensors)?;
            restore_tensor(&mut l.bias, &format!("{prefix}.{i}.bias"), tensors)?;
        }
        Ok(())
    }
}

pub(crate) fn restore_tensor(
    dst: &mut Tensor,
    name: &str,
    tensors: &std::collections::BTreeMap<String, Tensor>,
) -> Result<()> {
    let src = tensors
        .get(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name:?}")))?;
    if (src.rows, src.cols) != (dst.rows, dst.cols) {
        return Err(Error::Checkpoint(format!(
            "tensor {name:?} is {}x{}, expected {}x{}",
            src.rows, src.cols, dst.rows, dst.cols
        )));
    }
    dst.data.clone_from(&src.data);
    dst.grad = None;
    Ok(())
}

/// Tape-resident view of an [`Mlp`] for one forward pass.
pub struct BoundMlp {
    ids: Vec<(TensorId, TensorId)>,
}

impl BoundMlp {
    /// `x` is `[batch x input_dim]`; returns `[batch x output_dim]`.
    pub fn forward(&self, tape: &mut Tape, x: TensorId) -> Result<TensorId> {
        let mut h = x;
        let last = self.ids.len() - 1;
        for (i, &(w, b)) in self.ids.iter().enumerate() {
            let lin = tape.matmul(h, w)?;
            h = tape.add_row(lin, b)?;
            if i < last {
                h = tape.relu(h);
            }
        }
        Ok(h)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::{central_difference_grad, grad_rel_error};
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    fn rng(tag: u64) -> ChaCha12Rng {
        ChaCha12Rng::from_seed(crate::derive_seed(&[0x417, tag]))
    }

    /// Plain-loop oracle for an MLP forward pass: per layer, per output
    /// unit, an explicit dot product plus bias, relu between layers.
    fn forward_oracle(mlp: &Mlp, x: &[f64]) -> Vec<f64> {
        let mut h = x.to_vec();
        for (li, layer) in mlp.layers.iter().enumerate() {
            let (fi, fo) = (layer.weight.rows, layer.weight.cols);
            assert_eq!(h.len(), fi);
            let mut next = vec![0.0; fo];
            for (j, n) in next.iter_mut().enumerate() {
                let mut s = layer.bias.data[j];
                for (p, &hv) in h.iter().enumerate() {
                    s += hv * layer.weight.data[p * fo + j];
                }
                *n = if li + 1 < mlp.layers.len() { s.max(0.0) } else { s };
            }
            h = next;
        }
        h
    }

    #[test]
    fn forward_matches_per_unit_oracle() {
        let mut r = rng(1);
        let mlp = Mlp::new(&[5, 7, 3], &mut r).unwrap();
        // nonzero biases so the bias path is exercised
        let mut mlp = mlp;
        for l in &mut mlp.layers {
            for (k, b) in l.bias.data.iter_mut().enumerate() {
                *b = 0.1 * (k as f64 + 1.0);
            }
        }
        use rand::Rng;
        for _ in 0..10 {
            let x: Vec<f64> = (0..5).map(|_| r.gen_range(-2.0..2.0)).collect();
            let expect = forward_oracle(&mlp, &x);
            let mut tape = Tape::new();
            let lx = tape.leaf(1, 5, x).unwrap();
            let bound = mlp.bind(&mut tape);
            let out = bound.forward(&mut tape, lx).unwrap();
            for (a, e) in tape.value(out).iter().zip(&expect) {
                assert!((a - e).abs() < 1e-12, "{a} vs {e}");
            }
        }
    }

    #[test]
    fn batched_rows_are_independent() {
        let mut r = rng(2);
        let mlp = Mlp::new(&[4, 6, 2], &mut r).unwrap();
        use rand::Rng;
        let rows: Vec<Vec<f64>> = (0..3).map(|_| (0..4).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let flat: Vec<f64> = rows.iter().flatten().cloned().collect();
        let mut tape = Tape::new();
        let lx = tape.leaf(3, 4, flat).unwrap();
        let bound = mlp.bind(&mut tape);
        let out = bound.forward(&mut tape, lx).unwrap();
        let batched = tape.value(out).to_vec();
        for (i, row) in rows.iter().enumerate() {
            let mut t = Tape::new();
            let lx = t.leaf(1, 4, row.clone()).unwrap();
            let b = mlp.bind(&mut t);
            let o = b.forward(&mut t, lx).unwrap();
            for (j, v) in t.value(o).iter().enumerate() {
                assert_eq!(v.to_bits(), batched[i * 2 + j].to_bits());
            }
        }
    }

    #[test]
    fn parameter_gradients_match_finite_differences() {
        let mut r = rng(3);
        let mlp = Mlp::new(&[3, 5, 2], &mut r).unwrap();
        use rand::Rng;
        let x: Vec<f64> = (0..6).map(|_| r.gen_range(0.3..1.0)).collect();
        let labels = vec![1usize, 0];

        let loss_with = |mlp: &Mlp| -> f64 {
            let mut tape = Tape::new();
            let lx = tape.leaf(2, 3, x.clone()).unwrap();
            let bound = mlp.bind(&mut tape);
            let out = bound.forward(&mut tape, lx).unwrap();
            let loss = tape.softmax_cross_entropy(out, &labels).unwrap();
            tape.value(loss)[0]
        };

        // analytic
        let mut model = mlp.clone();
        let mut tape = Tape::new();
        let lx = tape.leaf(2, 3, x.clone()).unwrap();
        let bound = model.bind(&mut tape);
        let out = bound.forward(&mut tape, lx).unwrap();
        let loss = tape.softmax_cross_entropy(out, &labels).unwrap();
        tape.backward(loss).unwrap();
        model.absorb_grads(&tape, &bound).unwrap();

        for li in 0..model.layers.len() {
            for field in 0..2 {
                let base = mlp.clone();
                let data = if field == 0 {
                    base.layers[li].weight.data.clone()
                } else {
                    base.layers[li].bias.data.clone()
                };
                let numeric = central_difference_grad(
                    |probe| {
                        let mut m = base.clone();
                        if field == 0 {
                            m.layers[li].weight.data = probe.to_vec();
                        } else {
                            m.layers[li].bias.data = probe.to_vec();
                        }
                        loss_with(&m)
                    },
                    &data,
                    1e-5,
                );
                let analytic = if field == 0 {
                    model.layers[li].weight.grad.as_deref().unwrap()
                } else {
                    model.layers[li].bias.grad.as_deref().unwrap()
                };
                for (a, n) in analytic.iter().zip(&numeric) {
                    assert!(grad_rel_error(*a, *n) < 1e-5, "layer {li} field {field}: {a} vs {n}");
                }
            }
        }
    }

    #[test]
    fn constructor_rejects_degenerate_widths() {
        let mut r = rng(4);
        assert!(Mlp::new(&[5], &mut r).is_err());
        assert!(Mlp::new(&[5, 0, 2], &mut r).is_err());
        assert!(Mlp::new(&[5, 2, 0], &mut r).is_err());
        assert!(Mlp::new(&[5, 2], &mut r).is_ok());
        // zero input width is legal: the layer degenerates to its bias
        let empty_in = Mlp::new(&[0, 3], &mut r).unwrap();
        let mut tape = Tape::new();
        let bound = empty_in.bind(&mut tape);
        let x = tape.constant(2, 0, vec![]).unwrap();
        let y = bound.forward(&mut tape, x).unwrap();
        assert_eq!(tape.value(y), &[0.0; 6], "zero biases pass through");
    }

    #[test]
    fn named_restore_round_trips() {
        let mut r = rng(5);
        let mlp = Mlp::new(&[3, 4, 2], &mut r).unwrap();
        let named: Vec<(String, Tensor)> =
            mlp.named("edge").into_iter().map(|(n, t)| (n, t.clone())).collect();
        let map: std::collections::BTreeMap<String, Tensor> = named.into_iter().collect();
        let mut other = Mlp::new(&[3, 4, 2], &mut rng(6)).unwrap();
        assert_ne!(other.layers[0].weight.data, mlp.layers[0].weight.data);
        other.restore("edge", &map).unwrap();
        assert_eq!(other.layers[0].weight.data, mlp.layers[0].weight.data);
        assert_eq!(other.layers[1].bias.data, mlp.layers[1].bias.data);
        // shape mismatch is rejected
        let mut wrong = Mlp::new(&[3, 5, 2], &mut rng(7)).unwrap();
        assert!(matches!(wrong.restore("edge", &map), Err(crate::Error::Checkpoint(_))));
    }
}
