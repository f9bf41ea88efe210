//! Adam optimiser with bias-corrected moment estimates.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Optimiser state. Moment buffers are keyed by position in the parameter
/// list, so callers must pass parameters in the same order on every step.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    steps: u64,
    first_moment: Vec<Vec<f64>>,
    second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(learning_rate: f64) -> Self {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            steps: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// One update over all parameters. Every parameter must carry a gradient
    /// (a missing one means the training loop lost a bind/absorb pairing);
    /// gradients are zeroed after the update.
    pub fn step(&mut self, params: &mut [&mut Tensor]) -> Result<()> {
        if self.steps == 0 {
            self.first_moment = params.iter().map(|p| vec![0.0; p.len()]).collect();
            self.second_moment = self.first_moment.clone();
        } else if params.len() != self.first_moment.len() {
            return Err(Error::Contract(format!(
                "optimiser saw {} parameters, expected {}",
                params.len(),
                self.first_moment.len()
            )));
        }
        self.steps += 1;
        let correction1 = 1.0 - self.beta1.powi(self.steps as i32);
        let correction2 = 1.0 - self.beta2.powi(self.steps as i32);

        for (idx, p) in params.iter_mut().enumerate() {
            let g = p.grad.as_ref().ok_or_else(|| {
                Error::Contract(format!("parameter {idx} has no gradient before the update"))
            })?;
            if g.len() != self.first_moment[idx].len() {
                return Err(Error::Shape(format!(
                    "parameter {idx} changed size between steps"
                )));
            }
            let m = &mut self.first_moment[idx];
            let v = &mut self.second_moment[idx];
            for (((mi, vi), gi), di) in m.iter_mut().zip(v.iter_mut()).zip(g).zip(p.data.iter_mut()) {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let m_hat = *mi / correction1;
                let v_hat = *vi / correction2;
                *di -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
            p.zero_grad();
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Scalar reference following the textbook recurrences, kept free of the
    /// vectorised layout above.
    fn scalar_adam(grad_seq: &[f64], x0: f64, lr: f64) -> f64 {
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let (mut m, mut v, mut x) = (0.0, 0.0, x0);
        for (t, &g) in grad_seq.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            let mh = m / (1.0 - b1.powi(t));
            let vh = v / (1.0 - b2.powi(t));
            x -= lr * mh / (vh.sqrt() + eps);
        }
        x
    }

    #[test]
    fn matches_scalar_recurrence() {
        let grads = [0.3, -0.5, 0.1, 0.9, -0.2];
        let mut t = Tensor::from_vec(1, 1, vec![2.0]).unwrap();
        let mut opt = AdamState::new(0.05);
        for &g in &grads {
            t.grad = Some(vec![g]);
            opt.step(&mut [&mut t]).unwrap();
        }
        let expect = scalar_adam(&grads, 2.0, 0.05);
        assert_eq!(t.data[0].to_bits(), expect.to_bits());
        assert_eq!(opt.steps(), 5);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // with bias correction, |first update| = lr for any nonzero gradient
        for &g in &[1e-3, 4.0, -250.0] {
            let mut t = Tensor::from_vec(1, 1, vec![0.0]).unwrap();
            t.grad = Some(vec![g]);
            let mut opt = AdamState::new(0.01);
            opt.step(&mut [&mut t]).unwrap();
            let update = t.data[0].abs();
            assert!((update - 0.01).abs() < 1e-6, "gradient {g} moved {update}");
            assert_eq!(t.data[0].signum(), -g.signum());
        }
    }

    #[test]
    fn grads_are_zeroed_after_step() {
        let mut t = Tensor::from_vec(1, 2, vec![1.0, 2.0]).unwrap();
        t.grad = Some(vec![0.5, -0.5]);
        let mut opt = AdamState::new(0.01);
        opt.step(&mut [&mut t]).unwrap();
        assert_eq!(t.grad.as_deref().unwrap(), &[0.0, 0.0]);
    }

    #[test]
    fn missing_gradient_is_a_contract_error() {
        let mut t = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        let mut opt = AdamState::new(0.01);
        assert!(matches!(opt.step(&mut [&mut t]), Err(Error::Contract(_))));
    }

    #[test]
    fn parameter_count_is_pinned_after_first_step() {
        let mut a = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        let mut b = Tensor::from_vec(1, 1, vec![1.0]).unwrap();
        a.grad = Some(vec![0.1]);
        b.grad = Some(vec![0.1]);
        let mut opt = AdamState::new(0.01);
        opt.step(&mut [&mut a, &mut b]).unwrap();
        a.grad = Some(vec![0.1]);
        assert!(matches!(opt.step(&mut [&mut a]), Err(Error::Contract(_))));
    }

    #[test]
    fn converges_on_a_quadratic() {
        // minimise (x - 3)^2; gradient 2(x - 3)
        let mut t = Tensor::from_vec(1, 1, vec![-4.0]).unwrap();
        let mut opt = AdamState::new(0.1);
        for _ in 0..2000 {
            let g = 2.0 * (t.data[0] - 3.0);
            t.grad = Some(vec![g]);
            opt.step(&mut [&mut t]).unwrap();
        }
        assert!((t.data[0] - 3.0).abs() < 1e-3, "ended at {}", t.data[0]);
    }
}
