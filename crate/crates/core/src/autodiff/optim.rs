use super::{AutodiffError, Tensor};

/// First/second moment estimates for one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

/// Bias-corrected Adam.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    states: Vec<AdamState>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            states: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    pub fn states(&self) -> &[AdamState] {
        &self.states
    }

    /// Applies one update to `params` in place.
    pub fn step(&mut self, params: &mut [Tensor], grads: &[Tensor]) -> Result<(), AutodiffError> {
        if params.len() != grads.len() {
            return Err(AutodiffError::StateMismatch(format!(
                "{} params but {} grads",
                params.len(),
                grads.len()
            )));
        }
        if self.states.is_empty() {
            self.states = params
                .iter()
                .map(|p| AdamState {
                    m: vec![0.0; p.numel()],
                    v: vec![0.0; p.numel()],
                })
                .collect();
        }
        if self.states.len() != params.len() {
            return Err(AutodiffError::StateMismatch(format!(
                "optimizer tracks {} params, got {}",
                self.states.len(),
                params.len()
            )));
        }
        for ((p, g), s) in params.iter().zip(grads).zip(&self.states) {
            if p.shape() != g.shape() || s.m.len() != p.numel() {
                return Err(AutodiffError::ShapeMismatch {
                    op: "adam_step",
                    lhs: p.shape().to_vec(),
                    rhs: g.shape().to_vec(),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, g), s) in params.iter_mut().zip(grads).zip(&mut self.states) {
            for (((w, &gi), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(&mut s.m).zip(&mut s.v) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gi;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gi * gi;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *w -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their joint L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Tensor], max_norm: f64) -> f64 {
    let norm = grads.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.data_mut().iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![Tensor::vector(vec![1.0, -2.0])];
        let g = vec![Tensor::vector(vec![0.0, 0.0])];
        let mut adam = Adam::new(0.1);
        adam.step(&mut p, &g).unwrap();
        assert_eq!(p[0].data(), &[1.0, -2.0]);
        assert_eq!(adam.step_count(), 1);
    }

    #[test]
    fn first_step_moves_by_lr() {
        let mut p = vec![Tensor::scalar(0.5)];
        let mut adam = Adam::new(0.001);
        adam.step(&mut p, &[Tensor::scalar(1.0)]).unwrap();
        // m_hat / sqrt(v_hat) = 1 exactly; eps perturbs the 9th digit
        assert!((0.5 - p[0].item() - 0.001).abs() < 1e-10);
    }

    #[test]
    fn two_steps_match_scalar_trace() {
        // hand-rolled reference
        let (lr, b1, b2, eps) = (0.01_f64, 0.9_f64, 0.999_f64, 1e-8_f64);
        let grads = [0.3_f64, -0.7];
        let (mut w, mut m, mut v) = (2.0_f64, 0.0_f64, 0.0_f64);
        for (t, g) in grads.iter().enumerate() {
            let t = (t + 1) as i32;
            m = b1 * m + (1.0 - b1) * g;
            v = b2 * v + (1.0 - b2) * g * g;
            w -= lr * (m / (1.0 - b1.powi(t))) / ((v / (1.0 - b2.powi(t))).sqrt() + eps);
        }
        let mut p = vec![Tensor::scalar(2.0)];
        let mut adam = Adam::new(lr);
        for g in grads {
            adam.step(&mut p, &[Tensor::scalar(g)]).unwrap();
        }
        assert!((p[0].item() - w).abs() < 1e-15);
    }

    #[test]
    fn shape_mismatch_rejected() {
        let mut p = vec![Tensor::vector(vec![1.0, 2.0])];
        let mut adam = Adam::new(0.1);
        assert!(adam.step(&mut p, &[Tensor::scalar(1.0)]).is_err());
        assert!(adam.step(&mut p, &[]).is_err());
    }

    #[test]
    fn clipping_caps_norm() {
        let mut g = vec![Tensor::vector(vec![3.0, 4.0]), Tensor::scalar(12.0)];
        let before = clip_global_norm(&mut g, 5.0);
        assert!((before - 13.0).abs() < 1e-12);
        let after: f64 = g.iter().map(Tensor::sq_norm).sum::<f64>().sqrt();
        assert!((after - 5.0).abs() < 1e-12);
        let mut small = vec![Tensor::scalar(1.0)];
        clip_global_norm(&mut small, 5.0);
        assert_eq!(small[0].item(), 1.0);
    }
}
