//! Adam with bias correction.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Per-parameter-set optimizer state. Moment buffers are laid out in the
/// same order as the tracked parameters.
pub struct AdamState {
    pub learning_rate: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub epsilon: f32,
    pub step_count: u64,
    first_moment: Vec<Vec<f32>>,
    second_moment: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(learning_rate: f32) -> AdamState {
        AdamState {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
            first_moment: Vec::new(),
            second_moment: Vec::new(),
        }
    }
}

pub struct Adam {
    pub state: AdamState,
    params: Vec<(String, Tensor)>,
}

impl Adam {
    pub fn new(params: Vec<(String, Tensor)>, learning_rate: f32) -> Adam {
        let mut state = AdamState::new(learning_rate);
        state.first_moment = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        state.second_moment = params.iter().map(|(_, p)| vec![0.0; p.numel()]).collect();
        Adam { state, params }
    }

    pub fn params(&self) -> &[(String, Tensor)] {
        &self.params
    }

    /// One Adam update over all tracked parameters. Gradients are left in
    /// place; the caller decides when to reset them.
    pub fn step(&mut self) -> Result<()> {
        self.state.step_count += 1;
        let t = self.state.step_count;
        let b1 = self.state.beta1;
        let b2 = self.state.beta2;
        let bc1 = 1.0 - (b1 as f64).powi(t as i32);
        let bc2 = 1.0 - (b2 as f64).powi(t as i32);
        for (idx, (name, p)) in self.params.iter().enumerate() {
            let grad = p
                .grad()
                .ok_or_else(|| Error::UninitializedGradient(name.clone()))?;
            let m = &mut self.state.first_moment[idx];
            let v = &mut self.state.second_moment[idx];
            let mut data = p.data_mut();
            for i in 0..grad.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (1.0 - b1) * g;
                v[i] = b2 * v[i] + (1.0 - b2) * g * g;
                let mhat = m[i] as f64 / bc1;
                let vhat = v[i] as f64 / bc2;
                data[i] -= (self.state.learning_rate as f64 * mhat
                    / (vhat.sqrt() + self.state.epsilon as f64)) as f32;
            }
        }
        Ok(())
    }

    pub fn zero_grad(&self) {
        for (_, p) in &self.params {
            p.zero_grad();
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_param(v: f32) -> Tensor {
        Tensor::param(vec![v], &[1]).unwrap()
    }

    #[test]
    fn zero_gradient_is_identity() {
        let p = Tensor::param(vec![1.0, -2.0, 3.0], &[3]).unwrap();
        p.add_grad(&[0.0, 0.0, 0.0]);
        let mut opt = Adam::new(vec![("p".into(), p.clone())], 1e-3);
        opt.step().unwrap();
        assert_eq!(p.to_vec(), vec![1.0, -2.0, 3.0]);
        assert_eq!(opt.state.step_count, 1);
    }

    #[test]
    fn missing_grad_is_an_error() {
        let p = scalar_param(1.0);
        let mut opt = Adam::new(vec![("p".into(), p)], 1e-3);
        assert!(matches!(opt.step(), Err(Error::UninitializedGradient(_))));
    }

    #[test]
    fn first_step_magnitude_is_learning_rate() {
        // With bias correction, |update| = lr * |g|/(|g| + eps') ≈ lr.
        for &g in &[3.7f32, -0.02, 150.0] {
            let p = scalar_param(5.0);
            p.add_grad(&[g]);
            let mut opt = Adam::new(vec![("p".into(), p.clone())], 1e-3);
            opt.step().unwrap();
            let delta = p.item() - 5.0;
            assert!((delta.abs() - 1e-3).abs() < 1e-5, "g={g} delta={delta}");
            assert!(delta.signum() == -g.signum());
        }
    }

    #[test]
    fn converges_on_quadratic() {
        // f(x) = x^2 from x=1, lr=0.1, 100 steps.
        let p = scalar_param(1.0);
        let mut opt = Adam::new(vec![("x".into(), p.clone())], 0.1);
        for _ in 0..100 {
            opt.zero_grad();
            let x = p.item();
            p.add_grad(&[2.0 * x]);
            opt.step().unwrap();
        }
        assert!(p.item().abs() < 0.1, "x = {}", p.item());
    }
}
