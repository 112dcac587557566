use crate::error::{Error, Result};

use super::{Gradients, MlpParams};

/// Bias-corrected Adam moments for one [`MlpParams`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: MlpParams,
    pub v: MlpParams,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamState {
    pub fn new(params: &MlpParams) -> Self {
        Self {
            m: params.zeros_like(),
            v: params.zeros_like(),
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    /// One update in place. Non-finite gradients are rejected before any
    /// state changes.
    pub fn step(&mut self, params: &mut MlpParams, grads: &Gradients, lr: f64) -> Result<()> {
        if !grads.is_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        self.t += 1;
        let (b1, b2) = (self.beta1, self.beta2);
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        let eps = self.eps;
        let grads = grads.tensors();
        for (((p, m), v), g) in params
            .tensors_mut()
            .into_iter()
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut())
            .zip(grads)
        {
            for k in 0..p.len() {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                p[k] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut params = MlpParams::zeros(2, 2, 1);
        let mut grads = params.zeros_like();
        grads.w1[[0, 0]] = 3.0;
        grads.w1[[1, 1]] = -0.02;
        let mut state = AdamState::new(&params);
        state.step(&mut params, &grads, 0.01).unwrap();
        assert!((params.w1[[0, 0]] + 0.01).abs() < 1e-9);
        assert!((params.w1[[1, 1]] - 0.01).abs() < 1e-6);
        assert_eq!(params.w1[[0, 1]], 0.0);
        assert_eq!(state.t, 1);
    }

    #[test]
    fn zero_gradient_keeps_params_and_decays_moments() {
        let mut params = MlpParams::init(2, 3, 2, 1);
        let mut grads = params.zeros_like();
        grads.b2[0] = 1.0;
        let mut state = AdamState::new(&params);
        state.step(&mut params, &grads, 0.1).unwrap();
        let before = params.clone();
        let m_before = state.m.b2[0];
        let v_before = state.v.b2[0];
        let zero = params.zeros_like();
        state.step(&mut params, &zero, 0.1).unwrap();
        assert_eq!(params.w1, before.w1);
        assert!((state.m.b2[0] - 0.9 * m_before).abs() < 1e-15);
        assert!((state.v.b2[0] - 0.999 * v_before).abs() < 1e-15);
    }

    #[test]
    fn descends_a_convex_quadratic() {
        // f(p) = sum (p - 1.5)^2 over all parameters
        let mut params = MlpParams::init(3, 4, 2, 5);
        let loss = |p: &MlpParams| -> f64 {
            p.tensors().iter().flat_map(|t| t.iter()).map(|v| (v - 1.5).powi(2)).sum()
        };
        let start = loss(&params);
        let mut state = AdamState::new(&params);
        for _ in 0..100 {
            let mut g = params.clone();
            for t in g.tensors_mut() {
                t.iter_mut().for_each(|v| *v = 2.0 * (*v - 1.5));
            }
            state.step(&mut params, &g, 0.01).unwrap();
        }
        assert!(loss(&params) < start);
    }

    #[test]
    fn non_finite_gradient_is_an_error() {
        let mut params = MlpParams::zeros(1, 1, 1);
        let mut grads = params.zeros_like();
        grads.b1[0] = f64::NAN;
        let mut state = AdamState::new(&params);
        assert!(state.step(&mut params, &grads, 0.1).is_err());
        assert_eq!(state.t, 0);
    }
}
