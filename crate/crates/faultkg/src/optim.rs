//! Adam optimizer over flat parameter slices.
//!
//! Every trainer in this crate flattens its parameters into one `Vec<f64>`
//! and drives it with this implementation, so the update rule (and its
//! determinism) lives in exactly one place.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adam step-size settings. Defaults are the usual 0.9 / 0.999 / 1e-8.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamHyper {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamHyper {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        AdamHyper {
            learning_rate,
            ..AdamHyper::default()
        }
    }
}

impl Default for AdamHyper {
    fn default() -> Self {
        AdamHyper {
            learning_rate: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

/// First/second moment accumulators plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub hyper: AdamHyper,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamState {
    pub fn new(len: usize, hyper: AdamHyper) -> Self {
        AdamState {
            hyper,
            step: 0,
            m: vec![0.0; len],
            v: vec![0.0; len],
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One bias-corrected Adam update, in place. Rejects mismatched lengths
    /// and non-finite gradients before touching the parameters.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() {
            return Err(Error::Shape {
                context: "adam parameters".into(),
                expected: self.m.len(),
                actual: params.len(),
            });
        }
        if grads.len() != params.len() {
            return Err(Error::Shape {
                context: "adam gradients".into(),
                expected: params.len(),
                actual: grads.len(),
            });
        }
        if let Some(bad) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric(format!(
                "non-finite gradient at coordinate {bad}"
            )));
        }
        let h = self.hyper;
        self.step += 1;
        let t = self.step as i32;
        let bias1 = 1.0 - h.beta1.powi(t);
        let bias2 = 1.0 - h.beta2.powi(t);
        for i in 0..params.len() {
            self.m[i] = h.beta1 * self.m[i] + (1.0 - h.beta1) * grads[i];
            self.v[i] = h.beta2 * self.v[i] + (1.0 - h.beta2) * grads[i] * grads[i];
            let m_hat = self.m[i] / bias1;
            let v_hat = self.v[i] / bias2;
            params[i] -= h.learning_rate * m_hat / (v_hat.sqrt() + h.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_almost_exactly_the_learning_rate() {
        // With bias correction, step one reduces to lr * g / (|g| + eps),
        // i.e. a signed step of magnitude just under lr for any |g| >= 0.01.
        let hyper = AdamHyper::with_learning_rate(0.05);
        for &g in &[0.01, -0.3, 2.0, -150.0] {
            let mut state = AdamState::new(1, hyper);
            let mut params = vec![1.0];
            state.step(&mut params, &[g]).unwrap();
            let update = params[0] - 1.0;
            assert_eq!(update.signum(), -g.signum(), "g = {g}");
            let magnitude = update.abs();
            assert!(
                magnitude <= hyper.learning_rate && magnitude >= hyper.learning_rate * (1.0 - 1e-6),
                "g = {g}: |update| = {magnitude}"
            );
        }
    }

    #[test]
    fn zero_gradient_from_rest_leaves_parameters_unchanged() {
        let mut state = AdamState::new(3, AdamHyper::default());
        let mut params = vec![0.25, -1.5, 3.0];
        let before = params.clone();
        for _ in 0..5 {
            state.step(&mut params, &[0.0, 0.0, 0.0]).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn vanishing_learning_rate_freezes_parameters() {
        let mut state = AdamState::new(2, AdamHyper::with_learning_rate(1e-12));
        let mut params = vec![0.5, -0.5];
        let before = params.clone();
        state.step(&mut params, &[3.0, -0.7]).unwrap();
        for i in 0..2 {
            assert!((params[i] - before[i]).abs() <= 1e-11);
        }
    }

    #[test]
    fn rejects_non_finite_gradients_without_updating() {
        let mut state = AdamState::new(2, AdamHyper::default());
        let mut params = vec![1.0, 2.0];
        let err = state.step(&mut params, &[0.1, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(params, vec![1.0, 2.0]);
    }

    #[test]
    fn rejects_length_mismatches() {
        let mut state = AdamState::new(2, AdamHyper::default());
        let mut params = vec![1.0, 2.0, 3.0];
        assert!(state.step(&mut params, &[0.0, 0.0, 0.0]).is_err());
        let mut params = vec![1.0, 2.0];
        assert!(state.step(&mut params, &[0.0]).is_err());
    }

    #[test]
    fn repeated_steps_descend_a_quadratic() {
        // Minimize (x - 3)^2; gradient 2(x - 3).
        let mut state = AdamState::new(1, AdamHyper::with_learning_rate(0.1));
        let mut params = vec![0.0];
        for _ in 0..500 {
            let g = 2.0 * (params[0] - 3.0);
            state.step(&mut params, &[g]).unwrap();
        }
        assert!((params[0] - 3.0).abs() < 0.05, "ended at {}", params[0]);
    }
}
