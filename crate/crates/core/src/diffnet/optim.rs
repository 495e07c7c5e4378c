//! Adaptive-moment stochastic gradient optimizer.

use std::collections::BTreeMap;

use crate::diffnet::params::ParamStore;
use crate::error::{Error, Result};

#[derive(Debug, Clone)]
pub struct OptimizerState {
    pub step: u64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    first_moment: BTreeMap<String, Vec<f64>>,
    second_moment: BTreeMap<String, Vec<f64>>,
}

impl OptimizerState {
    pub fn new(learning_rate: f64) -> Self {
        OptimizerState {
            step: 0,
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            first_moment: BTreeMap::new(),
            second_moment: BTreeMap::new(),
        }
    }

    /// One update from the gradients currently held in `params`.
    pub fn step(&mut self, params: &mut ParamStore) -> Result<()> {
        for (name, p) in params.iter() {
            if p.grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::NonFiniteGradient(name.to_string()));
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let m = self
                .first_moment
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; p.len()]);
            let v = self
                .second_moment
                .entry(name.to_string())
                .or_insert_with(|| vec![0.0; p.len()]);
            for i in 0..p.values.len() {
                let g = p.grad[i];
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g;
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g * g;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p.values[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffnet::params::Param;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = ParamStore::new();
        let mut p = Param::zeros(vec![2]);
        p.values = vec![1.0, -2.0];
        params.insert("w", p);
        let mut opt = OptimizerState::new(0.1);
        opt.step(&mut params).unwrap();
        assert_eq!(params.get("w").unwrap().values, vec![1.0, -2.0]);
        assert_eq!(opt.step, 1);
    }

    #[test]
    fn first_step_magnitude_is_about_learning_rate() {
        let mut params = ParamStore::new();
        let mut p = Param::zeros(vec![1]);
        p.values[0] = 0.0;
        p.grad[0] = 1.0;
        params.insert("w", p);
        let mut opt = OptimizerState::new(0.1);
        opt.step(&mut params).unwrap();
        let w = params.get("w").unwrap().values[0];
        assert!((w + 0.1).abs() < 1e-6, "w = {w}");
    }

    #[test]
    fn converges_on_scalar_quadratic() {
        // loss (w-5)^2 from w=0, lr=0.1, 100 steps -> |w-5| < 0.5
        let mut params = ParamStore::new();
        params.insert("w", Param::zeros(vec![1]));
        let mut opt = OptimizerState::new(0.1);
        for _ in 0..100 {
            params.zero_grad();
            let w = params.get("w").unwrap().values[0];
            params.get_mut("w").unwrap().grad[0] = 2.0 * (w - 5.0);
            opt.step(&mut params).unwrap();
        }
        let w = params.get("w").unwrap().values[0];
        assert!((w - 5.0).abs() < 0.5, "w = {w}");
    }

    #[test]
    fn non_finite_gradient_names_the_parameter() {
        let mut params = ParamStore::new();
        let mut p = Param::zeros(vec![1]);
        p.grad[0] = f64::NAN;
        params.insert("bad", p);
        let mut opt = OptimizerState::new(0.1);
        let err = opt.step(&mut params).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }
}
