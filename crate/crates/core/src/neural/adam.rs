use crate::error::{Error, Result};

use super::Grads;

/// Adam with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    step: u64,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(learning_rate: f64) -> Self {
        Self { learning_rate, beta1: 0.9, beta2: 0.999, epsilon: 1e-8, step: 0, first: Vec::new(), second: Vec::new() }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. Fails without touching `params` when the
    /// gradients contain NaN/Inf, and reports non-finite parameters after it.
    pub fn step(&mut self, params: Vec<&mut [f64]>, grads: &Grads) -> Result<()> {
        if params.len() != grads.0.len() {
            return Err(Error::ShapeMismatch { expected: params.len(), actual: grads.0.len() });
        }
        if grads.0.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Numeric("non-finite gradient".into()));
        }
        if self.first.is_empty() {
            self.first = grads.0.iter().map(|g| vec![0.0; g.len()]).collect();
            self.second = self.first.clone();
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - self.beta1.powi(t);
        let c2 = 1.0 - self.beta2.powi(t);
        for (k, (p, g)) in params.into_iter().zip(&grads.0).enumerate() {
            if p.len() != g.len() || self.first[k].len() != g.len() {
                return Err(Error::ShapeMismatch { expected: p.len(), actual: g.len() });
            }
            let m = &mut self.first[k];
            let v = &mut self.second[k];
            for i in 0..p.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.learning_rate * m_hat / (v_hat.sqrt() + self.epsilon);
                if !p[i].is_finite() {
                    return Err(Error::Numeric("non-finite parameter after update".into()));
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![1.0, -2.0];
        let mut adam = Adam::new(1e-3);
        adam.step(vec![&mut p[..]], &Grads(vec![vec![0.0, 0.0]])).unwrap();
        assert_eq!(p, vec![1.0, -2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = vec![0.0];
        let mut adam = Adam::new(1e-3);
        adam.step(vec![&mut p[..]], &Grads(vec![vec![1.0]])).unwrap();
        assert!((p[0] + 0.001).abs() < 1e-10, "{}", p[0]);
    }

    #[test]
    fn constant_gradient_steps_approach_learning_rate() {
        let mut p = vec![0.0];
        let mut adam = Adam::new(1e-3);
        let mut last = 0.0;
        for _ in 0..5000 {
            let before = p[0];
            adam.step(vec![&mut p[..]], &Grads(vec![vec![0.3]])).unwrap();
            last = before - p[0];
        }
        assert!((last - 1e-3).abs() < 1e-8, "{last}");
    }

    #[test]
    fn nan_gradient_rejected() {
        let mut p = vec![0.0];
        let mut adam = Adam::new(1e-3);
        assert!(adam.step(vec![&mut p[..]], &Grads(vec![vec![f64::NAN]])).is_err());
        assert_eq!(p[0], 0.0);
    }
}
