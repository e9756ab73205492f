//! Bias-corrected Adam parameter updates.

use crate::error::{Error, Result};

/// Optimizer hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First/second moment estimates per parameter buffer, plus the step count.
#[derive(Debug, Clone)]
pub struct AdamState {
    pub cfg: AdamConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    /// Fresh state for buffers of the given lengths.
    pub fn new(cfg: AdamConfig, lens: &[usize]) -> Self {
        Self {
            cfg,
            m: lens.iter().map(|&l| vec![0.0; l]).collect(),
            v: lens.iter().map(|&l| vec![0.0; l]).collect(),
            t: 0,
        }
    }

    pub fn for_params(cfg: AdamConfig, params: &[&mut Vec<f64>]) -> Self {
        let lens: Vec<usize> = params.iter().map(|p| p.len()).collect();
        Self::new(cfg, &lens)
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update: `p -= lr * m_hat / (sqrt(v_hat) + eps)`.
    pub fn step(&mut self, params: &mut [&mut Vec<f64>], grads: &[Vec<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::ShapeMismatch(format!(
                "adam: {} params / {} grads for {} state buffers",
                params.len(),
                grads.len(),
                self.m.len()
            )));
        }
        for ((p, g), (m, v)) in params.iter().zip(grads).zip(self.m.iter().zip(&self.v)) {
            if p.len() != m.len() || g.len() != v.len() {
                return Err(Error::ShapeMismatch("adam: buffer length drift".into()));
            }
        }
        self.t += 1;
        let b1 = self.cfg.beta1;
        let b2 = self.cfg.beta2;
        let c1 = 1.0 - b1.powi(self.t as i32);
        let c2 = 1.0 - b2.powi(self.t as i32);
        for (bi, p) in params.iter_mut().enumerate() {
            let g = &grads[bi];
            let m = &mut self.m[bi];
            let v = &mut self.v[bi];
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= self.cfg.lr * m_hat / (v_hat.sqrt() + self.cfg.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut state = AdamState::new(AdamConfig::default(), &[3]);
        state.step(&mut [&mut p], &[vec![0.0; 3]]).unwrap();
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // With a constant unit gradient the bias-corrected ratio is 1.
        let mut p = vec![0.0];
        let mut state = AdamState::new(AdamConfig::default(), &[1]);
        state.step(&mut [&mut p], &[vec![1.0]]).unwrap();
        assert!((p[0] + 1e-4).abs() < 1e-9, "step was {}", p[0]);
    }

    #[test]
    fn deterministic_across_runs() {
        let run = || {
            let mut p = vec![0.3, -0.7];
            let mut state = AdamState::new(AdamConfig::default(), &[2]);
            for t in 0..10 {
                let g = vec![0.1 * (t as f64 + 1.0), -0.05];
                state.step(&mut [&mut p], &[g]).unwrap();
            }
            p
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
        assert!(a[0].to_bits() == b[0].to_bits());
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let mut p = vec![0.0];
        let mut state = AdamState::new(AdamConfig::default(), &[1]);
        assert!(state.step(&mut [&mut p], &[vec![1.0, 2.0]]).is_err());
    }
}
