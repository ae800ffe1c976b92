//! AdamW with an inverse-square-root learning-rate schedule and linear
//! warmup.
//!
//! All bookkeeping runs in f64, but parameters and both moment vectors are
//! rounded through f32 after every step. The in-memory state therefore
//! always sits exactly on the checkpoint grid, which is what makes
//! save → load → train bit-identical to an uninterrupted run.

use crate::model::ModelError;

use super::TrainError;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OptimConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub warmup_steps: u64,
}

impl Default for OptimConfig {
    fn default() -> OptimConfig {
        OptimConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-8,
            weight_decay: 0.0,
            warmup_steps: 100,
        }
    }
}

fn quantize(v: f64) -> f64 {
    v as f32 as f64
}

/// Decoupled-weight-decay adaptive-moment optimizer.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: OptimConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl AdamW {
    pub fn new(config: OptimConfig, n_params: usize) -> AdamW {
        AdamW { config, step: 0, m: vec![0.0; n_params], v: vec![0.0; n_params] }
    }

    /// Learning rate at a 1-based step: linear warmup to `lr`, then decay
    /// with `sqrt(warmup / step)`.
    pub fn lr_at(&self, step: u64) -> f64 {
        let w = self.config.warmup_steps.max(1) as f64;
        let t = step.max(1) as f64;
        self.config.lr * (t / w).min((w / t).sqrt())
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update over flat parameter and gradient vectors.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<(), TrainError> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TrainError::Model(ModelError::Shape(format!(
                "optimizer sized for {} params, got {}/{}",
                self.m.len(),
                params.len(),
                grads.len()
            ))));
        }
        self.step += 1;
        let lr = self.lr_at(self.step);
        let c = self.config;
        let bc1 = 1.0 - c.beta1.powi(self.step as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            let m = quantize(c.beta1 * self.m[i] + (1.0 - c.beta1) * g);
            let v = quantize(c.beta2 * self.v[i] + (1.0 - c.beta2) * g * g);
            self.m[i] = m;
            self.v[i] = v;
            let m_hat = m / bc1;
            let v_hat = v / bc2;
            let update = m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * params[i];
            params[i] = quantize(params[i] - lr * update);
        }
        Ok(())
    }

    pub fn moments(&self) -> (&[f64], &[f64]) {
        (&self.m, &self.v)
    }

    pub fn restore(config: OptimConfig, step: u64, m: Vec<f64>, v: Vec<f64>) -> AdamW {
        AdamW { config, step, m, v }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn warmup_ramps_then_decays() {
        let opt = AdamW::new(OptimConfig { warmup_steps: 10, lr: 1e-3, ..OptimConfig::default() }, 1);
        assert!((opt.lr_at(1) - 1e-4).abs() < 1e-12);
        assert!((opt.lr_at(10) - 1e-3).abs() < 1e-12);
        assert!((opt.lr_at(40) - 1e-3 * 0.5).abs() < 1e-12); // sqrt(10/40) = 1/2
        assert!(opt.lr_at(40) < opt.lr_at(10));
    }

    #[test]
    fn descends_a_quadratic() {
        let mut opt = AdamW::new(
            OptimConfig { lr: 0.05, warmup_steps: 10, ..OptimConfig::default() },
            2,
        );
        let mut p = vec![2.0, -3.0];
        for _ in 0..600 {
            let g: Vec<f64> = p.iter().map(|&x| 2.0 * x).collect();
            opt.step(&mut p, &g).unwrap();
        }
        assert!(p[0].abs() < 0.1 && p[1].abs() < 0.1, "{p:?}");
    }

    #[test]
    fn weight_decay_shrinks_parameters_without_gradient() {
        let mut opt = AdamW::new(
            OptimConfig { lr: 0.1, weight_decay: 0.1, warmup_steps: 1, ..OptimConfig::default() },
            1,
        );
        let mut p = vec![1.0];
        opt.step(&mut p, &[0.0]).unwrap();
        assert!(p[0] < 1.0);
        assert!((p[0] - (1.0 - 0.1 * 0.1)).abs() < 1e-6);
    }

    #[test]
    fn state_stays_on_the_f32_grid() {
        let mut opt = AdamW::new(OptimConfig::default(), 3);
        let mut p = vec![0.1, -0.2, 0.3];
        for s in 0..5 {
            let g: Vec<f64> = p.iter().map(|&x| (x * 37.0 + s as f64).sin()).collect();
            opt.step(&mut p, &g).unwrap();
        }
        for &x in p.iter().chain(opt.m.iter()).chain(opt.v.iter()) {
            assert_eq!(x, x as f32 as f64);
        }
    }

    #[test]
    fn size_mismatch_is_an_error() {
        let mut opt = AdamW::new(OptimConfig::default(), 2);
        assert!(opt.step(&mut [0.0][..].to_vec(), &[0.0]).is_err());
    }
}
