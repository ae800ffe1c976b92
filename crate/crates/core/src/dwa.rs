//! Dynamic Weight Average task weighting.
//!
//! After each epoch the scheduler turns the per-task loss descent ratio
//! `ω_k = L_k(t-1) / L_k(t-2)` into weights
//! `λ_k = K · exp(ω_k / T) / Σ_i exp(ω_i / T)`, so Σ λ_k = K by
//! construction. Until two epochs have been recorded every weight is 1.
//! A task whose loss falls faster (smaller ω) gets a smaller weight.
//!
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DwaError {
    #[error("epoch loss vector has length {got}, expected {expected}")]
    Length { got: usize, expected: usize },
    #[error("epoch loss for task {task} is {value}; losses must be finite and > 0")]
    Loss { task: usize, value: f64 },
    #[error("task index {index} out of range for {tasks} tasks")]
    TaskIndex { index: usize, tasks: usize },
}

pub const DEFAULT_TEMPERATURE: f64 = 2.0;

/// Per-task epoch-loss history and the current weights λ_k.
#[derive(Debug, Clone, PartialEq)]
pub struct DwaState {
    temperature: f64,
    /// One entry per epoch, each of length K.
    epoch_losses: Vec<Vec<f64>>,
    weights: Vec<f64>,
    /// ω_k from the most recent update (1.0 before the second update).
    omegas: Vec<f64>,
}

impl DwaState {
    pub fn new(tasks: usize, temperature: f64) -> DwaState {
        assert!(tasks > 0, "need at least one task");
        assert!(temperature > 0.0, "temperature must be positive");
        DwaState {
            temperature,
            epoch_losses: Vec::new(),
            weights: vec![1.0; tasks],
            omegas: vec![1.0; tasks],
        }
    }

    pub fn task_count(&self) -> usize {
        self.weights.len()
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn epochs_recorded(&self) -> usize {
        self.epoch_losses.len()
    }

    /// Appends one epoch of per-task mean losses. Weights change only on
    /// [`DwaState::update_weights`].
    pub fn record_epoch(&mut self, per_task_mean_losses: &[f64]) -> Result<(), DwaError> {
        if per_task_mean_losses.len() != self.task_count() {
            return Err(DwaError::Length {
                got: per_task_mean_losses.len(),
                expected: self.task_count(),
            });
        }
        for (task, &value) in per_task_mean_losses.iter().enumerate() {
            if !value.is_finite() || value <= 0.0 {
                return Err(DwaError::Loss { task, value });
            }
        }
        self.epoch_losses.push(per_task_mean_losses.to_vec());
        Ok(())
    }

    /// Recomputes λ from the two most recent epochs; with fewer than two
    /// epochs recorded all weights are 1.
    pub fn update_weights(&mut self) {
        let k = self.task_count();
        let n = self.epoch_losses.len();
        if n < 2 {
            self.weights = vec![1.0; k];
            self.omegas = vec![1.0; k];
            return;
        }
        let last = &self.epoch_losses[n - 1];
        let prev = &self.epoch_losses[n - 2];
        self.omegas = last.iter().zip(prev).map(|(&a, &b)| a / b).collect();
        let exps: Vec<f64> = self.omegas.iter().map(|&w| (w / self.temperature).exp()).collect();
        let sum: f64 = exps.iter().sum();
        self.weights = exps.iter().map(|&e| k as f64 * e / sum).collect();
    }

    pub fn weight_for(&self, task: usize) -> Result<f64, DwaError> {
        self.weights
            .get(task)
            .copied()
            .ok_or(DwaError::TaskIndex { index: task, tasks: self.task_count() })
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn omegas(&self) -> &[f64] {
        &self.omegas
    }

    pub fn history(&self) -> &[Vec<f64>] {
        &self.epoch_losses
    }

    /// Rebuilds a state from checkpointed history and weights.
    pub fn from_parts(
        temperature: f64,
        epoch_losses: Vec<Vec<f64>>,
        weights: Vec<f64>,
        omegas: Vec<f64>,
    ) -> DwaState {
        DwaState { temperature, epoch_losses, weights, omegas }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn assert_sum_is_k(state: &DwaState) {
        let sum: f64 = state.weights().iter().sum();
        assert!(
            (sum - state.task_count() as f64).abs() < 1e-9,
            "Σλ = {sum} for K = {}",
            state.task_count()
        );
    }

    #[test]
    fn first_two_epochs_have_unit_weights() {
        let mut s = DwaState::new(3, 2.0);
        s.update_weights();
        assert_eq!(s.weights(), &[1.0, 1.0, 1.0]);
        s.record_epoch(&[1.0, 2.0, 3.0]).unwrap();
        s.update_weights();
        assert_eq!(s.weights(), &[1.0, 1.0, 1.0]);
        assert_eq!(s.epochs_recorded(), 1);
    }

    #[test]
    fn record_rejects_bad_losses() {
        let mut s = DwaState::new(2, 2.0);
        assert!(matches!(s.record_epoch(&[1.0]), Err(DwaError::Length { .. })));
        assert!(matches!(
            s.record_epoch(&[1.0, f64::NAN]),
            Err(DwaError::Loss { task: 1, .. })
        ));
        assert!(matches!(
            s.record_epoch(&[0.0, 1.0]),
            Err(DwaError::Loss { task: 0, .. })
        ));
        assert!(matches!(
            s.record_epoch(&[1.0, f64::INFINITY]),
            Err(DwaError::Loss { task: 1, .. })
        ));
    }

    #[test]
    fn history_preserves_order() {
        let mut s = DwaState::new(2, 2.0);
        s.record_epoch(&[1.0, 2.0]).unwrap();
        s.record_epoch(&[3.0, 4.0]).unwrap();
        assert_eq!(s.history()[0], vec![1.0, 2.0]);
        assert_eq!(s.history()[1], vec![3.0, 4.0]);
    }

    #[test]
    fn equal_ratios_keep_unit_weights() {
        let mut s = DwaState::new(4, 2.0);
        s.record_epoch(&[1.0, 2.0, 3.0, 4.0]).unwrap();
        s.record_epoch(&[0.5, 1.0, 1.5, 2.0]).unwrap(); // every loss halved
        s.update_weights();
        for &w in s.weights() {
            assert!((w - 1.0).abs() < 1e-9);
        }
        assert_sum_is_k(&s);
    }

    #[test]
    fn two_task_hand_computed_case() {
        // ω = [0.5, 1.0], T = 2 → λ = 2·e^{ω/2} / (e^{0.25} + e^{0.5})
        let mut s = DwaState::new(2, 2.0);
        s.record_epoch(&[2.0, 1.0]).unwrap();
        s.record_epoch(&[1.0, 1.0]).unwrap();
        s.update_weights();
        let denom = 0.25f64.exp() + 0.5f64.exp();
        let expected = [2.0 * 0.25f64.exp() / denom, 2.0 * 0.5f64.exp() / denom];
        assert!((s.weight_for(0).unwrap() - expected[0]).abs() < 1e-6);
        assert!((s.weight_for(1).unwrap() - expected[1]).abs() < 1e-6);
        assert!((expected[0] - 0.87560).abs() < 1e-4);
        assert!((expected[1] - 1.12440).abs() < 1e-4);
        assert_sum_is_k(&s);
        // the faster-descending task (smaller ω) got the smaller weight
        assert!(s.weight_for(0).unwrap() < s.weight_for(1).unwrap());
    }

    #[test]
    fn sum_is_k_after_every_update() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut s = DwaState::new(6, 2.0);
        for _ in 0..50 {
            let losses: Vec<f64> = (0..6).map(|_| rng.random_range(0.01..10.0)).collect();
            s.record_epoch(&losses).unwrap();
            s.update_weights();
            assert_sum_is_k(&s);
            for &w in s.weights() {
                assert!(w > 0.0);
            }
        }
    }

    #[test]
    fn scaling_one_history_leaves_weights_unchanged() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..100 {
            let k = rng.random_range(2..6);
            let epochs = rng.random_range(2..6);
            let history: Vec<Vec<f64>> = (0..epochs)
                .map(|_| (0..k).map(|_| rng.random_range(0.1..5.0)).collect())
                .collect();
            let scale: f64 = rng.random_range(0.1..10.0);
            let scaled_task = rng.random_range(0..k);

            let mut a = DwaState::new(k, 2.0);
            let mut b = DwaState::new(k, 2.0);
            for epoch in &history {
                a.record_epoch(epoch).unwrap();
                let mut scaled = epoch.clone();
                scaled[scaled_task] *= scale;
                b.record_epoch(&scaled).unwrap();
            }
            a.update_weights();
            b.update_weights();
            for (wa, wb) in a.weights().iter().zip(b.weights()) {
                // the ratio picks up one rounding from the scaling itself
                assert!((wa - wb).abs() < 1e-12, "{wa} vs {wb}");
            }
        }
    }

    #[test]
    fn raising_one_omega_raises_only_that_weight() {
        let mut base = DwaState::new(3, 2.0);
        base.record_epoch(&[1.0, 1.0, 1.0]).unwrap();
        base.record_epoch(&[0.9, 0.9, 0.9]).unwrap();
        base.update_weights();

        let mut bumped = DwaState::new(3, 2.0);
        bumped.record_epoch(&[1.0, 1.0, 1.0]).unwrap();
        bumped.record_epoch(&[1.2, 0.9, 0.9]).unwrap(); // task 0 descends slower
        bumped.update_weights();

        assert!(bumped.weight_for(0).unwrap() > base.weight_for(0).unwrap());
        assert!(bumped.weight_for(1).unwrap() < base.weight_for(1).unwrap());
        assert!(bumped.weight_for(2).unwrap() < base.weight_for(2).unwrap());
    }

    #[test]
    fn infinite_temperature_flattens_weights() {
        let mut s = DwaState::new(3, 1e6);
        s.record_epoch(&[1.0, 5.0, 0.2]).unwrap();
        s.record_epoch(&[0.1, 9.0, 0.2]).unwrap();
        s.update_weights();
        for &w in s.weights() {
            assert!((w - 1.0).abs() < 1e-3);
        }
    }

    #[test]
    fn weight_for_checks_bounds() {
        let s = DwaState::new(2, 2.0);
        assert!(s.weight_for(1).is_ok());
        assert!(matches!(s.weight_for(2), Err(DwaError::TaskIndex { .. })));
    }
}
