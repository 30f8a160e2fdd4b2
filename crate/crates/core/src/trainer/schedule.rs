use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::TrainError;

fn default_clip() -> f64 {
    1.0
}

fn default_val_batches() -> usize {
    4
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub max_lr: f64,
    pub warmup_iters: usize,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub seq_len: usize,
    pub total_iters: usize,
    pub checkpoint_every: usize,
    pub seed: u64,
    /// Global gradient-norm ceiling.
    #[serde(default = "default_clip")]
    pub grad_clip: f64,
    /// Held-out batches averaged for each checkpoint's validation loss.
    #[serde(default = "default_val_batches")]
    pub val_batches: usize,
}

impl TrainConfig {
    /// Learning-rate settings of the full-size runs: peak 1e-4 after 450
    /// warmup iterations.
    pub fn reference() -> Self {
        Self {
            max_lr: 1e-4,
            warmup_iters: 450,
            weight_decay: 0.1,
            batch_size: 8,
            seq_len: 1024,
            total_iters: 10_000,
            checkpoint_every: 1000,
            seed: 0,
            grad_clip: 1.0,
            val_batches: 4,
        }
    }

    /// Settings for the two-layer repeat-task model.
    pub fn toy() -> Self {
        Self {
            max_lr: 1e-3,
            warmup_iters: 200,
            weight_decay: 0.01,
            batch_size: 8,
            seq_len: 128,
            total_iters: 10_000,
            checkpoint_every: 1000,
            seed: 0,
            grad_clip: 1.0,
            val_batches: 4,
        }
    }

    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |m: &str| Err(TrainError::InvalidConfig(m.to_string()));
        if !(self.max_lr.is_finite() && self.max_lr > 0.0) {
            return bad("max_lr must be positive");
        }
        if self.warmup_iters == 0 || self.warmup_iters >= self.total_iters {
            return bad("need 0 < warmup_iters < total_iters");
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return bad("weight_decay must be non-negative");
        }
        if self.batch_size == 0 || self.seq_len < 2 || self.checkpoint_every == 0 || self.val_batches == 0 {
            return bad("batch_size, checkpoint_every and val_batches must be positive and seq_len at least 2");
        }
        if !(self.grad_clip > 0.0) {
            return bad("grad_clip must be positive");
        }
        Ok(())
    }

    /// Iterations at which a checkpoint is written, starting with 0 and
    /// always ending with `total_iters`.
    pub fn checkpoint_iterations(&self) -> Vec<usize> {
        let mut its: Vec<usize> = (0..=self.total_iters).step_by(self.checkpoint_every).collect();
        if its.last() != Some(&self.total_iters) {
            its.push(self.total_iters);
        }
        its
    }
}

/// Linear warmup from zero, then cosine decay to a tenth of the peak at
/// `total_iters` (held there afterwards).
pub fn lr_schedule(step: usize, cfg: &TrainConfig) -> f64 {
    if step < cfg.warmup_iters {
        return cfg.max_lr * step as f64 / cfg.warmup_iters as f64;
    }
    let min_lr = 0.1 * cfg.max_lr;
    let span = (cfg.total_iters - cfg.warmup_iters) as f64;
    let progress = ((step - cfg.warmup_iters) as f64 / span).min(1.0);
    min_lr + 0.5 * (1.0 + (PI * progress).cos()) * (cfg.max_lr - min_lr)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::reference();
        assert_eq!(lr_schedule(0, &cfg), 0.0);
        assert_eq!(lr_schedule(450, &cfg), 1e-4);
        assert!((lr_schedule(10_000, &cfg) - 1e-5).abs() < 1e-18);
        assert!((lr_schedule(225, &cfg) - 5e-5).abs() < 1e-18);
        let mut prev = f64::INFINITY;
        for s in (450..=10_000).step_by(50) {
            let lr = lr_schedule(s, &cfg);
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn checkpoint_arithmetic() {
        let mut cfg = TrainConfig::toy();
        cfg.total_iters = 300;
        cfg.checkpoint_every = 100;
        assert_eq!(cfg.checkpoint_iterations(), vec![0, 100, 200, 300]);
        cfg.total_iters = 250;
        assert_eq!(cfg.checkpoint_iterations(), vec![0, 100, 200, 250]);
    }

    #[test]
    fn validation_rejects_bad_warmup() {
        let mut cfg = TrainConfig::toy();
        cfg.warmup_iters = cfg.total_iters;
        assert!(cfg.validate().is_err());
        assert!(TrainConfig::reference().validate().is_ok());
    }
}
