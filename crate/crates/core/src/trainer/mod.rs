//! Loss, detector model, masked fine-tuning and evaluation.

mod adam;
mod audit;
mod detector;
mod finetune;
mod head;
mod metrics;

use serde::{Deserialize, Serialize};

pub use adam::{AdamConfig, AdamState};
pub use audit::{audit_detector, AuditReport, AUDIT_FLOOR};
pub use detector::{head_backward, Detector, FeatureNorm, HeadGrads};
pub use finetune::{evaluate, finetune, train_head, EpochLog, TrainLog};
pub use head::ClassifierHead;
pub use metrics::{accuracy, average_precision, compute_metrics, Metrics};

use crate::error::{I2pError, Result};
use crate::numerics::{sigmoid, softplus};

/// `(softplus(z) − y z, σ(z) − y)`.
pub fn bce_with_logits(z: f64, y: f64) -> (f64, f64) {
    (softplus(z) - y * z, sigmoid(z) - y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub seed: u64,
    pub augment_flip: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 16,
            epochs: 9,
            decay_factor: 0.7,
            decay_every: 3,
            seed: 0,
            augment_flip: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr > 0.0
            && self.beta1 > 0.0
            && self.beta1 < 1.0
            && self.beta2 > 0.0
            && self.beta2 < 1.0
            && self.eps >= 0.0
            && self.batch_size >= 1
            && self.decay_every >= 1
            && self.decay_factor > 0.0;
        if ok {
            Ok(())
        } else {
            Err(I2pError::InvalidArgument(format!("invalid training config {self:?}")))
        }
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            lr: self.lr,
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    /// Learning rate used during `epoch` (1-based).
    pub fn lr_at(&self, epoch: usize) -> f64 {
        let decays = (epoch.max(1) - 1) / self.decay_every;
        self.lr * self.decay_factor.powi(decays as i32)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bce_examples() {
        let (l, g) = bce_with_logits(0.0, 1.0);
        assert!((l - std::f64::consts::LN_2).abs() < 1e-15);
        assert_eq!(g, -0.5);
        let (l, g) = bce_with_logits(20.0, 1.0);
        assert!((l - 2.061_153_6e-9).abs() < 1e-15);
        assert!((g + 2.061_153_6e-9).abs() < 1e-15);
    }

    #[test]
    fn schedule_steps_every_three_epochs() {
        let c = TrainConfig::default();
        let lrs: Vec<f64> = (1..=9).map(|e| c.lr_at(e)).collect();
        for (e, lr) in lrs.iter().enumerate() {
            let want = [1e-4, 7e-5, 4.9e-5][e / 3];
            assert!((lr - want).abs() < 1e-18, "epoch {}: {lr}", e + 1);
        }
    }
}
