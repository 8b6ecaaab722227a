//! Training schedule configuration.

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CoreError, Result};
use crate::losses::LossWeights;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub total_steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub loss_weights: LossWeights,
    /// Overrides the network's switch step when set.
    pub mixed_switch_step: Option<u64>,
    pub randcrop_start_step: u64,
    pub synth_occ: bool,
    /// Checkpoint and evaluation period, in steps.
    pub eval_every: u64,
    /// Training samples scored at each evaluation.
    pub eval_samples: usize,
    pub seed: u64,
    /// Global gradient-norm bound; 0 disables clipping.
    pub grad_clip: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 10_000,
            batch_size: 8,
            lr: 1e-4,
            loss_weights: LossWeights::default(),
            mixed_switch_step: None,
            randcrop_start_step: 8000,
            synth_occ: true,
            eval_every: 1000,
            eval_samples: 64,
            seed: 0,
            grad_clip: 1.0,
        }
    }
}

impl TrainConfig {
    /// Full-length schedule: 200K steps at batch 64, parts supervised for the
    /// first 125K, RandCrop from 175K.
    pub fn paper_scale() -> Self {
        Self {
            total_steps: 200_000,
            batch_size: 64,
            lr: 5e-5,
            mixed_switch_step: Some(125_000),
            randcrop_start_step: 175_000,
            eval_every: 5000,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(CoreError::Config(m));
        if self.batch_size == 0 {
            return bad("batch_size must be ≥ 1".into());
        }
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("lr must be positive, got {}", self.lr));
        }
        if self.mixed_switch_step.is_some_and(|s| s > self.total_steps) {
            return bad("mixed_switch_step exceeds total_steps".into());
        }
        if self.randcrop_start_step > self.total_steps {
            return bad("randcrop_start_step exceeds total_steps".into());
        }
        if self.eval_every == 0 {
            return bad("eval_every must be ≥ 1".into());
        }
        if !(self.grad_clip >= 0.0 && self.grad_clip.is_finite()) {
            return bad("grad_clip must be finite and ≥ 0".into());
        }
        self.loss_weights.validate()
    }

    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        Sha256::digest(&json).iter().map(|b| format!("{b:02x}")).collect()
    }
}
