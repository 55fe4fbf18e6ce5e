//! Losses, masking, schedules, the optimizer, and the pretrain → fine-tune
//! training loops.

mod adam;
mod loss;
mod run;

pub use adam::Adam;
pub use loss::{
    curriculum_horizon, horizon_weighted_mae, masked_pretrain_loss, sample_mask,
    teacher_forcing_prob, total_loss, variation_loss,
};
pub use run::{run_pretraining, run_training, EpochRecord, TrainHistory};

use serde::{Deserialize, Serialize};

use crate::error::{DynastyError, Result};

fn default_learning_rate() -> f64 {
    1e-3
}
fn default_max_epochs() -> usize {
    100
}
fn default_pretrain_epochs() -> usize {
    15
}
fn default_batch_size() -> usize {
    8
}
fn default_lambda_var() -> f64 {
    0.1
}
fn default_horizon_decay() -> f64 {
    0.9
}
fn default_mask_prob() -> f64 {
    0.15
}
fn default_epsilon() -> f64 {
    1e-8
}
fn default_sampling_decay_epochs() -> usize {
    30
}
fn default_mix_alpha() -> f64 {
    0.5
}
fn default_curriculum_start() -> usize {
    2
}
fn default_curriculum_step() -> usize {
    5
}
fn default_patience() -> usize {
    10
}
fn default_clip() -> Option<f64> {
    Some(5.0)
}

/// Optimizer, schedule, loss-weight, masking and curriculum settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    #[serde(default = "default_learning_rate")]
    pub learning_rate: f64,
    #[serde(default = "default_max_epochs")]
    pub max_epochs: usize,
    #[serde(default = "default_pretrain_epochs")]
    pub pretrain_epochs: usize,
    #[serde(default = "default_batch_size")]
    pub batch_size: usize,
    /// λ: weight of the variation loss.
    #[serde(default = "default_lambda_var")]
    pub lambda_var: f64,
    /// γ: per-step decay of the horizon weights, in (0, 1].
    #[serde(default = "default_horizon_decay")]
    pub horizon_decay: f64,
    #[serde(default = "default_mask_prob")]
    pub mask_prob: f64,
    /// ε in the masked-reconstruction denominator.
    #[serde(default = "default_epsilon")]
    pub epsilon: f64,
    /// Epochs over which the teacher-forcing probability decays linearly to 0.
    #[serde(default = "default_sampling_decay_epochs")]
    pub sampling_decay_epochs: usize,
    /// α: ground-truth weight in the scheduled-sampling mix.
    #[serde(default = "default_mix_alpha")]
    pub mix_alpha: f64,
    #[serde(default = "default_curriculum_start")]
    pub curriculum_start_horizon: usize,
    #[serde(default = "default_curriculum_step")]
    pub curriculum_step_epochs: usize,
    /// Epochs without validation improvement before stopping; 0 disables
    /// early stopping.
    #[serde(default = "default_patience")]
    pub early_stop_patience: usize,
    #[serde(default)]
    pub seed: u64,
    /// Global-norm gradient clip; `None` disables clipping.
    #[serde(default = "default_clip")]
    pub grad_clip_norm: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        serde_json::from_str("{}").expect("all fields have defaults")
    }
}

impl TrainConfig {
    pub fn validate(&self, horizon: usize) -> Result<()> {
        if self.learning_rate <= 0.0 {
            return Err(DynastyError::Config("learning_rate must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(DynastyError::Config("batch_size must be positive".into()));
        }
        if self.lambda_var < 0.0 {
            return Err(DynastyError::Config("lambda_var must be nonnegative".into()));
        }
        if !(0.0 < self.horizon_decay && self.horizon_decay <= 1.0) {
            return Err(DynastyError::Config(format!(
                "horizon_decay {} outside (0, 1]",
                self.horizon_decay
            )));
        }
        for (name, p) in [("mask_prob", self.mask_prob), ("mix_alpha", self.mix_alpha)] {
            if !(0.0..=1.0).contains(&p) {
                return Err(DynastyError::Config(format!("{name} {p} outside [0, 1]")));
            }
        }
        if self.curriculum_start_horizon == 0 || self.curriculum_start_horizon > horizon {
            return Err(DynastyError::Config(format!(
                "curriculum_start_horizon {} outside 1..={horizon}",
                self.curriculum_start_horizon
            )));
        }
        if self.curriculum_step_epochs == 0 {
            return Err(DynastyError::Config("curriculum_step_epochs must be positive".into()));
        }
        Ok(())
    }
}
