use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which logit penalty is added to the cross-entropy loss.
///
/// * `Eq1` penalizes `λ/2 · mean(ŷ²)` over every logit in the batch.
/// * `Eq2` selects `(λ, γ)` by the ground-truth class of each sample and
///   penalizes `λ_y/2 · mean_c (ŷ_c − γ_y)²`, averaged over the batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "lowercase")]
pub enum SdConfig {
    Off,
    Eq1 {
        lambda: f64,
    },
    Eq2 {
        lambda_neg: f64,
        gamma_neg: f64,
        lambda_pos: f64,
        gamma_pos: f64,
    },
}

impl SdConfig {
    pub const fn eq1(lambda: f64) -> Self {
        SdConfig::Eq1 { lambda }
    }

    pub const fn eq2(lambda_neg: f64, gamma_neg: f64, lambda_pos: f64, gamma_pos: f64) -> Self {
        SdConfig::Eq2 {
            lambda_neg,
            gamma_neg,
            lambda_pos,
            gamma_pos,
        }
    }

    /// Single-lambda coefficient tuned for the prostate experiments.
    pub const TUNED_EQ1: SdConfig = SdConfig::eq1(0.01);

    /// Per-class coefficients tuned for the dominant-feature (cutout) experiment.
    pub const TUNED_EQ2_CUTOUT: SdConfig = SdConfig::eq2(0.0969, 1.83, 0.000698, 2.61);

    /// Per-class coefficients tuned for the radiograph experiment.
    pub const TUNED_EQ2_RADIOGRAPH: SdConfig = SdConfig::eq2(0.01, 0.0, 0.001, 1.0);

    pub fn is_active(&self) -> bool {
        !matches!(self, SdConfig::Off)
    }

    pub fn validate(&self) -> Result<()> {
        let lambdas: &[f64] = match self {
            SdConfig::Off => &[],
            SdConfig::Eq1 { lambda } => std::slice::from_ref(lambda),
            SdConfig::Eq2 {
                lambda_neg,
                lambda_pos,
                gamma_neg,
                gamma_pos,
            } => {
                if !gamma_neg.is_finite() || !gamma_pos.is_finite() {
                    return Err(Error::Config("gamma values must be finite".into()));
                }
                return [*lambda_neg, *lambda_pos]
                    .iter()
                    .try_for_each(|&l| check_lambda(l));
            }
        };
        lambdas.iter().try_for_each(|&l| check_lambda(l))
    }

    pub fn label(&self) -> String {
        match self {
            SdConfig::Off => "off".to_string(),
            SdConfig::Eq1 { lambda } => format!("eq1(lambda={lambda})"),
            SdConfig::Eq2 {
                lambda_neg,
                gamma_neg,
                lambda_pos,
                gamma_pos,
            } => format!(
                "eq2(lambda_neg={lambda_neg},gamma_neg={gamma_neg},lambda_pos={lambda_pos},gamma_pos={gamma_pos})"
            ),
        }
    }
}

fn check_lambda(l: f64) -> Result<()> {
    if !(l.is_finite() && l >= 0.0) {
        return Err(Error::Config(format!(
            "spectral decoupling lambda must be finite and >= 0, got {l}"
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LrSchedule {
    #[default]
    Cosine,
    Constant,
}

impl LrSchedule {
    /// Learning rate at step `t` of `total` steps.
    pub fn rate(self, base_lr: f64, t: usize, total: usize) -> f64 {
        match self {
            LrSchedule::Constant => base_lr,
            LrSchedule::Cosine => {
                let frac = if total == 0 { 0.0 } else { t as f64 / total as f64 };
                base_lr * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub base_lr: f64,
    pub batch_size: usize,
    pub weight_decay: f64,
    pub seed: u64,
    pub lr_schedule: LrSchedule,
    /// Random shifted crops (reflect padding) and flips for image datasets.
    pub augment: bool,
}

impl Default for TrainConfig {
    /// Desk-scale defaults: plain SGD at a learning rate that converges in a
    /// few dozen epochs on 32×32 inputs.
    fn default() -> Self {
        Self {
            epochs: 30,
            base_lr: 0.05,
            batch_size: 32,
            weight_decay: 0.0,
            seed: 0,
            lr_schedule: LrSchedule::Cosine,
            augment: false,
        }
    }
}

impl TrainConfig {
    /// Weight decay used whenever spectral decoupling is off.
    pub const DEFAULT_WEIGHT_DECAY: f64 = 1e-4;

    /// Batch-size-scaled learning rate rule `0.005 · batch / 512`.
    pub fn scaled_lr(batch_size: usize) -> f64 {
        0.005 * batch_size as f64 / 512.0
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_augment(mut self, augment: bool) -> Self {
        self.augment = augment;
        self
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }

    /// Checks the config on its own and against the penalty it will be used with.
    pub fn validate(&self, sd: &SdConfig) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::Config("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.base_lr.is_finite() && self.base_lr > 0.0) {
            return Err(Error::Config(format!(
                "base_lr must be positive, got {}",
                self.base_lr
            )));
        }
        if !(self.weight_decay.is_finite() && self.weight_decay >= 0.0) {
            return Err(Error::Config(format!(
                "weight_decay must be >= 0, got {}",
                self.weight_decay
            )));
        }
        if sd.is_active() && self.weight_decay != 0.0 {
            return Err(Error::Config(
                "weight decay must be 0 when spectral decoupling is active".into(),
            ));
        }
        sd.validate()
    }
}
