//! Training configuration, serializable as TOML.

use serde::{Deserialize, Serialize};
use warpseg_dgw::{SamplingMode, WarpParams};

use crate::data::Augment;
use crate::error::{Result, TrainError};
use crate::losses::LossConfig;
use crate::models::{DiscriminatorConfig, StudentConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Mode {
    Supervised,
    MeanTeacher,
    DualStudent,
    Ads,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Supervised => "supervised",
            Mode::MeanTeacher => "mean-teacher",
            Mode::DualStudent => "dual-student",
            Mode::Ads => "ads",
        }
    }

    pub fn students(self) -> usize {
        match self {
            Mode::DualStudent | Mode::Ads => 2,
            _ => 1,
        }
    }

    pub fn uses_unlabeled(self) -> bool {
        self != Mode::Supervised
    }
}

impl std::str::FromStr for Mode {
    type Err = TrainError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "supervised" => Ok(Mode::Supervised),
            "mean-teacher" => Ok(Mode::MeanTeacher),
            "dual-student" => Ok(Mode::DualStudent),
            "ads" => Ok(Mode::Ads),
            other => Err(TrainError::Config(format!(
                "unknown mode {other:?} (expected supervised, mean-teacher, dual-student or ads)"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WarpConfig {
    pub n: usize,
    pub sigma_s: f64,
    pub sigma_d: f64,
    pub sampling: String,
}

impl Default for WarpConfig {
    fn default() -> Self {
        let p = WarpParams::default();
        WarpConfig {
            n: p.n,
            sigma_s: p.sigma_s,
            sigma_d: p.sigma_d,
            sampling: p.mode.name().to_string(),
        }
    }
}

impl WarpConfig {
    pub fn params(&self) -> Result<WarpParams> {
        let mode: SamplingMode = self.sampling.parse()?;
        Ok(WarpParams {
            n: self.n,
            sigma_s: self.sigma_s,
            sigma_d: self.sigma_d,
            mode,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SgdConfig {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub power: f64,
}

impl Default for SgdConfig {
    fn default() -> Self {
        SgdConfig {
            lr: 2.5e-4,
            momentum: 0.9,
            weight_decay: 5e-4,
            power: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub power: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            weight_decay: 0.0,
            power: 0.9,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    pub student_widths: [usize; 4],
    pub decoder_width: usize,
    pub discriminator_widths: [usize; 4],
    /// Discriminator block whose output feeds feature matching (1-based).
    pub feature_tap: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        let s = StudentConfig::default();
        let d = DiscriminatorConfig::default();
        ModelConfig {
            student_widths: s.widths,
            decoder_width: s.decoder_width,
            discriminator_widths: d.widths,
            feature_tap: d.tap,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub flip: bool,
    pub crop: bool,
    pub scale: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            flip: true,
            crop: true,
            scale: true,
        }
    }
}

impl AugmentConfig {
    pub fn flags(&self) -> Augment {
        Augment {
            flip: self.flip,
            crop: self.crop,
            scale: self.scale,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub mode: Mode,
    pub iterations: usize,
    pub labeled_batch: usize,
    pub unlabeled_batch: usize,
    pub labeled_fraction: f64,
    pub seed: u64,
    /// Evaluate every this many iterations (0 = only at the end).
    pub eval_interval: usize,
    pub ema_decay: f64,
    /// Iterations over which the unlabeled loss weights rise from 0 to their
    /// configured values along exp(−5(1−t)²); 0 applies them from the start.
    pub rampup: usize,
    /// Adversarial terms; defaults to on for `ads` only.
    pub adversarial: Option<bool>,
    /// Stabilization between students; defaults to on in two-student modes.
    pub stabilization: Option<bool>,
    pub losses: LossConfig,
    pub warp: WarpConfig,
    pub student_optimizer: SgdConfig,
    pub discriminator_optimizer: AdamConfig,
    pub model: ModelConfig,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            mode: Mode::Ads,
            iterations: 5000,
            labeled_batch: 8,
            unlabeled_batch: 8,
            labeled_fraction: 0.125,
            seed: 0,
            eval_interval: 1000,
            ema_decay: 0.99,
            rampup: 0,
            adversarial: None,
            stabilization: None,
            losses: LossConfig::default(),
            warp: WarpConfig::default(),
            student_optimizer: SgdConfig::default(),
            discriminator_optimizer: AdamConfig::default(),
            model: ModelConfig::default(),
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn adversarial_enabled(&self) -> bool {
        self.mode != Mode::Supervised && self.adversarial.unwrap_or(self.mode == Mode::Ads)
    }

    pub fn stabilization_enabled(&self) -> bool {
        self.mode.students() == 2 && self.stabilization.unwrap_or(true)
    }

    /// Loss weights after switching off the terms the mode does not use.
    pub fn effective_losses(&self) -> LossConfig {
        let mut l = self.losses;
        if !self.mode.uses_unlabeled() {
            l.lambda1 = 0.0;
        }
        if !self.stabilization_enabled() {
            l.lambda2 = 0.0;
        }
        if !self.adversarial_enabled() {
            l.lambda3 = 0.0;
        }
        l
    }

    /// Multiplier of the unlabeled loss weights at iteration `iter`.
    pub fn rampup_weight(&self, iter: usize) -> f64 {
        if iter >= self.rampup {
            return 1.0;
        }
        let t = 1.0 - iter as f64 / self.rampup as f64;
        (-5.0 * t * t).exp()
    }

    /// [`effective_losses`](Self::effective_losses) with λ1, λ2 and λ3 scaled
    /// by the ramp at `iter`.
    pub fn losses_at(&self, iter: usize) -> LossConfig {
        let mut l = self.effective_losses();
        let r = self.rampup_weight(iter);
        l.lambda1 *= r;
        l.lambda2 *= r;
        l.lambda3 *= r;
        l
    }

    pub fn student_config(&self, classes: usize) -> StudentConfig {
        StudentConfig {
            classes,
            widths: self.model.student_widths,
            decoder_width: self.model.decoder_width,
        }
    }

    pub fn discriminator_config(&self, classes: usize) -> DiscriminatorConfig {
        DiscriminatorConfig {
            classes,
            widths: self.model.discriminator_widths,
            tap: self.model.feature_tap,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.losses.validate()?;
        self.warp.params()?;
        if self.iterations == 0 {
            return Err(TrainError::Config("iterations must be positive".into()));
        }
        if self.labeled_batch == 0 || (self.mode.uses_unlabeled() && self.unlabeled_batch == 0) {
            return Err(TrainError::Config("batch sizes must be positive".into()));
        }
        if !(self.labeled_fraction > 0.0 && self.labeled_fraction <= 1.0) {
            return Err(TrainError::Config(format!(
                "labeled_fraction {} outside (0, 1]",
                self.labeled_fraction
            )));
        }
        if !(0.0..=1.0).contains(&self.ema_decay) {
            return Err(TrainError::Config(format!(
                "ema_decay {} outside [0, 1]",
                self.ema_decay
            )));
        }
        let s = &self.student_optimizer;
        let d = &self.discriminator_optimizer;
        for (name, v) in [
            ("student lr", s.lr),
            ("student momentum", s.momentum),
            ("student weight_decay", s.weight_decay),
            ("student power", s.power),
            ("discriminator lr", d.lr),
            ("discriminator weight_decay", d.weight_decay),
            ("discriminator power", d.power),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(TrainError::Config(format!("{name} must be finite and ≥ 0, got {v}")));
            }
        }
        if !(0.0..1.0).contains(&d.beta1) || !(0.0..1.0).contains(&d.beta2) {
            return Err(TrainError::Config("Adam betas must lie in [0, 1)".into()));
        }
        if !(1..=4).contains(&self.model.feature_tap) {
            return Err(TrainError::Config("feature_tap must be 1..=4".into()));
        }
        Ok(())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| TrainError::Config(e.to_string()))
    }
}
