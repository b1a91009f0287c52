use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::augment::AugmentationProfile;
use crate::error::{Error, Result};
use crate::ssl::HeadConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Simclr,
    Byol,
    Supcon,
    Supervised,
}

impl Method {
    pub const PRETRAINING: [Method; 3] = [Method::Simclr, Method::Byol, Method::Supcon];

    pub fn name(self) -> &'static str {
        match self {
            Method::Simclr => "simclr",
            Method::Byol => "byol",
            Method::Supcon => "supcon",
            Method::Supervised => "supervised",
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

impl std::str::FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "simclr" => Ok(Method::Simclr),
            "byol" => Ok(Method::Byol),
            "supcon" => Ok(Method::Supcon),
            "supervised" => Ok(Method::Supervised),
            other => Err(Error::InvalidConfig(format!("unknown method `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    Adam,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// Cosine annealing to zero over the whole run.
    Cosine,
}

/// How the moving-average target starts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TargetInit {
    /// Exact copy of the online network.
    Copy,
    /// Separately initialised weights.
    Independent,
}

/// Encoder shape and input resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub input_size: usize,
    /// Channels of the first residual stage; the embedding is 8x this.
    pub base_width: usize,
}

impl ModelConfig {
    pub const STANDARD: ModelConfig = ModelConfig {
        input_size: 224,
        base_width: 64,
    };

    pub fn embedding_width(&self) -> usize {
        8 * self.base_width
    }
}

/// Objective-specific settings of self-supervised pretraining.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SslConfig {
    pub temperature: f64,
    pub supcon_temperature: f64,
    pub tau_base: f64,
    pub projection: HeadConfig,
    pub predictor: HeadConfig,
    pub target_init: TargetInit,
}

impl Default for SslConfig {
    fn default() -> Self {
        SslConfig {
            temperature: 0.5,
            supcon_temperature: 0.1,
            tau_base: 0.9995,
            projection: HeadConfig::SIMCLR,
            predictor: HeadConfig::BYOL,
            target_init: TargetInit::Copy,
        }
    }
}

/// One training phase: pretraining, linear evaluation or the supervised
/// baseline. Field names double as run-config keys.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub optimizer: Optimizer,
    pub weight_decay: f64,
    pub learning_rate: f64,
    pub schedule: Schedule,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub augmentation: AugmentationProfile,
    pub model: ModelConfig,
    #[serde(default)]
    pub ssl: SslConfig,
    /// Linear evaluation: augmented copies encoded per labelled image.
    #[serde(default = "default_copies")]
    pub embedding_copies: usize,
    /// Stop when validation accuracy has not improved for this many epochs.
    #[serde(default)]
    pub early_stopping_patience: Option<usize>,
    /// Lower bound on optimisation steps, for very small labelled subsets.
    #[serde(default)]
    pub min_steps: usize,
    /// Save a checkpoint every this many epochs (and at the end).
    #[serde(default)]
    pub checkpoint_every: Option<usize>,
    /// Refuse batches whose activation estimate exceeds this many bytes.
    #[serde(default)]
    pub memory_limit_bytes: Option<u64>,
}

fn default_copies() -> usize {
    1
}

impl TrainConfig {
    /// Full-scale pretraining settings for `method`.
    pub fn pretrain(method: Method) -> TrainConfig {
        TrainConfig {
            optimizer: Optimizer::Adam,
            weight_decay: 1e-4,
            learning_rate: 3e-4,
            schedule: Schedule::Cosine,
            epochs: 1000,
            batch_size: if method == Method::Byol { 896 } else { 1024 },
            seed: 0,
            augmentation: AugmentationProfile::PRETRAIN,
            model: ModelConfig::STANDARD,
            ssl: SslConfig::default(),
            embedding_copies: 1,
            early_stopping_patience: None,
            min_steps: 0,
            checkpoint_every: Some(100),
            memory_limit_bytes: None,
        }
    }

    /// Linear-probe settings: no weight decay, learning rate 5e-2, 90 epochs
    /// with early stopping.
    pub fn linear_eval() -> TrainConfig {
        TrainConfig {
            weight_decay: 0.0,
            learning_rate: 5e-2,
            epochs: 90,
            batch_size: 256,
            augmentation: AugmentationProfile::TRAIN,
            embedding_copies: 4,
            early_stopping_patience: Some(20),
            checkpoint_every: None,
            ..TrainConfig::pretrain(Method::Simclr)
        }
    }

    /// End-to-end supervised training from random initialisation.
    pub fn baseline() -> TrainConfig {
        TrainConfig {
            weight_decay: 1e-4,
            learning_rate: 3e-4,
            epochs: 90,
            batch_size: 256,
            augmentation: AugmentationProfile::TRAIN,
            early_stopping_patience: None,
            checkpoint_every: None,
            ..TrainConfig::pretrain(Method::Supervised)
        }
    }

    /// Desk-scale overlay for the 64x64 synthetic corpus on a CPU.
    pub fn desk(mut self) -> TrainConfig {
        self.model = ModelConfig {
            input_size: 64,
            base_width: DESK_BASE_WIDTH,
        };
        self.batch_size = self.batch_size.min(256);
        self.checkpoint_every = None;
        self
    }

    /// Desk-scale pretraining schedule: the desk overlay plus a short,
    /// faster-annealed run and a lower EMA base for the few target updates.
    pub fn desk_pretrain(method: Method) -> TrainConfig {
        let mut config = TrainConfig::pretrain(method).desk();
        config.epochs = DESK_PRETRAIN_EPOCHS;
        config.learning_rate = DESK_PRETRAIN_LR;
        if method == Method::Byol {
            // Without negatives BYOL needs many more updates to move away
            // from its initial features.
            config.epochs = DESK_BYOL_EPOCHS;
            config.batch_size = DESK_BYOL_BATCH;
            config.ssl.tau_base = DESK_TAU_BASE;
        }
        config
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.batch_size < 2 {
            return bad(format!("batch_size must be at least 2, got {}", self.batch_size));
        }
        if !(self.learning_rate > 0.0) || !(self.weight_decay >= 0.0) {
            return bad("learning_rate must be positive and weight_decay non-negative".into());
        }
        if self.model.input_size < 32 || self.model.base_width == 0 {
            return bad("model input must be at least 32 pixels with a positive base width".into());
        }
        if !(self.ssl.temperature > 0.0 && self.ssl.supcon_temperature > 0.0) || !(0.0..=1.0).contains(&self.ssl.tau_base) {
            return bad("temperatures must be positive and tau_base within [0, 1]".into());
        }
        if self.embedding_copies == 0 {
            return bad("embedding_copies must be positive".into());
        }
        self.augmentation.validate()
    }

    /// SHA-256 of the canonical JSON form.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serialises");
        hex(&Sha256::digest(json))
    }
}

/// Base width used by the desk overlay (embedding width 8x this).
pub const DESK_BASE_WIDTH: usize = 16;
pub const DESK_PRETRAIN_EPOCHS: usize = 20;
pub const DESK_PRETRAIN_LR: f64 = 1e-3;
pub const DESK_TAU_BASE: f64 = 0.99;
pub const DESK_BYOL_EPOCHS: usize = 40;
pub const DESK_BYOL_BATCH: usize = 64;

pub(crate) fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// `lr0 * (1 + cos(pi t / T)) / 2`, floored at zero.
pub fn cosine_lr(lr0: f64, step: u64, total: u64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let t = step.min(total) as f64 / total as f64;
    (lr0 * (1.0 + (std::f64::consts::PI * t).cos()) / 2.0).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(3e-4, 0, 1000), 3e-4);
        assert_eq!(cosine_lr(3e-4, 1000, 1000), 0.0);
        assert!((cosine_lr(3e-4, 500, 1000) - 1.5e-4).abs() < 1e-18);
    }

    #[test]
    fn full_scale_defaults() {
        let s = TrainConfig::pretrain(Method::Simclr);
        assert_eq!((s.weight_decay, s.learning_rate, s.epochs, s.batch_size), (1e-4, 3e-4, 1000, 1024));
        assert_eq!(TrainConfig::pretrain(Method::Byol).batch_size, 896);
        assert_eq!(s.ssl.temperature, 0.5);
        assert_eq!(s.ssl.tau_base, 0.9995);
        assert_eq!(s.model.embedding_width(), 512);
        let l = TrainConfig::linear_eval();
        assert_eq!((l.weight_decay, l.learning_rate, l.epochs), (0.0, 5e-2, 90));
        assert_eq!(l.augmentation, AugmentationProfile::TRAIN);
        for c in [s, l, TrainConfig::baseline()] {
            c.validate().unwrap();
        }
    }

    #[test]
    fn config_round_trips_and_hash_is_stable() {
        let c = TrainConfig::pretrain(Method::Supcon).desk();
        let json = serde_json::to_string(&c).unwrap();
        let back: TrainConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.hash(), c.hash());
        assert_ne!(c.hash(), TrainConfig::pretrain(Method::Supcon).hash());
    }
}
