use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::dste::EncoderConfig;
use crate::error::{Error, Result};
use crate::mgfd::LossWeights;
use crate::skelio::AugSpec;

/// How the positive copies of a sample are produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Pairing {
    /// Independently augmented copies of one record.
    AugmentOnly,
    /// Copies taken from distinct views of the same sample id, each then
    /// augmented independently.
    MultiView,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub pairing: Pairing,
    /// Positive copies per sample, `K`.
    pub copies: usize,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    /// First epoch trained at `lr / 10`.
    pub decay_epoch: usize,
    pub weight_decay: f64,
    pub seed: u64,
    /// Projector output width `C_p`.
    pub proj_dim: usize,
    pub bn_momentum: f64,
    /// Checkpoint written at the end and every `checkpoint_every` epochs
    /// (0: only at the end).
    pub checkpoint: Option<PathBuf>,
    pub checkpoint_every: usize,
    /// JSONL loss log, one line per step.
    pub log: Option<PathBuf>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            pairing: Pairing::MultiView,
            copies: 2,
            batch_size: 32,
            epochs: 30,
            lr: 5e-4,
            decay_epoch: 25,
            weight_decay: 1e-5,
            seed: 0,
            proj_dim: 128,
            bn_momentum: 0.1,
            checkpoint: None,
            checkpoint_every: 0,
            log: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Dataset manifest; required by commands that read data.
    pub manifest: Option<PathBuf>,
    pub split: String,
    pub aug: AugSpec,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self { manifest: None, split: "train".into(), aug: AugSpec::standard() }
    }
}

/// Complete pretraining configuration, one section per concern.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub encoder: EncoderConfig,
    pub loss: LossWeights,
    pub train: TrainConfig,
    pub data: DataConfig,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl PretrainConfig {
    /// CPU-scale profile matched to the synthetic data generator's skeleton
    /// (10 joints, one person).
    pub fn desk() -> Self {
        Self {
            encoder: EncoderConfig { joints: 10, persons: 1, frames: 32, ..EncoderConfig::desk() },
            loss: LossWeights::default(),
            train: TrainConfig::default(),
            data: DataConfig::default(),
        }
    }

    /// Paper-scale profile: NTU skeleton, large encoder, batch 324.
    pub fn paper() -> Self {
        Self {
            encoder: EncoderConfig { frames: 64, ..EncoderConfig::large() },
            loss: LossWeights::default(),
            train: TrainConfig { batch_size: 324, epochs: 400, decay_epoch: 350, proj_dim: 2048, ..TrainConfig::default() },
            data: DataConfig::default(),
        }
    }

    /// Gradient-check profile (`C_e = C_r = 8`, `T = 6`, `V = 5`, `M = 1`).
    pub fn tiny() -> Self {
        Self {
            encoder: EncoderConfig::tiny(),
            loss: LossWeights::default(),
            train: TrainConfig { batch_size: 4, epochs: 1, decay_epoch: 1, proj_dim: 8, ..TrainConfig::default() },
            data: DataConfig::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.validate()?;
        self.loss.validate()?;
        self.data.aug.validate()?;
        let t = &self.train;
        let fail = |m: String| Err(Error::Config(m));
        if t.copies < 2 {
            return fail(format!("train.copies must be at least 2, got {}", t.copies));
        }
        if t.batch_size < 2 {
            return fail(format!("train.batch_size must be at least 2, got {}", t.batch_size));
        }
        if !(t.lr >= 0.0 && t.lr.is_finite()) || !(t.weight_decay >= 0.0 && t.weight_decay.is_finite()) {
            return fail("train.lr and train.weight_decay must be finite and nonnegative".into());
        }
        if !(0.0..=1.0).contains(&t.bn_momentum) {
            return fail("train.bn_momentum must lie in [0, 1]".into());
        }
        if t.proj_dim == 0 {
            return fail("train.proj_dim must be positive".into());
        }
        Ok(())
    }

    /// Learning rate used during `epoch` (0-based): a single step decay.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        if epoch < self.train.decay_epoch {
            self.train.lr
        } else {
            self.train.lr / 10.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn profiles_validate_and_round_trip_through_toml() {
        for c in [PretrainConfig::desk(), PretrainConfig::paper(), PretrainConfig::tiny()] {
            c.validate().unwrap();
            let text = toml::to_string(&c).unwrap();
            let back: PretrainConfig = toml::from_str(&text).unwrap();
            assert_eq!(back, c);
        }
    }

    #[test]
    fn schedule_steps_down_once() {
        let c = PretrainConfig { train: TrainConfig { lr: 5e-4, decay_epoch: 3, epochs: 5, ..TrainConfig::default() }, ..PretrainConfig::desk() };
        assert_eq!(c.lr_at(2), 5e-4);
        assert_eq!(c.lr_at(3), 5e-5);
        assert_eq!(c.lr_at(4), 5e-5);
    }

    #[test]
    fn rejects_bad_training_settings() {
        let base = PretrainConfig::desk();
        let bad = |f: &dyn Fn(&mut TrainConfig)| {
            let mut c = base.clone();
            f(&mut c.train);
            c.validate().is_err()
        };
        assert!(bad(&|t| t.copies = 1));
        assert!(bad(&|t| t.batch_size = 1));
        assert!(bad(&|t| t.lr = -1.0));
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<PretrainConfig>("[train]\nbogus = 1\n").is_err());
        let c: PretrainConfig = toml::from_str("[train]\nepochs = 3\ndecay_epoch = 2\n").unwrap();
        assert_eq!(c.train.epochs, 3);
        assert_eq!(c.encoder, PretrainConfig::desk().encoder);
    }
}
