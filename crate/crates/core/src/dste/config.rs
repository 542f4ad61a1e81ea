use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::skelio::Modality;

/// Shape and hyperparameters of the dense spatio-temporal encoder.
///
/// Only `alpha` is stored; the DSA weight is always `1 - alpha`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Input coordinate channels (`C_in`).
    pub coords: usize,
    /// Model input length `T`.
    pub frames: usize,
    /// Joints per person `V`.
    pub joints: usize,
    /// Person slots `M`.
    pub persons: usize,
    /// Embedding width `C_e`.
    pub embed_dim: usize,
    /// Representation width `C_r`.
    pub repr_dim: usize,
    pub layers: usize,
    pub heads: usize,
    /// Every `gap`-th row (0-based) takes the globally mixed features.
    pub gap: usize,
    /// Weight of the convolutional-attention branch.
    pub alpha: f64,
    pub kernel_size: usize,
    /// Causal temporal stream, for online prediction.
    pub causal: bool,
    /// Input modalities, each with its own embedding, fused by averaging.
    pub modalities: Vec<Modality>,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl EncoderConfig {
    /// Desk-scale profile used for CPU pretraining.
    pub fn desk() -> Self {
        Self {
            coords: 3,
            frames: 64,
            joints: 25,
            persons: 2,
            embed_dim: 64,
            repr_dim: 64,
            layers: 2,
            heads: 4,
            gap: 4,
            alpha: 0.5,
            kernel_size: 3,
            causal: false,
            modalities: vec![Modality::Joint],
        }
    }

    /// Large profile (`C_e = C_r = 1024`) for NTU-scale data.
    pub fn large() -> Self {
        Self { embed_dim: 1024, repr_dim: 1024, heads: 8, ..Self::desk() }
    }

    /// Medium profile (`C_e = C_r = 512`) for smaller datasets with longer clips.
    pub fn medium() -> Self {
        Self { embed_dim: 512, repr_dim: 512, heads: 8, ..Self::desk() }
    }

    /// Tiny profile used by gradient checks.
    pub fn tiny() -> Self {
        Self {
            coords: 3,
            frames: 6,
            joints: 5,
            persons: 1,
            embed_dim: 8,
            repr_dim: 8,
            layers: 2,
            heads: 2,
            gap: 4,
            alpha: 0.5,
            kernel_size: 3,
            causal: false,
            modalities: vec![Modality::Joint],
        }
    }

    pub fn beta(&self) -> f64 {
        1.0 - self.alpha
    }

    /// Spatial stream length `M·V`.
    pub fn spatial_len(&self) -> usize {
        self.persons * self.joints
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.frames == 0 || self.joints == 0 || self.persons == 0 {
            return fail("frames, joints and persons must be positive".into());
        }
        if !matches!(self.coords, 2 | 3) {
            return fail(format!("coords must be 2 or 3, got {}", self.coords));
        }
        if self.gap == 0 {
            return fail("gap must be at least 1".into());
        }
        if self.layers == 0 {
            return fail("layers must be at least 1".into());
        }
        if self.heads == 0 || !self.embed_dim.is_multiple_of(self.heads) || !self.repr_dim.is_multiple_of(self.heads) {
            return fail(format!("embed_dim {} and repr_dim {} must both be divisible by heads {}", self.embed_dim, self.repr_dim, self.heads));
        }
        if self.kernel_size == 0 {
            return fail("kernel_size must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.alpha) {
            return fail(format!("alpha must lie in [0, 1], got {}", self.alpha));
        }
        if self.modalities.is_empty() {
            return fail("at least one modality is required".into());
        }
        let mut seen = self.modalities.clone();
        seen.sort();
        seen.dedup();
        if seen.len() != self.modalities.len() {
            return fail("modalities must not repeat".into());
        }
        Ok(())
    }
}
