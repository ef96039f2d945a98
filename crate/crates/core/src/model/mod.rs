//! The SGEN generator, the fully convolutional discriminator, their
//! parameter naming, and checkpoints.

mod checkpoint;
mod discriminator;
mod generator;
mod params;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint, CHECKPOINT_MAGIC,
    CHECKPOINT_VERSION,
};
pub use discriminator::Discriminator;
pub use generator::{Generator, GeneratorTrace, MergeSite};
pub use params::{BoundParams, LayerKind, LayerSpec, ParamStore};

use crate::ensemble::MergeMode;
use crate::error::{Error, Result};
use crate::losses::GanLoss;

/// Architecture and training hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct SgenConfig {
    /// Number of base-encoder/decoder levels.
    pub n_levels: usize,
    /// Width of the first encoder trunk feature; level `k` has `base·2^(k-1)`.
    pub base_channels: usize,
    /// Width of every base-encoder/decoder feature and merge site.
    pub bottleneck_channels: usize,
    pub merge_mode: MergeMode,
    pub lrelu_slope: f64,
    /// Adversarial objective; `None` trains with MSE only.
    pub gan_loss: Option<GanLoss>,
    pub lambda_mse: f64,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Width of the first discriminator layer; doubles at each of 4 layers.
    pub disc_channels: usize,
}

impl Default for SgenConfig {
    fn default() -> Self {
        SgenConfig {
            n_levels: 3,
            base_channels: 32,
            bottleneck_channels: 64,
            merge_mode: MergeMode::Sgu,
            lrelu_slope: 0.2,
            gan_loss: Some(GanLoss::Minimax),
            lambda_mse: 0.1,
            learning_rate: 0.0002,
            batch_size: 64,
            disc_channels: 32,
        }
    }
}

impl SgenConfig {
    /// Small configuration for tests and smoke runs.
    pub fn tiny(n_levels: usize, width: usize, merge_mode: MergeMode) -> Self {
        SgenConfig {
            n_levels,
            base_channels: width,
            bottleneck_channels: width,
            merge_mode,
            disc_channels: width,
            ..Self::default()
        }
    }

    /// Scaled-down default: trunk width `width`, merge width `2 · width`,
    /// keeping the default 1:2 ratio between the two.
    pub fn with_width(n_levels: usize, width: usize, merge_mode: MergeMode) -> Self {
        SgenConfig {
            bottleneck_channels: 2 * width,
            ..Self::tiny(n_levels, width, merge_mode)
        }
    }

    /// Spatial dimensions must be multiples of `2^(N+1)`.
    pub fn divisor(&self) -> usize {
        1 << (self.n_levels + 1)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(2..=6).contains(&self.n_levels) {
            return bad(format!("n_levels must be in 2..=6, got {}", self.n_levels));
        }
        if self.base_channels == 0 || self.bottleneck_channels == 0 || self.disc_channels == 0 {
            return bad("channel widths must be positive".into());
        }
        if !(self.lrelu_slope > 0.0 && self.lrelu_slope < 1.0) {
            return bad(format!("lrelu_slope must be in (0, 1), got {}", self.lrelu_slope));
        }
        if !(self.lambda_mse >= 0.0) {
            return bad(format!("lambda_mse must be >= 0, got {}", self.lambda_mse));
        }
        if !(self.learning_rate >= 0.0) {
            return bad(format!("learning_rate must be >= 0, got {}", self.learning_rate));
        }
        if self.batch_size == 0 {
            return bad("batch_size must be >= 1".into());
        }
        Ok(())
    }
}
