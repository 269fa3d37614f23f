use crate::error::{Error, Result};

/// Network hyperparameters.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    /// Base feature channels `C`.
    pub channels: usize,
    /// Number of stacked fusion modules.
    pub eift_modules: usize,
    pub heads: usize,
    /// Transformer patch side on the pooled grid.
    pub patch: usize,
    /// Side of the pooled grid fed to the transformer.
    pub pooled: usize,
    /// Input frames per clip, which is also the number of temporal voxel bins.
    pub frames: usize,
    /// When false the guidance mask is dropped and both enhancement branches
    /// see the unmasked image features.
    pub event_guidance: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            channels: 16,
            eift_modules: 2,
            heads: 4,
            patch: 8,
            pooled: 32,
            frames: 5,
            event_guidance: true,
        }
    }
}

impl ModelConfig {
    /// Voxel channels `2 * frames * 3`.
    pub fn voxel_channels(&self) -> usize {
        2 * self.frames * 3
    }

    /// Number of transformer patches on the pooled grid.
    pub fn patches(&self) -> usize {
        let side = self.pooled / self.patch;
        side * side
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels == 0 || self.frames == 0 || self.heads == 0 || self.patch == 0 {
            return Err(Error::pre("model sizes must be positive"));
        }
        if !self.pooled.is_multiple_of(self.patch) {
            return Err(Error::pre(format!(
                "pooled grid {} is not divisible by patch {}",
                self.pooled, self.patch
            )));
        }
        if !(2 * self.channels).is_multiple_of(self.heads) {
            return Err(Error::pre(format!(
                "embedding width {} is not divisible by {} heads",
                2 * self.channels,
                self.heads
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_patch_arithmetic() {
        let c = ModelConfig::default();
        c.validate().unwrap();
        assert_eq!(c.patches(), 16);
        assert_eq!(c.patch * c.patch, 64);
        assert_eq!(c.voxel_channels(), 30);
    }

    #[test]
    fn rejects_bad_divisibility() {
        let c = ModelConfig {
            patch: 5,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
        let c = ModelConfig {
            heads: 3,
            ..ModelConfig::default()
        };
        assert!(c.validate().is_err());
    }
}
