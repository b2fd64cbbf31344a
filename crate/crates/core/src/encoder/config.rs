use serde::{Deserialize, Serialize};

use crate::error::{I2pError, Result};

/// Architecture of the toy ViT. Defaults are desk scale: 32×32 images in
/// 4×4 patches (64 patch tokens plus CLS), 8 blocks of width 64.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub image_size: usize,
    pub patch_size: usize,
    pub depth: usize,
    pub width: usize,
    pub heads: usize,
    pub mlp_hidden: usize,
    pub seed: u64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            image_size: 32,
            patch_size: 4,
            depth: 8,
            width: 64,
            heads: 4,
            mlp_hidden: 256,
            seed: 0,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(I2pError::InvalidArgument(m));
        if self.image_size == 0 || self.patch_size == 0 || self.depth == 0 {
            return bad("image_size, patch_size and depth must be positive".into());
        }
        if self.width == 0 || self.heads == 0 || self.mlp_hidden == 0 {
            return bad("width, heads and mlp_hidden must be positive".into());
        }
        if !self.image_size.is_multiple_of(self.patch_size) {
            return bad(format!(
                "image_size {} not divisible by patch_size {}",
                self.image_size, self.patch_size
            ));
        }
        if !self.width.is_multiple_of(self.heads) {
            return bad(format!(
                "width {} not divisible by heads {}",
                self.width, self.heads
            ));
        }
        Ok(())
    }

    pub fn grid(&self) -> usize {
        self.image_size / self.patch_size
    }

    pub fn patches(&self) -> usize {
        self.grid() * self.grid()
    }

    /// Patch tokens plus the prepended CLS token.
    pub fn tokens(&self) -> usize {
        self.patches() + 1
    }

    pub fn patch_dim(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn head_dim(&self) -> usize {
        self.width / self.heads
    }

    pub fn pixels(&self) -> usize {
        self.image_size * self.image_size * 3
    }

    pub fn block_param_count(&self) -> usize {
        let d = self.width;
        let h = self.mlp_hidden;
        let norms = 2 * 2 * d;
        let attention = 4 * (d * d + d);
        let mlp = (h * d + h) + (d * h + d);
        norms + attention + mlp
    }

    pub fn param_count(&self) -> usize {
        let d = self.width;
        let embed = d * self.patch_dim() + d;
        embed + d + self.tokens() * d + self.depth * self.block_param_count()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn token_count_includes_cls() {
        let c = EncoderConfig::default();
        assert_eq!(c.tokens(), 65);
        assert_eq!(c.patch_dim(), 48);
    }

    #[test]
    fn divisibility_checked() {
        let c = EncoderConfig {
            patch_size: 5,
            ..Default::default()
        };
        assert!(c.validate().is_err());
        let c = EncoderConfig {
            heads: 3,
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }
}
