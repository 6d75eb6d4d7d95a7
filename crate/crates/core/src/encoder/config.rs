use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub height: usize,
    pub width: usize,
    pub patch_size: usize,
    /// Token dimension D.
    pub dim: usize,
    pub n_blocks: usize,
    pub n_heads: usize,
    /// Output embedding dimension C.
    pub out_dim: usize,
    /// Prefix tokens per sensor (L); 0 disables sensor tokens.
    pub tokens_per_sensor: usize,
    /// Number of sensors (K).
    pub num_sensors: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self {
            height: 32,
            width: 32,
            patch_size: 8,
            dim: 64,
            n_blocks: 2,
            n_heads: 4,
            out_dim: 32,
            tokens_per_sensor: 5,
            num_sensors: 3,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        let p = self.patch_size;
        if p == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("image and patch sizes must be positive".into()));
        }
        if self.height % p != 0 || self.width % p != 0 {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible by patch size {p}",
                self.height, self.width
            )));
        }
        if self.n_heads == 0 || self.dim == 0 || self.dim % self.n_heads != 0 {
            return Err(Error::Config(format!(
                "token dimension {} is not divisible by {} heads",
                self.dim, self.n_heads
            )));
        }
        if self.out_dim == 0 || self.num_sensors == 0 {
            return Err(Error::Config("out_dim and num_sensors must be positive".into()));
        }
        Ok(())
    }

    pub fn num_patches(&self) -> usize {
        (self.height / self.patch_size) * (self.width / self.patch_size)
    }

    pub fn patch_len(&self) -> usize {
        self.patch_size * self.patch_size * 3
    }

    pub fn seq_len(&self) -> usize {
        self.tokens_per_sensor + self.num_patches()
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.n_heads
    }

    pub fn hidden_dim(&self) -> usize {
        4 * self.dim
    }

    /// Same encoder with sensor tokens switched off.
    pub fn without_sensor_tokens(&self) -> Self {
        Self {
            tokens_per_sensor: 0,
            ..self.clone()
        }
    }
}
