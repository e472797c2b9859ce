use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ops::TopKAggregate;

/// Geometry and hyper-parameters of the attention head.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub h: usize,
    pub w: usize,
    /// Region feature width.
    pub d_r: usize,
    /// Global feature width.
    pub d_g: usize,
    /// Attribute embedding width.
    pub d_a: usize,
    pub heads: usize,
    pub topk: usize,
    #[serde(default)]
    pub pool: TopKAggregate,
    pub seed: u64,
}

impl ModelConfig {
    /// 14×14 VGG conv5 grid, 4096-d fc7 global feature, 300-d word vectors,
    /// 8 heads, top-10 pooling.
    pub fn reference() -> Self {
        Self {
            h: 14,
            w: 14,
            d_r: 512,
            d_g: 4096,
            d_a: 300,
            heads: 8,
            topk: 10,
            pool: TopKAggregate::Mean,
            seed: 0,
        }
    }

    /// Matches the synthetic desk fixture: 7×7 grid, 32-d regions, 64-d
    /// scene vector, 16-d embeddings, 4 heads and top-16 pooling.
    pub fn desk() -> Self {
        Self {
            h: 7,
            w: 7,
            d_r: 32,
            d_g: 64,
            d_a: 16,
            heads: 4,
            topk: 16,
            pool: TopKAggregate::Mean,
            seed: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("h", self.h),
            ("w", self.w),
            ("d_r", self.d_r),
            ("d_g", self.d_g),
            ("d_a", self.d_a),
            ("heads", self.heads),
            ("topk", self.topk),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.d_r % self.heads != 0 {
            return Err(Error::Config(format!(
                "d_r = {} is not divisible by {} heads",
                self.d_r, self.heads
            )));
        }
        if self.topk > self.regions() {
            return Err(Error::Config(format!(
                "topk = {} exceeds the {} regions of a {}x{} grid",
                self.topk,
                self.regions(),
                self.h,
                self.w
            )));
        }
        Ok(())
    }

    pub fn regions(&self) -> usize {
        self.h * self.w
    }

    /// Per-head projection width.
    pub fn head_dim(&self) -> usize {
        self.d_r / self.heads
    }
}
