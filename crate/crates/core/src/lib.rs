//! Region-level multi-label zero-shot classification.
//!
//! Region features of an image are enriched by a bi-level attention head
//! (self-attention across regions plus a gate driven by the global scene
//! feature), classified region by region against class attribute
//! embeddings, and pooled per class into image-level scores. Swapping the
//! attribute matrix moves between seen, unseen and joint label spaces
//! without touching the learned weights.

mod binio;
pub mod data;
pub mod error;
pub mod experiment;
pub mod export;
pub mod gradcheck;
pub mod metrics;
pub mod model;
pub mod ops;
pub mod tensor;
pub mod train;
pub mod verify;

pub use error::{Error, Result};
pub use model::{BiamParams, ModelConfig, ResponseMaps};
pub use ops::Mode;
pub use tensor::{Real, Tensor};

#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../README.md")]
    mod readme {}
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/tensors.md")]
    mod tensors {}
    #[doc = include_str!("../../../book/src/head.md")]
    mod head {}
    #[doc = include_str!("../../../book/src/training.md")]
    mod training {}
    #[doc = include_str!("../../../book/src/metrics.md")]
    mod metrics {}
    #[doc = include_str!("../../../book/src/formats.md")]
    mod formats {}
    #[doc = include_str!("../../../book/src/synthetic.md")]
    mod synthetic {}
    #[doc = include_str!("../../../book/src/cli.md")]
    mod cli {}
}
