//! The bi-level attention head and region-level classifier.

pub mod checkpoint;
pub mod config;
pub mod head;
pub mod params;

pub use config::ModelConfig;
pub use head::{
    backward_batch, biam_forward, classify_regions, forward_batch, latent_forward, predict,
    rcb_forward, scb_forward, BatchForward, ForwardCache, ImageCache, NormUpdate, ResponseMaps,
};
pub use params::{BiamParams, Conv3, Pointwise};
