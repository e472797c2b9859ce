#![allow(dead_code)]

pub mod formats;

use biam::data::{generate_synthetic, Dataset, SyntheticData, SyntheticSpec};
use biam::{BiamParams, ModelConfig};

pub fn tiny_spec() -> SyntheticSpec {
    SyntheticSpec {
        images: 48,
        seen_classes: 4,
        unseen_classes: 2,
        h: 4,
        w: 4,
        d_r: 8,
        d_g: 6,
        d_a: 5,
        patch: 2,
        ..SyntheticSpec::desk()
    }
}

pub fn tiny_model(seed: u64) -> ModelConfig {
    ModelConfig {
        h: 4,
        w: 4,
        d_r: 8,
        d_g: 6,
        d_a: 5,
        heads: 2,
        topk: 4,
        seed,
        ..ModelConfig::desk()
    }
}

pub fn tiny_synthetic() -> SyntheticData {
    generate_synthetic(&tiny_spec()).unwrap()
}

pub fn tiny_dataset() -> Dataset {
    tiny_synthetic().into()
}

pub fn tiny_params(seed: u64) -> BiamParams {
    BiamParams::init(&tiny_model(seed)).unwrap()
}
