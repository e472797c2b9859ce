//! Feature stores, manifests, embeddings and the synthetic generator.

pub mod embeddings;
pub mod manifest;
pub mod store;
pub mod synthetic;

use std::path::{Path, PathBuf};

pub use embeddings::{load_embeddings, AttributeMatrix, EmbeddingTable};
pub use manifest::{DatasetManifest, LabelSpace, Split};
pub use store::{read_feature_store, write_feature_store, FeatureRecord, FeatureStore, StoreGeometry};
pub use synthetic::{generate_synthetic, Patch, SyntheticData, SyntheticSpec};

use crate::error::Result;
use crate::train::LabelSet;

/// A manifest together with the store and embedding table it references.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub store: FeatureStore,
    pub embeddings: EmbeddingTable,
}

/// An image and its labels in some label space.
#[derive(Debug, Clone)]
pub struct LabeledImage<'a> {
    pub record: &'a FeatureRecord,
    pub labels: LabelSet,
}

impl Dataset {
    pub fn new(manifest: DatasetManifest, store: FeatureStore, embeddings: EmbeddingTable) -> Result<Self> {
        manifest.validate()?;
        manifest.check_store(&store)?;
        Ok(Self {
            manifest,
            store,
            embeddings,
        })
    }

    pub fn load(manifest_path: &Path) -> Result<Self> {
        let manifest = DatasetManifest::load(manifest_path)?;
        let store = read_feature_store(&DatasetManifest::resolve(manifest_path, &manifest.features))?;
        let embeddings = EmbeddingTable::read(&DatasetManifest::resolve(manifest_path, &manifest.embeddings))?;
        Self::new(manifest, store, embeddings)
    }

    /// Paths of the store and embedding table for a manifest at `manifest_path`.
    pub fn paths(&self, manifest_path: &Path) -> (PathBuf, PathBuf) {
        (
            DatasetManifest::resolve(manifest_path, &self.manifest.features),
            DatasetManifest::resolve(manifest_path, &self.manifest.embeddings),
        )
    }

    pub fn attributes(&self, space: LabelSpace) -> Result<AttributeMatrix> {
        self.embeddings.select(&self.manifest.class_names(space))
    }

    /// Images of `split` in id order.
    pub fn images(&self, split: Split, space: LabelSpace) -> Result<Vec<LabeledImage<'_>>> {
        self.manifest
            .ids(split)
            .into_iter()
            .map(|id| {
                Ok(LabeledImage {
                    record: self.store.get(id).expect("checked against store"),
                    labels: self.manifest.label_set(id, space)?,
                })
            })
            .collect()
    }
}

impl From<SyntheticData> for Dataset {
    fn from(d: SyntheticData) -> Self {
        Self {
            manifest: d.manifest,
            store: d.store,
            embeddings: d.embeddings,
        }
    }
}
