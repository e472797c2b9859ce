//! Dataset manifests (JSON).
//!
//! ```json
//! {
//!   "seen_classes": ["seen00", "seen01"],
//!   "unseen_classes": ["unseen00"],
//!   "labels": { "img00000": [0, 2] },
//!   "splits": { "img00000": "test" },
//!   "features": "features.brf",
//!   "embeddings": "embeddings.txt"
//! }
//! ```
//!
//! Label indices point into `seen_classes` followed by `unseen_classes`.
//! Relative paths are resolved against the manifest's directory.

use std::collections::{BTreeMap, HashSet};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::store::FeatureStore;
use crate::binio;
use crate::error::{Error, Result};
use crate::train::LabelSet;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Which classes form the label space.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelSpace {
    Seen,
    Unseen,
    /// Seen followed by unseen.
    All,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub seen_classes: Vec<String>,
    pub unseen_classes: Vec<String>,
    pub labels: BTreeMap<String, Vec<usize>>,
    pub splits: BTreeMap<String, Split>,
    pub features: PathBuf,
    pub embeddings: PathBuf,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        let mut names = HashSet::new();
        for n in self.seen_classes.iter().chain(&self.unseen_classes) {
            if !names.insert(n) {
                return Err(Error::Config(format!("class {n:?} listed twice")));
            }
        }
        let total = self.class_count();
        for (id, labels) in &self.labels {
            if let Some(bad) = labels.iter().find(|&&c| c >= total) {
                return Err(Error::Dataset {
                    image_id: id.clone(),
                    message: format!("label {bad} out of range for {total} classes"),
                });
            }
            if !self.splits.contains_key(id) {
                return Err(Error::Dataset {
                    image_id: id.clone(),
                    message: "labeled image has no split".into(),
                });
            }
        }
        if let Some(id) = self.splits.keys().find(|id| !self.labels.contains_key(*id)) {
            return Err(Error::Dataset {
                image_id: id.clone(),
                message: "image has a split but no label entry".into(),
            });
        }
        Ok(())
    }

    /// Every labeled image must be present in the store.
    pub fn check_store(&self, store: &FeatureStore) -> Result<()> {
        match self.labels.keys().find(|id| store.get(id).is_none()) {
            Some(id) => Err(Error::Dataset {
                image_id: id.clone(),
                message: "not found in feature store".into(),
            }),
            None => Ok(()),
        }
    }

    pub fn class_count(&self) -> usize {
        self.seen_classes.len() + self.unseen_classes.len()
    }

    pub fn class_names(&self, space: LabelSpace) -> Vec<String> {
        match space {
            LabelSpace::Seen => self.seen_classes.clone(),
            LabelSpace::Unseen => self.unseen_classes.clone(),
            LabelSpace::All => {
                let mut v = self.seen_classes.clone();
                v.extend(self.unseen_classes.iter().cloned());
                v
            }
        }
    }

    /// Labels of `id` re-indexed into `space`; classes outside it are
    /// dropped.
    pub fn label_set(&self, id: &str, space: LabelSpace) -> Result<LabelSet> {
        let raw = self.labels.get(id).ok_or_else(|| Error::Dataset {
            image_id: id.to_string(),
            message: "no label entry".into(),
        })?;
        let s = self.seen_classes.len();
        let (positives, classes): (Vec<usize>, usize) = match space {
            LabelSpace::Seen => (raw.iter().copied().filter(|&c| c < s).collect(), s),
            LabelSpace::Unseen => (
                raw.iter().filter(|&&c| c >= s).map(|&c| c - s).collect(),
                self.unseen_classes.len(),
            ),
            LabelSpace::All => (raw.clone(), self.class_count()),
        };
        LabelSet::new(positives, classes)
    }

    /// Image ids in `split`, sorted.
    pub fn ids(&self, split: Split) -> Vec<&str> {
        self.splits
            .iter()
            .filter(|(_, &s)| s == split)
            .map(|(id, _)| id.as_str())
            .collect()
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("manifest serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str, path: &Path) -> Result<Self> {
        let m: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = binio::read_file(path)?;
        let text = String::from_utf8_lossy(&bytes);
        Self::from_json(&text, path)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        binio::write_file(path, self.to_json().as_bytes())
    }

    /// `file` relative to the directory of the manifest at `manifest_path`.
    pub fn resolve(manifest_path: &Path, file: &Path) -> PathBuf {
        if file.is_absolute() {
            file.to_path_buf()
        } else {
            manifest_path.parent().unwrap_or(Path::new("")).join(file)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn manifest() -> DatasetManifest {
        DatasetManifest {
            seen_classes: vec!["a".into(), "b".into()],
            unseen_classes: vec!["z".into()],
            labels: [("i0".to_string(), vec![0, 2]), ("i1".to_string(), vec![1])].into(),
            splits: [("i0".to_string(), Split::Test), ("i1".to_string(), Split::Train)].into(),
            features: "f.brf".into(),
            embeddings: "e.txt".into(),
        }
    }

    #[test]
    fn json_round_trip() {
        let m = manifest();
        let text = m.to_json();
        let back = DatasetManifest::from_json(&text, Path::new("m.json")).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.to_json(), text);
    }

    #[test]
    fn label_spaces() {
        let m = manifest();
        assert_eq!(m.label_set("i0", LabelSpace::Seen).unwrap().positives(), &[0]);
        assert_eq!(m.label_set("i0", LabelSpace::Unseen).unwrap().positives(), &[0]);
        assert_eq!(m.label_set("i0", LabelSpace::All).unwrap().positives(), &[0, 2]);
        assert_eq!(m.label_set("i1", LabelSpace::Unseen).unwrap().count(), 0);
        assert_eq!(m.class_names(LabelSpace::All), vec!["a", "b", "z"]);
        assert_eq!(m.ids(Split::Train), vec!["i1"]);
    }

    #[test]
    fn invalid_manifests() {
        let mut m = manifest();
        m.unseen_classes.push("a".into());
        assert!(m.validate().is_err());
        let mut m = manifest();
        m.labels.insert("i2".into(), vec![3]);
        assert!(m.validate().is_err());
        let mut m = manifest();
        m.splits.remove("i1");
        assert!(m.validate().is_err());
    }

    #[test]
    fn resolve_relative_to_manifest() {
        let p = DatasetManifest::resolve(Path::new("/d/m.json"), Path::new("f.brf"));
        assert_eq!(p, PathBuf::from("/d/f.brf"));
        let p = DatasetManifest::resolve(Path::new("m.json"), Path::new("f.brf"));
        assert_eq!(p, PathBuf::from("f.brf"));
    }
}
