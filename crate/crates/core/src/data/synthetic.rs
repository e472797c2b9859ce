//! Synthetic datasets with planted class patterns.
//!
//! Every positive class of an image adds `strength · L a_c` to a randomly
//! placed `patch × patch` block of the region grid, where `a_c` is the class embedding
//! and `L` a fixed random lift to `d_r`. Unseen embeddings are normalized
//! mixtures of two seen ones, so a compatibility map learned on seen classes
//! carries over.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::embeddings::EmbeddingTable;
use super::manifest::{DatasetManifest, Split};
use super::store::{write_feature_store, FeatureRecord, FeatureStore, StoreGeometry};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const NOISE_STD: f64 = 0.1;
pub const FEATURES_FILE: &str = "features.brf";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const EMBEDDINGS_FILE: &str = "embeddings.txt";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub images: usize,
    pub seen_classes: usize,
    pub unseen_classes: usize,
    pub h: usize,
    pub w: usize,
    pub d_r: usize,
    pub d_g: usize,
    pub d_a: usize,
    pub strength: f64,
    /// Side of the square block a class pattern covers, clipped to the grid.
    pub patch: usize,
    pub label_rate: f64,
    /// Share of images tagged `test`; the rest are `train`.
    pub test_fraction: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self::desk()
    }
}

impl SyntheticSpec {
    /// 512 images on a 7×7 grid, 20 seen and 5 unseen classes, 4×4 patches.
    pub fn desk() -> Self {
        Self {
            images: 512,
            seen_classes: 20,
            unseen_classes: 5,
            h: 7,
            w: 7,
            d_r: 32,
            d_g: 64,
            d_a: 16,
            strength: 1.0,
            patch: 4,
            label_rate: 0.15,
            test_fraction: 0.25,
            seed: 7,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("images", self.images),
            ("seen_classes", self.seen_classes),
            ("h", self.h),
            ("w", self.w),
            ("d_r", self.d_r),
            ("d_g", self.d_g),
            ("d_a", self.d_a),
            ("patch", self.patch),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.unseen_classes > 0 && self.seen_classes < 2 {
            return Err(Error::Config("unseen classes need at least two seen classes".into()));
        }
        if !(self.strength >= 0.0 && self.strength.is_finite()) {
            return Err(Error::Config(format!("strength {} must be finite and ≥ 0", self.strength)));
        }
        if !(self.label_rate > 0.0 && self.label_rate < 1.0) {
            return Err(Error::Config(format!("label_rate {} outside (0, 1)", self.label_rate)));
        }
        if !(0.0..=1.0).contains(&self.test_fraction) {
            return Err(Error::Config(format!("test_fraction {} outside [0, 1]", self.test_fraction)));
        }
        Ok(())
    }

    pub fn geometry(&self) -> StoreGeometry {
        StoreGeometry {
            h: self.h,
            w: self.w,
            d_r: self.d_r,
            d_g: self.d_g,
        }
    }

    pub fn test_images(&self) -> usize {
        (self.images as f64 * self.test_fraction).round() as usize
    }
}

/// One planted pattern; `class` indexes seen followed by unseen classes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Patch {
    pub class: usize,
    pub top: usize,
    pub left: usize,
    pub height: usize,
    pub width: usize,
}

impl Patch {
    pub fn contains(&self, row: usize, col: usize) -> bool {
        (self.top..self.top + self.height).contains(&row) && (self.left..self.left + self.width).contains(&col)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub spec: SyntheticSpec,
    pub store: FeatureStore,
    pub manifest: DatasetManifest,
    pub embeddings: EmbeddingTable,
    /// Planted patches per image id.
    pub planted: BTreeMap<String, Vec<Patch>>,
}

impl SyntheticData {
    /// Writes the store, manifest and embeddings into `dir`; returns the
    /// manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_feature_store(&self.store, &dir.join(&self.manifest.features))?;
        self.embeddings.write(&dir.join(&self.manifest.embeddings))?;
        let path = dir.join(MANIFEST_FILE);
        self.manifest.save(&path)?;
        Ok(path)
    }
}

fn unit_vector(rng: &mut ChaCha8Rng, normal: &Normal<f64>, d: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..d).map(|_| normal.sample(rng)).collect();
        let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        if n > 1e-12 {
            return v.into_iter().map(|x| x / n).collect();
        }
    }
}

/// `rows × cols` Gaussian matrix whose shorter side is orthonormalized and
/// then scaled by `sqrt(cols)`, so lifted unit vectors have norm
/// `sqrt(cols)` when `rows ≤ cols`.
fn orthogonal_lift(rng: &mut ChaCha8Rng, normal: &Normal<f64>, rows: usize, cols: usize) -> Vec<f64> {
    let mut m: Vec<f64> = (0..rows * cols).map(|_| normal.sample(rng)).collect();
    let at = |i: usize, j: usize| if rows <= cols { i * cols + j } else { j * cols + i };
    let (n, len) = if rows <= cols { (rows, cols) } else { (cols, rows) };
    for i in 0..n {
        for k in 0..i {
            let dot: f64 = (0..len).map(|j| m[at(i, j)] * m[at(k, j)]).sum();
            for j in 0..len {
                m[at(i, j)] -= dot * m[at(k, j)];
            }
        }
        let norm = (0..len).map(|j| m[at(i, j)].powi(2)).sum::<f64>().sqrt();
        for j in 0..len {
            m[at(i, j)] /= norm;
        }
    }
    let scale = (cols as f64).sqrt();
    m.iter_mut().for_each(|x| *x *= scale);
    m
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticData> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let std_normal = Normal::new(0.0, 1.0).expect("valid normal");
    let noise = Normal::new(0.0, NOISE_STD).expect("valid normal");
    let (s, u) = (spec.seen_classes, spec.unseen_classes);
    let (h, w, d_r, d_g, d_a) = (spec.h, spec.w, spec.d_r, spec.d_g, spec.d_a);

    let mut embeddings: Vec<Vec<f64>> = (0..s).map(|_| unit_vector(&mut rng, &std_normal, d_a)).collect();
    for _ in 0..u {
        let i = rng.random_range(0..s);
        let j = (i + rng.random_range(1..s)) % s;
        let lambda = rng.random_range(0.3..0.7);
        let mix: Vec<f64> = (0..d_a)
            .map(|k| lambda * embeddings[i][k] + (1.0 - lambda) * embeddings[j][k])
            .collect();
        let n = mix.iter().map(|x| x * x).sum::<f64>().sqrt();
        embeddings.push(mix.into_iter().map(|x| x / n).collect());
    }

    // lift[k][r]: attribute k to region channel r
    let lift = orthogonal_lift(&mut rng, &std_normal, d_a, d_r);
    let patterns: Vec<Vec<f64>> = embeddings
        .iter()
        .map(|a| {
            (0..d_r)
                .map(|r| spec.strength * (0..d_a).map(|k| a[k] * lift[k * d_r + r]).sum::<f64>())
                .collect()
        })
        .collect();
    let global_std = Normal::new(0.0, (1.0 / d_r as f64).sqrt()).expect("valid normal");
    let global_lift: Vec<f64> = (0..d_r * d_g).map(|_| global_std.sample(&mut rng)).collect();

    let n_test = spec.test_images();
    let mut records = Vec::with_capacity(spec.images);
    let mut labels = BTreeMap::new();
    let mut splits = BTreeMap::new();
    let mut planted = BTreeMap::new();
    for img in 0..spec.images {
        let id = format!("img{img:05}");
        let split = if img >= spec.images - n_test { Split::Test } else { Split::Train };
        let pool = if split == Split::Train { s } else { s + u };
        let positives: Vec<usize> = (0..pool).filter(|_| rng.random_bool(spec.label_rate)).collect();

        let mut region: Vec<f64> = (0..h * w * d_r).map(|_| noise.sample(&mut rng)).collect();
        let mut patches = Vec::with_capacity(positives.len());
        for &class in &positives {
            let (height, width) = (spec.patch.min(h), spec.patch.min(w));
            let top = rng.random_range(0..=h - height);
            let left = rng.random_range(0..=w - width);
            for row in top..top + height {
                for col in left..left + width {
                    let base = (row * w + col) * d_r;
                    for (x, p) in region[base..base + d_r].iter_mut().zip(&patterns[class]) {
                        *x += p;
                    }
                }
            }
            patches.push(Patch { class, top, left, height, width });
        }

        let mut mean = vec![0.0; d_r];
        for cell in region.chunks(d_r) {
            for (m, x) in mean.iter_mut().zip(cell) {
                *m += x;
            }
        }
        for m in &mut mean {
            *m /= (h * w) as f64;
        }
        let global: Vec<f32> = (0..d_g)
            .map(|g| {
                let lifted: f64 = (0..d_r).map(|r| mean[r] * global_lift[r * d_g + g]).sum();
                (lifted + noise.sample(&mut rng)) as f32
            })
            .collect();

        records.push(FeatureRecord {
            id: id.clone(),
            region: Tensor::from_vec(&[h, w, d_r], region.into_iter().map(|x| x as f32).collect())?,
            global: Tensor::vector(global),
        });
        labels.insert(id.clone(), positives);
        splits.insert(id.clone(), split);
        planted.insert(id, patches);
    }

    let seen: Vec<String> = (0..s).map(|i| format!("seen{i:02}")).collect();
    let unseen: Vec<String> = (0..u).map(|i| format!("unseen{i:02}")).collect();
    let names: Vec<String> = seen.iter().chain(&unseen).cloned().collect();
    let table = EmbeddingTable::new(
        names,
        embeddings.iter().map(|v| v.iter().map(|&x| x as f32).collect()).collect(),
    )?;
    let manifest = DatasetManifest {
        seen_classes: seen,
        unseen_classes: unseen,
        labels,
        splits,
        features: FEATURES_FILE.into(),
        embeddings: EMBEDDINGS_FILE.into(),
    };
    manifest.validate()?;
    Ok(SyntheticData {
        spec: *spec,
        store: FeatureStore::new(spec.geometry(), records)?,
        manifest,
        embeddings: table,
        planted,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::LabelSpace;

    fn small() -> SyntheticSpec {
        SyntheticSpec {
            images: 40,
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

    #[test]
    fn deterministic() {
        let a = generate_synthetic(&small()).unwrap();
        let b = generate_synthetic(&small()).unwrap();
        assert_eq!(a.store.encode().unwrap(), b.store.encode().unwrap());
        assert_eq!(a.manifest.to_json(), b.manifest.to_json());
        assert_eq!(a.embeddings.to_text(), b.embeddings.to_text());
        let c = generate_synthetic(&SyntheticSpec { seed: 8, ..small() }).unwrap();
        assert_ne!(a.store.encode().unwrap(), c.store.encode().unwrap());
    }

    #[test]
    fn train_images_carry_only_seen_labels() {
        let d = generate_synthetic(&small()).unwrap();
        for id in d.manifest.ids(Split::Train) {
            assert_eq!(d.manifest.label_set(id, LabelSpace::Unseen).unwrap().count(), 0);
        }
        assert_eq!(d.manifest.ids(Split::Test).len(), 10);
    }

    #[test]
    fn unseen_embeddings_mix_two_seen() {
        let d = generate_synthetic(&small()).unwrap();
        let a = d.embeddings.select(&d.manifest.class_names(LabelSpace::All)).unwrap();
        for row in a.matrix().data().chunks(5) {
            let n: f32 = row.iter().map(|x| x * x).sum();
            assert!((n - 1.0).abs() < 1e-5);
        }
    }

    #[test]
    fn patches_match_labels() {
        let d = generate_synthetic(&small()).unwrap();
        for (id, patches) in &d.planted {
            let classes: Vec<usize> = patches.iter().map(|p| p.class).collect();
            assert_eq!(&classes, &d.manifest.labels[id]);
            for p in patches {
                assert!(p.top + p.height <= 4 && p.left + p.width <= 4);
            }
        }
    }

    #[test]
    fn invalid_specs() {
        assert!(SyntheticSpec { label_rate: 1.0, ..small() }.validate().is_err());
        assert!(SyntheticSpec { images: 0, ..small() }.validate().is_err());
        assert!(SyntheticSpec { seen_classes: 1, ..small() }.validate().is_err());
    }
}
