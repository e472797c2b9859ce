//! Grayscale heatmap export of class response maps.

use std::path::{Path, PathBuf};

use crate::data::{Dataset, FeatureRecord};
use crate::error::{Error, Result};
use crate::model::{predict, BiamParams};

/// Binary 8-bit PGM (`P5`) of a row-major `h × w` map, min-max scaled to
/// `0..=255`. A constant map becomes mid-gray 128.
///
/// ```
/// let pgm = biam::export::encode_pgm(&[0.0, 1.0, 2.0, 3.0], 2, 2).unwrap();
/// assert_eq!(&pgm[pgm.len() - 4..], &[0, 85, 170, 255]);
/// ```
pub fn encode_pgm(map: &[f32], h: usize, w: usize) -> Result<Vec<u8>> {
    if map.len() != h * w || map.is_empty() {
        return Err(Error::Dimension(format!("{} values for a {h}x{w} map", map.len())));
    }
    if map.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in response map".into()));
    }
    let lo = map.iter().copied().fold(f32::INFINITY, f32::min) as f64;
    let hi = map.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(map.iter().map(|&v| {
        if hi == lo {
            128
        } else {
            ((v as f64 - lo) / (hi - lo) * 255.0).round() as u8
        }
    }));
    Ok(out)
}

pub fn heatmap_file_name(id: &str, class: &str) -> String {
    format!("{id}__{class}.pgm")
}

fn check_file_component(kind: &str, name: &str) -> Result<()> {
    if name.is_empty() || name.contains(['/', '\\']) || name == "." || name == ".." {
        return Err(Error::Parameter(format!("{kind} {name:?} cannot be used in a file name")));
    }
    Ok(())
}

/// Writes one PGM per (image, class) pair into `out_dir` and returns the
/// paths in image-major order. Every id and class is checked before the
/// first file is written.
pub fn export_heatmaps(
    params: &BiamParams,
    dataset: &Dataset,
    ids: &[String],
    classes: &[String],
    out_dir: &Path,
) -> Result<Vec<PathBuf>> {
    let records: Vec<&FeatureRecord> = ids
        .iter()
        .map(|id| {
            check_file_component("image id", id)?;
            dataset.store.get(id).ok_or_else(|| Error::Dataset {
                image_id: id.clone(),
                message: "not found in feature store".into(),
            })
        })
        .collect::<Result<_>>()?;
    for c in classes {
        check_file_component("class", c)?;
    }
    let attributes = dataset.embeddings.select(classes)?;
    if attributes.dim() != params.config.d_a {
        return Err(Error::Dimension(format!(
            "{}-d embeddings for a model with d_a = {}",
            attributes.dim(),
            params.config.d_a
        )));
    }
    dataset.store.geometry().check_model(&params.config)?;

    let inputs: Vec<_> = records.iter().map(|r| (&r.region, &r.global)).collect();
    let maps = predict(params, &inputs, attributes.matrix())?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let (h, w) = (params.config.h, params.config.w);
    let mut written = Vec::with_capacity(ids.len() * classes.len());
    for (id, m) in ids.iter().zip(&maps) {
        for (c, class) in classes.iter().enumerate() {
            let path = out_dir.join(heatmap_file_name(id, class));
            let bytes = encode_pgm(&m.class_map(c), h, w)?;
            std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
            written.push(path);
        }
    }
    Ok(written)
}
