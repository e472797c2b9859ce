//! `BRF1` feature stores.
//!
//! Layout, little-endian throughout:
//!
//! | field | type |
//! |---|---|
//! | magic | `b"BRF1"` |
//! | version | `u32` (= 1) |
//! | record count N | `u32` |
//! | h, w, d_r, d_g | `u32` × 4 |
//!
//! followed by N records, each `u32` id length, the UTF-8 id bytes,
//! `h·w·d_r` region floats (row-major, channels last) and `d_g` global
//! floats, all `f32`.

use std::collections::HashMap;
use std::path::Path;

use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::model::ModelConfig;
use crate::tensor::Tensor;

pub const STORE_MAGIC: &[u8; 4] = b"BRF1";
pub const STORE_VERSION: u32 = 1;
pub const STORE_HEADER_BYTES: usize = 28;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct StoreGeometry {
    pub h: usize,
    pub w: usize,
    pub d_r: usize,
    pub d_g: usize,
}

impl StoreGeometry {
    pub fn of_model(config: &ModelConfig) -> Self {
        Self {
            h: config.h,
            w: config.w,
            d_r: config.d_r,
            d_g: config.d_g,
        }
    }

    pub fn region_shape(&self) -> [usize; 3] {
        [self.h, self.w, self.d_r]
    }

    /// Floats stored per record.
    pub fn payload_floats(&self) -> usize {
        self.h * self.w * self.d_r + self.d_g
    }

    pub fn check_model(&self, config: &ModelConfig) -> Result<()> {
        let want = Self::of_model(config);
        if *self != want {
            return Err(Error::Dimension(format!(
                "feature store holds {self:?}, model expects {want:?}"
            )));
        }
        Ok(())
    }
}

/// Features of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    /// `[h, w, d_r]`
    pub region: Tensor<f32>,
    /// `[d_g]`
    pub global: Tensor<f32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureStore {
    geometry: StoreGeometry,
    records: Vec<FeatureRecord>,
    index: HashMap<String, usize>,
}

impl FeatureStore {
    /// Rejects records whose shapes differ from `geometry`, non-finite
    /// values and repeated ids.
    pub fn new(geometry: StoreGeometry, records: Vec<FeatureRecord>) -> Result<Self> {
        let mut index = HashMap::with_capacity(records.len());
        for (i, r) in records.iter().enumerate() {
            let fail = |message: String| Error::Dataset {
                image_id: r.id.clone(),
                message,
            };
            if r.region.shape() != geometry.region_shape() || r.global.shape() != [geometry.d_g] {
                return Err(fail(format!(
                    "shapes {:?} and {:?} disagree with store geometry {geometry:?}",
                    r.region.shape(),
                    r.global.shape()
                )));
            }
            if !(r.region.all_finite() && r.global.all_finite()) {
                return Err(fail("non-finite feature value".into()));
            }
            if index.insert(r.id.clone(), i).is_some() {
                return Err(fail("duplicate image id".into()));
            }
        }
        Ok(Self {
            geometry,
            records,
            index,
        })
    }

    pub fn geometry(&self) -> StoreGeometry {
        self.geometry
    }

    pub fn records(&self) -> &[FeatureRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn get(&self, id: &str) -> Option<&FeatureRecord> {
        self.index.get(id).map(|&i| &self.records[i])
    }

    pub fn encode(&self) -> Result<Vec<u8>> {
        let g = self.geometry;
        let mut buf = Vec::with_capacity(
            STORE_HEADER_BYTES + self.records.len() * (4 + 4 * g.payload_floats()),
        );
        buf.extend_from_slice(STORE_MAGIC);
        binio::put_u32(&mut buf, STORE_VERSION);
        binio::put_u32(&mut buf, binio::to_u32(self.records.len(), "record count")?);
        for (name, v) in [("h", g.h), ("w", g.w), ("d_r", g.d_r), ("d_g", g.d_g)] {
            binio::put_u32(&mut buf, binio::to_u32(v, name)?);
        }
        for r in &self.records {
            binio::put_u32(&mut buf, binio::to_u32(r.id.len(), "id length")?);
            buf.extend_from_slice(r.id.as_bytes());
            binio::put_f32s(&mut buf, r.region.data().iter().copied());
            binio::put_f32s(&mut buf, r.global.data().iter().copied());
        }
        Ok(buf)
    }

    pub fn decode(bytes: &[u8], path: &Path) -> Result<Self> {
        let mut rd = Reader::new(bytes, path);
        let magic = rd.take(4, "magic")?;
        if magic != STORE_MAGIC {
            return Err(rd.error_at(0, format!("bad magic {magic:?}, expected \"BRF1\"")));
        }
        let version = rd.u32("version")?;
        if version != STORE_VERSION {
            return Err(rd.error_at(4, format!("unsupported version {version}")));
        }
        let n = rd.u32("record count")? as usize;
        let mut dims = [0usize; 4];
        for (d, name) in dims.iter_mut().zip(["h", "w", "d_r", "d_g"]) {
            *d = rd.u32(name)? as usize;
        }
        let geometry = StoreGeometry {
            h: dims[0],
            w: dims[1],
            d_r: dims[2],
            d_g: dims[3],
        };
        let region_len = geometry.h * geometry.w * geometry.d_r;
        let mut records = Vec::with_capacity(n.min(bytes.len() / 4));
        let mut seen = HashMap::with_capacity(n.min(bytes.len() / 4));
        for i in 0..n {
            let at = rd.offset();
            let id_len = rd.u32("id length")? as usize;
            let id_bytes = rd.take(id_len, "image id")?;
            let id = std::str::from_utf8(id_bytes)
                .map_err(|_| rd.error_at(at + 4, format!("record {i}: id is not UTF-8")))?
                .to_string();
            if seen.insert(id.clone(), i).is_some() {
                return Err(rd.error_at(at, format!("duplicate image id {id:?}")));
            }
            let values_at = rd.offset();
            let region = rd.f32s(region_len, "region features")?;
            let global = rd.f32s(geometry.d_g, "global features")?;
            if let Some(k) = region.iter().chain(&global).position(|v| !v.is_finite()) {
                return Err(rd.error_at(values_at + 4 * k as u64, format!("record {id:?}: non-finite value")));
            }
            records.push(FeatureRecord {
                id,
                region: Tensor::from_vec(&geometry.region_shape(), region)?,
                global: Tensor::vector(global),
            });
        }
        rd.finish()?;
        Ok(Self {
            geometry,
            records,
            index: seen,
        })
    }
}

pub fn write_feature_store(store: &FeatureStore, path: &Path) -> Result<()> {
    binio::write_file(path, &store.encode()?)
}

pub fn read_feature_store(path: &Path) -> Result<FeatureStore> {
    FeatureStore::decode(&binio::read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn geometry() -> StoreGeometry {
        StoreGeometry { h: 2, w: 3, d_r: 4, d_g: 5 }
    }

    fn store(n: usize) -> FeatureStore {
        let g = geometry();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let records = (0..n)
            .map(|i| FeatureRecord {
                id: format!("im{i}"),
                region: Tensor::randn(&g.region_shape(), 1.0, &mut rng),
                global: Tensor::randn(&[g.d_g], 1.0, &mut rng),
            })
            .collect();
        FeatureStore::new(g, records).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let s = store(3);
        let bytes = s.encode().unwrap();
        let back = FeatureStore::decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(back, s);
        assert_eq!(back.encode().unwrap(), bytes);
        assert_eq!(back.get("im1").unwrap().id, "im1");
    }

    #[test]
    fn empty_store_is_header_only() {
        let bytes = store(0).encode().unwrap();
        assert_eq!(bytes.len(), STORE_HEADER_BYTES);
        assert_eq!(&bytes[..4], b"BRF1");
    }

    #[test]
    fn reference_payload() {
        let g = StoreGeometry::of_model(&ModelConfig::reference());
        assert_eq!(g.payload_floats(), 104_448);
    }

    #[test]
    fn truncation_reports_offset() {
        let bytes = store(2).encode().unwrap();
        let cut = bytes.len() - 3;
        match FeatureStore::decode(&bytes[..cut], Path::new("t")) {
            Err(Error::Format { offset, .. }) => assert!(offset as usize <= cut),
            other => panic!("expected format error, got {other:?}"),
        }
    }

    #[test]
    fn bad_magic_and_version() {
        let mut bytes = store(1).encode().unwrap();
        bytes[3] = b'2';
        assert!(matches!(FeatureStore::decode(&bytes, Path::new("m")), Err(Error::Format { offset: 0, .. })));
        bytes[3] = b'1';
        bytes[4] = 9;
        assert!(matches!(FeatureStore::decode(&bytes, Path::new("v")), Err(Error::Format { offset: 4, .. })));
    }

    #[test]
    fn shape_disagreement_is_rejected() {
        let mut s = store(1).records().to_vec();
        s[0].global = Tensor::zeros(&[4]);
        let err = FeatureStore::new(geometry(), s).unwrap_err();
        assert!(matches!(err, Error::Dataset { ref image_id, .. } if image_id == "im0"));
    }

    #[test]
    fn model_geometry_check() {
        let mut cfg = ModelConfig::reference();
        assert!(StoreGeometry::of_model(&cfg).check_model(&cfg).is_ok());
        let g = StoreGeometry::of_model(&cfg);
        cfg.d_g = 10;
        assert!(g.check_model(&cfg).is_err());
    }
}
