//! Binary parameter checkpoints.
//!
//! Layout, little-endian throughout:
//!
//! | field | type |
//! |---|---|
//! | magic | `b"BIAM"` |
//! | version | `u16` (= 1) |
//! | config | `u32` × 10: h, w, d_r, d_g, d_a, heads, topk, pool (0 mean, 1 sum), seed low word, seed high word |
//! | tensors | see below |
//!
//! Each tensor is written as `rank: u8`, `extents: u32 × rank`, then the
//! values as `f32`. Tensors appear in this order:
//!
//! 1. `input_conv.kernel` `[3,3,d_r,d_r]`, `input_conv.bias` `[d_r]`
//! 2. `input_norm`: gamma, beta, running_mean, running_var (each `[d_r]`),
//!    then `[momentum, epsilon]` as a `[2]` tensor
//! 3. `query.0 … query.{H-1}`, `key.*`, `value.*` (each `[d_r, d_r/H]`)
//! 4. `out_proj` `[d_r,d_r]`
//! 5. `context_in.weight` `[d_r,d_r]`, `context_in.bias`,
//!    `context_out.weight`, `context_out.bias`
//! 6. `scene_proj` `[d_g,d_r]`
//! 7. `scene_conv.kernel` `[3,3,d_r,d_r]`, `scene_conv.bias`
//! 8. `scene_norm`, same five tensors as `input_norm`
//! 9. `fuse.weight` `[2·d_r,d_r]`, `fuse.bias` `[d_r]`
//! 10. `attr_proj` `[d_r,d_a]`
//!
//! Nothing may follow the last tensor.

use std::path::Path;

use super::config::ModelConfig;
use super::params::BiamParams;
use crate::binio::{self, Reader};
use crate::error::{Error, Result};
use crate::ops::{BatchNormState, TopKAggregate};
use crate::tensor::{Real, Tensor};

pub const MAGIC: &[u8; 4] = b"BIAM";
pub const VERSION: u16 = 1;

fn norm_tensors<T: Real>(n: &BatchNormState<T>) -> [Tensor<f32>; 5] {
    [
        n.gamma.cast(),
        n.beta.cast(),
        n.running_mean.cast(),
        n.running_var.cast(),
        Tensor::vector(vec![n.momentum.as_f64() as f32, n.epsilon.as_f64() as f32]),
    ]
}

/// Every stored tensor, in file order.
fn ordered_tensors<T: Real>(p: &BiamParams<T>) -> Vec<Tensor<f32>> {
    let mut out = vec![p.input_conv.kernel.cast(), p.input_conv.bias.cast()];
    out.extend(norm_tensors(&p.input_norm));
    for set in [&p.query, &p.key, &p.value] {
        out.extend(set.iter().map(Tensor::cast));
    }
    out.extend([
        p.out_proj.cast(),
        p.context_in.weight.cast(),
        p.context_in.bias.cast(),
        p.context_out.weight.cast(),
        p.context_out.bias.cast(),
        p.scene_proj.cast(),
        p.scene_conv.kernel.cast(),
        p.scene_conv.bias.cast(),
    ]);
    out.extend(norm_tensors(&p.scene_norm));
    out.extend([p.fuse.weight.cast(), p.fuse.bias.cast(), p.attr_proj.cast()]);
    out
}

pub fn encode<T: Real>(params: &BiamParams<T>) -> Result<Vec<u8>> {
    let c = &params.config;
    let mut buf = Vec::new();
    buf.extend_from_slice(MAGIC);
    buf.extend_from_slice(&VERSION.to_le_bytes());
    for (name, v) in [
        ("h", c.h),
        ("w", c.w),
        ("d_r", c.d_r),
        ("d_g", c.d_g),
        ("d_a", c.d_a),
        ("heads", c.heads),
        ("topk", c.topk),
    ] {
        binio::put_u32(&mut buf, binio::to_u32(v, name)?);
    }
    binio::put_u32(
        &mut buf,
        match c.pool {
            TopKAggregate::Mean => 0,
            TopKAggregate::Sum => 1,
        },
    );
    binio::put_u32(&mut buf, c.seed as u32);
    binio::put_u32(&mut buf, (c.seed >> 32) as u32);
    for t in ordered_tensors(params) {
        buf.push(t.rank() as u8);
        for &e in t.shape() {
            binio::put_u32(&mut buf, binio::to_u32(e, "extent")?);
        }
        binio::put_f32s(&mut buf, t.data().iter().copied());
    }
    Ok(buf)
}

fn read_tensor(r: &mut Reader<'_>, expected: &[usize], name: &str) -> Result<Tensor<f32>> {
    let at = r.offset();
    let rank = r.u8(name)? as usize;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        shape.push(r.u32(name)? as usize);
    }
    if shape != expected {
        return Err(r.error_at(
            at,
            format!("{name}: expected shape {expected:?}, found {shape:?}"),
        ));
    }
    let n = shape.iter().product();
    Tensor::from_vec(&shape, r.f32s(n, name)?)
}

fn read_norm(r: &mut Reader<'_>, state: &mut BatchNormState<f32>, name: &str) -> Result<()> {
    let c = [state.channels()];
    state.gamma = read_tensor(r, &c, &format!("{name}.gamma"))?;
    state.beta = read_tensor(r, &c, &format!("{name}.beta"))?;
    state.running_mean = read_tensor(r, &c, &format!("{name}.running_mean"))?;
    state.running_var = read_tensor(r, &c, &format!("{name}.running_var"))?;
    let hyper = read_tensor(r, &[2], &format!("{name}.hyper"))?;
    state.momentum = hyper.data()[0];
    state.epsilon = hyper.data()[1];
    Ok(())
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<BiamParams<f32>> {
    let mut r = Reader::new(bytes, path);
    if r.take(4, "magic")? != MAGIC {
        return Err(Error::format(path, 0, "bad magic, expected \"BIAM\""));
    }
    let version = r.u16("version")?;
    if version != VERSION {
        return Err(Error::format(path, 4, format!("unsupported version {version}")));
    }
    let mut f = [0usize; 7];
    for v in &mut f {
        *v = r.u32("config")? as usize;
    }
    let pool = match r.u32("pool")? {
        0 => TopKAggregate::Mean,
        1 => TopKAggregate::Sum,
        other => return Err(r.error(format!("unknown pooling code {other}"))),
    };
    let seed = r.u32("seed")? as u64 | (r.u32("seed")? as u64) << 32;
    let config = ModelConfig {
        h: f[0],
        w: f[1],
        d_r: f[2],
        d_g: f[3],
        d_a: f[4],
        heads: f[5],
        topk: f[6],
        pool,
        seed,
    };
    config
        .validate()
        .map_err(|e| Error::format(path, 6, format!("invalid config: {e}")))?;
    // init only provides the shapes; every value is overwritten below
    let mut p = BiamParams::<f32>::init(&config)?;
    let read = |r: &mut Reader<'_>, t: &mut Tensor<f32>, name: &str| -> Result<()> {
        *t = read_tensor(r, &t.shape().to_vec(), name)?;
        Ok(())
    };
    read(&mut r, &mut p.input_conv.kernel, "input_conv.kernel")?;
    read(&mut r, &mut p.input_conv.bias, "input_conv.bias")?;
    read_norm(&mut r, &mut p.input_norm, "input_norm")?;
    for (kind, set) in [("query", &mut p.query), ("key", &mut p.key), ("value", &mut p.value)] {
        for (i, t) in set.iter_mut().enumerate() {
            read(&mut r, t, &format!("{kind}.{i}"))?;
        }
    }
    read(&mut r, &mut p.out_proj, "out_proj")?;
    read(&mut r, &mut p.context_in.weight, "context_in.weight")?;
    read(&mut r, &mut p.context_in.bias, "context_in.bias")?;
    read(&mut r, &mut p.context_out.weight, "context_out.weight")?;
    read(&mut r, &mut p.context_out.bias, "context_out.bias")?;
    read(&mut r, &mut p.scene_proj, "scene_proj")?;
    read(&mut r, &mut p.scene_conv.kernel, "scene_conv.kernel")?;
    read(&mut r, &mut p.scene_conv.bias, "scene_conv.bias")?;
    read_norm(&mut r, &mut p.scene_norm, "scene_norm")?;
    read(&mut r, &mut p.fuse.weight, "fuse.weight")?;
    read(&mut r, &mut p.fuse.bias, "fuse.bias")?;
    read(&mut r, &mut p.attr_proj, "attr_proj")?;
    r.finish()?;
    Ok(p)
}

pub fn save<T: Real>(params: &BiamParams<T>, path: &Path) -> Result<()> {
    binio::write_file(path, &encode(params)?)
}

pub fn load(path: &Path) -> Result<BiamParams<f32>> {
    decode(&binio::read_file(path)?, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> ModelConfig {
        ModelConfig {
            h: 3,
            w: 2,
            d_r: 4,
            d_g: 5,
            d_a: 3,
            heads: 2,
            topk: 2,
            pool: TopKAggregate::Sum,
            seed: 0x1_0000_0007,
        }
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let mut p = BiamParams::<f32>::init(&tiny()).unwrap();
        p.input_norm.running_var.data_mut()[1] = 0.123_456_79;
        let bytes = encode(&p).unwrap();
        let q = decode(&bytes, Path::new("mem")).unwrap();
        assert_eq!(p, q);
        assert_eq!(encode(&q).unwrap(), bytes);
    }

    #[test]
    fn header_layout() {
        let bytes = encode(&BiamParams::<f32>::init(&tiny()).unwrap()).unwrap();
        assert_eq!(&bytes[..4], b"BIAM");
        assert_eq!(u16::from_le_bytes([bytes[4], bytes[5]]), 1);
        assert_eq!(u32::from_le_bytes(bytes[6..10].try_into().unwrap()), 3);
        // seed words
        assert_eq!(u32::from_le_bytes(bytes[38..42].try_into().unwrap()), 7);
        assert_eq!(u32::from_le_bytes(bytes[42..46].try_into().unwrap()), 1);
        // first tensor is the rank-4 input kernel
        assert_eq!(bytes[46], 4);
    }

    #[test]
    fn corrupt_and_truncated() {
        let mut bytes = encode(&BiamParams::<f32>::init(&tiny()).unwrap()).unwrap();
        let cut = decode(&bytes[..bytes.len() - 3], Path::new("t"));
        assert!(matches!(cut, Err(Error::Format { .. })), "{cut:?}");
        bytes[0] = b'X';
        assert!(matches!(
            decode(&bytes, Path::new("m")),
            Err(Error::Format { offset: 0, .. })
        ));
    }
}
