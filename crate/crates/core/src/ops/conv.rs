//! Stride-1 "same" convolution over channels-last feature maps.
//!
//! Kernels are laid out `[k, k, c_in, c_out]` and applied as a
//! cross-correlation with `(k - 1) / 2` zero padding on each side.

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

struct Geometry {
    h: usize,
    w: usize,
    k: usize,
    c_in: usize,
    c_out: usize,
}

fn geometry<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Geometry> {
    let [h, w, c_in] = *x.shape() else {
        return Err(Error::Dimension(format!(
            "conv2d input must be [h, w, c], got {:?}",
            x.shape()
        )));
    };
    let [k, k2, kc_in, c_out] = *kernel.shape() else {
        return Err(Error::Dimension(format!(
            "conv2d kernel must be [k, k, c_in, c_out], got {:?}",
            kernel.shape()
        )));
    };
    if k != k2 || !(k == 1 || k == 3) {
        return Err(Error::Dimension(format!(
            "conv2d supports 1x1 and 3x3 kernels, got {k}x{k2}"
        )));
    }
    if kc_in != c_in {
        return Err(Error::Dimension(format!(
            "conv2d channel mismatch: input {:?}, kernel {:?}",
            x.shape(),
            kernel.shape()
        )));
    }
    if let Some(b) = bias {
        b.expect_shape(&[c_out], "conv2d bias")?;
    }
    Ok(Geometry { h, w, k, c_in, c_out })
}

/// Iterate over valid (output position, input position, tap index) triples.
fn for_each_tap(g: &Geometry, mut f: impl FnMut(usize, usize, usize)) {
    let pad = (g.k / 2) as isize;
    for y in 0..g.h {
        for x in 0..g.w {
            let out = y * g.w + x;
            for dy in 0..g.k {
                let iy = y as isize + dy as isize - pad;
                if iy < 0 || iy >= g.h as isize {
                    continue;
                }
                for dx in 0..g.k {
                    let ix = x as isize + dx as isize - pad;
                    if ix < 0 || ix >= g.w as isize {
                        continue;
                    }
                    f(out, iy as usize * g.w + ix as usize, dy * g.k + dx);
                }
            }
        }
    }
}

pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    bias: Option<&Tensor<T>>,
) -> Result<Tensor<T>> {
    let g = geometry(x, kernel, bias)?;
    let (xd, kd) = (x.data(), kernel.data());
    let tap_len = g.c_in * g.c_out;
    let mut out = vec![T::zero(); g.h * g.w * g.c_out];
    if let Some(b) = bias {
        for row in out.chunks_mut(g.c_out) {
            row.copy_from_slice(b.data());
        }
    }
    for_each_tap(&g, |o, i, tap| {
        let orow = &mut out[o * g.c_out..(o + 1) * g.c_out];
        let taps = &kd[tap * tap_len..(tap + 1) * tap_len];
        for (ci, &xv) in xd[i * g.c_in..(i + 1) * g.c_in].iter().enumerate() {
            for (ov, &kv) in orow.iter_mut().zip(&taps[ci * g.c_out..(ci + 1) * g.c_out]) {
                *ov = *ov + xv * kv;
            }
        }
    });
    Tensor::from_vec(&[g.h, g.w, g.c_out], out)
}

pub struct ConvGrads<T: Real> {
    pub input: Tensor<T>,
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    kernel: &Tensor<T>,
    upstream: &Tensor<T>,
) -> Result<ConvGrads<T>> {
    let g = geometry(x, kernel, None)?;
    upstream.expect_shape(&[g.h, g.w, g.c_out], "conv2d upstream")?;
    let (xd, kd, ud) = (x.data(), kernel.data(), upstream.data());
    let tap_len = g.c_in * g.c_out;
    let mut dx = vec![T::zero(); xd.len()];
    let mut dk = vec![T::zero(); kd.len()];
    for_each_tap(&g, |o, i, tap| {
        let urow = &ud[o * g.c_out..(o + 1) * g.c_out];
        let xrow = &xd[i * g.c_in..(i + 1) * g.c_in];
        let base = tap * tap_len;
        for ci in 0..g.c_in {
            let krow = &kd[base + ci * g.c_out..base + (ci + 1) * g.c_out];
            let mut acc = T::zero();
            for (&kv, &uv) in krow.iter().zip(urow) {
                acc = acc + kv * uv;
            }
            dx[i * g.c_in + ci] = dx[i * g.c_in + ci] + acc;
            let xv = xrow[ci];
            let dkrow = &mut dk[base + ci * g.c_out..base + (ci + 1) * g.c_out];
            for (dkv, &uv) in dkrow.iter_mut().zip(urow) {
                *dkv = *dkv + xv * uv;
            }
        }
    });
    let mut db = vec![T::zero(); g.c_out];
    for row in ud.chunks(g.c_out) {
        for (b, &u) in db.iter_mut().zip(row) {
            *b = *b + u;
        }
    }
    Ok(ConvGrads {
        input: Tensor::from_vec(x.shape(), dx)?,
        kernel: Tensor::from_vec(kernel.shape(), dk)?,
        bias: Tensor::vector(db),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_by_one_identity() {
        let x = Tensor::<f64>::from_vec(&[2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        let k = Tensor::ones(&[1, 1, 1, 1]);
        let b = Tensor::zeros(&[1]);
        assert_eq!(conv2d(&x, &k, Some(&b)).unwrap(), x);
    }

    #[test]
    fn all_ones_3x3_on_2x2_sums_everything() {
        let x = Tensor::<f64>::from_vec(&[2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        let k = Tensor::ones(&[3, 3, 1, 1]);
        let y = conv2d(&x, &k, Some(&Tensor::zeros(&[1]))).unwrap();
        assert_eq!(y.data(), &[10., 10., 10., 10.]);
    }

    #[test]
    fn rejects_unsupported_kernel_and_channel_mismatch() {
        let x = Tensor::<f32>::zeros(&[3, 3, 2]);
        assert!(conv2d(&x, &Tensor::zeros(&[5, 5, 2, 1]), None).is_err());
        assert!(conv2d(&x, &Tensor::zeros(&[3, 3, 4, 1]), None).is_err());
    }

    #[test]
    fn keeps_spatial_extent() {
        let x = Tensor::<f32>::zeros(&[14, 14, 8]);
        let y = conv2d(&x, &Tensor::zeros(&[3, 3, 8, 4]), None).unwrap();
        assert_eq!(y.shape(), &[14, 14, 4]);
    }
}
