//! Loop-by-loop reference implementation of the head and classifier.
//!
//! Shares nothing with [`crate::ops`] or [`crate::model::head`] beyond the
//! parameter container: every value is an explicit sum over indices.

use crate::error::{Error, Result};
use crate::model::BiamParams;
use crate::ops::{BatchNormState, Mode};
use crate::tensor::Tensor;

/// Intermediate and final values for one image, as `[region][channel]`.
#[derive(Debug, Clone)]
pub struct NaiveOutput {
    pub latent: Vec<Vec<f64>>,
    pub region_context: Vec<Vec<f64>>,
    pub scene_context: Vec<Vec<f64>>,
    pub enriched: Vec<Vec<f64>>,
    /// `[region][class]`
    pub maps: Vec<Vec<f64>>,
    pub scores: Vec<f64>,
}

fn grid(t: &Tensor<f64>, regions: usize) -> Vec<Vec<f64>> {
    let c = t.len() / regions;
    (0..regions).map(|p| t.data()[p * c..(p + 1) * c].to_vec()).collect()
}

fn conv3x3(x: &[Vec<f64>], h: usize, w: usize, kernel: &Tensor<f64>, bias: &Tensor<f64>) -> Vec<Vec<f64>> {
    let (cin, cout) = (kernel.shape()[2], kernel.shape()[3]);
    let k = kernel.data();
    let mut out = vec![vec![0.0; cout]; h * w];
    for i in 0..h {
        for j in 0..w {
            for o in 0..cout {
                let mut acc = bias.data()[o];
                for di in 0..3 {
                    for dj in 0..3 {
                        let (si, sj) = (i as isize + di as isize - 1, j as isize + dj as isize - 1);
                        if si < 0 || sj < 0 || si >= h as isize || sj >= w as isize {
                            continue;
                        }
                        let src = &x[si as usize * w + sj as usize];
                        for c in 0..cin {
                            acc += src[c] * k[((di * 3 + dj) * cin + c) * cout + o];
                        }
                    }
                }
                out[i * w + j][o] = acc;
            }
        }
    }
    out
}

fn relu(x: &mut [Vec<f64>]) {
    for row in x {
        for v in row.iter_mut() {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
    }
}

/// Per-channel normalization; train mode uses the statistics of `x` itself.
fn batch_norm(x: &[Vec<f64>], st: &BatchNormState<f64>, mode: Mode) -> Vec<Vec<f64>> {
    let n = x.len() as f64;
    let c = x[0].len();
    let mut out = vec![vec![0.0; c]; x.len()];
    for ch in 0..c {
        let (mean, var) = match mode {
            Mode::Train => {
                let mean = x.iter().map(|r| r[ch]).sum::<f64>() / n;
                let var = x.iter().map(|r| (r[ch] - mean).powi(2)).sum::<f64>() / n;
                (mean, var)
            }
            Mode::Eval => (st.running_mean.data()[ch], st.running_var.data()[ch]),
        };
        let denom = (var + st.epsilon).sqrt();
        for (o, r) in out.iter_mut().zip(x) {
            o[ch] = st.gamma.data()[ch] * (r[ch] - mean) / denom + st.beta.data()[ch];
        }
    }
    out
}

/// `y[p] = x[p]·W (+ b)` with `W` given as `[in, out]`.
fn project(x: &[Vec<f64>], w: &Tensor<f64>, b: Option<&Tensor<f64>>) -> Vec<Vec<f64>> {
    let (cin, cout) = (w.shape()[0], w.shape()[1]);
    x.iter()
        .map(|row| {
            (0..cout)
                .map(|o| {
                    let mut acc = b.map_or(0.0, |b| b.data()[o]);
                    for c in 0..cin {
                        acc += row[c] * w.data()[c * cout + o];
                    }
                    acc
                })
                .collect()
        })
        .collect()
}

fn region_block(h_r: &[Vec<f64>], p: &BiamParams<f64>) -> Vec<Vec<f64>> {
    let cfg = &p.config;
    let (n, d, dh) = (h_r.len(), cfg.d_r, cfg.head_dim());
    let mut concat = vec![vec![0.0; d]; n];
    for head in 0..cfg.heads {
        let q = project(h_r, &p.query[head], None);
        let k = project(h_r, &p.key[head], None);
        let v = project(h_r, &p.value[head], None);
        for a in 0..n {
            let logits: Vec<f64> = (0..n)
                .map(|b| (0..dh).map(|t| q[a][t] * k[b][t]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = exps.iter().sum();
            for t in 0..dh {
                concat[a][head * dh + t] = (0..n).map(|b| exps[b] / z * v[b][t]).sum();
            }
        }
    }
    let o = project(&concat, &p.out_proj, None);
    let u: Vec<Vec<f64>> = (0..n).map(|a| (0..d).map(|c| h_r[a][c] + o[a][c]).collect()).collect();
    let mut hidden = project(&u, &p.context_in.weight, Some(&p.context_in.bias));
    relu(&mut hidden);
    let refined = project(&hidden, &p.context_out.weight, Some(&p.context_out.bias));
    (0..n).map(|a| (0..d).map(|c| u[a][c] + refined[a][c]).collect()).collect()
}

fn scene_block(h_r: &[Vec<f64>], global: &Tensor<f64>, p: &BiamParams<f64>, mode: Mode) -> Vec<Vec<f64>> {
    let cfg = &p.config;
    let (n, d) = (h_r.len(), cfg.d_r);
    let query: Vec<f64> = (0..d).map(|c| h_r.iter().map(|r| r[c]).sum::<f64>() / n as f64).collect();
    let key: Vec<f64> = (0..d)
        .map(|c| (0..cfg.d_g).map(|g| global.data()[g] * p.scene_proj.data()[g * d + c]).sum())
        .collect();
    let gate: Vec<f64> = (0..d).map(|c| 1.0 / (1.0 + (-query[c] * key[c]).exp())).collect();
    let gated: Vec<Vec<f64>> = h_r.iter().map(|r| (0..d).map(|c| r[c] * gate[c]).collect()).collect();
    let mut conv = conv3x3(&gated, cfg.h, cfg.w, &p.scene_conv.kernel, &p.scene_conv.bias);
    relu(&mut conv);
    let normed = batch_norm(&conv, &p.scene_norm, mode);
    (0..n).map(|a| (0..d).map(|c| normed[a][c] + h_r[a][c]).collect()).collect()
}

/// Mean (or sum) of the `k` largest values, ties broken by smaller index.
fn top_k(values: &[f64], k: usize, sum: bool) -> f64 {
    let mut chosen = vec![false; values.len()];
    let mut total = 0.0;
    for _ in 0..k {
        let mut best: Option<usize> = None;
        for (i, &v) in values.iter().enumerate() {
            if !chosen[i] && best.is_none_or(|b| v > values[b]) {
                best = Some(i);
            }
        }
        let b = best.expect("k ≤ len");
        chosen[b] = true;
        total += values[b];
    }
    if sum {
        total
    } else {
        total / k as f64
    }
}

/// Single-image forward; in train mode both batch norms use this image's
/// statistics.
pub fn naive_forward(
    params: &BiamParams<f64>,
    region: &Tensor<f64>,
    global: &Tensor<f64>,
    attributes: &Tensor<f64>,
    mode: Mode,
) -> Result<NaiveOutput> {
    let cfg = params.config;
    let n = cfg.regions();
    region.expect_shape(&[cfg.h, cfg.w, cfg.d_r], "region features")?;
    global.expect_shape(&[cfg.d_g], "global feature")?;
    if attributes.rank() != 2 || attributes.shape()[1] != cfg.d_a {
        return Err(Error::Dimension(format!("attributes {:?}", attributes.shape())));
    }
    let x = grid(region, n);
    let mut pre = conv3x3(&x, cfg.h, cfg.w, &params.input_conv.kernel, &params.input_conv.bias);
    relu(&mut pre);
    let latent = batch_norm(&pre, &params.input_norm, mode);
    let region_context = region_block(&latent, params);
    let scene_context = scene_block(&latent, global, params, mode);
    let d = cfg.d_r;
    let enriched: Vec<Vec<f64>> = (0..n)
        .map(|a| {
            (0..d)
                .map(|o| {
                    let mut acc = params.fuse.bias.data()[o];
                    for c in 0..d {
                        acc += region_context[a][c] * params.fuse.weight.data()[c * d + o];
                        acc += scene_context[a][c] * params.fuse.weight.data()[(d + c) * d + o];
                    }
                    acc
                })
                .collect()
        })
        .collect();
    let classes = attributes.shape()[0];
    let mut maps = vec![vec![0.0; classes]; n];
    for (a, row) in maps.iter_mut().enumerate() {
        for (cls, m) in row.iter_mut().enumerate() {
            for t in 0..cfg.d_a {
                let proj: f64 = (0..d).map(|c| enriched[a][c] * params.attr_proj.data()[c * cfg.d_a + t]).sum();
                *m += proj * attributes.data()[cls * cfg.d_a + t];
            }
        }
    }
    let sum = cfg.pool == crate::ops::TopKAggregate::Sum;
    let scores = (0..classes)
        .map(|cls| top_k(&maps.iter().map(|r| r[cls]).collect::<Vec<_>>(), cfg.topk, sum))
        .collect();
    Ok(NaiveOutput {
        latent,
        region_context,
        scene_context,
        enriched,
        maps,
        scores,
    })
}
