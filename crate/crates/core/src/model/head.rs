//! Forward and backward passes of the bi-level attention head and the
//! region-level classifier.
//!
//! The pass is staged around its two batch-norm layers, which couple the
//! images of a batch in train mode:
//!
//! ```text
//! x_r ─ conv3x3 ─ ReLU ─┤BN├─ h_r ─┬─ region block ──────────────────── e_r ─┐
//!                                  └─ scene gate ─ conv3x3 ─ ReLU ─┤BN├─ + h_r ─ e_g ─┴─ 1x1 fuse ─ e_f
//! e_f ─ W_a ─ Aᵀ ─ m (h·w × C) ─ top-k pool ─ s (C)
//! ```
//!
//! Everything between the batch-norm layers runs per image (in parallel);
//! per-image gradients are reduced in image order so the result does not
//! depend on the thread count.

use rayon::prelude::*;

use super::params::BiamParams;
use crate::error::{Error, Result};
use crate::ops::{self, BatchNormCache, BatchNormState, Mode, TopKAggregate};
use crate::tensor::{Real, Tensor};

/// Class response maps and pooled scores of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct ResponseMaps<T: Real = f32> {
    /// `[h, w, classes]`
    pub maps: Tensor<T>,
    /// `[classes]`
    pub scores: Tensor<T>,
}

impl<T: Real> ResponseMaps<T> {
    pub fn classes(&self) -> usize {
        self.maps.channels()
    }

    /// Spatial map of one class as a row-major `h·w` vector.
    pub fn class_map(&self, class: usize) -> Vec<T> {
        let c = self.classes();
        self.maps.data().iter().skip(class).step_by(c).copied().collect()
    }

    /// Recompute pooled scores from the maps.
    pub fn check_scores(&self, k: usize, pool: TopKAggregate) -> Result<bool> {
        for c in 0..self.classes() {
            let (s, _) = ops::topk_pool(&self.class_map(c), k, pool)?;
            if s != self.scores.data()[c] {
                return Ok(false);
            }
        }
        Ok(true)
    }
}

/// Per-head attention intermediates.
#[derive(Debug, Clone)]
struct HeadCache<T: Real> {
    q: Tensor<T>,
    k: Tensor<T>,
    v: Tensor<T>,
    attn: Tensor<T>,
}

/// Intermediates of the region contextualised block.
#[derive(Debug, Clone)]
pub struct RegionCache<T: Real> {
    heads: Vec<HeadCache<T>>,
    concat: Tensor<T>,
    residual: Tensor<T>,
    hidden_pre: Tensor<T>,
    hidden: Tensor<T>,
}

impl<T: Real> RegionCache<T> {
    /// Row-stochastic `[h·w, h·w]` attention matrix of each head.
    pub fn attention(&self) -> Vec<&Tensor<T>> {
        self.heads.iter().map(|h| &h.attn).collect()
    }

    pub fn hidden_pre(&self) -> &Tensor<T> {
        &self.hidden_pre
    }
}

/// Intermediates of the scene contextualised block up to its batch norm.
#[derive(Debug, Clone)]
pub struct SceneCache<T: Real> {
    query: Tensor<T>,
    key: Tensor<T>,
    gate: Tensor<T>,
    gated: Tensor<T>,
    conv_pre: Tensor<T>,
}

impl<T: Real> SceneCache<T> {
    /// Channel gate in (0, 1).
    pub fn gate(&self) -> &Tensor<T> {
        &self.gate
    }

    pub fn conv_pre(&self) -> &Tensor<T> {
        &self.conv_pre
    }
}

fn linear<T: Real>(x: &Tensor<T>, w: &Tensor<T>, b: Option<&Tensor<T>>) -> Result<Tensor<T>> {
    let y = ops::matmul(x, w)?;
    match b {
        Some(b) => ops::add(&y, b),
        None => Ok(y),
    }
}

fn spatial<T: Real>(m: Tensor<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let c = m.channels();
    m.reshape(&[h, w, c])
}

fn check_region_input<T: Real>(p: &BiamParams<T>, x: &Tensor<T>, what: &str) -> Result<()> {
    let c = &p.config;
    x.expect_shape(&[c.h, c.w, c.d_r], what)
}

/// Region contextualised block: multi-head self-attention over the `h·w`
/// regions, output projection, and a residual 1×1–ReLU–1×1 refinement.
pub fn rcb_forward<T: Real>(
    latent: &Tensor<T>,
    params: &BiamParams<T>,
) -> Result<(Tensor<T>, RegionCache<T>)> {
    check_region_input(params, latent, "region block input")?;
    let cfg = &params.config;
    let hm = latent.as_matrix();
    let scale = T::one() / T::lit(cfg.head_dim() as f64).sqrt();
    let mut heads = Vec::with_capacity(cfg.heads);
    let mut attended = Vec::with_capacity(cfg.heads);
    for j in 0..cfg.heads {
        let q = ops::matmul(&hm, &params.query[j])?;
        let k = ops::matmul(&hm, &params.key[j])?;
        let v = ops::matmul(&hm, &params.value[j])?;
        let attn = ops::softmax_rows(&ops::matmul_nt(&q, &k)?.scale(scale))?;
        attended.push(ops::matmul(&attn, &v)?);
        heads.push(HeadCache { q, k, v, attn });
    }
    let concat = Tensor::concat_channels(&attended.iter().collect::<Vec<_>>())?;
    let out = ops::matmul(&concat, &params.out_proj)?;
    let residual = ops::add(&hm, &out)?;
    let hidden_pre = linear(&residual, &params.context_in.weight, Some(&params.context_in.bias))?;
    let hidden = ops::relu(&hidden_pre);
    let refined = linear(&hidden, &params.context_out.weight, Some(&params.context_out.bias))?;
    let enriched = ops::add(&refined, &residual)?;
    Ok((
        spatial(enriched, cfg.h, cfg.w)?,
        RegionCache {
            heads,
            concat,
            residual,
            hidden_pre,
            hidden,
        },
    ))
}

fn rcb_backward<T: Real>(
    latent: &Tensor<T>,
    params: &BiamParams<T>,
    cache: &RegionCache<T>,
    upstream: &Tensor<T>,
    grads: &mut BiamParams<T>,
) -> Result<Tensor<T>> {
    let cfg = &params.config;
    let hm = latent.as_matrix();
    let de = upstream.as_matrix();
    let scale = T::one() / T::lit(cfg.head_dim() as f64).sqrt();

    let mut d_residual = de.clone();
    grads.context_out.weight.add_assign(&ops::matmul_tn(&cache.hidden, &de)?)?;
    grads.context_out.bias.add_assign(&ops::channel_sum(&de))?;
    let d_hidden = ops::matmul_nt(&de, &params.context_out.weight)?;
    let d_hidden_pre = ops::relu_backward(&cache.hidden_pre, &d_hidden)?;
    grads.context_in.weight.add_assign(&ops::matmul_tn(&cache.residual, &d_hidden_pre)?)?;
    grads.context_in.bias.add_assign(&ops::channel_sum(&d_hidden_pre))?;
    d_residual.add_assign(&ops::matmul_nt(&d_hidden_pre, &params.context_in.weight)?)?;

    let mut d_latent = d_residual.clone();
    grads.out_proj.add_assign(&ops::matmul_tn(&cache.concat, &d_residual)?)?;
    let d_concat = ops::matmul_nt(&d_residual, &params.out_proj)?;
    let widths = vec![cfg.head_dim(); cfg.heads];
    for (j, d_att) in d_concat.split_channels(&widths)?.into_iter().enumerate() {
        let hc = &cache.heads[j];
        let d_attn = ops::matmul_nt(&d_att, &hc.v)?;
        let dv = ops::matmul_tn(&hc.attn, &d_att)?;
        let d_logits = ops::softmax_rows_backward(&hc.attn, &d_attn)?.scale(scale);
        let dq = ops::matmul(&d_logits, &hc.k)?;
        let dk = ops::matmul_tn(&d_logits, &hc.q)?;
        for (dproj, w, g) in [
            (&dq, &params.query[j], &mut grads.query[j]),
            (&dk, &params.key[j], &mut grads.key[j]),
            (&dv, &params.value[j], &mut grads.value[j]),
        ] {
            g.add_assign(&ops::matmul_tn(&hm, dproj)?)?;
            d_latent.add_assign(&ops::matmul_nt(dproj, w)?)?;
        }
    }
    spatial(d_latent, cfg.h, cfg.w)
}

/// Scene gate and its 3×3 conv, stopping before the ReLU/batch-norm pair.
fn scb_pre_norm<T: Real>(
    latent: &Tensor<T>,
    global: &Tensor<T>,
    params: &BiamParams<T>,
) -> Result<SceneCache<T>> {
    let cfg = &params.config;
    global.expect_shape(&[cfg.d_g], "global feature")?;
    let query = ops::global_avg_pool(latent);
    let key = ops::matmul(&global.clone().reshape(&[1, cfg.d_g])?, &params.scene_proj)?
        .reshape(&[cfg.d_r])?;
    let gate = ops::sigmoid(&ops::mul(&query, &key)?);
    let gated = ops::mul(latent, &gate)?;
    let conv_pre = ops::conv2d(&gated, &params.scene_conv.kernel, Some(&params.scene_conv.bias))?;
    Ok(SceneCache {
        query,
        key,
        gate,
        gated,
        conv_pre,
    })
}

fn scb_backward<T: Real>(
    latent: &Tensor<T>,
    global: &Tensor<T>,
    params: &BiamParams<T>,
    cache: &SceneCache<T>,
    d_activation: &Tensor<T>,
    grads: &mut BiamParams<T>,
) -> Result<Tensor<T>> {
    let cfg = &params.config;
    let d_conv = ops::relu_backward(&cache.conv_pre, d_activation)?;
    let cg = ops::conv2d_backward(&cache.gated, &params.scene_conv.kernel, &d_conv)?;
    grads.scene_conv.kernel.add_assign(&cg.kernel)?;
    grads.scene_conv.bias.add_assign(&cg.bias)?;
    let (mut d_latent, d_gate) = ops::mul_backward(latent, &cache.gate, &cg.input)?;
    let d_logit = ops::sigmoid_backward(&cache.gate, &d_gate)?;
    let (d_query, d_key) = ops::mul_backward(&cache.query, &cache.key, &d_logit)?;
    let g = global.clone().reshape(&[1, cfg.d_g])?;
    grads
        .scene_proj
        .add_assign(&ops::matmul_tn(&g, &d_key.reshape(&[1, cfg.d_r])?)?)?;
    d_latent.add_assign(&ops::global_avg_pool_backward(latent.shape(), &d_query)?)?;
    Ok(d_latent)
}

/// Response maps `m = e_f·W_a·Aᵀ` and their top-k pooled scores.
pub fn classify_regions<T: Real>(
    enriched: &Tensor<T>,
    attr_proj: &Tensor<T>,
    attributes: &Tensor<T>,
    k: usize,
    pool: TopKAggregate,
) -> Result<ResponseMaps<T>> {
    let (maps, _, _) = classify_with_cache(enriched, attr_proj, attributes, k, pool)?;
    Ok(maps)
}

type ClassifyOut<T> = (ResponseMaps<T>, Tensor<T>, Vec<Vec<usize>>);

fn classify_with_cache<T: Real>(
    enriched: &Tensor<T>,
    attr_proj: &Tensor<T>,
    attributes: &Tensor<T>,
    k: usize,
    pool: TopKAggregate,
) -> Result<ClassifyOut<T>> {
    if attributes.rank() != 2 || attributes.channels() != attr_proj.channels() {
        return Err(Error::Dimension(format!(
            "attribute matrix {:?} does not match projection {:?}",
            attributes.shape(),
            attr_proj.shape()
        )));
    }
    let mut spatial_shape = enriched.shape()[..enriched.rank() - 1].to_vec();
    let projected = ops::matmul(&enriched.as_matrix(), attr_proj)?;
    let maps = ops::matmul_nt(&projected, attributes)?;
    let classes = maps.channels();
    let mut scores = Vec::with_capacity(classes);
    let mut selected = Vec::with_capacity(classes);
    for c in 0..classes {
        let column: Vec<T> = maps.data().iter().skip(c).step_by(classes).copied().collect();
        let (s, idx) = ops::topk_pool(&column, k, pool)?;
        scores.push(s);
        selected.push(idx);
    }
    spatial_shape.push(classes);
    let out = ResponseMaps {
        maps: maps.reshape(&spatial_shape)?,
        scores: Tensor::vector(scores),
    };
    Ok((out, projected, selected))
}

/// Everything the backward pass needs for one image.
#[derive(Debug, Clone)]
pub struct ImageCache<T: Real> {
    input_pre: Tensor<T>,
    latent: Tensor<T>,
    region: RegionCache<T>,
    scene: SceneCache<T>,
    fused_in: Tensor<T>,
    enriched: Tensor<T>,
    selected: Vec<Vec<usize>>,
}

impl<T: Real> ImageCache<T> {
    /// Latent map `h_r` shared by both context blocks.
    pub fn latent(&self) -> &Tensor<T> {
        &self.latent
    }

    pub fn region(&self) -> &RegionCache<T> {
        &self.region
    }

    pub fn scene(&self) -> &SceneCache<T> {
        &self.scene
    }

    /// Final enriched features `e_f`, `[h·w, d_r]`.
    pub fn enriched(&self) -> &Tensor<T> {
        &self.enriched
    }

    /// Pre-activation of the input convolution.
    pub fn input_pre(&self) -> &Tensor<T> {
        &self.input_pre
    }

    /// Region indices chosen by top-k pooling, per class.
    pub fn selected(&self) -> &[Vec<usize>] {
        &self.selected
    }
}

#[derive(Debug, Clone)]
pub struct ForwardCache<T: Real> {
    pub images: Vec<ImageCache<T>>,
    input_norm: BatchNormCache<T>,
    scene_norm: BatchNormCache<T>,
    inputs: Vec<(Tensor<T>, Tensor<T>)>,
    attributes: Tensor<T>,
}

/// Batch-norm running statistics after a train-mode forward. Apply with
/// [`NormUpdate::apply`] once the step is committed.
#[derive(Debug, Clone)]
pub struct NormUpdate<T: Real> {
    pub input_norm: BatchNormState<T>,
    pub scene_norm: BatchNormState<T>,
}

impl<T: Real> NormUpdate<T> {
    pub fn apply(self, params: &mut BiamParams<T>) {
        params.input_norm.running_mean = self.input_norm.running_mean;
        params.input_norm.running_var = self.input_norm.running_var;
        params.scene_norm.running_mean = self.scene_norm.running_mean;
        params.scene_norm.running_var = self.scene_norm.running_var;
    }
}

pub struct BatchForward<T: Real> {
    pub outputs: Vec<ResponseMaps<T>>,
    pub cache: ForwardCache<T>,
    pub norm_update: NormUpdate<T>,
}

fn batch_norm_images<T: Real>(
    images: &[Tensor<T>],
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Vec<Tensor<T>>, BatchNormCache<T>)> {
    let (y, cache) = ops::batchnorm2d(&Tensor::stack(images)?, state, mode)?;
    Ok((y.unstack(), cache))
}

/// Full forward over a batch of `(region features, global feature)` pairs,
/// scoring against the rows of `attributes` (`[classes, d_a]`).
pub fn forward_batch<T: Real>(
    params: &BiamParams<T>,
    inputs: &[(&Tensor<T>, &Tensor<T>)],
    attributes: &Tensor<T>,
    mode: Mode,
) -> Result<BatchForward<T>> {
    if inputs.is_empty() {
        return Err(Error::Parameter("empty batch".into()));
    }
    let cfg = params.config;
    for (x, g) in inputs {
        check_region_input(params, x, "region features")?;
        g.expect_shape(&[cfg.d_g], "global feature")?;
    }

    let input_pre: Vec<Tensor<T>> = inputs
        .par_iter()
        .map(|(x, _)| ops::conv2d(x, &params.input_conv.kernel, Some(&params.input_conv.bias)))
        .collect::<Result<_>>()?;
    let activated: Vec<Tensor<T>> = input_pre.iter().map(ops::relu).collect();
    let mut input_norm = params.input_norm.clone();
    let (latents, input_norm_cache) = batch_norm_images(&activated, &mut input_norm, mode)?;

    let contexts: Vec<(Tensor<T>, RegionCache<T>, SceneCache<T>)> = latents
        .par_iter()
        .zip(inputs.par_iter())
        .map(|(latent, (_, global))| {
            let (e_r, region) = rcb_forward(latent, params)?;
            let scene = scb_pre_norm(latent, global, params)?;
            Ok((e_r, region, scene))
        })
        .collect::<Result<_>>()?;
    let scene_act: Vec<Tensor<T>> = contexts.iter().map(|(_, _, s)| ops::relu(&s.conv_pre)).collect();
    let mut scene_norm = params.scene_norm.clone();
    let (scene_out, scene_norm_cache) = batch_norm_images(&scene_act, &mut scene_norm, mode)?;

    let finished: Vec<(ResponseMaps<T>, ImageCache<T>)> = contexts
        .into_par_iter()
        .zip(scene_out.into_par_iter())
        .zip(latents.into_par_iter().zip(input_pre.into_par_iter()))
        .map(|(((e_r, region, scene), normed), (latent, input_pre))| {
            let e_g = ops::add(&normed, &latent)?;
            let fused_in = Tensor::concat_channels(&[&e_r.as_matrix(), &e_g.as_matrix()])?;
            let enriched = linear(&fused_in, &params.fuse.weight, Some(&params.fuse.bias))?;
            let (maps, _, selected) = classify_with_cache(
                &spatial(enriched.clone(), cfg.h, cfg.w)?,
                &params.attr_proj,
                attributes,
                cfg.topk,
                cfg.pool,
            )?;
            debug_assert!(maps.maps.all_finite(), "non-finite response map");
            Ok((
                maps,
                ImageCache {
                    input_pre,
                    latent,
                    region,
                    scene,
                    fused_in,
                    enriched,
                    selected,
                },
            ))
        })
        .collect::<Result<_>>()?;
    let (outputs, images): (Vec<_>, Vec<_>) = finished.into_iter().unzip();
    Ok(BatchForward {
        outputs,
        cache: ForwardCache {
            images,
            input_norm: input_norm_cache,
            scene_norm: scene_norm_cache,
            inputs: inputs.iter().map(|(x, g)| ((*x).clone(), (*g).clone())).collect(),
            attributes: attributes.clone(),
        },
        norm_update: NormUpdate {
            input_norm,
            scene_norm,
        },
    })
}

/// Gradients of `Σ_i ⟨d_scores_i, s_i⟩` with respect to every learnable
/// tensor. Batch-norm running statistics in the result are zero.
pub fn backward_batch<T: Real>(
    params: &BiamParams<T>,
    cache: &ForwardCache<T>,
    d_scores: &[Tensor<T>],
) -> Result<BiamParams<T>> {
    let cfg = params.config;
    if d_scores.len() != cache.images.len() {
        return Err(Error::Dimension(format!(
            "{} score gradients for a batch of {}",
            d_scores.len(),
            cache.images.len()
        )));
    }
    let classes = cache.attributes.rows();
    let regions = cfg.regions();

    // classifier and fusion
    let stage: Vec<(BiamParams<T>, Tensor<T>, Tensor<T>)> = cache
        .images
        .par_iter()
        .zip(d_scores.par_iter())
        .map(|(img, ds)| {
            ds.expect_shape(&[classes], "score gradient")?;
            let mut grads = params.zeros_like();
            let mut d_maps = vec![T::zero(); regions * classes];
            for (c, idx) in img.selected.iter().enumerate() {
                let col = ops::topk_pool_backward(regions, idx, cfg.pool, ds.data()[c]);
                for (r, g) in col.into_iter().enumerate() {
                    d_maps[r * classes + c] = g;
                }
            }
            let d_maps = Tensor::from_vec(&[regions, classes], d_maps)?;
            let d_proj = ops::matmul(&d_maps, &cache.attributes)?;
            grads.attr_proj.add_assign(&ops::matmul_tn(&img.enriched, &d_proj)?)?;
            let d_enriched = ops::matmul_nt(&d_proj, &params.attr_proj)?;
            grads.fuse.weight.add_assign(&ops::matmul_tn(&img.fused_in, &d_enriched)?)?;
            grads.fuse.bias.add_assign(&ops::channel_sum(&d_enriched))?;
            let d_fused = ops::matmul_nt(&d_enriched, &params.fuse.weight)?;
            let mut parts = d_fused.split_channels(&[cfg.d_r, cfg.d_r])?.into_iter();
            let d_er = spatial(parts.next().expect("two halves"), cfg.h, cfg.w)?;
            let d_eg = spatial(parts.next().expect("two halves"), cfg.h, cfg.w)?;
            Ok((grads, d_er, d_eg))
        })
        .collect::<Result<_>>()?;

    let d_scene_norm: Vec<Tensor<T>> = stage.iter().map(|(_, _, d)| d.clone()).collect();
    let scene_bn = ops::batchnorm2d_backward(
        &cache.scene_norm,
        &params.scene_norm.gamma,
        &Tensor::stack(&d_scene_norm)?,
    )?;

    // context blocks
    let stage: Vec<(BiamParams<T>, Tensor<T>)> = stage
        .into_par_iter()
        .zip(scene_bn.input.unstack().into_par_iter())
        .zip(cache.images.par_iter().zip(cache.inputs.par_iter()))
        .map(|(((mut grads, d_er, d_eg), d_scene_act), (img, (_, global)))| {
            let mut d_latent = d_eg;
            d_latent.add_assign(&scb_backward(
                &img.latent,
                global,
                params,
                &img.scene,
                &d_scene_act,
                &mut grads,
            )?)?;
            d_latent.add_assign(&rcb_backward(&img.latent, params, &img.region, &d_er, &mut grads)?)?;
            Ok((grads, d_latent))
        })
        .collect::<Result<_>>()?;

    let d_latents: Vec<Tensor<T>> = stage.iter().map(|(_, d)| d.clone()).collect();
    let input_bn = ops::batchnorm2d_backward(
        &cache.input_norm,
        &params.input_norm.gamma,
        &Tensor::stack(&d_latents)?,
    )?;

    // input convolution
    let per_image: Vec<BiamParams<T>> = stage
        .into_par_iter()
        .zip(input_bn.input.unstack().into_par_iter())
        .zip(cache.images.par_iter().zip(cache.inputs.par_iter()))
        .map(|(((mut grads, _), d_act), (img, (x, _)))| {
            let d_pre = ops::relu_backward(&img.input_pre, &d_act)?;
            let cg = ops::conv2d_backward(x, &params.input_conv.kernel, &d_pre)?;
            grads.input_conv.kernel.add_assign(&cg.kernel)?;
            grads.input_conv.bias.add_assign(&cg.bias)?;
            Ok(grads)
        })
        .collect::<Result<_>>()?;

    let mut total = params.zeros_like();
    for g in &per_image {
        total.accumulate(g)?;
    }
    total.input_norm.gamma.add_assign(&input_bn.gamma)?;
    total.input_norm.beta.add_assign(&input_bn.beta)?;
    total.scene_norm.gamma.add_assign(&scene_bn.gamma)?;
    total.scene_norm.beta.add_assign(&scene_bn.beta)?;
    Ok(total)
}

/// Latent map `h_r = BN(ReLU(conv3x3(x_r)))` for one image. In train mode
/// the statistics come from this image alone.
pub fn latent_forward<T: Real>(
    region: &Tensor<T>,
    params: &BiamParams<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    check_region_input(params, region, "region features")?;
    let pre = ops::conv2d(region, &params.input_conv.kernel, Some(&params.input_conv.bias))?;
    let mut st = params.input_norm.clone();
    let (y, _) = batch_norm_images(&[ops::relu(&pre)], &mut st, mode)?;
    Ok(y.into_iter().next().expect("one image"))
}

/// Scene contextualised block for one image: `e_g = BN(ReLU(conv3x3(h_r ⊗ r_g))) + h_r`.
pub fn scb_forward<T: Real>(
    latent: &Tensor<T>,
    global: &Tensor<T>,
    params: &BiamParams<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    check_region_input(params, latent, "scene block input")?;
    let cache = scb_pre_norm(latent, global, params)?;
    let mut st = params.scene_norm.clone();
    let (y, _) = batch_norm_images(&[ops::relu(&cache.conv_pre)], &mut st, mode)?;
    ops::add(&y[0], latent)
}

/// Enriched features `e_f` of one image.
pub fn biam_forward<T: Real>(
    region: &Tensor<T>,
    global: &Tensor<T>,
    params: &BiamParams<T>,
    mode: Mode,
) -> Result<Tensor<T>> {
    let cfg = &params.config;
    let latent = latent_forward(region, params, mode)?;
    let (e_r, _) = rcb_forward(&latent, params)?;
    let e_g = scb_forward(&latent, global, params, mode)?;
    let fused_in = Tensor::concat_channels(&[&e_r, &e_g])?.as_matrix();
    let e_f = linear(&fused_in, &params.fuse.weight, Some(&params.fuse.bias))?;
    spatial(e_f, cfg.h, cfg.w)
}

/// Eval-mode scoring of a batch; cheaper than [`forward_batch`] because no
/// cache is kept.
pub fn predict<T: Real>(
    params: &BiamParams<T>,
    inputs: &[(&Tensor<T>, &Tensor<T>)],
    attributes: &Tensor<T>,
) -> Result<Vec<ResponseMaps<T>>> {
    let cfg = params.config;
    inputs
        .par_iter()
        .map(|(x, g)| {
            let e_f = biam_forward(x, g, params, Mode::Eval)?;
            classify_regions(&e_f, &params.attr_proj, attributes, cfg.topk, cfg.pool)
        })
        .collect()
}
