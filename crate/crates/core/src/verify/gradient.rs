//! Gradient checks for every kernel and for the full training objective.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::gradcheck::{self, Differentiable, GradCheckReport};
use crate::model::{self, BiamParams, ModelConfig};
use crate::ops::{BatchNormState, Mode, TopKAggregate};
use crate::tensor::Tensor;
use crate::train::{batch_loss, hinge_distance, ranking_loss, Example, LabelSet, LossNorm};

/// `h = w = 3`, `d_r = 8`, `d_g = 16`, `d_a = 4`, two heads, top-2 pooling.
pub fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        h: 3,
        w: 3,
        d_r: 8,
        d_g: 16,
        d_a: 4,
        heads: 2,
        topk: 2,
        pool: TopKAggregate::Mean,
        seed,
    }
}

pub const TINY_CLASSES: usize = 5;

/// Ranking loss of a score vector against fixed labels.
pub struct RankingLossOp {
    pub labels: LabelSet,
    pub norm: LossNorm,
}

impl Differentiable for RankingLossOp {
    fn name(&self) -> String {
        format!("ranking_loss[{:?}]", self.norm).to_lowercase()
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(Tensor::scalar(ranking_loss(&x[0], &self.labels, self.norm)?.0))
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![ranking_loss(&x[0], &self.labels, self.norm)?.1.scale(g.data()[0])])
    }
    fn kink_distance(&self, x: &[Tensor<f64>]) -> Result<f64> {
        Ok(hinge_distance(x[0].data(), &self.labels))
    }
}

/// `Σ_i Σ_c s_ic` plus the batch ranking loss, as a function of every
/// learnable tensor. Train-mode batch norm over the whole batch.
pub struct EndToEnd {
    pub template: BiamParams<f64>,
    pub regions: Vec<Tensor<f64>>,
    pub globals: Vec<Tensor<f64>>,
    pub labels: Vec<LabelSet>,
    pub attributes: Tensor<f64>,
    pub norm: LossNorm,
}

impl EndToEnd {
    /// Tiny config, two images, five classes; every bias and batch-norm
    /// affine parameter is moved off its initial value.
    pub fn tiny(seed: u64) -> Result<Self> {
        let cfg = tiny_config(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
        let template = perturbed_params(&cfg, &mut rng)?;
        let regions = (0..2).map(|_| Tensor::randn(&[cfg.h, cfg.w, cfg.d_r], 1.0, &mut rng)).collect();
        let globals = (0..2).map(|_| Tensor::randn(&[cfg.d_g], 1.0, &mut rng)).collect();
        let labels = vec![
            LabelSet::new(vec![0, 3], TINY_CLASSES)?,
            LabelSet::new(vec![1], TINY_CLASSES)?,
        ];
        let attributes = Tensor::randn(&[TINY_CLASSES, cfg.d_a], 1.0, &mut rng);
        Ok(Self {
            template,
            regions,
            globals,
            labels,
            attributes,
            norm: LossNorm::MeanPairs,
        })
    }

    pub fn inputs(&self) -> Vec<Tensor<f64>> {
        self.template.learnable().into_iter().map(|(_, t)| t.clone()).collect()
    }

    fn params(&self, inputs: &[Tensor<f64>]) -> BiamParams<f64> {
        let mut p = self.template.clone();
        for (slot, t) in p.learnable_mut().into_iter().zip(inputs) {
            *slot = t.clone();
        }
        p
    }

    fn examples(&self) -> Vec<Example<'_, f64>> {
        (0..self.regions.len())
            .map(|i| Example {
                id: "",
                region: &self.regions[i],
                global: &self.globals[i],
                labels: &self.labels[i],
            })
            .collect()
    }
}

impl Differentiable for EndToEnd {
    fn name(&self) -> String {
        "end_to_end".into()
    }

    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let p = self.params(inputs);
        let bl = batch_loss(&p, &self.examples(), &self.attributes, self.norm, Mode::Train)?;
        let weight = match self.norm {
            LossNorm::MeanPairs => 1.0 / self.regions.len() as f64,
            LossNorm::Sum => 1.0,
        };
        let scores: f64 = bl.forward.outputs.iter().map(|o| o.scores.sum()).sum();
        let loss: f64 = bl.image_losses.iter().sum::<f64>() * weight;
        Ok(Tensor::scalar(scores + loss))
    }

    fn backward(&self, inputs: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let p = self.params(inputs);
        let bl = batch_loss(&p, &self.examples(), &self.attributes, self.norm, Mode::Train)?;
        let g = upstream.data()[0];
        let d_scores: Vec<Tensor<f64>> = bl.d_scores.iter().map(|d| d.map(|v| (v + 1.0) * g)).collect();
        let grads = model::backward_batch(&p, &bl.forward.cache, &d_scores)?;
        Ok(grads.learnable().into_iter().map(|(_, t)| t.clone()).collect())
    }

    fn kink_distance(&self, inputs: &[Tensor<f64>]) -> Result<f64> {
        let p = self.params(inputs);
        let bl = batch_loss(&p, &self.examples(), &self.attributes, self.norm, Mode::Train)?;
        let mut best = f64::INFINITY;
        let min_abs = |t: &Tensor<f64>| t.data().iter().fold(f64::INFINITY, |m, v| m.min(v.abs()));
        for img in &bl.forward.cache.images {
            best = best
                .min(min_abs(img.input_pre()))
                .min(min_abs(img.region().hidden_pre()))
                .min(min_abs(img.scene().conv_pre()));
        }
        for (out, labels) in bl.forward.outputs.iter().zip(&self.labels) {
            for c in 0..out.classes() {
                best = best.min(gradcheck::topk_boundary_gap(&out.class_map(c), p.config.topk));
            }
            best = best.min(hinge_distance(out.scores.data(), labels));
        }
        Ok(best)
    }
}

/// Initial parameters with biases, batch-norm affines and running
/// statistics drawn away from their defaults.
pub fn perturbed_params(cfg: &ModelConfig, rng: &mut ChaCha8Rng) -> Result<BiamParams<f64>> {
    let mut p = BiamParams::<f64>::init(cfg)?;
    for bias in [
        &mut p.input_conv.bias,
        &mut p.context_in.bias,
        &mut p.context_out.bias,
        &mut p.scene_conv.bias,
        &mut p.fuse.bias,
    ] {
        *bias = Tensor::randn(bias.shape(), 0.1, rng);
    }
    for norm in [&mut p.input_norm, &mut p.scene_norm] {
        let c = norm.channels();
        norm.gamma = Tensor::vector((0..c).map(|_| rng.random_range(0.8..1.2)).collect());
        norm.beta = Tensor::randn(&[c], 0.1, rng);
        norm.running_mean = Tensor::randn(&[c], 0.1, rng);
        norm.running_var = Tensor::vector((0..c).map(|_| rng.random_range(0.5..1.5)).collect());
    }
    Ok(p)
}

fn check(
    op: &dyn Differentiable,
    rng: &mut ChaCha8Rng,
    draw: impl FnMut(&mut ChaCha8Rng) -> Vec<Tensor<f64>>,
) -> Result<GradCheckReport> {
    let eps = gradcheck::DEFAULT_EPS;
    let inputs = gradcheck::sample_smooth_inputs(op, rng, eps, draw)?;
    gradcheck::grad_check(op, &inputs, eps)
}

fn tagged(mut report: GradCheckReport, tag: &str) -> GradCheckReport {
    report.op = format!("{}[{tag}]", report.op);
    report
}

/// Finite-difference reports for every differentiable kernel, the ranking
/// loss and the end-to-end objective.
pub fn gradient_suite(seed: u64) -> Result<Vec<GradCheckReport>> {
    use gradcheck::*;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = |shape: &[usize], r: &mut ChaCha8Rng| Tensor::<f64>::randn(shape, 1.0, r);
    let mut out = vec![
        check(&MatMulOp, &mut rng, |r| vec![n(&[3, 4], r), n(&[4, 5], r)])?,
        tagged(check(&Conv2dOp, &mut rng, |r| vec![n(&[4, 3, 2], r), n(&[3, 3, 2, 3], r), n(&[3], r)])?, "3x3"),
        tagged(check(&Conv2dOp, &mut rng, |r| vec![n(&[3, 3, 2], r), n(&[1, 1, 2, 4], r), n(&[4], r)])?, "1x1"),
        check(&SoftmaxOp, &mut rng, |r| vec![n(&[4, 5], r)])?,
        check(&Pointwise::Relu, &mut rng, |r| vec![n(&[3, 4], r)])?,
        check(&Pointwise::Sigmoid, &mut rng, |r| vec![n(&[3, 4], r)])?,
        check(&Pointwise::Add, &mut rng, |r| vec![n(&[2, 3, 4], r), n(&[4], r)])?,
        tagged(check(&Pointwise::Mul, &mut rng, |r| vec![n(&[2, 3, 4], r), n(&[4], r)])?, "broadcast"),
        tagged(check(&Pointwise::Mul, &mut rng, |r| vec![n(&[3, 4], r), n(&[3, 4], r)])?, "same_shape"),
        check(&GlobalAvgPoolOp, &mut rng, |r| vec![n(&[3, 2, 4], r)])?,
    ];
    for mode in [Mode::Train, Mode::Eval] {
        let mut state = BatchNormState::<f64>::new(3);
        state.running_mean = n(&[3], &mut rng);
        state.running_var = Tensor::vector(vec![0.5, 1.0, 2.0]);
        let op = BatchNormOp { state, mode };
        out.push(check(&op, &mut rng, |r| vec![n(&[2, 2, 3, 3], r), n(&[3], r), n(&[3], r)])?);
    }
    for aggregate in [TopKAggregate::Mean, TopKAggregate::Sum] {
        let op = TopKPoolOp { k: 3, aggregate };
        out.push(check(&op, &mut rng, |r| vec![n(&[3, 3], r)])?);
    }
    for norm in [LossNorm::MeanPairs, LossNorm::Sum] {
        let op = RankingLossOp {
            labels: LabelSet::new(vec![1, 4], 6)?,
            norm,
        };
        out.push(check(&op, &mut rng, |r| vec![n(&[6], r)])?);
    }
    out.push(end_to_end_check(seed)?);
    Ok(out)
}

/// End-to-end check on the tiny config. Parameter draws whose forward pass
/// sits near a kink are rejected and redrawn with the next seed.
pub fn end_to_end_check(seed: u64) -> Result<GradCheckReport> {
    let eps = gradcheck::DEFAULT_EPS;
    let mut last = None;
    for attempt in 0..100u64 {
        let op = EndToEnd::tiny(seed.wrapping_add(attempt))?;
        let inputs = op.inputs();
        if op.kink_distance(&inputs)? >= gradcheck::kink_margin(eps) {
            return gradcheck::grad_check(&op, &inputs, eps);
        }
        last = Some(op.kink_distance(&inputs)?);
    }
    Err(crate::Error::Numeric(format!(
        "end_to_end: no smooth parameter draw found (closest kink {last:?})"
    )))
}
