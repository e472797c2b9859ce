//! Central finite-difference verification of backward rules.
//!
//! Every kernel is wrapped as a [`Differentiable`] so the checker can drive
//! it generically. Checks run in `f64`; in `f32` the truncation and rounding
//! errors of the difference quotient swamp the signal.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::ops::{self, BatchNormState, Mode, TopKAggregate};
use crate::tensor::Tensor;

pub const DEFAULT_EPS: f64 = 1e-5;

/// A forward map from input tensors to one output tensor together with its
/// vector-Jacobian product.
pub trait Differentiable {
    fn name(&self) -> String;

    fn forward(&self, inputs: &[Tensor<f64>]) -> Result<Tensor<f64>>;

    /// One gradient per input, each shaped like that input.
    fn backward(&self, inputs: &[Tensor<f64>], upstream: &Tensor<f64>) -> Result<Vec<Tensor<f64>>>;

    /// Distance from `inputs` to the nearest point where the map is not
    /// differentiable (ReLU kinks, top-k ties, hinge corners).
    fn kink_distance(&self, _inputs: &[Tensor<f64>]) -> Result<f64> {
        Ok(f64::INFINITY)
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub op: String,
    /// max |analytic − numeric| / max(1, |numeric|) over every input coordinate
    pub max_rel_error: f64,
    pub coordinates: usize,
}

/// Compare the analytic gradient of `⟨w, f(x)⟩` against central differences,
/// where `w` is a fixed pseudo-random weighting of the output.
pub fn grad_check(
    op: &dyn Differentiable,
    inputs: &[Tensor<f64>],
    eps: f64,
) -> Result<GradCheckReport> {
    let margin = kink_margin(eps);
    let kink = op.kink_distance(inputs)?;
    if kink < margin {
        return Err(Error::Parameter(format!(
            "{}: inputs lie within {kink:e} of a non-smooth point (need {margin:e})",
            op.name()
        )));
    }
    let out = op.forward(inputs)?;
    if !out.all_finite() {
        return Err(Error::Numeric(format!("{}: non-finite forward output", op.name())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(0x9e37_79b9);
    let weights = Tensor::from_vec(
        out.shape(),
        (0..out.len()).map(|_| rng.random_range(0.5..1.5)).collect(),
    )?;
    let objective = |xs: &[Tensor<f64>]| -> Result<f64> {
        let y = op.forward(xs)?;
        let v = y.dot(&weights)?;
        if v.is_finite() {
            Ok(v)
        } else {
            Err(Error::Numeric(format!("{}: non-finite objective", op.name())))
        }
    };
    let analytic = op.backward(inputs, &weights)?;
    if analytic.len() != inputs.len() {
        return Err(Error::Dimension(format!(
            "{}: backward returned {} gradients for {} inputs",
            op.name(),
            analytic.len(),
            inputs.len()
        )));
    }
    let mut worst = 0.0f64;
    let mut coordinates = 0;
    let mut probe = inputs.to_vec();
    for (slot, grad) in analytic.iter().enumerate() {
        grad.expect_same_shape(&inputs[slot])?;
        for j in 0..inputs[slot].len() {
            let orig = inputs[slot].data()[j];
            probe[slot].data_mut()[j] = orig + eps;
            let plus = objective(&probe)?;
            probe[slot].data_mut()[j] = orig - eps;
            let minus = objective(&probe)?;
            probe[slot].data_mut()[j] = orig;
            let numeric = (plus - minus) / (2.0 * eps);
            let err = (grad.data()[j] - numeric).abs() / numeric.abs().max(1.0);
            if !err.is_finite() {
                return Err(Error::Numeric(format!("{}: non-finite gradient", op.name())));
            }
            worst = worst.max(err);
            coordinates += 1;
        }
    }
    Ok(GradCheckReport {
        op: op.name(),
        max_rel_error: worst,
        coordinates,
    })
}

/// Minimum kink distance accepted for a given step size.
pub fn kink_margin(eps: f64) -> f64 {
    (eps * 100.0).max(1e-4)
}

/// Draw inputs until they sit far enough from every non-smooth point.
pub fn sample_smooth_inputs<R: Rng>(
    op: &dyn Differentiable,
    rng: &mut R,
    eps: f64,
    mut draw: impl FnMut(&mut R) -> Vec<Tensor<f64>>,
) -> Result<Vec<Tensor<f64>>> {
    const ATTEMPTS: usize = 1000;
    for _ in 0..ATTEMPTS {
        let inputs = draw(rng);
        if op.kink_distance(&inputs)? >= kink_margin(eps) {
            return Ok(inputs);
        }
    }
    Err(Error::Numeric(format!(
        "{}: no smooth input found in {ATTEMPTS} draws",
        op.name()
    )))
}

fn min_abs(values: &[f64]) -> f64 {
    values.iter().fold(f64::INFINITY, |m, v| m.min(v.abs()))
}

/// Gap between the k-th and (k+1)-th largest values; zero means a tie at the
/// selection boundary.
pub fn topk_boundary_gap(values: &[f64], k: usize) -> f64 {
    if k >= values.len() {
        return f64::INFINITY;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(|a, b| b.partial_cmp(a).unwrap_or(std::cmp::Ordering::Equal));
    sorted[k - 1] - sorted[k]
}

pub struct MatMulOp;

impl Differentiable for MatMulOp {
    fn name(&self) -> String {
        "matmul".into()
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        ops::matmul(&x[0], &x[1])
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (da, db) = ops::matmul_backward(&x[0], &x[1], g)?;
        Ok(vec![da, db])
    }
}

/// Inputs: feature map, kernel, bias.
pub struct Conv2dOp;

impl Differentiable for Conv2dOp {
    fn name(&self) -> String {
        "conv2d".into()
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        ops::conv2d(&x[0], &x[1], Some(&x[2]))
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let gr = ops::conv2d_backward(&x[0], &x[1], g)?;
        Ok(vec![gr.input, gr.kernel, gr.bias])
    }
}

pub struct SoftmaxOp;

impl Differentiable for SoftmaxOp {
    fn name(&self) -> String {
        "softmax_rows".into()
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        ops::softmax_rows(&x[0])
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let y = ops::softmax_rows(&x[0])?;
        Ok(vec![ops::softmax_rows_backward(&y, g)?])
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Pointwise {
    Relu,
    Sigmoid,
    Add,
    Mul,
}

impl Differentiable for Pointwise {
    fn name(&self) -> String {
        format!("{self:?}").to_lowercase()
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        match self {
            Self::Relu => Ok(ops::relu(&x[0])),
            Self::Sigmoid => Ok(ops::sigmoid(&x[0])),
            Self::Add => ops::add(&x[0], &x[1]),
            Self::Mul => ops::mul(&x[0], &x[1]),
        }
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        match self {
            Self::Relu => Ok(vec![ops::relu_backward(&x[0], g)?]),
            Self::Sigmoid => Ok(vec![ops::sigmoid_backward(&ops::sigmoid(&x[0]), g)?]),
            Self::Add => {
                let (a, b) = ops::add_backward(&x[0], &x[1], g)?;
                Ok(vec![a, b])
            }
            Self::Mul => {
                let (a, b) = ops::mul_backward(&x[0], &x[1], g)?;
                Ok(vec![a, b])
            }
        }
    }
    fn kink_distance(&self, x: &[Tensor<f64>]) -> Result<f64> {
        Ok(match self {
            Self::Relu => min_abs(x[0].data()),
            _ => f64::INFINITY,
        })
    }
}

/// Inputs: activations `[B, h, w, c]`, gamma, beta. Running statistics are
/// taken from `state` and never written back.
pub struct BatchNormOp {
    pub state: BatchNormState<f64>,
    pub mode: Mode,
}

impl Differentiable for BatchNormOp {
    fn name(&self) -> String {
        format!("batchnorm2d[{:?}]", self.mode).to_lowercase()
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let mut st = self.state.clone();
        st.gamma = x[1].clone();
        st.beta = x[2].clone();
        Ok(ops::batchnorm2d(&x[0], &mut st, self.mode)?.0)
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let mut st = self.state.clone();
        st.gamma = x[1].clone();
        st.beta = x[2].clone();
        let (_, cache) = ops::batchnorm2d(&x[0], &mut st, self.mode)?;
        let gr = ops::batchnorm2d_backward(&cache, &x[1], g)?;
        Ok(vec![gr.input, gr.gamma, gr.beta])
    }
}

pub struct GlobalAvgPoolOp;

impl Differentiable for GlobalAvgPoolOp {
    fn name(&self) -> String {
        "global_avg_pool".into()
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        Ok(ops::global_avg_pool(&x[0]))
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        Ok(vec![ops::global_avg_pool_backward(x[0].shape(), g)?])
    }
}

/// Input: one `h × w` map; output: a single pooled value.
pub struct TopKPoolOp {
    pub k: usize,
    pub aggregate: TopKAggregate,
}

impl Differentiable for TopKPoolOp {
    fn name(&self) -> String {
        format!("topk_pool[k={},{:?}]", self.k, self.aggregate).to_lowercase()
    }
    fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
        let (v, _) = ops::topk_pool(x[0].data(), self.k, self.aggregate)?;
        Ok(Tensor::scalar(v))
    }
    fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
        let (_, idx) = ops::topk_pool(x[0].data(), self.k, self.aggregate)?;
        let grad = ops::topk_pool_backward(x[0].len(), &idx, self.aggregate, g.data()[0]);
        Ok(vec![Tensor::from_vec(x[0].shape(), grad)?])
    }
    fn kink_distance(&self, x: &[Tensor<f64>]) -> Result<f64> {
        Ok(topk_boundary_gap(x[0].data(), self.k))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_inputs_on_a_kink() {
        let x = vec![Tensor::vector(vec![0.0, 1.0])];
        assert!(grad_check(&Pointwise::Relu, &x, DEFAULT_EPS).is_err());
    }

    #[test]
    fn detects_a_wrong_gradient() {
        struct Broken;
        impl Differentiable for Broken {
            fn name(&self) -> String {
                "broken".into()
            }
            fn forward(&self, x: &[Tensor<f64>]) -> Result<Tensor<f64>> {
                Ok(x[0].map(|v| v * v))
            }
            fn backward(&self, x: &[Tensor<f64>], g: &Tensor<f64>) -> Result<Vec<Tensor<f64>>> {
                Ok(vec![x[0].zip_map(g, |v, g| v * g)?])
            }
        }
        let x = vec![Tensor::vector(vec![1.0, 2.0])];
        let r = grad_check(&Broken, &x, DEFAULT_EPS).unwrap();
        assert!(r.max_rel_error > 0.1);
    }

    #[test]
    fn boundary_gap() {
        assert_eq!(topk_boundary_gap(&[3.0, 1.0, 2.0], 1), 1.0);
        assert_eq!(topk_boundary_gap(&[2.0, 2.0], 1), 0.0);
        assert_eq!(topk_boundary_gap(&[2.0, 2.0], 2), f64::INFINITY);
    }
}
