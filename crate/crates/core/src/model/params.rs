use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::ModelConfig;
use crate::error::Result;
use crate::ops::BatchNormState;
use crate::tensor::{Real, Tensor};

/// A 1×1 convolution, stored as a `[c_in, c_out]` matrix plus bias.
#[derive(Debug, Clone, PartialEq)]
pub struct Pointwise<T: Real = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// A 3×3 convolution with kernel `[3, 3, c_in, c_out]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3<T: Real = f32> {
    pub kernel: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Every weight of the head.
///
/// Field order here is the canonical order used by [`BiamParams::learnable`]
/// and by the checkpoint format.
#[derive(Debug, Clone, PartialEq)]
pub struct BiamParams<T: Real = f32> {
    pub config: ModelConfig,
    /// 3×3 conv producing the latent map shared by both context blocks.
    pub input_conv: Conv3<T>,
    pub input_norm: BatchNormState<T>,
    /// Per-head `[d_r, d_r/H]` projections.
    pub query: Vec<Tensor<T>>,
    pub key: Vec<Tensor<T>>,
    pub value: Vec<Tensor<T>>,
    /// `[d_r, d_r]` projection of the concatenated heads.
    pub out_proj: Tensor<T>,
    /// Residual sub-network of the region block: 1×1 → ReLU → 1×1.
    pub context_in: Pointwise<T>,
    pub context_out: Pointwise<T>,
    /// `[d_g, d_r]` projection of the global feature into a channel key.
    pub scene_proj: Tensor<T>,
    pub scene_conv: Conv3<T>,
    pub scene_norm: BatchNormState<T>,
    /// `[2·d_r, d_r]` channel-reducing fusion of both blocks.
    pub fuse: Pointwise<T>,
    /// `[d_r, d_a]` map from visual to attribute space.
    pub attr_proj: Tensor<T>,
}

fn glorot<T: Real>(shape: &[usize], fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Tensor::uniform(shape, bound, rng)
}

fn matrix<T: Real>(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Tensor<T> {
    glorot(&[rows, cols], rows, cols, rng)
}

fn pointwise<T: Real>(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Pointwise<T> {
    Pointwise {
        weight: matrix(c_in, c_out, rng),
        bias: Tensor::zeros(&[c_out]),
    }
}

fn conv3<T: Real>(c_in: usize, c_out: usize, rng: &mut ChaCha8Rng) -> Conv3<T> {
    Conv3 {
        kernel: glorot(&[3, 3, c_in, c_out], 9 * c_in, 9 * c_out, rng),
        bias: Tensor::zeros(&[c_out]),
    }
}

impl<T: Real> BiamParams<T> {
    /// Glorot-uniform kernels, zero biases, identity batch norm. Deterministic
    /// in `config.seed`.
    pub fn init(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let (d_r, dh) = (config.d_r, config.head_dim());
        let input_conv = conv3(d_r, d_r, &mut rng);
        let heads = |rng: &mut ChaCha8Rng| (0..config.heads).map(|_| matrix(d_r, dh, rng)).collect::<Vec<_>>();
        let query = heads(&mut rng);
        let key = heads(&mut rng);
        let value = heads(&mut rng);
        Ok(Self {
            config: *config,
            input_conv,
            input_norm: BatchNormState::new(d_r),
            query,
            key,
            value,
            out_proj: matrix(d_r, d_r, &mut rng),
            context_in: pointwise(d_r, d_r, &mut rng),
            context_out: pointwise(d_r, d_r, &mut rng),
            scene_proj: matrix(config.d_g, d_r, &mut rng),
            scene_conv: conv3(d_r, d_r, &mut rng),
            scene_norm: BatchNormState::new(d_r),
            fuse: pointwise(2 * d_r, d_r, &mut rng),
            attr_proj: matrix(d_r, config.d_a, &mut rng),
        })
    }

    /// All-zero tensors with this parameter layout; used as a gradient
    /// accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for t in out.learnable_mut() {
            t.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
        for norm in [&mut out.input_norm, &mut out.scene_norm] {
            norm.running_mean = Tensor::zeros_like(&norm.running_mean);
            norm.running_var = Tensor::zeros_like(&norm.running_var);
        }
        out
    }

    /// Learnable tensors with stable names, in canonical order.
    pub fn learnable(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<(String, &Tensor<T>)> = vec![
            ("input_conv.kernel".into(), &self.input_conv.kernel),
            ("input_conv.bias".into(), &self.input_conv.bias),
            ("input_norm.gamma".into(), &self.input_norm.gamma),
            ("input_norm.beta".into(), &self.input_norm.beta),
        ];
        for (kind, set) in [("query", &self.query), ("key", &self.key), ("value", &self.value)] {
            for (i, t) in set.iter().enumerate() {
                out.push((format!("{kind}.{i}"), t));
            }
        }
        out.extend([
            ("out_proj".into(), &self.out_proj),
            ("context_in.weight".into(), &self.context_in.weight),
            ("context_in.bias".into(), &self.context_in.bias),
            ("context_out.weight".into(), &self.context_out.weight),
            ("context_out.bias".into(), &self.context_out.bias),
            ("scene_proj".into(), &self.scene_proj),
            ("scene_conv.kernel".into(), &self.scene_conv.kernel),
            ("scene_conv.bias".into(), &self.scene_conv.bias),
            ("scene_norm.gamma".into(), &self.scene_norm.gamma),
            ("scene_norm.beta".into(), &self.scene_norm.beta),
            ("fuse.weight".into(), &self.fuse.weight),
            ("fuse.bias".into(), &self.fuse.bias),
            ("attr_proj".into(), &self.attr_proj),
        ]);
        out
    }

    /// Mutable view in the same order as [`BiamParams::learnable`].
    pub fn learnable_mut(&mut self) -> Vec<&mut Tensor<T>> {
        let mut out = vec![
            &mut self.input_conv.kernel,
            &mut self.input_conv.bias,
            &mut self.input_norm.gamma,
            &mut self.input_norm.beta,
        ];
        out.extend(self.query.iter_mut());
        out.extend(self.key.iter_mut());
        out.extend(self.value.iter_mut());
        out.extend([
            &mut self.out_proj,
            &mut self.context_in.weight,
            &mut self.context_in.bias,
            &mut self.context_out.weight,
            &mut self.context_out.bias,
            &mut self.scene_proj,
            &mut self.scene_conv.kernel,
            &mut self.scene_conv.bias,
            &mut self.scene_norm.gamma,
            &mut self.scene_norm.beta,
            &mut self.fuse.weight,
            &mut self.fuse.bias,
            &mut self.attr_proj,
        ]);
        out
    }

    /// Number of learnable scalars.
    pub fn parameter_count(&self) -> usize {
        self.learnable().iter().map(|(_, t)| t.len()).sum()
    }

    /// Elementwise `self += other` over learnable tensors.
    pub fn accumulate(&mut self, other: &Self) -> Result<()> {
        let theirs: Vec<&Tensor<T>> = other.learnable().into_iter().map(|(_, t)| t).collect();
        for (mine, t) in self.learnable_mut().into_iter().zip(theirs) {
            mine.add_assign(t)?;
        }
        Ok(())
    }

    pub fn cast<U: Real>(&self) -> BiamParams<U> {
        let pw = |p: &Pointwise<T>| Pointwise {
            weight: p.weight.cast(),
            bias: p.bias.cast(),
        };
        let c3 = |c: &Conv3<T>| Conv3 {
            kernel: c.kernel.cast(),
            bias: c.bias.cast(),
        };
        let all = |v: &[Tensor<T>]| v.iter().map(Tensor::cast).collect();
        BiamParams {
            config: self.config,
            input_conv: c3(&self.input_conv),
            input_norm: self.input_norm.cast(),
            query: all(&self.query),
            key: all(&self.key),
            value: all(&self.value),
            out_proj: self.out_proj.cast(),
            context_in: pw(&self.context_in),
            context_out: pw(&self.context_out),
            scene_proj: self.scene_proj.cast(),
            scene_conv: c3(&self.scene_conv),
            scene_norm: self.scene_norm.cast(),
            fuse: pw(&self.fuse),
            attr_proj: self.attr_proj.cast(),
        }
    }
}
