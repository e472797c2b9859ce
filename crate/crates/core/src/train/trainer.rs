use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::{self, AdamState, DEFAULT_BETA1, DEFAULT_BETA2};
use super::loss::{ranking_loss, LabelSet, LossNorm};
use super::schedule::warmup_lr;
use crate::error::{Error, Result};
use crate::model::{self, BatchForward, BiamParams};
use crate::ops::Mode;
use crate::tensor::{Real, Tensor};

pub const MAX_WARMUP_STEPS: u64 = 500;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    /// `None` means 500 steps or one epoch, whichever is shorter.
    pub warmup_steps: Option<u64>,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub seed: u64,
    pub loss_norm: LossNorm,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 32,
            epochs: 40,
            warmup_steps: None,
            lr: 1e-3,
            beta1: DEFAULT_BETA1,
            beta2: DEFAULT_BETA2,
            seed: 0,
            loss_norm: LossNorm::MeanPairs,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if self.warmup_steps == Some(0) {
            return Err(Error::Config("warmup_steps must be at least 1".into()));
        }
        if !(self.lr >= 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} = {b} outside [0, 1)")));
            }
        }
        Ok(())
    }

    pub fn steps_per_epoch(&self, examples: usize) -> u64 {
        examples.div_ceil(self.batch_size) as u64
    }

    pub fn effective_warmup(&self, examples: usize) -> u64 {
        self.warmup_steps
            .unwrap_or_else(|| MAX_WARMUP_STEPS.min(self.steps_per_epoch(examples)))
            .max(1)
    }
}

/// One training image.
#[derive(Debug, Clone, Copy)]
pub struct Example<'a, T: Real = f32> {
    pub id: &'a str,
    pub region: &'a Tensor<T>,
    pub global: &'a Tensor<T>,
    pub labels: &'a LabelSet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    /// Learning rate of the last step in the epoch.
    pub lr: f64,
    pub steps: u64,
}

/// Check every example against the model geometry and label space.
pub fn validate_examples<T: Real>(
    config: &model::ModelConfig,
    classes: usize,
    data: &[Example<'_, T>],
) -> Result<()> {
    if data.is_empty() {
        return Err(Error::Dataset {
            image_id: String::new(),
            message: "training set is empty".into(),
        });
    }
    for ex in data {
        let fail = |message: String| Error::Dataset {
            image_id: ex.id.to_string(),
            message,
        };
        if ex.region.shape() != [config.h, config.w, config.d_r] {
            return Err(fail(format!(
                "region features {:?}, model expects [{}, {}, {}]",
                ex.region.shape(),
                config.h,
                config.w,
                config.d_r
            )));
        }
        if ex.global.shape() != [config.d_g] {
            return Err(fail(format!(
                "global feature {:?}, model expects [{}]",
                ex.global.shape(),
                config.d_g
            )));
        }
        if ex.labels.classes() != classes {
            return Err(fail(format!(
                "labels over {} classes, attribute matrix has {classes}",
                ex.labels.classes()
            )));
        }
    }
    Ok(())
}

/// Per-image losses and score gradients for one batch, normalised for a
/// batch update (mean over images for `MeanPairs`, plain sum for `Sum`).
pub struct BatchLoss<T: Real> {
    pub forward: BatchForward<T>,
    pub image_losses: Vec<T>,
    pub d_scores: Vec<Tensor<T>>,
}

pub fn batch_loss<T: Real>(
    params: &BiamParams<T>,
    batch: &[Example<'_, T>],
    attributes: &Tensor<T>,
    norm: LossNorm,
    mode: Mode,
) -> Result<BatchLoss<T>> {
    let inputs: Vec<(&Tensor<T>, &Tensor<T>)> = batch.iter().map(|e| (e.region, e.global)).collect();
    let forward = model::forward_batch(params, &inputs, attributes, mode)?;
    let batch_weight = match norm {
        LossNorm::MeanPairs => T::one() / T::lit(batch.len() as f64),
        LossNorm::Sum => T::one(),
    };
    let mut image_losses = Vec::with_capacity(batch.len());
    let mut d_scores = Vec::with_capacity(batch.len());
    for (out, ex) in forward.outputs.iter().zip(batch) {
        let (loss, ds) = ranking_loss(&out.scores, ex.labels, norm)?;
        image_losses.push(loss);
        d_scores.push(ds.scale(batch_weight));
    }
    Ok(BatchLoss {
        forward,
        image_losses,
        d_scores,
    })
}

/// Parameters, optimiser state and the global step counter.
#[derive(Debug, Clone)]
pub struct Trainer<T: Real = f32> {
    pub params: BiamParams<T>,
    pub optimizer: AdamState<T>,
    pub config: TrainConfig,
    pub step: u64,
}

impl<T: Real> Trainer<T> {
    pub fn new(params: BiamParams<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let optimizer = AdamState::for_params(&params, config.beta1, config.beta2);
        Ok(Self {
            params,
            optimizer,
            config,
            step: 0,
        })
    }

    /// Image order for `epoch`; a pure function of the seed and epoch index.
    pub fn epoch_order(&self, len: usize, epoch: usize) -> Vec<usize> {
        let mut order: Vec<usize> = (0..len).collect();
        let mix = (epoch as u64 + 1).wrapping_mul(0x9e37_79b9_7f4a_7c15);
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed ^ mix);
        order.shuffle(&mut rng);
        order
    }

    /// Shuffle, batch, and take one Adam step per batch. Returns the mean
    /// per-image loss over the epoch.
    pub fn train_epoch(
        &mut self,
        data: &[Example<'_, T>],
        attributes: &Tensor<T>,
        epoch: usize,
    ) -> Result<EpochStats> {
        validate_examples(&self.params.config, attributes.rows(), data)?;
        let warmup = self.config.effective_warmup(data.len());
        let order = self.epoch_order(data.len(), epoch);
        let mut loss_total = 0.0f64;
        let mut lr = 0.0;
        let mut steps = 0;
        for chunk in order.chunks(self.config.batch_size) {
            let batch: Vec<Example<'_, T>> = chunk.iter().map(|&i| data[i]).collect();
            let bl = batch_loss(&self.params, &batch, attributes, self.config.loss_norm, Mode::Train)?;
            loss_total += bl.image_losses.iter().map(|l| l.as_f64()).sum::<f64>();
            let grads = model::backward_batch(&self.params, &bl.forward.cache, &bl.d_scores)?;
            lr = warmup_lr(self.step, warmup, self.config.lr);
            adam::step_params(&mut self.params, &grads, &mut self.optimizer, T::lit(lr))?;
            bl.forward.norm_update.apply(&mut self.params);
            self.step += 1;
            steps += 1;
        }
        Ok(EpochStats {
            epoch,
            mean_loss: loss_total / data.len() as f64,
            lr,
            steps,
        })
    }
}
