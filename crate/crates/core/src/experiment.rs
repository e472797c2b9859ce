//! Dataset-level training and evaluation.

use serde::{Deserialize, Serialize};

use crate::data::{Dataset, LabelSpace, LabeledImage, Split};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalReport, F1Averaging};
use crate::model::{predict, BiamParams};
use crate::tensor::Tensor;
use crate::train::{EpochStats, Example, Trainer};

/// Label space used at evaluation time.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Unseen classes only.
    #[default]
    Zsl,
    /// Seen and unseen classes together.
    Gzsl,
    /// Seen classes only.
    Standard,
}

impl EvalMode {
    pub fn space(self) -> LabelSpace {
        match self {
            EvalMode::Zsl => LabelSpace::Unseen,
            EvalMode::Gzsl => LabelSpace::All,
            EvalMode::Standard => LabelSpace::Seen,
        }
    }
}

const SCORE_CHUNK: usize = 64;

/// Eval-mode scores `[images, classes]`.
pub fn score_images(
    params: &BiamParams,
    images: &[LabeledImage<'_>],
    attributes: &Tensor<f32>,
) -> Result<Tensor<f32>> {
    let classes = attributes.rows();
    let mut data = Vec::with_capacity(images.len() * classes);
    for chunk in images.chunks(SCORE_CHUNK) {
        let inputs: Vec<_> = chunk.iter().map(|im| (&im.record.region, &im.record.global)).collect();
        for maps in predict(params, &inputs, attributes)? {
            data.extend_from_slice(maps.scores.data());
        }
    }
    Tensor::from_vec(&[images.len(), classes], data)
}

/// Scores `split` in the label space of `mode` and builds a report.
pub fn evaluate_split(
    params: &BiamParams,
    dataset: &Dataset,
    split: Split,
    mode: EvalMode,
    ks: &[usize],
    averaging: F1Averaging,
) -> Result<EvalReport> {
    let space = mode.space();
    let attributes = dataset.attributes(space)?;
    if attributes.dim() != params.config.d_a {
        return Err(Error::Dimension(format!(
            "{}-d embeddings for a model with d_a = {}",
            attributes.dim(),
            params.config.d_a
        )));
    }
    let images = dataset.images(split, space)?;
    let scores = score_images(params, &images, attributes.matrix())?;
    let labels: Vec<_> = images.iter().map(|im| im.labels.clone()).collect();
    evaluate(&scores, &labels, attributes.names(), ks, averaging)
}

/// Returned by the per-epoch callback of [`train_dataset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Control {
    Continue,
    Stop,
}

/// Trains on the `train` split against seen-class embeddings for
/// `trainer.config.epochs` epochs or until `on_epoch` returns `Stop`.
pub fn train_dataset(
    trainer: &mut Trainer,
    dataset: &Dataset,
    mut on_epoch: impl FnMut(&Trainer, &EpochStats) -> Result<Control>,
) -> Result<Vec<EpochStats>> {
    dataset.store.geometry().check_model(&trainer.params.config)?;
    let attributes = dataset.attributes(LabelSpace::Seen)?;
    if attributes.dim() != trainer.params.config.d_a {
        return Err(Error::Dimension(format!(
            "{}-d embeddings for a model with d_a = {}",
            attributes.dim(),
            trainer.params.config.d_a
        )));
    }
    let images = dataset.images(Split::Train, LabelSpace::Seen)?;
    let examples: Vec<Example<'_>> = images
        .iter()
        .map(|im| Example {
            id: &im.record.id,
            region: &im.record.region,
            global: &im.record.global,
            labels: &im.labels,
        })
        .collect();
    let mut history = Vec::with_capacity(trainer.config.epochs);
    for epoch in 0..trainer.config.epochs {
        let stats = trainer.train_epoch(&examples, attributes.matrix(), epoch)?;
        let control = on_epoch(trainer, &stats)?;
        history.push(stats);
        if control == Control::Stop {
            break;
        }
    }
    Ok(history)
}
