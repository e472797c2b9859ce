use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Positive class indices of one image out of `classes` labels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelSet {
    positives: Vec<usize>,
    classes: usize,
}

impl LabelSet {
    /// Duplicates are merged; indices must lie in `[0, classes)`.
    pub fn new(mut positives: Vec<usize>, classes: usize) -> Result<Self> {
        if let Some(&bad) = positives.iter().find(|&&p| p >= classes) {
            return Err(Error::Label(format!(
                "class index {bad} out of range for {classes} classes"
            )));
        }
        positives.sort_unstable();
        positives.dedup();
        Ok(Self { positives, classes })
    }

    pub fn positives(&self) -> &[usize] {
        &self.positives
    }

    pub fn classes(&self) -> usize {
        self.classes
    }

    pub fn count(&self) -> usize {
        self.positives.len()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.positives.binary_search(&class).is_ok()
    }

    pub fn multi_hot(&self) -> Vec<bool> {
        let mut y = vec![false; self.classes];
        for &p in &self.positives {
            y[p] = true;
        }
        y
    }
}

/// Scaling applied to the pairwise hinge sum of one image.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossNorm {
    /// Divide by the number of (positive, negative) pairs.
    #[default]
    MeanPairs,
    /// Plain double sum.
    Sum,
}

/// Pairwise ranking hinge `Σ_{p ∈ pos, n ∉ pos} max(s[n] − s[p] + 1, 0)` and
/// its subgradient with respect to the scores.
pub fn ranking_loss<T: Real>(
    scores: &Tensor<T>,
    labels: &LabelSet,
    norm: LossNorm,
) -> Result<(T, Tensor<T>)> {
    if scores.rank() != 1 || scores.len() != labels.classes() {
        return Err(Error::Label(format!(
            "{} labels for scores of shape {:?}",
            labels.classes(),
            scores.shape()
        )));
    }
    let s = scores.data();
    let mut grad = vec![T::zero(); s.len()];
    let n_pos = labels.count();
    let n_neg = s.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Ok((T::zero(), Tensor::vector(grad)));
    }
    let weight = match norm {
        LossNorm::MeanPairs => T::one() / T::lit((n_pos * n_neg) as f64),
        LossNorm::Sum => T::one(),
    };
    let hot = labels.multi_hot();
    let mut total = T::zero();
    for &p in labels.positives() {
        for n in (0..s.len()).filter(|&n| !hot[n]) {
            let margin = s[n] - s[p] + T::one();
            if margin > T::zero() {
                total = total + margin;
                grad[n] = grad[n] + weight;
                grad[p] = grad[p] - weight;
            }
        }
    }
    Ok((total * weight, Tensor::vector(grad)))
}

/// Smallest |s[n] − s[p] + 1| over all pairs; zero means the hinge is at
/// its corner.
pub fn hinge_distance<T: Real>(scores: &[T], labels: &LabelSet) -> f64 {
    let hot = labels.multi_hot();
    let mut best = f64::INFINITY;
    for &p in labels.positives() {
        for n in (0..scores.len()).filter(|&n| !hot[n]) {
            best = best.min((scores[n] - scores[p] + T::one()).abs().as_f64());
        }
    }
    best
}
