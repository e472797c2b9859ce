//! Ranking metrics: per-class average precision, mAP and F1 at top-K.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::train::LabelSet;

/// Average precision per class and their mean over classes with positives.
#[derive(Debug, Clone, PartialEq)]
pub struct MeanAp {
    /// `None` for classes without a positive image.
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum F1Averaging {
    /// Corpus-level hit counts.
    #[default]
    Micro,
    /// Per-image precision and recall averaged over images.
    Macro,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub p: f64,
    pub r: f64,
    pub f1: f64,
}

impl F1Score {
    pub fn new(p: f64, r: f64) -> Self {
        let f1 = if p + r > 0.0 { 2.0 * p * r / (p + r) } else { 0.0 };
        Self { p, r, f1 }
    }
}

fn check_inputs<T: Real>(scores: &Tensor<T>, labels: &[LabelSet]) -> Result<(usize, usize)> {
    if scores.rank() != 2 {
        return Err(Error::Dimension(format!(
            "scores must be [images, classes], got {:?}",
            scores.shape()
        )));
    }
    let (n, c) = (scores.shape()[0], scores.shape()[1]);
    if n == 0 || c == 0 {
        return Err(Error::Metric("empty score matrix".into()));
    }
    if labels.len() != n {
        return Err(Error::Metric(format!("{} label sets for {n} images", labels.len())));
    }
    if let Some(l) = labels.iter().find(|l| l.classes() != c) {
        return Err(Error::Label(format!(
            "label set over {} classes for {c} score columns",
            l.classes()
        )));
    }
    if !scores.all_finite() {
        return Err(Error::Numeric("non-finite score".into()));
    }
    Ok((n, c))
}

/// Descending by value, ties broken by smaller index.
fn ranked(values: &[f64]) -> Vec<usize> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(Ordering::Equal)
            .then(a.cmp(&b))
    });
    order
}

/// AP of one ranking; `None` without positives.
pub fn average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let total = positive.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in ranked(scores).iter().enumerate() {
        if positive[i] {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Some(sum / total as f64)
}

pub fn mean_average_precision<T: Real>(scores: &Tensor<T>, labels: &[LabelSet]) -> Result<MeanAp> {
    let (n, c) = check_inputs(scores, labels)?;
    let s = scores.data();
    let per_class: Vec<Option<f64>> = (0..c)
        .map(|class| {
            let column: Vec<f64> = (0..n).map(|i| s[i * c + class].as_f64()).collect();
            let positive: Vec<bool> = labels.iter().map(|l| l.contains(class)).collect();
            average_precision(&column, &positive)
        })
        .collect();
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::Metric("no class has a positive image".into()));
    }
    let map = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(MeanAp { per_class, map })
}

/// Top-`k` class indices of one score row, ties to the smaller index.
pub fn top_classes(row: &[f64], k: usize) -> Vec<usize> {
    let mut order = ranked(row);
    order.truncate(k);
    order
}

pub fn f1_at_k<T: Real>(
    scores: &Tensor<T>,
    labels: &[LabelSet],
    k: usize,
    averaging: F1Averaging,
) -> Result<F1Score> {
    let (n, c) = check_inputs(scores, labels)?;
    if k == 0 || k > c {
        return Err(Error::Parameter(format!("K = {k} outside [1, {c}]")));
    }
    let hits: Vec<usize> = (0..n)
        .map(|i| {
            let row: Vec<f64> = scores.row(i).iter().map(|v| v.as_f64()).collect();
            top_classes(&row, k).iter().filter(|&&j| labels[i].contains(j)).count()
        })
        .collect();
    Ok(match averaging {
        F1Averaging::Micro => {
            let total_hits: usize = hits.iter().sum();
            let positives: usize = labels.iter().map(LabelSet::count).sum();
            let p = total_hits as f64 / (k * n) as f64;
            let r = if positives == 0 { 0.0 } else { total_hits as f64 / positives as f64 };
            F1Score::new(p, r)
        }
        F1Averaging::Macro => {
            let p = hits.iter().map(|&h| h as f64 / k as f64).sum::<f64>() / n as f64;
            let with_pos: Vec<f64> = hits
                .iter()
                .zip(labels)
                .filter(|(_, l)| l.count() > 0)
                .map(|(&h, l)| h as f64 / l.count() as f64)
                .collect();
            let r = if with_pos.is_empty() {
                0.0
            } else {
                with_pos.iter().sum::<f64>() / with_pos.len() as f64
            };
            F1Score::new(p, r)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvalCounts {
    pub images: usize,
    pub classes: usize,
    pub positives: usize,
    /// Classes without a positive image, excluded from `map`.
    pub classes_without_positives: usize,
}

/// Serialized evaluation summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub map: f64,
    pub per_class_ap: BTreeMap<String, Option<f64>>,
    /// Keyed by K in decimal.
    pub f1: BTreeMap<String, F1Score>,
    pub averaging: F1Averaging,
    pub counts: EvalCounts,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }
}

/// Compute mAP and F1 for every K in `ks`. `class_names` labels the score
/// columns.
pub fn evaluate<T: Real>(
    scores: &Tensor<T>,
    labels: &[LabelSet],
    class_names: &[String],
    ks: &[usize],
    averaging: F1Averaging,
) -> Result<EvalReport> {
    let (n, c) = check_inputs(scores, labels)?;
    if class_names.len() != c {
        return Err(Error::Metric(format!("{} class names for {c} score columns", class_names.len())));
    }
    let ap = mean_average_precision(scores, labels)?;
    let mut f1 = BTreeMap::new();
    for &k in ks {
        f1.insert(k.to_string(), f1_at_k(scores, labels, k, averaging)?);
    }
    let per_class_ap = class_names.iter().cloned().zip(ap.per_class.iter().copied()).collect();
    Ok(EvalReport {
        map: ap.map,
        per_class_ap,
        f1,
        averaging,
        counts: EvalCounts {
            images: n,
            classes: c,
            positives: labels.iter().map(LabelSet::count).sum(),
            classes_without_positives: ap.per_class.iter().filter(|a| a.is_none()).count(),
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn labels(sets: &[&[usize]], c: usize) -> Vec<LabelSet> {
        sets.iter().map(|s| LabelSet::new(s.to_vec(), c).unwrap()).collect()
    }

    fn column(v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(&[v.len(), 1], v.to_vec()).unwrap()
    }

    #[test]
    fn perfect_ranking() {
        let m = mean_average_precision(&column(&[0.9, 0.1]), &labels(&[&[0], &[]], 1)).unwrap();
        assert_eq!(m.map, 1.0);
    }

    #[test]
    fn neg_pos_pos() {
        let m = mean_average_precision(&column(&[3., 2., 1.]), &labels(&[&[], &[0], &[0]], 1)).unwrap();
        assert!((m.map - (0.5 + 2.0 / 3.0) / 2.0).abs() < 1e-15);
    }

    #[test]
    fn reversed_single_positive() {
        let m = mean_average_precision(&column(&[4., 3., 2., 1.]), &labels(&[&[], &[], &[], &[0]], 1))
            .unwrap();
        assert_eq!(m.map, 0.25);
    }

    #[test]
    fn ties_favour_smaller_index() {
        let a = mean_average_precision(&column(&[1., 1.]), &labels(&[&[0], &[]], 1)).unwrap();
        let b = mean_average_precision(&column(&[1., 1.]), &labels(&[&[], &[0]], 1)).unwrap();
        assert_eq!((a.map, b.map), (1.0, 0.5));
    }

    #[test]
    fn classes_without_positives_are_excluded() {
        let s = Tensor::from_vec(&[2, 2], vec![1., 0., 0., 1.]).unwrap();
        let m = mean_average_precision(&s, &labels(&[&[0], &[]], 2)).unwrap();
        assert_eq!(m.per_class, vec![Some(1.0), None]);
        assert_eq!(m.map, 1.0);
        let none = mean_average_precision(&s, &labels(&[&[], &[]], 2));
        assert!(matches!(none, Err(Error::Metric(_))));
    }

    #[test]
    fn f1_counting_example() {
        // positives {0, 1}; top-3 = {0, 2, 3}
        let s = Tensor::from_vec(&[1, 4], vec![0.9, 0.0, 0.8, 0.7]).unwrap();
        let f = f1_at_k(&s, &labels(&[&[0, 1]], 4), 3, F1Averaging::Micro).unwrap();
        assert!((f.p - 1.0 / 3.0).abs() < 1e-15);
        assert_eq!(f.r, 0.5);
        assert!((f.f1 - 0.4).abs() < 1e-15);
    }

    #[test]
    fn f1_perfect_recall() {
        let s = Tensor::from_vec(&[2, 3], vec![0.9, 0.8, 0.1, 0.2, 0.1, 0.7]).unwrap();
        let f = f1_at_k(&s, &labels(&[&[0, 1], &[2, 0]], 3), 2, F1Averaging::Micro).unwrap();
        assert_eq!((f.p, f.r, f.f1), (1.0, 1.0, 1.0));
    }

    #[test]
    fn f1_zero_when_nothing_hits() {
        let s = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let f = f1_at_k(&s, &labels(&[&[1]], 2), 1, F1Averaging::Macro).unwrap();
        assert_eq!((f.p, f.r, f.f1), (0.0, 0.0, 0.0));
    }

    #[test]
    fn k_out_of_range() {
        let s = Tensor::from_vec(&[1, 2], vec![1.0, 0.0]).unwrap();
        let l = labels(&[&[1]], 2);
        assert!(matches!(f1_at_k(&s, &l, 3, F1Averaging::Micro), Err(Error::Parameter(_))));
        assert!(matches!(f1_at_k(&s, &l, 0, F1Averaging::Micro), Err(Error::Parameter(_))));
    }

    #[test]
    fn report_json_field_names() {
        let s = Tensor::from_vec(&[2, 3], vec![0.9, 0.8, 0.1, 0.2, 0.1, 0.7]).unwrap();
        let names: Vec<String> = ["a", "b", "c"].iter().map(|s| s.to_string()).collect();
        let r = evaluate(&s, &labels(&[&[0], &[2]], 3), &names, &[1, 3], F1Averaging::Micro).unwrap();
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["map"], 1.0);
        assert_eq!(v["per_class_ap"]["b"], serde_json::Value::Null);
        assert_eq!(v["f1"]["1"]["p"], 1.0);
        assert!(v["f1"]["3"]["f1"].is_number());
        assert_eq!(v["counts"]["classes_without_positives"], 1);
    }
}
