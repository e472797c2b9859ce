//! Sort-free metric oracles and their exhaustive comparison against
//! [`crate::metrics`].

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::metrics::{self, F1Averaging, F1Score};
use crate::tensor::Tensor;
use crate::train::LabelSet;

/// `a` is ranked ahead of `b`: higher score, or equal score and smaller index.
fn ahead(values: &[f64], a: usize, b: usize) -> bool {
    values[a] > values[b] || (values[a] == values[b] && a < b)
}

/// AP from pairwise comparisons: each positive contributes
/// `(positives ranked at or above it) / (its rank)`.
pub fn oracle_average_precision(scores: &[f64], positive: &[bool]) -> Option<f64> {
    let total = positive.iter().filter(|&&p| p).count();
    if total == 0 {
        return None;
    }
    let mut sum = 0.0;
    for i in (0..scores.len()).filter(|&i| positive[i]) {
        let rank = 1 + (0..scores.len()).filter(|&j| ahead(scores, j, i)).count();
        let hits = 1 + (0..scores.len()).filter(|&j| positive[j] && ahead(scores, j, i)).count();
        sum += hits as f64 / rank as f64;
    }
    Some(sum / total as f64)
}

/// Mean AP over classes with positives; `scores[i][c]`, `labels[i][c]`.
pub fn oracle_map(scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Option<f64> {
    let classes = scores.first()?.len();
    let aps: Vec<f64> = (0..classes)
        .filter_map(|c| {
            let col: Vec<f64> = scores.iter().map(|r| r[c]).collect();
            let pos: Vec<bool> = labels.iter().map(|r| r[c]).collect();
            oracle_average_precision(&col, &pos)
        })
        .collect();
    if aps.is_empty() {
        None
    } else {
        Some(aps.iter().sum::<f64>() / aps.len() as f64)
    }
}

/// F1 at `k` where class `c` is predicted iff fewer than `k` classes rank
/// ahead of it.
pub fn oracle_f1(scores: &[Vec<f64>], labels: &[Vec<bool>], k: usize, averaging: F1Averaging) -> F1Score {
    let n = scores.len();
    let hits: Vec<usize> = scores
        .iter()
        .zip(labels)
        .map(|(row, lab)| {
            (0..row.len())
                .filter(|&c| lab[c] && (0..row.len()).filter(|&d| ahead(row, d, c)).count() < k)
                .count()
        })
        .collect();
    let positives: Vec<usize> = labels.iter().map(|l| l.iter().filter(|&&b| b).count()).collect();
    match averaging {
        F1Averaging::Micro => {
            let h: usize = hits.iter().sum();
            let p: usize = positives.iter().sum();
            F1Score::new(
                h as f64 / (k * n) as f64,
                if p == 0 { 0.0 } else { h as f64 / p as f64 },
            )
        }
        F1Averaging::Macro => {
            let prec = hits.iter().map(|&h| h as f64 / k as f64).sum::<f64>() / n as f64;
            let rec: Vec<f64> = hits
                .iter()
                .zip(&positives)
                .filter(|(_, &p)| p > 0)
                .map(|(&h, &p)| h as f64 / p as f64)
                .collect();
            let r = if rec.is_empty() { 0.0 } else { rec.iter().sum::<f64>() / rec.len() as f64 };
            F1Score::new(prec, r)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricOracleReport {
    pub cases: usize,
    pub max_abs_diff: f64,
}

impl MetricOracleReport {
    fn record(&mut self, a: f64, b: f64) {
        self.cases += 1;
        let d = if a == b { 0.0 } else { (a - b).abs() };
        self.max_abs_diff = self.max_abs_diff.max(if d.is_nan() { f64::INFINITY } else { d });
    }
}

fn to_tensor(scores: &[Vec<f64>]) -> Result<Tensor<f64>> {
    let (n, c) = (scores.len(), scores[0].len());
    Tensor::from_vec(&[n, c], scores.concat())
}

fn to_sets(labels: &[Vec<bool>]) -> Result<Vec<LabelSet>> {
    labels
        .iter()
        .map(|l| LabelSet::new((0..l.len()).filter(|&c| l[c]).collect(), l.len()))
        .collect()
}

/// Digits of `code` in base `base`, least significant first.
fn digits(mut code: usize, base: usize, len: usize) -> Vec<usize> {
    (0..len)
        .map(|_| {
            let d = code % base;
            code /= base;
            d
        })
        .collect()
}

fn compare_matrix(report: &mut MetricOracleReport, scores: &[Vec<f64>], labels: &[Vec<bool>]) -> Result<()> {
    let s = to_tensor(scores)?;
    let sets = to_sets(labels)?;
    if let Some(want) = oracle_map(scores, labels) {
        report.record(metrics::mean_average_precision(&s, &sets)?.map, want);
    }
    for k in 1..=scores[0].len() {
        for avg in [F1Averaging::Micro, F1Averaging::Macro] {
            let got = metrics::f1_at_k(&s, &sets, k, avg)?;
            let want = oracle_f1(scores, labels, k, avg);
            report.record(got.p, want.p);
            report.record(got.r, want.r);
            report.record(got.f1, want.f1);
        }
    }
    Ok(())
}

/// Compares [`metrics`] against the oracles on:
///
/// * AP: every labeling and every score vector over `{0, 1, 2}` for
///   `N ≤ 6` images (all tie patterns included);
/// * mAP and F1 for `N ≤ 6`, `C ≤ 3`: every label matrix paired with every
///   `{0, 1}` score matrix when `N·C ≤ 8`; beyond that every label matrix
///   (a seeded sample of 4096 when `N·C > 12`) with two seeded `{0, 1, 2}`
///   score matrices each.
pub fn metric_oracle_suite() -> Result<MetricOracleReport> {
    let mut report = MetricOracleReport { cases: 0, max_abs_diff: 0.0 };
    for n in 1..=6usize {
        for lab in 1..(1usize << n) {
            let positive: Vec<bool> = (0..n).map(|i| lab >> i & 1 == 1).collect();
            for code in 0..3usize.pow(n as u32) {
                let scores: Vec<f64> = digits(code, 3, n).into_iter().map(|d| d as f64).collect();
                let got = metrics::average_precision(&scores, &positive).expect("has positives");
                report.record(got, oracle_average_precision(&scores, &positive).expect("has positives"));
            }
        }
    }
    const SAMPLED_LABELINGS: usize = 4096;
    for n in 1..=6usize {
        for c in 1..=3usize {
            let cells = n * c;
            let shape = |bits: Vec<usize>| -> Vec<Vec<usize>> { bits.chunks(c).map(<[usize]>::to_vec).collect() };
            let mut rng = ChaCha8Rng::seed_from_u64((n * 8 + c) as u64);
            let labelings: Vec<usize> = if cells <= 12 {
                (0..1usize << cells).collect()
            } else {
                (0..SAMPLED_LABELINGS).map(|_| rng.random_range(0..1usize << cells)).collect()
            };
            for lab in labelings {
                let labels: Vec<Vec<bool>> = shape(digits(lab, 2, cells))
                    .into_iter()
                    .map(|r| r.into_iter().map(|b| b == 1).collect())
                    .collect();
                if cells <= 8 {
                    for code in 0..(1usize << cells) {
                        let scores: Vec<Vec<f64>> = shape(digits(code, 2, cells))
                            .into_iter()
                            .map(|r| r.into_iter().map(|d| d as f64).collect())
                            .collect();
                        compare_matrix(&mut report, &scores, &labels)?;
                    }
                } else {
                    for _ in 0..2 {
                        let scores: Vec<Vec<f64>> =
                            (0..n).map(|_| (0..c).map(|_| rng.random_range(0..3) as f64).collect()).collect();
                        compare_matrix(&mut report, &scores, &labels)?;
                    }
                }
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn oracle_matches_hand_values() {
        assert_eq!(oracle_average_precision(&[3., 2., 1.], &[false, true, true]), Some((0.5 + 2.0 / 3.0) / 2.0));
        assert_eq!(oracle_average_precision(&[4., 3., 2., 1.], &[false, false, false, true]), Some(0.25));
        let f = oracle_f1(&[vec![0.9, 0.0, 0.8, 0.7]], &[vec![true, true, false, false]], 3, F1Averaging::Micro);
        assert!((f.f1 - 0.4).abs() < 1e-15);
    }
}
