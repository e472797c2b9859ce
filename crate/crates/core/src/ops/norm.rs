use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPSILON: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Train,
    Eval,
}

/// Per-channel batch normalisation parameters and running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchNormState<T: Real = f32> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: T,
    pub epsilon: T,
}

impl<T: Real> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            momentum: T::lit(BN_MOMENTUM),
            epsilon: T::lit(BN_EPSILON),
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn cast<U: Real>(&self) -> BatchNormState<U> {
        BatchNormState {
            gamma: self.gamma.cast(),
            beta: self.beta.cast(),
            running_mean: self.running_mean.cast(),
            running_var: self.running_var.cast(),
            momentum: U::lit(self.momentum.as_f64()),
            epsilon: U::lit(self.epsilon.as_f64()),
        }
    }
}

/// What the backward pass needs from a batch-norm forward.
#[derive(Debug, Clone)]
pub struct BatchNormCache<T: Real> {
    pub normalized: Tensor<T>,
    pub inv_std: Vec<T>,
    pub mode: Mode,
}

pub struct BatchNormGrads<T: Real> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Batch normalisation over every axis but the last. In train mode the
/// statistics come from the batch and the running estimates are updated
/// (variance estimate unbiased); in eval mode the running estimates are used.
pub fn batchnorm2d<T: Real>(
    x: &Tensor<T>,
    state: &mut BatchNormState<T>,
    mode: Mode,
) -> Result<(Tensor<T>, BatchNormCache<T>)> {
    let c = x.channels();
    if c != state.channels() {
        return Err(Error::Dimension(format!(
            "batchnorm over {c} channels with state for {}",
            state.channels()
        )));
    }
    let n = x.rows();
    let (mean, var) = match mode {
        Mode::Train => {
            if n < 2 {
                return Err(Error::DegenerateBatch(format!(
                    "train-mode batch norm needs at least 2 values per channel, got {n}"
                )));
            }
            let (mean, var) = channel_moments(x);
            let m = state.momentum;
            let unbias = T::lit(n as f64 / (n as f64 - 1.0));
            for ch in 0..c {
                let rm = &mut state.running_mean.data_mut()[ch];
                *rm = (T::one() - m) * *rm + m * mean[ch];
                let rv = &mut state.running_var.data_mut()[ch];
                *rv = (T::one() - m) * *rv + m * var[ch] * unbias;
            }
            (mean, var)
        }
        Mode::Eval => (
            state.running_mean.data().to_vec(),
            state.running_var.data().to_vec(),
        ),
    };
    let inv_std: Vec<T> = var
        .iter()
        .map(|&v| T::one() / (v + state.epsilon).sqrt())
        .collect();
    let mut normalized = x.clone();
    let mut out = x.clone();
    let (g, b) = (state.gamma.data(), state.beta.data());
    for (nrow, orow) in normalized
        .data_mut()
        .chunks_mut(c)
        .zip(out.data_mut().chunks_mut(c))
    {
        for ch in 0..c {
            let xhat = (nrow[ch] - mean[ch]) * inv_std[ch];
            nrow[ch] = xhat;
            orow[ch] = g[ch] * xhat + b[ch];
        }
    }
    debug_assert!(out.all_finite(), "batchnorm produced a non-finite value");
    Ok((
        out,
        BatchNormCache {
            normalized,
            inv_std,
            mode,
        },
    ))
}

pub fn batchnorm2d_backward<T: Real>(
    cache: &BatchNormCache<T>,
    gamma: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<BatchNormGrads<T>> {
    dy.expect_same_shape(&cache.normalized)?;
    let c = dy.channels();
    let n = dy.rows();
    let mut dgamma = vec![T::zero(); c];
    let mut dbeta = vec![T::zero(); c];
    for (grow, xrow) in dy.data().chunks(c).zip(cache.normalized.data().chunks(c)) {
        for ch in 0..c {
            dgamma[ch] = dgamma[ch] + grow[ch] * xrow[ch];
            dbeta[ch] = dbeta[ch] + grow[ch];
        }
    }
    let g = gamma.data();
    let mut dx = dy.clone();
    match cache.mode {
        Mode::Eval => {
            for row in dx.data_mut().chunks_mut(c) {
                for ch in 0..c {
                    row[ch] = row[ch] * g[ch] * cache.inv_std[ch];
                }
            }
        }
        Mode::Train => {
            // dx = γ/σ · (dy − mean(dy) − x̂ · mean(dy · x̂))
            let inv_n = T::one() / T::lit(n as f64);
            for (row, xrow) in dx
                .data_mut()
                .chunks_mut(c)
                .zip(cache.normalized.data().chunks(c))
            {
                for ch in 0..c {
                    let centered = row[ch] - dbeta[ch] * inv_n - xrow[ch] * dgamma[ch] * inv_n;
                    row[ch] = g[ch] * cache.inv_std[ch] * centered;
                }
            }
        }
    }
    Ok(BatchNormGrads {
        input: dx,
        gamma: Tensor::vector(dgamma),
        beta: Tensor::vector(dbeta),
    })
}

/// Per-channel mean and biased variance, two-pass.
pub fn channel_moments<T: Real>(x: &Tensor<T>) -> (Vec<T>, Vec<T>) {
    let c = x.channels();
    let n = T::lit(x.rows() as f64);
    let mut mean = vec![T::zero(); c];
    for row in x.data().chunks(c) {
        for (m, &v) in mean.iter_mut().zip(row) {
            *m = *m + v;
        }
    }
    for m in &mut mean {
        *m = *m / n;
    }
    let mut var = vec![T::zero(); c];
    for row in x.data().chunks(c) {
        for ch in 0..c {
            let d = row[ch] - mean[ch];
            var[ch] = var[ch] + d * d;
        }
    }
    for v in &mut var {
        *v = *v / n;
    }
    (mean, var)
}

/// Rescales each nonzero row to unit Euclidean norm. Returns the indices of
/// all-zero rows, which are left untouched.
pub fn l2_normalize_rows<T: Real>(x: &Tensor<T>) -> (Tensor<T>, Vec<usize>) {
    let c = x.channels();
    let mut out = x.clone();
    let mut zero_rows = Vec::new();
    for (r, row) in out.data_mut().chunks_mut(c).enumerate() {
        let norm = row.iter().map(|&v| v * v).sum::<T>().sqrt();
        if norm == T::zero() {
            zero_rows.push(r);
            continue;
        }
        for v in row.iter_mut() {
            *v = *v / norm;
        }
    }
    (out, zero_rows)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn eval_with_unit_stats_is_near_identity() {
        let mut st = BatchNormState::<f64>::new(2);
        let x = Tensor::from_vec(&[1, 2, 1, 2], vec![1., -2., 3., 0.5]).unwrap();
        let (y, _) = batchnorm2d(&x, &mut st, Mode::Eval).unwrap();
        let scale = 1.0 / (1.0 + BN_EPSILON).sqrt();
        for (a, b) in y.data().iter().zip(x.data()) {
            assert!((a - b * scale).abs() < 1e-15);
        }
        let (y2, _) = batchnorm2d(&x, &mut st, Mode::Eval).unwrap();
        assert_eq!(y, y2);
    }

    #[test]
    fn constant_input_gives_beta() {
        let mut st = BatchNormState::<f32>::new(3);
        let x = Tensor::full(&[2, 2, 2, 3], 4.0);
        let (y, _) = batchnorm2d(&x, &mut st, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn train_statistics_are_standardised() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let x = Tensor::<f64>::randn(&[4, 3, 3, 2], 1.5, &mut rng).map(|v| v + 2.0);
        let mut st = BatchNormState::new(2);
        let (y, _) = batchnorm2d(&x, &mut st, Mode::Train).unwrap();
        // Independent per-channel two-pass moments on the output.
        for ch in 0..2 {
            let vals: Vec<f64> = y.data().iter().skip(ch).step_by(2).copied().collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5, "mean {mean}");
            assert!((var - 1.0).abs() < 1e-4, "var {var}");
        }
    }

    #[test]
    fn running_stats_follow_momentum() {
        let mut st = BatchNormState::<f64>::new(1);
        let x = Tensor::from_vec(&[1, 1, 2, 1], vec![1.0, 3.0]).unwrap();
        batchnorm2d(&x, &mut st, Mode::Train).unwrap();
        assert!((st.running_mean.data()[0] - 0.2).abs() < 1e-15);
        // unbiased variance of {1,3} is 2
        assert!((st.running_var.data()[0] - (0.9 + 0.2)).abs() < 1e-15);
    }

    #[test]
    fn degenerate_train_batch() {
        let mut st = BatchNormState::<f32>::new(1);
        let x = Tensor::zeros(&[1, 1, 1, 1]);
        assert!(matches!(
            batchnorm2d(&x, &mut st, Mode::Train),
            Err(Error::DegenerateBatch(_))
        ));
        assert!(batchnorm2d(&x, &mut st, Mode::Eval).is_ok());
    }

    #[test]
    fn l2_rows() {
        let x = Tensor::<f64>::from_vec(&[3, 2], vec![3., 4., 1., 0., 0., 0.]).unwrap();
        let (y, zeros) = l2_normalize_rows(&x);
        assert_eq!(y.data(), &[0.6, 0.8, 1., 0., 0., 0.]);
        assert_eq!(zeros, vec![2]);
    }
}
