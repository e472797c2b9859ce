use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Mean over all spatial positions, one value per channel.
pub fn global_avg_pool<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let n = T::lit(x.rows() as f64);
    super::activation::channel_sum(x).map(|v| v / n)
}

/// Spreads a per-channel gradient uniformly over the positions of `shape`.
pub fn global_avg_pool_backward<T: Real>(shape: &[usize], dy: &Tensor<T>) -> Result<Tensor<T>> {
    let c = *shape.last().unwrap_or(&0);
    dy.expect_shape(&[c], "global_avg_pool upstream")?;
    let rows = shape.iter().product::<usize>() / c;
    let scale = T::one() / T::lit(rows as f64);
    let mut out = Tensor::zeros(shape);
    for row in out.data_mut().chunks_mut(c) {
        for (o, &g) in row.iter_mut().zip(dy.data()) {
            *o = g * scale;
        }
    }
    Ok(out)
}

/// How the k largest activations are aggregated.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TopKAggregate {
    #[default]
    Mean,
    Sum,
}

impl TopKAggregate {
    fn weight<T: Real>(self, k: usize) -> T {
        match self {
            Self::Mean => T::one() / T::lit(k as f64),
            Self::Sum => T::one(),
        }
    }
}

/// Flat indices of the `k` largest values, ties to the smaller index.
pub fn topk_indices<T: Real>(values: &[T], k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > values.len() {
        return Err(Error::Parameter(format!(
            "top-k needs 1 <= k <= {}, got k = {k}",
            values.len()
        )));
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| {
        values[b]
            .partial_cmp(&values[a])
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(a.cmp(&b))
    });
    idx.truncate(k);
    Ok(idx)
}

/// Aggregate of the k largest entries of a spatial map. Returns the value and
/// the selected flat indices (needed for the backward pass).
pub fn topk_pool<T: Real>(
    values: &[T],
    k: usize,
    agg: TopKAggregate,
) -> Result<(T, Vec<usize>)> {
    let idx = topk_indices(values, k)?;
    let total: T = idx.iter().map(|&i| values[i]).sum();
    Ok((total * agg.weight::<T>(k), idx))
}

/// Mean of the k largest entries of an `h × w` map.
pub fn topk_mean_pool<T: Real>(x: &Tensor<T>, k: usize) -> Result<T> {
    Ok(topk_pool(x.data(), k, TopKAggregate::Mean)?.0)
}

/// Routes `dy` to the selected positions with weight `1/k` (mean) or 1 (sum).
pub fn topk_pool_backward<T: Real>(
    len: usize,
    selected: &[usize],
    agg: TopKAggregate,
    dy: T,
) -> Vec<T> {
    let mut out = vec![T::zero(); len];
    let g = dy * agg.weight::<T>(selected.len());
    for &i in selected {
        out[i] = out[i] + g;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gap_values() {
        let x = Tensor::<f64>::from_vec(&[2, 2, 1], vec![1., 2., 3., 4.]).unwrap();
        assert_eq!(global_avg_pool(&x).data(), &[2.5]);
        let c = Tensor::<f64>::full(&[3, 2, 2], 1.25);
        assert_eq!(global_avg_pool(&c).data(), &[1.25, 1.25]);
    }

    #[test]
    fn gap_subtraction_centres_channels() {
        let x = Tensor::<f64>::from_vec(&[2, 1, 2], vec![1., 5., 3., -1.]).unwrap();
        let g = global_avg_pool(&x);
        let centred = super::super::activation::add(&x, &g.scale(-1.0)).unwrap();
        assert_eq!(global_avg_pool(&centred).data(), &[0., 0.]);
    }

    #[test]
    fn topk_examples() {
        let x = Tensor::<f64>::from_vec(&[2, 2], vec![4., 1., 3., 2.]).unwrap();
        assert_eq!(topk_mean_pool(&x, 2).unwrap(), 3.5);
        assert_eq!(topk_mean_pool(&x, 4).unwrap(), 2.5);
        assert!(topk_mean_pool(&x, 0).is_err());
        assert!(topk_mean_pool(&x, 5).is_err());
        let (s, _) = topk_pool(x.data(), 2, TopKAggregate::Sum).unwrap();
        assert_eq!(s, 7.0);
    }

    #[test]
    fn ties_pick_smallest_index() {
        let v = [1.0f64, 2.0, 2.0, 2.0];
        assert_eq!(topk_indices(&v, 2).unwrap(), vec![1, 2]);
        let g = topk_pool_backward(4, &[1, 2], TopKAggregate::Mean, 1.0f64);
        assert_eq!(g, vec![0.0, 0.5, 0.5, 0.0]);
    }
}
