use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Row-wise softmax of a matrix, stabilised by subtracting each row's max.
pub fn softmax_rows<T: Real>(x: &Tensor<T>) -> Result<Tensor<T>> {
    if x.rank() != 2 {
        return Err(Error::Dimension(format!(
            "softmax_rows needs a matrix, got {:?}",
            x.shape()
        )));
    }
    let c = x.channels();
    let mut out = x.clone();
    for row in out.data_mut().chunks_mut(c) {
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    Ok(out)
}

/// Vector-Jacobian product of softmax given its output `y`:
/// `dx = y ⊙ (dy − ⟨dy, y⟩_row)`.
pub fn softmax_rows_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    y.expect_same_shape(dy)?;
    let c = y.channels();
    let mut out = Vec::with_capacity(y.len());
    for (yr, gr) in y.data().chunks(c).zip(dy.data().chunks(c)) {
        let inner: T = yr.iter().zip(gr).map(|(&a, &b)| a * b).sum();
        out.extend(yr.iter().zip(gr).map(|(&a, &b)| a * (b - inner)));
    }
    Tensor::from_vec(y.shape(), out)
}

pub fn relu<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(|v| if v > T::zero() { v } else { T::zero() })
}

/// Gradient gate of ReLU evaluated at the pre-activation `x`.
pub fn relu_backward<T: Real>(x: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    x.zip_map(dy, |v, g| if v > T::zero() { g } else { T::zero() })
}

#[inline]
pub fn sigmoid_scalar<T: Real>(v: T) -> T {
    if v >= T::zero() {
        T::one() / (T::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (T::one() + e)
    }
}

pub fn sigmoid<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    x.map(sigmoid_scalar)
}

/// Gradient of sigmoid given its output `y`.
pub fn sigmoid_backward<T: Real>(y: &Tensor<T>, dy: &Tensor<T>) -> Result<Tensor<T>> {
    y.zip_map(dy, |s, g| g * s * (T::one() - s))
}

/// Whether `rhs` is a per-channel vector to be broadcast over `lhs`.
fn is_channel_broadcast<T: Real>(lhs: &Tensor<T>, rhs: &Tensor<T>) -> Result<bool> {
    if lhs.shape() == rhs.shape() {
        return Ok(false);
    }
    if rhs.rank() == 1 && rhs.len() == lhs.channels() {
        return Ok(true);
    }
    Err(Error::Dimension(format!(
        "cannot broadcast {:?} against {:?}",
        rhs.shape(),
        lhs.shape()
    )))
}

/// Elementwise sum; `rhs` may be a per-channel vector.
pub fn add<T: Real>(lhs: &Tensor<T>, rhs: &Tensor<T>) -> Result<Tensor<T>> {
    if !is_channel_broadcast(lhs, rhs)? {
        return lhs.zip_map(rhs, |a, b| a + b);
    }
    let mut out = lhs.clone();
    for row in out.data_mut().chunks_mut(rhs.len()) {
        for (o, &b) in row.iter_mut().zip(rhs.data()) {
            *o = *o + b;
        }
    }
    Ok(out)
}

/// Returns gradients for `lhs` and `rhs`, reducing over positions for a
/// broadcast `rhs`.
pub fn add_backward<T: Real>(
    lhs: &Tensor<T>,
    rhs: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    dy.expect_same_shape(lhs)?;
    if !is_channel_broadcast(lhs, rhs)? {
        return Ok((dy.clone(), dy.clone()));
    }
    Ok((dy.clone(), channel_sum(dy)))
}

/// Elementwise product; `rhs` may be a per-channel vector (channel-wise gating).
pub fn mul<T: Real>(lhs: &Tensor<T>, rhs: &Tensor<T>) -> Result<Tensor<T>> {
    if !is_channel_broadcast(lhs, rhs)? {
        return lhs.zip_map(rhs, |a, b| a * b);
    }
    let mut out = lhs.clone();
    for row in out.data_mut().chunks_mut(rhs.len()) {
        for (o, &b) in row.iter_mut().zip(rhs.data()) {
            *o = *o * b;
        }
    }
    Ok(out)
}

pub fn mul_backward<T: Real>(
    lhs: &Tensor<T>,
    rhs: &Tensor<T>,
    dy: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    dy.expect_same_shape(lhs)?;
    if !is_channel_broadcast(lhs, rhs)? {
        return Ok((dy.zip_map(rhs, |g, b| g * b)?, dy.zip_map(lhs, |g, a| g * a)?));
    }
    let dl = mul(dy, rhs)?;
    let dr = channel_sum(&dy.zip_map(lhs, |g, a| g * a)?);
    Ok((dl, dr))
}

/// Sum over every position, leaving one value per channel.
pub fn channel_sum<T: Real>(x: &Tensor<T>) -> Tensor<T> {
    let c = x.channels();
    let mut acc = vec![T::zero(); c];
    for row in x.data().chunks(c) {
        for (a, &v) in acc.iter_mut().zip(row) {
            *a = *a + v;
        }
    }
    Tensor::vector(acc)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_symmetric_and_known_ratio() {
        let x = Tensor::<f64>::from_vec(&[2, 2], vec![0., 0., 0., 3f64.ln()]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert_eq!(&y.data()[..2], &[0.5, 0.5]);
        assert!((y.data()[2] - 0.25).abs() < 1e-15);
        assert!((y.data()[3] - 0.75).abs() < 1e-15);
    }

    #[test]
    fn softmax_survives_large_inputs() {
        let x = Tensor::<f32>::from_vec(&[1, 3], vec![1000., 1000., -1000.]).unwrap();
        let y = softmax_rows(&x).unwrap();
        assert!(y.all_finite());
        assert!((y.data()[0] - 0.5).abs() < 1e-6);
    }

    #[test]
    fn relu_and_sigmoid_definitions() {
        let x = Tensor::<f64>::vector(vec![-1., 2.]);
        assert_eq!(relu(&x).data(), &[0., 2.]);
        assert_eq!(sigmoid(&Tensor::<f64>::scalar(0.0)).data(), &[0.5]);
        assert!(sigmoid(&Tensor::<f64>::vector(vec![-800.0, 800.0])).all_finite());
    }

    #[test]
    fn channel_broadcast_mul() {
        let x = Tensor::<f64>::ones(&[2, 2, 2]);
        let g = Tensor::vector(vec![0.5, 2.0]);
        let y = mul(&x, &g).unwrap();
        for row in y.data().chunks(2) {
            assert_eq!(row, &[0.5, 2.0]);
        }
    }

    #[test]
    fn broadcast_mismatch_is_error() {
        let x = Tensor::<f64>::ones(&[2, 2, 2]);
        assert!(mul(&x, &Tensor::ones(&[3])).is_err());
        assert!(add(&x, &Tensor::ones(&[2, 2])).is_err());
    }
}
