use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

fn matrix_dims<T: Real>(t: &Tensor<T>, side: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        s => Err(Error::Dimension(format!("matmul {side} must be a matrix, got {s:?}"))),
    }
}

/// `C = A·B`.
pub fn matmul<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = matrix_dims(a, "lhs")?;
    let (k2, n) = matrix_dims(b, "rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul inner extents disagree: {:?} x {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = ad[i * k + p];
            for (o, &bv) in row.iter_mut().zip(&bd[p * n..(p + 1) * n]) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `C = Aᵀ·B` without materialising the transpose.
pub fn matmul_tn<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (k, m) = matrix_dims(a, "lhs")?;
    let (k2, n) = matrix_dims(b, "rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_tn row counts disagree: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for p in 0..k {
        let brow = &bd[p * n..(p + 1) * n];
        for i in 0..m {
            let av = ad[p * m + i];
            for (o, &bv) in out[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// `C = A·Bᵀ`.
pub fn matmul_nt<T: Real>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    let (m, k) = matrix_dims(a, "lhs")?;
    let (n, k2) = matrix_dims(b, "rhs")?;
    if k != k2 {
        return Err(Error::Dimension(format!(
            "matmul_nt column counts disagree: {:?} vs {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut out = vec![T::zero(); m * n];
    for i in 0..m {
        let arow = &ad[i * k..(i + 1) * k];
        for j in 0..n {
            out[i * n + j] = arow
                .iter()
                .zip(&bd[j * k..(j + 1) * k])
                .map(|(&x, &y)| x * y)
                .sum();
        }
    }
    Tensor::from_vec(&[m, n], out)
}

/// Gradients of `C = A·B`: `dA = dC·Bᵀ`, `dB = Aᵀ·dC`.
pub fn matmul_backward<T: Real>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    dc: &Tensor<T>,
) -> Result<(Tensor<T>, Tensor<T>)> {
    Ok((matmul_nt(dc, b)?, matmul_tn(a, dc)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_vec(shape, v.to_vec()).unwrap()
    }

    #[test]
    fn identity_left() {
        let b = m(&[2, 2], &[1., 2., 3., 4.]);
        assert_eq!(matmul(&Tensor::eye(2), &b).unwrap(), b);
    }

    #[test]
    fn column_product() {
        let a = m(&[2, 2], &[1., 2., 3., 4.]);
        let b = m(&[2, 1], &[0., 1.]);
        assert_eq!(matmul(&a, &b).unwrap().data(), &[2., 4.]);
    }

    #[test]
    fn mismatch_names_both_shapes() {
        let err = matmul(&Tensor::<f64>::zeros(&[2, 3]), &Tensor::zeros(&[2, 3]))
            .unwrap_err()
            .to_string();
        assert!(err.contains("[2, 3]"), "{err}");
    }

    #[test]
    fn transposed_variants_agree() {
        let a = m(&[2, 3], &[1., -2., 3., 0.5, 4., -1.]);
        let b = m(&[2, 3], &[2., 1., 0., -3., 1., 1.]);
        let tn = matmul_tn(&a, &b).unwrap();
        assert_eq!(tn, matmul(&a.transpose().unwrap(), &b).unwrap());
        let nt = matmul_nt(&a, &b).unwrap();
        assert_eq!(nt, matmul(&a, &b.transpose().unwrap()).unwrap());
    }
}
