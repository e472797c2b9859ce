use crate::error::{Error, Result};
use crate::model::BiamParams;
use crate::tensor::{Real, Tensor};

pub const DEFAULT_BETA1: f64 = 0.5;
pub const DEFAULT_BETA2: f64 = 0.999;
pub const DEFAULT_EPSILON: f64 = 1e-8;

/// Bias-corrected Adam moments for a fixed list of parameter tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real = f32> {
    pub first: Vec<Tensor<T>>,
    pub second: Vec<Tensor<T>>,
    pub step: u64,
    pub beta1: T,
    pub beta2: T,
    pub epsilon: T,
}

impl<T: Real> AdamState<T> {
    pub fn new<'a>(shapes: impl IntoIterator<Item = &'a Tensor<T>>, beta1: f64, beta2: f64) -> Self {
        let first: Vec<Tensor<T>> = shapes.into_iter().map(Tensor::zeros_like).collect();
        Self {
            second: first.clone(),
            first,
            step: 0,
            beta1: T::lit(beta1),
            beta2: T::lit(beta2),
            epsilon: T::lit(DEFAULT_EPSILON),
        }
    }

    pub fn for_params(params: &BiamParams<T>, beta1: f64, beta2: f64) -> Self {
        Self::new(params.learnable().into_iter().map(|(_, t)| t), beta1, beta2)
    }
}

/// One Adam update of `params` in place.
pub fn adam_step<T: Real>(
    params: &mut [&mut Tensor<T>],
    grads: &[&Tensor<T>],
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.first.len() {
        return Err(Error::Dimension(format!(
            "adam: {} params, {} grads, {} moment slots",
            params.len(),
            grads.len(),
            state.first.len()
        )));
    }
    for (p, g) in params.iter().zip(grads) {
        p.expect_same_shape(g)?;
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = T::one() - b1.powi(t);
    let c2 = T::one() - b2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        for (((pv, &gv), mv), vv) in p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut())
            .zip(v.data_mut())
        {
            *mv = b1 * *mv + (T::one() - b1) * gv;
            *vv = b2 * *vv + (T::one() - b2) * gv * gv;
            let m_hat = *mv / c1;
            let v_hat = *vv / c2;
            *pv = *pv - lr * m_hat / (v_hat.sqrt() + state.epsilon);
        }
    }
    Ok(())
}

/// Adam update over every learnable tensor of the head.
pub fn step_params<T: Real>(
    params: &mut BiamParams<T>,
    grads: &BiamParams<T>,
    state: &mut AdamState<T>,
    lr: T,
) -> Result<()> {
    let g: Vec<&Tensor<T>> = grads.learnable().into_iter().map(|(_, t)| t).collect();
    adam_step(&mut params.learnable_mut(), &g, state, lr)
}
