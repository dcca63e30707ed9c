use crate::error::{Error, Result};

use super::matrix::{Matrix, Real};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay, applied as `p -= lr * weight_decay * p`.
    pub weight_decay: f64,
}

impl AdamConfig {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }

    pub fn with_weight_decay(mut self, weight_decay: f64) -> Self {
        self.weight_decay = weight_decay;
        self
    }
}

/// Moment estimates for one parameter block.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub m: Matrix<T>,
    pub v: Matrix<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(rows: usize, cols: usize) -> Self {
        Self {
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            step: 0,
        }
    }

    pub fn for_params(params: &Matrix<T>) -> Self {
        Self::new(params.rows(), params.cols())
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// `name` identifies the parameter block in error messages.
pub fn adam_step<T: Real>(
    params: &mut Matrix<T>,
    grads: &Matrix<T>,
    state: &mut AdamState<T>,
    cfg: &AdamConfig,
    name: &str,
) -> Result<()> {
    params.ensure_shape(grads, name)?;
    params.ensure_shape(&state.m, name)?;
    params.ensure_shape(&state.v, name)?;
    if !grads.is_finite() {
        return Err(Error::numeric(format!("non-finite gradient in {name}")));
    }

    state.step += 1;
    let t = state.step as i32;
    let b1 = cfg.beta1;
    let b2 = cfg.beta2;
    let bc1 = 1.0 - b1.powi(t);
    let bc2 = 1.0 - b2.powi(t);
    let decay = cfg.lr * cfg.weight_decay;

    let p = params.as_mut_slice();
    let m = state.m.as_mut_slice();
    let v = state.v.as_mut_slice();
    for (k, &g) in grads.as_slice().iter().enumerate() {
        let g = g.as_f64();
        let mk = b1 * m[k].as_f64() + (1.0 - b1) * g;
        let vk = b2 * v[k].as_f64() + (1.0 - b2) * g * g;
        m[k] = T::of(mk);
        v[k] = T::of(vk);
        let m_hat = mk / bc1;
        let v_hat = vk / bc2;
        let mut pk = p[k].as_f64();
        if decay != 0.0 {
            pk -= decay * pk;
        }
        pk -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        p[k] = T::of(pk);
    }
    Ok(())
}
