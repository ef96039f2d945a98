//! Adam with bias correction.

use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::model::ParamStore;
use crate::tensor::Real;

#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    moments: IndexMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Default for AdamState<T> {
    fn default() -> Self {
        Self::new(0.9, 0.999, 1e-8)
    }
}

impl<T: Real> AdamState<T> {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        AdamState {
            beta1,
            beta2,
            eps,
            step: 0,
            moments: IndexMap::new(),
        }
    }

    /// First and second moment estimates of a parameter.
    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        self.moments
            .get(name)
            .map(|(m, v)| (m.as_slice(), v.as_slice()))
    }
}

/// One Adam update of every parameter from its gradient buffer.
pub fn adam_step<T: Real>(params: &mut ParamStore<T>, state: &mut AdamState<T>, lr: f64) -> Result<()> {
    if let Some((name, _)) = params.iter().find(|(_, t)| t.grad().is_none()) {
        return Err(Error::MissingGrad(name.to_string()));
    }
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (T::of(state.beta1), T::of(state.beta2));
    let c1 = 1.0 - state.beta1.powi(t);
    let c2 = 1.0 - state.beta2.powi(t);
    // lr·m̂/(√v̂ + ε) with the corrections folded into two scalars.
    let step_size = T::of(lr / c1);
    let inv_sqrt_c2 = T::of(1.0 / c2.sqrt());
    let eps = T::of(state.eps);

    for (name, tensor) in params.iter_mut() {
        let n = tensor.numel();
        let (m, v) = state
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![T::zero(); n], vec![T::zero(); n]));
        if m.len() != n {
            return Err(Error::InvalidArgument(format!(
                "optimizer state for `{name}` has {} elements, parameter has {n}",
                m.len()
            )));
        }
        let grad = tensor.grad().expect("checked above").to_vec();
        for (i, p) in tensor.data_mut().iter_mut().enumerate() {
            let g = grad[i];
            m[i] = b1 * m[i] + (T::one() - b1) * g;
            v[i] = b2 * v[i] + (T::one() - b2) * g * g;
            *p -= step_size * m[i] / (v[i].sqrt() * inv_sqrt_c2 + eps);
        }
    }
    Ok(())
}
