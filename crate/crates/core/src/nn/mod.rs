//! Minimal dense neural-network layers with explicit backpropagation.
//!
//! Everything runs in f64 on the CPU. Forward passes return a cache with
//! the intermediates the matching backward pass needs; gradients are
//! accumulated into a [`GradStore`] keyed by parameter name, which is
//! also the key space used by the optimizers and the weights container.

pub mod conv;
pub mod init;
pub mod linear;
pub mod loss;
pub mod lstm;
pub mod norm;
pub mod optim;

use indexmap::IndexMap;
use ndarray::{Array, ArrayD, ArrayViewD, ArrayViewMutD, Dimension};

/// Gradient accumulator keyed by parameter name, insertion-ordered.
pub type GradStore = IndexMap<String, ArrayD<f64>>;

/// Accumulate `grad` into `store[name]`.
pub fn add_grad<D: Dimension>(store: &mut GradStore, name: &str, grad: Array<f64, D>) {
    let grad = grad.into_dyn();
    match store.get_mut(name) {
        Some(existing) => *existing += &grad,
        None => {
            store.insert(name.to_string(), grad);
        }
    }
}

/// Named views over a module's trainable parameters and running buffers.
pub trait HasParams {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ArrayViewD<'a, f64>)>);
    fn params_mut<'a>(&'a mut self, prefix: &str, out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>);
    fn buffers<'a>(&'a self, _prefix: &str, _out: &mut Vec<(String, ArrayViewD<'a, f64>)>) {}
    fn buffers_mut<'a>(
        &'a mut self,
        _prefix: &str,
        _out: &mut Vec<(String, ArrayViewMutD<'a, f64>)>,
    ) {
    }
}

/// Number of trainable scalars in a module.
pub fn param_count(module: &dyn HasParams) -> usize {
    let mut out = Vec::new();
    module.params("", &mut out);
    out.iter().map(|(_, v)| v.len()).sum()
}

pub fn relu<D: Dimension>(x: &Array<f64, D>) -> Array<f64, D> {
    x.mapv(|v| v.max(0.0))
}

/// Gradient through ReLU given the forward *output*.
pub fn relu_backward<D: Dimension>(dy: &Array<f64, D>, y: &Array<f64, D>) -> Array<f64, D> {
    let mut dx = dy.clone();
    dx.zip_mut_with(y, |d, &v| {
        if v <= 0.0 {
            *d = 0.0;
        }
    });
    dx
}

pub fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

#[cfg(test)]
pub(crate) mod gradcheck {
    //! Central finite-difference checking used by the layer tests.

    /// Relative error between analytic and numeric gradients, with an
    /// absolute floor so near-zero gradients do not blow up the ratio.
    pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
        let scale = analytic.abs().max(numeric.abs()).max(1e-6);
        (analytic - numeric).abs() / scale
    }

    /// Max relative error over every element of `values`, where `loss`
    /// re-evaluates the scalar objective after each perturbation.
    pub fn check_elementwise<F>(values: &mut [f64], analytic: &[f64], eps: f64, mut loss: F) -> f64
    where
        F: FnMut(&[f64]) -> f64,
    {
        assert_eq!(values.len(), analytic.len());
        let mut worst = 0.0f64;
        for i in 0..values.len() {
            let saved = values[i];
            values[i] = saved + eps;
            let plus = loss(values);
            values[i] = saved - eps;
            let minus = loss(values);
            values[i] = saved;
            let numeric = (plus - minus) / (2.0 * eps);
            worst = worst.max(rel_err(analytic[i], numeric));
        }
        worst
    }
}
