//! Batch normalization over the channel axis of NCHW tensors.

use ndarray::{Array1, Array4, Axis};

use super::{add_grad, GradStore, HasParams};

pub struct BatchNorm2d {
    pub name: String,
    pub gamma: Array1<f64>,
    pub beta: Array1<f64>,
    pub running_mean: Array1<f64>,
    pub running_var: Array1<f64>,
    pub eps: f64,
    pub momentum: f64,
}

pub struct BatchNorm2dCache {
    x_hat: Array4<f64>,
    inv_std: Array1<f64>,
}

impl BatchNorm2d {
    pub fn new(name: &str, channels: usize) -> Self {
        BatchNorm2d {
            name: name.to_string(),
            gamma: Array1::ones(channels),
            beta: Array1::zeros(channels),
            running_mean: Array1::zeros(channels),
            running_var: Array1::ones(channels),
            eps: 1e-5,
            momentum: 0.1,
        }
    }

    /// Training-mode forward: normalize with batch statistics (biased
    /// variance) and update the running estimates in place.
    pub fn forward_train(&mut self, x: &Array4<f64>) -> (Array4<f64>, BatchNorm2dCache) {
        let (b, c, h, w) = x.dim();
        let n = (b * h * w) as f64;
        let mut mean = Array1::zeros(c);
        let mut var = Array1::zeros(c);
        for ci in 0..c {
            let slice = x.index_axis(Axis(1), ci);
            let m = slice.sum() / n;
            mean[ci] = m;
            var[ci] = slice.mapv(|v| (v - m) * (v - m)).sum() / n;
        }
        let inv_std = var.mapv(|v| 1.0 / (v + self.eps).sqrt());
        let mut x_hat = x.clone();
        for ci in 0..c {
            let m = mean[ci];
            let s = inv_std[ci];
            x_hat
                .index_axis_mut(Axis(1), ci)
                .mapv_inplace(|v| (v - m) * s);
        }
        let y = self.affine(&x_hat);
        self.running_mean = &self.running_mean * (1.0 - self.momentum) + &mean * self.momentum;
        self.running_var = &self.running_var * (1.0 - self.momentum) + &var * self.momentum;
        (y, BatchNorm2dCache { x_hat, inv_std })
    }

    /// Inference-mode forward using the running statistics.
    pub fn forward_eval(&self, x: &Array4<f64>) -> Array4<f64> {
        let c = x.dim().1;
        let mut x_hat = x.clone();
        for ci in 0..c {
            let m = self.running_mean[ci];
            let s = 1.0 / (self.running_var[ci] + self.eps).sqrt();
            x_hat
                .index_axis_mut(Axis(1), ci)
                .mapv_inplace(|v| (v - m) * s);
        }
        self.affine(&x_hat)
    }

    fn affine(&self, x_hat: &Array4<f64>) -> Array4<f64> {
        let c = x_hat.dim().1;
        let mut y = x_hat.clone();
        for ci in 0..c {
            let g = self.gamma[ci];
            let b = self.beta[ci];
            y.index_axis_mut(Axis(1), ci).mapv_inplace(|v| v * g + b);
        }
        y
    }

    /// Full train-mode backward, including the dependence of the batch
    /// statistics on the input.
    pub fn backward(
        &self,
        cache: &BatchNorm2dCache,
        dy: &Array4<f64>,
        grads: &mut GradStore,
    ) -> Array4<f64> {
        let (b, c, h, w) = dy.dim();
        let n = (b * h * w) as f64;
        let mut dgamma = Array1::zeros(c);
        let mut dbeta = Array1::zeros(c);
        for ci in 0..c {
            let dy_c = dy.index_axis(Axis(1), ci);
            let xh_c = cache.x_hat.index_axis(Axis(1), ci);
            dbeta[ci] = dy_c.sum();
            dgamma[ci] = (&dy_c * &xh_c).sum();
        }
        let mut dx = Array4::zeros(dy.raw_dim());
        for ci in 0..c {
            let scale = self.gamma[ci] * cache.inv_std[ci] / n;
            let sum_dy = dbeta[ci];
            let sum_dy_xhat = dgamma[ci];
            let dy_c = dy.index_axis(Axis(1), ci);
            let xh_c = cache.x_hat.index_axis(Axis(1), ci);
            let mut dx_c = dx.index_axis_mut(Axis(1), ci);
            ndarray::Zip::from(&mut dx_c)
                .and(&dy_c)
                .and(&xh_c)
                .for_each(|d, &g, &xh| {
                    *d = scale * (n * g - sum_dy - xh * sum_dy_xhat);
                });
        }
        add_grad(grads, &format!("{}.gamma", self.name), dgamma);
        add_grad(grads, &format!("{}.beta", self.name), dbeta);
        dx
    }
}

impl HasParams for BatchNorm2d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ndarray::ArrayViewD<'a, f64>)>) {
        out.push((
            format!("{prefix}{}.gamma", self.name),
            self.gamma.view().into_dyn(),
        ));
        out.push((
            format!("{prefix}{}.beta", self.name),
            self.beta.view().into_dyn(),
        ));
    }

    fn params_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, ndarray::ArrayViewMutD<'a, f64>)>,
    ) {
        out.push((
            format!("{prefix}{}.gamma", self.name),
            self.gamma.view_mut().into_dyn(),
        ));
        out.push((
            format!("{prefix}{}.beta", self.name),
            self.beta.view_mut().into_dyn(),
        ));
    }

    fn buffers<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ndarray::ArrayViewD<'a, f64>)>) {
        out.push((
            format!("{prefix}{}.running_mean", self.name),
            self.running_mean.view().into_dyn(),
        ));
        out.push((
            format!("{prefix}{}.running_var", self.name),
            self.running_var.view().into_dyn(),
        ));
    }

    fn buffers_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, ndarray::ArrayViewMutD<'a, f64>)>,
    ) {
        out.push((
            format!("{prefix}{}.running_mean", self.name),
            self.running_mean.view_mut().into_dyn(),
        ));
        out.push((
            format!("{prefix}{}.running_var", self.name),
            self.running_var.view_mut().into_dyn(),
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::gradcheck;
    use ndarray::Array;
    use rand::Rng;

    fn rand_array4(shape: (usize, usize, usize, usize), seed: u64) -> Array4<f64> {
        let mut stream = crate::rng::derive_indexed(seed, "bn-test", &[]);
        Array::from_shape_simple_fn(shape, || stream.gen_range(-2.0..2.0))
    }

    #[test]
    fn train_forward_normalizes_channels() {
        let mut bn = BatchNorm2d::new("bn", 3);
        let x = rand_array4((4, 3, 5, 6), 1);
        let (y, _) = bn.forward_train(&x);
        for ci in 0..3 {
            let slice = y.index_axis(Axis(1), ci);
            let n = slice.len() as f64;
            let mean = slice.sum() / n;
            let var = slice.mapv(|v| (v - mean) * (v - mean)).sum() / n;
            assert!(mean.abs() < 1e-10);
            assert!((var - 1.0).abs() < 1e-3); // eps shifts it slightly
        }
    }

    #[test]
    fn eval_forward_uses_running_stats() {
        let mut bn = BatchNorm2d::new("bn", 2);
        let x = rand_array4((8, 2, 4, 4), 2);
        for _ in 0..200 {
            bn.forward_train(&x);
        }
        let y_eval = bn.forward_eval(&x);
        let (y_train, _) = bn.forward_train(&x);
        let max_diff = (&y_eval - &y_train)
            .mapv(f64::abs)
            .iter()
            .fold(0.0f64, |a, &b| a.max(b));
        // converged running stats reproduce batch stats on a fixed batch
        assert!(max_diff < 1e-6, "max diff {max_diff}");
    }

    #[test]
    fn gradients_match_finite_differences() {
        let bn = BatchNorm2d::new("bn", 2);
        let x = rand_array4((3, 2, 4, 3), 3);
        let target = rand_array4((3, 2, 4, 3), 4);

        let loss_of = |gamma: &[f64], beta: &[f64], x: &Array4<f64>| -> f64 {
            let mut bn2 = BatchNorm2d::new("bn", 2);
            bn2.gamma = Array1::from_vec(gamma.to_vec());
            bn2.beta = Array1::from_vec(beta.to_vec());
            let (y, _) = bn2.forward_train(x);
            0.5 * (&y - &target).mapv(|v| v * v).sum()
        };

        let mut bn_fwd = BatchNorm2d::new("bn", 2);
        let (y, cache) = bn_fwd.forward_train(&x);
        let dy = &y - &target;
        let mut grads = GradStore::new();
        let dx = bn.backward(&cache, &dy, &mut grads);

        let gamma0 = bn.gamma.to_vec();
        let beta0 = bn.beta.to_vec();

        let analytic = grads["bn.gamma"].clone().into_raw_vec_and_offset().0;
        let mut vals = gamma0.clone();
        let err = gradcheck::check_elementwise(&mut vals, &analytic, 1e-5, |v| {
            loss_of(v, &beta0, &x)
        });
        assert!(err < 1e-7, "gamma grad rel err {err}");

        let analytic = grads["bn.beta"].clone().into_raw_vec_and_offset().0;
        let mut vals = beta0.clone();
        let err = gradcheck::check_elementwise(&mut vals, &analytic, 1e-5, |v| {
            loss_of(&gamma0, v, &x)
        });
        assert!(err < 1e-7, "beta grad rel err {err}");

        let analytic = dx.into_raw_vec_and_offset().0;
        let mut vals = x.clone().into_raw_vec_and_offset().0;
        let shape = x.raw_dim();
        let err = gradcheck::check_elementwise(&mut vals, &analytic, 1e-5, |v| {
            let xi = Array4::from_shape_vec(shape.clone(), v.to_vec()).unwrap();
            loss_of(&gamma0, &beta0, &xi)
        });
        assert!(err < 1e-6, "input grad rel err {err}");
    }
}
