//! Fully connected layer.

use ndarray::{Array1, Array2};

use super::{add_grad, GradStore, HasParams};

/// `y = x W^T + b` with weight layout `(out, in)`.
pub struct Linear {
    pub name: String,
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

pub struct LinearCache {
    x: Array2<f64>,
}

impl Linear {
    pub fn new(name: &str, in_features: usize, out_features: usize, seed: u64) -> Self {
        Linear {
            name: name.to_string(),
            weight: super::init::uniform_fan_in(
                (out_features, in_features),
                in_features,
                seed,
                &format!("{name}.weight"),
            ),
            bias: Array1::zeros(out_features),
        }
    }

    pub fn forward(&self, x: &Array2<f64>) -> (Array2<f64>, LinearCache) {
        let mut y = x.dot(&self.weight.t());
        for mut row in y.rows_mut() {
            row += &self.bias;
        }
        (y, LinearCache { x: x.clone() })
    }

    pub fn backward(
        &self,
        cache: &LinearCache,
        dy: &Array2<f64>,
        grads: &mut GradStore,
    ) -> Array2<f64> {
        add_grad(grads, &format!("{}.weight", self.name), dy.t().dot(&cache.x));
        add_grad(
            grads,
            &format!("{}.bias", self.name),
            dy.sum_axis(ndarray::Axis(0)),
        );
        dy.dot(&self.weight)
    }
}

impl HasParams for Linear {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ndarray::ArrayViewD<'a, f64>)>) {
        out.push((
            format!("{prefix}{}.weight", self.name),
            self.weight.view().into_dyn(),
        ));
        out.push((
            format!("{prefix}{}.bias", self.name),
            self.bias.view().into_dyn(),
        ));
    }

    fn params_mut<'a>(
        &'a mut self,
        prefix: &str,
        out: &mut Vec<(String, ndarray::ArrayViewMutD<'a, f64>)>,
    ) {
        out.push((
            format!("{prefix}{}.weight", self.name),
            self.weight.view_mut().into_dyn(),
        ));
        out.push((
            format!("{prefix}{}.bias", self.name),
            self.bias.view_mut().into_dyn(),
        ));
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{gradcheck, param_count};
    use ndarray::Array;
    use rand::Rng;

    #[test]
    fn zero_weights_give_zero_logits() {
        let mut fc = Linear::new("fc", 64, 10, 0);
        fc.weight.fill(0.0);
        let x = Array2::from_elem((2, 64), 0.7);
        let (y, _) = fc.forward(&x);
        assert!(y.iter().all(|&v| v == 0.0));
        assert_eq!(y.dim(), (2, 10));
    }

    #[test]
    fn parameter_count_64_to_10_is_650() {
        let fc = Linear::new("fc", 64, 10, 0);
        assert_eq!(param_count(&fc), 650);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut stream = crate::rng::derive_indexed(5, "linear-test", &[]);
        let fc = Linear::new("fc", 4, 3, 1);
        let x: Array2<f64> = Array::from_shape_simple_fn((2, 4), || stream.gen_range(-1.0..1.0));
        let target: Array2<f64> =
            Array::from_shape_simple_fn((2, 3), || stream.gen_range(-1.0..1.0));

        let (y, cache) = fc.forward(&x);
        let dy = &y - &target;
        let mut grads = GradStore::new();
        let dx = fc.backward(&cache, &dy, &mut grads);

        let loss_of = |w: &Array2<f64>, b: &Array1<f64>, x: &Array2<f64>| {
            let fc2 = Linear {
                name: "fc".into(),
                weight: w.clone(),
                bias: b.clone(),
            };
            let (y, _) = fc2.forward(x);
            0.5 * (&y - &target).mapv(|v| v * v).sum()
        };

        let analytic = grads["fc.weight"].clone().into_raw_vec_and_offset().0;
        let mut vals = fc.weight.clone().into_raw_vec_and_offset().0;
        let err = gradcheck::check_elementwise(&mut vals, &analytic, 1e-6, |v| {
            loss_of(
                &Array2::from_shape_vec((3, 4), v.to_vec()).unwrap(),
                &fc.bias,
                &x,
            )
        });
        assert!(err < 1e-7, "weight grad rel err {err}");

        let analytic = dx.into_raw_vec_and_offset().0;
        let mut vals = x.clone().into_raw_vec_and_offset().0;
        let err = gradcheck::check_elementwise(&mut vals, &analytic, 1e-6, |v| {
            loss_of(
                &fc.weight,
                &fc.bias,
                &Array2::from_shape_vec((2, 4), v.to_vec()).unwrap(),
            )
        });
        assert!(err < 1e-7, "input grad rel err {err}");
    }
}
