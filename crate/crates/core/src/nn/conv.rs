//! 2D convolution and transposed convolution via im2col + matrix multiply.
//!
//! The transposed convolution is implemented as the exact adjoint of a
//! convolution with the same kernel/stride/padding geometry, which keeps
//! the two backward passes symmetric: `col2im` is the adjoint of
//! `im2col` by construction.

use ndarray::{Array1, Array2, Array4};

use super::{add_grad, GradStore, HasParams};
use crate::error::{Error, Result};

/// Geometry of one convolution: `(c, h, w)` image gathered into columns
/// of `c*kh*kw` rows, one column per output position `(oh, ow)`.
#[derive(Debug, Clone, Copy)]
pub struct ConvGeom {
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad_h: usize,
    pub pad_w: usize,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    pub fn new(
        c: usize,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
        stride: usize,
        pad_h: usize,
        pad_w: usize,
    ) -> Result<Self> {
        let oh = (h + 2 * pad_h)
            .checked_sub(kh)
            .ok_or_else(|| Error::ShapeError(format!("kernel {kh} exceeds padded height")))?
            / stride
            + 1;
        let ow = (w + 2 * pad_w)
            .checked_sub(kw)
            .ok_or_else(|| Error::ShapeError(format!("kernel {kw} exceeds padded width")))?
            / stride
            + 1;
        Ok(ConvGeom {
            c,
            h,
            w,
            kh,
            kw,
            stride,
            pad_h,
            pad_w,
            oh,
            ow,
        })
    }
}

/// Gather `(B, c, h, w)` into `(c*kh*kw, B*oh*ow)`; out-of-bounds reads
/// are zero. Columns are batch-major, then row-major over (oh, ow).
pub fn im2col(x: &Array4<f64>, geom: &ConvGeom) -> Array2<f64> {
    let (b, c, h, w) = x.dim();
    debug_assert_eq!((c, h, w), (geom.c, geom.h, geom.w));
    let rows = c * geom.kh * geom.kw;
    let cols_per_image = geom.oh * geom.ow;
    let mut cols = Array2::zeros((rows, b * cols_per_image));
    for bi in 0..b {
        for ci in 0..c {
            for ki in 0..geom.kh {
                for kj in 0..geom.kw {
                    let row = (ci * geom.kh + ki) * geom.kw + kj;
                    for oy in 0..geom.oh {
                        let iy = (oy * geom.stride + ki) as isize - geom.pad_h as isize;
                        if iy < 0 || iy as usize >= h {
                            continue;
                        }
                        for ox in 0..geom.ow {
                            let ix = (ox * geom.stride + kj) as isize - geom.pad_w as isize;
                            if ix < 0 || ix as usize >= w {
                                continue;
                            }
                            cols[[row, bi * cols_per_image + oy * geom.ow + ox]] =
                                x[[bi, ci, iy as usize, ix as usize]];
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: scatter-add columns back into `(B, c, h, w)`.
pub fn col2im(cols: &Array2<f64>, b: usize, geom: &ConvGeom) -> Array4<f64> {
    let cols_per_image = geom.oh * geom.ow;
    debug_assert_eq!(cols.dim(), (geom.c * geom.kh * geom.kw, b * cols_per_image));
    let mut x = Array4::zeros((b, geom.c, geom.h, geom.w));
    for bi in 0..b {
        for ci in 0..geom.c {
            for ki in 0..geom.kh {
                for kj in 0..geom.kw {
                    let row = (ci * geom.kh + ki) * geom.kw + kj;
                    for oy in 0..geom.oh {
                        let iy = (oy * geom.stride + ki) as isize - geom.pad_h as isize;
                        if iy < 0 || iy as usize >= geom.h {
                            continue;
                        }
                        for ox in 0..geom.ow {
                            let ix = (ox * geom.stride + kj) as isize - geom.pad_w as isize;
                            if ix < 0 || ix as usize >= geom.w {
                                continue;
                            }
                            x[[bi, ci, iy as usize, ix as usize]] +=
                                cols[[row, bi * cols_per_image + oy * geom.ow + ox]];
                        }
                    }
                }
            }
        }
    }
    x
}

/// `(B, c_out, oh, ow)` -> `(c_out, B*oh*ow)` matching im2col column order.
fn nchw_to_mat(y: &Array4<f64>) -> Array2<f64> {
    let (b, c, h, w) = y.dim();
    let mut mat = Array2::zeros((c, b * h * w));
    for bi in 0..b {
        for ci in 0..c {
            for yi in 0..h {
                for xi in 0..w {
                    mat[[ci, bi * h * w + yi * w + xi]] = y[[bi, ci, yi, xi]];
                }
            }
        }
    }
    mat
}

fn mat_to_nchw(mat: &Array2<f64>, b: usize, c: usize, h: usize, w: usize) -> Array4<f64> {
    let mut y = Array4::zeros((b, c, h, w));
    for bi in 0..b {
        for ci in 0..c {
            for yi in 0..h {
                for xi in 0..w {
                    y[[bi, ci, yi, xi]] = mat[[ci, bi * h * w + yi * w + xi]];
                }
            }
        }
    }
    y
}

pub struct Conv2dCache {
    cols: Array2<f64>,
    geom: ConvGeom,
    batch: usize,
}

/// Convolution with square kernel, shared stride, optional asymmetric
/// padding. Weight layout `(c_out, c_in, kh, kw)`.
pub struct Conv2d {
    pub name: String,
    pub weight: Array4<f64>,
    pub bias: Option<Array1<f64>>,
    pub stride: usize,
    pub pad: (usize, usize),
}

impl Conv2d {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: (usize, usize),
        bias: bool,
        seed: u64,
    ) -> Self {
        let weight = super::init::he_normal(
            (c_out, c_in, k, k),
            c_in * k * k,
            seed,
            &format!("{name}.weight"),
        );
        Conv2d {
            name: name.to_string(),
            weight,
            bias: bias.then(|| Array1::zeros(c_out)),
            stride,
            pad,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (_, _, kh, kw) = self.weight.dim();
        (
            (h + 2 * self.pad.0 - kh) / self.stride + 1,
            (w + 2 * self.pad.1 - kw) / self.stride + 1,
        )
    }

    fn geom(&self, h: usize, w: usize) -> Result<ConvGeom> {
        let (_, c_in, kh, kw) = self.weight.dim();
        ConvGeom::new(c_in, h, w, kh, kw, self.stride, self.pad.0, self.pad.1)
    }

    fn weight_mat(&self) -> Array2<f64> {
        let (c_out, c_in, kh, kw) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((c_out, c_in * kh * kw))
            .expect("conv weight is contiguous")
            .to_owned()
    }

    pub fn forward(&self, x: &Array4<f64>) -> Result<(Array4<f64>, Conv2dCache)> {
        let (b, c_in, h, w) = x.dim();
        if c_in != self.weight.dim().1 {
            return Err(Error::ShapeError(format!(
                "{}: input has {} channels, expected {}",
                self.name,
                c_in,
                self.weight.dim().1
            )));
        }
        let geom = self.geom(h, w)?;
        let cols = im2col(x, &geom);
        let mut y_mat = self.weight_mat().dot(&cols);
        if let Some(bias) = &self.bias {
            for (mut row, &bv) in y_mat.rows_mut().into_iter().zip(bias.iter()) {
                row += bv;
            }
        }
        let c_out = self.weight.dim().0;
        let y = mat_to_nchw(&y_mat, b, c_out, geom.oh, geom.ow);
        Ok((
            y,
            Conv2dCache {
                cols,
                geom,
                batch: b,
            },
        ))
    }

    /// Returns dx and accumulates dweight/dbias into `grads`.
    pub fn backward(
        &self,
        cache: &Conv2dCache,
        dy: &Array4<f64>,
        grads: &mut GradStore,
    ) -> Array4<f64> {
        let dy_mat = nchw_to_mat(dy);
        let dw_mat = dy_mat.dot(&cache.cols.t());
        let (c_out, c_in, kh, kw) = self.weight.dim();
        let dw = dw_mat
            .into_shape_with_order((c_out, c_in, kh, kw))
            .expect("gradient shape matches weight");
        add_grad(grads, &format!("{}.weight", self.name), dw);
        if self.bias.is_some() {
            let db: Array1<f64> = dy_mat.sum_axis(ndarray::Axis(1));
            add_grad(grads, &format!("{}.bias", self.name), db);
        }
        let dcols = self.weight_mat().t().dot(&dy_mat);
        col2im(&dcols, cache.batch, &cache.geom)
    }
}

impl HasParams for Conv2d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ndarray::ArrayViewD<'a, f64>)>) {
        out.push((
            format!("{prefix}{}.weight", self.name),
            self.weight.view().into_dyn(),
        ));
        if let Some(bias) = &self.bias {
            out.push((format!("{prefix}{}.bias", self.name), bias.view().into_dyn()));
        }
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
        if let Some(bias) = &mut self.bias {
            out.push((
                format!("{prefix}{}.bias", self.name),
                bias.view_mut().into_dyn(),
            ));
        }
    }
}

pub struct ConvTranspose2dCache {
    x_mat: Array2<f64>,
    geom: ConvGeom,
    batch: usize,
}

/// Transposed convolution. Weight layout `(c_in, c_out, kh, kw)`;
/// output size `(h-1)*stride - 2*pad + k` per axis.
pub struct ConvTranspose2d {
    pub name: String,
    pub weight: Array4<f64>,
    pub bias: Option<Array1<f64>>,
    pub stride: usize,
    pub pad: (usize, usize),
}

impl ConvTranspose2d {
    pub fn new(
        name: &str,
        c_in: usize,
        c_out: usize,
        k: usize,
        stride: usize,
        pad: (usize, usize),
        bias: bool,
        seed: u64,
    ) -> Self {
        let weight = super::init::he_normal(
            (c_in, c_out, k, k),
            c_in * k * k,
            seed,
            &format!("{name}.weight"),
        );
        ConvTranspose2d {
            name: name.to_string(),
            weight,
            bias: bias.then(|| Array1::zeros(c_out)),
            stride,
            pad,
        }
    }

    pub fn out_size(&self, h: usize, w: usize) -> (usize, usize) {
        let (_, _, kh, kw) = self.weight.dim();
        (
            (h - 1) * self.stride + kh - 2 * self.pad.0,
            (w - 1) * self.stride + kw - 2 * self.pad.1,
        )
    }

    /// Geometry of the adjoint convolution, which maps the *output* image
    /// back onto the input positions.
    fn geom(&self, h_in: usize, w_in: usize) -> Result<ConvGeom> {
        let (_, c_out, kh, kw) = self.weight.dim();
        let (oh, ow) = self.out_size(h_in, w_in);
        let geom = ConvGeom::new(c_out, oh, ow, kh, kw, self.stride, self.pad.0, self.pad.1)?;
        if (geom.oh, geom.ow) != (h_in, w_in) {
            return Err(Error::ShapeError(format!(
                "{}: inconsistent transposed-conv geometry",
                self.name
            )));
        }
        Ok(geom)
    }

    fn weight_mat(&self) -> Array2<f64> {
        let (c_in, c_out, kh, kw) = self.weight.dim();
        self.weight
            .view()
            .into_shape_with_order((c_in, c_out * kh * kw))
            .expect("deconv weight is contiguous")
            .to_owned()
    }

    pub fn forward(&self, x: &Array4<f64>) -> Result<(Array4<f64>, ConvTranspose2dCache)> {
        let (b, c_in, h, w) = x.dim();
        if c_in != self.weight.dim().0 {
            return Err(Error::ShapeError(format!(
                "{}: input has {} channels, expected {}",
                self.name,
                c_in,
                self.weight.dim().0
            )));
        }
        let geom = self.geom(h, w)?;
        let x_mat = nchw_to_mat(x);
        let cols = self.weight_mat().t().dot(&x_mat);
        let mut y = col2im(&cols, b, &geom);
        if let Some(bias) = &self.bias {
            for bi in 0..b {
                for (ci, &bv) in bias.iter().enumerate() {
                    y.index_axis_mut(ndarray::Axis(0), bi)
                        .index_axis_mut(ndarray::Axis(0), ci)
                        .mapv_inplace(|v| v + bv);
                }
            }
        }
        Ok((
            y,
            ConvTranspose2dCache {
                x_mat,
                geom,
                batch: b,
            },
        ))
    }

    pub fn backward(
        &self,
        cache: &ConvTranspose2dCache,
        dy: &Array4<f64>,
        grads: &mut GradStore,
    ) -> Array4<f64> {
        let dy_cols = im2col(dy, &cache.geom);
        let (c_in, c_out, kh, kw) = self.weight.dim();
        let dw_mat = cache.x_mat.dot(&dy_cols.t());
        let dw = dw_mat
            .into_shape_with_order((c_in, c_out, kh, kw))
            .expect("gradient shape matches weight");
        add_grad(grads, &format!("{}.weight", self.name), dw);
        if self.bias.is_some() {
            let (b, _, oh, ow) = dy.dim();
            let mut db = Array1::zeros(c_out);
            for bi in 0..b {
                for ci in 0..c_out {
                    for yi in 0..oh {
                        for xi in 0..ow {
                            db[ci] += dy[[bi, ci, yi, xi]];
                        }
                    }
                }
            }
            add_grad(grads, &format!("{}.bias", self.name), db);
        }
        let dx_mat = self.weight_mat().dot(&dy_cols);
        let (h_in, w_in) = (cache.geom.oh, cache.geom.ow);
        mat_to_nchw(&dx_mat, cache.batch, c_in, h_in, w_in)
    }
}

impl HasParams for ConvTranspose2d {
    fn params<'a>(&'a self, prefix: &str, out: &mut Vec<(String, ndarray::ArrayViewD<'a, f64>)>) {
        out.push((
            format!("{prefix}{}.weight", self.name),
            self.weight.view().into_dyn(),
        ));
        if let Some(bias) = &self.bias {
            out.push((format!("{prefix}{}.bias", self.name), bias.view().into_dyn()));
        }
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
        if let Some(bias) = &mut self.bias {
            out.push((
                format!("{prefix}{}.bias", self.name),
                bias.view_mut().into_dyn(),
            ));
        }
    }
}
