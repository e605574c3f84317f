//! Minimal CPU convolution kernels with hand-written backward passes.
//!
//! Tensors are `(channels, height, width)` arrays in standard layout.
//! Convolutions use "same" zero padding and unit stride and run as
//! im2col + GEMM over bands of output rows so the column buffer stays small
//! at large image sizes.

use ndarray::linalg::general_mat_mul;
use ndarray::{s, Array1, Array2, Array3, ArrayView2, ArrayViewMut2};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};

pub type Tensor = Array3<f64>;

/// Upper bound on column-buffer entries per band (16 MiB of f64).
const BAND_LIMIT: usize = 1 << 21;

#[derive(Debug, Clone, PartialEq)]
pub struct Conv2d {
    in_channels: usize,
    out_channels: usize,
    kernel: usize,
    /// `(out, in * k * k)`, i.e. OIHW flattened.
    weight: Array2<f64>,
    bias: Array1<f64>,
}

/// Gradients of a convolution's parameters, same layout as the layer.
#[derive(Debug, Clone)]
pub struct ConvGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Conv2d {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: usize,
        weight: Vec<f64>,
        bias: Vec<f64>,
    ) -> Result<Self> {
        if kernel % 2 == 0 || kernel == 0 {
            return Err(Error::Argument(format!("kernel size {kernel} must be odd")));
        }
        let fan_in = in_channels * kernel * kernel;
        if weight.len() != out_channels * fan_in || bias.len() != out_channels {
            return Err(Error::Shape(format!(
                "conv {in_channels}->{out_channels} k{kernel}: got {} weights, {} biases",
                weight.len(),
                bias.len()
            )));
        }
        if weight.iter().chain(&bias).any(|v| !v.is_finite()) {
            return Err(Error::Asset("non-finite convolution weight".into()));
        }
        let weight = Array2::from_shape_vec((out_channels, fan_in), weight)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(Self {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias: Array1::from(bias),
        })
    }

    /// He-normal initialization, zero bias.
    pub fn he_init(in_channels: usize, out_channels: usize, kernel: usize, rng: &mut impl Rng) -> Self {
        let fan_in = in_channels * kernel * kernel;
        let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive std");
        let weight = Array2::from_shape_simple_fn((out_channels, fan_in), || normal.sample(rng));
        Self {
            in_channels,
            out_channels,
            kernel,
            weight,
            bias: Array1::zeros(out_channels),
        }
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn kernel(&self) -> usize {
        self.kernel
    }

    pub fn weight(&self) -> &Array2<f64> {
        &self.weight
    }

    pub fn weight_mut(&mut self) -> &mut Array2<f64> {
        &mut self.weight
    }

    pub fn bias(&self) -> &Array1<f64> {
        &self.bias
    }

    pub fn bias_mut(&mut self) -> &mut Array1<f64> {
        &mut self.bias
    }

    fn pad(&self) -> usize {
        self.kernel / 2
    }

    fn band_rows(&self, h: usize, w: usize) -> usize {
        let fan_in = self.in_channels * self.kernel * self.kernel;
        (BAND_LIMIT / (fan_in * w).max(1)).clamp(1, h)
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.dim().0 != self.in_channels {
            return Err(Error::Shape(format!(
                "conv expects {} input channels, got {}",
                self.in_channels,
                x.dim().0
            )));
        }
        Ok(())
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        self.check_input(x)?;
        let (_, h, w) = x.dim();
        let fan_in = self.in_channels * self.kernel * self.kernel;
        let band = self.band_rows(h, w);
        let mut out = Tensor::zeros((self.out_channels, h, w));
        let mut cols = vec![0.0; fan_in * band * w];
        {
            let mut out2 = out
                .view_mut()
                .into_shape_with_order((self.out_channels, h * w))
                .expect("standard layout");
            for r0 in (0..h).step_by(band) {
                let r1 = (r0 + band).min(h);
                let n = (r1 - r0) * w;
                im2col(x, self.kernel, self.pad(), r0, r1, &mut cols[..fan_in * n]);
                let cview = ArrayView2::from_shape((fan_in, n), &cols[..fan_in * n]).unwrap();
                let mut oband = out2.slice_mut(s![.., r0 * w..r1 * w]);
                general_mat_mul(1.0, &self.weight, &cview, 0.0, &mut oband);
            }
        }
        for (mut plane, b) in out.outer_iter_mut().zip(self.bias.iter()) {
            plane += *b;
        }
        Ok(out)
    }

    /// Gradient with respect to the input only.
    pub fn backward_input(&self, grad_out: &Tensor) -> Result<Tensor> {
        self.backward_impl(None, grad_out, true).map(|(g, _)| g)
    }

    /// Gradients with respect to the input and the parameters.
    pub fn backward(&self, x: &Tensor, grad_out: &Tensor) -> Result<(Tensor, ConvGrads)> {
        self.check_input(x)?;
        let (g, p) = self.backward_impl(Some(x), grad_out, true)?;
        Ok((g, p.expect("parameter grads requested")))
    }

    /// Parameter gradients only; skips the input-gradient GEMM.
    pub fn param_grads(&self, x: &Tensor, grad_out: &Tensor) -> Result<ConvGrads> {
        self.check_input(x)?;
        let (_, p) = self.backward_impl(Some(x), grad_out, false)?;
        Ok(p.expect("parameter grads requested"))
    }

    fn backward_impl(
        &self,
        x: Option<&Tensor>,
        grad_out: &Tensor,
        want_input: bool,
    ) -> Result<(Tensor, Option<ConvGrads>)> {
        let (oc, h, w) = grad_out.dim();
        if oc != self.out_channels {
            return Err(Error::Shape(format!(
                "gradient has {oc} channels, layer produces {}",
                self.out_channels
            )));
        }
        let fan_in = self.in_channels * self.kernel * self.kernel;
        let band = self.band_rows(h, w);
        let gout2 = grad_out
            .view()
            .into_shape_with_order((oc, h * w))
            .map_err(|e| Error::Shape(e.to_string()))?;
        let mut grad_in = if want_input {
            Tensor::zeros((self.in_channels, h, w))
        } else {
            Tensor::zeros((0, 0, 0))
        };
        let mut cols = vec![0.0; fan_in * band * w];
        let mut params = x.map(|_| ConvGrads {
            weight: Array2::zeros(self.weight.dim()),
            bias: Array1::zeros(self.out_channels),
        });
        let wt = self.weight.t();
        for r0 in (0..h).step_by(band) {
            let r1 = (r0 + band).min(h);
            let n = (r1 - r0) * w;
            let gband = gout2.slice(s![.., r0 * w..r1 * w]);
            if let (Some(x), Some(p)) = (x, params.as_mut()) {
                im2col(x, self.kernel, self.pad(), r0, r1, &mut cols[..fan_in * n]);
                let cview = ArrayView2::from_shape((fan_in, n), &cols[..fan_in * n]).unwrap();
                general_mat_mul(1.0, &gband, &cview.t(), 1.0, &mut p.weight);
            }
            if want_input {
                let mut dcols = ArrayViewMut2::from_shape((fan_in, n), &mut cols[..fan_in * n]).unwrap();
                general_mat_mul(1.0, &wt, &gband, 0.0, &mut dcols);
                col2im_add(&cols[..fan_in * n], self.kernel, self.pad(), r0, r1, &mut grad_in);
            }
        }
        if let Some(p) = params.as_mut() {
            for (b, plane) in p.bias.iter_mut().zip(grad_out.outer_iter()) {
                *b = plane.sum();
            }
        }
        Ok((grad_in, params))
    }
}

/// Source column range `[lo, hi)` of destination columns that fall inside
/// the image for horizontal offset `off`.
#[inline]
fn valid_range(w: usize, off: isize) -> (usize, usize) {
    let lo = (-off).max(0) as usize;
    let hi = ((w as isize) - off).clamp(0, w as isize) as usize;
    (lo.min(hi), hi)
}

fn im2col(x: &Tensor, k: usize, pad: usize, r0: usize, r1: usize, cols: &mut [f64]) {
    let (c, h, w) = x.dim();
    let xs = x.as_slice().expect("standard layout");
    let n = (r1 - r0) * w;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let dst_row = &mut cols[row * n..(row + 1) * n];
                let off = kx as isize - pad as isize;
                let (lo, hi) = valid_range(w, off);
                for r in r0..r1 {
                    let d = &mut dst_row[(r - r0) * w..(r - r0 + 1) * w];
                    let sr = r as isize + ky as isize - pad as isize;
                    if sr < 0 || sr >= h as isize {
                        d.fill(0.0);
                        continue;
                    }
                    let src = &xs[(ci * h + sr as usize) * w..(ci * h + sr as usize + 1) * w];
                    d[..lo].fill(0.0);
                    d[hi..].fill(0.0);
                    if lo == hi {
                        continue;
                    }
                    let s0 = (lo as isize + off) as usize;
                    d[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                }
            }
        }
    }
}

fn col2im_add(cols: &[f64], k: usize, pad: usize, r0: usize, r1: usize, out: &mut Tensor) {
    let (c, h, w) = out.dim();
    let os = out.as_slice_mut().expect("standard layout");
    let n = (r1 - r0) * w;
    for ci in 0..c {
        for ky in 0..k {
            for kx in 0..k {
                let row = (ci * k + ky) * k + kx;
                let src_row = &cols[row * n..(row + 1) * n];
                let off = kx as isize - pad as isize;
                let (lo, hi) = valid_range(w, off);
                for r in r0..r1 {
                    let sr = r as isize + ky as isize - pad as isize;
                    if sr < 0 || sr >= h as isize || lo == hi {
                        continue;
                    }
                    let s = &src_row[(r - r0) * w + lo..(r - r0) * w + hi];
                    let s0 = (lo as isize + off) as usize;
                    let base = (ci * h + sr as usize) * w + s0;
                    for (o, v) in os[base..base + (hi - lo)].iter_mut().zip(s) {
                        *o += v;
                    }
                }
            }
        }
    }
}

pub fn relu_inplace(x: &mut Tensor) {
    x.mapv_inplace(|v| v.max(0.0));
}

/// Zeroes gradient entries whose ReLU output was not positive.
pub fn relu_backward_inplace(grad: &mut Tensor, output: &Tensor) {
    ndarray::Zip::from(grad).and(output).for_each(|g, &o| {
        if o <= 0.0 {
            *g = 0.0;
        }
    });
}

/// 2x2 stride-2 max pooling, flooring odd dimensions. Returns the pooled
/// tensor and the flat input index of each maximum.
pub fn max_pool2(x: &Tensor) -> (Tensor, Vec<usize>) {
    let (c, h, w) = x.dim();
    let (oh, ow) = (h / 2, w / 2);
    let xs = x.as_slice().expect("standard layout");
    let mut out = Tensor::zeros((c, oh, ow));
    let mut arg = Vec::with_capacity(c * oh * ow);
    let os = out.as_slice_mut().unwrap();
    let mut idx = 0;
    for ci in 0..c {
        for y in 0..oh {
            for xx in 0..ow {
                let base = (ci * h + 2 * y) * w + 2 * xx;
                let mut best = base;
                for cand in [base + 1, base + w, base + w + 1] {
                    if xs[cand] > xs[best] {
                        best = cand;
                    }
                }
                os[idx] = xs[best];
                arg.push(best);
                idx += 1;
            }
        }
    }
    (out, arg)
}

pub fn max_pool2_backward(grad_out: &Tensor, argmax: &[usize], input_dim: (usize, usize, usize)) -> Tensor {
    let mut g = Tensor::zeros(input_dim);
    let gs = g.as_slice_mut().unwrap();
    for (v, &i) in grad_out.iter().zip(argmax) {
        gs[i] += v;
    }
    g
}
