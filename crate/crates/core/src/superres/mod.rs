//! Super-resolution: bicubic pre-upsample followed by a three-stage
//! convolutional refinement (9-1-5 kernels, 64-32-3 channels), with an
//! optional Gaussian denoise pre-pass.

use std::path::{Path, PathBuf};

use ndarray::Axis;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, CHANNELS};
use crate::nn::{relu_inplace, Conv2d, Tensor};
use crate::weights::{self, NamedTensor};

pub mod train;

pub const DEFAULT_FACTOR: u32 = 4;
pub const SUPPORTED_FACTORS: [u32; 3] = [2, 3, 4];

/// Receptive-field radius of the network: 4 (9x9) + 0 (1x1) + 2 (5x5).
pub const HALO: usize = 6;
const TILE: usize = 128;

const DENOISE_SIGMA: f64 = 0.8;
const CUBIC_A: f64 = -0.5;

const WIDTHS: [usize; 3] = [64, 32, 3];
const KERNELS: [usize; 3] = [9, 1, 5];
const NAMES: [&str; 3] = ["conv1", "conv2", "conv3"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SRConfig {
    pub factor: u32,
    pub denoise: bool,
    pub weights_path: Option<PathBuf>,
}

impl Default for SRConfig {
    fn default() -> Self {
        Self {
            factor: DEFAULT_FACTOR,
            denoise: false,
            weights_path: None,
        }
    }
}

impl SRConfig {
    pub fn validate(&self) -> Result<()> {
        check_factor(self.factor)
    }
}

pub fn check_factor(factor: u32) -> Result<()> {
    if SUPPORTED_FACTORS.contains(&factor) {
        Ok(())
    } else {
        Err(Error::Argument(format!(
            "scaling factor {factor} not in {SUPPORTED_FACTORS:?}"
        )))
    }
}

/// Keys cubic convolution kernel.
pub fn cubic_weight(t: f64) -> f64 {
    let t = t.abs();
    let a = CUBIC_A;
    if t <= 1.0 {
        ((a + 2.0) * t - (a + 3.0)) * t * t + 1.0
    } else if t < 2.0 {
        ((a * t - 5.0 * a) * t + 8.0 * a) * t - 4.0 * a
    } else {
        0.0
    }
}

/// Four source indices (edge-clamped) and weights for one output coordinate.
fn cubic_taps(dst: usize, factor: usize, len: usize) -> ([usize; 4], [f64; 4]) {
    let src = (dst as f64 + 0.5) / factor as f64 - 0.5;
    let base = src.floor();
    let frac = src - base;
    let mut idx = [0; 4];
    let mut w = [0.0; 4];
    for k in 0..4 {
        let off = k as f64 - 1.0;
        idx[k] = (base + off).clamp(0.0, (len - 1) as f64) as usize;
        w[k] = cubic_weight(frac - off);
    }
    let sum: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= sum);
    (idx, w)
}

/// Weighted sum written relative to one tap so that equal inputs
/// reproduce exactly.
#[inline]
fn blend(vals: [f64; 4], w: &[f64; 4]) -> f64 {
    let r = vals[1];
    r + w.iter().zip(vals).map(|(w, v)| w * (v - r)).sum::<f64>()
}

/// Separable bicubic upsampling by an integer factor, half-pixel aligned.
pub fn bicubic_upscale(image: &ImageBuffer, factor: u32) -> Result<ImageBuffer> {
    check_factor(factor)?;
    Ok(bicubic_resize(image, factor as usize))
}

pub(crate) fn bicubic_resize(image: &ImageBuffer, f: usize) -> ImageBuffer {
    let (w, h) = (image.width(), image.height());
    let (ow, oh) = (w * f, h * f);
    let src = image.data();
    let xt: Vec<_> = (0..ow).map(|x| cubic_taps(x, f, w)).collect();
    let yt: Vec<_> = (0..oh).map(|y| cubic_taps(y, f, h)).collect();

    let mut rows = vec![0.0; h * ow * CHANNELS];
    for y in 0..h {
        for (x, (idx, wt)) in xt.iter().enumerate() {
            for c in 0..CHANNELS {
                let v = idx.map(|i| src[(y * w + i) * CHANNELS + c]);
                rows[(y * ow + x) * CHANNELS + c] = blend(v, wt);
            }
        }
    }
    let mut out = vec![0.0; oh * ow * CHANNELS];
    for (y, (idx, wt)) in yt.iter().enumerate() {
        for x in 0..ow {
            for c in 0..CHANNELS {
                let v = idx.map(|i| rows[(i * ow + x) * CHANNELS + c]);
                out[(y * ow + x) * CHANNELS + c] = blend(v, wt);
            }
        }
    }
    ImageBuffer::from_clamped(ow, oh, out).expect("positive dimensions")
}

/// 3x3 Gaussian smoothing (sigma 0.8), edge-clamped, per channel.
pub fn denoise(image: &ImageBuffer) -> ImageBuffer {
    let g: Vec<f64> = [-1.0f64, 0.0, 1.0]
        .iter()
        .map(|d| (-d * d / (2.0 * DENOISE_SIGMA * DENOISE_SIGMA)).exp())
        .collect();
    let norm: f64 = g.iter().sum::<f64>().powi(2);
    let (w, h) = (image.width(), image.height());
    let mut out = Vec::with_capacity(w * h * CHANNELS);
    for y in 0..h {
        for x in 0..w {
            for c in 0..CHANNELS {
                let mut acc = 0.0;
                for (dy, gy) in g.iter().enumerate() {
                    let yy = (y + dy).saturating_sub(1).min(h - 1);
                    for (dx, gx) in g.iter().enumerate() {
                        let xx = (x + dx).saturating_sub(1).min(w - 1);
                        acc += gy * gx * image.get(xx, yy, c);
                    }
                }
                out.push(acc / norm);
            }
        }
    }
    ImageBuffer::from_clamped(w, h, out).expect("positive dimensions")
}

/// Peak signal-to-noise ratio in dB for unit-range images, ignoring a
/// `shave`-pixel border.
pub fn psnr(a: &ImageBuffer, b: &ImageBuffer, shave: usize) -> Result<f64> {
    if a.width() != b.width() || a.height() != b.height() {
        return Err(Error::Shape(format!(
            "{}x{} vs {}x{}",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    if 2 * shave >= a.width() || 2 * shave >= a.height() {
        return Err(Error::Argument(format!("shave {shave} leaves no pixels")));
    }
    let mut se = 0.0;
    let mut n = 0usize;
    for y in shave..a.height() - shave {
        for x in shave..a.width() - shave {
            for c in 0..CHANNELS {
                let d = a.get(x, y, c) - b.get(x, y, c);
                se += d * d;
                n += 1;
            }
        }
    }
    let mse = se / n as f64;
    Ok(if mse == 0.0 { f64::INFINITY } else { -10.0 * mse.log10() })
}

/// Planar RGB tensor with values in the image's own range.
pub fn image_to_tensor(image: &ImageBuffer) -> Tensor {
    let (w, h) = (image.width(), image.height());
    let mut t = Tensor::zeros((CHANNELS, h, w));
    for (c, mut plane) in t.axis_iter_mut(Axis(0)).enumerate() {
        for (dst, px) in plane.iter_mut().zip(image.data().chunks_exact(CHANNELS)) {
            *dst = px[c];
        }
    }
    t
}

pub fn tensor_to_image(t: &Tensor) -> Result<ImageBuffer> {
    let (c, h, w) = t.dim();
    if c != CHANNELS {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut data = vec![0.0; h * w * CHANNELS];
    for (ch, plane) in t.axis_iter(Axis(0)).enumerate() {
        for (i, v) in plane.iter().enumerate() {
            data[i * CHANNELS + ch] = *v;
        }
    }
    ImageBuffer::from_clamped(w, h, data)
}

/// Intermediate activations of one forward pass, kept for backprop.
pub(crate) struct SrPass {
    pub r1: Tensor,
    pub r2: Tensor,
    pub out: Tensor,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SRModel {
    pub(crate) convs: [Conv2d; 3],
}

impl SRModel {
    /// Center-tap identity mapping through the first three channels of every
    /// stage. The other units keep random incoming weights but nothing reads
    /// from them yet, so the output equals the input exactly while every
    /// weight still receives gradient during training.
    pub fn identity(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut convs = [0, 1, 2].map(|i| {
            let cin = if i == 0 { CHANNELS } else { WIDTHS[i - 1] };
            Conv2d::he_init(cin, WIDTHS[i], KERNELS[i], &mut rng)
        });
        for (i, conv) in convs.iter_mut().enumerate() {
            let k = KERNELS[i];
            let centre = (k / 2) * k + k / 2;
            let w = conv.weight_mut();
            for o in 0..CHANNELS {
                w.row_mut(o).fill(0.0);
                w[[o, o * k * k + centre]] = 1.0;
            }
        }
        Self { convs }
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.is_file() {
            return Err(Error::Asset(format!(
                "super-resolution weights not found at {}",
                path.display()
            )));
        }
        Self::from_tensors(weights::load(path)?)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        Self::from_tensors(weights::decode(bytes)?)
    }

    fn from_tensors(mut map: std::collections::HashMap<String, NamedTensor>) -> Result<Self> {
        let mut convs = Vec::with_capacity(3);
        for i in 0..3 {
            let cin = if i == 0 { CHANNELS } else { WIDTHS[i - 1] };
            let (o, k) = (WIDTHS[i], KERNELS[i]);
            let w = weights::take(&mut map, &format!("{}.weight", NAMES[i]), &[o, cin, k, k])?;
            let b = weights::take(&mut map, &format!("{}.bias", NAMES[i]), &[o])?;
            convs.push(Conv2d::new(cin, o, k, w, b)?);
        }
        let convs: [Conv2d; 3] = convs.try_into().expect("three stages");
        Ok(Self { convs })
    }

    pub fn to_tensors(&self) -> Vec<(String, NamedTensor)> {
        let mut out = Vec::new();
        for (i, conv) in self.convs.iter().enumerate() {
            let k = conv.kernel();
            out.push((
                format!("{}.weight", NAMES[i]),
                NamedTensor {
                    shape: vec![conv.out_channels(), conv.in_channels(), k, k],
                    values: conv.weight().iter().copied().collect(),
                },
            ));
            out.push((
                format!("{}.bias", NAMES[i]),
                NamedTensor {
                    shape: vec![conv.out_channels()],
                    values: conv.bias().to_vec(),
                },
            ));
        }
        out
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        weights::save(path, &self.to_tensors())
    }

    pub fn stages(&self) -> &[Conv2d; 3] {
        &self.convs
    }

    pub(crate) fn forward_pass(&self, x: &Tensor) -> Result<SrPass> {
        let mut r1 = self.convs[0].forward(x)?;
        relu_inplace(&mut r1);
        let mut r2 = self.convs[1].forward(&r1)?;
        relu_inplace(&mut r2);
        let out = self.convs[2].forward(&r2)?;
        Ok(SrPass { r1, r2, out })
    }

    /// Unclamped network output for a planar tensor.
    pub fn forward_tensor(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.forward_pass(x)?.out)
    }

    /// Refines an image of any size, tile by tile with a halo wide enough
    /// that tiling does not change the result.
    pub fn forward(&self, image: &ImageBuffer) -> Result<ImageBuffer> {
        let input = image_to_tensor(image);
        let (_, h, w) = input.dim();
        let mut out = Tensor::zeros((CHANNELS, h, w));
        for ty in (0..h).step_by(TILE) {
            for tx in (0..w).step_by(TILE) {
                let (y1, x1) = ((ty + TILE).min(h), (tx + TILE).min(w));
                let (hy0, hx0) = (ty.saturating_sub(HALO), tx.saturating_sub(HALO));
                let (hy1, hx1) = ((y1 + HALO).min(h), (x1 + HALO).min(w));
                let tile = input
                    .slice(ndarray::s![.., hy0..hy1, hx0..hx1])
                    .to_owned();
                let res = self.forward_tensor(&tile)?;
                out.slice_mut(ndarray::s![.., ty..y1, tx..x1]).assign(&res.slice(ndarray::s![
                    ..,
                    ty - hy0..y1 - hy0,
                    tx - hx0..x1 - hx0
                ]));
            }
        }
        tensor_to_image(&out)
    }
}

/// Applies the trained network to an image.
pub fn sr_forward(model: &SRModel, image: &ImageBuffer) -> Result<ImageBuffer> {
    model.forward(image)
}

/// Loads the model named by the config.
pub fn load_model(config: &SRConfig) -> Result<SRModel> {
    match &config.weights_path {
        Some(p) => SRModel::load(p),
        None => Err(Error::Asset("no super-resolution weights configured".into())),
    }
}

/// Optional denoise, bicubic upsampling by `config.factor`, then refinement.
pub fn upscale(image: &ImageBuffer, model: &SRModel, config: &SRConfig) -> Result<ImageBuffer> {
    config.validate()?;
    let base = if config.denoise { denoise(image) } else { image.clone() };
    let up = bicubic_upscale(&base, config.factor)?;
    model.forward(&up)
}
