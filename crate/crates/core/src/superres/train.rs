//! Desk-scale training and evaluation on synthetic low/high-resolution
//! pairs.
//!
//! High-resolution images are procedural textile-like prints (stripes,
//! checks, dots, rings, warped waves) with hard, supersampled edges. The
//! low-resolution side is an area-average downsample; the network input is
//! its bicubic re-upsample, and the loss is the mean squared error against
//! the original over the interior of random patches.

use ndarray::{s, Array1, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{bicubic_resize, check_factor, image_to_tensor, psnr, SRModel, HALO};
use crate::error::{Error, Result};
use crate::image::ImageBuffer;
use crate::nn::{relu_backward_inplace, Tensor};

const SUPERSAMPLE: usize = 3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub factor: u32,
    pub steps: usize,
    pub batch: usize,
    /// Side of the square high-resolution training patch.
    pub patch: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            factor: super::DEFAULT_FACTOR,
            steps: 600,
            batch: 8,
            patch: 48,
            learning_rate: 3e-4,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub images: usize,
    pub bicubic_psnr: f64,
    pub model_psnr: f64,
}

impl Evaluation {
    pub fn gain(&self) -> f64 {
        self.model_psnr - self.bicubic_psnr
    }
}

fn random_colour(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

type Pattern = Box<dyn Fn(f64, f64) -> bool>;

fn random_pattern(rng: &mut ChaCha8Rng) -> Pattern {
    let theta: f64 = rng.random_range(0.0..std::f64::consts::PI);
    let (c, s) = (theta.cos(), theta.sin());
    match rng.random_range(0..5) {
        0 => {
            let period = rng.random_range(5.0..24.0);
            let duty = rng.random_range(0.3..0.7);
            Box::new(move |x, y| ((x * c + y * s) / period).rem_euclid(1.0) < duty)
        }
        1 => {
            let cell = rng.random_range(4.0..18.0);
            Box::new(move |x, y| {
                let u = ((x * c + y * s) / cell).floor() as i64;
                let v = ((-x * s + y * c) / cell).floor() as i64;
                (u + v).rem_euclid(2) == 0
            })
        }
        2 => {
            let spacing = rng.random_range(7.0..24.0);
            let radius = spacing * rng.random_range(0.18..0.42);
            Box::new(move |x, y| {
                let row = (y / spacing).floor();
                let shift = if row as i64 % 2 == 0 { 0.0 } else { spacing / 2.0 };
                let dx = (x + shift).rem_euclid(spacing) - spacing / 2.0;
                let dy = y.rem_euclid(spacing) - spacing / 2.0;
                dx * dx + dy * dy < radius * radius
            })
        }
        3 => {
            let (cx, cy) = (rng.random_range(0.0..128.0), rng.random_range(0.0..128.0));
            let period = rng.random_range(5.0..20.0);
            Box::new(move |x, y| ((x - cx).hypot(y - cy) / period).rem_euclid(1.0) < 0.5)
        }
        _ => {
            let period = rng.random_range(6.0..20.0);
            let amp = rng.random_range(2.0..10.0);
            let wave = rng.random_range(20.0..60.0);
            Box::new(move |x, y| {
                let u = x * c + y * s;
                let v = -x * s + y * c;
                ((u + amp * (v / wave * std::f64::consts::TAU).sin()) / period).rem_euclid(1.0) < 0.5
            })
        }
    }
}

/// One procedural print of `size`x`size` pixels.
pub fn synthetic_print(size: usize, rng: &mut ChaCha8Rng) -> ImageBuffer {
    let base = random_pattern(rng);
    let overlay = random_pattern(rng);
    let colours = [random_colour(rng), random_colour(rng), random_colour(rng), random_colour(rng)];
    let (mx, my) = (rng.random_range(0.0..size as f64), rng.random_range(0.0..size as f64));
    let mr = rng.random_range(0.2..0.6) * size as f64;
    let shade = rng.random_range(0.0..0.3);
    let step = 1.0 / SUPERSAMPLE as f64;
    ImageBuffer::from_fn(size, size, |px, py| {
        let mut acc = [0.0; 3];
        for sy in 0..SUPERSAMPLE {
            for sx in 0..SUPERSAMPLE {
                let x = px as f64 + (sx as f64 + 0.5) * step;
                let y = py as f64 + (sy as f64 + 0.5) * step;
                let inside = (x - mx).hypot(y - my) < mr;
                let colour = match (inside, if inside { overlay(x, y) } else { base(x, y) }) {
                    (false, true) => colours[0],
                    (false, false) => colours[1],
                    (true, true) => colours[2],
                    (true, false) => colours[3],
                };
                let k = 1.0 - shade * y / size as f64;
                for c in 0..3 {
                    acc[c] += colour[c] * k;
                }
            }
        }
        let n = (SUPERSAMPLE * SUPERSAMPLE) as f64;
        [acc[0] / n, acc[1] / n, acc[2] / n]
    })
    .expect("positive size")
}

pub fn synthetic_corpus(count: usize, size: usize, seed: u64) -> Vec<ImageBuffer> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..count).map(|_| synthetic_print(size, &mut rng)).collect()
}

/// Area-average downsample by an integer factor; trailing rows and
/// columns that do not fill a whole block are dropped.
pub fn box_downsample(image: &ImageBuffer, factor: usize) -> Result<ImageBuffer> {
    let (w, h) = (image.width() / factor, image.height() / factor);
    if factor == 0 || w == 0 || h == 0 {
        return Err(Error::Argument(format!(
            "cannot downsample {}x{} by {factor}",
            image.width(),
            image.height()
        )));
    }
    let n = (factor * factor) as f64;
    ImageBuffer::from_fn(w, h, |x, y| {
        let mut acc = [0.0; 3];
        for dy in 0..factor {
            for dx in 0..factor {
                for (c, a) in acc.iter_mut().enumerate() {
                    *a += image.get(x * factor + dx, y * factor + dy, c);
                }
            }
        }
        acc.map(|a| a / n)
    })
}

/// Crops `image` so both sides are multiples of `factor`, and returns the
/// cropped original with its bicubic reconstruction from the downsample.
pub fn make_pair(image: &ImageBuffer, factor: u32) -> Result<(ImageBuffer, ImageBuffer)> {
    check_factor(factor)?;
    let f = factor as usize;
    let lr = box_downsample(image, f)?;
    let (w, h) = (lr.width() * f, lr.height() * f);
    let hr = ImageBuffer::from_fn(w, h, |x, y| [0, 1, 2].map(|c| image.get(x, y, c)))?;
    Ok((hr, bicubic_resize(&lr, f)))
}

struct Adam {
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
    mb: Vec<Array1<f64>>,
    vb: Vec<Array1<f64>>,
    t: i32,
}

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

impl Adam {
    fn new(model: &SRModel) -> Self {
        Self {
            m: model.convs.iter().map(|c| Array2::zeros(c.weight().dim())).collect(),
            v: model.convs.iter().map(|c| Array2::zeros(c.weight().dim())).collect(),
            mb: model.convs.iter().map(|c| Array1::zeros(c.out_channels())).collect(),
            vb: model.convs.iter().map(|c| Array1::zeros(c.out_channels())).collect(),
            t: 0,
        }
    }

    fn step(&mut self, model: &mut SRModel, grads: &[(Array2<f64>, Array1<f64>)], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t);
        let c2 = 1.0 - BETA2.powi(self.t);
        for (i, conv) in model.convs.iter_mut().enumerate() {
            let (gw, gb) = &grads[i];
            ndarray::Zip::from(conv.weight_mut())
                .and(&mut self.m[i])
                .and(&mut self.v[i])
                .and(gw)
                .for_each(|p, m, v, g| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                });
            ndarray::Zip::from(conv.bias_mut())
                .and(&mut self.mb[i])
                .and(&mut self.vb[i])
                .and(gb)
                .for_each(|p, m, v, g| {
                    *m = BETA1 * *m + (1.0 - BETA1) * g;
                    *v = BETA2 * *v + (1.0 - BETA2) * g * g;
                    *p -= lr * (*m / c1) / ((*v / c2).sqrt() + EPS);
                });
        }
    }
}

/// Mean squared error over the patch interior (a `HALO` border is ignored)
/// and its parameter gradients.
fn patch_loss_and_grads(
    model: &SRModel,
    input: &Tensor,
    target: &Tensor,
) -> Result<(f64, Vec<(Array2<f64>, Array1<f64>)>)> {
    let pass = model.forward_pass(input)?;
    let (_, h, w) = target.dim();
    let mut g_out = Tensor::zeros(target.dim());
    let interior = s![.., HALO..h - HALO, HALO..w - HALO];
    let diff = &pass.out.slice(interior) - &target.slice(interior);
    let n = diff.len() as f64;
    let loss = diff.iter().map(|d| d * d).sum::<f64>() / n;
    g_out.slice_mut(interior).assign(&(diff * (2.0 / n)));

    let [c1, c2, c3] = &model.convs;
    let (mut g_r2, p3) = c3.backward(&pass.r2, &g_out)?;
    relu_backward_inplace(&mut g_r2, &pass.r2);
    let (mut g_r1, p2) = c2.backward(&pass.r1, &g_r2)?;
    relu_backward_inplace(&mut g_r1, &pass.r1);
    let p1 = c1.param_grads(input, &g_r1)?;
    Ok((
        loss,
        vec![(p1.weight, p1.bias), (p2.weight, p2.bias), (p3.weight, p3.bias)],
    ))
}

/// Cosine-annealed step size, falling from `base` to zero over `steps`.
pub fn cosine_rate(base: f64, step: usize, steps: usize) -> f64 {
    let t = step as f64 / steps.max(1) as f64;
    0.5 * base * (1.0 + (std::f64::consts::PI * t).cos())
}

/// Trains `model` in place with Adam on random patches of `corpus`.
/// `on_step` receives the step index and the batch loss. Returns the loss
/// of every step.
pub fn train(
    model: &mut SRModel,
    corpus: &[ImageBuffer],
    config: &TrainConfig,
    mut on_step: impl FnMut(usize, f64),
) -> Result<Vec<f64>> {
    check_factor(config.factor)?;
    if corpus.is_empty() {
        return Err(Error::Argument("training corpus is empty".into()));
    }
    if config.patch <= 2 * HALO || config.batch == 0 {
        return Err(Error::Argument(format!(
            "patch must exceed {} pixels and batch must be positive",
            2 * HALO
        )));
    }
    let pairs = corpus
        .iter()
        .map(|img| {
            let (hr, up) = make_pair(img, config.factor)?;
            if hr.width() < config.patch || hr.height() < config.patch {
                return Err(Error::Argument(format!(
                    "training image {}x{} smaller than patch {}",
                    hr.width(),
                    hr.height(),
                    config.patch
                )));
            }
            Ok((image_to_tensor(&up), image_to_tensor(&hr)))
        })
        .collect::<Result<Vec<_>>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut adam = Adam::new(model);
    let mut history = Vec::with_capacity(config.steps);
    let p = config.patch;
    for step in 0..config.steps {
        let mut total = 0.0;
        let mut acc: Option<Vec<(Array2<f64>, Array1<f64>)>> = None;
        for _ in 0..config.batch {
            let (input, target) = &pairs[rng.random_range(0..pairs.len())];
            let (_, h, w) = input.dim();
            let y = rng.random_range(0..=h - p);
            let x = rng.random_range(0..=w - p);
            let region = s![.., y..y + p, x..x + p];
            let (loss, grads) =
                patch_loss_and_grads(model, &input.slice(region).to_owned(), &target.slice(region).to_owned())?;
            total += loss;
            match acc.as_mut() {
                None => acc = Some(grads),
                Some(a) => {
                    for ((aw, ab), (gw, gb)) in a.iter_mut().zip(grads) {
                        *aw += &gw;
                        *ab += &gb;
                    }
                }
            }
        }
        let scale = 1.0 / config.batch as f64;
        let mut grads = acc.expect("positive batch");
        for (gw, gb) in &mut grads {
            *gw *= scale;
            *gb *= scale;
        }
        let loss = total * scale;
        if !loss.is_finite() {
            return Err(Error::Numerical { iteration: step, trace: Vec::new() });
        }
        adam.step(model, &grads, cosine_rate(config.learning_rate, step, config.steps));
        history.push(loss);
        on_step(step, loss);
    }
    Ok(history)
}

/// Mean PSNR of bicubic and of model output against the originals, with a
/// border of `factor` pixels shaved.
pub fn evaluate(model: &SRModel, corpus: &[ImageBuffer], factor: u32) -> Result<Evaluation> {
    if corpus.is_empty() {
        return Err(Error::Argument("evaluation set is empty".into()));
    }
    let shave = factor as usize;
    let (mut bic, mut net) = (0.0, 0.0);
    for img in corpus {
        let (hr, up) = make_pair(img, factor)?;
        bic += psnr(&up, &hr, shave)?;
        net += psnr(&model.forward(&up)?, &hr, shave)?;
    }
    let n = corpus.len() as f64;
    Ok(Evaluation {
        images: corpus.len(),
        bicubic_psnr: bic / n,
        model_psnr: net / n,
    })
}
