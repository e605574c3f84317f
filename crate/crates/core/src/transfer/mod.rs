//! Optimization-based style transfer.
//!
//! A seed image `x` is optimized with L-BFGS to minimize
//! `alpha * content_loss(p, x) + beta * style_loss(a, x)`, where `p` is the
//! content (silhouette) image, `a` the style (print, pattern or colour)
//! image, and both losses are measured on activations of a [`FeatureNet`].
//! Pixels are left unclamped during optimization and clamped on output.

mod loss;
mod noise;

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

pub use loss::{content_loss, gram, style_loss, GramMatrix, StyleLayer};
pub use noise::{make_seed, NoiseKind, NoiseSpec};

use crate::error::{Error, Result};
use crate::features::{pixels_to_tensor, tensor_grad_to_pixels, FeatureNet, LayerId};
use crate::image::ImageBuffer;
use crate::nn::Tensor;
use crate::optim::{self, Eval, LbfgsOptions, Termination};

pub const DEFAULT_ALPHA: f64 = 0.05;
pub const DEFAULT_BETA: f64 = 5.0;
pub const DEFAULT_ITERATIONS: usize = 25;
pub const MAX_ITERATIONS: usize = 500;
pub const DEFAULT_WORKING_SIZE: usize = 600;
pub const DEFAULT_CONTENT_LAYER: &str = "block4_conv2";
pub const DEFAULT_STYLE_LAYERS: [&str; 5] = [
    "block1_conv1",
    "block2_conv1",
    "block3_conv1",
    "block4_conv1",
    "block5_conv1",
];
/// L-BFGS history length.
pub const HISTORY: usize = 10;
/// Largest per-pixel change of the very first optimizer step.
const FIRST_STEP: f64 = 0.05;

/// How the optimized image is initialized.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SeedInit {
    #[default]
    Noise,
    /// Start from the (resized) content image instead of noise.
    Content,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransferParams {
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
    pub noise: NoiseSpec,
    #[serde(default)]
    pub init: SeedInit,
    pub content_layers: Vec<LayerId>,
    pub style_layers: Vec<StyleLayer>,
    pub working_size: usize,
}

impl Default for TransferParams {
    fn default() -> Self {
        let w = 1.0 / DEFAULT_STYLE_LAYERS.len() as f64;
        Self {
            alpha: DEFAULT_ALPHA,
            beta: DEFAULT_BETA,
            iterations: DEFAULT_ITERATIONS,
            noise: NoiseSpec::default(),
            init: SeedInit::Noise,
            content_layers: vec![LayerId::new(DEFAULT_CONTENT_LAYER)],
            style_layers: DEFAULT_STYLE_LAYERS
                .iter()
                .map(|l| StyleLayer { layer: LayerId::new(*l), weight: w })
                .collect(),
            working_size: DEFAULT_WORKING_SIZE,
        }
    }
}

impl TransferParams {
    /// Checks every field against `net`; collects all problems rather than
    /// stopping at the first.
    pub fn problems(&self, net: &FeatureNet) -> Vec<(String, String)> {
        let mut out = Vec::new();
        let mut bad = |field: &str, msg: String| out.push((field.to_string(), msg));
        if !(self.alpha.is_finite() && self.alpha >= 0.0) {
            bad("alpha", format!("{} must be a finite value >= 0", self.alpha));
        }
        if !(self.beta.is_finite() && self.beta >= 0.0) {
            bad("beta", format!("{} must be a finite value >= 0", self.beta));
        }
        if self.alpha + self.beta <= 0.0 {
            bad("alpha", "alpha + beta must be positive".into());
        }
        if !(1..=MAX_ITERATIONS).contains(&self.iterations) {
            bad("iterations", format!("{} is outside 1..={MAX_ITERATIONS}", self.iterations));
        }
        if let Err(e) = self.noise.validate() {
            bad("noise", e.to_string());
        }
        if self.working_size < net.min_input_size() {
            bad(
                "working_size",
                format!("{} is below the network minimum {}", self.working_size, net.min_input_size()),
            );
        }
        if self.content_layers.is_empty() {
            bad("content_layers", "at least one content layer is required".into());
        }
        for l in &self.content_layers {
            if !net.contains(l) {
                bad("content_layers", format!("unknown layer `{l}`"));
            }
        }
        if self.style_layers.is_empty() {
            bad("style_layers", "at least one style layer is required".into());
        }
        for l in &self.style_layers {
            if !net.contains(&l.layer) {
                bad("style_layers", format!("unknown layer `{}`", l.layer));
            }
            if !(l.weight.is_finite() && l.weight >= 0.0) {
                bad("style_layers", format!("weight {} of `{}` is invalid", l.weight, l.layer));
            }
        }
        let sum: f64 = self.style_layers.iter().map(|l| l.weight).sum();
        if !self.style_layers.is_empty() && (sum - 1.0).abs() > 1e-9 {
            bad("style_layers", format!("weights sum to {sum}, expected 1"));
        }
        out
    }

    pub fn validate(&self, net: &FeatureNet) -> Result<()> {
        if let Some(e) = self.problems(net).into_iter().find_map(|(field, msg)| {
            Some(if msg.starts_with("unknown layer") {
                Error::UnknownLayer(format!("{field}: {msg}"))
            } else {
                Error::Argument(format!("{field}: {msg}"))
            })
        }) {
            return Err(e);
        }
        Ok(())
    }

    pub fn with_equal_style_weights(mut self, layers: &[&str]) -> Self {
        let w = 1.0 / layers.len() as f64;
        self.style_layers = layers
            .iter()
            .map(|l| StyleLayer { layer: LayerId::new(*l), weight: w })
            .collect();
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransferConfig {
    /// Content image `p`.
    pub content: ImageBuffer,
    /// Style image `a`.
    pub style: ImageBuffer,
    pub params: TransferParams,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub total: f64,
    pub content: f64,
    pub style: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub content: f64,
    pub style: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GenerationResult {
    pub image: ImageBuffer,
    pub loss_trace: Vec<TraceEntry>,
    pub params: TransferParams,
}

/// The style-transfer objective with precomputed targets.
pub struct Objective<'a> {
    net: &'a FeatureNet,
    params: &'a TransferParams,
    content_targets: BTreeMap<LayerId, Tensor>,
    style_targets: BTreeMap<LayerId, GramMatrix>,
    layers: Vec<LayerId>,
    last_stage: usize,
    size: usize,
}

impl<'a> Objective<'a> {
    pub fn new(net: &'a FeatureNet, config: &'a TransferConfig) -> Result<Self> {
        let params = &config.params;
        params.validate(net)?;
        let size = params.working_size;
        let content_layers = params.content_layers.clone();
        let style_layer_ids: Vec<LayerId> = params.style_layers.iter().map(|l| l.layer.clone()).collect();
        let content_targets = net.activations_of_tensor(net.preprocess(&config.content, size)?, &content_layers)?;
        let style_acts = net.activations_of_tensor(net.preprocess(&config.style, size)?, &style_layer_ids)?;
        let style_targets = style_acts
            .iter()
            .map(|(l, t)| gram(t).map(|g| (l.clone(), g)))
            .collect::<Result<_>>()?;
        let mut layers = content_layers;
        layers.extend(style_layer_ids);
        layers.sort();
        layers.dedup();
        let last_stage = net.last_stage(&layers)?;
        Ok(Self {
            net,
            params,
            content_targets,
            style_targets,
            layers,
            last_stage,
            size,
        })
    }

    pub fn working_size(&self) -> usize {
        self.size
    }

    fn check_len(&self, pixels: &[f64]) -> Result<()> {
        let want = self.size * self.size * 3;
        if pixels.len() != want {
            return Err(Error::Shape(format!(
                "expected a {0}x{0} image ({want} values), got {1} values",
                self.size,
                pixels.len()
            )));
        }
        Ok(())
    }

    fn breakdown(&self, content: f64, style: f64) -> LossBreakdown {
        LossBreakdown {
            total: self.params.alpha * content + self.params.beta * style,
            content,
            style,
        }
    }

    /// Loss at raw (unclamped) interleaved pixels of working size.
    pub fn loss(&self, pixels: &[f64]) -> Result<LossBreakdown> {
        self.check_len(pixels)?;
        let input = pixels_to_tensor(self.size, self.size, pixels);
        let acts = self.net.activations_of_tensor(input, &self.layers)?;
        let content = content_loss(&acts, &self.content_targets, &self.params.content_layers)?;
        let style = loss::style_loss_against(&acts, &self.style_targets, &self.params.style_layers)?;
        Ok(self.breakdown(content, style))
    }

    /// Loss and its gradient with respect to the pixels.
    pub fn loss_and_gradient(&self, pixels: &[f64]) -> Result<(LossBreakdown, Vec<f64>)> {
        self.check_len(pixels)?;
        let input = pixels_to_tensor(self.size, self.size, pixels);
        let pass = self.net.forward(input, self.last_stage)?;
        let mut content = 0.0;
        let mut style = 0.0;
        let mut grads: BTreeMap<LayerId, Tensor> = BTreeMap::new();
        let mut add = |layer: &LayerId, g: Tensor| {
            grads
                .entry(layer.clone())
                .and_modify(|acc| *acc += &g)
                .or_insert(g);
        };
        for layer in &self.params.content_layers {
            let x = self.net.activation(&pass, layer)?;
            let p = &self.content_targets[layer];
            content += 0.5 * x.iter().zip(p.iter()).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / x.len() as f64;
            if self.params.alpha != 0.0 {
                add(layer, loss::content_grad(x, p) * self.params.alpha);
            }
        }
        for sl in &self.params.style_layers {
            let x = self.net.activation(&pass, &sl.layer)?;
            let target = &self.style_targets[&sl.layer];
            let gx = gram(x)?;
            style += sl.weight
                * gx.values
                    .iter()
                    .zip(target.values.iter())
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                / gx.values.len() as f64;
            if self.params.beta != 0.0 {
                add(&sl.layer, loss::style_grad(x, target, sl.weight * self.params.beta)?);
            }
        }
        let input_grad = self.net.backward(&pass, grads)?;
        Ok((self.breakdown(content, style), tensor_grad_to_pixels(&input_grad)))
    }
}

fn check_working_size(x: &ImageBuffer, size: usize) -> Result<()> {
    if x.width() != size || x.height() != size {
        return Err(Error::Shape(format!(
            "x is {}x{}, working size is {size}",
            x.width(),
            x.height()
        )));
    }
    Ok(())
}

/// `(total, content, style)` at `x`, which must be working-size square.
pub fn total_loss(net: &FeatureNet, config: &TransferConfig, x: &ImageBuffer) -> Result<LossBreakdown> {
    let obj = Objective::new(net, config)?;
    check_working_size(x, obj.size)?;
    obj.loss(x.data())
}

/// Gradient of the total loss with respect to the pixels of `x`, laid out
/// like [`ImageBuffer::data`].
pub fn loss_gradient(net: &FeatureNet, config: &TransferConfig, x: &ImageBuffer) -> Result<Vec<f64>> {
    let obj = Objective::new(net, config)?;
    check_working_size(x, obj.size)?;
    obj.loss_and_gradient(x.data()).map(|(_, g)| g)
}

pub fn initial_image(config: &TransferConfig) -> Result<ImageBuffer> {
    let size = config.params.working_size;
    match config.params.init {
        SeedInit::Noise => make_seed(&config.params.noise, size),
        SeedInit::Content => config.content.center_crop_square().resize_bilinear(size, size),
    }
}

pub fn run_transfer(net: &FeatureNet, config: &TransferConfig) -> Result<GenerationResult> {
    run_transfer_observed(net, config, |_| {})
}

/// Like [`run_transfer`], calling `observe` with every accepted trace entry
/// as soon as it is known.
pub fn run_transfer_observed(
    net: &FeatureNet,
    config: &TransferConfig,
    mut observe: impl FnMut(&TraceEntry),
) -> Result<GenerationResult> {
    let objective = Objective::new(net, config)?;
    let x0 = initial_image(config)?.into_data();
    let options = LbfgsOptions {
        history: HISTORY,
        max_iterations: config.params.iterations,
        first_step_max_change: Some(FIRST_STEP),
        gradient_tolerance: 1e-12,
        ..LbfgsOptions::default()
    };
    let mut trace = Vec::with_capacity(config.params.iterations + 1);
    let outcome = optim::minimize(
        x0,
        |x| {
            let (b, gradient) = objective.loss_and_gradient(x)?;
            Ok(Eval { value: b.total, gradient, info: b })
        },
        &options,
        |iteration, _, eval| {
            let entry = TraceEntry {
                iteration,
                total: eval.info.total,
                content: eval.info.content,
                style: eval.info.style,
            };
            observe(&entry);
            trace.push(entry);
        },
    )?;
    if let Termination::NonFinite { iteration } = outcome.termination {
        return Err(Error::Numerical { iteration, trace });
    }
    if outcome.termination == Termination::LineSearchFailed {
        log::debug!("line search stalled after {} iterations", outcome.iterations);
    }
    let size = objective.working_size();
    Ok(GenerationResult {
        image: ImageBuffer::from_clamped(size, size, outcome.x)?,
        loss_trace: trace,
        params: config.params.clone(),
    })
}

/// CSV with header `iteration,total,content,style`.
pub fn write_trace_csv(mut w: impl Write, trace: &[TraceEntry]) -> Result<()> {
    writeln!(w, "iteration,total,content,style")?;
    for e in trace {
        writeln!(w, "{},{},{},{}", e.iteration, e.total, e.content, e.style)?;
    }
    Ok(())
}
