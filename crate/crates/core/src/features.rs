//! Feature extraction with a 19-layer VGG-style convolutional network.
//!
//! The network produces two things: per-layer activations, consumed by the
//! style-transfer losses, and a pooled, L2-normalized embedding of the
//! deepest convolutional layer, consumed by trend clustering.
//!
//! Weights are an external asset. [`FeatureNet::load`] reads a safetensors
//! file holding `<layer>.weight` (OIHW) and `<layer>.bias` tensors for every
//! convolution in the registry; [`FeatureNet::random`] builds a seeded
//! He-initialized network with the same architecture for offline use and
//! tests.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, CHANNELS};
use crate::nn::{self, Conv2d, Tensor};
use crate::weights::{self, NamedTensor};

/// Convolutional layers of the 19-layer network, in order. A 2x2 max pool
/// sits between consecutive blocks.
pub const VGG19_CONV_LAYERS: [(&str, usize); 16] = [
    ("block1_conv1", 64),
    ("block1_conv2", 64),
    ("block2_conv1", 128),
    ("block2_conv2", 128),
    ("block3_conv1", 256),
    ("block3_conv2", 256),
    ("block3_conv3", 256),
    ("block3_conv4", 256),
    ("block4_conv1", 512),
    ("block4_conv2", 512),
    ("block4_conv3", 512),
    ("block4_conv4", 512),
    ("block5_conv1", 512),
    ("block5_conv2", 512),
    ("block5_conv3", 512),
    ("block5_conv4", 512),
];

/// Per-channel means in BGR order on the 0..255 scale, matching the
/// published preprocessing of the pretrained weights.
pub const VGG_MEANS_BGR: [f64; 3] = [103.939, 116.779, 123.68];

/// Network inputs are on the 0..255 scale.
pub const PIXEL_SCALE: f64 = 255.0;

/// Input side length used for embeddings.
pub const EMBED_SIZE: usize = 224;

/// RGB image channel feeding each network (BGR) channel.
const RGB_OF_BGR: [usize; 3] = [2, 1, 0];

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct LayerId(String);

impl LayerId {
    pub fn new(name: impl Into<String>) -> Self {
        Self(name.into())
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl fmt::Display for LayerId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.0)
    }
}

impl From<&str> for LayerId {
    fn from(s: &str) -> Self {
        Self::new(s)
    }
}

/// One entry of a network architecture.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Block {
    /// 3x3 same-padded convolution followed by ReLU.
    Conv { name: String, out_channels: usize },
    Pool,
}

/// The 19-layer architecture as a list of blocks, derived from
/// [`VGG19_CONV_LAYERS`].
pub fn vgg19_architecture() -> Vec<Block> {
    let mut blocks = Vec::new();
    let mut prev_block: Option<&str> = None;
    for (name, ch) in VGG19_CONV_LAYERS {
        let block = name.split('_').next().unwrap();
        if prev_block.is_some_and(|p| p != block) {
            blocks.push(Block::Pool);
        }
        prev_block = Some(block);
        blocks.push(Block::Conv {
            name: name.to_string(),
            out_channels: ch,
        });
    }
    blocks
}

pub type ActivationSet = BTreeMap<LayerId, Tensor>;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingVector {
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source_id: Option<String>,
}

impl EmbeddingVector {
    /// L2-normalizes `values`. A zero vector stays zero.
    pub fn normalized(mut values: Vec<f64>, source_id: Option<String>) -> Self {
        let norm = values.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            values.iter_mut().for_each(|v| *v /= norm);
        }
        Self { values, source_id }
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn cosine(&self, other: &EmbeddingVector) -> f64 {
        let dot: f64 = self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum();
        let na = self.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        let nb = other.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        dot / (na * nb)
    }
}

/// Anything that can turn an image into a fixed-length embedding.
pub trait Embedder: Send + Sync {
    fn dimension(&self) -> usize;
    fn embed(&self, image: &ImageBuffer) -> Result<EmbeddingVector>;
}

#[derive(Debug, Clone)]
enum Stage {
    Conv { name: LayerId, conv: Conv2d },
    Pool,
}

/// Cached forward pass for backpropagation.
#[derive(Debug)]
pub struct ForwardPass {
    input: Tensor,
    outputs: Vec<Tensor>,
    argmax: Vec<Vec<usize>>,
}

impl ForwardPass {
    pub fn input(&self) -> &Tensor {
        &self.input
    }
}

#[derive(Debug, Clone)]
pub struct FeatureNet {
    stages: Vec<Stage>,
    index: HashMap<LayerId, usize>,
}

impl FeatureNet {
    fn from_convs(arch: &[Block], mut make: impl FnMut(&str, usize, usize) -> Result<Conv2d>) -> Result<Self> {
        let mut stages = Vec::with_capacity(arch.len());
        let mut index = HashMap::new();
        let mut channels = CHANNELS;
        for block in arch {
            match block {
                Block::Conv { name, out_channels } => {
                    let conv = make(name, channels, *out_channels)?;
                    channels = *out_channels;
                    let id = LayerId::new(name.clone());
                    if index.insert(id.clone(), stages.len()).is_some() {
                        return Err(Error::Argument(format!("duplicate layer name `{name}`")));
                    }
                    stages.push(Stage::Conv { name: id, conv });
                }
                Block::Pool => stages.push(Stage::Pool),
            }
        }
        if index.is_empty() {
            return Err(Error::Argument("architecture has no convolutions".into()));
        }
        Ok(Self { stages, index })
    }

    /// Seeded He-initialized network with the given architecture.
    pub fn random(arch: &[Block], seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self::from_convs(arch, |_, cin, cout| Ok(Conv2d::he_init(cin, cout, 3, &mut rng)))
    }

    pub fn vgg19_random(seed: u64) -> Self {
        Self::random(&vgg19_architecture(), seed).expect("static architecture is valid")
    }

    /// Loads weights for `arch` from a safetensors file.
    pub fn load(path: impl AsRef<Path>, arch: &[Block]) -> Result<Self> {
        let mut tensors = weights::load(path)?;
        Self::from_convs(arch, |name, cin, cout| {
            let w = weights::take(&mut tensors, &format!("{name}.weight"), &[cout, cin, 3, 3])?;
            let b = weights::take(&mut tensors, &format!("{name}.bias"), &[cout])?;
            Conv2d::new(cin, cout, 3, w, b)
        })
    }

    pub fn vgg19_from_file(path: impl AsRef<Path>) -> Result<Self> {
        Self::load(path, &vgg19_architecture())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut tensors = Vec::new();
        for stage in &self.stages {
            if let Stage::Conv { name, conv } = stage {
                let (o, i, k) = (conv.out_channels(), conv.in_channels(), conv.kernel());
                tensors.push((
                    format!("{name}.weight"),
                    NamedTensor {
                        shape: vec![o, i, k, k],
                        values: conv.weight().iter().copied().collect(),
                    },
                ));
                tensors.push((
                    format!("{name}.bias"),
                    NamedTensor {
                        shape: vec![o],
                        values: conv.bias().to_vec(),
                    },
                ));
            }
        }
        weights::save(path, &tensors)
    }

    /// Registered layer names, in network order.
    pub fn layer_names(&self) -> Vec<LayerId> {
        self.stages
            .iter()
            .filter_map(|s| match s {
                Stage::Conv { name, .. } => Some(name.clone()),
                Stage::Pool => None,
            })
            .collect()
    }

    pub fn contains(&self, layer: &LayerId) -> bool {
        self.index.contains_key(layer)
    }

    fn stage_of(&self, layer: &LayerId) -> Result<usize> {
        self.index
            .get(layer)
            .copied()
            .ok_or_else(|| Error::UnknownLayer(layer.to_string()))
    }

    pub fn channels_of(&self, layer: &LayerId) -> Result<usize> {
        match &self.stages[self.stage_of(layer)?] {
            Stage::Conv { conv, .. } => Ok(conv.out_channels()),
            Stage::Pool => unreachable!("index only holds convolutions"),
        }
    }

    fn pools_before(&self, stage: usize) -> usize {
        self.stages[..stage].iter().filter(|s| matches!(s, Stage::Pool)).count()
    }

    /// Smallest square input for which every stage has a non-empty output.
    pub fn min_input_size(&self) -> usize {
        1 << self.pools_before(self.stages.len())
    }

    /// Spatial shape `(channels, height, width)` of a layer's activation for
    /// an input of the given size.
    pub fn activation_shape(&self, layer: &LayerId, height: usize, width: usize) -> Result<(usize, usize, usize)> {
        let stage = self.stage_of(layer)?;
        let pools = self.pools_before(stage);
        Ok((self.channels_of(layer)?, height >> pools, width >> pools))
    }

    fn deepest_conv(&self) -> usize {
        self.stages
            .iter()
            .rposition(|s| matches!(s, Stage::Conv { .. }))
            .expect("network has a convolution")
    }

    /// Resizes to `target_size` square (center-cropping non-square input),
    /// converts to BGR on the 0..255 scale and subtracts the channel means.
    pub fn preprocess(&self, image: &ImageBuffer, target_size: usize) -> Result<Tensor> {
        let min = self.min_input_size();
        if target_size < min {
            return Err(Error::SizeError { got: target_size, min });
        }
        let square = image.center_crop_square();
        let resized = square.resize_bilinear(target_size, target_size)?;
        Ok(pixels_to_tensor(resized.width(), resized.height(), resized.data()))
    }

    fn check_size(&self, h: usize, w: usize) -> Result<()> {
        let min = self.min_input_size();
        if h.min(w) < min {
            return Err(Error::SizeError { got: h.min(w), min });
        }
        Ok(())
    }

    /// Runs stages `0..=last` and keeps every intermediate output.
    pub fn forward(&self, input: Tensor, last: usize) -> Result<ForwardPass> {
        let (c, h, w) = input.dim();
        if c != CHANNELS {
            return Err(Error::Shape(format!("network input has {c} channels, expected 3")));
        }
        self.check_size(h, w)?;
        let mut outputs: Vec<Tensor> = Vec::with_capacity(last + 1);
        let mut argmax = Vec::with_capacity(last + 1);
        for stage in &self.stages[..=last] {
            let x = outputs.last().unwrap_or(&input);
            match stage {
                Stage::Conv { conv, .. } => {
                    let mut y = conv.forward(x)?;
                    nn::relu_inplace(&mut y);
                    outputs.push(y);
                    argmax.push(Vec::new());
                }
                Stage::Pool => {
                    let (y, arg) = nn::max_pool2(x);
                    outputs.push(y);
                    argmax.push(arg);
                }
            }
        }
        Ok(ForwardPass { input, outputs, argmax })
    }

    /// Stage index of the deepest of `layers`.
    pub fn last_stage(&self, layers: &[LayerId]) -> Result<usize> {
        if layers.is_empty() {
            return Err(Error::Argument("no layers requested".into()));
        }
        layers.iter().map(|l| self.stage_of(l)).try_fold(0, |acc, s| s.map(|s| acc.max(s)))
    }

    pub fn activation<'a>(&self, pass: &'a ForwardPass, layer: &LayerId) -> Result<&'a Tensor> {
        let stage = self.stage_of(layer)?;
        pass.outputs
            .get(stage)
            .ok_or_else(|| Error::Argument(format!("forward pass stopped before `{layer}`")))
    }

    /// Backpropagates gradients given for layer activations down to the
    /// network input.
    pub fn backward(&self, pass: &ForwardPass, grads: BTreeMap<LayerId, Tensor>) -> Result<Tensor> {
        let mut by_stage: BTreeMap<usize, Tensor> = BTreeMap::new();
        for (layer, g) in grads {
            let stage = self.stage_of(&layer)?;
            let out = pass
                .outputs
                .get(stage)
                .ok_or_else(|| Error::Argument(format!("forward pass stopped before `{layer}`")))?;
            if out.dim() != g.dim() {
                return Err(Error::Shape(format!(
                    "gradient for `{layer}` is {:?}, activation is {:?}",
                    g.dim(),
                    out.dim()
                )));
            }
            by_stage.insert(stage, g);
        }
        let Some((&top, _)) = by_stage.last_key_value() else {
            return Ok(Tensor::zeros(pass.input.dim()));
        };
        let mut grad = by_stage.remove(&top).unwrap();
        for stage in (0..=top).rev() {
            if stage != top {
                if let Some(extra) = by_stage.remove(&stage) {
                    grad += &extra;
                }
            }
            let input_dim = if stage == 0 {
                pass.input.dim()
            } else {
                pass.outputs[stage - 1].dim()
            };
            grad = match &self.stages[stage] {
                Stage::Conv { conv, .. } => {
                    nn::relu_backward_inplace(&mut grad, &pass.outputs[stage]);
                    conv.backward_input(&grad)?
                }
                Stage::Pool => nn::max_pool2_backward(&grad, &pass.argmax[stage], input_dim),
            };
        }
        Ok(grad)
    }

    /// Activations of `layers` for an already preprocessed input tensor.
    pub fn activations_of_tensor(&self, input: Tensor, layers: &[LayerId]) -> Result<ActivationSet> {
        let last = self.last_stage(layers)?;
        let pass = self.forward(input, last)?;
        let mut out = ActivationSet::new();
        for layer in layers {
            out.insert(layer.clone(), self.activation(&pass, layer)?.clone());
        }
        Ok(out)
    }

    /// Activations at the image's native resolution.
    pub fn extract_activations(&self, image: &ImageBuffer, layers: &[LayerId]) -> Result<ActivationSet> {
        self.last_stage(layers)?;
        self.check_size(image.height(), image.width())?;
        let input = pixels_to_tensor(image.width(), image.height(), image.data());
        self.activations_of_tensor(input, layers)
    }

    /// Global average pool of the deepest convolution, L2-normalized.
    pub fn embed_tensor(&self, input: Tensor) -> Result<Vec<f64>> {
        let last = self.deepest_conv();
        let pass = self.forward(input, last)?;
        let act = &pass.outputs[last];
        let n = (act.dim().1 * act.dim().2) as f64;
        Ok(act.outer_iter().map(|plane| plane.sum() / n).collect())
    }
}

impl Embedder for FeatureNet {
    fn dimension(&self) -> usize {
        match &self.stages[self.deepest_conv()] {
            Stage::Conv { conv, .. } => conv.out_channels(),
            Stage::Pool => unreachable!(),
        }
    }

    fn embed(&self, image: &ImageBuffer) -> Result<EmbeddingVector> {
        let size = EMBED_SIZE.max(self.min_input_size());
        let pooled = self.embed_tensor(self.preprocess(image, size)?)?;
        Ok(EmbeddingVector::normalized(pooled, None))
    }
}

/// Converts interleaved RGB pixels (not necessarily clamped) to a network
/// input tensor.
pub fn pixels_to_tensor(width: usize, height: usize, pixels: &[f64]) -> Tensor {
    let mut t = Tensor::zeros((CHANNELS, height, width));
    for (ch, &rgb) in RGB_OF_BGR.iter().enumerate() {
        let mean = VGG_MEANS_BGR[ch];
        let plane = t.index_axis_mut(ndarray::Axis(0), ch);
        for (dst, px) in plane.into_iter().zip(pixels.chunks_exact(CHANNELS)) {
            *dst = px[rgb] * PIXEL_SCALE - mean;
        }
    }
    t
}

/// Chain rule through [`pixels_to_tensor`]: maps a gradient with respect to
/// the network input to one with respect to interleaved pixels.
pub fn tensor_grad_to_pixels(grad: &Tensor) -> Vec<f64> {
    let (_, h, w) = grad.dim();
    let mut out = vec![0.0; h * w * CHANNELS];
    for (ch, &rgb) in RGB_OF_BGR.iter().enumerate() {
        let plane = grad.index_axis(ndarray::Axis(0), ch);
        for (i, g) in plane.iter().enumerate() {
            out[i * CHANNELS + rgb] = g * PIXEL_SCALE;
        }
    }
    out
}

/// Inverse of the mean subtraction and channel swap; clamps into `[0, 1]`.
pub fn postprocess(tensor: &Tensor) -> Result<ImageBuffer> {
    let (c, h, w) = tensor.dim();
    if c != CHANNELS {
        return Err(Error::Shape(format!("expected 3 channels, got {c}")));
    }
    let mut data = vec![0.0; h * w * CHANNELS];
    for (ch, &rgb) in RGB_OF_BGR.iter().enumerate() {
        let mean = VGG_MEANS_BGR[ch];
        for (i, v) in tensor.index_axis(ndarray::Axis(0), ch).iter().enumerate() {
            data[i * CHANNELS + rgb] = (v + mean) / PIXEL_SCALE;
        }
    }
    ImageBuffer::from_clamped(w, h, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> FeatureNet {
        FeatureNet::random(
            &[
                Block::Conv { name: "a".into(), out_channels: 4 },
                Block::Pool,
                Block::Conv { name: "b".into(), out_channels: 6 },
            ],
            1,
        )
        .unwrap()
    }

    #[test]
    fn architecture_has_sixteen_convs_and_four_pools() {
        let arch = vgg19_architecture();
        assert_eq!(arch.iter().filter(|b| matches!(b, Block::Conv { .. })).count(), 16);
        assert_eq!(arch.iter().filter(|b| matches!(b, Block::Pool)).count(), 4);
    }

    #[test]
    fn zero_image_maps_to_negated_means() {
        let net = toy();
        let img = ImageBuffer::filled(8, 8, [0.0; 3]).unwrap();
        let t = net.preprocess(&img, 8).unwrap();
        for ch in 0..3 {
            assert!(t.index_axis(ndarray::Axis(0), ch).iter().all(|&v| v == -VGG_MEANS_BGR[ch]));
        }
    }

    #[test]
    fn small_target_is_size_error() {
        let net = FeatureNet::vgg19_random(0);
        let img = ImageBuffer::filled(64, 64, [0.5; 3]).unwrap();
        assert!(matches!(net.preprocess(&img, 8), Err(Error::SizeError { min: 16, .. })));
        assert!(matches!(net.preprocess(&img, 0), Err(Error::SizeError { .. })));
    }

    #[test]
    fn unknown_and_empty_layers_are_rejected() {
        let net = toy();
        let img = ImageBuffer::filled(8, 8, [0.5; 3]).unwrap();
        assert!(matches!(
            net.extract_activations(&img, &["nope".into()]),
            Err(Error::UnknownLayer(_))
        ));
        assert!(matches!(net.extract_activations(&img, &[]), Err(Error::Argument(_))));
    }

    #[test]
    fn activations_contain_only_requested_layers() {
        let net = toy();
        let img = ImageBuffer::filled(8, 6, [0.3; 3]).unwrap();
        let acts = net.extract_activations(&img, &["b".into()]).unwrap();
        assert_eq!(acts.len(), 1);
        assert_eq!(acts[&LayerId::new("b")].dim(), (6, 3, 4));
    }

    #[test]
    fn backward_without_grads_is_zero() {
        let net = toy();
        let img = ImageBuffer::filled(8, 8, [0.3; 3]).unwrap();
        let pass = net.forward(net.preprocess(&img, 8).unwrap(), 0).unwrap();
        let g = net.backward(&pass, BTreeMap::new()).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn weights_round_trip_through_file() {
        let net = toy();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("toy.safetensors");
        net.save(&path).unwrap();
        let arch = [
            Block::Conv { name: "a".into(), out_channels: 4 },
            Block::Pool,
            Block::Conv { name: "b".into(), out_channels: 6 },
        ];
        let back = FeatureNet::load(&path, &arch).unwrap();
        let img = ImageBuffer::from_fn(8, 8, |x, y| [x as f64 / 8.0, y as f64 / 8.0, 0.2]).unwrap();
        let a = net.embed_tensor(net.preprocess(&img, 8).unwrap()).unwrap();
        let b = back.embed_tensor(back.preprocess(&img, 8).unwrap()).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-3 * x.abs().max(1.0));
        }
        let missing = [Block::Conv { name: "zzz".into(), out_channels: 4 }];
        assert!(matches!(FeatureNet::load(&path, &missing), Err(Error::Asset(_))));
    }
}
