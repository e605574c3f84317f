use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{ImageBuffer, CHANNELS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum NoiseKind {
    Uniform,
    /// Uniform noise modulated by a horizontal sinusoid with `cycles`
    /// full periods across the image width.
    Sinusoidal { cycles: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    #[serde(flatten)]
    pub kind: NoiseKind,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
    #[serde(default)]
    pub seed: u64,
}

fn default_amplitude() -> f64 {
    1.0
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            kind: NoiseKind::Uniform,
            amplitude: 1.0,
            seed: 0,
        }
    }
}

impl NoiseSpec {
    pub fn uniform(seed: u64) -> Self {
        Self { seed, ..Self::default() }
    }

    pub fn sinusoidal(cycles: u32, seed: u64) -> Self {
        Self {
            kind: NoiseKind::Sinusoidal { cycles },
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude > 0.0 && self.amplitude <= 1.0) {
            return Err(Error::Argument(format!(
                "noise amplitude {} must be in (0, 1]",
                self.amplitude
            )));
        }
        if let NoiseKind::Sinusoidal { cycles: 0 } = self.kind {
            return Err(Error::Argument("sinusoidal noise needs at least one cycle".into()));
        }
        Ok(())
    }
}

/// Square seed image for the optimizer.
pub fn make_seed(spec: &NoiseSpec, size: usize) -> Result<ImageBuffer> {
    spec.validate()?;
    if size == 0 {
        return Err(Error::Argument("seed size must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let half = spec.amplitude / 2.0;
    let mut data: Vec<f64> = (0..size * size * CHANNELS)
        .map(|_| rng.random_range(0.5 - half..=0.5 + half))
        .collect();
    if let NoiseKind::Sinusoidal { cycles } = spec.kind {
        for (i, px) in data.chunks_exact_mut(CHANNELS).enumerate() {
            let col = i % size;
            let wave = half * (2.0 * PI * f64::from(cycles) * col as f64 / size as f64).sin();
            px.iter_mut().for_each(|v| *v += wave);
        }
        let (lo, hi) = data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
        let span = (hi - lo).max(f64::MIN_POSITIVE);
        data.iter_mut().for_each(|v| *v = (*v - lo) / span);
    }
    ImageBuffer::from_clamped(size, size, data)
}
