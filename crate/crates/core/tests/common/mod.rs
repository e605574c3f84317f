#![allow(dead_code)]

use fastfashion_core::features::Block;
use fastfashion_core::transfer::StyleLayer;
use fastfashion_core::{FeatureNet, ImageBuffer, LayerId, NoiseSpec, TransferConfig, TransferParams};

/// Two 3x3 convolutions with a pool in between.
pub fn toy_net(seed: u64) -> FeatureNet {
    FeatureNet::random(
        &[
            Block::Conv { name: "c1".into(), out_channels: 4 },
            Block::Pool,
            Block::Conv { name: "c2".into(), out_channels: 6 },
        ],
        seed,
    )
    .unwrap()
}

pub fn pattern(size: usize, phase: f64) -> ImageBuffer {
    ImageBuffer::from_fn(size, size, |x, y| {
        let u = x as f64 / size as f64;
        let v = y as f64 / size as f64;
        [
            0.5 + 0.4 * (6.0 * u + phase).sin(),
            0.5 + 0.4 * (9.0 * v - phase).cos(),
            0.5 + 0.3 * (4.0 * (u + v) + 2.0 * phase).sin(),
        ]
    })
    .unwrap()
}

pub fn toy_config(size: usize, alpha: f64, beta: f64) -> TransferConfig {
    TransferConfig {
        content: pattern(size, 0.0),
        style: pattern(size, 1.3),
        params: TransferParams {
            alpha,
            beta,
            iterations: 10,
            noise: NoiseSpec::uniform(7),
            content_layers: vec![LayerId::new("c2")],
            style_layers: vec![
                StyleLayer { layer: LayerId::new("c1"), weight: 0.5 },
                StyleLayer { layer: LayerId::new("c2"), weight: 0.5 },
            ],
            working_size: size,
            ..TransferParams::default()
        },
    }
}
