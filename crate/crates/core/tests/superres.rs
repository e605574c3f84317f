use std::path::PathBuf;

use fastfashion_core::superres::train::{evaluate, synthetic_corpus};
use fastfashion_core::superres::{self, bicubic_upscale, cubic_weight, denoise, SRConfig, SRModel};
use fastfashion_core::ImageBuffer;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn shipped_weights() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets/srcnn_x4.safetensors")
}

/// Direct 4x4 neighbourhood sum with edge clamping.
fn bicubic_oracle(img: &ImageBuffer, f: usize, x: usize, y: usize, c: usize) -> f64 {
    let sx = (x as f64 + 0.5) / f as f64 - 0.5;
    let sy = (y as f64 + 0.5) / f as f64 - 0.5;
    let (bx, by) = (sx.floor() as i64, sy.floor() as i64);
    let mut acc = 0.0;
    for j in by - 1..=by + 2 {
        for i in bx - 1..=bx + 2 {
            let xi = i.clamp(0, img.width() as i64 - 1) as usize;
            let yj = j.clamp(0, img.height() as i64 - 1) as usize;
            acc += cubic_weight(sx - i as f64) * cubic_weight(sy - j as f64) * img.get(xi, yj, c);
        }
    }
    acc.clamp(0.0, 1.0)
}

#[test]
fn ramp_matches_reference_kernel() {
    let ramp = ImageBuffer::new(2, 2, vec![0.0, 0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9, 1.0, 0.45]).unwrap();
    let up = bicubic_upscale(&ramp, 2).unwrap();
    assert_eq!((up.width(), up.height()), (4, 4));
    for y in 0..4 {
        for x in 0..4 {
            for c in 0..3 {
                assert!((up.get(x, y, c) - bicubic_oracle(&ramp, 2, x, y, c)).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn random_images_match_reference_kernel() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for f in [2usize, 3, 4] {
        let img = ImageBuffer::from_fn(5, 4, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        let up = bicubic_upscale(&img, f as u32).unwrap();
        for y in 0..up.height() {
            for x in 0..up.width() {
                for c in 0..3 {
                    assert!((up.get(x, y, c) - bicubic_oracle(&img, f, x, y, c)).abs() < 1e-9);
                }
            }
        }
    }
}

#[test]
fn six_hundred_to_twenty_four_hundred() {
    let img = ImageBuffer::from_fn(600, 600, |x, y| [x as f64 / 599.0, y as f64 / 599.0, 0.5]).unwrap();
    let up = bicubic_upscale(&img, 4).unwrap();
    assert_eq!((up.width(), up.height()), (2400, 2400));
}

fn variance(img: &ImageBuffer) -> f64 {
    let n = img.data().len() as f64;
    let m = img.data().iter().sum::<f64>() / n;
    img.data().iter().map(|v| (v - m).powi(2)).sum::<f64>() / n
}

fn salt_and_pepper(size: usize, seed: u64) -> ImageBuffer {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    ImageBuffer::from_fn(size, size, |_, _| {
        let r: f64 = rng.random();
        let v = if r < 0.05 { 0.0 } else if r < 0.10 { 1.0 } else { 0.5 };
        [v; 3]
    })
    .unwrap()
}

#[test]
fn denoise_reduces_output_variance() {
    let model = SRModel::identity(0);
    let img = salt_and_pepper(40, 1);
    let off = superres::upscale(&img, &model, &SRConfig { factor: 2, ..SRConfig::default() }).unwrap();
    let on = superres::upscale(&img, &model, &SRConfig { factor: 2, denoise: true, ..SRConfig::default() }).unwrap();
    assert!(variance(&on) < variance(&off));
    assert!(variance(&denoise(&img)) < variance(&img));
}

#[test]
fn factor_one_rejected_by_upscale() {
    let model = SRModel::identity(0);
    let img = ImageBuffer::filled(4, 4, [0.2; 3]).unwrap();
    let err = superres::upscale(&img, &model, &SRConfig { factor: 1, ..SRConfig::default() }).unwrap_err();
    assert_eq!(err.kind(), "argument_error");
}

#[test]
fn missing_configured_weights_is_asset_error() {
    let cfg = SRConfig { weights_path: Some("/nope/x.safetensors".into()), ..SRConfig::default() };
    assert_eq!(superres::load_model(&cfg).unwrap_err().kind(), "asset_error");
    assert_eq!(superres::load_model(&SRConfig::default()).unwrap_err().kind(), "asset_error");
}

#[test]
fn shipped_model_is_deterministic_and_bounded() {
    let model = SRModel::load(shipped_weights()).unwrap();
    let zeros = ImageBuffer::filled(24, 24, [0.0; 3]).unwrap();
    let out = model.forward(&zeros).unwrap();
    assert!(out.data().iter().all(|v| (0.0..=1.0).contains(v)));
    let img = synthetic_corpus(1, 40, 77).remove(0);
    assert_eq!(model.forward(&img).unwrap(), model.forward(&img).unwrap());
}

#[test]
fn shipped_model_beats_bicubic_on_held_out_prints() {
    let model = SRModel::load(shipped_weights()).unwrap();
    let held_out = synthetic_corpus(20, 128, 999);
    let e = evaluate(&model, &held_out, 4).unwrap();
    assert!(e.gain() >= 0.5, "{e:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn dimensions_scale_exactly(w in 1usize..20, h in 1usize..20, f in 2u32..=4, seed in any::<u64>()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let img = ImageBuffer::from_fn(w, h, |_, _| [rng.random(), rng.random(), rng.random()]).unwrap();
        let up = bicubic_upscale(&img, f).unwrap();
        prop_assert_eq!((up.width(), up.height()), (w * f as usize, h * f as usize));
        prop_assert!(up.data().iter().all(|v| (0.0..=1.0).contains(v)));
        let out = superres::upscale(&img, &SRModel::identity(1), &SRConfig { factor: f, ..SRConfig::default() }).unwrap();
        prop_assert_eq!((out.width(), out.height()), (w * f as usize, h * f as usize));
    }

    #[test]
    fn constants_survive_upscaling(v in 0.0f64..=1.0, f in 2u32..=4) {
        let img = ImageBuffer::filled(3, 5, [v, 1.0 - v, v / 2.0]).unwrap();
        let up = bicubic_upscale(&img, f).unwrap();
        for px in up.data().chunks_exact(3) {
            prop_assert_eq!(px, &[v, 1.0 - v, v / 2.0][..]);
        }
    }
}
