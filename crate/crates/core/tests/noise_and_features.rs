mod common;

use fastfashion_core::features::{vgg19_architecture, Block, EMBED_SIZE};
use fastfashion_core::transfer::{make_seed, NoiseSpec};
use fastfashion_core::{Embedder, FeatureNet, ImageBuffer, LayerId};
use proptest::prelude::*;
use rustfft::{num_complex::Complex, FftPlanner};

/// Dominant non-DC frequency of the column-mean profile.
fn column_peak(img: &ImageBuffer) -> usize {
    let (w, h) = (img.width(), img.height());
    let mut signal: Vec<Complex<f64>> = (0..w)
        .map(|x| {
            let s: f64 = (0..h).flat_map(|y| (0..3).map(move |c| (x, y, c))).map(|(x, y, c)| img.get(x, y, c)).sum();
            Complex::new(s / (3 * h) as f64, 0.0)
        })
        .collect();
    FftPlanner::new().plan_fft_forward(w).process(&mut signal);
    (1..w / 2).max_by(|&a, &b| signal[a].norm().total_cmp(&signal[b].norm())).unwrap()
}

#[test]
fn sinusoidal_seeds_peak_at_their_cycle_count() {
    for seed in 0..5 {
        assert_eq!(column_peak(&make_seed(&NoiseSpec::sinusoidal(1, seed), 128).unwrap()), 1);
        assert_eq!(column_peak(&make_seed(&NoiseSpec::sinusoidal(10, seed), 128).unwrap()), 10);
    }
}

#[test]
fn seeds_are_deterministic() {
    for spec in [NoiseSpec::uniform(3), NoiseSpec::sinusoidal(1, 3), NoiseSpec::sinusoidal(10, 3)] {
        assert_eq!(make_seed(&spec, 48).unwrap(), make_seed(&spec, 48).unwrap());
    }
    assert_ne!(make_seed(&NoiseSpec::uniform(3), 16).unwrap(), make_seed(&NoiseSpec::uniform(4), 16).unwrap());
}

#[test]
fn zero_cycles_rejected() {
    assert_eq!(make_seed(&NoiseSpec::sinusoidal(0, 1), 16).unwrap_err().kind(), "argument_error");
}

#[test]
fn vgg_activation_shapes_at_224() {
    let net = FeatureNet::vgg19_random(0);
    let layers = [LayerId::new("block1_conv1"), LayerId::new("block5_conv1")];
    let acts = net.extract_activations(&common::pattern(224, 0.2), &layers).unwrap();
    assert_eq!(acts[&layers[0]].dim(), (64, 224, 224));
    assert_eq!(acts[&layers[1]].dim(), (512, 14, 14));
    assert_eq!(net.activation_shape(&LayerId::new("block3_conv4"), 224, 224).unwrap(), (256, 56, 56));
    assert_eq!(net.layer_names().len(), 16);
}

#[test]
fn undersized_input_is_size_error() {
    let net = FeatureNet::vgg19_random(0);
    let tiny = ImageBuffer::filled(8, 8, [0.5; 3]).unwrap();
    let err = net.extract_activations(&tiny, &[LayerId::new("block1_conv1")]).unwrap_err();
    assert_eq!(err.kind(), "size_error");
    assert_eq!(net.preprocess(&tiny, 8).unwrap_err().kind(), "size_error");
}

#[test]
fn unknown_layer_is_reported() {
    let net = FeatureNet::vgg19_random(0);
    let img = ImageBuffer::filled(32, 32, [0.5; 3]).unwrap();
    let err = net.extract_activations(&img, &[LayerId::new("block9_conv9")]).unwrap_err();
    assert_eq!(err.kind(), "unknown_layer");
}

#[test]
fn embedding_is_unit_deterministic_and_shift_stable() {
    let net = FeatureNet::vgg19_random(5);
    assert_eq!(net.dimension(), 512);
    let shifted = |dx: usize| {
        ImageBuffer::from_fn(EMBED_SIZE, EMBED_SIZE, |x, y| {
            let u = (x + dx) as f64 / 37.0;
            let v = y as f64 / 23.0;
            [0.5 + 0.4 * u.sin(), 0.5 + 0.4 * v.cos(), 0.5 + 0.3 * (u + v).sin()]
        })
        .unwrap()
    };
    let a = net.embed(&shifted(0)).unwrap();
    let norm = a.values.iter().map(|v| v * v).sum::<f64>().sqrt();
    assert!((norm - 1.0).abs() < 1e-9);
    assert_eq!(a, net.embed(&shifted(0)).unwrap());
    let b = net.embed(&shifted(1)).unwrap();
    assert!(a.cosine(&b) > 0.99, "cosine {}", a.cosine(&b));
}

#[test]
fn weights_round_trip_through_safetensors() {
    let arch = [
        Block::Conv { name: "c1".into(), out_channels: 4 },
        Block::Pool,
        Block::Conv { name: "c2".into(), out_channels: 4 },
    ];
    let net = FeatureNet::random(&arch, 9).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("w.safetensors");
    net.save(&path).unwrap();
    let back = FeatureNet::load(&path, &arch).unwrap();
    let img = common::pattern(16, 0.0);
    let l = [LayerId::new("c2")];
    let (x, y) = (net.extract_activations(&img, &l).unwrap(), back.extract_activations(&img, &l).unwrap());
    let diff = x[&l[0]].iter().zip(y[&l[0]].iter()).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(diff < 1e-3, "f32 storage drift {diff}");
    assert_eq!(FeatureNet::load(dir.path().join("missing"), &vgg19_architecture()).unwrap_err().kind(), "asset_error");
}

/// Bilinear oracle: each output pixel is the clamped interpolation at
/// `(i + 0.5) * scale - 0.5`.
fn bilinear_oracle(img: &ImageBuffer, w: usize, h: usize, x: usize, y: usize, c: usize) -> f64 {
    let sx = img.width() as f64 / w as f64;
    let sy = img.height() as f64 / h as f64;
    let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (img.width() - 1) as f64);
    let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (img.height() - 1) as f64);
    let (x0, y0) = (fx.floor() as usize, fy.floor() as usize);
    let (x1, y1) = ((x0 + 1).min(img.width() - 1), (y0 + 1).min(img.height() - 1));
    let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
    let top = img.get(x0, y0, c) * (1.0 - tx) + img.get(x1, y0, c) * tx;
    let bot = img.get(x0, y1, c) * (1.0 - tx) + img.get(x1, y1, c) * tx;
    top * (1.0 - ty) + bot * ty
}

#[test]
fn resize_matches_bilinear_oracle_on_checkerboard() {
    let board = ImageBuffer::from_fn(8, 8, |x, y| {
        let v = if (x + y) % 2 == 0 { 1.0 } else { 0.0 };
        [v, 1.0 - v, 0.5]
    })
    .unwrap();
    for (w, h) in [(16, 16), (5, 5), (13, 7)] {
        let out = board.resize_bilinear(w, h).unwrap();
        for y in 0..h {
            for x in 0..w {
                for c in 0..3 {
                    assert!((out.get(x, y, c) - bilinear_oracle(&board, w, h, x, y, c)).abs() < 1e-12);
                }
            }
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn seeds_stay_in_unit_range(cycles in 1u32..20, seed in any::<u64>(), size in 4usize..40) {
        for spec in [NoiseSpec::uniform(seed), NoiseSpec::sinusoidal(cycles, seed)] {
            let img = make_seed(&spec, size).unwrap();
            prop_assert_eq!((img.width(), img.height()), (size, size));
            prop_assert!(img.data().iter().all(|v| (0.0..=1.0).contains(v)));
        }
    }

    #[test]
    fn embeddings_of_toy_net_are_unit(seed in 0u64..1000, phase in 0.0f64..6.0) {
        let net = common::toy_net(seed);
        let e = net.embed(&common::pattern(20, phase)).unwrap();
        let n = e.values.iter().map(|v| v * v).sum::<f64>().sqrt();
        prop_assert!((n - 1.0).abs() < 1e-9 || n == 0.0);
    }
}
