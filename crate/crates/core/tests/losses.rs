mod common;

use std::collections::BTreeMap;

use fastfashion_core::nn::Tensor;
use fastfashion_core::transfer::{self, content_loss, gram, style_loss, StyleLayer};
use fastfashion_core::{ImageBuffer, LayerId};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use common::{toy_config, toy_net};

fn random_map(c: usize, h: usize, w: usize, seed: u64) -> Tensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Tensor::from_shape_simple_fn((c, h, w), || rng.random_range(-2.0..2.0))
}

/// Direct double loop over channel pairs and positions.
fn gram_oracle(f: &Tensor) -> Vec<Vec<f64>> {
    let (c, h, w) = f.dim();
    let mut g = vec![vec![0.0; c]; c];
    for (i, row) in g.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            let mut s = 0.0;
            for y in 0..h {
                for x in 0..w {
                    s += f[[i, y, x]] * f[[j, y, x]];
                }
            }
            *cell = s / (c * h * w) as f64;
        }
    }
    g
}

#[test]
fn gram_matches_double_loop() {
    for seed in 0..10 {
        let f = random_map(3, 4, 4, seed);
        let g = gram(&f).unwrap();
        let oracle = gram_oracle(&f);
        for i in 0..3 {
            for j in 0..3 {
                assert!((g.values[[i, j]] - oracle[i][j]).abs() < 1e-6);
            }
        }
    }
}

#[test]
fn gram_is_symmetric_and_psd() {
    for seed in 0..10 {
        let g = gram(&random_map(3, 4, 4, 100 + seed)).unwrap().values;
        assert_eq!(g, g.t());
        let m = DMatrix::from_fn(3, 3, |i, j| g[[i, j]]);
        let min = m.symmetric_eigenvalues().min();
        assert!(min >= -1e-8, "min eigenvalue {min}");
    }
}

fn acts(layer: &str, t: Tensor) -> BTreeMap<LayerId, Tensor> {
    BTreeMap::from([(LayerId::new(layer), t)])
}

#[test]
fn identical_activations_give_zero_losses() {
    let f = random_map(5, 6, 7, 3);
    let a = acts("l", f.clone());
    assert!(content_loss(&a, &a, &[LayerId::new("l")]).unwrap().abs() < 1e-6);
    let sl = [StyleLayer { layer: LayerId::new("l"), weight: 1.0 }];
    assert!(style_loss(&a, &a, &sl).unwrap().abs() < 1e-6);
}

#[test]
fn content_loss_oracle() {
    let x = random_map(2, 3, 3, 1);
    let p = random_map(2, 3, 3, 2);
    let expected = 0.5 * x.iter().zip(p.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>() / 18.0;
    let got = content_loss(&acts("l", x), &acts("l", p), &[LayerId::new("l")]).unwrap();
    assert!((got - expected).abs() < 1e-12);
}

#[test]
fn network_loss_identities() {
    let net = toy_net(1);
    let mut cfg = toy_config(32, 1.0, 1.0);
    let x = cfg.content.clone();
    let at_content = transfer::total_loss(&net, &cfg, &x).unwrap();
    assert!(at_content.content.abs() < 1e-6);
    cfg.style = x.clone();
    let at_style = transfer::total_loss(&net, &cfg, &x).unwrap();
    assert!(at_style.style.abs() < 1e-6);
}

#[test]
fn total_loss_is_linear_in_weights() {
    let net = toy_net(2);
    let x = common::pattern(32, 0.7);
    let base = transfer::total_loss(&net, &toy_config(32, 1.0, 1.0), &x).unwrap();
    for (alpha, beta) in [(0.05, 5.0), (2.0, 0.0), (0.0, 3.0), (0.3, 0.7)] {
        let got = transfer::total_loss(&net, &toy_config(32, alpha, beta), &x).unwrap();
        let expected = alpha * base.content + beta * base.style;
        assert!((got.total - expected).abs() <= 1e-12 * expected.abs().max(1.0));
        assert_eq!(got.content, base.content);
        assert_eq!(got.style, base.style);
    }
}

#[test]
fn gradient_matches_central_differences() {
    let net = toy_net(3);
    let cfg = toy_config(64, 0.05, 5.0);
    let x = common::pattern(64, 0.4);
    let analytic = transfer::loss_gradient(&net, &cfg, &x).unwrap();
    let obj = transfer::Objective::new(&net, &cfg).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let h = 1e-4;
    for _ in 0..10 {
        let i = rng.random_range(0..x.data().len());
        let mut plus = x.data().to_vec();
        plus[i] += h;
        let mut minus = x.data().to_vec();
        minus[i] -= h;
        let numeric = (obj.loss(&plus).unwrap().total - obj.loss(&minus).unwrap().total) / (2.0 * h);
        let a = analytic[i];
        let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-12);
        assert!(rel < 1e-3, "pixel {i}: analytic {a} numeric {numeric} rel {rel}");
    }
}

#[test]
fn wrong_size_x_is_shape_error() {
    let net = toy_net(4);
    let cfg = toy_config(32, 1.0, 1.0);
    let x = ImageBuffer::filled(16, 16, [0.5; 3]).unwrap();
    assert_eq!(transfer::total_loss(&net, &cfg, &x).unwrap_err().kind(), "shape_error");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_symmetric_psd_for_any_map(c in 1usize..6, h in 1usize..6, w in 1usize..6, seed in any::<u64>()) {
        let g = gram(&random_map(c, h, w, seed)).unwrap().values;
        prop_assert_eq!(&g, &g.t());
        let m = DMatrix::from_fn(c, c, |i, j| g[[i, j]]);
        prop_assert!(m.symmetric_eigenvalues().min() >= -1e-8);
    }

    #[test]
    fn losses_are_non_negative(seed in any::<u64>()) {
        let x = acts("l", random_map(3, 4, 5, seed));
        let y = acts("l", random_map(3, 4, 5, seed.wrapping_add(1)));
        prop_assert!(content_loss(&x, &y, &[LayerId::new("l")]).unwrap() >= 0.0);
        let sl = [StyleLayer { layer: LayerId::new("l"), weight: 0.5 }];
        prop_assert!(style_loss(&x, &y, &sl).unwrap() >= 0.0);
    }
}
