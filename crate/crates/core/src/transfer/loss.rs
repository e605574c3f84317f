//! Content and style losses over activation sets, with their gradients
//! with respect to the activations.

use std::collections::BTreeMap;

use ndarray::{linalg::general_mat_mul, Array2, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::features::{ActivationSet, LayerId};
use crate::nn::Tensor;

/// Channel correlation matrix of one layer, normalized by `C * H * W`.
#[derive(Debug, Clone, PartialEq)]
pub struct GramMatrix {
    pub values: Array2<f64>,
}

impl GramMatrix {
    pub fn channels(&self) -> usize {
        self.values.nrows()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StyleLayer {
    pub layer: LayerId,
    pub weight: f64,
}

fn flatten(map: &Tensor) -> Result<ArrayView2<'_, f64>> {
    let (c, h, w) = map.dim();
    if c == 0 || h * w == 0 {
        return Err(Error::Argument(format!("empty feature map {c}x{h}x{w}")));
    }
    map.view()
        .into_shape_with_order((c, h * w))
        .map_err(|e| Error::Shape(e.to_string()))
}

/// `G[i][j] = sum_k F[i][k] F[j][k] / (C * H * W)`. The result is exactly
/// symmetric.
pub fn gram(map: &Tensor) -> Result<GramMatrix> {
    let f = flatten(map)?;
    let (c, n) = f.dim();
    let mut g = Array2::zeros((c, c));
    general_mat_mul(1.0 / (c * n) as f64, &f, &f.t(), 0.0, &mut g);
    for i in 0..c {
        for j in 0..i {
            g[[i, j]] = g[[j, i]];
        }
    }
    Ok(GramMatrix { values: g })
}

fn lookup<'a>(acts: &'a ActivationSet, layer: &LayerId) -> Result<&'a Tensor> {
    acts.get(layer)
        .ok_or_else(|| Error::Shape(format!("activation set has no layer `{layer}`")))
}

fn mean_sq_diff<'a>(a: impl Iterator<Item = &'a f64>, b: impl Iterator<Item = &'a f64>, n: usize) -> f64 {
    a.zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / n as f64
}

/// Half the sum over layers of the per-layer mean squared activation
/// difference.
pub fn content_loss(x_acts: &ActivationSet, p_acts: &ActivationSet, layers: &[LayerId]) -> Result<f64> {
    let mut total = 0.0;
    for layer in layers {
        let (x, p) = (lookup(x_acts, layer)?, lookup(p_acts, layer)?);
        if x.dim() != p.dim() {
            return Err(Error::Shape(format!(
                "layer `{layer}`: {:?} vs {:?}",
                x.dim(),
                p.dim()
            )));
        }
        total += 0.5 * mean_sq_diff(x.iter(), p.iter(), x.len());
    }
    Ok(total)
}

/// Weighted sum over layers of the mean squared Gram difference.
pub fn style_loss(x_acts: &ActivationSet, a_acts: &ActivationSet, layers: &[StyleLayer]) -> Result<f64> {
    let mut targets = BTreeMap::new();
    for l in layers {
        targets.insert(l.layer.clone(), gram(lookup(a_acts, &l.layer)?)?);
    }
    style_loss_against(x_acts, &targets, layers)
}

pub(crate) fn style_loss_against(
    x_acts: &ActivationSet,
    targets: &BTreeMap<LayerId, GramMatrix>,
    layers: &[StyleLayer],
) -> Result<f64> {
    let mut total = 0.0;
    for l in layers {
        let gx = gram(lookup(x_acts, &l.layer)?)?;
        let ga = targets
            .get(&l.layer)
            .ok_or_else(|| Error::Shape(format!("no style target for `{}`", l.layer)))?;
        if gx.values.dim() != ga.values.dim() {
            return Err(Error::Shape(format!(
                "layer `{}`: {} vs {} channels",
                l.layer,
                gx.channels(),
                ga.channels()
            )));
        }
        total += l.weight * mean_sq_diff(gx.values.iter(), ga.values.iter(), gx.values.len());
    }
    Ok(total)
}

/// d(content loss)/d(x activation) for one layer: `(X - P) / (C H W)`.
pub(crate) fn content_grad(x: &Tensor, p: &Tensor) -> Tensor {
    let n = x.len() as f64;
    (x - p) / n
}

/// d(style loss)/d(x activation) for one layer:
/// `4 w / (C^3 H W) * (G_x - G_a) F`.
pub(crate) fn style_grad(x: &Tensor, target: &GramMatrix, weight: f64) -> Result<Tensor> {
    let f = flatten(x)?;
    let (c, n) = f.dim();
    let gx = gram(x)?;
    let diff = &gx.values - &target.values;
    let scale = 4.0 * weight / ((c * c * c * n) as f64);
    let mut out = Array2::zeros((c, n));
    general_mat_mul(scale, &diff, &f, 0.0, &mut out);
    out.into_shape_with_order(x.dim())
        .map_err(|e| Error::Shape(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn acts(layer: &str, t: Tensor) -> ActivationSet {
        let mut a = ActivationSet::new();
        a.insert(LayerId::new(layer), t);
        a
    }

    #[test]
    fn constant_map_gram() {
        let v = 0.7;
        let g = gram(&Tensor::from_elem((1, 2, 2), v)).unwrap();
        assert!((g.values[[0, 0]] - v * v).abs() < 1e-15);
    }

    #[test]
    fn anti_correlated_channels() {
        let mut t = Tensor::zeros((2, 2, 2));
        for (i, v) in [1.0, -2.0, 0.5, 3.0].iter().enumerate() {
            t[[0, i / 2, i % 2]] = *v;
            t[[1, i / 2, i % 2]] = -*v;
        }
        let g = gram(&t).unwrap();
        assert_eq!(g.values[[0, 1]], -g.values[[0, 0]]);
    }

    #[test]
    fn empty_map_is_argument_error() {
        assert!(matches!(gram(&Tensor::zeros((0, 2, 2))), Err(Error::Argument(_))));
        assert!(matches!(gram(&Tensor::zeros((2, 0, 2))), Err(Error::Argument(_))));
    }

    #[test]
    fn single_entry_content_loss() {
        let d = 0.3;
        let x = acts("l", Tensor::from_elem((1, 1, 1), 1.0 + d));
        let p = acts("l", Tensor::from_elem((1, 1, 1), 1.0));
        let l = content_loss(&x, &p, &[LayerId::new("l")]).unwrap();
        assert!((l - d * d / 2.0).abs() < 1e-15);
    }

    #[test]
    fn mismatched_shapes_are_shape_errors() {
        let x = acts("l", Tensor::zeros((2, 2, 2)));
        let p = acts("l", Tensor::zeros((2, 2, 3)));
        assert!(matches!(content_loss(&x, &p, &[LayerId::new("l")]), Err(Error::Shape(_))));
        let a = acts("l", Tensor::zeros((3, 2, 2)));
        let layers = [StyleLayer { layer: LayerId::new("l"), weight: 1.0 }];
        assert!(matches!(style_loss(&x, &a, &layers), Err(Error::Shape(_))));
        assert!(matches!(content_loss(&x, &p, &[LayerId::new("missing")]), Err(Error::Shape(_))));
    }
}
