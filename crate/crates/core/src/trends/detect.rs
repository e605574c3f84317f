//! The three trend detectors: core (largest membership), increasing
//! (growing normalized share) and anomalous (late emergence, or small and
//! isolated in embedding space).

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::kmeans::sq_dist;
use super::{ClusterId, NormalizedCountSeries};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrendLabel {
    Core,
    Increasing,
    Anomalous,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DetectorParams {
    /// Fraction of clusters (by size rank) labeled core; ties included.
    pub core_fraction: f64,
    /// Minimum least-squares slope of the normalized share, per bin.
    pub min_slope: f64,
    /// Minimum fraction of variance explained by the linear fit.
    pub min_r2: f64,
    /// Leading fraction of bins in which an emerging cluster has no posts.
    pub emergence_fraction: f64,
    /// Size percentile (0..100) at or below which a cluster counts as small.
    pub small_percentile: f64,
    /// A centroid is isolated when its nearest-centroid distance exceeds
    /// this multiple of the median nearest-centroid distance.
    pub isolation_factor: f64,
}

impl Default for DetectorParams {
    fn default() -> Self {
        Self {
            core_fraction: 0.10,
            min_slope: 0.02,
            min_r2: 0.5,
            emergence_fraction: 0.5,
            small_percentile: 10.0,
            isolation_factor: 1.5,
        }
    }
}

/// Clusters whose size ranks within the top `fraction` of clusters. At least
/// one cluster is returned; clusters tied with the boundary size are kept.
pub fn detect_core(sizes: &BTreeMap<ClusterId, usize>, fraction: f64) -> BTreeSet<ClusterId> {
    if sizes.is_empty() {
        return BTreeSet::new();
    }
    let mut sorted: Vec<usize> = sizes.values().copied().collect();
    sorted.sort_unstable_by(|a, b| b.cmp(a));
    let take = ((fraction * sorted.len() as f64) - 1e-9).ceil().max(1.0) as usize;
    let boundary = sorted[take.min(sorted.len()) - 1];
    sizes
        .iter()
        .filter(|(_, &s)| s >= boundary)
        .map(|(&id, _)| id)
        .collect()
}

/// Least-squares slope and coefficient of determination of `values`
/// against their index. A constant series has slope 0 and R² 0.
pub fn linear_trend(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    if values.len() < 2 {
        return (0.0, 0.0);
    }
    let tm = (n - 1.0) / 2.0;
    let ym = values.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (i, y) in values.iter().enumerate() {
        let dt = i as f64 - tm;
        let dy = y - ym;
        sxy += dt * dy;
        sxx += dt * dt;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    if syy <= 0.0 {
        return (0.0, 0.0);
    }
    (slope, (sxy * sxy) / (sxx * syy))
}

pub fn detect_increasing(
    series: &BTreeMap<ClusterId, NormalizedCountSeries>,
    params: &DetectorParams,
) -> BTreeSet<ClusterId> {
    series
        .iter()
        .filter(|(_, s)| s.bins.len() >= 2)
        .filter(|(_, s)| {
            let (slope, r2) = linear_trend(&s.values());
            slope > 0.0 && slope >= params.min_slope && r2 >= params.min_r2
        })
        .map(|(&id, _)| id)
        .collect()
}

/// Nearest-rank percentile of `values` (p in 0..=100).
fn percentile(values: &[usize], p: f64) -> usize {
    let mut v = values.to_vec();
    v.sort_unstable();
    let rank = ((p / 100.0) * v.len() as f64).ceil().max(1.0) as usize;
    v[rank.min(v.len()) - 1]
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Emerging clusters (no posts in the leading bins, posts later) and quirky
/// clusters (small and isolated).
pub fn detect_anomalous(
    series: &BTreeMap<ClusterId, NormalizedCountSeries>,
    sizes: &BTreeMap<ClusterId, usize>,
    centroids: &BTreeMap<ClusterId, Vec<f64>>,
    params: &DetectorParams,
) -> BTreeSet<ClusterId> {
    let mut out = BTreeSet::new();
    for (&id, s) in series {
        let n = s.bins.len();
        if n < 2 {
            continue;
        }
        let head = ((params.emergence_fraction * n as f64).ceil() as usize).clamp(1, n - 1);
        let values = s.values();
        if values[..head].iter().all(|v| *v == 0.0) && values[head..].iter().any(|v| *v > 0.0) {
            out.insert(id);
        }
    }

    if centroids.len() >= 3 {
        let ids: Vec<ClusterId> = centroids.keys().copied().collect();
        let nn: Vec<f64> = ids
            .iter()
            .map(|a| {
                ids.iter()
                    .filter(|b| *b != a)
                    .map(|b| sq_dist(&centroids[a], &centroids[b]).sqrt())
                    .fold(f64::INFINITY, f64::min)
            })
            .collect();
        let threshold = params.isolation_factor * median(&mut nn.clone());
        let size_values: Vec<usize> = ids.iter().map(|id| sizes.get(id).copied().unwrap_or(0)).collect();
        let small = percentile(&size_values, params.small_percentile);
        for ((id, d), size) in ids.iter().zip(&nn).zip(&size_values) {
            if *size <= small && *d > threshold {
                out.insert(*id);
            }
        }
    }
    out
}
