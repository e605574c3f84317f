//! Seeded k-means++ / Lloyd clustering and silhouette-based choice of k.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

const MAX_ITER: usize = 300;
const RESTARTS: usize = 8;

#[derive(Debug, Clone, PartialEq)]
pub struct KMeans {
    pub labels: Vec<usize>,
    pub centroids: Vec<Vec<f64>>,
    pub inertia: f64,
}

pub(crate) fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn nearest(p: &[f64], centroids: &[Vec<f64>]) -> (usize, f64) {
    centroids
        .iter()
        .enumerate()
        .map(|(i, c)| (i, sq_dist(p, c)))
        .fold((0, f64::INFINITY), |best, cur| if cur.1 < best.1 { cur } else { best })
}

fn plus_plus_init(points: &[&[f64]], k: usize, rng: &mut ChaCha8Rng) -> Vec<Vec<f64>> {
    let n = points.len();
    let mut centroids = vec![points[rng.random_range(0..n)].to_vec()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.random_range(0.0..total);
            let mut idx = n - 1;
            for (i, d) in d2.iter().enumerate() {
                if r < *d {
                    idx = i;
                    break;
                }
                r -= d;
            }
            idx
        } else {
            rng.random_range(0..n)
        };
        centroids.push(points[pick].to_vec());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, centroids.last().unwrap()));
        }
    }
    centroids
}

fn lloyd(points: &[&[f64]], mut centroids: Vec<Vec<f64>>) -> KMeans {
    let k = centroids.len();
    let dim = points[0].len();
    let mut labels = vec![usize::MAX; points.len()];
    for _ in 0..MAX_ITER {
        let mut changed = false;
        for (l, p) in labels.iter_mut().zip(points) {
            let (c, _) = nearest(p, &centroids);
            if *l != c {
                *l = c;
                changed = true;
            }
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (l, p) in labels.iter().zip(points) {
            counts[*l] += 1;
            sums[*l].iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
        }
        for c in 0..k {
            if counts[c] == 0 {
                // Re-seed an empty cluster with the point farthest from its centroid.
                let far = (0..points.len())
                    .max_by(|&a, &b| {
                        sq_dist(points[a], &centroids[labels[a]])
                            .total_cmp(&sq_dist(points[b], &centroids[labels[b]]))
                    })
                    .unwrap();
                labels[far] = c;
                centroids[c] = points[far].to_vec();
                changed = true;
                continue;
            }
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
        if !changed {
            break;
        }
    }
    // Final centroids are exact member means of the final labels.
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (l, p) in labels.iter().zip(points) {
        counts[*l] += 1;
        sums[*l].iter_mut().zip(p.iter()).for_each(|(s, v)| *s += v);
    }
    for c in 0..k {
        if counts[c] > 0 {
            centroids[c] = sums[c].iter().map(|s| s / counts[c] as f64).collect();
        }
    }
    let inertia = labels
        .iter()
        .zip(points)
        .map(|(l, p)| sq_dist(p, &centroids[*l]))
        .sum();
    KMeans { labels, centroids, inertia }
}

/// Best of several seeded k-means++ runs by inertia.
pub fn kmeans(points: &[&[f64]], k: usize, seed: u64) -> Result<KMeans> {
    if k < 2 {
        return Err(Error::Argument(format!("k must be at least 2, got {k}")));
    }
    if k > points.len() {
        return Err(Error::Argument(format!(
            "k = {k} exceeds corpus size {}",
            points.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut best: Option<KMeans> = None;
    for _ in 0..RESTARTS {
        let init = plus_plus_init(points, k, &mut rng);
        let run = lloyd(points, init);
        if best.as_ref().is_none_or(|b| run.inertia < b.inertia) {
            best = Some(run);
        }
    }
    Ok(best.expect("at least one restart"))
}

/// Mean silhouette coefficient; singleton clusters contribute 0.
pub fn silhouette(points: &[&[f64]], labels: &[usize], k: usize) -> f64 {
    let n = points.len();
    let mut counts = vec![0usize; k];
    labels.iter().for_each(|l| counts[*l] += 1);
    let mut total = 0.0;
    let mut sums = vec![0.0; k];
    for i in 0..n {
        sums.iter_mut().for_each(|s| *s = 0.0);
        for j in 0..n {
            if i != j {
                sums[labels[j]] += sq_dist(points[i], points[j]).sqrt();
            }
        }
        let own = labels[i];
        if counts[own] <= 1 {
            continue;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = (0..k)
            .filter(|&c| c != own && counts[c] > 0)
            .map(|c| sums[c] / counts[c] as f64)
            .fold(f64::INFINITY, f64::min);
        if b.is_finite() {
            total += (b - a) / a.max(b);
        }
    }
    total / n as f64
}

/// Runs k-means for every k in `range` and keeps the highest silhouette.
/// Ties go to the smaller k.
pub fn sweep(points: &[&[f64]], range: std::ops::RangeInclusive<usize>, seed: u64) -> Result<KMeans> {
    let mut best: Option<(f64, KMeans)> = None;
    for k in range {
        if k > points.len() {
            break;
        }
        let run = kmeans(points, k, seed)?;
        let score = silhouette(points, &run.labels, k);
        if best.as_ref().is_none_or(|(s, _)| score > *s) {
            best = Some((score, run));
        }
    }
    best.map(|(_, r)| r)
        .ok_or_else(|| Error::Argument("empty k range".into()))
}
