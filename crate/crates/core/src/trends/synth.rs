//! Synthetic feed corpora with planted trend structure.
//!
//! Cluster centers lie in a cone around a common direction so that all
//! ordinary clusters are similarly spaced; an optional quirky cluster sits on
//! the opposite side of the sphere. Posts per bin are drawn from a
//! categorical distribution over clusters whose shares follow the planted
//! behaviour:
//!
//! * core: the largest stationary cluster, 60% of the posts not taken by
//!   the growing and emerging clusters;
//! * increasing: share grows linearly from `growth_start` to `growth_end`;
//! * emergent: share 0 for the first half of the bins, `emergent_share`
//!   afterwards;
//! * background: stationary clusters splitting the remaining 40%;
//! * quirky (optional): constant small share, isolated centroid.

use chrono::{DateTime, Duration, TimeZone, Utc};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use std::collections::BTreeMap;

use super::{Assignment, Corpus, FeedRecord, TrendLabel, TrendReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantedRole {
    Core,
    Increasing,
    Emergent,
    Quirky,
    Background,
}

impl PlantedRole {
    pub fn expected_label(self) -> Option<TrendLabel> {
        match self {
            PlantedRole::Core => Some(TrendLabel::Core),
            PlantedRole::Increasing => Some(TrendLabel::Increasing),
            PlantedRole::Emergent | PlantedRole::Quirky => Some(TrendLabel::Anomalous),
            PlantedRole::Background => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub dim: usize,
    pub bins: usize,
    pub posts_per_bin: usize,
    pub bin_days: i64,
    /// Per-coordinate standard deviation around a cluster center.
    pub spread: f64,
    /// Angular spread of ordinary cluster centers around the cone axis.
    pub cone: f64,
    pub background_clusters: usize,
    pub growth_start: f64,
    pub growth_end: f64,
    pub emergent_share: f64,
    /// Constant share of an isolated quirky cluster; 0 disables it.
    pub quirky_share: f64,
    pub include_emergent: bool,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            dim: 16,
            bins: 12,
            posts_per_bin: 200,
            bin_days: 7,
            spread: 0.02,
            cone: 0.6,
            background_clusters: 3,
            growth_start: 0.05,
            growth_end: 0.5,
            emergent_share: 0.05,
            quirky_share: 0.0,
            include_emergent: true,
        }
    }
}

impl SyntheticSpec {
    /// Stationary core, a quirky 3% cluster, and backgrounds; no growth or
    /// emergence.
    pub fn quirky() -> Self {
        Self {
            growth_start: 0.0,
            growth_end: 0.0,
            include_emergent: false,
            quirky_share: 0.03,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct PlantedCorpus {
    pub records: Vec<FeedRecord>,
    /// Planted cluster index of each record, aligned with `records`.
    pub planted: Vec<usize>,
    pub roles: Vec<PlantedRole>,
}

fn unit(v: Vec<f64>) -> Vec<f64> {
    let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    v.into_iter().map(|x| x / n).collect()
}

pub fn start_time() -> DateTime<Utc> {
    Utc.with_ymd_and_hms(2019, 1, 7, 0, 0, 0).unwrap()
}

pub fn generate(spec: &SyntheticSpec, seed: u64) -> PlantedCorpus {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let std_normal = Normal::new(0.0, 1.0).unwrap();

    let mut roles = vec![PlantedRole::Core];
    if spec.growth_end > 0.0 {
        roles.push(PlantedRole::Increasing);
    }
    if spec.include_emergent {
        roles.push(PlantedRole::Emergent);
    }
    if spec.quirky_share > 0.0 {
        roles.push(PlantedRole::Quirky);
    }
    roles.extend(std::iter::repeat_n(PlantedRole::Background, spec.background_clusters));

    let axis: Vec<f64> = (0..spec.dim).map(|i| if i == 0 { 1.0 } else { 0.0 }).collect();
    let jitter = spec.cone / (spec.dim as f64).sqrt();
    let centers: Vec<Vec<f64>> = roles
        .iter()
        .map(|role| {
            let sign = if *role == PlantedRole::Quirky { -1.0 } else { 1.0 };
            unit(axis.iter().map(|a| sign * a + jitter * std_normal.sample(&mut rng)).collect())
        })
        .collect();

    let mut records = Vec::with_capacity(spec.bins * spec.posts_per_bin);
    let mut planted = Vec::with_capacity(records.capacity());
    let t0 = start_time();
    let bin_secs = spec.bin_days * 86_400;
    for b in 0..spec.bins {
        let frac = if spec.bins > 1 { b as f64 / (spec.bins - 1) as f64 } else { 0.0 };
        let mut shares = vec![0.0; roles.len()];
        let mut taken = 0.0;
        for (i, role) in roles.iter().enumerate() {
            let s = match role {
                PlantedRole::Increasing => spec.growth_start + (spec.growth_end - spec.growth_start) * frac,
                PlantedRole::Emergent if b >= spec.bins.div_ceil(2) => spec.emergent_share,
                PlantedRole::Quirky => spec.quirky_share,
                _ => 0.0,
            };
            shares[i] = s;
            taken += s;
        }
        let rest = (1.0 - taken).max(0.0);
        let nbg = spec.background_clusters.max(1) as f64;
        for (i, role) in roles.iter().enumerate() {
            match role {
                PlantedRole::Core => shares[i] = 0.6 * rest,
                PlantedRole::Background => shares[i] = 0.4 * rest / nbg,
                _ => {}
            }
        }
        for _ in 0..spec.posts_per_bin {
            let mut r = rng.random_range(0.0..1.0);
            let mut c = roles.len() - 1;
            for (i, s) in shares.iter().enumerate() {
                if r < *s {
                    c = i;
                    break;
                }
                r -= s;
            }
            let e = unit(
                centers[c]
                    .iter()
                    .map(|v| v + spec.spread * std_normal.sample(&mut rng))
                    .collect(),
            );
            let offset = rng.random_range(0..bin_secs);
            let idx = records.len();
            records.push(FeedRecord {
                id: format!("post-{idx:06}"),
                timestamp: t0 + Duration::seconds(b as i64 * bin_secs + offset),
                image: format!("synthetic://{seed}/{idx}"),
                embedding: Some(e),
            });
            planted.push(c);
        }
    }
    PlantedCorpus { records, planted, roles }
}

/// Detector outcome for one label, counted over clusters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelScore {
    /// Found clusters carrying the label whose planted role expects it.
    pub true_positive: usize,
    pub false_positive: usize,
    /// Planted clusters whose role expects the label.
    pub planted: usize,
    /// Of those, how many have a matching labeled found cluster.
    pub recovered: usize,
}

impl LabelScore {
    /// 1 when nothing was labeled.
    pub fn precision(&self) -> f64 {
        let n = self.true_positive + self.false_positive;
        if n == 0 { 1.0 } else { self.true_positive as f64 / n as f64 }
    }

    /// 1 when nothing was planted.
    pub fn recall(&self) -> f64 {
        if self.planted == 0 { 1.0 } else { self.recovered as f64 / self.planted as f64 }
    }

    pub fn merge(&mut self, other: &LabelScore) {
        self.true_positive += other.true_positive;
        self.false_positive += other.false_positive;
        self.planted += other.planted;
        self.recovered += other.recovered;
    }
}

/// Matches each found cluster to the planted cluster most of its members
/// came from, then scores every label.
pub fn score_report(
    planted: &PlantedCorpus,
    corpus: &Corpus,
    assignment: &Assignment,
    report: &TrendReport,
) -> BTreeMap<TrendLabel, LabelScore> {
    let truth: BTreeMap<&str, usize> = planted
        .records
        .iter()
        .map(|r| r.id.as_str())
        .zip(planted.planted.iter().copied())
        .collect();
    let mut votes: BTreeMap<usize, BTreeMap<usize, usize>> = BTreeMap::new();
    for (id, found) in assignment.by_record(corpus) {
        if let Some(&p) = truth.get(id) {
            *votes.entry(found).or_default().entry(p).or_insert(0) += 1;
        }
    }
    let majority: BTreeMap<usize, usize> = votes
        .iter()
        .map(|(f, v)| (*f, v.iter().max_by_key(|(p, n)| (**n, std::cmp::Reverse(**p))).map(|(p, _)| *p).unwrap()))
        .collect();

    let mut out = BTreeMap::new();
    for label in [TrendLabel::Core, TrendLabel::Increasing, TrendLabel::Anomalous] {
        let mut score = LabelScore::default();
        for found in report.clusters_labeled(label) {
            let role = majority.get(&found).map(|p| planted.roles[*p]);
            if role.and_then(PlantedRole::expected_label) == Some(label) {
                score.true_positive += 1;
            } else {
                score.false_positive += 1;
            }
        }
        for (p, role) in planted.roles.iter().enumerate() {
            if role.expected_label() != Some(label) {
                continue;
            }
            score.planted += 1;
            let hit = majority
                .iter()
                .any(|(f, mp)| *mp == p && report.labels.get(f).is_some_and(|l| l.contains(&label)));
            if hit {
                score.recovered += 1;
            }
        }
        out.insert(label, score);
    }
    out
}
