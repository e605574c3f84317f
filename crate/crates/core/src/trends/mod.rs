//! Trend detection over a timestamped stream of image embeddings.
//!
//! Records are clustered in embedding space; each cluster gets a series of
//! its per-bin share of all posts, and three detectors label clusters as
//! core, increasing or anomalous.

mod detect;
mod kmeans;
pub mod synth;

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::io::{BufRead, Write};

use chrono::{DateTime, Duration, DurationRound, Utc};
use serde::{Deserialize, Serialize};

pub use detect::{detect_anomalous, detect_core, detect_increasing, linear_trend, DetectorParams, TrendLabel};
pub use kmeans::{kmeans, silhouette, sweep, KMeans};

use crate::error::{Error, Result};
use crate::features::{Embedder, EmbeddingVector};
use crate::image::ImageBuffer;

pub type ClusterId = usize;

pub const DEFAULT_BIN_DAYS: i64 = 7;
pub const DEFAULT_EXEMPLARS: usize = 5;

/// One line of the ingest JSONL format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeedRecord {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub image: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusRecord {
    pub id: String,
    pub timestamp: DateTime<Utc>,
    pub image: String,
    pub embedding: Vec<f64>,
}

/// Immutable, timestamp-sorted set of embedded records.
#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    records: Vec<CorpusRecord>,
    dim: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Skipped {
    pub id: String,
    pub reason: String,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct IngestReport {
    pub accepted: usize,
    pub skipped: Vec<Skipped>,
}

impl Corpus {
    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    fn points(&self) -> Vec<&[f64]> {
        self.records.iter().map(|r| r.embedding.as_slice()).collect()
    }

    pub fn time_range(&self) -> (DateTime<Utc>, DateTime<Utc>) {
        (self.records[0].timestamp, self.records[self.records.len() - 1].timestamp)
    }

    /// Writes the corpus back out as JSONL with embeddings filled in.
    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        for r in &self.records {
            serde_json::to_writer(&mut w, r)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }
}

/// Parses JSONL feed records, skipping blank lines.
pub fn parse_jsonl(reader: impl BufRead) -> Result<Vec<FeedRecord>> {
    let mut out = Vec::new();
    for (lineno, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: FeedRecord = serde_json::from_str(&line)
            .map_err(|e| Error::Argument(format!("line {}: {e}", lineno + 1)))?;
        out.push(rec);
    }
    Ok(out)
}

/// Builds a corpus. Records without an embedding are embedded from their
/// image via `embedder`; unreadable images are skipped and reported. The
/// first accepted record fixes the embedding dimension.
pub fn ingest(
    records: impl IntoIterator<Item = FeedRecord>,
    embedder: Option<&dyn Embedder>,
    load_image: impl Fn(&str) -> Result<ImageBuffer>,
) -> Result<(Corpus, IngestReport)> {
    let mut seen = HashSet::new();
    let mut dim: Option<usize> = None;
    let mut report = IngestReport::default();
    let mut out = Vec::new();
    for rec in records {
        if !seen.insert(rec.id.clone()) {
            return Err(Error::DuplicateRecord(rec.id));
        }
        let embedding = match rec.embedding {
            Some(values) => {
                let expected = *dim.get_or_insert(values.len());
                if values.len() != expected || values.is_empty() {
                    return Err(Error::Dimension { expected, got: values.len() });
                }
                if values.iter().any(|v| !v.is_finite()) {
                    return Err(Error::Argument(format!("record `{}` has a non-finite embedding", rec.id)));
                }
                EmbeddingVector::normalized(values, Some(rec.id.clone())).values
            }
            None => {
                let Some(embedder) = embedder else {
                    report.skipped.push(Skipped {
                        id: rec.id,
                        reason: "no embedding and no feature network configured".into(),
                    });
                    continue;
                };
                match load_image(&rec.image).and_then(|img| embedder.embed(&img)) {
                    Ok(e) => {
                        let expected = *dim.get_or_insert(e.dim());
                        if e.dim() != expected {
                            return Err(Error::Dimension { expected, got: e.dim() });
                        }
                        e.values
                    }
                    Err(e) => {
                        log::warn!("skipping record `{}`: {e}", rec.id);
                        report.skipped.push(Skipped { id: rec.id, reason: e.to_string() });
                        continue;
                    }
                }
            }
        };
        out.push(CorpusRecord {
            id: rec.id,
            timestamp: rec.timestamp,
            image: rec.image,
            embedding,
        });
    }
    if out.is_empty() {
        return Err(Error::Argument("corpus has no usable records".into()));
    }
    out.sort_by(|a, b| a.timestamp.cmp(&b.timestamp).then_with(|| a.id.cmp(&b.id)));
    report.accepted = out.len();
    let dim = out[0].embedding.len();
    Ok((Corpus { records: out, dim }, report))
}

/// Cluster label per corpus record, in corpus order.
#[derive(Debug, Clone, PartialEq)]
pub struct Assignment {
    pub labels: Vec<ClusterId>,
    pub centroids: Vec<Vec<f64>>,
}

impl Assignment {
    pub fn k(&self) -> usize {
        self.centroids.len()
    }

    pub fn sizes(&self) -> BTreeMap<ClusterId, usize> {
        let mut sizes = BTreeMap::new();
        for l in &self.labels {
            *sizes.entry(*l).or_insert(0) += 1;
        }
        sizes
    }

    pub fn by_record<'a>(&'a self, corpus: &'a Corpus) -> BTreeMap<&'a str, ClusterId> {
        corpus.records.iter().map(|r| r.id.as_str()).zip(self.labels.iter().copied()).collect()
    }
}

/// How many clusters to fit.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClusterCount {
    Fixed(usize),
    /// Highest mean silhouette over the inclusive range.
    Sweep { min: usize, max: usize },
}

impl Default for ClusterCount {
    fn default() -> Self {
        ClusterCount::Sweep { min: 2, max: 12 }
    }
}

pub fn cluster(corpus: &Corpus, k: usize, seed: u64) -> Result<Assignment> {
    let run = kmeans(&corpus.points(), k, seed)?;
    Ok(Assignment { labels: run.labels, centroids: run.centroids })
}

pub fn cluster_with(corpus: &Corpus, count: &ClusterCount, seed: u64) -> Result<Assignment> {
    match *count {
        ClusterCount::Fixed(k) => cluster(corpus, k, seed),
        ClusterCount::Sweep { min, max } => {
            if min < 2 || max < min {
                return Err(Error::Argument(format!("invalid k range {min}..={max}")));
            }
            if min > corpus.len() {
                return Err(Error::Argument(format!("k = {min} exceeds corpus size {}", corpus.len())));
            }
            let run = sweep(&corpus.points(), min..=max, seed)?;
            Ok(Assignment { labels: run.labels, centroids: run.centroids })
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Bin {
    pub start: DateTime<Utc>,
    pub value: f64,
}

/// Per-bin share of a cluster's posts among all posts in the bin.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizedCountSeries {
    pub bins: Vec<Bin>,
}

impl NormalizedCountSeries {
    pub fn values(&self) -> Vec<f64> {
        self.bins.iter().map(|b| b.value).collect()
    }
}

/// Bins start at midnight UTC on the day of the first post and run in steps
/// of `bin_width` through the last post.
pub fn normalized_counts(
    assignment: &Assignment,
    corpus: &Corpus,
    bin_width: Duration,
) -> Result<BTreeMap<ClusterId, NormalizedCountSeries>> {
    if bin_width <= Duration::zero() {
        return Err(Error::Argument("bin width must be positive".into()));
    }
    if corpus.is_empty() {
        return Err(Error::Argument("empty corpus".into()));
    }
    if assignment.labels.len() != corpus.len() {
        return Err(Error::Argument("assignment does not match corpus".into()));
    }
    let (first, t1) = corpus.time_range();
    let t0 = first.duration_trunc(Duration::days(1)).unwrap_or(first);
    let width_ms = bin_width.num_milliseconds().max(1);
    let bin_of = |t: DateTime<Utc>| ((t - t0).num_milliseconds() / width_ms) as usize;
    let nbins = bin_of(t1) + 1;
    let k = assignment.k();
    let mut counts = vec![vec![0usize; nbins]; k];
    let mut totals = vec![0usize; nbins];
    for (rec, &label) in corpus.records.iter().zip(&assignment.labels) {
        let b = bin_of(rec.timestamp);
        counts[label][b] += 1;
        totals[b] += 1;
    }
    Ok((0..k)
        .map(|c| {
            let bins = (0..nbins)
                .map(|b| Bin {
                    start: t0 + Duration::milliseconds(width_ms * b as i64),
                    value: if totals[b] == 0 { 0.0 } else { counts[c][b] as f64 / totals[b] as f64 },
                })
                .collect();
            (c, NormalizedCountSeries { bins })
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClusterSummary {
    pub cluster_id: ClusterId,
    pub size: usize,
    pub centroid: Vec<f64>,
    pub series: NormalizedCountSeries,
    /// Record ids nearest to the centroid, closest first.
    pub exemplars: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportParams {
    pub clusters: ClusterCount,
    pub bin_days: i64,
    pub exemplars: usize,
    pub detectors: DetectorParams,
}

impl Default for ReportParams {
    fn default() -> Self {
        Self {
            clusters: ClusterCount::default(),
            bin_days: DEFAULT_BIN_DAYS,
            exemplars: DEFAULT_EXEMPLARS,
            detectors: DetectorParams::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrendReport {
    pub seed: u64,
    pub parameters: ReportParams,
    pub clusters: Vec<ClusterSummary>,
    /// Every cluster id, possibly with an empty label set.
    pub labels: BTreeMap<ClusterId, BTreeSet<TrendLabel>>,
}

impl TrendReport {
    pub fn clusters_labeled(&self, label: TrendLabel) -> BTreeSet<ClusterId> {
        self.labels
            .iter()
            .filter(|(_, l)| l.contains(&label))
            .map(|(id, _)| *id)
            .collect()
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}

pub fn report(corpus: &Corpus, params: &ReportParams, seed: u64) -> Result<TrendReport> {
    let assignment = cluster_with(corpus, &params.clusters, seed)?;
    report_for(corpus, &assignment, params, seed)
}

/// Builds a report for an existing assignment.
pub fn report_for(corpus: &Corpus, assignment: &Assignment, params: &ReportParams, seed: u64) -> Result<TrendReport> {
    let series = normalized_counts(assignment, corpus, Duration::days(params.bin_days))?;
    let sizes = assignment.sizes();
    let centroids: BTreeMap<ClusterId, Vec<f64>> = assignment
        .centroids
        .iter()
        .enumerate()
        .filter(|(c, _)| sizes.contains_key(c))
        .map(|(c, v)| (c, v.clone()))
        .collect();
    let d = &params.detectors;
    let core = detect_core(&sizes, d.core_fraction);
    let increasing = detect_increasing(&series, d);
    let anomalous = detect_anomalous(&series, &sizes, &centroids, d);

    let mut members: BTreeMap<ClusterId, Vec<(f64, &str)>> = BTreeMap::new();
    for (rec, &label) in corpus.records.iter().zip(&assignment.labels) {
        let dist = kmeans::sq_dist(&rec.embedding, &assignment.centroids[label]);
        members.entry(label).or_default().push((dist, rec.id.as_str()));
    }
    let mut clusters = Vec::new();
    let mut labels = BTreeMap::new();
    for (&id, size) in &sizes {
        let mut m = members.remove(&id).unwrap_or_default();
        m.sort_by(|a, b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(b.1)));
        clusters.push(ClusterSummary {
            cluster_id: id,
            size: *size,
            centroid: assignment.centroids[id].clone(),
            series: series[&id].clone(),
            exemplars: m.iter().take(params.exemplars).map(|(_, r)| r.to_string()).collect(),
        });
        let mut set = BTreeSet::new();
        if core.contains(&id) {
            set.insert(TrendLabel::Core);
        }
        if increasing.contains(&id) {
            set.insert(TrendLabel::Increasing);
        }
        if anomalous.contains(&id) {
            set.insert(TrendLabel::Anomalous);
        }
        labels.insert(id, set);
    }
    Ok(TrendReport {
        seed,
        parameters: params.clone(),
        clusters,
        labels,
    })
}
