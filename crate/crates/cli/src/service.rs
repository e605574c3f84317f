//! Operations shared by the HTTP API and the command line.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex, MutexGuard};

use fastfashion_core::feedback::{self, DesignSummary, RaterKind, SegregationTable};
use fastfashion_core::superres::{self, SRConfig};
use fastfashion_core::transfer::{SeedInit, StyleLayer};
use fastfashion_core::trends::{self, ClusterCount, Corpus, IngestReport, ReportParams, TrendReport};
use fastfashion_core::{
    DesignRecord, FeatureNet, FeedbackStore, ImageBuffer, LayerId, NoiseSpec, Rating, SRModel, SqliteStore,
    TransferParams,
};
use serde::{Deserialize, Serialize};

use crate::artifacts::ArtifactStore;
use crate::config::{Config, DEFAULT_NET_SEED};
use crate::error::{FieldError, ServiceError, ServiceResult};
use crate::queue::{JobQueue, JobSnapshot, JobState, Runner, TransferRunner};

/// Where a job's content or style image comes from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum ImageSource {
    /// A previously uploaded image.
    Asset { asset_id: String },
    /// A file readable by the server.
    Path { path: PathBuf },
    /// The exemplar closest to a trend cluster's centroid.
    Trend {
        corpus_id: String,
        cluster_id: usize,
        #[serde(default)]
        seed: u64,
    },
}

/// Optional overrides applied on top of the default transfer parameters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParamOverrides {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iterations: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise: Option<NoiseSpec>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub init: Option<SeedInit>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub content_layers: Option<Vec<LayerId>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub style_layers: Option<Vec<StyleLayer>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub working_size: Option<usize>,
}

impl ParamOverrides {
    pub fn apply(self, mut p: TransferParams) -> TransferParams {
        if let Some(v) = self.alpha {
            p.alpha = v;
        }
        if let Some(v) = self.beta {
            p.beta = v;
        }
        if let Some(v) = self.iterations {
            p.iterations = v;
        }
        if let Some(v) = self.noise {
            p.noise = v;
        }
        if let Some(v) = self.init {
            p.init = v;
        }
        if let Some(v) = self.content_layers {
            p.content_layers = v;
        }
        if let Some(v) = self.style_layers {
            p.style_layers = v;
        }
        if let Some(v) = self.working_size {
            p.working_size = v;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct JobRequest {
    pub content: ImageSource,
    pub style: ImageSource,
    #[serde(default)]
    pub params: ParamOverrides,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnhanceRequest {
    pub factor: u32,
    pub denoise: bool,
}

impl Default for EnhanceRequest {
    fn default() -> Self {
        Self { factor: superres::DEFAULT_FACTOR, denoise: false }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EnhanceResult {
    pub job_id: String,
    pub asset_id: String,
    pub factor: u32,
    pub denoise: bool,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ImageUpload {
    pub asset_id: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusInfo {
    pub corpus_id: String,
    pub records: usize,
    pub dim: usize,
    pub skipped: Vec<trends::Skipped>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrendQuery {
    pub seed: u64,
    /// Fixed cluster count; a silhouette sweep when absent.
    pub k: Option<usize>,
    pub bin_days: Option<i64>,
}

impl TrendQuery {
    pub fn report_params(&self) -> ReportParams {
        let mut p = ReportParams::default();
        if let Some(k) = self.k {
            p.clusters = ClusterCount::Fixed(k);
        }
        if let Some(d) = self.bin_days {
            p.bin_days = d;
        }
        p
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SegregationReport {
    pub rater_kind: RaterKind,
    pub table: SegregationTable,
    pub designs: Vec<DesignSummary>,
}

#[derive(Default)]
struct Corpora {
    by_id: HashMap<String, Arc<Corpus>>,
    latest: Option<String>,
}

/// Components a [`Service`] is assembled from.
pub struct ServiceParts {
    pub artifacts: ArtifactStore,
    pub feedback: Arc<dyn FeedbackStore>,
    pub net: Arc<FeatureNet>,
    pub sr: Option<Arc<SRModel>>,
    pub runner: Arc<dyn Runner>,
    pub workers: usize,
}

pub struct Service {
    queue: JobQueue,
    artifacts: ArtifactStore,
    feedback: Arc<dyn FeedbackStore>,
    net: Arc<FeatureNet>,
    sr: Option<Arc<SRModel>>,
    corpora: Mutex<Corpora>,
    reports: Mutex<HashMap<(String, TrendQuery), Arc<TrendReport>>>,
    enhanced: Mutex<HashMap<(String, EnhanceRequest), EnhanceResult>>,
}

fn lock<T>(m: &Mutex<T>) -> MutexGuard<'_, T> {
    m.lock().unwrap_or_else(|e| e.into_inner())
}

/// Loads the feature network named by the config, or the seeded stand-in.
pub fn load_feature_net(config: &Config) -> ServiceResult<FeatureNet> {
    Ok(match &config.features.weights_path {
        Some(p) => FeatureNet::vgg19_from_file(p)?,
        None => {
            log::warn!("no features.weights_path configured; using the seeded random network");
            FeatureNet::vgg19_random(DEFAULT_NET_SEED)
        }
    })
}

impl Service {
    pub fn new(parts: ServiceParts) -> Self {
        Self {
            queue: JobQueue::new(parts.workers, parts.runner, parts.artifacts.clone()),
            artifacts: parts.artifacts,
            feedback: parts.feedback,
            net: parts.net,
            sr: parts.sr,
            corpora: Mutex::default(),
            reports: Mutex::default(),
            enhanced: Mutex::default(),
        }
    }

    /// Opens the artifact directory and feedback database under
    /// `config.data_dir` and loads both models.
    pub fn from_config(config: &Config) -> ServiceResult<Self> {
        std::fs::create_dir_all(&config.data_dir)?;
        let artifacts = ArtifactStore::open(config.data_dir.join("artifacts"))?;
        let feedback = Arc::new(SqliteStore::open(config.data_dir.join("feedback.sqlite"))?);
        let net = Arc::new(load_feature_net(config)?);
        let sr = match &config.superres.weights_path {
            Some(p) => Some(Arc::new(SRModel::load(p)?)),
            None => {
                log::warn!("no superres.weights_path configured; enhance is unavailable");
                None
            }
        };
        Ok(Self::new(ServiceParts {
            artifacts,
            feedback,
            runner: Arc::new(TransferRunner { net: Arc::clone(&net) }),
            net,
            sr,
            workers: config.queue.workers,
        }))
    }

    pub fn queue(&self) -> &JobQueue {
        &self.queue
    }

    pub fn artifacts(&self) -> &ArtifactStore {
        &self.artifacts
    }

    pub fn net(&self) -> &FeatureNet {
        &self.net
    }

    pub fn feedback(&self) -> &dyn FeedbackStore {
        self.feedback.as_ref()
    }

    pub fn has_superres(&self) -> bool {
        self.sr.is_some()
    }

    // ---- jobs -------------------------------------------------------------

    /// Validates the request, checks both images are readable and queues
    /// the job. All field problems are reported together.
    pub fn submit_job(&self, request: JobRequest) -> ServiceResult<String> {
        let params = request.params.apply(TransferParams::default());
        let mut problems: Vec<FieldError> = params
            .problems(&self.net)
            .into_iter()
            .map(|(field, message)| FieldError { field: format!("params.{field}"), message })
            .collect();
        let mut resolve = |field: &str, source: &ImageSource| match self.resolve_source(source) {
            Ok(p) => Some(p),
            Err(e) => {
                problems.push(FieldError { field: field.into(), message: e.to_string() });
                None
            }
        };
        let content = resolve("content", &request.content);
        let style = resolve("style", &request.style);
        match (content, style) {
            (Some(c), Some(s)) if problems.is_empty() => Ok(self.queue.submit(c, s, params)),
            _ => Err(ServiceError::Validation(problems)),
        }
    }

    pub fn job(&self, job_id: &str) -> ServiceResult<JobSnapshot> {
        self.queue.status(job_id)
    }

    pub fn jobs(&self) -> Vec<JobSnapshot> {
        self.queue.list()
    }

    fn resolve_source(&self, source: &ImageSource) -> ServiceResult<PathBuf> {
        let path = match source {
            ImageSource::Asset { asset_id } => self.artifacts.path(asset_id)?,
            ImageSource::Path { path } => path.clone(),
            ImageSource::Trend { corpus_id, cluster_id, seed } => {
                let report = self.trends(Some(corpus_id), &TrendQuery { seed: *seed, ..TrendQuery::default() })?;
                let cluster = report
                    .clusters
                    .iter()
                    .find(|c| c.cluster_id == *cluster_id)
                    .ok_or_else(|| ServiceError::NotFound(format!("cluster {cluster_id} in corpus `{corpus_id}`")))?;
                let exemplar = cluster
                    .exemplars
                    .first()
                    .ok_or_else(|| ServiceError::NotFound(format!("cluster {cluster_id} has no exemplar")))?;
                let corpus = self.corpus(corpus_id)?;
                let record = corpus
                    .records()
                    .iter()
                    .find(|r| &r.id == exemplar)
                    .expect("exemplar comes from the corpus");
                self.image_path(&record.image)
            }
        };
        std::fs::File::open(&path)
            .map_err(|e| ServiceError::NotFound(format!("image {}: {e}", path.display())))?;
        Ok(path)
    }

    /// An image reference is an artifact id or a filesystem path.
    pub fn image_path(&self, reference: &str) -> PathBuf {
        self.artifacts
            .path(reference)
            .unwrap_or_else(|_| PathBuf::from(reference))
    }

    /// Upscales a finished job's image. Repeat calls return the same asset.
    pub fn enhance(&self, job_id: &str, request: EnhanceRequest) -> ServiceResult<EnhanceResult> {
        let job = self.queue.status(job_id)?;
        let result = match (job.state, job.result) {
            (JobState::Done, Some(r)) => r,
            (state, _) => {
                return Err(ServiceError::Conflict(format!(
                    "job `{job_id}` is {}, not done",
                    serde_json::to_value(state).expect("enum").as_str().unwrap_or("?")
                )))
            }
        };
        let key = (job_id.to_string(), request);
        if let Some(hit) = lock(&self.enhanced).get(&key) {
            return Ok(hit.clone());
        }
        let config = SRConfig { factor: request.factor, denoise: request.denoise, weights_path: None };
        config
            .validate()
            .map_err(|e| ServiceError::field("factor", e.to_string()))?;
        let model = self
            .sr
            .as_ref()
            .ok_or_else(|| ServiceError::Unavailable("no super-resolution weights configured".into()))?;
        let image = ImageBuffer::decode(&self.artifacts.read(&result.image)?)?;
        let up = superres::upscale(&image, model, &config)?;
        let out = EnhanceResult {
            job_id: job_id.to_string(),
            asset_id: self.artifacts.put(&up.encode_png()?, "png")?,
            factor: request.factor,
            denoise: request.denoise,
            width: up.width(),
            height: up.height(),
        };
        lock(&self.enhanced).insert(key, out.clone());
        Ok(out)
    }

    // ---- images -----------------------------------------------------------

    /// Decodes an uploaded PNG or JPEG and stores it as PNG.
    pub fn upload_image(&self, bytes: &[u8]) -> ServiceResult<ImageUpload> {
        let image = ImageBuffer::decode(bytes).map_err(|e| ServiceError::field("file", e.to_string()))?;
        Ok(ImageUpload {
            asset_id: self.artifacts.put(&image.encode_png()?, "png")?,
            width: image.width(),
            height: image.height(),
        })
    }

    // ---- trends -----------------------------------------------------------

    /// Ingests JSONL feed records. Records without embeddings are embedded
    /// from their image, resolved against `base` when relative.
    pub fn ingest_corpus(&self, jsonl: &[u8], base: Option<&Path>) -> ServiceResult<CorpusInfo> {
        let records = trends::parse_jsonl(jsonl).map_err(|e| ServiceError::field("body", e.to_string()))?;
        let resolve = |reference: &str| {
            let p = self.image_path(reference);
            match base {
                Some(b) if p.is_relative() => b.join(p),
                _ => p,
            }
        };
        let (corpus, report) = trends::ingest(records, Some(self.net.as_ref()), |r| ImageBuffer::load(resolve(r)))?;
        Ok(self.register_corpus(corpus, report)?)
    }

    fn register_corpus(&self, corpus: Corpus, report: IngestReport) -> ServiceResult<CorpusInfo> {
        let mut buf = Vec::new();
        corpus.write_jsonl(&mut buf)?;
        let asset = self.artifacts.put(&buf, "jsonl")?;
        let corpus_id = asset.trim_end_matches(".jsonl").to_string();
        let info = CorpusInfo {
            corpus_id: corpus_id.clone(),
            records: corpus.len(),
            dim: corpus.dim(),
            skipped: report.skipped,
        };
        let mut corpora = lock(&self.corpora);
        corpora.by_id.insert(corpus_id.clone(), Arc::new(corpus));
        corpora.latest = Some(corpus_id);
        Ok(info)
    }

    /// A registered corpus, reloading it from the artifact store if needed.
    pub fn corpus(&self, corpus_id: &str) -> ServiceResult<Arc<Corpus>> {
        if let Some(c) = lock(&self.corpora).by_id.get(corpus_id) {
            return Ok(Arc::clone(c));
        }
        let missing = || ServiceError::NotFound(format!("corpus `{corpus_id}`"));
        let bytes = self.artifacts.read(&format!("{corpus_id}.jsonl")).map_err(|_| missing())?;
        let records = trends::parse_jsonl(bytes.as_slice())?;
        let (corpus, _) = trends::ingest(records, None, |_| Err(fastfashion_core::Error::NotFound("image".into())))?;
        let corpus = Arc::new(corpus);
        lock(&self.corpora).by_id.insert(corpus_id.to_string(), Arc::clone(&corpus));
        Ok(corpus)
    }

    /// Trend report for `corpus_id`, or for the most recent corpus.
    pub fn trends(&self, corpus_id: Option<&str>, query: &TrendQuery) -> ServiceResult<Arc<TrendReport>> {
        let id = match corpus_id {
            Some(id) => id.to_string(),
            None => lock(&self.corpora)
                .latest
                .clone()
                .ok_or_else(|| ServiceError::NotFound("no corpus has been ingested".into()))?,
        };
        let key = (id.clone(), *query);
        if let Some(r) = lock(&self.reports).get(&key) {
            return Ok(Arc::clone(r));
        }
        let corpus = self.corpus(&id)?;
        let report = Arc::new(trends::report(&corpus, &query.report_params(), query.seed)?);
        lock(&self.reports).insert(key, Arc::clone(&report));
        Ok(report)
    }

    // ---- feedback ---------------------------------------------------------

    pub fn register_design(&self, design: DesignRecord) -> ServiceResult<DesignRecord> {
        if design.design_id.trim().is_empty() {
            return Err(ServiceError::field("design_id", "must not be empty"));
        }
        self.feedback.register_design(&design)?;
        Ok(design)
    }

    pub fn submit_rating(&self, rating: Rating) -> ServiceResult<Rating> {
        rating.validate()?;
        if rating.rater_id.trim().is_empty() {
            return Err(ServiceError::field("rater_id", "must not be empty"));
        }
        self.feedback.submit_rating(&rating)?;
        Ok(rating)
    }

    pub fn segregation(&self, kind: RaterKind) -> ServiceResult<SegregationReport> {
        let designs = feedback::summaries(self.feedback.as_ref(), kind)?;
        if designs.is_empty() {
            return Err(ServiceError::NotFound("no designs registered".into()));
        }
        let mut table = SegregationTable::default();
        designs.iter().for_each(|d| table.add(d.cell));
        Ok(SegregationReport { rater_kind: kind, table, designs })
    }
}
