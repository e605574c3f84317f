//! FIFO job queue with a fixed pool of worker threads.
//!
//! Jobs move `queued -> running -> done | failed` and every transition is
//! appended to an event log. Workers take jobs strictly in submission order;
//! at most `capacity` run at once. Running jobs expose their partial loss
//! trace through [`JobQueue::status`].

use std::collections::{HashMap, VecDeque};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex, MutexGuard};
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use fastfashion_core::transfer::{self, write_trace_csv};
use fastfashion_core::{FeatureNet, GenerationResult, ImageBuffer, TraceEntry, TransferConfig, TransferParams};
use serde::{Deserialize, Serialize};

use crate::artifacts::ArtifactStore;
use crate::error::{ServiceError, ServiceResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum JobState {
    Queued,
    Running,
    Done,
    Failed,
}

impl JobState {
    pub fn can_become(self, next: JobState) -> bool {
        matches!(
            (self, next),
            (JobState::Queued, JobState::Running)
                | (JobState::Running, JobState::Done)
                | (JobState::Running, JobState::Failed)
        )
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, JobState::Done | JobState::Failed)
    }
}

/// Everything a runner needs for one job.
#[derive(Debug, Clone)]
pub struct JobInput {
    pub job_id: String,
    pub content: PathBuf,
    pub style: PathBuf,
    pub params: TransferParams,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobResult {
    /// Artifact id of the generated PNG.
    pub image: String,
    /// Artifact id of the loss trace CSV.
    pub trace_csv: String,
    pub width: usize,
    pub height: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobSnapshot {
    pub job_id: String,
    pub state: JobState,
    /// Submission order, starting at 1.
    pub sequence: u64,
    pub submitted_at: DateTime<Utc>,
    pub started_at: Option<DateTime<Utc>>,
    pub finished_at: Option<DateTime<Utc>>,
    pub params: TransferParams,
    /// Accepted optimizer steps so far.
    pub trace: Vec<TraceEntry>,
    pub result: Option<JobResult>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JobEvent {
    pub seq: u64,
    pub job_id: String,
    pub from: Option<JobState>,
    pub to: JobState,
    pub at: DateTime<Utc>,
}

/// Executes one generation job. `progress` receives each accepted step.
pub trait Runner: Send + Sync + 'static {
    fn run(&self, input: &JobInput, progress: &mut dyn FnMut(TraceEntry)) -> fastfashion_core::Result<GenerationResult>;
}

/// The production runner: loads both images and runs style transfer.
pub struct TransferRunner {
    pub net: Arc<FeatureNet>,
}

impl Runner for TransferRunner {
    fn run(&self, input: &JobInput, progress: &mut dyn FnMut(TraceEntry)) -> fastfashion_core::Result<GenerationResult> {
        let config = TransferConfig {
            content: ImageBuffer::load(&input.content)?,
            style: ImageBuffer::load(&input.style)?,
            params: input.params.clone(),
        };
        transfer::run_transfer_observed(&self.net, &config, |e| progress(*e))
    }
}

struct Entry {
    snapshot: JobSnapshot,
    input: JobInput,
}

#[derive(Default)]
struct Inner {
    jobs: HashMap<String, Entry>,
    pending: VecDeque<String>,
    running: usize,
    events: Vec<JobEvent>,
    submitted: u64,
    shutdown: bool,
}

impl Inner {
    fn transition(&mut self, id: &str, to: JobState) {
        let entry = self.jobs.get_mut(id).expect("known job");
        let from = entry.snapshot.state;
        assert!(from.can_become(to), "illegal transition {from:?} -> {to:?} for {id}");
        entry.snapshot.state = to;
        let now = Utc::now();
        match to {
            JobState::Running => entry.snapshot.started_at = Some(now),
            JobState::Done | JobState::Failed => entry.snapshot.finished_at = Some(now),
            JobState::Queued => {}
        }
        let seq = self.events.len() as u64 + 1;
        self.events.push(JobEvent {
            seq,
            job_id: id.to_string(),
            from: Some(from),
            to,
            at: now,
        });
    }
}

struct Shared {
    inner: Mutex<Inner>,
    changed: Condvar,
    runner: Arc<dyn Runner>,
    artifacts: ArtifactStore,
}

impl Shared {
    fn lock(&self) -> MutexGuard<'_, Inner> {
        self.inner.lock().unwrap_or_else(|e| e.into_inner())
    }
}

pub struct JobQueue {
    shared: Arc<Shared>,
    workers: Mutex<Vec<JoinHandle<()>>>,
    capacity: usize,
}

/// Default worker count: available cores minus one, at least one.
pub fn default_workers() -> usize {
    std::thread::available_parallelism()
        .map(|n| n.get().saturating_sub(1))
        .unwrap_or(1)
        .max(1)
}

impl JobQueue {
    pub fn new(capacity: usize, runner: Arc<dyn Runner>, artifacts: ArtifactStore) -> Self {
        let capacity = capacity.max(1);
        let shared = Arc::new(Shared {
            inner: Mutex::new(Inner::default()),
            changed: Condvar::new(),
            runner,
            artifacts,
        });
        let workers = (0..capacity)
            .map(|i| {
                let shared = Arc::clone(&shared);
                std::thread::Builder::new()
                    .name(format!("job-worker-{i}"))
                    .spawn(move || worker_loop(&shared))
                    .expect("spawn worker thread")
            })
            .collect();
        Self {
            shared,
            workers: Mutex::new(workers),
            capacity,
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn artifacts(&self) -> &ArtifactStore {
        &self.shared.artifacts
    }

    /// Enqueues a job and returns its id without waiting.
    pub fn submit(&self, content: PathBuf, style: PathBuf, params: TransferParams) -> String {
        let mut inner = self.shared.lock();
        inner.submitted += 1;
        let sequence = inner.submitted;
        let job_id = format!("job-{sequence:06}");
        let now = Utc::now();
        inner.jobs.insert(
            job_id.clone(),
            Entry {
                snapshot: JobSnapshot {
                    job_id: job_id.clone(),
                    state: JobState::Queued,
                    sequence,
                    submitted_at: now,
                    started_at: None,
                    finished_at: None,
                    params: params.clone(),
                    trace: Vec::new(),
                    result: None,
                    error: None,
                },
                input: JobInput {
                    job_id: job_id.clone(),
                    content,
                    style,
                    params,
                },
            },
        );
        let seq = inner.events.len() as u64 + 1;
        inner.events.push(JobEvent {
            seq,
            job_id: job_id.clone(),
            from: None,
            to: JobState::Queued,
            at: now,
        });
        inner.pending.push_back(job_id.clone());
        drop(inner);
        self.shared.changed.notify_all();
        job_id
    }

    pub fn status(&self, job_id: &str) -> ServiceResult<JobSnapshot> {
        self.shared
            .lock()
            .jobs
            .get(job_id)
            .map(|e| e.snapshot.clone())
            .ok_or_else(|| ServiceError::NotFound(format!("job `{job_id}`")))
    }

    /// All jobs in submission order.
    pub fn list(&self) -> Vec<JobSnapshot> {
        let mut jobs: Vec<JobSnapshot> = self.shared.lock().jobs.values().map(|e| e.snapshot.clone()).collect();
        jobs.sort_by_key(|j| j.sequence);
        jobs
    }

    pub fn events(&self) -> Vec<JobEvent> {
        self.shared.lock().events.clone()
    }

    /// Blocks until no job is queued or running, or the timeout passes.
    /// Returns whether the queue drained.
    pub fn wait_idle(&self, timeout: Duration) -> bool {
        let deadline = Instant::now() + timeout;
        let mut inner = self.shared.lock();
        while !(inner.pending.is_empty() && inner.running == 0) {
            let left = deadline.saturating_duration_since(Instant::now());
            if left.is_zero() {
                return false;
            }
            inner = self
                .shared
                .changed
                .wait_timeout(inner, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
        true
    }

    /// Blocks until `job_id` is done or failed, or the timeout passes.
    pub fn wait_for(&self, job_id: &str, timeout: Duration) -> ServiceResult<JobSnapshot> {
        let deadline = Instant::now() + timeout;
        let mut inner = self.shared.lock();
        loop {
            let snap = inner
                .jobs
                .get(job_id)
                .map(|e| e.snapshot.clone())
                .ok_or_else(|| ServiceError::NotFound(format!("job `{job_id}`")))?;
            let left = deadline.saturating_duration_since(Instant::now());
            if snap.state.is_terminal() || left.is_zero() {
                return Ok(snap);
            }
            inner = self
                .shared
                .changed
                .wait_timeout(inner, left)
                .unwrap_or_else(|e| e.into_inner())
                .0;
        }
    }

    /// Stops accepting work from the queue once running jobs finish and
    /// joins the workers. Jobs still queued stay queued.
    pub fn shutdown(&self) {
        self.shared.lock().shutdown = true;
        self.shared.changed.notify_all();
        let handles: Vec<_> = std::mem::take(&mut *self.workers.lock().unwrap_or_else(|e| e.into_inner()));
        for h in handles {
            let _ = h.join();
        }
    }
}

impl Drop for JobQueue {
    fn drop(&mut self) {
        self.shutdown();
    }
}

fn worker_loop(shared: &Shared) {
    loop {
        let input = {
            let mut inner = shared.lock();
            loop {
                if inner.shutdown {
                    return;
                }
                if let Some(id) = inner.pending.pop_front() {
                    inner.transition(&id, JobState::Running);
                    inner.running += 1;
                    break inner.jobs[&id].input.clone();
                }
                inner = shared.changed.wait(inner).unwrap_or_else(|e| e.into_inner());
            }
        };
        shared.changed.notify_all();

        let mut progress = |entry: TraceEntry| {
            if let Some(e) = shared.lock().jobs.get_mut(&input.job_id) {
                e.snapshot.trace.push(entry);
            }
        };
        let outcome = catch_unwind(AssertUnwindSafe(|| shared.runner.run(&input, &mut progress)))
            .unwrap_or_else(|_| {
                Err(fastfashion_core::Error::Argument("runner panicked".into()))
            })
            .map_err(|e| format!("{}: {e}", e.kind()))
            .and_then(|result| store_result(&shared.artifacts, &result).map(|r| (r, result.loss_trace)));

        let mut inner = shared.lock();
        inner.running -= 1;
        match outcome {
            Ok((result, trace)) => {
                let entry = inner.jobs.get_mut(&input.job_id).expect("known job");
                entry.snapshot.result = Some(result);
                entry.snapshot.trace = trace;
                inner.transition(&input.job_id, JobState::Done);
            }
            Err(message) => {
                log::warn!("{} failed: {message}", input.job_id);
                inner.jobs.get_mut(&input.job_id).expect("known job").snapshot.error = Some(message);
                inner.transition(&input.job_id, JobState::Failed);
            }
        }
        drop(inner);
        shared.changed.notify_all();
    }
}

fn store_result(artifacts: &ArtifactStore, result: &GenerationResult) -> Result<JobResult, String> {
    let png = result.image.encode_png().map_err(|e| format!("{}: {e}", e.kind()))?;
    let mut csv = Vec::new();
    write_trace_csv(&mut csv, &result.loss_trace).map_err(|e| format!("{}: {e}", e.kind()))?;
    Ok(JobResult {
        image: artifacts.put(&png, "png").map_err(|e| e.to_string())?,
        trace_csv: artifacts.put(&csv, "csv").map_err(|e| e.to_string())?,
        width: result.image.width(),
        height: result.image.height(),
    })
}
