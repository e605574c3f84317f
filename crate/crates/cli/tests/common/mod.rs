#![allow(dead_code)]

use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use fastfashion_cli::artifacts::ArtifactStore;
use fastfashion_cli::queue::{JobInput, Runner};
use fastfashion_cli::queue::TransferRunner;
use fastfashion_cli::service::ServiceParts;
use fastfashion_cli::{JobState, Service};
use fastfashion_core::features::Block;
use fastfashion_core::{FeatureNet, GenerationResult, ImageBuffer, SRModel, SqliteStore, TraceEntry};
use serde_json::{json, Value};
use tempfile::TempDir;

/// Two 3x3 convolutions with a pool in between.
pub fn toy_net() -> FeatureNet {
    FeatureNet::random(
        &[
            Block::Conv { name: "c1".into(), out_channels: 4 },
            Block::Pool,
            Block::Conv { name: "c2".into(), out_channels: 6 },
        ],
        3,
    )
    .unwrap()
}

/// Parameter overrides that fit [`toy_net`].
pub fn toy_params(iterations: usize, size: usize) -> Value {
    json!({
        "iterations": iterations,
        "working_size": size,
        "content_layers": ["c2"],
        "style_layers": [{"layer": "c1", "weight": 0.5}, {"layer": "c2", "weight": 0.5}],
    })
}

pub fn pattern(size: usize, phase: f64) -> ImageBuffer {
    ImageBuffer::from_fn(size, size, |x, y| {
        let u = x as f64 / size as f64;
        let v = y as f64 / size as f64;
        [
            0.5 + 0.4 * (6.0 * u + phase).sin(),
            0.5 + 0.4 * (9.0 * v - phase).cos(),
            0.5 + 0.3 * (4.0 * (u + v) + 2.0 * phase).sin(),
        ]
    })
    .unwrap()
}

pub fn write_png(dir: &Path, name: &str, image: &ImageBuffer) -> std::path::PathBuf {
    let path = dir.join(name);
    image.save_png(&path).unwrap();
    path
}

pub struct Harness {
    pub service: Arc<Service>,
    pub dir: TempDir,
}

pub fn harness(workers: usize, runner: Option<Arc<dyn Runner>>, sr: Option<SRModel>) -> Harness {
    let dir = tempfile::tempdir().unwrap();
    let net = Arc::new(toy_net());
    let runner = runner.unwrap_or_else(|| Arc::new(TransferRunner { net: Arc::clone(&net) }));
    let service = Service::new(ServiceParts {
        artifacts: ArtifactStore::open(dir.path().join("artifacts")).unwrap(),
        feedback: Arc::new(SqliteStore::in_memory().unwrap()),
        net,
        sr: sr.map(Arc::new),
        runner,
        workers,
    });
    Harness { service: Arc::new(service), dir }
}

/// A tiny successful result with a two-step trace.
pub fn tiny_result(input: &JobInput) -> GenerationResult {
    GenerationResult {
        image: ImageBuffer::filled(4, 4, [0.2, 0.4, 0.6]).unwrap(),
        loss_trace: vec![
            TraceEntry { iteration: 0, total: 2.0, content: 1.0, style: 1.0 },
            TraceEntry { iteration: 1, total: 1.0, content: 0.5, style: 0.5 },
        ],
        params: input.params.clone(),
    }
}

/// Records start order and peak concurrency; each job sleeps briefly.
#[derive(Default)]
pub struct RecordingRunner {
    pub delay: Duration,
    pub started: Mutex<Vec<String>>,
    pub running: AtomicUsize,
    pub peak: AtomicUsize,
}

impl Runner for RecordingRunner {
    fn run(&self, input: &JobInput, progress: &mut dyn FnMut(TraceEntry)) -> fastfashion_core::Result<GenerationResult> {
        self.started.lock().unwrap().push(input.job_id.clone());
        let now = self.running.fetch_add(1, Ordering::SeqCst) + 1;
        self.peak.fetch_max(now, Ordering::SeqCst);
        std::thread::sleep(self.delay);
        let result = tiny_result(input);
        result.loss_trace.iter().for_each(|e| progress(*e));
        self.running.fetch_sub(1, Ordering::SeqCst);
        Ok(result)
    }
}

/// Blocks every job after its first progress report until opened.
#[derive(Default)]
pub struct GateRunner {
    open: Mutex<bool>,
    cv: Condvar,
}

impl GateRunner {
    pub fn open(&self) {
        *self.open.lock().unwrap() = true;
        self.cv.notify_all();
    }
}

impl Runner for GateRunner {
    fn run(&self, input: &JobInput, progress: &mut dyn FnMut(TraceEntry)) -> fastfashion_core::Result<GenerationResult> {
        let result = tiny_result(input);
        progress(result.loss_trace[0]);
        let mut open = self.open.lock().unwrap();
        while !*open {
            open = self.cv.wait(open).unwrap();
        }
        Ok(result)
    }
}

/// Polls until the job reaches `state`, panicking after `timeout`.
pub fn wait_state(service: &Service, job_id: &str, state: JobState, timeout: Duration) {
    let deadline = Instant::now() + timeout;
    loop {
        let snap = service.job(job_id).unwrap();
        if snap.state == state {
            return;
        }
        assert!(Instant::now() < deadline, "{job_id} stuck in {:?}, wanted {state:?}", snap.state);
        std::thread::sleep(Duration::from_millis(5));
    }
}

/// Checks `value` against the published schema `name`.
pub fn assert_schema(name: &str, value: &Value) {
    let text = fastfashion_cli::schemas::get(name).unwrap_or_else(|| panic!("no schema {name}"));
    let schema: Value = serde_json::from_str(text).unwrap();
    let validator = jsonschema::validator_for(&schema).unwrap_or_else(|e| panic!("schema {name}: {e}"));
    let errors: Vec<String> = validator.iter_errors(value).map(|e| format!("{} at {}", e, e.instance_path)).collect();
    assert!(errors.is_empty(), "{name} schema violations: {errors:#?}\n{value:#}");
}
