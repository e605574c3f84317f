mod common;

use std::collections::{BTreeMap, HashSet};
use std::path::PathBuf;
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::Duration;

use common::*;
use fastfashion_cli::artifacts::ArtifactStore;
use fastfashion_cli::queue::{JobEvent, JobInput, Runner};
use fastfashion_cli::{JobQueue, JobState};
use fastfashion_core::{GenerationResult, TraceEntry, TransferParams};

fn queue(workers: usize, runner: Arc<dyn Runner>) -> (JobQueue, tempfile::TempDir) {
    let dir = tempfile::tempdir().unwrap();
    let store = ArtifactStore::open(dir.path()).unwrap();
    (JobQueue::new(workers, runner, store), dir)
}

fn submit(q: &JobQueue) -> String {
    q.submit(PathBuf::from("c.png"), PathBuf::from("s.png"), TransferParams::default())
}

/// Replays the event log per job and checks every step is legal and every
/// job reaches exactly one terminal state.
fn audit(events: &[JobEvent], expected_jobs: usize) {
    for (i, e) in events.iter().enumerate() {
        assert_eq!(e.seq, i as u64 + 1, "event sequence has gaps");
    }
    let mut state: BTreeMap<&str, JobState> = BTreeMap::new();
    for e in events {
        match (e.from, state.get(e.job_id.as_str()).copied()) {
            (None, None) => assert_eq!(e.to, JobState::Queued),
            (Some(from), Some(current)) => {
                assert_eq!(from, current, "event for {} starts from a stale state", e.job_id);
                assert!(from.can_become(e.to), "illegal {from:?} -> {:?}", e.to);
            }
            other => panic!("inconsistent event {e:?} ({other:?})"),
        }
        state.insert(&e.job_id, e.to);
    }
    assert_eq!(state.len(), expected_jobs);
    assert!(state.values().all(|s| s.is_terminal()));
}

#[test]
fn second_job_waits_for_the_only_worker() {
    let gate = Arc::new(GateRunner::default());
    let (q, _dir) = queue(1, gate.clone());
    let first = submit(&q);
    let second = submit(&q);
    let deadline = std::time::Instant::now() + Duration::from_secs(10);
    while q.status(&first).unwrap().state != JobState::Running {
        assert!(std::time::Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(2));
    }
    // The gate holds the first job; nothing may start the second.
    std::thread::sleep(Duration::from_millis(50));
    assert_eq!(q.status(&second).unwrap().state, JobState::Queued);
    assert!(q.status(&second).unwrap().started_at.is_none());

    gate.open();
    assert!(q.wait_idle(Duration::from_secs(10)));
    let events = q.events();
    let pos = |id: &str, to: JobState| events.iter().position(|e| e.job_id == id && e.to == to).unwrap();
    assert!(pos(&first, JobState::Done) < pos(&second, JobState::Running));
    audit(&events, 2);
}

#[test]
fn running_job_exposes_partial_trace() {
    let gate = Arc::new(GateRunner::default());
    let (q, _dir) = queue(1, gate.clone());
    let id = submit(&q);
    let deadline = std::time::Instant::now() + Duration::from_secs(10);
    loop {
        let snap = q.status(&id).unwrap();
        if snap.state == JobState::Running && !snap.trace.is_empty() {
            assert!(snap.result.is_none());
            break;
        }
        assert!(std::time::Instant::now() < deadline);
        std::thread::sleep(Duration::from_millis(2));
    }
    gate.open();
    let done = q.wait_for(&id, Duration::from_secs(10)).unwrap();
    assert_eq!(done.state, JobState::Done);
    assert_eq!(done.trace.len(), 2);
    let result = done.result.unwrap();
    assert_eq!((result.width, result.height), (4, 4));
    let csv = String::from_utf8(q.artifacts().read(&result.trace_csv).unwrap()).unwrap();
    assert!(csv.starts_with("iteration,total,content,style\n"));
}

#[test]
fn hundred_concurrent_submissions_two_workers() {
    let runner = Arc::new(RecordingRunner { delay: Duration::from_millis(3), ..Default::default() });
    let (q, _dir) = queue(2, runner.clone());
    let q = Arc::new(q);
    let ids: Vec<String> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..10)
            .map(|_| {
                let q = Arc::clone(&q);
                s.spawn(move || (0..10).map(|_| submit(&q)).collect::<Vec<_>>())
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().unwrap()).collect()
    });
    assert!(q.wait_idle(Duration::from_secs(60)));

    let unique: HashSet<&String> = ids.iter().collect();
    assert_eq!(unique.len(), 100, "duplicate job ids");
    let jobs = q.list();
    assert_eq!(jobs.len(), 100);
    assert!(jobs.iter().all(|j| j.state == JobState::Done && j.result.is_some()));

    let started = runner.started.lock().unwrap().clone();
    assert_eq!(started.len(), 100, "a job ran twice or never");
    assert_eq!(started.iter().collect::<HashSet<_>>().len(), 100);
    // FIFO: Running events are logged as jobs leave the pending queue.
    let events = q.events();
    let dispatched: Vec<&str> = events.iter().filter(|e| e.to == JobState::Running).map(|e| e.job_id.as_str()).collect();
    let by_sequence: Vec<&str> = jobs.iter().map(|j| j.job_id.as_str()).collect();
    assert_eq!(dispatched, by_sequence);
    assert!(runner.peak.load(Ordering::SeqCst) <= 2);
    audit(&events, 100);
}

struct FailingRunner;

impl Runner for FailingRunner {
    fn run(&self, input: &JobInput, progress: &mut dyn FnMut(TraceEntry)) -> fastfashion_core::Result<GenerationResult> {
        if input.job_id.ends_with('1') {
            panic!("boom");
        }
        progress(TraceEntry { iteration: 0, total: 1.0, content: 0.5, style: 0.5 });
        Err(fastfashion_core::Error::Numerical { iteration: 1, trace: Vec::new() })
    }
}

#[test]
fn failures_and_panics_become_failed_jobs() {
    let (q, _dir) = queue(1, Arc::new(FailingRunner));
    let panicking = submit(&q);
    let erroring = submit(&q);
    assert!(q.wait_idle(Duration::from_secs(10)));
    let p = q.status(&panicking).unwrap();
    assert_eq!(p.state, JobState::Failed);
    assert!(p.result.is_none() && p.error.is_some());
    let e = q.status(&erroring).unwrap();
    assert_eq!(e.state, JobState::Failed);
    assert!(e.error.unwrap().starts_with("numerical_error"));
    // Partial progress survives a failure.
    assert_eq!(e.trace.len(), 1);
    audit(&q.events(), 2);
}

#[test]
fn corrupt_style_image_fails_the_job() {
    let h = harness(1, None, None);
    let content = write_png(h.dir.path(), "c.png", &pattern(32, 0.0));
    let style = h.dir.path().join("s.png");
    std::fs::write(&style, b"definitely not a png").unwrap();
    let params = serde_json::from_value::<fastfashion_cli::service::ParamOverrides>(toy_params(2, 32)).unwrap();
    let id = h
        .service
        .submit_job(fastfashion_cli::service::JobRequest {
            content: fastfashion_cli::service::ImageSource::Path { path: content },
            style: fastfashion_cli::service::ImageSource::Path { path: style },
            params,
        })
        .unwrap();
    let snap = h.service.queue().wait_for(&id, Duration::from_secs(30)).unwrap();
    assert_eq!(snap.state, JobState::Failed);
    assert!(snap.error.unwrap().contains("codec"));
}

#[test]
fn unknown_job_is_not_found() {
    let (q, _dir) = queue(1, Arc::new(RecordingRunner::default()));
    assert_eq!(q.status("job-999999").unwrap_err().status(), 404);
}

#[test]
fn shutdown_leaves_queued_jobs_queued() {
    let gate = Arc::new(GateRunner::default());
    let (q, _dir) = queue(1, gate.clone());
    let first = submit(&q);
    let second = submit(&q);
    while q.status(&first).unwrap().state != JobState::Running {
        std::thread::sleep(Duration::from_millis(2));
    }
    let opener = {
        let gate = gate.clone();
        std::thread::spawn(move || {
            std::thread::sleep(Duration::from_millis(50));
            gate.open();
        })
    };
    q.shutdown();
    opener.join().unwrap();
    assert_eq!(q.status(&first).unwrap().state, JobState::Done);
    assert_eq!(q.status(&second).unwrap().state, JobState::Queued);
}
