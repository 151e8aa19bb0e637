use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use narrata::harness::{Completion, CompletionRequest, ModelProvider, ProviderError, RunLog};
use narrata::manifest::{build_providers, execute_manifest, ExecuteOptions, Manifest};

const DESK: &str = include_str!("../../../manifests/desk.toml");

/// Passes the first `budget` requests through, then times out.
struct Interrupt {
    inner: Arc<dyn ModelProvider>,
    budget: usize,
    calls: AtomicUsize,
}

impl ModelProvider for Interrupt {
    fn name(&self) -> &str {
        "interrupt"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        if self.calls.fetch_add(1, Ordering::SeqCst) < self.budget {
            self.inner.complete(request)
        } else {
            Err(ProviderError::Timeout("cut off".into()))
        }
    }
}

#[test]
fn resume_runs_exactly_the_remaining_half() {
    let dir = tempfile::tempdir().unwrap();
    let mut m = Manifest::from_toml(DESK, dir.path()).unwrap();
    m.parallelism = 1;
    m.retry.max_retries = 0;
    m.retry.base_delay_ms = 0;
    let pool = m.load_pool().unwrap();
    let real = build_providers(&m, &pool).unwrap();
    let planned: BTreeSet<String> = m.planned_runs().iter().map(|c| c.run_id()).collect();
    assert_eq!(planned.len(), 138);

    // one provider shared by both models, cut off after half the runs
    let cut = Arc::new(Interrupt {
        inner: real.values().next().unwrap().clone(),
        budget: 69,
        calls: AtomicUsize::new(0),
    });
    let flaky: BTreeMap<String, Arc<dyn ModelProvider>> =
        real.keys().map(|k| (k.clone(), cut.clone() as Arc<dyn ModelProvider>)).collect();
    fs::create_dir_all(m.run_log_path().parent().unwrap()).unwrap();
    let log = RunLog::open(m.run_log_path()).unwrap();
    let first = execute_manifest(&m, &flaky, &pool, &log, ExecuteOptions::default()).unwrap();
    assert_eq!(first.executed, 69);
    assert_eq!(first.failed.len(), 69);
    let done: BTreeSet<String> = RunLog::read(m.run_log_path()).unwrap().into_iter().map(|r| r.run_id).collect();
    let remaining: BTreeSet<String> = planned.difference(&done).cloned().collect();
    assert_eq!(remaining.len(), 69);
    let failed: BTreeSet<String> = first.failed.iter().map(|(id, _)| id.clone()).collect();
    assert_eq!(failed, remaining);
    drop(log);

    // a fresh process reopens the log
    let log = RunLog::open(m.run_log_path()).unwrap();
    let resume = ExecuteOptions {
        resume: true,
        ..ExecuteOptions::default()
    };
    let second = execute_manifest(&m, &real, &pool, &log, resume).unwrap();
    assert_eq!((second.skipped, second.executed), (69, 69));
    assert!(second.is_complete());
    let records = RunLog::read(m.run_log_path()).unwrap();
    let ids: Vec<String> = records.iter().map(|r| r.run_id.clone()).collect();
    assert_eq!(ids.len(), 138);
    assert_eq!(ids.iter().cloned().collect::<BTreeSet<_>>(), planned);

    // idempotent
    let third = execute_manifest(&m, &real, &pool, &log, resume).unwrap();
    assert_eq!(third.executed, 0);
    assert_eq!(RunLog::read(m.run_log_path()).unwrap().len(), 138);
}

#[test]
fn seed_override_changes_runs_but_not_ids() {
    let m = Manifest::from_toml(DESK, "").unwrap();
    let pool = m.load_pool().unwrap();
    let providers = build_providers(&m, &pool).unwrap();
    let a = RunLog::in_memory();
    let b = RunLog::in_memory();
    execute_manifest(&m, &providers, &pool, &a, ExecuteOptions::default()).unwrap();
    let opts = ExecuteOptions {
        seed: Some(99),
        ..ExecuteOptions::default()
    };
    execute_manifest(&m, &providers, &pool, &b, opts).unwrap();
    assert_eq!(a.run_ids(), b.run_ids());
    assert_ne!(
        a.records().iter().map(|r| r.selections.clone()).collect::<Vec<_>>(),
        b.records().iter().map(|r| r.selections.clone()).collect::<Vec<_>>()
    );
}
