//! Declarative experiment manifests and their execution.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::condition::TaskCondition;
use crate::harness::{
    derive_run_seed, execute_run, CassetteMode, CassetteProvider, Completion, CompletionRequest, Decoding,
    LiveProvider, LogError, ModelProvider, ParseOptions, Persona, ProviderError, RetryPolicy, RunConfig, RunLog,
    RunOptions, Vendor,
};
use crate::library::{load_library, Category, ConstraintPool, Element, LibraryError};
use crate::par;
use crate::permutation::EnrichmentBaseline;
use crate::reasoning::PhraseOptions;
use crate::stats::{CorrKind, OffsetKind, SeKind};
use crate::synthetic::{profile_from_rates, SamplerOptions, Scheme, SyntheticAuthor, SyntheticError};

pub const MANIFEST_SCHEMA: u32 = 1;

#[derive(Debug, Error)]
pub enum ManifestError {
    #[error("reading {path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("manifest syntax: {0}")]
    Syntax(String),
    #[error("manifest schema version {found}, this build reads {MANIFEST_SCHEMA}")]
    Schema { found: u32 },
    #[error("invalid manifest: {0}")]
    Invalid(String),
    #[error("constraint library: {0}")]
    Library(#[from] LibraryError),
    #[error("run log: {0}")]
    Log(#[from] LogError),
    #[error("provider `{name}`: {reason}")]
    Provider { name: String, reason: String },
    #[error("run log {0} already has records; pass --resume to continue it")]
    LogNotEmpty(PathBuf),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub experiment_id: String,
    pub seed: u64,
    #[serde(default = "default_parallelism")]
    pub parallelism: usize,
    /// Constraint library TSV; the bundled library when absent.
    #[serde(default)]
    pub library: Option<PathBuf>,
    #[serde(default)]
    pub output: OutputSpec,
    #[serde(default)]
    pub decoding: Decoding,
    #[serde(default)]
    pub retry: RetryPolicy,
    #[serde(default)]
    pub parse: ParseOptions,
    #[serde(default = "all_personas")]
    pub personas: Vec<Persona>,
    #[serde(default)]
    pub stages: Stages,
    pub models: Vec<ModelSpec>,
    #[serde(default)]
    pub providers: BTreeMap<String, ProviderSpec>,
    #[serde(default)]
    pub analysis: AnalysisSpec,
    /// Directory holding the manifest; relative paths resolve against it.
    #[serde(skip)]
    pub base_dir: PathBuf,
}

fn default_parallelism() -> usize {
    1
}

fn all_personas() -> Vec<Persona> {
    Persona::ALL.to_vec()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSpec {
    pub run_log: PathBuf,
    pub report_dir: PathBuf,
}

impl Default for OutputSpec {
    fn default() -> Self {
        Self {
            run_log: "runs.jsonl".into(),
            report_dir: "report".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Stage {
    pub conditions: Vec<TaskCondition>,
    pub replications: u32,
}

/// Stage 1 covers every condition; stage 2 adds replications of selected
/// conditions, continuing their replication indices.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Stages {
    pub stage1: Stage,
    pub stage2: Stage,
}

impl Default for Stages {
    fn default() -> Self {
        Self {
            stage1: Stage {
                conditions: TaskCondition::ALL.to_vec(),
                replications: 30,
            },
            stage2: Stage {
                conditions: vec![TaskCondition::C2_2],
                replications: 160,
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    /// Label used in run ids and tables.
    pub label: String,
    /// Key into `providers`.
    pub provider: String,
    /// Vendor model identifier; defaults to the label.
    #[serde(default)]
    pub model: Option<String>,
    /// Extra decoding fields merged over the manifest decoding.
    #[serde(default)]
    pub decoding_extra: BTreeMap<String, serde_json::Value>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase", deny_unknown_fields)]
pub enum ProviderSpec {
    /// Offline author drawing from rate ratios.
    Synthetic {
        #[serde(default)]
        element_rr: BTreeMap<Element, f64>,
        #[serde(default)]
        category_rr: BTreeMap<Category, f64>,
        #[serde(default = "event")]
        baseline: Element,
        #[serde(default)]
        scheme: Scheme,
        #[serde(default)]
        free_pooled: Option<(usize, usize)>,
        #[serde(default)]
        free_per_element: Option<(usize, usize)>,
    },
    /// Vendor HTTP API, optionally behind a cassette.
    Live {
        vendor: Vendor,
        #[serde(default)]
        base_url: Option<String>,
        #[serde(default = "default_timeout")]
        timeout_s: u64,
        #[serde(default)]
        cassette: Option<CassetteSpec>,
    },
    /// Recorded responses only.
    Replay { dir: PathBuf },
}

fn event() -> Element {
    Element::Event
}

fn default_timeout() -> u64 {
    120
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CassetteSpec {
    pub dir: PathBuf,
    pub mode: CassetteMode,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EmbedderKind {
    Hashing,
    Openai,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AnalysisSpec {
    pub elements: bool,
    pub categories: bool,
    pub conditions: bool,
    pub axes: bool,
    pub network: bool,
    pub reasoning: bool,
    pub include_invalid: bool,
    pub q_threshold: f64,
    pub delta_floor: f64,
    pub corr: CorrKind,
    pub offset: OffsetKind,
    pub se: SeKind,
    pub permutation_replicates: usize,
    pub permutation_q: f64,
    pub fallback_p: f64,
    pub degenerate_min_runs: usize,
    pub enrichment_baseline: EnrichmentBaseline,
    pub top_axes: usize,
    pub network_top_k: usize,
    pub spearman_replicates: usize,
    pub embedder: EmbedderKind,
    pub embedding_dim: usize,
    pub embedding_model: Option<String>,
    pub embedding_cache: Option<PathBuf>,
    pub phrases: PhraseOptions,
}

impl Default for AnalysisSpec {
    fn default() -> Self {
        Self {
            elements: true,
            categories: true,
            conditions: true,
            axes: true,
            network: true,
            reasoning: true,
            include_invalid: false,
            q_threshold: 0.05,
            delta_floor: 10.0,
            corr: CorrKind::Exchangeable,
            offset: OffsetKind::LogK,
            se: SeKind::Cr0,
            permutation_replicates: 2000,
            permutation_q: 0.10,
            fallback_p: 0.05,
            degenerate_min_runs: 5,
            enrichment_baseline: EnrichmentBaseline::PooledFlagged,
            top_axes: 20,
            network_top_k: 100,
            spearman_replicates: 2000,
            embedder: EmbedderKind::Hashing,
            embedding_dim: 256,
            embedding_model: None,
            embedding_cache: None,
            phrases: PhraseOptions::default(),
        }
    }
}

impl Manifest {
    pub fn from_toml(text: &str, base_dir: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let mut m: Manifest = toml::from_str(text).map_err(|e| ManifestError::Syntax(e.to_string()))?;
        m.base_dir = base_dir.as_ref().to_path_buf();
        m.validate()?;
        Ok(m)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, ManifestError> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Self::from_toml(&text, base)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("manifest serializes")
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.base_dir.join(p)
        }
    }

    pub fn run_log_path(&self) -> PathBuf {
        self.resolve(&self.output.run_log)
    }

    pub fn report_dir(&self) -> PathBuf {
        self.resolve(&self.output.report_dir)
    }

    pub fn validate(&self) -> Result<(), ManifestError> {
        let bad = |s: String| Err(ManifestError::Invalid(s));
        if self.schema_version != MANIFEST_SCHEMA {
            return Err(ManifestError::Schema {
                found: self.schema_version,
            });
        }
        if self.models.is_empty() {
            return bad("no models".into());
        }
        let mut labels = BTreeSet::new();
        for m in &self.models {
            if m.label.is_empty() || m.label.contains(['/', '\t', '\n']) {
                return bad(format!("model label `{}` must be non-empty without '/', tabs or newlines", m.label));
            }
            if !labels.insert(&m.label) {
                return bad(format!("duplicate model label `{}`", m.label));
            }
            if !self.providers.contains_key(&m.provider) {
                return bad(format!("model `{}` uses unconfigured provider `{}`", m.label, m.provider));
            }
        }
        if self.personas.is_empty() {
            return bad("no personas".into());
        }
        if self.personas.iter().collect::<BTreeSet<_>>().len() != self.personas.len() {
            return bad("duplicate persona".into());
        }
        for (name, stage) in [("stage1", &self.stages.stage1), ("stage2", &self.stages.stage2)] {
            if stage.replications < 1 && !stage.conditions.is_empty() {
                return bad(format!("{name} replications must be at least 1"));
            }
            if stage.conditions.iter().collect::<BTreeSet<_>>().len() != stage.conditions.len() {
                return bad(format!("{name} lists a condition twice"));
            }
        }
        if self.parallelism == 0 {
            return bad("parallelism must be at least 1".into());
        }
        Ok(())
    }

    pub fn load_pool(&self) -> Result<ConstraintPool, ManifestError> {
        match &self.library {
            None => Ok(ConstraintPool::canonical()),
            Some(p) => {
                let path = self.resolve(p);
                let f = fs::File::open(&path).map_err(|source| ManifestError::Io { path, source })?;
                Ok(load_library(BufReader::new(f))?)
            }
        }
    }

    /// Every planned run in a stable order: model, persona, condition,
    /// replication.
    pub fn planned_runs(&self) -> Vec<RunConfig> {
        let mut reps: BTreeMap<TaskCondition, (u32, u32)> = BTreeMap::new();
        for &c in &self.stages.stage1.conditions {
            reps.insert(c, (0, self.stages.stage1.replications));
        }
        for &c in &self.stages.stage2.conditions {
            let e = reps.entry(c).or_insert((0, 0));
            e.1 += self.stages.stage2.replications;
        }
        let mut out = Vec::new();
        for m in &self.models {
            let mut decoding = self.decoding.clone();
            decoding.extra.extend(m.decoding_extra.clone());
            for &persona in &self.personas {
                for (&condition, &(start, end)) in &reps {
                    for rep in start..end {
                        out.push(RunConfig {
                            model: m.label.clone(),
                            persona,
                            condition,
                            replication_index: rep,
                            seed: derive_run_seed(self.seed, &m.label, persona, condition, rep),
                            decoding: decoding.clone(),
                        });
                    }
                }
            }
        }
        out
    }

    pub fn is_offline(&self) -> bool {
        self.models.iter().all(|m| {
            matches!(
                self.providers.get(&m.provider),
                Some(ProviderSpec::Synthetic { .. } | ProviderSpec::Replay { .. })
            )
        })
    }
}

/// Sends the vendor model id in place of the manifest label.
struct ModelAlias {
    inner: Arc<dyn ModelProvider>,
    model: String,
}

impl ModelProvider for ModelAlias {
    fn name(&self) -> &str {
        self.inner.name()
    }

    fn complete(&self, request: &CompletionRequest) -> Result<Completion, ProviderError> {
        let mut r = request.clone();
        r.model = self.model.clone();
        self.inner.complete(&r)
    }
}

fn build_provider(
    manifest: &Manifest,
    name: &str,
    spec: &ProviderSpec,
    pool: &ConstraintPool,
) -> Result<Arc<dyn ModelProvider>, ManifestError> {
    let err = |reason: String| ManifestError::Provider {
        name: name.to_string(),
        reason,
    };
    Ok(match spec {
        ProviderSpec::Synthetic {
            element_rr,
            category_rr,
            baseline,
            scheme,
            free_pooled,
            free_per_element,
        } => {
            let cats = (!category_rr.is_empty()).then_some(category_rr);
            let profile =
                profile_from_rates(pool, element_rr, cats, *baseline).map_err(|e: SyntheticError| err(e.to_string()))?;
            let defaults = SamplerOptions::default();
            let options = SamplerOptions {
                scheme: *scheme,
                free_pooled: free_pooled.unwrap_or(defaults.free_pooled),
                free_per_element: free_per_element.unwrap_or(defaults.free_per_element),
            };
            Arc::new(SyntheticAuthor::new(pool.clone(), profile, options).map_err(|e| err(e.to_string()))?)
        }
        ProviderSpec::Live {
            vendor,
            base_url,
            timeout_s,
            cassette,
        } => {
            let live: Arc<dyn ModelProvider> = match LiveProvider::from_env(
                *vendor,
                base_url.clone(),
                Duration::from_secs(*timeout_s),
            ) {
                Ok(p) => Arc::new(p),
                // replaying needs no key
                Err(e) if !matches!(cassette, Some(CassetteSpec { mode: CassetteMode::Replay, .. })) => {
                    return Err(err(e.to_string()))
                }
                Err(_) => {
                    let c = cassette.as_ref().expect("replay cassette");
                    return Ok(Arc::new(CassetteProvider::new(manifest.resolve(&c.dir), c.mode, None)));
                }
            };
            match cassette {
                Some(c) => Arc::new(CassetteProvider::new(manifest.resolve(&c.dir), c.mode, Some(live))),
                None => live,
            }
        }
        ProviderSpec::Replay { dir } => Arc::new(CassetteProvider::new(manifest.resolve(dir), CassetteMode::Replay, None)),
    })
}

/// One provider per model label.
pub fn build_providers(
    manifest: &Manifest,
    pool: &ConstraintPool,
) -> Result<BTreeMap<String, Arc<dyn ModelProvider>>, ManifestError> {
    let mut built: BTreeMap<&str, Arc<dyn ModelProvider>> = BTreeMap::new();
    let mut out = BTreeMap::new();
    for m in &manifest.models {
        let spec = &manifest.providers[&m.provider];
        let base = match built.get(m.provider.as_str()) {
            Some(p) => p.clone(),
            None => {
                let p = build_provider(manifest, &m.provider, spec, pool)?;
                built.insert(&m.provider, p.clone());
                p
            }
        };
        let p: Arc<dyn ModelProvider> = match &m.model {
            Some(id) if id != &m.label => Arc::new(ModelAlias {
                inner: base,
                model: id.clone(),
            }),
            _ => base,
        };
        out.insert(m.label.clone(), p);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct ExecuteOptions {
    pub resume: bool,
    /// Overrides the manifest seed.
    pub seed: Option<u64>,
    /// Overrides the manifest parallelism.
    pub parallelism: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct ExecutionSummary {
    pub planned: usize,
    pub skipped: usize,
    pub executed: usize,
    pub valid: usize,
    pub invalid: usize,
    pub parse_errors: usize,
    pub failed: Vec<(String, String)>,
}

impl ExecutionSummary {
    pub fn is_complete(&self) -> bool {
        self.failed.is_empty()
    }
}

/// Runs every planned (model, persona, condition, replication) not yet in
/// the log. Records are appended as runs finish; failed runs are reported
/// and leave no record.
pub fn execute_manifest(
    manifest: &Manifest,
    providers: &BTreeMap<String, Arc<dyn ModelProvider>>,
    pool: &ConstraintPool,
    log: &RunLog,
    options: ExecuteOptions,
) -> Result<ExecutionSummary, ManifestError> {
    if !options.resume && !log.is_empty() {
        return Err(ManifestError::LogNotEmpty(
            log.path().map(Path::to_path_buf).unwrap_or_default(),
        ));
    }
    let mut m = manifest.clone();
    if let Some(seed) = options.seed {
        m.seed = seed;
    }
    let planned = m.planned_runs();
    let done = log.run_ids();
    let todo: Vec<&RunConfig> = planned.iter().filter(|c| !done.contains(&c.run_id())).collect();
    let run_options = RunOptions {
        retry: m.retry,
        parse: m.parse,
    };
    let threads = options.parallelism.unwrap_or(m.parallelism);
    let outcomes = par::with_threads(Some(threads), || {
        par::map_slice(&todo, |config| {
            let provider = &providers[&config.model];
            match execute_run(config, pool, provider.as_ref(), &run_options) {
                Ok(record) => {
                    let status = record.validation.status;
                    log.append(&record).map(|_| status).map_err(|e| e.to_string())
                }
                Err(e) => Err(e.to_string()),
            }
        })
    });
    let mut summary = ExecutionSummary {
        planned: planned.len(),
        skipped: planned.len() - todo.len(),
        ..ExecutionSummary::default()
    };
    for (config, outcome) in todo.iter().zip(outcomes) {
        use crate::harness::ValidationStatus::*;
        match outcome {
            Ok(status) => {
                summary.executed += 1;
                match status {
                    Valid => summary.valid += 1,
                    Invalid => summary.invalid += 1,
                    ParseError => summary.parse_errors += 1,
                }
            }
            Err(e) => summary.failed.push((config.run_id(), e)),
        }
    }
    Ok(summary)
}

/// Offline manifest of `models` synthetic pseudo-models sharing one
/// rate-ratio profile, with the given stage sizes.
pub fn synthetic_manifest(
    experiment_id: &str,
    seed: u64,
    models: usize,
    stage1: u32,
    stage2: u32,
    element_rr: BTreeMap<Element, f64>,
) -> Manifest {
    Manifest {
        schema_version: MANIFEST_SCHEMA,
        experiment_id: experiment_id.into(),
        seed,
        parallelism: 1,
        library: None,
        output: OutputSpec::default(),
        decoding: Decoding::default(),
        retry: RetryPolicy {
            max_retries: 3,
            base_delay_ms: 0,
        },
        parse: ParseOptions::default(),
        personas: all_personas(),
        stages: Stages {
            stage1: Stage {
                conditions: TaskCondition::ALL.to_vec(),
                replications: stage1,
            },
            stage2: Stage {
                conditions: vec![TaskCondition::C2_2],
                replications: stage2,
            },
        },
        models: (0..models)
            .map(|i| ModelSpec {
                label: format!("synth{}", i + 1),
                provider: "synthetic".into(),
                model: None,
                decoding_extra: BTreeMap::new(),
            })
            .collect(),
        providers: BTreeMap::from([(
            "synthetic".to_string(),
            ProviderSpec::Synthetic {
                element_rr,
                category_rr: BTreeMap::new(),
                baseline: Element::Event,
                scheme: Scheme::Calibrated,
                free_pooled: None,
                free_per_element: None,
            },
        )]),
        analysis: AnalysisSpec::default(),
        base_dir: PathBuf::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthetic::reference_rates;

    const DESK: &str = r#"
schema_version = 1
experiment_id = "desk"
seed = 7
parallelism = 2

[stages.stage1]
conditions = ["1-1", "1-2", "2-1", "2-2", "3"]
replications = 3

[stages.stage2]
conditions = ["2-2"]
replications = 8

[[models]]
label = "alpha"
provider = "synth"

[[models]]
label = "beta"
provider = "synth"
model = "beta-2025-01"

[providers.synth]
kind = "synthetic"
element_rr = { Event = 1.0, Character = 1.5, Setting = 0.8, Style = 1.2 }
"#;

    #[test]
    fn full_scale_plan_size() {
        let m = synthetic_manifest("full", 1, 6, 30, 160, reference_rates());
        assert_eq!(m.planned_runs().len(), 5580);
    }

    #[test]
    fn desk_manifest_parses_and_plans() {
        let m = Manifest::from_toml(DESK, "/tmp").unwrap();
        let plan = m.planned_runs();
        assert_eq!(plan.len(), 2 * 3 * (5 * 3 + 8));
        let ids: BTreeSet<String> = plan.iter().map(RunConfig::run_id).collect();
        assert_eq!(ids.len(), plan.len());
        let max_rep = plan
            .iter()
            .filter(|c| c.condition == TaskCondition::C2_2)
            .map(|c| c.replication_index)
            .max();
        assert_eq!(max_rep, Some(10));
        assert!(m.is_offline());
        assert_eq!(m.run_log_path(), PathBuf::from("/tmp/runs.jsonl"));
    }

    #[test]
    fn toml_round_trip() {
        let m = Manifest::from_toml(DESK, "").unwrap();
        let back = Manifest::from_toml(&m.to_toml(), "").unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn rejects_bad_manifests() {
        let unknown = DESK.replace("parallelism = 2", "paralelism = 2");
        assert!(matches!(Manifest::from_toml(&unknown, ""), Err(ManifestError::Syntax(_))));
        let schema = DESK.replace("schema_version = 1", "schema_version = 2");
        assert!(matches!(Manifest::from_toml(&schema, ""), Err(ManifestError::Schema { found: 2 })));
        let missing = DESK.replace("provider = \"synth\"\n\n[[models]]", "provider = \"nope\"\n\n[[models]]");
        assert!(matches!(Manifest::from_toml(&missing, ""), Err(ManifestError::Invalid(_))));
        let dup = DESK.replace("label = \"beta\"", "label = \"alpha\"");
        assert!(matches!(Manifest::from_toml(&dup, ""), Err(ManifestError::Invalid(_))));
    }

    #[test]
    fn execute_then_resume() {
        let mut m = Manifest::from_toml(DESK, "").unwrap();
        m.retry.base_delay_ms = 0;
        let pool = m.load_pool().unwrap();
        let providers = build_providers(&m, &pool).unwrap();
        let log = RunLog::in_memory();
        let s = execute_manifest(&m, &providers, &pool, &log, ExecuteOptions::default()).unwrap();
        assert_eq!(s.planned, 138);
        assert_eq!(s.executed, 138);
        assert_eq!(s.valid, 138);
        assert!(s.is_complete());
        assert!(matches!(
            execute_manifest(&m, &providers, &pool, &log, ExecuteOptions::default()),
            Err(ManifestError::LogNotEmpty(_))
        ));
        let again = execute_manifest(
            &m,
            &providers,
            &pool,
            &log,
            ExecuteOptions {
                resume: true,
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!((again.skipped, again.executed), (138, 0));
        // the alias sends the vendor id, the record keeps the label
        assert!(log.records().iter().any(|r| r.config.model == "beta"));
    }
}
