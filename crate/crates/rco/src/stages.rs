//! Stage-wise pipeline runs over record files.
//!
//! Each stage reads record files, talks to its endpoints, and writes its
//! outputs plus a `manifest.json` into the output directory. Manifests
//! store file names and content hashes rather than absolute paths, and
//! omit wall-clock timestamps when every endpoint is a mock, so a seeded
//! mock run produces a byte-identical output tree wherever it lands.
//! Re-running a stage over unchanged inputs and configuration is a no-op
//! unless forced; a lock file serializes writers per output directory.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::config::{
    config_hash, effective_min_valid, validate_config, BackendKind, PipelineConfig, Role,
};
use crate::gateway::{Endpoint, HttpBackend, MockBackend, RetryPolicy};
use crate::judge::{
    judge_critique_pair, judge_pair_debiased, score_response, JudgmentRecord, RatingRecord,
    RatingSubject,
};
use crate::metrics::{
    aggregate_cu, aggregate_rqs, build_report, consistency_accuracy, emit_report, CodeExecutor,
};
use crate::records::{
    load_records, validate_dataset, write_records, CritiqueRecord, PromptRecord, Record,
    RecordError, RefinementRecord, ResponseRecord, TaskKind,
};
use crate::reward::{critique_utility, dpco_pairs as build_dpco_pairs, reward_group, DpcoPair};
use crate::sampler::{
    generate_critiques, generate_initial, generate_refinements, iterate as iterate_turns,
    self_refine, GenerationMode, SamplerOptions, StageFailure,
};
use crate::trainer::{
    closed_form_policy, fit, kl_divergence, ReferencePolicy, ToyInstance,
};

/// The stage commands the pipeline front end exposes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageCommand {
    CollectResponses,
    Critique,
    Refine,
    SelfRefine,
    Judge,
    Reward,
    DpcoPairs,
    TrainToy,
    Eval,
    Iterate,
}

impl StageCommand {
    pub fn name(self) -> &'static str {
        match self {
            StageCommand::CollectResponses => "collect-responses",
            StageCommand::Critique => "critique",
            StageCommand::Refine => "refine",
            StageCommand::SelfRefine => "self-refine",
            StageCommand::Judge => "judge",
            StageCommand::Reward => "reward",
            StageCommand::DpcoPairs => "dpco-pairs",
            StageCommand::TrainToy => "train-toy",
            StageCommand::Eval => "eval",
            StageCommand::Iterate => "iterate",
        }
    }
}

/// Input file paths and per-stage knobs.
#[derive(Debug, Clone, Default)]
pub struct StageInputs {
    pub records: Option<PathBuf>,
    pub responses: Option<PathBuf>,
    pub critiques: Option<PathBuf>,
    pub refinements: Option<PathBuf>,
    pub judgments: Option<PathBuf>,
    pub rewards: Option<PathBuf>,
    pub fixture: Option<PathBuf>,
    pub turns: u32,
    /// External command for code-accuracy checking; run as
    /// `<cmd> <suite_id>` with the code text on stdin, exit 0 meaning pass.
    pub code_exec: Option<String>,
    pub train: TrainOptions,
}

/// Gradient-descent knobs for `train-toy`.
#[derive(Debug, Clone, Copy)]
pub struct TrainOptions {
    pub learning_rate: f64,
    pub max_steps: u32,
    pub tolerance: f64,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            learning_rate: 0.1,
            max_steps: 200_000,
            tolerance: 1e-10,
        }
    }
}

/// Stage errors carrying the process exit code contract: 2 configuration,
/// 3 endpoint, 4 data validation, 1 everything else.
#[derive(Debug, thiserror::Error)]
pub enum StageError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("endpoint error: {0}")]
    Endpoint(String),
    #[error("data validation error: {0}")]
    Validation(String),
    #[error("{0}")]
    Io(String),
    #[error("output directory is locked by another run ({0})")]
    Locked(String),
}

impl StageError {
    pub fn exit_code(&self) -> i32 {
        match self {
            StageError::Config(_) => 2,
            StageError::Endpoint(_) => 3,
            StageError::Validation(_) => 4,
            StageError::Io(_) | StageError::Locked(_) => 1,
        }
    }
}

impl From<RecordError> for StageError {
    fn from(e: RecordError) -> Self {
        StageError::Validation(e.to_string())
    }
}

/// What a stage wrote, plus anything worth telling the operator.
#[derive(Debug, Default)]
pub struct StageSummary {
    pub stage: String,
    pub skipped: bool,
    pub written: Vec<(String, usize)>,
    pub notes: Vec<String>,
}

/// Content stamp of one input file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileStamp {
    pub file: String,
    pub sha256: String,
}

/// Wall-clock provenance, recorded only when a wire endpoint took part.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Timestamps {
    pub started_unix: u64,
    pub finished_unix: u64,
}

/// Provenance record written next to every stage's outputs.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunManifest {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub inputs: BTreeMap<String, FileStamp>,
    pub outputs: BTreeMap<String, String>,
    pub endpoints: BTreeMap<String, String>,
    #[serde(default)]
    pub extra: BTreeMap<String, String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Timestamps>,
}

pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".rco-lock";

struct DirLock {
    path: PathBuf,
}

impl DirLock {
    fn acquire(dir: &Path) -> Result<Self, StageError> {
        let path = dir.join(LOCK_FILE);
        match std::fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(DirLock { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(StageError::Locked(path.display().to_string()))
            }
            Err(e) => Err(StageError::Io(format!("{}: {e}", path.display()))),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = std::fs::remove_file(&self.path);
    }
}

fn sha256_file(path: &Path) -> Result<String, StageError> {
    let bytes = std::fs::read(path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            StageError::Validation(format!("input file {} does not exist", path.display()))
        } else {
            StageError::Io(format!("{}: {e}", path.display()))
        }
    })?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}

fn file_name(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn require<'a>(input: &'a Option<PathBuf>, flag: &str) -> Result<&'a Path, StageError> {
    input
        .as_deref()
        .ok_or_else(|| StageError::Validation(format!("missing required input --{flag}")))
}

/// Build the endpoint for one role. Mock endpoints derive everything from
/// the configuration; wire endpoints read their URL and token from the
/// role's environment variables.
pub fn build_endpoint(role: Role, config: &PipelineConfig) -> Result<Endpoint, StageError> {
    let spec = match role {
        Role::Actor => &config.actor,
        Role::Critic => &config.critic,
        Role::Judge => &config.judge,
    };
    match spec.backend {
        BackendKind::Mock => {
            let backend = MockBackend::new(config.seed, spec.mock_behavior.into())
                .with_id(format!("mock:{}:{}", spec.model, config.seed));
            Ok(Endpoint::new(
                backend,
                RetryPolicy {
                    max_attempts: config.retry_attempts,
                    base_delay: Duration::ZERO,
                },
            ))
        }
        BackendKind::Http => {
            let url = std::env::var(role.url_var()).map_err(|_| {
                StageError::Config(format!(
                    "{} endpoint is http but {} is not set",
                    role.name(),
                    role.url_var()
                ))
            })?;
            let token = std::env::var(role.token_var()).ok();
            let timeout = std::env::var("RCO_HTTP_TIMEOUT_SECS")
                .ok()
                .and_then(|v| v.parse().ok())
                .unwrap_or(60);
            Ok(Endpoint::new(
                HttpBackend::new(url, token, spec.model.clone(), Duration::from_secs(timeout)),
                RetryPolicy {
                    max_attempts: config.retry_attempts,
                    base_delay: Duration::from_millis(config.retry_base_ms),
                },
            ))
        }
    }
}

fn all_mock(config: &PipelineConfig, roles: &[Role]) -> bool {
    roles.iter().all(|role| {
        let spec = match role {
            Role::Actor => &config.actor,
            Role::Critic => &config.critic,
            Role::Judge => &config.judge,
        };
        spec.backend == BackendKind::Mock
    })
}

fn sampler_options(config: &PipelineConfig) -> SamplerOptions {
    SamplerOptions {
        base_seed: config.seed,
        max_tokens: config.max_tokens,
        parallelism: config.parallelism,
    }
}

/// Bounded-parallelism map with results aligned to the input order.
fn parallel_map<T, R, F>(items: &[T], parallelism: u32, f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync,
{
    let workers = (parallelism as usize).max(1).min(items.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, R)>();
    std::thread::scope(|scope| {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            let f = &f;
            scope.spawn(move || loop {
                let idx = next.fetch_add(1, Ordering::SeqCst);
                if idx >= items.len() {
                    break;
                }
                if tx.send((idx, f(&items[idx]))).is_err() {
                    break;
                }
            });
        }
        drop(tx);
    });
    let mut slots: Vec<Option<R>> = (0..items.len()).map(|_| None).collect();
    for (idx, result) in rx {
        slots[idx] = Some(result);
    }
    slots.into_iter().map(|s| s.expect("worker filled slot")).collect()
}

struct StageRun<'a> {
    config: &'a PipelineConfig,
    out_dir: &'a Path,
    stage: StageCommand,
    inputs: BTreeMap<String, FileStamp>,
    endpoints: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    extra: BTreeMap<String, String>,
    summary: StageSummary,
    started_unix: u64,
    uses_wire: bool,
    _lock: DirLock,
}

impl<'a> StageRun<'a> {
    fn begin(
        config: &'a PipelineConfig,
        stage: StageCommand,
        out_dir: &'a Path,
        named_inputs: &[(&str, &Path)],
        roles: &[Role],
        force: bool,
    ) -> Result<Result<Self, StageSummary>, StageError> {
        validate_config(config).map_err(|violations| {
            StageError::Config(
                violations
                    .iter()
                    .map(|v| v.to_string())
                    .collect::<Vec<_>>()
                    .join("; "),
            )
        })?;
        std::fs::create_dir_all(out_dir)
            .map_err(|e| StageError::Io(format!("{}: {e}", out_dir.display())))?;
        let lock = DirLock::acquire(out_dir)?;

        let mut inputs = BTreeMap::new();
        for (name, path) in named_inputs {
            inputs.insert(
                name.to_string(),
                FileStamp {
                    file: file_name(path),
                    sha256: sha256_file(path)?,
                },
            );
        }
        let hash = config_hash(config);
        if !force {
            if let Ok(bytes) = std::fs::read(out_dir.join(MANIFEST_FILE)) {
                if let Ok(manifest) = serde_json::from_slice::<RunManifest>(&bytes) {
                    if manifest.stage == stage.name()
                        && manifest.config_hash == hash
                        && manifest.inputs == inputs
                    {
                        return Ok(Err(StageSummary {
                            stage: stage.name().to_string(),
                            skipped: true,
                            written: Vec::new(),
                            notes: vec!["inputs and configuration unchanged".into()],
                        }));
                    }
                }
            }
        }
        let started_unix = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        Ok(Ok(StageRun {
            config,
            out_dir,
            stage,
            inputs,
            endpoints: BTreeMap::new(),
            outputs: BTreeMap::new(),
            extra: BTreeMap::new(),
            summary: StageSummary {
                stage: stage.name().to_string(),
                ..StageSummary::default()
            },
            started_unix,
            uses_wire: !all_mock(config, roles),
            _lock: lock,
        }))
    }

    fn endpoint(&mut self, role: Role) -> Result<Endpoint, StageError> {
        let endpoint = build_endpoint(role, self.config)?;
        self.endpoints
            .insert(role.name().to_string(), endpoint.id().to_string());
        Ok(endpoint)
    }

    fn write<T: Record>(&mut self, name: &str, records: &[T]) -> Result<(), StageError> {
        let path = self.out_dir.join(name);
        write_records(records, &path)?;
        self.outputs.insert(name.to_string(), sha256_file(&path)?);
        self.summary.written.push((name.to_string(), records.len()));
        Ok(())
    }

    fn write_raw(&mut self, name: &str, bytes: &[u8], count: usize) -> Result<(), StageError> {
        let path = self.out_dir.join(name);
        std::fs::write(&path, bytes)
            .map_err(|e| StageError::Io(format!("{}: {e}", path.display())))?;
        self.outputs.insert(name.to_string(), sha256_file(&path)?);
        self.summary.written.push((name.to_string(), count));
        Ok(())
    }

    fn note_failures(&mut self, failures: &[StageFailure]) {
        for failure in failures {
            self.summary
                .notes
                .push(format!("{}: {}: {}", failure.prompt_id, failure.what, failure.message));
        }
    }

    fn finish(self) -> Result<StageSummary, StageError> {
        let timestamps = self.uses_wire.then(|| Timestamps {
            started_unix: self.started_unix,
            finished_unix: SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0),
        });
        let manifest = RunManifest {
            stage: self.stage.name().to_string(),
            config_hash: config_hash(self.config),
            seed: self.config.seed,
            inputs: self.inputs,
            outputs: self.outputs,
            endpoints: self.endpoints,
            extra: self.extra,
            timestamps,
        };
        let path = self.out_dir.join(MANIFEST_FILE);
        let mut bytes = serde_json::to_vec_pretty(&manifest)
            .map_err(|e| StageError::Io(e.to_string()))?;
        bytes.push(b'\n');
        std::fs::write(&path, bytes)
            .map_err(|e| StageError::Io(format!("{}: {e}", path.display())))?;
        Ok(self.summary)
    }
}

fn load_prompts(path: &Path) -> Result<Vec<PromptRecord>, StageError> {
    Ok(load_records::<PromptRecord>(path)?)
}

/// Turn-0 responses keyed by prompt id; exactly one initial response per
/// prompt is required.
fn initial_by_prompt(
    responses: &[ResponseRecord],
) -> Result<BTreeMap<String, ResponseRecord>, StageError> {
    let mut map = BTreeMap::new();
    for response in responses.iter().filter(|r| r.turn == 0) {
        if map.insert(response.prompt_id.clone(), response.clone()).is_some() {
            return Err(StageError::Validation(format!(
                "prompt {} has more than one initial response; stages expect one actor per dataset",
                response.prompt_id
            )));
        }
    }
    Ok(map)
}

fn initial_for<'a>(
    map: &'a BTreeMap<String, ResponseRecord>,
    prompt_id: &str,
) -> Result<&'a ResponseRecord, StageError> {
    map.get(prompt_id).ok_or_else(|| {
        StageError::Validation(format!("prompt {prompt_id} has no turn-0 response"))
    })
}

/// If a stage produced nothing and every unit failed, surface an endpoint
/// error so the exit code reflects the outage.
fn fail_if_all_failed(produced: usize, failures: &[StageFailure]) -> Result<(), StageError> {
    if produced == 0 && !failures.is_empty() {
        return Err(StageError::Endpoint(format!(
            "all {} unit(s) failed; first: {}: {}",
            failures.len(),
            failures[0].prompt_id,
            failures[0].message
        )));
    }
    Ok(())
}

/// Generate one turn-0 response per prompt record.
pub fn stage_collect_responses(
    config: &PipelineConfig,
    inputs: &StageInputs,
    out_dir: &Path,
    force: bool,
) -> Result<StageSummary, StageError> {
    let records_path = require(&inputs.records, "records")?;
    let run = match StageRun::begin(
        config,
        StageCommand::CollectResponses,
        out_dir,
        &[("records", records_path)],
        &[Role::Actor],
        force,
    )? {
        Ok(run) => run,
        Err(skipped) => return Ok(skipped),
    };
    let mut run = run;
    let records = load_prompts(records_path)?;
    let actor = run.endpoint(Role::Actor)?;
    let outcome = generate_initial(&records, &actor, &sampler_options(config));
    fail_if_all_failed(outcome.items.len(), &outcome.failures)?;
    run.note_failures(&outcome.failures);
    run.write("responses.jsonl", &outcome.items)?;
    run.finish()
}

/// Sample N critiques of every initial response.
pub fn stage_critique(
    config: &PipelineConfig,
    inputs: &StageInputs,
    out_dir: &Path,
    force: bool,
) -> Result<StageSummary, StageError> {
    let records_path = require(&inputs.records, "records")?;
    let responses_path = require(&inputs.responses, "responses")?;
    let mut run = match StageRun::begin(
        config,
        StageCommand::Critique,
        out_dir,
        &[("records", records_path), ("responses", responses_path)],
        &[Role::Critic],
        force,
    )? {
        Ok(run) => run,
        Err(skipped) => return Ok(skipped),
    };
    let records = load_prompts(records_path)?;
    let responses = load_records::<ResponseRecord>(responses_path)?;
    validate_dataset(&records, &responses, &[], &[], config.n_critiques, config.m_refinements)?;
    let initials = initial_by_prompt(&responses)?;
    let critic = run.endpoint(Role::Critic)?;
    let opts = sampler_options(config);

    let per_record = parallel_map(&records, config.parallelism, |record| {
        match initial_for(&initials, &record.id) {
            Ok(initial) => {
                let outcome = generate_critiques(
                    record,
                    initial,
                    &critic,
                    config.critic_style,
                    config.n_critiques,
                    // The parallelism bound is applied across records.
                    &SamplerOptions { parallelism: 1, ..opts },
                );
                (outcome.items, outcome.failures)
            }
            Err(e) => (
                Vec::new(),
                vec![StageFailure {
                    prompt_id: record.id.clone(),
                    what: "critique".into(),
                    message: e.to_string(),
                }],
            ),
        }
    });
    let mut critiques = Vec::new();
    let mut failures = Vec::new();
    for (items, fails) in per_record {
        critiques.extend(items);
        failures.extend(fails);
    }
    fail_if_all_failed(critiques.len(), &failures)?;
    run.note_failures(&failures);
    run.write("critiques.jsonl", &critiques)?;
    run.finish()
}

/// Sample M refinements under every critique.
pub fn stage_refine(
    config: &PipelineConfig,
    inputs: &StageInputs,
    out_dir: &Path,
    force: bool,
) -> Result<StageSummary, StageError> {
    let records_path = require(&inputs.records, "records")?;
    let responses_path = require(&inputs.responses, "responses")?;
    let critiques_path = require(&inputs.critiques, "critiques")?;
    let mut run = match StageRun::begin(
        config,
        StageCommand::Refine,
        out_dir,
        &[
            ("records", records_path),
            ("responses", responses_path),
            ("critiques", critiques_path),
        ],
        &[Role::Actor],
        force,
    )? {
        Ok(run) => run,
        Err(skipped) => return Ok(skipped),
    };
    let records = load_prompts(records_path)?;
    let responses = load_records::<ResponseRecord>(responses_path)?;
    let critiques = load_records::<CritiqueRecord>(critiques_path)?;
    validate_dataset(&records, &responses, &critiques, &[], config.n_critiques, config.m_refinements)?;
    let initials = initial_by_prompt(&responses)?;
    let by_id: BTreeMap<&str, &PromptRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let actor = run.endpoint(Role::Actor)?;
    let opts = sampler_options(config);

    if let Some(initial) = initials.values().next() {
        if initial.actor_id != actor.id() {
            run.summary.notes.push(format!(
                "actor endpoint {} differs from the one that produced the initial responses ({})",
                actor.id(),
                initial.actor_id
            ));
        }
    }

    let per_critique = parallel_map(&critiques, config.parallelism, |critique| {
        let record = by_id[critique.prompt_id.as_str()];
        match initial_for(&initials, &critique.prompt_id) {
            Ok(initial) => {
                let outcome = generate_refinements(
                    record,
                    initial,
                    critique,
                    &actor,
                    config.m_refinements,
                    GenerationMode::Sampled,
                    &SamplerOptions { parallelism: 1, ..opts },
                );
                (outcome.items, outcome.failures)
            }
            Err(e) => (
                Vec::new(),
                vec![StageFailure {
                    prompt_id: critique.prompt_id.clone(),
                    what: format!("refinements of critique {}", critique.index),
                    message: e.to_string(),
                }],
            ),
        }
    });
    let mut refinements = Vec::new();
    let mut failures = Vec::new();
    for (items, fails) in per_critique {
        refinements.extend(items);
        failures.extend(fails);
    }
    fail_if_all_failed(refinements.len(), &failures)?;
    run.note_failures(&failures);
    run.write("refinements.jsonl", &refinements)?;
    run.finish()
}

/// One critique-free refinement per prompt (the self-refinement baseline).
pub fn stage_self_refine(
    config: &PipelineConfig,
    inputs: &StageInputs,
    out_dir: &Path,
    force: bool,
) -> Result<StageSummary, StageError> {
    let records_path = require(&inputs.records, "records")?;
    let responses_path = require(&inputs.responses, "responses")?;
    let mut run = match StageRun::begin(
        config,
        StageCommand::SelfRefine,
        out_dir,
        &[("records", records_path), ("responses", responses_path)],
        &[Role::Actor],
        force,
    )? {
        Ok(run) => run,
        Err(skipped) => return Ok(skipped),
    };
    let records = load_prompts(records_path)?;
    let responses = load_records::<ResponseRecord>(responses_path)?;
    let initials = initial_by_prompt(&responses)?;
    let actor = run.endpoint(Role::Actor)?;
    let opts = sampler_options(config);

    let results = parallel_map(&records, config.parallelism, |record| {
        initial_for(&initials, &record.id)
            .map_err(|e| StageFailure {
                prompt_id: record.id.clone(),
                what: "self-refinement".into(),
                message: e.to_string(),
            })
            .and_then(|initial| self_refine(record, initial, &actor, &opts))
    });
    let mut refinements = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok(refinement) => refinements.push(refinement),
            Err(failure) => failures.push(failure),
        }
    }
    fail_if_all_failed(refinements.len(), &failures)?;
    run.note_failures(&failures);
    run.write("self_refinements.jsonl", &refinements)?;
    run.finish()
}

/// Judge every refinement against its initial response in both orders.
pub fn stage_judge(
    config: &PipelineConfig,
    inputs: &StageInputs,
    out_dir: &Path,
    force: bool,
) -> Result<StageSummary, StageError> {
    let records_path = require(&inputs.records, "records")?;
    let responses_path = require(&inputs.responses, "responses")?;
    let refinements_path = require(&inputs.refinements, "refinements")?;
    let mut run = match StageRun::begin(
        config,
        StageCommand::Judge,
        out_dir,
        &[
            ("records", records_path),
            ("responses", responses_path),
            ("refinements", refinements_path),
        ],
        &[Role::Judge],
        force,
    )? {
        Ok(run) => run,
        Err(skipped) => return Ok(skipped),
    };
    let records = load_prompts(records_path)?;
    let responses = load_records::<ResponseRecord>(responses_path)?;
    let refinements = load_records::<RefinementRecord>(refinements_path)?;
    let initials = initial_by_prompt(&responses)?;
    let by_id: BTreeMap<&str, &PromptRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let judge = run.endpoint(Role::Judge)?;

    let results = parallel_map(&refinements, config.parallelism, |refinement| {
        let Some(record) = by_id.get(refinement.prompt_id.as_str()) else {
            return Err(StageFailure {
                prompt_id: refinement.prompt_id.clone(),
                what: "judgment".into(),
                message: "refinement references an unknown prompt".into(),
            });
        };
        let initial = initial_for(&initials, &refinement.prompt_id).map_err(|e| StageFailure {
            prompt_id: refinement.prompt_id.clone(),
            what: "judgment".into(),
            message: e.to_string(),
        })?;
        judge_pair_debiased(&judge, record, initial, refinement, config.max_tokens).map_err(|e| {
            StageFailure {
                prompt_id: refinement.prompt_id.clone(),
                what: format!(
                    "judgment ({}, {})",
                    refinement.critique_index, refinement.refinement_index
                ),
                message: e.to_string(),
            }
        })
    });
    let mut judgments = Vec::new();
    let mut failures = Vec::new();
    for (refinement, result) in refinements.iter().zip(results) {
        match result {
            Ok(pair) => {
                for failure in &pair.failures {
                    failures.push(StageFailure {
                        prompt_id: refinement.prompt_id.clone(),
                        what: format!(
                            "judgment ({}, {}) {:?}",
                            refinement.critique_index, refinement.refinement_index, failure.order
                        ),
                        message: failure.message.clone(),
                    });
                }
                judgments.extend(pair.into_records());
            }
            Err(failure) => failures.push(failure),
        }
    }
    fail_if_all_failed(judgments.len(), &failures)?;
    run.note_failures(&failures);
    run.write("judgments.jsonl", &judgments)?;
    run.finish()
}

/// Compute critique utilities, the per-prompt log-partition value, and
/// regression targets from judged refinements.
pub fn stage_reward(
    config: &PipelineConfig,
    inputs: &StageInputs,
    out_dir: &Path,
    force: bool,
) -> Result<StageSummary, StageError> {
    let judgments_path = require(&inputs.judgments, "judgments")?;
    let mut run = match StageRun::begin(
        config,
        StageCommand::Reward,
        out_dir,
        &[("judgments", judgments_path)],
        &[],
        force,
    )? {
        Ok(run) => run,
        Err(skipped) => return Ok(skipped),
    };
    let judgments = load_records::<JudgmentRecord>(judgments_path)?;
    let min_valid = effective_min_valid(config);

    // ps values per (prompt, critique); self-refinements (index 0) carry
    // no critique and stay out of reward groups.
    let mut per_critique: BTreeMap<(String, u32), Vec<f64>> = BTreeMap::new();
    for judgment in &judgments {
        if judgment.critique_index == 0 {
            continue;
        }
        per_critique
            .entry((judgment.prompt_id.clone(), judgment.critique_index))
            .or_default()
            .push(judgment.ps);
    }
    let mut per_prompt: BTreeMap<String, Vec<(u32, Vec<f64>)>> = BTreeMap::new();
    for ((prompt_id, index), ps) in per_critique {
        per_prompt.entry(prompt_id).or_default().push((index, ps));
    }

    let mut rewards = Vec::new();
    for (prompt_id, critiques) in &per_prompt {
        let mut usable = Vec::new();
        for (index, ps) in critiques {
            if (ps.len() as u32) < min_valid {
                run.summary.notes.push(format!(
                    "{prompt_id}: critique {index} has {} valid judgment(s), below the floor of {min_valid}; excluded",
                    ps.len()
                ));
                continue;
            }
            let cu = critique_utility(ps)
                .map_err(|e| StageError::Validation(format!("{prompt_id}: {e}")))?;
            usable.push((*index, cu));
        }
        if usable.is_empty() {
            run.summary
                .notes
                .push(format!("{prompt_id}: no critique met the judgment floor; group dropped"));
            continue;
        }
        let group = reward_group(prompt_id, &usable, config.beta)
            .map_err(|e| StageError::Validation(format!("{prompt_id}: {e}")))?;
        rewards.extend(group);
    }
    run.extra.insert("n_critiques".into(), config.n_critiques.to_string());
    run.extra.insert("m_refinements".into(), config.m_refinements.to_string());
    run.extra.insert("beta".into(), format!("{:?}", config.beta));
    let judge_id = match config.judge.backend {
        BackendKind::Mock => format!("mock:{}:{}", config.judge.model, config.seed),
        BackendKind::Http => format!("http:{}", config.judge.model),
    };
    run.extra.insert("judge_endpoint".into(), judge_id);
    run.write("rewards.jsonl", &rewards)?;
    run.finish()
}

/// Double-judge the fixed critique pairings and emit preference pairs.
pub fn stage_dpco_pairs(
    config: &PipelineConfig,
    inputs: &StageInputs,
    out_dir: &Path,
    force: bool,
) -> Result<StageSummary, StageError> {
    if config.n_critiques != 4 {
        return Err(StageError::Config(format!(
            "dpco-pairs requires n_critiques = 4, got {}",
            config.n_critiques
        )));
    }
    let records_path = require(&inputs.records, "records")?;
    let responses_path = require(&inputs.responses, "responses")?;
    let critiques_path = require(&inputs.critiques, "critiques")?;
    let mut run = match StageRun::begin(
        config,
        StageCommand::DpcoPairs,
        out_dir,
        &[
            ("records", records_path),
            ("responses", responses_path),
            ("critiques", critiques_path),
        ],
        &[Role::Judge],
        force,
    )? {
        Ok(run) => run,
        Err(skipped) => return Ok(skipped),
    };
    let records = load_prompts(records_path)?;
    let responses = load_records::<ResponseRecord>(responses_path)?;
    let critiques = load_records::<CritiqueRecord>(critiques_path)?;
    validate_dataset(
        &records,
        &responses,
        &critiques,
        &[],
        config.n_critiques,
        config.m_refinements,
    )?;
    let initials = initial_by_prompt(&responses)?;
    let judge = run.endpoint(Role::Judge)?;

    let mut by_prompt: BTreeMap<&str, BTreeMap<u32, &CritiqueRecord>> = BTreeMap::new();
    for critique in &critiques {
        by_prompt
            .entry(critique.prompt_id.as_str())
            .or_default()
            .insert(critique.index, critique);
    }

    let results = parallel_map(&records, config.parallelism, |record| {
        let Some(group) = by_prompt.get(record.id.as_str()) else {
            return Ok::<(Vec<DpcoPair>, Vec<String>), StageFailure>((
                Vec::new(),
                vec![format!("{}: no critiques; skipped", record.id)],
            ));
        };
        if group.len() != 4 {
            return Ok((
                Vec::new(),
                vec![format!(
                    "{}: expected 4 critiques, found {}; skipped",
                    record.id,
                    group.len()
                )],
            ));
        }
        let initial = initial_for(&initials, &record.id).map_err(|e| StageFailure {
            prompt_id: record.id.clone(),
            what: "dpco".into(),
            message: e.to_string(),
        })?;
        let mut outcomes = Vec::with_capacity(2);
        for (first, second) in crate::reward::DPCO_GROUPINGS {
            let outcome = judge_critique_pair(
                &judge,
                record,
                initial,
                &group[&first].text,
                &group[&second].text,
                config.max_tokens,
            )
            .map_err(|e| StageFailure {
                prompt_id: record.id.clone(),
                what: format!("dpco pair ({first}, {second})"),
                message: e.to_string(),
            })?;
            outcomes.push(outcome);
        }
        let pairs = build_dpco_pairs(&record.id, 4, &[outcomes[0], outcomes[1]])
            .map_err(|e| StageFailure {
                prompt_id: record.id.clone(),
                what: "dpco".into(),
                message: e.to_string(),
            })?;
        let notes = outcomes
            .iter()
            .zip(crate::reward::DPCO_GROUPINGS)
            .filter(|(o, _)| {
                !matches!(
                    o,
                    crate::judge::CritiquePairOutcome::FirstWins
                        | crate::judge::CritiquePairOutcome::SecondWins
                )
            })
            .map(|(o, (first, second))| {
                format!("{}: pair ({first}, {second}) excluded: {o:?}", record.id)
            })
            .collect();
        Ok((pairs, notes))
    });

    let mut pairs = Vec::new();
    let mut failures = Vec::new();
    for result in results {
        match result {
            Ok((p, notes)) => {
                pairs.extend(p);
                run.summary.notes.extend(notes);
            }
            Err(failure) => failures.push(failure),
        }
    }
    if pairs.is_empty() && !failures.is_empty() {
        return Err(StageError::Endpoint(format!(
            "all dpco judgments failed; first: {}: {}",
            failures[0].prompt_id, failures[0].message
        )));
    }
    run.note_failures(&failures);
    run.write("dpco_pairs.jsonl", &pairs)?;
    run.finish()
}

/// One convergence-report row per fitted instance.
#[derive(Debug, Serialize, Deserialize)]
pub struct ConvergenceRow {
    pub instance: String,
    pub steps: u32,
    pub final_loss: f64,
    pub grad_norm: f64,
    pub converged: bool,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub kl_to_closed_form: Option<f64>,
}

/// Fit toy instances from a fixture file or from reward rows (uniform
/// reference over each prompt's critiques).
pub fn stage_train_toy(
    config: &PipelineConfig,
    inputs: &StageInputs,
    out_dir: &Path,
    force: bool,
) -> Result<StageSummary, StageError> {
    let mut named_inputs: Vec<(&str, &Path)> = Vec::new();
    if let Some(fixture) = &inputs.fixture {
        named_inputs.push(("fixture", fixture));
    }
    if let Some(rewards) = &inputs.rewards {
        named_inputs.push(("rewards", rewards));
    }
    if named_inputs.is_empty() {
        return Err(StageError::Validation(
            "train-toy needs --fixture or --rewards".into(),
        ));
    }
    let mut run = match StageRun::begin(
        config,
        StageCommand::TrainToy,
        out_dir,
        &named_inputs,
        &[],
        force,
    )? {
        Ok(run) => run,
        Err(skipped) => return Ok(skipped),
    };

    let mut instances: Vec<(String, ToyInstance)> = Vec::new();
    if let Some(fixture) = &inputs.fixture {
        let bytes = std::fs::read(fixture)
            .map_err(|e| StageError::Io(format!("{}: {e}", fixture.display())))?;
        let instance: ToyInstance = serde_json::from_slice(&bytes)
            .map_err(|e| StageError::Validation(format!("{}: {e}", fixture.display())))?;
        instance
            .validate()
            .map_err(|e| StageError::Validation(format!("{}: {e}", fixture.display())))?;
        instances.push((file_name(fixture), instance));
    }
    if let Some(rewards_path) = &inputs.rewards {
        let rewards = load_records::<crate::reward::RewardRecord>(rewards_path)?;
        let mut groups: BTreeMap<String, Vec<(u32, f64)>> = BTreeMap::new();
        for row in &rewards {
            groups
                .entry(row.prompt_id.clone())
                .or_default()
                .push((row.critique_index, row.cu.value));
        }
        for (prompt_id, mut rows) in groups {
            rows.sort_by_key(|(index, _)| *index);
            let cus: Vec<f64> = rows.iter().map(|(_, cu)| *cu).collect();
            let instance = ToyInstance::new(
                ReferencePolicy::uniform(cus.len()),
                cus,
                config.beta,
            )
            .map_err(|e| StageError::Validation(format!("{prompt_id}: {e}")))?;
            instances.push((prompt_id, instance));
        }
    }

    let mut rows = Vec::new();
    for (name, instance) in &instances {
        let outcome = fit(
            instance,
            vec![0.0; instance.len()],
            inputs.train.learning_rate,
            inputs.train.max_steps,
            inputs.train.tolerance,
        )
        .map_err(|e| StageError::Validation(format!("{name}: {e}")))?;
        let kl = if instance.sampled_indices.is_none() {
            let optimal = closed_form_policy(instance)
                .map_err(|e| StageError::Validation(format!("{name}: {e}")))?;
            Some(kl_divergence(&outcome.policy.probabilities(), &optimal))
        } else {
            None
        };
        rows.push(ConvergenceRow {
            instance: name.clone(),
            steps: outcome.report.steps,
            final_loss: outcome.report.final_loss,
            grad_norm: outcome.report.grad_norm,
            converged: outcome.report.converged,
            kl_to_closed_form: kl,
        });
    }

    let mut jsonl = String::new();
    let mut text = String::from("instance  steps  final_loss  grad_norm  converged  kl\n");
    for row in &rows {
        jsonl.push_str(&serde_json::to_string(row).expect("row serializes"));
        jsonl.push('\n');
        text.push_str(&format!(
            "{}  {}  {:.3e}  {:.3e}  {}  {}\n",
            row.instance,
            row.steps,
            row.final_loss,
            row.grad_norm,
            row.converged,
            row.kl_to_closed_form
                .map(|kl| format!("{kl:.3e}"))
                .unwrap_or_else(|| "-".into()),
        ));
    }
    run.write_raw("convergence_report.jsonl", jsonl.as_bytes(), rows.len())?;
    run.write_raw("convergence_report.txt", text.as_bytes(), rows.len())?;
    run.finish()
}

/// [`CodeExecutor`] that shells out: runs `<command> <suite_id>` with the
/// code text on stdin and reads pass/fail from the exit status.
// TODO: bound the child's runtime; a hung test suite currently blocks the
// eval stage.
pub struct CommandExecutor {
    pub command: String,
}

impl CodeExecutor for CommandExecutor {
    fn execute(&self, code: &str, suite_id: &str) -> Result<bool, String> {
        use std::io::Write as _;
        use std::process::{Command, Stdio};
        let mut child = Command::new(&self.command)
            .arg(suite_id)
            .stdin(Stdio::piped())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .spawn()
            .map_err(|e| format!("{}: {e}", self.command))?;
        child
            .stdin
            .as_mut()
            .ok_or("no stdin")?
            .write_all(code.as_bytes())
            .map_err(|e| e.to_string())?;
        let status = child.wait().map_err(|e| e.to_string())?;
        Ok(status.success())
    }
}

#[derive(Debug, Serialize)]
struct AccuracyRow<'a> {
    task: &'a str,
    checked: u64,
    consistent: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    accuracy: Option<f64>,
}

/// Evaluate critiques: one greedy refinement each, debiased CU judgments,
/// 1-10 ratings, the report table, and answer-consistency accuracy.
pub fn stage_eval(
    config: &PipelineConfig,
    inputs: &StageInputs,
    out_dir: &Path,
    force: bool,
) -> Result<StageSummary, StageError> {
    let records_path = require(&inputs.records, "records")?;
    let responses_path = require(&inputs.responses, "responses")?;
    let critiques_path = require(&inputs.critiques, "critiques")?;
    let mut run = match StageRun::begin(
        config,
        StageCommand::Eval,
        out_dir,
        &[
            ("records", records_path),
            ("responses", responses_path),
            ("critiques", critiques_path),
        ],
        &[Role::Actor, Role::Judge],
        force,
    )? {
        Ok(run) => run,
        Err(skipped) => return Ok(skipped),
    };
    let records = load_prompts(records_path)?;
    let responses = load_records::<ResponseRecord>(responses_path)?;
    let critiques = load_records::<CritiqueRecord>(critiques_path)?;
    validate_dataset(
        &records,
        &responses,
        &critiques,
        &[],
        config.n_critiques,
        config.m_refinements,
    )?;
    let initials = initial_by_prompt(&responses)?;
    let by_id: BTreeMap<&str, &PromptRecord> =
        records.iter().map(|r| (r.id.as_str(), r)).collect();
    let actor = run.endpoint(Role::Actor)?;
    let judge = run.endpoint(Role::Judge)?;
    let opts = sampler_options(config);

    // One greedy refinement per critique.
    let refined = parallel_map(&critiques, config.parallelism, |critique| {
        let record = by_id[critique.prompt_id.as_str()];
        let initial = initial_for(&initials, &critique.prompt_id).map_err(|e| StageFailure {
            prompt_id: critique.prompt_id.clone(),
            what: "eval refinement".into(),
            message: e.to_string(),
        })?;
        let outcome = generate_refinements(
            record,
            initial,
            critique,
            &actor,
            1,
            GenerationMode::Greedy,
            &SamplerOptions { parallelism: 1, ..opts },
        );
        outcome
            .items
            .into_iter()
            .next()
            .ok_or_else(|| StageFailure {
                prompt_id: critique.prompt_id.clone(),
                what: "eval refinement".into(),
                message: outcome
                    .failures
                    .first()
                    .map(|f| f.message.clone())
                    .unwrap_or_else(|| "no refinement produced".into()),
            })
    });
    let mut refinements = Vec::new();
    let mut failures = Vec::new();
    for result in refined {
        match result {
            Ok(r) => refinements.push(r),
            Err(f) => failures.push(f),
        }
    }
    fail_if_all_failed(refinements.len(), &failures)?;

    // Debiased CU judgments per refinement.
    let judged = parallel_map(&refinements, config.parallelism, |refinement| {
        let record = by_id[refinement.prompt_id.as_str()];
        let initial = initial_for(&initials, &refinement.prompt_id).expect("checked above");
        judge_pair_debiased(&judge, record, initial, refinement, config.max_tokens)
    });
    let mut judgments = Vec::new();
    for (refinement, result) in refinements.iter().zip(judged) {
        match result {
            Ok(pair) => judgments.extend(pair.into_records()),
            Err(e) => failures.push(StageFailure {
                prompt_id: refinement.prompt_id.clone(),
                what: "eval judgment".into(),
                message: e.to_string(),
            }),
        }
    }

    // Ratings: the initial response once per prompt, then every refinement.
    let mut rating_units: Vec<(String, RatingSubject, u32, String)> = Vec::new();
    for (prompt_id, initial) in &initials {
        if by_id.contains_key(prompt_id.as_str()) {
            rating_units.push((prompt_id.clone(), RatingSubject::Initial, 0, initial.text.clone()));
        }
    }
    for refinement in &refinements {
        rating_units.push((
            refinement.prompt_id.clone(),
            RatingSubject::Refinement,
            refinement.critique_index,
            refinement.text.clone(),
        ));
    }
    let rated = parallel_map(&rating_units, config.parallelism, |(prompt_id, subject, index, text)| {
        let record = by_id[prompt_id.as_str()];
        score_response(&judge, record, text, *subject, *index, config.max_tokens)
    });
    let mut ratings = Vec::new();
    for result in rated {
        match result {
            Ok(rating) => ratings.push(rating),
            Err(e) => run.summary.notes.push(format!("rating excluded: {e}")),
        }
    }

    // Consistency accuracy per task, refinements only.
    let executor = inputs.code_exec.as_ref().map(|command| CommandExecutor {
        command: command.clone(),
    });
    let mut accuracy_rows: Vec<AccuracyRow> = Vec::new();
    for task in [TaskKind::QuestionAnswering, TaskKind::Math, TaskKind::Code] {
        let items: Vec<(&PromptRecord, &str)> = refinements
            .iter()
            .filter_map(|r| {
                let record = *by_id.get(r.prompt_id.as_str())?;
                (record.task == task).then_some((record, r.text.as_str()))
            })
            .collect();
        if items.is_empty() {
            continue;
        }
        let outcome = consistency_accuracy(
            &items,
            &judge,
            executor.as_ref().map(|e| e as &dyn CodeExecutor),
            config.max_tokens,
        );
        run.summary.notes.extend(outcome.warnings.clone());
        accuracy_rows.push(AccuracyRow {
            task: task.name(),
            checked: outcome.checked,
            consistent: outcome.consistent,
            accuracy: outcome.accuracy(),
        });
    }

    // Report: CU over judgments, RQS over refinement ratings.
    let task_of: BTreeMap<String, TaskKind> =
        records.iter().map(|r| (r.id.clone(), r.task)).collect();
    let (cu, cu_warnings) = aggregate_cu(&judgments, &task_of);
    run.summary.notes.extend(cu_warnings);
    let refinement_ratings: Vec<RatingRecord> = ratings
        .iter()
        .filter(|r| r.subject == RatingSubject::Refinement)
        .cloned()
        .collect();
    let (rqs, rqs_warnings) = aggregate_rqs(&refinement_ratings, &task_of);
    run.summary.notes.extend(rqs_warnings);
    let report = build_report(&cu, &rqs);
    emit_report(&report, out_dir).map_err(|e| StageError::Io(e.to_string()))?;
    for name in ["report.txt", "report.jsonl"] {
        let path = out_dir.join(name);
        let hash = sha256_file(&path)?;
        run.outputs.insert(name.to_string(), hash);
        run.summary.written.push((name.to_string(), report.rows.len() + 1));
    }

    let mut accuracy_jsonl = String::new();
    for row in &accuracy_rows {
        accuracy_jsonl.push_str(&serde_json::to_string(row).expect("row serializes"));
        accuracy_jsonl.push('\n');
    }
    run.write_raw("accuracy.jsonl", accuracy_jsonl.as_bytes(), accuracy_rows.len())?;

    run.note_failures(&failures);
    run.write("eval_refinements.jsonl", &refinements)?;
    run.write("judgments.jsonl", &judgments)?;
    run.write("ratings.jsonl", &ratings)?;
    run.finish()
}

/// Run the turn-by-turn critique-refine loop per prompt.
pub fn stage_iterate(
    config: &PipelineConfig,
    inputs: &StageInputs,
    out_dir: &Path,
    force: bool,
) -> Result<StageSummary, StageError> {
    if inputs.turns < 1 {
        return Err(StageError::Validation("iterate needs --turns >= 1".into()));
    }
    let records_path = require(&inputs.records, "records")?;
    let responses_path = require(&inputs.responses, "responses")?;
    let mut run = match StageRun::begin(
        config,
        StageCommand::Iterate,
        out_dir,
        &[("records", records_path), ("responses", responses_path)],
        &[Role::Actor, Role::Critic],
        force,
    )? {
        Ok(run) => run,
        Err(skipped) => return Ok(skipped),
    };
    let records = load_prompts(records_path)?;
    let responses = load_records::<ResponseRecord>(responses_path)?;
    let initials = initial_by_prompt(&responses)?;
    let actor = run.endpoint(Role::Actor)?;
    let critic = run.endpoint(Role::Critic)?;
    let opts = sampler_options(config);

    let results = parallel_map(&records, config.parallelism, |record| {
        match initial_for(&initials, &record.id) {
            Ok(initial) => {
                let outcome = iterate_turns(
                    record,
                    initial,
                    &critic,
                    &actor,
                    config.critic_style,
                    inputs.turns,
                    &opts,
                );
                (outcome.items, outcome.failures)
            }
            Err(e) => (
                Vec::new(),
                vec![StageFailure {
                    prompt_id: record.id.clone(),
                    what: "iterate".into(),
                    message: e.to_string(),
                }],
            ),
        }
    });
    let mut iterations = Vec::new();
    let mut failures = Vec::new();
    for (items, fails) in results {
        iterations.extend(items);
        failures.extend(fails);
    }
    fail_if_all_failed(iterations.len(), &failures)?;
    run.note_failures(&failures);
    run.write("iterations.jsonl", &iterations)?;
    run.finish()
}

/// Dispatch one stage command.
pub fn run_stage(
    command: StageCommand,
    config: &PipelineConfig,
    inputs: &StageInputs,
    out_dir: &Path,
    force: bool,
) -> Result<StageSummary, StageError> {
    match command {
        StageCommand::CollectResponses => stage_collect_responses(config, inputs, out_dir, force),
        StageCommand::Critique => stage_critique(config, inputs, out_dir, force),
        StageCommand::Refine => stage_refine(config, inputs, out_dir, force),
        StageCommand::SelfRefine => stage_self_refine(config, inputs, out_dir, force),
        StageCommand::Judge => stage_judge(config, inputs, out_dir, force),
        StageCommand::Reward => stage_reward(config, inputs, out_dir, force),
        StageCommand::DpcoPairs => stage_dpco_pairs(config, inputs, out_dir, force),
        StageCommand::TrainToy => stage_train_toy(config, inputs, out_dir, force),
        StageCommand::Eval => stage_eval(config, inputs, out_dir, force),
        StageCommand::Iterate => stage_iterate(config, inputs, out_dir, force),
    }
}

/// Run the full mock-backed chain into one directory tree:
/// responses, critiques, refinements, judgments, rewards.
pub fn run_desk_chain(
    config: &PipelineConfig,
    records_path: &Path,
    root: &Path,
) -> Result<Vec<StageSummary>, StageError> {
    let mut summaries = Vec::new();
    let responses_dir = root.join("responses");
    summaries.push(stage_collect_responses(
        config,
        &StageInputs {
            records: Some(records_path.to_path_buf()),
            ..StageInputs::default()
        },
        &responses_dir,
        false,
    )?);
    let responses = responses_dir.join("responses.jsonl");

    let critiques_dir = root.join("critiques");
    summaries.push(stage_critique(
        config,
        &StageInputs {
            records: Some(records_path.to_path_buf()),
            responses: Some(responses.clone()),
            ..StageInputs::default()
        },
        &critiques_dir,
        false,
    )?);
    let critiques = critiques_dir.join("critiques.jsonl");

    let refinements_dir = root.join("refinements");
    summaries.push(stage_refine(
        config,
        &StageInputs {
            records: Some(records_path.to_path_buf()),
            responses: Some(responses.clone()),
            critiques: Some(critiques.clone()),
            ..StageInputs::default()
        },
        &refinements_dir,
        false,
    )?);
    let refinements = refinements_dir.join("refinements.jsonl");

    let judgments_dir = root.join("judgments");
    summaries.push(stage_judge(
        config,
        &StageInputs {
            records: Some(records_path.to_path_buf()),
            responses: Some(responses.clone()),
            refinements: Some(refinements.clone()),
            ..StageInputs::default()
        },
        &judgments_dir,
        false,
    )?);
    let judgments = judgments_dir.join("judgments.jsonl");

    let rewards_dir = root.join("rewards");
    summaries.push(stage_reward(
        config,
        &StageInputs {
            judgments: Some(judgments),
            ..StageInputs::default()
        },
        &rewards_dir,
        false,
    )?);
    Ok(summaries)
}
