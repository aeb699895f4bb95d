//! `postcond` subcommands.
//!
//! Every command works against a store directory. The data flow is
//! `scan → mutate → filter-mutants → evaluate → metrics/report/ablate`;
//! each step reads what the previous one wrote under the store.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::config::{Config, EmbeddingConfig};
use crate::frontend::{extract_methods, find_method, parse_unit, MethodRecord, SourceUnit, FIXTURE_ADAPTER};
use crate::harness::{run_fixture_suite, PostconditionSet, RunnerMode, RunnerSpec};
use crate::llmclient::{Client, ClientError, UreqBackend};
use crate::metrics::{cross_scheme_fdr, run_ablation, AblationRow, AblationSpec, MetricsError};
use crate::mutgen::{
    generate_llm_mutants, generate_operator_mutants, llm_prompt, select_llm_mutation_targets, Catalog, Mutant,
    MutgenError, Scheme,
};
use crate::pipeline::{
    assemble_instance, embed_headers, environment_repair_loop, farthest_first_select, filter_candidate_methods,
    load_instance, write_instance, EmbeddingProvider, HttpEmbeddingProvider, PipelineError, TestManifest,
    TrigramHashProvider,
};
use crate::store::{self, RecordFilter, ResultRecord, RunManifest, Setting, StoreError};
use crate::validate::{build_kill_matrix, filter_defective_mutants, KillMatrix, TaskSubject, ValidateError};

/// Set ids of model samples start with this prefix; all other rows of a
/// kill matrix are the task's reference sets.
pub const SAMPLE_PREFIX: &str = "s.";

#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Domain(String),
    Io(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Domain(_) => 1,
            CliError::Usage(_) => 2,
            CliError::Io(_) => 3,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Usage(m) | CliError::Domain(m) | CliError::Io(m) => m,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        let m = e.to_string();
        match e {
            PipelineError::Io(_) | PipelineError::Manifest(_) | PipelineError::Client(_) | PipelineError::Provider(_) => {
                CliError::Io(m)
            }
            PipelineError::InvalidConfig(_) => CliError::Usage(m),
            PipelineError::CoverageAbsent(_)
            | PipelineError::CountExceedsPopulation { .. }
            | PipelineError::TooFewMutants { .. }
            | PipelineError::MissingTests => CliError::Domain(m),
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::Io(m) => CliError::Io(m),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<MetricsError> for CliError {
    fn from(e: MetricsError) -> Self {
        CliError::Domain(e.to_string())
    }
}

impl From<ValidateError> for CliError {
    fn from(e: ValidateError) -> Self {
        match e {
            ValidateError::Io(m) => CliError::Io(m),
            other => CliError::Domain(other.to_string()),
        }
    }
}

impl From<ClientError> for CliError {
    fn from(e: ClientError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<MutgenError> for CliError {
    fn from(e: MutgenError) -> Self {
        match e {
            MutgenError::Client { .. } => CliError::Io(e.to_string()),
            MutgenError::InvalidCatalog(_) => CliError::Usage(e.to_string()),
            other => CliError::Domain(other.to_string()),
        }
    }
}

type CliResult<T = ()> = Result<T, CliError>;

fn io_err(path: &Path, e: impl std::fmt::Display) -> CliError {
    CliError::Io(format!("{}: {e}", path.display()))
}

#[derive(Parser, Debug)]
#[command(name = "postcond", version, about = "Mutation-based evaluation of method postconditions")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct GlobalArgs {
    /// JSON configuration document.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Upper bound on concurrent test-suite runs.
    #[arg(long, global = true, default_value_t = 4)]
    workers: usize,
    #[arg(long, global = true, default_value = "store")]
    store: PathBuf,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Parse the corpus, measure methods and record coverage.
    Scan,
    /// Generate operator (and optionally LLM) mutants for every task.
    Mutate,
    /// Keep mutants that fail the unwoven tests and package instances.
    FilterMutants,
    /// Build kill matrices and record per-sample verdicts as a new run.
    Evaluate,
    /// Print Corr@k / Comp@k and related metrics for a run.
    Metrics(RunArg),
    /// Pick a diverse subset of candidate methods.
    Select {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Recompute Comp@1 under mutant-set ablations.
    Ablate(RunArg),
    /// Let the completion client repair a project's config files.
    RepairEnv {
        #[arg(long)]
        project: PathBuf,
        /// Shell command that exits 0 once the environment works.
        #[arg(long)]
        check: String,
        #[arg(long)]
        max_rounds: Option<usize>,
    },
    /// Write report.txt, report.csv and gaps.csv for a run.
    Report(RunArg),
    /// Emit the LLM mutation prompts as JSONL, for building transcripts.
    #[command(hide = true)]
    LlmPrompts,
}

#[derive(Args, Debug)]
struct RunArg {
    /// Run id; defaults to the latest run in the store.
    #[arg(long)]
    run: Option<String>,
}

/// Parses `argv` (including the program name) and runs the subcommand.
pub fn cli_dispatch<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

struct Ctx {
    global: GlobalArgs,
    config: Option<(Config, String)>,
}

impl Ctx {
    fn config(&self) -> CliResult<&Config> {
        self.config
            .as_ref()
            .map(|(c, _)| c)
            .ok_or_else(|| CliError::Usage("this command needs --config".into()))
    }

    fn config_text(&self) -> &str {
        self.config.as_ref().map_or("", |(_, t)| t.as_str())
    }

    fn store(&self) -> &Path {
        &self.global.store
    }
}

fn run(cli: Cli) -> CliResult {
    let config = match &cli.global.config {
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
            let base = path.parent().map(Path::to_path_buf).unwrap_or_default();
            let cfg = Config::from_json(&text, &base).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
            Some((cfg, text))
        }
        None => None,
    };
    if cli.global.workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let ctx = Ctx {
        global: cli.global,
        config,
    };
    store::init_store(ctx.store())?;
    match cli.command {
        Command::Scan => scan(&ctx),
        Command::Mutate => mutate(&ctx),
        Command::FilterMutants => filter_mutants(&ctx),
        Command::Evaluate => evaluate(&ctx),
        Command::Metrics(r) => metrics(&ctx, r.run),
        Command::Select { count } => select(&ctx, count),
        Command::Ablate(r) => ablate(&ctx, r.run),
        Command::RepairEnv {
            project,
            check,
            max_rounds,
        } => repair_env(&ctx, &project, &check, max_rounds),
        Command::Report(r) => report(&ctx, r.run),
        Command::LlmPrompts => llm_prompts(&ctx),
    }
}

// ---- corpus ----

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct TaskFile {
    #[serde(default)]
    task_id: Option<String>,
    unit: String,
    method: String,
    /// Test files relative to the task directory; defaults to every other
    /// top-level file.
    #[serde(default)]
    tests: Option<Vec<String>>,
}

struct Task {
    dir: PathBuf,
    task_id: String,
    unit: SourceUnit,
    method: MethodRecord,
    tests: Vec<String>,
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path) -> CliResult<T> {
    let text = std::fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| io_err(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> CliResult {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    let v = serde_json::to_value(value).map_err(|e| io_err(path, e))?;
    let mut text = serde_json::to_string_pretty(&v).map_err(|e| io_err(path, e))?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

fn sorted_entries(dir: &Path) -> CliResult<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| io_err(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|e| io_err(dir, e)))
        .collect::<CliResult<_>>()?;
    out.sort();
    Ok(out)
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
}

fn load_task(dir: &Path) -> CliResult<Task> {
    let tf: TaskFile = read_json(&dir.join("task.json"))?;
    let path = dir.join(&tf.unit);
    let text = std::fs::read_to_string(&path).map_err(|e| io_err(&path, e))?;
    let unit = parse_unit(&tf.unit, &tf.unit, text, FIXTURE_ADAPTER)
        .map_err(|e| CliError::Domain(format!("{}: {e}", path.display())))?;
    let method = find_method(&unit, &tf.method)
        .ok_or_else(|| CliError::Domain(format!("{}: no method `{}`", path.display(), tf.method)))?;
    let tests = match tf.tests {
        Some(t) => t,
        None => sorted_entries(dir)?
            .into_iter()
            .filter(|p| p.is_file())
            .map(|p| file_name(&p))
            .filter(|n| n != "task.json" && *n != tf.unit)
            .collect(),
    };
    Ok(Task {
        task_id: tf.task_id.unwrap_or_else(|| file_name(dir)),
        dir: dir.to_path_buf(),
        unit,
        method,
        tests,
    })
}

fn load_corpus(cfg: &Config) -> CliResult<Vec<Task>> {
    let mut tasks = Vec::new();
    for dir in sorted_entries(&cfg.corpus)? {
        if dir.join("task.json").is_file() {
            tasks.push(load_task(&dir)?);
        }
    }
    if tasks.is_empty() {
        return Err(CliError::Domain(format!("no tasks under {}", cfg.corpus.display())));
    }
    Ok(tasks)
}

fn read_psets(dir: &Path) -> CliResult<Vec<PostconditionSet>> {
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    sorted_entries(dir)?
        .into_iter()
        .filter(|p| p.extension().is_some_and(|e| e == "json"))
        .map(|p| read_json(&p))
        .collect()
}

/// Model samples live at `samples/<model>/<setting>/<index>.json`.
fn read_samples(task_dir: &Path) -> CliResult<Vec<(String, Setting, usize, PostconditionSet)>> {
    let root = task_dir.join("samples");
    let mut out = Vec::new();
    if !root.is_dir() {
        return Ok(out);
    }
    for model_dir in sorted_entries(&root)?.into_iter().filter(|p| p.is_dir()) {
        let model = file_name(&model_dir);
        for setting_dir in sorted_entries(&model_dir)?.into_iter().filter(|p| p.is_dir()) {
            let name = file_name(&setting_dir);
            let setting = Setting::parse(&name)
                .ok_or_else(|| CliError::Domain(format!("{}: unknown setting", setting_dir.display())))?;
            for file in sorted_entries(&setting_dir)? {
                let stem = file.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
                let Ok(index) = stem.parse::<usize>() else { continue };
                let mut set: PostconditionSet = read_json(&file)?;
                set.set_id = format!("{SAMPLE_PREFIX}{model}.{name}.{index}");
                set.meta.insert("model_tag".into(), model.clone().into());
                set.meta.insert("setting".into(), name.clone().into());
                set.meta.insert("sample_index".into(), index.into());
                out.push((model.clone(), setting, index, set));
            }
        }
    }
    out.sort_by(|a, b| (&a.0, a.1, a.2).cmp(&(&b.0, b.1, b.2)));
    Ok(out)
}

fn runner_spec(cfg: &Config, dir: &Path) -> RunnerSpec {
    cfg.runner.spec(dir)
}

fn catalog(cfg: &Config) -> CliResult<Catalog> {
    match Catalog::bundled(&cfg.catalog) {
        Some(c) => Ok(c),
        None => Ok(Catalog::load(Path::new(&cfg.catalog))?),
    }
}

fn client(cfg: &Config) -> CliResult<Option<Client>> {
    match &cfg.transport {
        Some(t) => Ok(Some(Client::new(t.clone())?)),
        None => Ok(None),
    }
}

fn tasks_dir(store: &Path) -> PathBuf {
    store.join("tasks")
}

// ---- scan ----

#[derive(Debug, Serialize, Deserialize)]
struct ScanEntry {
    task_id: String,
    language: String,
    target: bool,
    candidate: bool,
    method: MethodRecord,
}

fn scan(ctx: &Ctx) -> CliResult {
    let cfg = ctx.config()?;
    let mut entries = Vec::new();
    for task in load_corpus(cfg)? {
        let coverage = match cfg.runner.mode {
            RunnerMode::Builtin => Some(
                run_fixture_suite(std::slice::from_ref(&task.unit), &task.dir, cfg.runner.timeout_ms)
                    .map_err(|e| CliError::Io(e.to_string()))?
                    .coverage,
            ),
            RunnerMode::Process => {
                let p = task.dir.join("coverage.txt");
                match p.is_file() {
                    true => Some(crate::frontend::CoverageTable::load(&p).map_err(|e| io_err(&p, e))?),
                    false => None,
                }
            }
        };
        for mut m in extract_methods(&task.unit) {
            m.coverage = coverage.as_ref().and_then(|c| c.method_coverage(&m));
            entries.push(ScanEntry {
                task_id: task.task_id.clone(),
                language: task.unit.adapter_id.clone(),
                target: m.name == task.method.name,
                candidate: false,
                method: m,
            });
        }
    }
    let records: Vec<MethodRecord> = entries.iter().map(|e| e.method.clone()).collect();
    let kept: Vec<String> = filter_candidate_methods(&records, &cfg.selection)
        .into_iter()
        .map(|m| m.method_id)
        .collect();
    for e in &mut entries {
        e.candidate = kept.contains(&e.method.method_id);
    }
    write_json(&ctx.store().join("scan.json"), &entries)?;
    println!("scanned {} methods, {} pass the candidate filter", entries.len(), kept.len());
    for e in entries.iter().filter(|e| e.target) {
        println!(
            "  {:<16} loc={:<3} cc={:<2} words={:<3} coverage={} candidate={}",
            e.task_id,
            e.method.loc,
            e.method.cyclomatic,
            e.method.comment_words,
            e.method.coverage.map_or("-".to_string(), |c| format!("{c:.2}")),
            e.candidate
        );
    }
    Ok(())
}

// ---- mutate ----

/// Corpus tasks whose target method passed the candidate filter in `scan`.
fn candidate_tasks(ctx: &Ctx, cfg: &Config) -> CliResult<Vec<Task>> {
    let path = ctx.store().join("scan.json");
    if !path.is_file() {
        return Err(CliError::Domain("no scan results in store; run scan first".into()));
    }
    let entries: Vec<ScanEntry> = read_json(&path)?;
    let keep: Vec<&str> = entries
        .iter()
        .filter(|e| e.target && e.candidate)
        .map(|e| e.task_id.as_str())
        .collect();
    Ok(load_corpus(cfg)?
        .into_iter()
        .filter(|t| keep.contains(&t.task_id.as_str()))
        .collect())
}

fn mutate(ctx: &Ctx) -> CliResult {
    let cfg = ctx.config()?;
    let catalog = catalog(cfg)?;
    let client = if cfg.llm_mutation { client(cfg)? } else { None };
    if cfg.llm_mutation && client.is_none() {
        return Err(CliError::Usage("llm_mutation needs a transport".into()));
    }
    let mut llm_requests = 0;
    for task in candidate_tasks(ctx, cfg)? {
        let mut mutants = generate_operator_mutants(&task.unit, &task.method, &catalog);
        if let Some(c) = &client {
            let targets = select_llm_mutation_targets(&task.unit, &task.method);
            llm_requests += targets.len();
            mutants.extend(generate_llm_mutants(&task.unit, &task.method, &targets, c)?);
        }
        let dir = tasks_dir(ctx.store()).join(&task.task_id);
        write_json(&dir.join("mutants.json"), &mutants)?;
        for m in &mutants {
            let path = dir.join("diffs").join(format!("{}.diff", m.mutant_id));
            write_text(&path, &m.diff(&task.unit))?;
        }
        let llm = mutants.iter().filter(|m| m.scheme == Scheme::Llm).count();
        println!("{:<16} {} operator mutants, {} llm mutants", task.task_id, mutants.len() - llm, llm);
    }
    if let Some(c) = &client {
        println!("llm requests: {llm_requests}, network calls: {}", c.network_calls());
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> CliResult {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
    }
    std::fs::write(path, text).map_err(|e| io_err(path, e))
}

// ---- filter-mutants ----

fn filter_mutants(ctx: &Ctx) -> CliResult {
    let cfg = ctx.config()?;
    let mut short = Vec::new();
    for task in candidate_tasks(ctx, cfg)? {
        let dir = tasks_dir(ctx.store()).join(&task.task_id);
        let mut mutants: Vec<Mutant> = read_json(&dir.join("mutants.json"))?;
        let defective =
            filter_defective_mutants(&task.unit, &mut mutants, &runner_spec(cfg, &task.dir), ctx.global.workers);
        write_json(&dir.join("mutants.json"), &mutants)?;
        let mut files = BTreeMap::new();
        for name in &task.tests {
            let p = task.dir.join(name);
            files.insert(name.clone(), std::fs::read_to_string(&p).map_err(|e| io_err(&p, e))?);
        }
        let tests = TestManifest {
            runner: runner_spec(cfg, Path::new("tests")),
            files,
        };
        let psets = read_psets(&task.dir.join("postconds"))?;
        match assemble_instance(
            &task.task_id,
            &task.unit,
            &task.method,
            &defective,
            &psets,
            tests,
            cfg.selection.min_mutants,
        ) {
            Ok(inst) => {
                write_instance(&inst, &ctx.store().join("instances").join(&task.task_id))?;
                println!("{:<16} {} of {} mutants defective", task.task_id, defective.len(), mutants.len());
            }
            Err(e @ PipelineError::TooFewMutants { .. }) => {
                println!("{:<16} skipped: {e}", task.task_id);
                short.push(format!("{}: {e}", task.task_id));
            }
            Err(e) => return Err(e.into()),
        }
    }
    if short.is_empty() {
        Ok(())
    } else {
        Err(CliError::Domain(format!("too few mutants: {}", short.join("; "))))
    }
}

// ---- evaluate ----

fn instance_dirs(store: &Path) -> CliResult<Vec<PathBuf>> {
    let root = store.join("instances");
    if !root.is_dir() {
        return Err(CliError::Domain("no instances in store; run filter-mutants first".into()));
    }
    Ok(sorted_entries(&root)?.into_iter().filter(|p| p.is_dir()).collect())
}

fn run_dir(store: &Path, run_id: &str) -> PathBuf {
    store.join("runs").join(run_id)
}

fn evaluate(ctx: &Ctx) -> CliResult {
    let cfg = ctx.config()?;
    let mut manifest = RunManifest::new(ctx.config_text(), ctx.global.seed);
    let rdir = run_dir(ctx.store(), &manifest.run_id);
    write_json(&rdir.join("manifest.json"), &manifest)?;
    for idir in instance_dirs(ctx.store())? {
        let inst = load_instance(&idir)?;
        let subject: TaskSubject = inst.subject()?;
        let mut spec = inst.tests.runner.clone();
        spec.working_dir = idir.join(&spec.working_dir);
        let samples = read_samples(&cfg.corpus.join(&inst.task_id))?;
        let mut psets = inst.postconditions.clone();
        psets.extend(samples.iter().map(|s| s.3.clone()));
        let matrix = build_kill_matrix(
            &subject,
            &psets,
            &inst.mutants,
            &spec,
            ctx.global.workers,
            Some(&rdir.join("cells.jsonl")),
        )?;
        write_json(&rdir.join("matrices").join(format!("{}.json", inst.task_id)), &matrix)?;
        let verdicts = matrix.verdicts();
        let mut records = Vec::new();
        for (model, setting, index, set) in &samples {
            let v = verdicts.iter().find(|v| v.set_id == set.set_id).expect("every set has a verdict");
            records.push(ResultRecord {
                run_id: manifest.run_id.clone(),
                task_id: inst.task_id.clone(),
                setting: *setting,
                model_tag: model.clone(),
                sample_index: *index,
                correct: v.correct,
                complete: v.complete,
                kill_row_ref: format!("{}#{}", inst.task_id, set.set_id),
            });
        }
        store::append_records(ctx.store(), &records)?;
        let refs: Vec<String> = verdicts
            .iter()
            .filter(|v| !v.set_id.starts_with(SAMPLE_PREFIX))
            .map(|v| format!("{}={}", v.set_id, verdict_label(v.correct, v.complete)))
            .collect();
        println!(
            "{:<16} {} sets x {} variants; samples {}; {}",
            inst.task_id,
            matrix.set_ids.len(),
            matrix.variants.len(),
            samples.len(),
            refs.join(" ")
        );
    }
    manifest.finished = Some(store::now_utc());
    write_json(&rdir.join("manifest.json"), &manifest)?;
    store::record_run(ctx.store(), &manifest)?;
    println!("run {}", manifest.run_id);
    Ok(())
}

fn verdict_label(correct: bool, complete: bool) -> &'static str {
    match (correct, complete) {
        (true, true) => "complete",
        (true, false) => "correct",
        _ => "incorrect",
    }
}

fn resolve_run(ctx: &Ctx, run: Option<String>) -> CliResult<String> {
    match run {
        Some(r) => {
            if store::read_runs(ctx.store())?.iter().any(|m| m.run_id == r) {
                Ok(r)
            } else {
                Err(CliError::Domain(format!("unknown run {r}")))
            }
        }
        None => Ok(store::latest_run(ctx.store())?.run_id),
    }
}

fn load_matrices(store: &Path, run_id: &str) -> CliResult<Vec<KillMatrix>> {
    let dir = run_dir(store, run_id).join("matrices");
    if !dir.is_dir() {
        return Ok(Vec::new());
    }
    sorted_entries(&dir)?.iter().map(|p| read_json(p)).collect()
}

/// Rows holding model samples, or every row when the run has none.
fn sample_rows(matrices: &[KillMatrix]) -> Vec<KillMatrix> {
    let any = matrices.iter().any(|m| m.set_ids.iter().any(|s| s.starts_with(SAMPLE_PREFIX)));
    if !any {
        return matrices.to_vec();
    }
    matrices
        .iter()
        .map(|m| {
            let rows: Vec<usize> = (0..m.set_ids.len()).filter(|&i| m.set_ids[i].starts_with(SAMPLE_PREFIX)).collect();
            KillMatrix {
                task_id: m.task_id.clone(),
                set_ids: rows.iter().map(|&i| m.set_ids[i].clone()).collect(),
                variants: m.variants.clone(),
                cells: rows.iter().map(|&i| m.cells[i].clone()).collect(),
            }
        })
        .collect()
}

fn k_values(ctx: &Ctx) -> Vec<usize> {
    ctx.config().map_or(crate::metrics::DEFAULT_K_VALUES.to_vec(), |c| c.k_values.clone())
}

// ---- metrics / report ----

fn metrics(ctx: &Ctx, run: Option<String>) -> CliResult {
    let run_id = resolve_run(ctx, run)?;
    let filter = RecordFilter {
        run_id: Some(run_id.clone()),
        ..Default::default()
    };
    let stats = store::aggregate(ctx.store(), &filter)?;
    let ks = k_values(ctx);
    let rows = store::report_rows(&stats, &ks);
    let matrices = sample_rows(&load_matrices(ctx.store(), &run_id)?);
    let fdr_op = cross_scheme_fdr(&matrices, Scheme::Operator);
    let fdr_llm = cross_scheme_fdr(&matrices, Scheme::Llm);
    println!("run {run_id}");
    for r in &rows {
        print!("{} {} tasks={}", r.model_tag, r.setting, r.tasks);
        for (k, c) in &r.cells {
            print!(
                " | k={k} corr={} comp={} delta={} comp/corr={}",
                store::render_value(c[0]),
                store::render_value(c[1]),
                store::render_value(c[2]),
                store::render_value(c[3])
            );
        }
        println!(" | c2c={}", store::render_value(r.c2c));
    }
    println!(
        "fdr operator-only={} llm-only={}",
        store::render_value(fdr_op),
        store::render_value(fdr_llm)
    );
    let summary = serde_json::json!({
        "run_id": run_id,
        "fdr": {"operator": fdr_op, "llm": fdr_llm},
        "stats": stats,
    });
    write_json(&run_dir(ctx.store(), &run_id).join("metrics.json"), &summary)
}

fn report(ctx: &Ctx, run: Option<String>) -> CliResult {
    let run_id = resolve_run(ctx, run)?;
    let filter = RecordFilter {
        run_id: Some(run_id.clone()),
        ..Default::default()
    };
    let stats = store::aggregate(ctx.store(), &filter)?;
    let files = store::emit_report(&stats, &k_values(ctx), &store::report_dir(ctx.store(), &run_id))?;
    print!("{}", std::fs::read_to_string(&files.text).map_err(|e| io_err(&files.text, e))?);
    println!("wrote {}", files.csv.parent().unwrap_or(Path::new(".")).display());
    Ok(())
}

// ---- ablate ----

fn default_ablations(matrices: &[KillMatrix]) -> Vec<AblationSpec> {
    let has = |s: Scheme| matrices.iter().any(|m| m.variants.iter().any(|v| v.scheme == Some(s)));
    let mut specs = Vec::new();
    for s in [Scheme::Operator, Scheme::Llm] {
        if has(s) {
            specs.push(AblationSpec::SchemeExclude { scheme: s });
        }
    }
    for fraction in [0.25, 0.5, 0.75, 1.0] {
        specs.push(AblationSpec::Budget { fraction, trials: 20 });
    }
    specs
}

fn ablate(ctx: &Ctx, run: Option<String>) -> CliResult {
    let run_id = resolve_run(ctx, run)?;
    let matrices = sample_rows(&load_matrices(ctx.store(), &run_id)?);
    if matrices.is_empty() {
        return Err(CliError::Domain(format!("run {run_id} has no kill matrices")));
    }
    let specs = match ctx.config().ok().map(|c| c.ablations.clone()) {
        Some(s) if !s.is_empty() => s,
        _ => default_ablations(&matrices),
    };
    println!("baseline comp@1 {:.3}", crate::metrics::comp_at_1(&matrices));
    let mut rows: Vec<AblationRow> = Vec::new();
    for spec in &specs {
        let row = run_ablation(&matrices, spec, ctx.global.seed)?;
        println!("{:<32} mean {:.3} std {:.3} trials {}", row.label, row.mean, row.std, row.trials);
        rows.push(row);
    }
    write_json(&run_dir(ctx.store(), &run_id).join("ablation.json"), &rows)
}

// ---- select ----

fn provider(cfg: &Config) -> Box<dyn EmbeddingProvider> {
    match &cfg.embedding {
        EmbeddingConfig::Trigram => Box::new(TrigramHashProvider),
        EmbeddingConfig::Http {
            endpoint,
            auth_env_var,
            model,
        } => Box::new(HttpEmbeddingProvider {
            endpoint: endpoint.clone(),
            auth_env_var: auth_env_var.clone(),
            model: model.clone(),
            timeout: std::time::Duration::from_secs(60),
            backend: Box::new(UreqBackend),
        }),
    }
}

fn select(ctx: &Ctx, count: Option<usize>) -> CliResult {
    let cfg = ctx.config()?;
    cfg.selection.validate()?;
    let path = ctx.store().join("scan.json");
    if !path.is_file() {
        return Err(CliError::Domain("no scan results in store; run scan first".into()));
    }
    let entries: Vec<ScanEntry> = read_json(&path)?;
    let mut by_language: BTreeMap<String, Vec<MethodRecord>> = BTreeMap::new();
    for e in entries {
        by_language.entry(e.language).or_default().push(e.method);
    }
    for group in by_language.values_mut() {
        *group = filter_candidate_methods(group, &cfg.selection);
    }
    let want = count.unwrap_or(cfg.selection.target_count);
    let mut chosen = Vec::new();
    for (language, group) in &by_language {
        let headers: Vec<String> = group.iter().map(|m| m.signature.clone()).collect();
        let vectors = embed_headers(&headers, provider(cfg).as_ref())?;
        for i in farthest_first_select(&vectors, want)? {
            println!("{language} {}", group[i].method_id);
            chosen.push(group[i].method_id.clone());
        }
    }
    write_json(&ctx.store().join("selection.json"), &chosen)
}

// ---- repair-env ----

fn repair_env(ctx: &Ctx, project: &Path, check: &str, max_rounds: Option<usize>) -> CliResult {
    let cfg = ctx.config()?;
    let client = client(cfg)?.ok_or_else(|| CliError::Usage("repair-env needs a transport".into()))?;
    let spec = RunnerSpec::process(project, check, cfg.runner.timeout_ms);
    let rounds = max_rounds.unwrap_or(cfg.repair.max_rounds);
    let report = environment_repair_loop(project, &spec, &client, &cfg.repair.allowlist, rounds)?;
    let name = format!("repair-{}.json", file_name(project));
    write_json(&ctx.store().join(name), &report)?;
    println!(
        "repair {} after {} rounds, {} edits",
        if report.success { "succeeded" } else { "failed" },
        report.rounds.len(),
        report.edit_count()
    );
    if report.success {
        Ok(())
    } else {
        Err(CliError::Domain("environment still failing after the last round".into()))
    }
}

// ---- llm-prompts ----

fn llm_prompts(ctx: &Ctx) -> CliResult {
    let cfg = ctx.config()?;
    for task in load_corpus(cfg)? {
        for t in select_llm_mutation_targets(&task.unit, &task.method) {
            let original = task.unit.text.lines().nth(t.line - 1).unwrap_or("").trim().to_string();
            let req = llm_prompt(&t, &original);
            let line = serde_json::json!({
                "task_id": task.task_id,
                "line": t.line,
                "original": original,
                "id": req.request_id,
                "request": {
                    "max_output_chars": req.max_output_chars,
                    "system": req.system,
                    "temperature_hint": req.temperature_hint,
                    "user": req.user,
                },
            });
            println!("{}", store::canonical_line(&line));
        }
    }
    Ok(())
}
