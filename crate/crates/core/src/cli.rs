//! Command-line front end.
//!
//! Every command works inside one run directory (see [`RunDir`]) and, when
//! it succeeds, writes exactly one manifest and prints its path. Corpus
//! commands write a [`CorpusManifest`] under `manifests/`; `eval`, `matrix`
//! and `export-config` write a [`RunManifest`] next to their report.
//!
//! Exit codes: 0 success, 1 runtime or data error, 2 configuration error.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::corpus::{
    atomic_write, canonical_json, dedup_exact, mix, now_utc, sample_records, truncate_to_budget, Corpus,
    CorpusManifest, CorpusRecord, MixMode, MixParent, Origin, Recipe, RecordSource, RunDir, StoreError,
};
use crate::eval::{
    build_vocab, corpus_perplexity, export_trainer_config, run_matrix, train_ngram, EvalError, NgramConfig,
    TrainerKind,
};
use crate::gateway::{DecodingParams, Gateway, ModelEndpoint};
use crate::ingest::{chunk_note, count_ref_tokens, load_notes, NoteFilter, NoteFormat, NoteType, DEFAULT_CHUNK_BUDGET};
use crate::prompting::{PromptRegistry, PromptTemplate};
use crate::synthesis::{rephrase_corpus, BoilerplateRules, QualityConfig, SynthesisError, SynthesisJob};

#[derive(Debug, Parser)]
#[command(name = "rephrase", version, about = "Rephrase clinical notes into budgeted synthetic corpora and evaluate them")]
pub struct Cli {
    /// Run directory holding chunks/, corpora/, manifests/ and reports/.
    #[arg(long, visible_alias = "out", global = true)]
    pub run_dir: Option<PathBuf>,
    /// JSON run configuration; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Validate and print the plan without touching the network or disk.
    #[arg(long, global = true)]
    pub dry_run: bool,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load notes, split sentences and pack them into chunks.
    Ingest(IngestArgs),
    /// Rephrase a chunk list with one prompt on one model.
    Synthesize(SynthesizeArgs),
    /// Combine budgeted prefixes of several corpora.
    Mix(MixArgs),
    /// Keep the longest prefix within a token budget.
    Truncate(TruncateArgs),
    /// Uniformly sample records.
    Sample(SampleArgs),
    /// Drop exact duplicate records.
    Dedup(DedupArgs),
    /// Perplexity of one trained n-gram model on test corpora.
    Eval(EvalArgs),
    /// Train × test perplexity grid plus figure tables.
    Matrix(MatrixArgs),
    /// Write a neural trainer config.
    ExportConfig(ExportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
#[value(rename_all = "snake_case")]
pub enum NoteTypeArg {
    DischargeSummary,
    RadiologyReport,
    Other,
}

impl From<NoteTypeArg> for NoteType {
    fn from(v: NoteTypeArg) -> Self {
        match v {
            NoteTypeArg::DischargeSummary => NoteType::DischargeSummary,
            NoteTypeArg::RadiologyReport => NoteType::RadiologyReport,
            NoteTypeArg::Other => NoteType::Other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum FormatArg {
    Jsonl,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum MixModeArg {
    Concat,
    Interleave,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KindArg {
    Causal,
    Masked,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[arg(long)]
    pub input: PathBuf,
    /// Defaults to the input file extension.
    #[arg(long, value_enum)]
    pub format: Option<FormatArg>,
    #[arg(long)]
    pub filter_year_min: Option<i32>,
    #[arg(long)]
    pub filter_year_max: Option<i32>,
    #[arg(long, value_enum)]
    pub note_type: Option<NoteTypeArg>,
    #[arg(long)]
    pub chunk_budget: Option<usize>,
    /// Corpus id; defaults to the input file stem.
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct SynthesizeArgs {
    /// Id of an ingested chunk list.
    #[arg(long)]
    pub chunks: String,
    #[arg(long)]
    pub prompt: String,
    /// Model id; looked up among the configured endpoints unless --base-url is given.
    #[arg(long)]
    pub model: String,
    #[arg(long)]
    pub base_url: Option<String>,
    #[arg(long)]
    pub api_key_env: Option<String>,
    #[arg(long)]
    pub max_in_flight: Option<usize>,
    #[arg(long)]
    pub budget_tokens: Option<u64>,
    #[arg(long)]
    pub temperature: Option<f64>,
    #[arg(long)]
    pub top_p: Option<f64>,
    #[arg(long)]
    pub max_new_tokens: Option<u32>,
    /// Record every HTTP attempt; without a path, `corpora/<id>.transcript.jsonl`.
    #[arg(long)]
    pub capture: Option<Option<PathBuf>>,
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct MixArgs {
    /// `corpus_id@budget_tokens`, repeatable; order matters for concat.
    #[arg(long = "parent", required = true)]
    pub parents: Vec<String>,
    #[arg(long, value_enum, default_value = "concat")]
    pub mode: MixModeArg,
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct TruncateArgs {
    #[arg(long)]
    pub corpus: String,
    #[arg(long)]
    pub budget_tokens: u64,
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct SampleArgs {
    #[arg(long)]
    pub corpus: String,
    #[arg(short = 'n', long)]
    pub n: usize,
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args)]
pub struct DedupArgs {
    #[arg(long)]
    pub corpus: String,
    #[arg(long)]
    pub id: Option<String>,
}

#[derive(Debug, Args, Clone)]
pub struct NgramArgs {
    #[arg(long)]
    pub order: Option<usize>,
    #[arg(long)]
    pub discount: Option<f64>,
    #[arg(long)]
    pub min_count: Option<usize>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub train: String,
    #[arg(long = "test", required = true)]
    pub tests: Vec<String>,
    #[command(flatten)]
    pub ngram: NgramArgs,
}

#[derive(Debug, Args)]
pub struct MatrixArgs {
    #[arg(long = "train", required = true)]
    pub trains: Vec<String>,
    #[arg(long = "test", required = true)]
    pub tests: Vec<String>,
    /// Real-only corpus for the augmentation comparison.
    #[arg(long)]
    pub baseline: Option<String>,
    /// Report file stem under reports/.
    #[arg(long, default_value = "matrix")]
    pub name: String,
    #[command(flatten)]
    pub ngram: NgramArgs,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long, value_enum)]
    pub kind: KindArg,
    /// Corpus whose manifest the trainer should read.
    #[arg(long)]
    pub corpus: Option<String>,
    /// Defaults to `reports/trainer-<kind>.json`.
    #[arg(long)]
    pub output: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Budgets {
    pub chunk_budget: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub corpus_budget: Option<u64>,
}

impl Default for Budgets {
    fn default() -> Self {
        Self {
            chunk_budget: DEFAULT_CHUNK_BUDGET,
            corpus_budget: None,
        }
    }
}

/// Contents of the `--config` file. Every field is optional.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub endpoints: Vec<ModelEndpoint>,
    /// Prompt ids this run may use; empty means any registered prompt.
    pub prompts: Vec<String>,
    pub custom_prompts: Vec<PromptTemplate>,
    pub budgets: Budgets,
    pub decoding: DecodingParams,
    pub quality: QualityConfig,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run_dir: Option<PathBuf>,
    pub ngram: NgramConfig,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let de = &mut serde_json::Deserializer::from_str(&text);
        serde_path_to_error::deserialize(de)
            .map_err(|e| CliError::Config(format!("{}: at {}: {}", path.display(), e.path(), e.inner())))
    }

    pub fn registry(&self) -> Result<PromptRegistry, CliError> {
        let mut reg = PromptRegistry::new();
        for t in &self.custom_prompts {
            reg.register(t.clone()).map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(reg)
    }

    /// Referenced prompt ids exist, budgets are positive, endpoints are sane.
    pub fn validate(&self) -> Result<(), CliError> {
        let reg = self.registry()?;
        for p in &self.prompts {
            reg.get(p).map_err(|e| CliError::Config(e.to_string()))?;
        }
        if self.budgets.chunk_budget < 1 {
            return Err(CliError::Config("budgets.chunk_budget must be at least 1".into()));
        }
        if self.budgets.corpus_budget == Some(0) {
            return Err(CliError::Config("budgets.corpus_budget must be at least 1".into()));
        }
        for e in &self.endpoints {
            e.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        self.decoding.validate().map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Manifest of a command that produces reports rather than a corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunManifest {
    pub schema_version: u32,
    pub command: String,
    pub created_utc: String,
    pub tool_version: String,
    pub config: Value,
    pub inputs: Vec<String>,
    pub outputs: Vec<String>,
}

impl RunManifest {
    pub fn to_canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("manifest serializes"))
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Runtime(#[from] anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Runtime(_) => 1,
        }
    }
}

impl From<StoreError> for CliError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::InvalidId(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::InvalidDiscount(_)
            | EvalError::InvalidOrder
            | EvalError::DuplicateTrainSpec(_)
            | EvalError::DuplicateTestSpec(_) => CliError::Config(e.to_string()),
            other => CliError::Runtime(other.into()),
        }
    }
}

/// Parse `args` (program name first) and run; returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    run_with_output(args, &mut std::io::stdout())
}

pub fn run_with_output<I, T>(args: I, out: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return e.exit_code();
        }
    };
    match execute(&cli, out) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e:#}");
            e.exit_code()
        }
    }
}

struct Ctx {
    cfg: RunConfig,
    run: RunDir,
    seed: Option<u64>,
    dry_run: bool,
}

impl Ctx {
    fn run_dir(&self) -> Result<RunDir, CliError> {
        Ok(RunDir::create(self.run.root())?)
    }

    fn effective(&self, command: &str, args: Value) -> Value {
        json!({
            "command": command,
            "args": args,
            "run_config": serde_json::to_value(&self.cfg).expect("config serializes"),
            "seed": self.seed,
        })
    }
}

pub fn execute(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let mut cfg = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(dir) = &cli.run_dir {
        cfg.run_dir = Some(dir.clone());
    }
    cfg.validate()?;
    let root = cfg.run_dir.clone().unwrap_or_else(|| PathBuf::from("run"));
    let ctx = Ctx {
        seed: cfg.seed,
        cfg,
        run: RunDir::open(root),
        dry_run: cli.dry_run,
    };
    match &cli.command {
        Command::Ingest(a) => cmd_ingest(ctx, a, out),
        Command::Synthesize(a) => cmd_synthesize(ctx, a, out),
        Command::Mix(a) => cmd_mix(ctx, a, out),
        Command::Truncate(a) => cmd_truncate(ctx, a, out),
        Command::Sample(a) => cmd_sample(ctx, a, out),
        Command::Dedup(a) => cmd_dedup(ctx, a, out),
        Command::Eval(a) => cmd_eval(ctx, a, out),
        Command::Matrix(a) => cmd_matrix(ctx, a, out),
        Command::ExportConfig(a) => cmd_export_config(ctx, a, out),
    }
}

fn print(out: &mut dyn Write, line: impl std::fmt::Display) -> Result<(), CliError> {
    writeln!(out, "{line}").map_err(|e| CliError::Runtime(e.into()))
}

fn finish_corpus(ctx: &Ctx, corpus: &Corpus, mut manifest: CorpusManifest, config: Value, out: &mut dyn Write) -> Result<(), CliError> {
    manifest.config = Some(config);
    let run = ctx.run_dir()?;
    run.write_corpus(corpus)?;
    let path = run.write_manifest(&manifest)?;
    print(out, format!("{} records, {} tokens", corpus.len(), corpus.total_ref_tokens()))?;
    print(out, path.display())
}

fn check_id(id: &str) -> Result<(), CliError> {
    if id.is_empty() || id.contains(['/', '\\', '\0']) || id.starts_with('.') {
        return Err(CliError::Config(format!("invalid corpus id {id:?}")));
    }
    Ok(())
}

fn load_input(ctx: &Ctx, id: &str) -> Result<Corpus, CliError> {
    check_id(id)?;
    Ok(ctx.run.read_corpus(id)?)
}

fn cmd_ingest(ctx: Ctx, a: &IngestArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let format = match a.format {
        Some(FormatArg::Jsonl) => NoteFormat::Jsonl,
        Some(FormatArg::Csv) => NoteFormat::Csv,
        None => NoteFormat::from_path(&a.input).ok_or_else(|| {
            CliError::Config(format!("cannot infer format of {}; pass --format", a.input.display()))
        })?,
    };
    if let (Some(lo), Some(hi)) = (a.filter_year_min, a.filter_year_max) {
        if lo > hi {
            return Err(CliError::Config(format!("--filter-year-min {lo} exceeds --filter-year-max {hi}")));
        }
    }
    let filter = NoteFilter {
        note_type: a.note_type.map(NoteType::from),
        min_year: a.filter_year_min,
        max_year: a.filter_year_max,
    };
    let chunk_budget = a.chunk_budget.unwrap_or(ctx.cfg.budgets.chunk_budget);
    if chunk_budget < 1 {
        return Err(CliError::Config("--chunk-budget must be at least 1".into()));
    }
    if ctx.dry_run {
        print(out, format!("plan: ingest {} as {format:?} with {filter:?}, chunk budget {chunk_budget}", a.input.display()))?;
        return Ok(());
    }

    let loaded = load_notes(&a.input, format, &filter).map_err(|e| CliError::Runtime(e.into()))?;
    let id = a.id.clone().unwrap_or_else(|| loaded.corpus_id.clone());
    check_id(&id)?;
    let mut chunks = Vec::new();
    for note in &loaded.notes {
        chunks.extend(chunk_note(note, chunk_budget).map_err(|e| CliError::Runtime(e.into()))?);
    }
    let records = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| CorpusRecord {
            text: c.text.clone(),
            ref_tokens: count_ref_tokens(&c.text) as u64,
            origin: Origin {
                corpus_id: id.clone(),
                record_index: i,
            },
            source: RecordSource {
                note_id: c.note_id.clone(),
                chunk_id: c.chunk_id.clone(),
                prompt_id: None,
                model_id: None,
            },
        })
        .collect();
    let corpus = Corpus::new(id.clone(), records);
    let manifest = CorpusManifest::for_corpus(
        &corpus,
        Recipe::Ingested {
            source_path: a.input.display().to_string(),
            format,
            filter,
            chunk_budget,
            load_summary: loaded.summary,
        },
        now_utc(),
    );
    let config = ctx.effective(
        "ingest",
        json!({"input": a.input, "format": format, "chunk_budget": chunk_budget, "id": id}),
    );
    let s = loaded.summary;
    print(out, format!("notes: {} total, {} kept, {} filtered, {} malformed; {} chunks", s.total, s.kept, s.skipped, s.malformed, chunks.len()))?;
    ctx.run_dir()?.write_chunks(&id, &chunks)?;
    finish_corpus(&ctx, &corpus, manifest, config, out)
}

fn sanitize(s: &str) -> String {
    s.chars().map(|c| if c == '/' || c == '\\' || c == ':' { '_' } else { c }).collect()
}

fn cmd_synthesize(ctx: Ctx, a: &SynthesizeArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = &ctx.cfg;
    if !cfg.prompts.is_empty() && !cfg.prompts.contains(&a.prompt) {
        return Err(CliError::Config(format!("prompt {:?} is not among the configured prompts {:?}", a.prompt, cfg.prompts)));
    }
    let template = cfg.registry()?.get(&a.prompt).map_err(|e| CliError::Config(e.to_string()))?.clone();

    let mut endpoint = match (cfg.endpoints.iter().find(|e| e.model_id == a.model), &a.base_url) {
        (Some(e), _) => e.clone(),
        (None, Some(url)) => ModelEndpoint::new(&a.model, url),
        (None, None) => {
            return Err(CliError::Config(format!(
                "model {:?} has no configured endpoint; pass --base-url or add it to the config",
                a.model
            )))
        }
    };
    if let Some(url) = &a.base_url {
        endpoint.base_url = url.clone();
    }
    if let Some(k) = &a.api_key_env {
        endpoint.api_key_env = Some(k.clone());
    }
    if let Some(n) = a.max_in_flight {
        endpoint.max_in_flight = n;
    }
    endpoint.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let mut decoding = cfg.decoding.clone();
    if let Some(t) = a.temperature {
        decoding.temperature = t;
    }
    if let Some(p) = a.top_p {
        decoding.top_p = p;
    }
    if let Some(m) = a.max_new_tokens {
        decoding.max_new_tokens = m;
    }
    if ctx.seed.is_some() {
        decoding.seed = ctx.seed;
    }
    decoding.validate().map_err(|e| CliError::Config(e.to_string()))?;

    let budget_tokens = a
        .budget_tokens
        .or(cfg.budgets.corpus_budget)
        .ok_or_else(|| CliError::Config("--budget-tokens is required (or budgets.corpus_budget in the config)".into()))?;
    if budget_tokens < 1 {
        return Err(CliError::Config("--budget-tokens must be at least 1".into()));
    }
    check_id(&a.chunks)?;
    let id = a
        .id
        .clone()
        .unwrap_or_else(|| format!("{}.{}.{}", a.chunks, sanitize(&a.prompt), sanitize(&a.model)));
    check_id(&id)?;

    let chunks = ctx.run.read_chunks(&a.chunks)?;
    if ctx.dry_run {
        print(out, format!(
            "plan: rephrase up to {} chunks of {:?} with prompt {} on {} at {} (max {} in flight) until {budget_tokens} tokens -> {id}",
            chunks.len(), a.chunks, template.prompt_id, endpoint.model_id, endpoint.base_url, endpoint.max_in_flight
        ))?;
        return Ok(());
    }

    let run = ctx.run_dir()?;
    let capture = a.capture.as_ref().map(|p| p.clone().unwrap_or_else(|| run.root().join("corpora").join(format!("{id}.transcript.jsonl"))));
    let rt = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::Runtime(e.into()))?;
    let result = rt.block_on(async {
        let probe = Gateway::new();
        if !probe.healthcheck(&endpoint).await.reachable {
            return Err(SynthesisError::Unreachable {
                model_id: endpoint.model_id.clone(),
                base_url: endpoint.base_url.clone(),
            });
        }
        let gateway = match &capture {
            Some(path) => probe.with_capture(path)?,
            None => probe,
        };
        let job = SynthesisJob {
            corpus_id: id.clone(),
            parent_corpus_id: a.chunks.clone(),
            chunks: &chunks,
            template: &template,
            endpoint: &endpoint,
            decoding: decoding.clone(),
            budget_tokens,
            quality: cfg.quality.clone(),
            boilerplate: BoilerplateRules::default(),
            created_utc: now_utc(),
        };
        rephrase_corpus(&gateway, &job).await
    });
    let output = result.map_err(|e| match e {
        SynthesisError::ZeroBudget | SynthesisError::Config(_) => CliError::Config(e.to_string()),
        other => CliError::Runtime(other.into()),
    })?;

    let failed = output.records.iter().filter(|r| r.failure.is_some()).count();
    print(out, format!("{} requests, {failed} failed, {} accepted", output.records.len(), output.corpus.len()))?;
    let config = ctx.effective(
        "synthesize",
        json!({
            "chunks": a.chunks,
            "prompt": a.prompt,
            "endpoint": endpoint,
            "decoding": decoding,
            "budget_tokens": budget_tokens,
            "capture": capture,
            "id": id,
        }),
    );
    run.write_generations(&id, &output.records)?;
    finish_corpus(&ctx, &output.corpus, output.manifest, config, out)
}

fn parse_parent(spec: &str) -> Result<(String, u64), CliError> {
    let bad = || CliError::Config(format!("--parent {spec:?}: expected corpus_id@budget_tokens"));
    let (id, budget) = spec.rsplit_once('@').ok_or_else(bad)?;
    let budget: u64 = budget.parse().map_err(|_| bad())?;
    if budget < 1 {
        return Err(bad());
    }
    check_id(id)?;
    Ok((id.to_string(), budget))
}

fn cmd_mix(ctx: Ctx, a: &MixArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let specs: Vec<(String, u64)> = a.parents.iter().map(|p| parse_parent(p)).collect::<Result<_, _>>()?;
    let mode = match a.mode {
        MixModeArg::Concat => MixMode::Concat,
        MixModeArg::Interleave => MixMode::Interleave,
    };
    let seed = ctx.seed.unwrap_or(0);
    if ctx.dry_run {
        print(out, format!("plan: {mode} mix of {specs:?} with seed {seed}"))?;
        return Ok(());
    }
    let corpora: Vec<Corpus> = specs.iter().map(|(id, _)| load_input(&ctx, id)).collect::<Result<_, _>>()?;
    let pairs: Vec<(&Corpus, u64)> = corpora.iter().zip(&specs).map(|(c, (_, b))| (c, *b)).collect();
    let mut corpus = mix(&pairs, mode, seed).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(id) = &a.id {
        check_id(id)?;
        corpus = corpus.renamed(id.clone());
    }
    let manifest = CorpusManifest::for_corpus(
        &corpus,
        Recipe::Mixed {
            parents: specs
                .iter()
                .map(|(id, b)| MixParent {
                    corpus_id: id.clone(),
                    budget_tokens: *b,
                })
                .collect(),
            mode,
            seed,
        },
        now_utc(),
    );
    let config = ctx.effective("mix", json!({"parents": a.parents, "mode": mode, "id": corpus.corpus_id()}));
    finish_corpus(&ctx, &corpus, manifest, config, out)
}

fn cmd_truncate(ctx: Ctx, a: &TruncateArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if a.budget_tokens < 1 {
        return Err(CliError::Config("--budget-tokens must be at least 1".into()));
    }
    if ctx.dry_run {
        print(out, format!("plan: truncate {} to {} tokens", a.corpus, a.budget_tokens))?;
        return Ok(());
    }
    let parent = load_input(&ctx, &a.corpus)?;
    let mut corpus = truncate_to_budget(&parent, a.budget_tokens).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(id) = &a.id {
        check_id(id)?;
        corpus = corpus.renamed(id.clone());
    }
    let manifest = CorpusManifest::for_corpus(
        &corpus,
        Recipe::Truncated {
            parent: a.corpus.clone(),
            budget_tokens: a.budget_tokens,
        },
        now_utc(),
    );
    let config = ctx.effective("truncate", json!({"corpus": a.corpus, "budget_tokens": a.budget_tokens, "id": corpus.corpus_id()}));
    finish_corpus(&ctx, &corpus, manifest, config, out)
}

fn cmd_sample(ctx: Ctx, a: &SampleArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let seed = ctx.seed.unwrap_or(0);
    if ctx.dry_run {
        print(out, format!("plan: sample {} records of {} with seed {seed}", a.n, a.corpus))?;
        return Ok(());
    }
    let parent = load_input(&ctx, &a.corpus)?;
    let mut corpus = sample_records(&parent, a.n, seed).map_err(|e| CliError::Config(e.to_string()))?;
    if let Some(id) = &a.id {
        check_id(id)?;
        corpus = corpus.renamed(id.clone());
    }
    let manifest = CorpusManifest::for_corpus(
        &corpus,
        Recipe::Sampled {
            parent: a.corpus.clone(),
            n: a.n,
            seed,
        },
        now_utc(),
    );
    let config = ctx.effective("sample", json!({"corpus": a.corpus, "n": a.n, "id": corpus.corpus_id()}));
    finish_corpus(&ctx, &corpus, manifest, config, out)
}

fn cmd_dedup(ctx: Ctx, a: &DedupArgs, out: &mut dyn Write) -> Result<(), CliError> {
    if ctx.dry_run {
        print(out, format!("plan: drop exact duplicates from {}", a.corpus))?;
        return Ok(());
    }
    let parent = load_input(&ctx, &a.corpus)?;
    let (mut corpus, removed) = dedup_exact(&parent);
    if let Some(id) = &a.id {
        check_id(id)?;
        corpus = corpus.renamed(id.clone());
    }
    print(out, format!("removed {removed} duplicates"))?;
    let manifest = CorpusManifest::for_corpus(
        &corpus,
        Recipe::Deduplicated {
            parent: a.corpus.clone(),
            removed,
        },
        now_utc(),
    );
    let config = ctx.effective("dedup", json!({"corpus": a.corpus, "id": corpus.corpus_id()}));
    finish_corpus(&ctx, &corpus, manifest, config, out)
}

fn ngram_config(ctx: &Ctx, a: &NgramArgs) -> Result<NgramConfig, CliError> {
    let mut c = ctx.cfg.ngram;
    if let Some(o) = a.order {
        c.order = o;
    }
    if let Some(d) = a.discount {
        c.discount = d;
    }
    if let Some(m) = a.min_count {
        c.min_count = m;
    }
    if c.order < 1 {
        return Err(EvalError::InvalidOrder.into());
    }
    if !(c.discount > 0.0 && c.discount < 1.0) {
        return Err(EvalError::InvalidDiscount(c.discount).into());
    }
    Ok(c)
}

fn write_run_manifest(
    run: &RunDir,
    name: &str,
    command: &str,
    config: Value,
    inputs: Vec<String>,
    outputs: Vec<PathBuf>,
) -> Result<PathBuf, CliError> {
    let manifest = RunManifest {
        schema_version: crate::corpus::SCHEMA_VERSION,
        command: command.to_string(),
        created_utc: now_utc(),
        tool_version: env!("CARGO_PKG_VERSION").to_string(),
        config,
        inputs,
        outputs: outputs.iter().map(|p| p.display().to_string()).collect(),
    };
    let path = run.report_path(&format!("{name}.manifest.json"));
    atomic_write(&path, manifest.to_canonical_json().as_bytes())?;
    Ok(path)
}

fn cmd_eval(ctx: Ctx, a: &EvalArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ngram = ngram_config(&ctx, &a.ngram)?;
    for id in std::iter::once(&a.train).chain(&a.tests) {
        check_id(id)?;
    }
    if ctx.dry_run {
        print(out, format!("plan: train {ngram:?} on {} and score {:?}", a.train, a.tests))?;
        return Ok(());
    }
    for id in std::iter::once(&a.train).chain(&a.tests) {
        if !ctx.run.has_corpus(id) {
            return Err(CliError::Runtime(EvalError::MissingCorpus(id.clone()).into()));
        }
    }
    let train = ctx.run.read_corpus(&a.train)?;
    let model = train_ngram(&train, ngram.order, ngram.discount, build_vocab(&train, ngram.min_count)?)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(crate::eval::REPORT_HEADER).map_err(|e| CliError::Runtime(e.into()))?;
    for id in &a.tests {
        let r = corpus_perplexity(&model, &ctx.run.read_corpus(id)?)?;
        print(out, format!("{} on {id}: perplexity {:.4} over {} tokens, oov rate {:.4}", a.train, r.perplexity, r.token_count, r.oov_rate()))?;
        w.write_record([
            a.train.clone(),
            id.clone(),
            r.perplexity.to_string(),
            r.token_count.to_string(),
            r.oov_rate().to_string(),
            ngram.order.to_string(),
            ngram.discount.to_string(),
            ngram.min_count.to_string(),
        ])
        .map_err(|e| CliError::Runtime(e.into()))?;
    }
    let run = ctx.run_dir()?;
    let name = format!("eval.{}", a.train);
    let report = run.report_path(&format!("{name}.csv"));
    atomic_write(&report, &w.into_inner().map_err(|e| CliError::Runtime(anyhow::anyhow!("{e}")))?)?;
    let config = ctx.effective("eval", json!({"train": a.train, "tests": a.tests, "ngram": ngram}));
    let mut inputs = vec![a.train.clone()];
    inputs.extend(a.tests.iter().cloned());
    let path = write_run_manifest(&run, &name, "eval", config, inputs, vec![report])?;
    print(out, path.display())
}

fn cmd_matrix(ctx: Ctx, a: &MatrixArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let ngram = ngram_config(&ctx, &a.ngram)?;
    check_id(&a.name)?;
    if ctx.dry_run {
        print(out, format!("plan: {} x {} perplexity grid with {ngram:?}, baseline {:?}", a.trains.len(), a.tests.len(), a.baseline))?;
        return Ok(());
    }
    let report = run_matrix(&ctx.run, &a.trains, &a.tests, ngram, a.baseline.as_deref())?;
    let run = ctx.run_dir()?;
    let mut outputs = Vec::new();
    let mut put = |suffix: &str, body: String| -> Result<(), CliError> {
        let p = run.report_path(&format!("{}{suffix}", a.name));
        atomic_write(&p, body.as_bytes())?;
        outputs.push(p);
        Ok(())
    };
    put(".csv", report.to_csv())?;
    put(".fig1.csv", report.fig1_csv())?;
    if report.baseline.is_some() {
        put(".fig2.csv", report.fig2_csv()?)?;
    }
    put(".fig3.csv", report.fig3_csv(&ctx.run)?)?;
    for r in &report.rows {
        print(out, format!("{} on {}: {:.4}", r.train_corpus_id, r.test_set_id, r.perplexity))?;
    }
    let config = ctx.effective(
        "matrix",
        json!({"trains": a.trains, "tests": a.tests, "baseline": a.baseline, "name": a.name, "ngram": ngram}),
    );
    let mut inputs: Vec<String> = a.trains.iter().chain(&a.tests).cloned().collect();
    inputs.extend(a.baseline.iter().cloned());
    let path = write_run_manifest(&run, &a.name, "matrix", config, inputs, outputs)?;
    print(out, path.display())
}

fn cmd_export_config(ctx: Ctx, a: &ExportArgs, out: &mut dyn Write) -> Result<(), CliError> {
    let kind = match a.kind {
        KindArg::Causal => TrainerKind::Causal,
        KindArg::Masked => TrainerKind::Masked,
    };
    let manifest_ref = match &a.corpus {
        Some(id) => {
            check_id(id)?;
            let p = ctx.run.manifest_path(id);
            if !ctx.dry_run && !p.is_file() {
                return Err(CliError::Runtime(EvalError::MissingCorpus(id.clone()).into()));
            }
            Some(p.display().to_string())
        }
        None => None,
    };
    let output = a.output.clone().unwrap_or_else(|| ctx.run.report_path(&format!("trainer-{kind}.json")));
    if ctx.dry_run {
        print(out, format!("plan: write {kind} trainer config to {}", output.display()))?;
        return Ok(());
    }
    let run = ctx.run_dir()?;
    let cfg = export_trainer_config(kind, manifest_ref.as_deref(), &output)?;
    let config = ctx.effective("export-config", json!({"trainer": cfg}));
    let inputs = a.corpus.iter().cloned().collect();
    let path = write_run_manifest(&run, &format!("trainer-{kind}"), "export-config", config, inputs, vec![output])?;
    print(out, path.display())
}
