//! Chunk → prompt → completion orchestration into budgeted synthetic corpora.
//!
//! Every issued request produces exactly one [`GenerationRecord`], kept in
//! chunk order. Records that fail a quality check stay in the manifest but
//! their text is left out of the corpus.
//!
//! Requests are dispatched concurrently, but a chunk is only sent once it is
//! certain that the chunks before it cannot already have filled the budget:
//! an accepted output can hold at most `max_length_ratio × chunk tokens`
//! reference tokens, so the worst-case total of everything still in flight
//! is known. The set of requested chunks is therefore the same as for a
//! strictly sequential run.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::LazyLock;

use futures::stream::{FuturesUnordered, StreamExt};
use regex::Regex;
use serde::{Deserialize, Serialize};
use tracing::{info, warn};

use crate::corpus::{
    Corpus, CorpusManifest, CorpusRecord, GenerationSummary, ManifestNote, Origin, Recipe, RecordSource,
};
use crate::gateway::{Completion, DecodingParams, FinishReason, Gateway, GatewayError, ModelEndpoint};
use crate::ingest::{count_ref_tokens, Chunk};
use crate::prompting::{render_request, PromptTemplate};

#[derive(Debug, thiserror::Error)]
pub enum SynthesisError {
    #[error("token budget must be at least 1")]
    ZeroBudget,
    #[error("endpoint {model_id} at {base_url} is unreachable")]
    Unreachable { model_id: String, base_url: String },
    #[error(transparent)]
    Config(#[from] GatewayError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QualityFlag {
    Empty,
    Refusal,
    LengthRatioLow,
    LengthRatioHigh,
    Truncated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QualityConfig {
    pub min_length_ratio: f64,
    pub max_length_ratio: f64,
    /// Case-insensitive prefixes of the cleaned output that mark a refusal.
    pub refusal_prefixes: Vec<String>,
}

impl Default for QualityConfig {
    fn default() -> Self {
        Self {
            min_length_ratio: 0.3,
            max_length_ratio: 3.0,
            refusal_prefixes: ["I cannot", "I can't", "I'm sorry, but", "I am sorry, but", "I'm unable to"]
                .map(String::from)
                .to_vec(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationRecord {
    pub chunk_id: String,
    pub source_note_id: String,
    pub prompt_id: String,
    pub model_id: String,
    pub raw_text: String,
    pub clean_text: String,
    pub boilerplate_stripped: bool,
    pub quality_flags: BTreeSet<QualityFlag>,
    pub finish_reason: FinishReason,
    pub prompt_tokens: u64,
    pub completion_tokens: u64,
    pub usage_estimated: bool,
    pub clean_ref_tokens: u64,
    /// Set when the request itself failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

impl GenerationRecord {
    pub fn accepted(&self) -> bool {
        self.quality_flags.is_empty()
    }

    pub fn summary(&self) -> GenerationSummary {
        GenerationSummary {
            chunk_id: self.chunk_id.clone(),
            source_note_id: self.source_note_id.clone(),
            quality_flags: self.quality_flags.clone(),
            clean_ref_tokens: self.clean_ref_tokens,
            accepted: self.accepted(),
            failure: self.failure.clone(),
        }
    }
}

/// First-line patterns that mark model framing rather than content.
#[derive(Debug, Clone)]
pub struct BoilerplateRules {
    common: Vec<Regex>,
    families: Vec<(String, Vec<Regex>)>,
}

fn ci(pattern: &str) -> Regex {
    Regex::new(&format!("(?i){pattern}")).expect("boilerplate pattern")
}

impl Default for BoilerplateRules {
    fn default() -> Self {
        let here_is = r"^here(?: is|'s| are) (?:a|an|the|my|your)\b.*\b(?:paraphrase|paraphrased|paraphrasing|rephrased|rephrasing|rewrite|rewritten|version)\b.*$";
        let heading = r"^#{1,6}\s*(?:paraphrased?|rephrased?|rewritten)\b[^\n]*$";
        Self {
            common: vec![
                ci(r"^(?:sure|certainly|of course)\b[^\n]*:\s*$"),
                ci(here_is),
                ci(heading),
                ci(r"^\*\*(?:paraphrased?|rephrased?)\b[^\n]*\*\*:?\s*$"),
            ],
            families: vec![
                ("llama".into(), vec![ci(r"^here is .*(?:paraphrase|version)[^\n]*:\s*$")]),
                ("gemma".into(), vec![ci(r"^#{1,6}\s*paraphrased paragraph:?\s*$")]),
                ("qwen".into(), vec![ci(r"^assistant:[^\n]*$")]),
                ("mistral".into(), vec![]),
            ],
        }
    }
}

static DEFAULT_RULES: LazyLock<BoilerplateRules> = LazyLock::new(BoilerplateRules::default);

impl BoilerplateRules {
    fn patterns_for<'a>(&'a self, model_id: &str) -> impl Iterator<Item = &'a Regex> {
        let model = model_id.to_ascii_lowercase();
        let family: Vec<&Regex> = self
            .families
            .iter()
            .filter(|(f, _)| model.contains(f.as_str()))
            .flat_map(|(_, p)| p)
            .collect();
        self.common.iter().chain(family)
    }

    /// Remove leading framing lines and surrounding code fences until nothing
    /// more matches. Returns the cleaned text and whether anything was removed.
    pub fn strip(&self, raw_text: &str, model_id: &str) -> (String, bool) {
        let patterns: Vec<&Regex> = self.patterns_for(model_id).collect();
        let mut text = raw_text.trim();
        let mut stripped = false;
        loop {
            let (first, rest) = match text.split_once('\n') {
                Some((f, r)) => (f.trim_end_matches('\r'), r),
                None => (text, ""),
            };
            let first_trim = first.trim();
            if patterns.iter().any(|p| p.is_match(first_trim)) || is_fence(first_trim) {
                text = rest.trim();
                stripped = true;
                continue;
            }
            if let Some((body, last)) = text.rsplit_once('\n') {
                if last.trim() == "```" {
                    text = body.trim();
                    stripped = true;
                    continue;
                }
            }
            break;
        }
        (text.to_string(), stripped)
    }
}

fn is_fence(line: &str) -> bool {
    line.strip_prefix("```")
        .is_some_and(|lang| lang.chars().all(|c| c.is_alphanumeric() || c == '-' || c == '_'))
}

/// Strip boilerplate using the built-in rules.
pub fn strip_boilerplate(raw_text: &str, model_id: &str) -> (String, bool) {
    DEFAULT_RULES.strip(raw_text, model_id)
}

/// Quality flags for a record whose `clean_text`, `clean_ref_tokens` and
/// `finish_reason` are filled in.
pub fn validate_generation(record: &GenerationRecord, source_chunk: &Chunk, config: &QualityConfig) -> BTreeSet<QualityFlag> {
    let mut flags = BTreeSet::new();
    if record.finish_reason == FinishReason::Length {
        flags.insert(QualityFlag::Truncated);
    }
    let clean = record.clean_text.trim();
    if clean.is_empty() {
        flags.insert(QualityFlag::Empty);
        return flags;
    }
    let lowered = clean.to_lowercase();
    if config
        .refusal_prefixes
        .iter()
        .any(|p| lowered.starts_with(&p.to_lowercase()))
    {
        flags.insert(QualityFlag::Refusal);
    }
    let ratio = record.clean_ref_tokens as f64 / source_chunk.ref_token_count.max(1) as f64;
    if ratio < config.min_length_ratio {
        flags.insert(QualityFlag::LengthRatioLow);
    }
    if ratio > config.max_length_ratio {
        flags.insert(QualityFlag::LengthRatioHigh);
    }
    flags
}

/// Everything needed to rephrase one chunk list with one prompt on one model.
#[derive(Debug, Clone)]
pub struct SynthesisJob<'a> {
    pub corpus_id: String,
    /// Corpus whose records correspond one-to-one, in order, to `chunks`.
    pub parent_corpus_id: String,
    pub chunks: &'a [Chunk],
    pub template: &'a PromptTemplate,
    pub endpoint: &'a ModelEndpoint,
    pub decoding: DecodingParams,
    pub budget_tokens: u64,
    pub quality: QualityConfig,
    pub boilerplate: BoilerplateRules,
    pub created_utc: String,
}

#[derive(Debug, Clone)]
pub struct SynthesisOutput {
    pub records: Vec<GenerationRecord>,
    pub corpus: Corpus,
    pub manifest: CorpusManifest,
}

impl SynthesisOutput {
    pub fn accepted_tokens(&self) -> u64 {
        self.corpus.total_ref_tokens()
    }
}

fn make_record(job: &SynthesisJob<'_>, chunk: &Chunk, result: Result<Completion, GatewayError>) -> GenerationRecord {
    let mut record = GenerationRecord {
        chunk_id: chunk.chunk_id.clone(),
        source_note_id: chunk.note_id.clone(),
        prompt_id: job.template.prompt_id.clone(),
        model_id: job.endpoint.model_id.clone(),
        raw_text: String::new(),
        clean_text: String::new(),
        boilerplate_stripped: false,
        quality_flags: BTreeSet::new(),
        finish_reason: FinishReason::Error,
        prompt_tokens: 0,
        completion_tokens: 0,
        usage_estimated: false,
        clean_ref_tokens: 0,
        failure: None,
    };
    match result {
        Ok(c) => {
            let (clean, stripped) = job.boilerplate.strip(&c.output_text, &job.endpoint.model_id);
            record.clean_ref_tokens = count_ref_tokens(&clean) as u64;
            record.raw_text = c.output_text;
            record.clean_text = clean;
            record.boilerplate_stripped = stripped;
            record.finish_reason = c.finish_reason;
            record.prompt_tokens = c.prompt_tokens;
            record.completion_tokens = c.completion_tokens;
            record.usage_estimated = c.usage_estimated;
            record.quality_flags = validate_generation(&record, chunk, &job.quality);
        }
        Err(e) => {
            warn!(chunk_id = %chunk.chunk_id, error = %e, "request failed");
            record.quality_flags.insert(QualityFlag::Empty);
            record.failure = Some(e.to_string());
        }
    }
    record
}

/// Largest number of reference tokens an accepted output for `chunk` can hold.
fn acceptance_bound(chunk: &Chunk, quality: &QualityConfig) -> u64 {
    let bound = quality.max_length_ratio * chunk.ref_token_count as f64;
    if bound.is_finite() {
        bound.ceil() as u64 + 1
    } else {
        u64::MAX / 4
    }
}

/// Rephrase `job.chunks` in order until the accepted token total reaches the budget.
pub async fn rephrase_corpus(gateway: &Gateway, job: &SynthesisJob<'_>) -> Result<SynthesisOutput, SynthesisError> {
    if job.budget_tokens < 1 {
        return Err(SynthesisError::ZeroBudget);
    }
    job.endpoint.validate()?;
    job.decoding.validate()?;

    let health = gateway.healthcheck(job.endpoint).await;
    if !health.reachable {
        return Err(SynthesisError::Unreachable {
            model_id: job.endpoint.model_id.clone(),
            base_url: job.endpoint.base_url.clone(),
        });
    }
    if !health.model_listed {
        warn!(model = %job.endpoint.model_id, "model not listed by endpoint; continuing");
    }

    let chunks = job.chunks;
    let window = job.endpoint.max_in_flight.saturating_mul(2).max(1);
    let mut in_flight = FuturesUnordered::new();
    let mut finished: BTreeMap<usize, Result<Completion, GatewayError>> = BTreeMap::new();
    let mut records = Vec::new();
    let mut next = 0usize;
    let mut accepted_total = 0u64;
    let mut unresolved_bound = 0u64;

    loop {
        while next < chunks.len()
            && in_flight.len() < window
            && accepted_total.saturating_add(unresolved_bound) < job.budget_tokens
        {
            let index = next;
            let request = render_request(job.template, &chunks[index], &job.decoding);
            unresolved_bound = unresolved_bound.saturating_add(acceptance_bound(&chunks[index], &job.quality));
            in_flight.push(async move { (index, gateway.complete(&request, job.endpoint).await) });
            next += 1;
        }
        let Some((index, result)) = in_flight.next().await else {
            break;
        };
        finished.insert(index, result);
        while let Some(result) = finished.remove(&records.len()) {
            let chunk = &chunks[records.len()];
            unresolved_bound -= acceptance_bound(chunk, &job.quality);
            let record = make_record(job, chunk, result);
            if record.accepted() {
                accepted_total += record.clean_ref_tokens;
            }
            records.push(record);
        }
    }
    debug_assert!(finished.is_empty());
    info!(
        corpus = %job.corpus_id,
        requested = records.len(),
        accepted_tokens = accepted_total,
        "synthesis finished"
    );

    let corpus_records = records
        .iter()
        .enumerate()
        .filter(|(_, r)| r.accepted())
        .map(|(i, r)| CorpusRecord {
            text: r.clean_text.clone(),
            ref_tokens: r.clean_ref_tokens,
            origin: Origin {
                corpus_id: job.parent_corpus_id.clone(),
                record_index: i,
            },
            source: RecordSource {
                note_id: r.source_note_id.clone(),
                chunk_id: r.chunk_id.clone(),
                prompt_id: Some(r.prompt_id.clone()),
                model_id: Some(r.model_id.clone()),
            },
        })
        .collect();
    let corpus = Corpus::new(job.corpus_id.clone(), corpus_records);

    let mut manifest = CorpusManifest::for_corpus(
        &corpus,
        Recipe::Synthesized {
            parent: job.parent_corpus_id.clone(),
            prompt_id: job.template.prompt_id.clone(),
            model_id: job.endpoint.model_id.clone(),
            decoding: job.decoding.clone(),
            budget_tokens: job.budget_tokens,
            quality: job.quality.clone(),
        },
        job.created_utc.clone(),
    );
    manifest.token_totals.prompt_tokens = Some(records.iter().map(|r| r.prompt_tokens).sum());
    manifest.token_totals.completion_tokens = Some(records.iter().map(|r| r.completion_tokens).sum());
    if accepted_total < job.budget_tokens {
        manifest.notes.insert(ManifestNote::BudgetUnmet);
    }
    manifest.generations = records.iter().map(GenerationRecord::summary).collect();

    Ok(SynthesisOutput {
        records,
        corpus,
        manifest,
    })
}
