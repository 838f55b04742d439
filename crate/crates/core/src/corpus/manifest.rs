//! Corpus manifests.
//!
//! A manifest names the corpus, the recipe that produced it and the corpora
//! it was derived from. Manifests are written as canonical JSON: keys sorted
//! at every level, two-space indentation, shortest round-trip float
//! formatting and a trailing newline, so that re-writing a parsed manifest
//! reproduces the input bytes.

use std::collections::{BTreeMap, BTreeSet};
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::{Corpus, MixMode};
use crate::gateway::DecodingParams;
use crate::ingest::{LoadSummary, NoteFilter, NoteFormat};
use crate::synthesis::{QualityConfig, QualityFlag};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum ManifestError {
    #[error("cannot access manifest {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest schema violation at {pointer}: {message}")]
    Parse { pointer: String, message: String },
    #[error("unsupported manifest schema_version {0} (this build reads {SCHEMA_VERSION})")]
    SchemaVersion(u32),
    #[error("manifest {corpus_id:?} references missing parent {parent:?}")]
    MissingParent { corpus_id: String, parent: String },
    #[error("manifest lineage contains a cycle through {0:?}")]
    Cycle(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixParent {
    pub corpus_id: String,
    pub budget_tokens: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Recipe {
    Ingested {
        source_path: String,
        format: NoteFormat,
        filter: NoteFilter,
        chunk_budget: usize,
        load_summary: LoadSummary,
    },
    Synthesized {
        parent: String,
        prompt_id: String,
        model_id: String,
        decoding: DecodingParams,
        budget_tokens: u64,
        quality: QualityConfig,
    },
    Truncated {
        parent: String,
        budget_tokens: u64,
    },
    Sampled {
        parent: String,
        n: usize,
        seed: u64,
    },
    Deduplicated {
        parent: String,
        removed: usize,
    },
    Mixed {
        parents: Vec<MixParent>,
        mode: MixMode,
        seed: u64,
    },
}

impl Recipe {
    pub fn parents(&self) -> Vec<&str> {
        match self {
            Recipe::Ingested { .. } => vec![],
            Recipe::Synthesized { parent, .. }
            | Recipe::Truncated { parent, .. }
            | Recipe::Sampled { parent, .. }
            | Recipe::Deduplicated { parent, .. } => vec![parent.as_str()],
            Recipe::Mixed { parents, .. } => parents.iter().map(|p| p.corpus_id.as_str()).collect(),
        }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            Recipe::Ingested { .. } => "ingested",
            Recipe::Synthesized { .. } => "synthesized",
            Recipe::Truncated { .. } => "truncated",
            Recipe::Sampled { .. } => "sampled",
            Recipe::Deduplicated { .. } => "deduplicated",
            Recipe::Mixed { .. } => "mixed",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ManifestNote {
    EmptyResult,
    BudgetUnmet,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TokenTotals {
    pub records: usize,
    pub ref_tokens: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_tokens: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub completion_tokens: Option<u64>,
}

/// Per-request provenance line of a synthesized corpus, kept for every
/// issued request whether or not its output was accepted.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenerationSummary {
    pub chunk_id: String,
    pub source_note_id: String,
    pub quality_flags: BTreeSet<QualityFlag>,
    pub clean_ref_tokens: u64,
    pub accepted: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub failure: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub corpus_id: String,
    pub created_utc: String,
    pub recipe: Recipe,
    pub token_totals: TokenTotals,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub tool_version: String,
    #[serde(default, skip_serializing_if = "BTreeSet::is_empty")]
    pub notes: BTreeSet<ManifestNote>,
    /// Effective run configuration, when produced by the command line tool.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config: Option<Value>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub generations: Vec<GenerationSummary>,
}

impl CorpusManifest {
    /// Manifest for `corpus` built by `recipe`. An empty corpus is noted as such.
    pub fn for_corpus(corpus: &Corpus, recipe: Recipe, created_utc: impl Into<String>) -> Self {
        let seed = match &recipe {
            Recipe::Sampled { seed, .. } | Recipe::Mixed { seed, .. } => Some(*seed),
            Recipe::Synthesized { decoding, .. } => decoding.seed,
            _ => None,
        };
        let mut notes = BTreeSet::new();
        if corpus.is_empty() {
            notes.insert(ManifestNote::EmptyResult);
        }
        Self {
            schema_version: SCHEMA_VERSION,
            corpus_id: corpus.corpus_id().to_string(),
            created_utc: created_utc.into(),
            recipe,
            token_totals: TokenTotals {
                records: corpus.len(),
                ref_tokens: corpus.total_ref_tokens(),
                prompt_tokens: None,
                completion_tokens: None,
            },
            seed,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            notes,
            config: None,
            generations: Vec::new(),
        }
    }

    pub fn to_canonical_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("manifest serializes"))
    }

    pub fn from_json(text: &str) -> Result<Self, ManifestError> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let manifest: Self = serde_path_to_error::deserialize(de).map_err(|e| ManifestError::Parse {
            pointer: json_pointer(e.path()),
            message: e.inner().to_string(),
        })?;
        if manifest.schema_version != SCHEMA_VERSION {
            return Err(ManifestError::SchemaVersion(manifest.schema_version));
        }
        Ok(manifest)
    }
}

fn json_pointer(path: &serde_path_to_error::Path) -> String {
    use serde_path_to_error::Segment;
    let mut out = String::new();
    for seg in path.iter() {
        out.push('/');
        match seg {
            Segment::Seq { index } => out.push_str(&index.to_string()),
            Segment::Map { key } => out.push_str(&key.replace('~', "~0").replace('/', "~1")),
            Segment::Enum { variant } => out.push_str(variant),
            Segment::Unknown => out.push('?'),
        }
    }
    if out.is_empty() {
        out.push('/');
    }
    out
}

fn sort_keys(v: &Value) -> Value {
    match v {
        Value::Object(map) => {
            let sorted: BTreeMap<_, _> = map.iter().map(|(k, v)| (k.clone(), sort_keys(v))).collect();
            Value::Object(sorted.into_iter().collect())
        }
        Value::Array(items) => Value::Array(items.iter().map(sort_keys).collect()),
        other => other.clone(),
    }
}

/// Sorted-key, pretty-printed JSON with a trailing newline.
pub fn canonical_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(&sort_keys(v)).expect("value serializes");
    s.push('\n');
    s
}

pub fn now_utc() -> String {
    let now = std::env::var("SOURCE_DATE_EPOCH")
        .ok()
        .and_then(|s| s.trim().parse::<i64>().ok())
        .and_then(|secs| chrono::DateTime::from_timestamp(secs, 0))
        .unwrap_or_else(chrono::Utc::now);
    now.format("%Y-%m-%dT%H:%M:%SZ").to_string()
}

/// Anything that can look up a manifest by corpus id.
pub trait ManifestSource {
    fn manifest(&self, corpus_id: &str) -> Result<Option<CorpusManifest>, ManifestError>;
}

impl ManifestSource for BTreeMap<String, CorpusManifest> {
    fn manifest(&self, corpus_id: &str) -> Result<Option<CorpusManifest>, ManifestError> {
        Ok(self.get(corpus_id).cloned())
    }
}

/// The ancestor DAG of one corpus, keyed by corpus id.
#[derive(Debug, Clone)]
pub struct Lineage {
    pub root: String,
    pub nodes: BTreeMap<String, CorpusManifest>,
}

impl Lineage {
    /// Ids of ancestors whose recipe is `ingested`.
    pub fn sources(&self) -> Vec<&str> {
        self.nodes
            .values()
            .filter(|m| matches!(m.recipe, Recipe::Ingested { .. }))
            .map(|m| m.corpus_id.as_str())
            .collect()
    }

    pub fn prompt_ids(&self) -> BTreeSet<&str> {
        self.nodes
            .values()
            .filter_map(|m| match &m.recipe {
                Recipe::Synthesized { prompt_id, .. } => Some(prompt_id.as_str()),
                _ => None,
            })
            .collect()
    }

    pub fn model_ids(&self) -> BTreeSet<&str> {
        self.nodes
            .values()
            .filter_map(|m| match &m.recipe {
                Recipe::Synthesized { model_id, .. } => Some(model_id.as_str()),
                _ => None,
            })
            .collect()
    }
}

/// Resolve the full ancestor DAG of `corpus_id`.
pub fn lineage(store: &impl ManifestSource, corpus_id: &str) -> Result<Lineage, ManifestError> {
    fn visit(
        store: &impl ManifestSource,
        id: &str,
        child: Option<&str>,
        on_path: &mut Vec<String>,
        nodes: &mut BTreeMap<String, CorpusManifest>,
    ) -> Result<(), ManifestError> {
        if on_path.iter().any(|p| p == id) {
            return Err(ManifestError::Cycle(id.to_string()));
        }
        if nodes.contains_key(id) {
            return Ok(());
        }
        let manifest = store.manifest(id)?.ok_or_else(|| ManifestError::MissingParent {
            corpus_id: child.unwrap_or(id).to_string(),
            parent: id.to_string(),
        })?;
        on_path.push(id.to_string());
        let parents: Vec<String> = manifest.recipe.parents().into_iter().map(String::from).collect();
        for p in &parents {
            visit(store, p, Some(id), on_path, nodes)?;
        }
        on_path.pop();
        nodes.insert(id.to_string(), manifest);
        Ok(())
    }

    let mut nodes = BTreeMap::new();
    visit(store, corpus_id, None, &mut Vec::new(), &mut nodes)?;
    Ok(Lineage {
        root: corpus_id.to_string(),
        nodes,
    })
}

/// Check that every ancestor of `manifest` exists and the graph is acyclic.
pub fn validate_lineage(store: &impl ManifestSource, manifest: &CorpusManifest) -> Result<(), ManifestError> {
    for parent in manifest.recipe.parents() {
        if parent == manifest.corpus_id {
            return Err(ManifestError::Cycle(parent.to_string()));
        }
        lineage(store, parent).map_err(|e| match e {
            ManifestError::MissingParent { parent: p, .. } if p == parent => ManifestError::MissingParent {
                corpus_id: manifest.corpus_id.clone(),
                parent: p,
            },
            other => other,
        })?;
    }
    Ok(())
}
