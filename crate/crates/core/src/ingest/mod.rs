//! Note loading, sentence segmentation and token-bounded chunking.

mod chunk;
mod segment;
mod tokens;

use std::collections::HashSet;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use tracing::warn;

pub use chunk::{chunk_note, coalesce_chunks, Chunk, DEFAULT_CHUNK_BUDGET};
pub use segment::{reconstruct, split_sentences, split_text, Sentence, ABBREVIATIONS};
pub use tokens::{count_ref_tokens, ref_tokens, RefTokens};

#[derive(Debug, thiserror::Error)]
pub enum IngestError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("duplicate note_id {note_id:?} at record {record}")]
    DuplicateNoteId { note_id: String, record: usize },
    #[error("chunk budget must be at least 1, got {0}")]
    InvalidChunkBudget(usize),
    #[error("unknown note type {0:?} (expected discharge_summary, radiology_report or other)")]
    UnknownNoteType(String),
    #[error("unknown note format {0:?} (expected jsonl or csv)")]
    UnknownFormat(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoteType {
    DischargeSummary,
    RadiologyReport,
    Other,
}

impl NoteType {
    pub const ALL: [NoteType; 3] = [Self::DischargeSummary, Self::RadiologyReport, Self::Other];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::DischargeSummary => "discharge_summary",
            Self::RadiologyReport => "radiology_report",
            Self::Other => "other",
        }
    }

    /// Lenient mapping used for record fields: anything unrecognised is `Other`.
    fn from_record(s: &str) -> Self {
        s.parse().unwrap_or(Self::Other)
    }
}

impl fmt::Display for NoteType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for NoteType {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|t| t.as_str() == s.trim())
            .ok_or_else(|| IngestError::UnknownNoteType(s.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SourceNote {
    pub note_id: String,
    pub text: String,
    pub note_type: NoteType,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date_year: Option<i32>,
    pub corpus_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum NoteFormat {
    Jsonl,
    Csv,
}

impl NoteFormat {
    /// Guess the format from a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        match path.extension()?.to_str()?.to_ascii_lowercase().as_str() {
            "jsonl" | "ndjson" => Some(Self::Jsonl),
            "csv" => Some(Self::Csv),
            _ => None,
        }
    }
}

impl FromStr for NoteFormat {
    type Err = IngestError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "jsonl" => Ok(Self::Jsonl),
            "csv" => Ok(Self::Csv),
            _ => Err(IngestError::UnknownFormat(s.to_string())),
        }
    }
}

/// Metadata filter applied while loading. Notes without a `date_year` never
/// pass a year bound.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NoteFilter {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub note_type: Option<NoteType>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min_year: Option<i32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max_year: Option<i32>,
}

impl NoteFilter {
    pub fn accepts(&self, note: &SourceNote) -> bool {
        if self.note_type.is_some_and(|t| t != note.note_type) {
            return false;
        }
        if self.min_year.is_none() && self.max_year.is_none() {
            return true;
        }
        let Some(year) = note.date_year else {
            return false;
        };
        self.min_year.is_none_or(|lo| year >= lo) && self.max_year.is_none_or(|hi| year <= hi)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadSummary {
    pub total: usize,
    pub kept: usize,
    pub skipped: usize,
    pub malformed: usize,
}

#[derive(Debug, Clone)]
pub struct LoadedNotes {
    pub corpus_id: String,
    pub notes: Vec<SourceNote>,
    pub summary: LoadSummary,
}

#[derive(Deserialize)]
struct RawNote {
    note_id: String,
    text: String,
    #[serde(default)]
    note_type: Option<String>,
    #[serde(default)]
    date_year: Option<i32>,
}

/// Load a note file. The corpus id is the file stem.
///
/// Malformed records are skipped with a warning; a repeated `note_id` among
/// well-formed records aborts the load.
pub fn load_notes(
    path: &Path,
    format: NoteFormat,
    filter: &NoteFilter,
) -> Result<LoadedNotes, IngestError> {
    let corpus_id = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| "notes".to_string());
    let io_err = |source| IngestError::Io {
        path: path.to_path_buf(),
        source,
    };
    let file = File::open(path).map_err(io_err)?;

    let raw: Vec<Result<RawNote, String>> = match format {
        NoteFormat::Jsonl => {
            let mut out = Vec::new();
            for line in BufReader::new(file).lines() {
                let line = line.map_err(io_err)?;
                if line.trim().is_empty() {
                    continue;
                }
                out.push(serde_json::from_str::<RawNote>(&line).map_err(|e| e.to_string()));
            }
            out
        }
        NoteFormat::Csv => {
            let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(file);
            let mut out = Vec::new();
            for row in reader.deserialize::<RawNote>() {
                match row {
                    Ok(note) => out.push(Ok(note)),
                    Err(e) => {
                        let message = e.to_string();
                        match e.into_kind() {
                            csv::ErrorKind::Io(source) => return Err(io_err(source)),
                            _ => out.push(Err(message)),
                        }
                    }
                }
            }
            out
        }
    };

    let mut summary = LoadSummary::default();
    let mut seen = HashSet::new();
    let mut notes = Vec::new();
    for (record, parsed) in raw.into_iter().enumerate() {
        summary.total += 1;
        let raw = match parsed {
            Ok(r) if !r.text.trim().is_empty() && !r.note_id.is_empty() => r,
            Ok(_) => {
                warn!(record, "skipping record with empty note_id or text");
                summary.malformed += 1;
                continue;
            }
            Err(e) => {
                warn!(record, error = %e, "skipping malformed record");
                summary.malformed += 1;
                continue;
            }
        };
        if !seen.insert(raw.note_id.clone()) {
            return Err(IngestError::DuplicateNoteId {
                note_id: raw.note_id,
                record,
            });
        }
        let note = SourceNote {
            note_id: raw.note_id,
            text: raw.text,
            note_type: raw
                .note_type
                .as_deref()
                .map_or(NoteType::Other, NoteType::from_record),
            date_year: raw.date_year,
            corpus_id: corpus_id.clone(),
        };
        if filter.accepts(&note) {
            summary.kept += 1;
            notes.push(note);
        } else {
            summary.skipped += 1;
        }
    }
    Ok(LoadedNotes {
        corpus_id,
        notes,
        summary,
    })
}
