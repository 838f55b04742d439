//! On-disk run directory.
//!
//! ```text
//! <root>/
//!   chunks/     <id>.jsonl              chunk lists from ingestion
//!   corpora/    <id>.jsonl              corpus records
//!               <id>.generations.jsonl  every rephrasing attempt of a synthesized corpus
//!               <id>.txt                plain-text export
//!   manifests/  <id>.json
//!   reports/
//! ```
//!
//! Every file is written to a temporary sibling and renamed into place.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;

use super::manifest::{CorpusManifest, ManifestError, ManifestSource};
use super::{Corpus, CorpusRecord};
use crate::ingest::Chunk;
use crate::synthesis::GenerationRecord;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path} line {line}: {message}")]
    Record { path: PathBuf, line: usize, message: String },
    #[error("corpus {0:?} not found in run directory")]
    MissingCorpus(String),
    #[error("invalid corpus id {0:?}: ids must be non-empty and contain no path separators")]
    InvalidId(String),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Write `bytes` to `path` via a temporary file in the same directory.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
    let tmp = dir.join(format!(".{name}.tmp-{}", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

fn to_jsonl<T: Serialize>(items: &[T]) -> Vec<u8> {
    let mut out = Vec::new();
    for item in items {
        serde_json::to_writer(&mut out, item).expect("record serializes");
        out.push(b'\n');
    }
    out
}

fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, StoreError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| StoreError::Record {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct RunDir {
    root: PathBuf,
}

impl RunDir {
    pub const SUBDIRS: [&'static str; 4] = ["chunks", "corpora", "manifests", "reports"];

    /// Open (and create if needed) a run directory.
    pub fn create(root: impl Into<PathBuf>) -> Result<Self, StoreError> {
        let root = root.into();
        for sub in Self::SUBDIRS {
            let dir = root.join(sub);
            fs::create_dir_all(&dir).map_err(io_err(&dir))?;
        }
        Ok(Self { root })
    }

    /// Open without creating anything.
    pub fn open(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn checked(id: &str) -> Result<&str, StoreError> {
        if id.is_empty() || id.contains(['/', '\\', '\0']) || id.starts_with('.') {
            return Err(StoreError::InvalidId(id.to_string()));
        }
        Ok(id)
    }

    pub fn manifest_path(&self, id: &str) -> PathBuf {
        self.root.join("manifests").join(format!("{id}.json"))
    }

    pub fn corpus_path(&self, id: &str) -> PathBuf {
        self.root.join("corpora").join(format!("{id}.jsonl"))
    }

    pub fn text_path(&self, id: &str) -> PathBuf {
        self.root.join("corpora").join(format!("{id}.txt"))
    }

    pub fn generations_path(&self, id: &str) -> PathBuf {
        self.root.join("corpora").join(format!("{id}.generations.jsonl"))
    }

    pub fn chunks_path(&self, id: &str) -> PathBuf {
        self.root.join("chunks").join(format!("{id}.jsonl"))
    }

    pub fn report_path(&self, name: &str) -> PathBuf {
        self.root.join("reports").join(name)
    }

    pub fn has_corpus(&self, id: &str) -> bool {
        self.corpus_path(id).is_file() && self.manifest_path(id).is_file()
    }

    pub fn write_chunks(&self, id: &str, chunks: &[Chunk]) -> Result<PathBuf, StoreError> {
        let path = self.chunks_path(Self::checked(id)?);
        atomic_write(&path, &to_jsonl(chunks))?;
        Ok(path)
    }

    pub fn read_chunks(&self, id: &str) -> Result<Vec<Chunk>, StoreError> {
        read_jsonl(&self.chunks_path(Self::checked(id)?))
    }

    pub fn write_generations(&self, id: &str, records: &[GenerationRecord]) -> Result<PathBuf, StoreError> {
        let path = self.generations_path(Self::checked(id)?);
        atomic_write(&path, &to_jsonl(records))?;
        Ok(path)
    }

    pub fn read_generations(&self, id: &str) -> Result<Vec<GenerationRecord>, StoreError> {
        read_jsonl(&self.generations_path(Self::checked(id)?))
    }

    /// Write corpus records and plain-text export. The manifest is written separately.
    pub fn write_corpus(&self, corpus: &Corpus) -> Result<PathBuf, StoreError> {
        let id = Self::checked(corpus.corpus_id())?;
        let path = self.corpus_path(id);
        atomic_write(&path, &to_jsonl(corpus.records()))?;
        atomic_write(&self.text_path(id), corpus.to_plain_text().as_bytes())?;
        Ok(path)
    }

    pub fn read_corpus(&self, id: &str) -> Result<Corpus, StoreError> {
        let path = self.corpus_path(Self::checked(id)?);
        if !path.is_file() {
            return Err(StoreError::MissingCorpus(id.to_string()));
        }
        let records: Vec<CorpusRecord> = read_jsonl(&path)?;
        Ok(Corpus::new(id, records))
    }

    pub fn write_manifest(&self, manifest: &CorpusManifest) -> Result<PathBuf, StoreError> {
        let path = self.manifest_path(Self::checked(&manifest.corpus_id)?);
        atomic_write(&path, manifest.to_canonical_json().as_bytes())?;
        Ok(path)
    }

    pub fn read_manifest(&self, id: &str) -> Result<CorpusManifest, StoreError> {
        let path = self.manifest_path(Self::checked(id)?);
        if !path.is_file() {
            return Err(StoreError::MissingCorpus(id.to_string()));
        }
        read_manifest(&path).map_err(StoreError::from)
    }

    /// Load a corpus together with its manifest.
    pub fn load(&self, id: &str) -> Result<(Corpus, CorpusManifest), StoreError> {
        Ok((self.read_corpus(id)?, self.read_manifest(id)?))
    }
}

impl ManifestSource for RunDir {
    fn manifest(&self, corpus_id: &str) -> Result<Option<CorpusManifest>, ManifestError> {
        let path = self.manifest_path(corpus_id);
        if !path.is_file() {
            return Ok(None);
        }
        read_manifest(&path).map(Some)
    }
}

pub fn read_manifest(path: &Path) -> Result<CorpusManifest, ManifestError> {
    let text = fs::read_to_string(path).map_err(|source| ManifestError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    CorpusManifest::from_json(&text)
}

pub fn write_manifest(manifest: &CorpusManifest, path: &Path) -> Result<(), StoreError> {
    atomic_write(path, manifest.to_canonical_json().as_bytes())
}
