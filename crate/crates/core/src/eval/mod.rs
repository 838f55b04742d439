//! Desk-scale evaluation: vocabulary, interpolated Kneser–Ney n-gram models,
//! perplexity, experiment matrices and trainer-config export.

mod matrix;
mod ngram;
mod trainer;
mod vocab;

pub use matrix::{run_matrix, CorpusProvider, MatrixRow, NgramConfig, PerplexityReport, REPORT_HEADER};
pub use ngram::{train_ngram, NgramModel};
pub use trainer::{export_trainer_config, TrainerConfig, TrainerKind};
pub use vocab::{TokenId, Vocab, BOS, BOS_ID, EOS, EOS_ID, UNK, UNK_ID};

use crate::corpus::{Corpus, ManifestError, StoreError};

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("empty corpus: {0}")]
    EmptyCorpus(String),
    #[error("discount must lie strictly between 0 and 1, got {0}")]
    InvalidDiscount(f64),
    #[error("n-gram order must be at least 1")]
    InvalidOrder,
    #[error("train corpus {0:?} listed more than once")]
    DuplicateTrainSpec(String),
    #[error("test corpus {0:?} listed more than once")]
    DuplicateTestSpec(String),
    #[error("corpus {0:?} cannot be resolved")]
    MissingCorpus(String),
    #[error("figure needs a baseline corpus")]
    NoBaseline,
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Manifest(#[from] ManifestError),
}

/// A conditional distribution over the predictable ids of a vocabulary.
pub trait LanguageModel {
    /// Number of context ids consulted, `order − 1`.
    fn context_len(&self) -> usize;

    fn vocab(&self) -> &Vocab;

    /// P(w | context), where `context` holds exactly `context_len()` ids.
    fn prob(&self, context: &[TokenId], w: TokenId) -> f64;
}

/// Equal probability for every predictable id.
#[derive(Debug, Clone)]
pub struct UniformModel {
    vocab: Vocab,
}

impl UniformModel {
    pub fn new(vocab: Vocab) -> Self {
        Self { vocab }
    }
}

impl LanguageModel for UniformModel {
    fn context_len(&self) -> usize {
        0
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn prob(&self, _context: &[TokenId], _w: TokenId) -> f64 {
        1.0 / self.vocab.predictable_len() as f64
    }
}

pub fn build_vocab(corpus: &Corpus, min_count: usize) -> Result<Vocab, EvalError> {
    Vocab::build(corpus.texts(), min_count).map_err(|_| EvalError::EmptyCorpus(corpus.corpus_id().to_string()))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PerplexityResult {
    pub perplexity: f64,
    /// Scored tokens, `<eos>` included.
    pub token_count: usize,
    pub oov_count: usize,
}

impl PerplexityResult {
    pub fn oov_rate(&self) -> f64 {
        self.oov_count as f64 / self.token_count as f64
    }
}

/// exp of the mean negative log-probability over every token and `<eos>`.
pub fn perplexity<'a>(
    model: &impl LanguageModel,
    texts: impl IntoIterator<Item = &'a str>,
) -> Result<PerplexityResult, EvalError> {
    let n = model.context_len();
    let mut nll = 0.0;
    let mut token_count = 0;
    let mut oov_count = 0;
    let mut saw_text = false;
    for text in texts {
        if text.trim().is_empty() {
            continue;
        }
        saw_text = true;
        let (ids, oov) = model.vocab().frame(text, n + 1);
        oov_count += oov;
        for i in n..ids.len() {
            nll -= model.prob(&ids[i - n..i], ids[i]).ln();
            token_count += 1;
        }
    }
    if !saw_text {
        return Err(EvalError::EmptyCorpus("test corpus".into()));
    }
    Ok(PerplexityResult {
        perplexity: (nll / token_count as f64).exp(),
        token_count,
        oov_count,
    })
}

pub fn corpus_perplexity(model: &impl LanguageModel, corpus: &Corpus) -> Result<PerplexityResult, EvalError> {
    perplexity(model, corpus.texts()).map_err(|e| match e {
        EvalError::EmptyCorpus(_) => EvalError::EmptyCorpus(corpus.corpus_id().to_string()),
        other => other,
    })
}
