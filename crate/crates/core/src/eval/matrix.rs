use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{build_vocab, corpus_perplexity, train_ngram, EvalError};
use crate::corpus::{lineage, Corpus, ManifestSource, RunDir};

pub const REPORT_HEADER: [&str; 8] = [
    "train_corpus_id",
    "test_set_id",
    "perplexity",
    "token_count",
    "oov_rate",
    "order",
    "discount",
    "min_count",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NgramConfig {
    pub order: usize,
    pub discount: f64,
    pub min_count: usize,
}

impl Default for NgramConfig {
    fn default() -> Self {
        Self {
            order: 3,
            discount: 0.75,
            min_count: 2,
        }
    }
}

/// Where the matrix finds its corpora.
pub trait CorpusProvider: Sync {
    fn contains_corpus(&self, id: &str) -> bool;
    fn fetch_corpus(&self, id: &str) -> Result<Corpus, EvalError>;
}

impl CorpusProvider for RunDir {
    fn contains_corpus(&self, id: &str) -> bool {
        self.has_corpus(id)
    }

    fn fetch_corpus(&self, id: &str) -> Result<Corpus, EvalError> {
        Ok(self.read_corpus(id)?)
    }
}

impl CorpusProvider for BTreeMap<String, Corpus> {
    fn contains_corpus(&self, id: &str) -> bool {
        self.contains_key(id)
    }

    fn fetch_corpus(&self, id: &str) -> Result<Corpus, EvalError> {
        self.get(id).cloned().ok_or_else(|| EvalError::MissingCorpus(id.to_string()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatrixRow {
    pub train_corpus_id: String,
    pub test_set_id: String,
    pub perplexity: f64,
    pub token_count: usize,
    pub oov_rate: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PerplexityReport {
    pub config: NgramConfig,
    /// Real-only corpus the augmented rows are compared against.
    pub baseline: Option<String>,
    /// Sorted by (train_corpus_id, test_set_id).
    pub rows: Vec<MatrixRow>,
}

/// Train one model per train corpus and score it on every test corpus.
///
/// A `baseline` corpus not already among `train_ids` is trained as one more
/// row set. Every corpus is checked for existence before any training.
pub fn run_matrix(
    provider: &impl CorpusProvider,
    train_ids: &[String],
    test_ids: &[String],
    config: NgramConfig,
    baseline: Option<&str>,
) -> Result<PerplexityReport, EvalError> {
    let mut trains: BTreeSet<&str> = BTreeSet::new();
    for id in train_ids {
        if !trains.insert(id) {
            return Err(EvalError::DuplicateTrainSpec(id.clone()));
        }
    }
    let mut tests: BTreeSet<&str> = BTreeSet::new();
    for id in test_ids {
        if !tests.insert(id) {
            return Err(EvalError::DuplicateTestSpec(id.clone()));
        }
    }
    if let Some(b) = baseline {
        trains.insert(b);
    }
    if let Some(missing) = trains.iter().chain(&tests).find(|id| !provider.contains_corpus(id)) {
        return Err(EvalError::MissingCorpus(missing.to_string()));
    }
    if config.order == 0 {
        return Err(EvalError::InvalidOrder);
    }
    if !(config.discount > 0.0 && config.discount < 1.0) {
        return Err(EvalError::InvalidDiscount(config.discount));
    }

    let test_corpora: Vec<Corpus> = tests.iter().map(|id| provider.fetch_corpus(id)).collect::<Result<_, _>>()?;
    let trains: Vec<&str> = trains.into_iter().collect();
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Result<Vec<MatrixRow>, EvalError>>> = Mutex::new(Vec::new());
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(trains.len().max(1));
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                let Some(&train_id) = trains.get(i) else { break };
                let cell = score_one(provider, train_id, &test_corpora, config);
                results.lock().expect("no worker panicked").push(cell);
            });
        }
    });
    let mut rows = Vec::new();
    for r in results.into_inner().expect("no worker panicked") {
        rows.extend(r?);
    }
    rows.sort_by(|a, b| (&a.train_corpus_id, &a.test_set_id).cmp(&(&b.train_corpus_id, &b.test_set_id)));
    Ok(PerplexityReport {
        config,
        baseline: baseline.map(String::from),
        rows,
    })
}

fn score_one(
    provider: &impl CorpusProvider,
    train_id: &str,
    tests: &[Corpus],
    config: NgramConfig,
) -> Result<Vec<MatrixRow>, EvalError> {
    let train = provider.fetch_corpus(train_id)?;
    let vocab = build_vocab(&train, config.min_count)?;
    let model = train_ngram(&train, config.order, config.discount, vocab)?;
    tracing::debug!(train_id, "trained n-gram model");
    tests
        .iter()
        .map(|test| {
            let r = corpus_perplexity(&model, test)?;
            Ok(MatrixRow {
                train_corpus_id: train_id.to_string(),
                test_set_id: test.corpus_id().to_string(),
                perplexity: r.perplexity,
                token_count: r.token_count,
                oov_rate: r.oov_rate(),
            })
        })
        .collect()
}

fn finish(w: csv::Writer<Vec<u8>>) -> String {
    String::from_utf8(w.into_inner().expect("in-memory writer")).expect("csv output is utf-8")
}

impl PerplexityReport {
    pub fn get(&self, train: &str, test: &str) -> Option<&MatrixRow> {
        self.rows.iter().find(|r| r.train_corpus_id == train && r.test_set_id == test)
    }

    pub fn test_ids(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.test_set_id.as_str()).collect()
    }

    pub fn train_ids(&self) -> BTreeSet<&str> {
        self.rows.iter().map(|r| r.train_corpus_id.as_str()).collect()
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(REPORT_HEADER).expect("in-memory write");
        for r in &self.rows {
            w.write_record([
                r.train_corpus_id.clone(),
                r.test_set_id.clone(),
                r.perplexity.to_string(),
                r.token_count.to_string(),
                r.oov_rate.to_string(),
                self.config.order.to_string(),
                self.config.discount.to_string(),
                self.config.min_count.to_string(),
            ])
            .expect("in-memory write");
        }
        finish(w)
    }

    /// Train corpora as rows, test sets as columns.
    pub fn fig1_csv(&self) -> String {
        let tests: Vec<&str> = self.test_ids().into_iter().collect();
        let mut w = csv::Writer::from_writer(Vec::new());
        let mut header = vec!["train_corpus_id"];
        header.extend(&tests);
        w.write_record(&header).expect("in-memory write");
        for train in self.train_ids() {
            let mut rec = vec![train.to_string()];
            rec.extend(tests.iter().map(|t| self.get(train, t).map(|r| r.perplexity.to_string()).unwrap_or_default()));
            w.write_record(&rec).expect("in-memory write");
        }
        finish(w)
    }

    /// Every non-baseline cell next to the baseline score on the same test set.
    pub fn fig2_csv(&self) -> Result<String, EvalError> {
        let baseline = self.baseline.as_deref().ok_or(EvalError::NoBaseline)?;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["train_corpus_id", "test_set_id", "perplexity", "baseline_perplexity", "delta"])
            .expect("in-memory write");
        for r in self.rows.iter().filter(|r| r.train_corpus_id != baseline) {
            let Some(b) = self.get(baseline, &r.test_set_id) else { continue };
            w.write_record([
                r.train_corpus_id.clone(),
                r.test_set_id.clone(),
                r.perplexity.to_string(),
                b.perplexity.to_string(),
                (r.perplexity - b.perplexity).to_string(),
            ])
            .expect("in-memory write");
        }
        Ok(finish(w))
    }

    /// Mean perplexity per prompt set and test set, averaged over the
    /// models in each train corpus's lineage. A corpus whose lineage holds
    /// several prompts lands in a combined row such as `P1+P2`; corpora with
    /// no synthesized ancestor are left out.
    pub fn fig3_csv(&self, manifests: &impl ManifestSource) -> Result<String, EvalError> {
        #[derive(Default)]
        struct Group {
            sum: f64,
            n: usize,
            models: BTreeSet<String>,
        }
        let mut groups: BTreeMap<(String, String), Group> = BTreeMap::new();
        for train in self.train_ids() {
            let lin = lineage(manifests, train)?;
            let prompts = lin.prompt_ids();
            if prompts.is_empty() {
                continue;
            }
            let key = prompts.into_iter().collect::<Vec<_>>().join("+");
            for r in self.rows.iter().filter(|r| r.train_corpus_id == train) {
                let g = groups.entry((key.clone(), r.test_set_id.clone())).or_default();
                g.sum += r.perplexity;
                g.n += 1;
                g.models.extend(lin.model_ids().into_iter().map(String::from));
            }
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["prompt_set", "test_set_id", "mean_perplexity", "n_corpora", "models"])
            .expect("in-memory write");
        for ((prompts, test), g) in groups {
            w.write_record([
                prompts,
                test,
                (g.sum / g.n as f64).to_string(),
                g.n.to_string(),
                g.models.into_iter().collect::<Vec<_>>().join("+"),
            ])
            .expect("in-memory write");
        }
        Ok(finish(w))
    }
}
