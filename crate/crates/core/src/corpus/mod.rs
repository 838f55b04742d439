//! Token-budgeted corpora: truncation, sampling, deduplication and mixing,
//! plus manifests that record how every corpus was made.
//!
//! All operations are pure: they borrow their inputs and return new corpora.
//! Each output record's `origin` points at the record it was copied from in
//! the immediate parent, and its `source` carries the (note, chunk, prompt,
//! model) tuple through every derivation unchanged.

mod manifest;
mod store;

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use manifest::{
    canonical_json, lineage, now_utc, validate_lineage, CorpusManifest, GenerationSummary,
    Lineage, ManifestError, ManifestNote, ManifestSource, MixParent, Recipe, TokenTotals,
    SCHEMA_VERSION,
};
pub use store::{atomic_write, read_manifest, write_manifest, RunDir, StoreError};

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CorpusError {
    #[error("token budget must be at least 1")]
    ZeroBudget,
    #[error("cannot sample {n} records from a corpus of {available}")]
    SampleTooLarge { n: usize, available: usize },
    #[error("mix needs at least one parent corpus")]
    EmptyMix,
    #[error("unknown mix mode {0:?} (expected concat or interleave)")]
    UnknownMode(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Origin {
    pub corpus_id: String,
    pub record_index: usize,
}

/// Where a record's text ultimately came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordSource {
    pub note_id: String,
    pub chunk_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub prompt_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model_id: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusRecord {
    pub text: String,
    pub ref_tokens: u64,
    pub origin: Origin,
    pub source: RecordSource,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Corpus {
    corpus_id: String,
    records: Vec<CorpusRecord>,
    total_ref_tokens: u64,
}

impl Corpus {
    pub fn new(corpus_id: impl Into<String>, records: Vec<CorpusRecord>) -> Self {
        let total_ref_tokens = records.iter().map(|r| r.ref_tokens).sum();
        Self {
            corpus_id: corpus_id.into(),
            records,
            total_ref_tokens,
        }
    }

    pub fn corpus_id(&self) -> &str {
        &self.corpus_id
    }

    pub fn records(&self) -> &[CorpusRecord] {
        &self.records
    }

    pub fn total_ref_tokens(&self) -> u64 {
        self.total_ref_tokens
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn renamed(mut self, corpus_id: impl Into<String>) -> Self {
        self.corpus_id = corpus_id.into();
        self
    }

    pub fn texts(&self) -> impl Iterator<Item = &str> {
        self.records.iter().map(|r| r.text.as_str())
    }

    /// Plain-text export: one record per paragraph, blank-line separated.
    pub fn to_plain_text(&self) -> String {
        let mut out = String::new();
        for (i, t) in self.texts().enumerate() {
            if i > 0 {
                out.push_str("\n\n");
            }
            out.push_str(t.trim());
        }
        out.push('\n');
        out
    }

    /// Copy of record `index` re-pointed at this corpus.
    fn derive_record(&self, index: usize) -> CorpusRecord {
        let r = &self.records[index];
        CorpusRecord {
            text: r.text.clone(),
            ref_tokens: r.ref_tokens,
            origin: Origin {
                corpus_id: self.corpus_id.clone(),
                record_index: index,
            },
            source: r.source.clone(),
        }
    }

    fn prefix_len_within(&self, budget_tokens: u64) -> usize {
        let mut total = 0u64;
        self.records
            .iter()
            .take_while(|r| {
                total += r.ref_tokens;
                total <= budget_tokens
            })
            .count()
    }
}

/// Keep the longest prefix of whole records whose total is within budget.
pub fn truncate_to_budget(corpus: &Corpus, budget_tokens: u64) -> Result<Corpus, CorpusError> {
    if budget_tokens < 1 {
        return Err(CorpusError::ZeroBudget);
    }
    let keep = corpus.prefix_len_within(budget_tokens);
    let records = (0..keep).map(|i| corpus.derive_record(i)).collect();
    Ok(Corpus::new(format!("{}.t{budget_tokens}", corpus.corpus_id), records))
}

/// Uniform sample of `n` records without replacement, original order kept.
///
/// Selection sampling (Knuth, TAOCP vol. 2, Algorithm S) driven by a
/// ChaCha8 stream seeded with `seed`: record `t` of `N` is taken with
/// probability `(n − selected) / (N − t)`.
pub fn sample_records(corpus: &Corpus, n: usize, seed: u64) -> Result<Corpus, CorpusError> {
    let total = corpus.len();
    if n > total {
        return Err(CorpusError::SampleTooLarge { n, available: total });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut records = Vec::with_capacity(n);
    for t in 0..total {
        let needed = n - records.len();
        if needed == 0 {
            break;
        }
        if rng.random_range(0..total - t) < needed {
            records.push(corpus.derive_record(t));
        }
    }
    Ok(Corpus::new(format!("{}.s{n}x{seed}", corpus.corpus_id), records))
}

fn normalize_ws(s: &str) -> String {
    s.split_whitespace().collect::<Vec<_>>().join(" ")
}

/// Drop records whose whitespace-collapsed text repeats an earlier record.
pub fn dedup_exact(corpus: &Corpus) -> (Corpus, usize) {
    let mut seen = HashSet::new();
    let records: Vec<_> = (0..corpus.len())
        .filter(|&i| seen.insert(normalize_ws(&corpus.records[i].text)))
        .map(|i| corpus.derive_record(i))
        .collect();
    let removed = corpus.len() - records.len();
    (Corpus::new(format!("{}.dedup", corpus.corpus_id), records), removed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MixMode {
    #[default]
    Concat,
    Interleave,
}

impl fmt::Display for MixMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MixMode::Concat => "concat",
            MixMode::Interleave => "interleave",
        })
    }
}

impl FromStr for MixMode {
    type Err = CorpusError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "concat" => Ok(Self::Concat),
            "interleave" => Ok(Self::Interleave),
            _ => Err(CorpusError::UnknownMode(s.to_string())),
        }
    }
}

/// Truncate each parent to its budget, then combine.
///
/// `Concat` appends parents in the listed order. `Interleave` takes one
/// record from every non-exhausted parent per round, visiting the parents
/// in an order reshuffled each round by a ChaCha8 stream seeded with `seed`.
pub fn mix(parents: &[(&Corpus, u64)], mode: MixMode, seed: u64) -> Result<Corpus, CorpusError> {
    if parents.is_empty() {
        return Err(CorpusError::EmptyMix);
    }
    let mut prefixes = Vec::with_capacity(parents.len());
    for &(corpus, budget) in parents {
        if budget < 1 {
            return Err(CorpusError::ZeroBudget);
        }
        prefixes.push(corpus.prefix_len_within(budget));
    }

    let records = match mode {
        MixMode::Concat => parents
            .iter()
            .zip(&prefixes)
            .flat_map(|(&(c, _), &keep)| (0..keep).map(move |i| c.derive_record(i)))
            .collect(),
        MixMode::Interleave => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut cursor = vec![0usize; parents.len()];
            let mut out = Vec::with_capacity(prefixes.iter().sum());
            loop {
                let mut active: Vec<usize> = (0..parents.len()).filter(|&p| cursor[p] < prefixes[p]).collect();
                if active.is_empty() {
                    break;
                }
                active.shuffle(&mut rng);
                for p in active {
                    out.push(parents[p].0.derive_record(cursor[p]));
                    cursor[p] += 1;
                }
            }
            out
        }
    };
    let id = parents
        .iter()
        .map(|(c, b)| format!("{}@{b}", c.corpus_id))
        .collect::<Vec<_>>()
        .join("+");
    Ok(Corpus::new(id, records))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    pub(crate) fn corpus_of(id: &str, tokens: &[u64]) -> Corpus {
        let records = tokens
            .iter()
            .enumerate()
            .map(|(i, &t)| CorpusRecord {
                text: format!("{id} record {i}"),
                ref_tokens: t,
                origin: Origin {
                    corpus_id: "src".into(),
                    record_index: i,
                },
                source: RecordSource {
                    note_id: format!("n{i}"),
                    chunk_id: format!("n{i}:0"),
                    prompt_id: None,
                    model_id: None,
                },
            })
            .collect();
        Corpus::new(id, records)
    }

    fn tokens(c: &Corpus) -> Vec<u64> {
        c.records().iter().map(|r| r.ref_tokens).collect()
    }

    #[test]
    fn truncate_keeps_prefix() {
        let c = corpus_of("c", &[7, 9, 6]);
        let t = truncate_to_budget(&c, 20).unwrap();
        assert_eq!(tokens(&t), [7, 9]);
        assert_eq!(t.total_ref_tokens(), 16);
        assert_eq!(t.records()[1].origin, Origin { corpus_id: "c".into(), record_index: 1 });
    }

    #[test]
    fn truncate_identity_and_empty() {
        let c = corpus_of("c", &[7, 9, 6]);
        assert_eq!(truncate_to_budget(&c, 22).unwrap().texts().collect::<Vec<_>>(), c.texts().collect::<Vec<_>>());
        assert!(truncate_to_budget(&c, 5).unwrap().is_empty());
        assert_eq!(truncate_to_budget(&c, 0), Err(CorpusError::ZeroBudget));
    }

    #[test]
    fn sample_edges() {
        let c = corpus_of("c", &[1, 2, 3, 4, 5]);
        let all = sample_records(&c, 5, 9).unwrap();
        assert_eq!(tokens(&all), [1, 2, 3, 4, 5]);
        assert!(sample_records(&c, 0, 9).unwrap().is_empty());
        assert_eq!(
            sample_records(&c, 6, 9),
            Err(CorpusError::SampleTooLarge { n: 6, available: 5 })
        );
        assert_eq!(sample_records(&c, 3, 42).unwrap(), sample_records(&c, 3, 42).unwrap());
    }

    #[test]
    fn sample_is_roughly_uniform() {
        let c = corpus_of("c", &[1; 10]);
        let mut hits = [0u32; 10];
        for seed in 0..4000 {
            for r in sample_records(&c, 3, seed).unwrap().records() {
                hits[r.origin.record_index] += 1;
            }
        }
        // expected 1200 each
        for h in hits {
            assert!((1080..1320).contains(&h), "{hits:?}");
        }
    }

    #[test]
    fn dedup_collapses_whitespace() {
        let mut c = corpus_of("c", &[2, 2, 1]);
        let texts = ["a b", "a  b", "c"];
        let records = c
            .records()
            .iter()
            .zip(texts)
            .map(|(r, t)| CorpusRecord { text: t.into(), ..r.clone() })
            .collect();
        c = Corpus::new("c", records);
        let (d, removed) = dedup_exact(&c);
        assert_eq!(d.texts().collect::<Vec<_>>(), ["a b", "c"]);
        assert_eq!(removed, 1);
        assert_eq!(d.records()[1].origin.record_index, 2);

        let (same, removed) = dedup_exact(&corpus_of("u", &[1, 2]));
        assert_eq!((same.len(), removed), (2, 0));
        let (empty, removed) = dedup_exact(&Corpus::new("e", vec![]));
        assert_eq!((empty.len(), removed), (0, 0));
    }

    #[test]
    fn mix_concat_and_interleave() {
        let real = corpus_of("real", &[10, 10, 10]);
        let syn = corpus_of("syn", &[5, 5, 5, 5, 5]);
        let m = mix(&[(&real, 20), (&syn, 20)], MixMode::Concat, 0).unwrap();
        assert_eq!(m.total_ref_tokens(), 40);
        assert_eq!(m.records()[0].origin.corpus_id, "real");
        assert_eq!(m.records()[2].origin.corpus_id, "syn");
        assert_eq!(m.corpus_id(), "real@20+syn@20");

        let i = mix(&[(&real, 20), (&syn, 20)], MixMode::Interleave, 3).unwrap();
        assert_eq!(i.total_ref_tokens(), 40);
        assert_eq!(i.len(), 6);
        // each round holds one record from each active parent
        let mut first_two: Vec<_> = i.records()[..2].iter().map(|r| r.origin.corpus_id.clone()).collect();
        first_two.sort();
        assert_eq!(first_two, ["real", "syn"]);
        assert_eq!(i, mix(&[(&real, 20), (&syn, 20)], MixMode::Interleave, 3).unwrap());
    }

    #[test]
    fn mix_of_four_is_additive() {
        let parts: Vec<_> = (0..4).map(|k| corpus_of(&format!("m{k}"), &[1, 2, 2, 3])).collect();
        let refs: Vec<_> = parts.iter().map(|c| (c, 5)).collect();
        let m = mix(&refs, MixMode::Concat, 0).unwrap();
        assert_eq!(m.total_ref_tokens(), 20);
        assert_eq!(mix(&[], MixMode::Concat, 0), Err(CorpusError::EmptyMix));
    }

    #[test]
    fn plain_text_export() {
        let c = corpus_of("c", &[1, 1]);
        assert_eq!(c.to_plain_text(), "c record 0\n\nc record 1\n");
    }

    fn arb_corpus() -> impl Strategy<Value = Corpus> {
        prop::collection::vec(1u64..50, 0..40).prop_map(|t| corpus_of("p", &t))
    }

    proptest! {
        #[test]
        fn truncate_composes(c in arb_corpus(), a in 1u64..400, b in 1u64..400) {
            let ab = truncate_to_budget(&truncate_to_budget(&c, a).unwrap(), b).unwrap();
            let m = truncate_to_budget(&c, a.min(b)).unwrap();
            prop_assert_eq!(ab.texts().collect::<Vec<_>>(), m.texts().collect::<Vec<_>>());
        }

        #[test]
        fn single_parent_mix_is_truncation(c in arb_corpus(), k in 1u64..400, seed: u64, interleave: bool) {
            let mode = if interleave { MixMode::Interleave } else { MixMode::Concat };
            let m = mix(&[(&c, k)], mode, seed).unwrap();
            let t = truncate_to_budget(&c, k).unwrap();
            prop_assert_eq!(m.records(), t.records());
        }

        #[test]
        fn mix_total_is_sum_of_truncations(a in arb_corpus(), b in arb_corpus(), ka in 1u64..300, kb in 1u64..300, seed: u64) {
            let expect = truncate_to_budget(&a, ka).unwrap().total_ref_tokens() + truncate_to_budget(&b, kb).unwrap().total_ref_tokens();
            for mode in [MixMode::Concat, MixMode::Interleave] {
                prop_assert_eq!(mix(&[(&a, ka), (&b, kb)], mode, seed).unwrap().total_ref_tokens(), expect);
            }
        }
    }
}
