use std::collections::{HashMap, HashSet};

use super::vocab::{TokenId, Vocab};
use super::{EvalError, LanguageModel};
use crate::corpus::Corpus;

/// Counts following one context.
#[derive(Debug, Clone, Default)]
struct ContextCounts {
    next: HashMap<TokenId, u64>,
    total: u64,
}

impl ContextCounts {
    fn add(&mut self, w: TokenId, c: u64) {
        *self.next.entry(w).or_default() += c;
        self.total += c;
    }
}

/// Interpolated Kneser–Ney language model.
///
/// `levels[k]` maps contexts of length `k` to the counts of the token that
/// follows. The highest level holds raw counts; every lower level holds
/// continuation counts (the number of distinct tokens seen to the left of
/// the extended gram). Below level 0 the recursion ends in the uniform
/// distribution over predictable ids, which keeps every probability
/// strictly positive, `<unk>` included.
#[derive(Debug, Clone)]
pub struct NgramModel {
    order: usize,
    discount: f64,
    vocab: Vocab,
    levels: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

impl NgramModel {
    pub fn train<'a>(
        texts: impl IntoIterator<Item = &'a str>,
        vocab: Vocab,
        order: usize,
        discount: f64,
    ) -> Result<Self, EvalError> {
        if order == 0 {
            return Err(EvalError::InvalidOrder);
        }
        if !(discount > 0.0 && discount < 1.0) {
            return Err(EvalError::InvalidDiscount(discount));
        }
        let mut top: HashMap<Vec<TokenId>, ContextCounts> = HashMap::new();
        for text in texts {
            if text.trim().is_empty() {
                continue;
            }
            let (ids, _) = vocab.frame(text, order);
            for window in ids.windows(order) {
                let (ctx, w) = window.split_at(order - 1);
                top.entry(ctx.to_vec()).or_default().add(w[0], 1);
            }
        }
        if top.is_empty() {
            return Err(EvalError::EmptyCorpus("training corpus".into()));
        }

        let mut levels = vec![HashMap::new(); order];
        // Distinct grams of length k + 2 are the distinct suffixes of the
        // top-level grams; each contributes one continuation to its suffix.
        let mut grams: HashSet<Vec<TokenId>> = HashSet::new();
        for (ctx, counts) in &top {
            for &w in counts.next.keys() {
                let mut g = ctx.clone();
                g.push(w);
                grams.insert(g);
            }
        }
        for k in (0..order - 1).rev() {
            let level: &mut HashMap<Vec<TokenId>, ContextCounts> = &mut levels[k];
            for g in &grams {
                let (ctx, w) = g[1..].split_at(k);
                level.entry(ctx.to_vec()).or_default().add(w[0], 1);
            }
            grams = grams.into_iter().map(|g| g[1..].to_vec()).collect();
        }
        levels[order - 1] = top;
        Ok(Self {
            order,
            discount,
            vocab,
            levels,
        })
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn discount(&self) -> f64 {
        self.discount
    }

    /// Contexts observed at `level` (contexts of that length).
    pub fn contexts(&self, level: usize) -> impl Iterator<Item = &[TokenId]> {
        self.levels[level].keys().map(Vec::as_slice)
    }

    /// Stored count of `w` after `ctx` at level `ctx.len()`.
    pub fn count(&self, ctx: &[TokenId], w: TokenId) -> u64 {
        self.levels
            .get(ctx.len())
            .and_then(|l| l.get(ctx))
            .and_then(|c| c.next.get(&w))
            .copied()
            .unwrap_or(0)
    }

    /// P_k(w | h) for a context of any length up to `order − 1`.
    pub fn prob_at_level(&self, h: &[TokenId], w: TokenId) -> f64 {
        let mut p = 1.0 / self.vocab.predictable_len() as f64;
        for k in 0..=h.len() {
            if let Some(c) = self.levels[k].get(&h[h.len() - k..]) {
                let total = c.total as f64;
                let hit = c.next.get(&w).copied().unwrap_or(0) as f64;
                p = (hit - self.discount).max(0.0) / total + self.discount * c.next.len() as f64 / total * p;
            }
        }
        p
    }

    /// Σ_w P(w | h) over every predictable id.
    pub fn mass(&self, h: &[TokenId]) -> f64 {
        self.vocab.predictable_ids().map(|w| self.prob_at_level(h, w)).sum()
    }
}

impl LanguageModel for NgramModel {
    fn context_len(&self) -> usize {
        self.order - 1
    }

    fn vocab(&self) -> &Vocab {
        &self.vocab
    }

    fn prob(&self, context: &[TokenId], w: TokenId) -> f64 {
        self.prob_at_level(context, w)
    }
}

pub fn train_ngram(corpus: &Corpus, order: usize, discount: f64, vocab: Vocab) -> Result<NgramModel, EvalError> {
    NgramModel::train(corpus.texts(), vocab, order, discount).map_err(|e| match e {
        EvalError::EmptyCorpus(_) => EvalError::EmptyCorpus(corpus.corpus_id().to_string()),
        other => other,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::perplexity;
    use crate::eval::vocab::EOS_ID;
    use proptest::prelude::*;
    use rephrase_testkit::kn_oracle::KnOracle;

    fn framed(vocab: &Vocab, texts: &[&str], order: usize) -> Vec<Vec<u32>> {
        texts.iter().map(|t| vocab.frame(t, order).0).collect()
    }

    fn check_against_oracle(texts: &[&str], order: usize, min_count: usize) {
        let vocab = Vocab::build(texts.iter().copied(), min_count).unwrap();
        let model = NgramModel::train(texts.iter().copied(), vocab.clone(), order, 0.75).unwrap();
        let seqs = framed(&vocab, texts, order);
        let predictable: Vec<u32> = vocab.predictable_ids().collect();
        let mut oracle = KnOracle::new(&seqs, order, 0.75, &predictable);
        let mut contexts: HashSet<Vec<u32>> = model.contexts(order - 1).map(<[u32]>::to_vec).collect();
        contexts.insert(vec![EOS_ID; order - 1]);
        for ctx in contexts {
            for &w in &predictable {
                let got = model.prob(&ctx, w);
                let want = oracle.prob(&ctx, w);
                assert!((got - want).abs() < 1e-10, "ctx {ctx:?} w {w}: {got} vs {want}");
            }
        }
    }

    #[test]
    fn order_one_symmetry_and_hand_value() {
        let vocab = Vocab::build(["a b a b"], 1).unwrap();
        let m = NgramModel::train(["a b a b"], vocab.clone(), 1, 0.75).unwrap();
        let a = vocab.get("a").unwrap();
        let b = vocab.get("b").unwrap();
        assert_eq!(m.prob(&[], a), m.prob(&[], b));
        // predictable = {<unk>, <eos>, a, b}; counts a 2, b 2, <eos> 1
        let p_ab: f64 = 1.25 / 5.0 + 0.75 * 3.0 / 5.0 / 4.0;
        let p_eos: f64 = 0.25 / 5.0 + 0.75 * 3.0 / 5.0 / 4.0;
        let want = (-(2.0 * p_ab.ln() + p_eos.ln()) / 3.0).exp();
        let got = perplexity(&m, ["a b"]).unwrap();
        assert_eq!(got.token_count, 3);
        assert!((got.perplexity - want).abs() < 1e-12);
    }

    #[test]
    fn ten_token_bigram_matches_oracle() {
        check_against_oracle(&["the cat sat on the mat", "the dog sat"], 2, 1);
    }

    #[test]
    fn trigram_with_unk_matches_oracle() {
        check_against_oracle(&["a b c a b d", "b c a", "a a a b"], 3, 2);
    }

    #[test]
    fn all_probabilities_positive() {
        let vocab = Vocab::build(["x y"], 1).unwrap();
        let m = NgramModel::train(["x y"], vocab.clone(), 3, 0.5).unwrap();
        for w in vocab.predictable_ids() {
            assert!(m.prob(&[2, 2], w) > 0.0);
        }
    }

    #[test]
    fn bad_parameters_rejected() {
        let v = Vocab::from_symbols(["a"]);
        for d in [0.0, 1.0, -0.1, f64::NAN] {
            assert!(matches!(NgramModel::train(["a"], v.clone(), 2, d), Err(EvalError::InvalidDiscount(_))));
        }
        assert!(matches!(NgramModel::train(["a"], v.clone(), 0, 0.5), Err(EvalError::InvalidOrder)));
        assert!(matches!(NgramModel::train([""], v, 2, 0.5), Err(EvalError::EmptyCorpus(_))));
    }

    #[test]
    fn stored_counts_positive() {
        let texts = ["a b a c", "c c b"];
        let m = NgramModel::train(texts, Vocab::build(texts, 1).unwrap(), 3, 0.75).unwrap();
        for level in &m.levels {
            for c in level.values() {
                assert!(c.next.values().all(|&n| n > 0));
                assert_eq!(c.total, c.next.values().sum::<u64>());
            }
        }
    }

    fn toy_corpus() -> impl Strategy<Value = Vec<String>> {
        prop::collection::vec(prop::collection::vec(0usize..6, 1..12), 1..5).prop_map(|recs| {
            recs.into_iter()
                .map(|r| r.iter().map(|&i| ["a", "b", "c", "d", "e", "."][i]).collect::<Vec<_>>().join(" "))
                .collect()
        })
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn matches_oracle(texts in toy_corpus(), order in 1usize..=3, min_count in 1usize..=2) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            check_against_oracle(&refs, order, min_count);
        }

        #[test]
        fn observed_contexts_normalize(texts in toy_corpus(), order in 1usize..=3) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let m = NgramModel::train(refs.iter().copied(), Vocab::build(refs.iter().copied(), 1).unwrap(), order, 0.75).unwrap();
            for k in 0..order {
                for ctx in m.contexts(k) {
                    prop_assert!((m.mass(ctx) - 1.0).abs() < 1e-9);
                }
            }
        }
    }
}
