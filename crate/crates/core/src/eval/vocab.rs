use std::collections::HashMap;

use super::EvalError;
use crate::ingest::ref_tokens;

pub type TokenId = u32;

pub const UNK: &str = "<unk>";
pub const BOS: &str = "<bos>";
pub const EOS: &str = "<eos>";
pub const UNK_ID: TokenId = 0;
pub const BOS_ID: TokenId = 1;
pub const EOS_ID: TokenId = 2;

/// Token inventory with `<unk>`, `<bos>`, `<eos>` at ids 0, 1, 2.
///
/// Every id except `<bos>` can be predicted; `<bos>` only ever appears as
/// left padding.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    min_count: usize,
    index: HashMap<String, TokenId>,
}

impl Vocab {
    /// Vocabulary from an explicit symbol list; reserved symbols are added
    /// in front and duplicates dropped.
    pub fn from_symbols<I, S>(symbols: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut v = Self {
            tokens: Vec::new(),
            min_count: 1,
            index: HashMap::new(),
        };
        for s in [UNK, BOS, EOS].into_iter().map(String::from).chain(symbols.into_iter().map(Into::into)) {
            if !v.index.contains_key(&s) {
                v.index.insert(s.clone(), v.tokens.len() as TokenId);
                v.tokens.push(s);
            }
        }
        v
    }

    /// Tokens seen at least `min_count` times (a `min_count` of 0 acts as 1),
    /// ordered by descending frequency then lexically.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, min_count: usize) -> Result<Self, EvalError> {
        let mut counts: HashMap<&str, usize> = HashMap::new();
        for text in texts {
            for tok in ref_tokens(text) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(EvalError::EmptyCorpus("vocabulary source".into()));
        }
        let mut kept: Vec<(&str, usize)> = counts.into_iter().filter(|&(_, c)| c >= min_count.max(1)).collect();
        kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
        let mut v = Self::from_symbols(kept.into_iter().map(|(t, _)| t));
        v.min_count = min_count;
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Number of predictable ids (all but `<bos>`).
    pub fn predictable_len(&self) -> usize {
        self.tokens.len() - 1
    }

    pub fn predictable_ids(&self) -> impl Iterator<Item = TokenId> {
        (0..self.tokens.len() as TokenId).filter(|&id| id != BOS_ID)
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn get(&self, token: &str) -> Option<TokenId> {
        self.index.get(token).copied()
    }

    pub fn id_or_unk(&self, token: &str) -> TokenId {
        self.get(token).unwrap_or(UNK_ID)
    }

    pub fn symbol(&self, id: TokenId) -> &str {
        &self.tokens[id as usize]
    }

    /// Ids of one record: `order − 1` `<bos>`, the tokens, `<eos>`.
    /// Returns the framed ids and the number of out-of-vocabulary tokens.
    pub fn frame(&self, text: &str, order: usize) -> (Vec<TokenId>, usize) {
        let mut ids = vec![BOS_ID; order.saturating_sub(1)];
        let mut oov = 0;
        for tok in ref_tokens(text) {
            let id = self.id_or_unk(tok);
            if id == UNK_ID {
                oov += 1;
            }
            ids.push(id);
        }
        ids.push(EOS_ID);
        (ids, oov)
    }
}
