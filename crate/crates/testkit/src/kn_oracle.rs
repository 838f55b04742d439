//! Brute-force interpolated Kneser–Ney, computed straight from the framed
//! training sequences on every query.
//!
//! Nothing here is shared with the production model: counts are recomputed
//! by scanning every window, denominators by summing over the predictable
//! vocabulary. Slow by construction; meant for corpora of a few hundred tokens.
//!
//! Definitions (n = order, sequences already padded with n−1 `<bos>` and
//! closed with `<eos>`; "windows" are the length-k slices ending at every
//! predicted position i ≥ n−1):
//!
//! - top level (grams of length n): raw window counts c(g);
//! - lower level (grams g of length k < n): N1+(•g), the number of distinct
//!   tokens v such that v·g is a window of length k+1;
//! - P_k(w | h) = max(cnt(h·w) − D, 0) / Σ_u cnt(h·u)
//!   + D · |{u : cnt(h·u) > 0}| / Σ_u cnt(h·u) · P_{k−1}(w | h′), where h′ drops
//!   the oldest token; if Σ_u cnt(h·u) = 0 the level passes P_{k−1} through;
//! - P_{−1}(w) = 1 / |predictable vocabulary|.

use std::collections::{BTreeSet, HashMap};

pub struct KnOracle<'a> {
    sequences: &'a [Vec<u32>],
    order: usize,
    discount: f64,
    predictable: Vec<u32>,
    memo: HashMap<Vec<u32>, f64>,
}

impl<'a> KnOracle<'a> {
    pub fn new(sequences: &'a [Vec<u32>], order: usize, discount: f64, predictable: &[u32]) -> Self {
        Self {
            sequences,
            order,
            discount,
            predictable: predictable.to_vec(),
            memo: HashMap::new(),
        }
    }

    /// Every window of length `len` ending at a predicted position.
    fn windows(&self, len: usize) -> impl Iterator<Item = &[u32]> {
        let order = self.order;
        self.sequences.iter().flat_map(move |s| {
            (order - 1..s.len()).map(move |i| &s[i + 1 - len..=i])
        })
    }

    fn count(&mut self, gram: &[u32]) -> f64 {
        if let Some(&c) = self.memo.get(gram) {
            return c;
        }
        let c = if gram.len() == self.order {
            self.windows(gram.len()).filter(|w| *w == gram).count() as f64
        } else {
            let left: BTreeSet<u32> = self
                .windows(gram.len() + 1)
                .filter(|w| &w[1..] == gram)
                .map(|w| w[0])
                .collect();
            left.len() as f64
        };
        self.memo.insert(gram.to_vec(), c);
        c
    }

    /// P(w | context) where `context` holds the last `order − 1` ids.
    pub fn prob(&mut self, context: &[u32], w: u32) -> f64 {
        assert_eq!(context.len(), self.order - 1);
        let mut p = 1.0 / self.predictable.len() as f64;
        for k in 0..self.order {
            let h = &context[context.len() - k..];
            let mut total = 0.0;
            let mut distinct = 0.0;
            let mut hit = 0.0;
            for u in self.predictable.clone() {
                let mut g = h.to_vec();
                g.push(u);
                let c = self.count(&g);
                total += c;
                if c > 0.0 {
                    distinct += 1.0;
                }
                if u == w {
                    hit = c;
                }
            }
            if total == 0.0 {
                continue;
            }
            p = (hit - self.discount).max(0.0) / total + self.discount * distinct / total * p;
        }
        p
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn order_one_hand_value() {
        // "a b a b" framed for order 1: a b a b <eos>; ids a=3 b=4 eos=2 unk=0
        let seqs = vec![vec![3, 4, 3, 4, 2]];
        let predictable = [0, 2, 3, 4];
        let mut o = KnOracle::new(&seqs, 1, 0.75, &predictable);
        // (2 − .75)/5 + .75·3/5·1/4
        let expect = 1.25 / 5.0 + 0.75 * 3.0 / 5.0 / 4.0;
        assert!((o.prob(&[], 3) - expect).abs() < 1e-15);
        assert!((o.prob(&[], 4) - expect).abs() < 1e-15);
        let unk = 0.75 * 3.0 / 5.0 / 4.0;
        assert!((o.prob(&[], 0) - unk).abs() < 1e-15);
    }
}
