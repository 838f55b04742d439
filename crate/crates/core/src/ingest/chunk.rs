use std::ops::Range;

use serde::{Deserialize, Serialize};

use super::{count_ref_tokens, split_sentences, IngestError, Sentence, SourceNote};

/// Default chunk size in reference tokens.
pub const DEFAULT_CHUNK_BUDGET: usize = 300;

/// A run of consecutive whole sentences from one note.
///
/// `ref_token_count` is the packing charge: the sentences' reference token
/// counts plus one separator token per join. `text` is the original note
/// slice spanning the sentences, inner whitespace included.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Chunk {
    pub chunk_id: String,
    pub note_id: String,
    pub sentence_indices: Range<usize>,
    pub text: String,
    pub ref_token_count: usize,
    pub overflow: bool,
}

/// Greedy left-to-right packing of one note's sentences.
pub fn coalesce_chunks(sentences: &[Sentence], chunk_budget: usize) -> Result<Vec<Chunk>, IngestError> {
    if chunk_budget < 1 {
        return Err(IngestError::InvalidChunkBudget(chunk_budget));
    }

    let mut chunks = Vec::new();
    let mut open: Option<(usize, usize)> = None; // (first sentence position, charged tokens)
    for (pos, sentence) in sentences.iter().enumerate() {
        let count = count_ref_tokens(&sentence.text);
        open = match open {
            Some((first, used)) if used + 1 + count <= chunk_budget => Some((first, used + 1 + count)),
            Some((first, used)) => {
                chunks.push(build(&sentences[first..pos], used, chunk_budget));
                Some((pos, count))
            }
            None => Some((pos, count)),
        };
    }
    if let Some((first, used)) = open {
        chunks.push(build(&sentences[first..], used, chunk_budget));
    }
    Ok(chunks)
}

fn build(run: &[Sentence], used: usize, chunk_budget: usize) -> Chunk {
    let first = &run[0];
    let mut text = first.text.clone();
    for s in &run[1..] {
        text.push_str(&s.gap_before);
        text.push_str(&s.text);
    }
    Chunk {
        chunk_id: format!("{}:{}", first.note_id, first.index),
        note_id: first.note_id.clone(),
        sentence_indices: first.index..first.index + run.len(),
        text,
        ref_token_count: used,
        overflow: used > chunk_budget,
    }
}

/// Segment and chunk a single note.
pub fn chunk_note(note: &SourceNote, chunk_budget: usize) -> Result<Vec<Chunk>, IngestError> {
    coalesce_chunks(&split_sentences(note), chunk_budget)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::split_text;
    use proptest::prelude::*;

    /// Sentences whose reference token counts are exactly `counts`.
    fn sized(counts: &[usize]) -> Vec<Sentence> {
        let text = counts
            .iter()
            .map(|&n| match n {
                1 => "W".to_string(),
                _ => format!("W{}.", " w".repeat(n - 2)),
            })
            .collect::<Vec<_>>()
            .join("\n\n");
        let s = split_text("n", &text);
        let got: Vec<usize> = s.iter().map(|x| count_ref_tokens(&x.text)).collect();
        assert_eq!(got, counts);
        s
    }

    #[test]
    fn greedy_packing() {
        let chunks = coalesce_chunks(&sized(&[120, 150, 100]), 300).unwrap();
        let spans: Vec<_> = chunks.iter().map(|c| c.sentence_indices.clone()).collect();
        assert_eq!(spans, [0..2, 2..3]);
        assert_eq!(chunks[0].ref_token_count, 271);
        assert_eq!(chunks[0].chunk_id, "n:0");
        assert_eq!(chunks[1].chunk_id, "n:2");
    }

    #[test]
    fn oversized_sentence_overflows_alone() {
        let chunks = coalesce_chunks(&sized(&[450]), 300).unwrap();
        assert_eq!(chunks.len(), 1);
        assert!(chunks[0].overflow);

        let chunks = coalesce_chunks(&sized(&[10, 450, 10]), 300).unwrap();
        let flags: Vec<_> = chunks.iter().map(|c| c.overflow).collect();
        assert_eq!(flags, [false, true, false]);
    }

    #[test]
    fn budget_is_inclusive() {
        let chunks = coalesce_chunks(&sized(&[300]), 300).unwrap();
        assert_eq!(chunks.len(), 1);
        assert!(!chunks[0].overflow);
    }

    #[test]
    fn zero_budget_rejected() {
        assert!(matches!(
            coalesce_chunks(&sized(&[3]), 0),
            Err(IngestError::InvalidChunkBudget(0))
        ));
    }

    #[test]
    fn chunk_text_is_note_slice() {
        let text = "HPI: Pt stable.\nSeen by Dr. Who.\n\nPlan: home.";
        let s = split_text("n", text);
        let chunks = coalesce_chunks(&s, 300).unwrap();
        assert_eq!(chunks.len(), 1);
        assert_eq!(chunks[0].text, text);
    }

    fn note_text() -> impl Strategy<Value = String> {
        let word = prop::sample::select(vec![
            "Pt", "stable", "Dr.", "b.i.d.", "___", "HPI:", "38.5", "Fever", "home", "CHF",
            "no", "acute", "process", "Given", "x3", "e.g.",
        ]);
        let sep = prop::sample::select(vec![" ", " ", " ", ". ", "\n", "\n\n", "! ", "? ", ".\n"]);
        prop::collection::vec((word, sep), 1..120)
            .prop_map(|v| v.into_iter().map(|(w, s)| format!("{w}{s}")).collect())
    }

    proptest! {
        #[test]
        fn chunks_partition_sentences(text in note_text(), budget in 1usize..60) {
            let sentences = split_text("n", &text);
            prop_assert_eq!(crate::ingest::reconstruct(&sentences), text.clone());
            let chunks = coalesce_chunks(&sentences, budget).unwrap();
            let mut next = 0;
            for c in &chunks {
                prop_assert_eq!(c.sentence_indices.start, next);
                next = c.sentence_indices.end;
                if c.overflow {
                    prop_assert_eq!(c.sentence_indices.len(), 1);
                } else {
                    prop_assert!(c.ref_token_count <= budget);
                }
                let slice = &text[sentences[c.sentence_indices.start].start_byte
                    ..sentences[c.sentence_indices.end - 1].end_byte];
                prop_assert_eq!(&c.text, slice);
            }
            prop_assert_eq!(next, sentences.len());
        }

        #[test]
        fn raising_budget_never_adds_chunks(text in note_text(), a in 1usize..80, b in 1usize..80) {
            let (lo, hi) = (a.min(b), a.max(b));
            let sentences = split_text("n", &text);
            let n_lo = coalesce_chunks(&sentences, lo).unwrap().len();
            let n_hi = coalesce_chunks(&sentences, hi).unwrap().len();
            prop_assert!(n_hi <= n_lo);
        }
    }
}
