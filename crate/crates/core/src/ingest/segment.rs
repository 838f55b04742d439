//! Rule-based sentence segmentation for clinical-style notes.
//!
//! Boundaries:
//! - after `.`, `?` or `!` followed by whitespace and then an uppercase
//!   letter or a digit, unless the word ending in `.` is a known abbreviation;
//! - at blank lines;
//! - before any line that opens with a section header (`HPI:`, `Discharge Diagnosis:`).
//!
//! Each segment is trimmed; the whitespace between segments is kept on the
//! [`Sentence`] so that the note text can be rebuilt byte for byte.

use std::collections::BTreeSet;
use std::sync::LazyLock;

use regex::Regex;
use serde::{Deserialize, Serialize};

use super::SourceNote;

/// Words after which a period never ends a sentence. Compared case-insensitively.
pub const ABBREVIATIONS: &[&str] = &[
    "dr.", "mr.", "mrs.", "ms.", "st.", "vs.", "e.g.", "i.e.", "q.d.", "b.i.d.", "t.i.d.",
    "p.r.n.", "pt.",
];

static SECTION_HEADER: LazyLock<Regex> =
    LazyLock::new(|| Regex::new(r"^[A-Z][A-Za-z /]+:").expect("static regex"));

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Sentence {
    pub note_id: String,
    pub index: usize,
    pub start_byte: usize,
    pub end_byte: usize,
    pub text: String,
    /// Whitespace between the previous sentence (or the start of the note) and this one.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub gap_before: String,
    /// Whitespace after this sentence that no later sentence claims; only
    /// ever non-empty on the last sentence of a note.
    #[serde(default, skip_serializing_if = "String::is_empty")]
    pub gap_after: String,
}

/// Rebuild the original note text from its sentences.
pub fn reconstruct(sentences: &[Sentence]) -> String {
    let mut out = String::new();
    for s in sentences {
        out.push_str(&s.gap_before);
        out.push_str(&s.text);
        out.push_str(&s.gap_after);
    }
    out
}

pub fn split_sentences(note: &SourceNote) -> Vec<Sentence> {
    split_text(&note.note_id, &note.text)
}

/// Segment raw `text` belonging to `note_id`.
pub fn split_text(note_id: &str, text: &str) -> Vec<Sentence> {
    let mut points = break_points(text);
    points.insert(0);
    points.insert(text.len());
    let points: Vec<usize> = points.into_iter().collect();

    let mut sentences: Vec<Sentence> = Vec::new();
    let mut prev_end = 0;
    for w in points.windows(2) {
        let seg = &text[w[0]..w[1]];
        let trimmed_start = seg.trim_start();
        if trimmed_start.is_empty() {
            continue;
        }
        let start = w[0] + (seg.len() - trimmed_start.len());
        let end = start + trimmed_start.trim_end().len();
        sentences.push(Sentence {
            note_id: note_id.to_string(),
            index: sentences.len(),
            start_byte: start,
            end_byte: end,
            text: text[start..end].to_string(),
            gap_before: text[prev_end..start].to_string(),
            gap_after: String::new(),
        });
        prev_end = end;
    }
    if let Some(last) = sentences.last_mut() {
        last.gap_after = text[prev_end..].to_string();
    }
    sentences
}

fn break_points(text: &str) -> BTreeSet<usize> {
    let mut points = BTreeSet::new();

    let mut offset = 0;
    for line in text.split_inclusive('\n') {
        let content = line.trim_end_matches(['\n', '\r']);
        if content.trim().is_empty() || SECTION_HEADER.is_match(content) {
            points.insert(offset);
        }
        offset += line.len();
    }

    for (i, c) in text.char_indices() {
        if !matches!(c, '.' | '?' | '!') {
            continue;
        }
        let after = &text[i + 1..];
        let rest = after.trim_start();
        if rest.len() == after.len() {
            continue;
        }
        let Some(next) = rest.chars().next() else {
            continue;
        };
        if !(next.is_uppercase() || next.is_ascii_digit()) {
            continue;
        }
        if c == '.' && ends_with_abbreviation(&text[..=i]) {
            continue;
        }
        points.insert(i + 1);
    }
    points
}

fn ends_with_abbreviation(prefix: &str) -> bool {
    let word = prefix
        .rsplit(char::is_whitespace)
        .next()
        .unwrap_or(prefix)
        .trim_start_matches(['(', '[', '"', '\'']);
    ABBREVIATIONS.iter().any(|a| a.eq_ignore_ascii_case(word))
}
