//! Stand-in data: clinical-style notes, Zipfian corpora and a deterministic
//! synonym paraphraser.

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

pub fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(0xcbf2_9ce4_8422_2325, |h, &b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

const SECTIONS: [&str; 6] = [
    "Chief Complaint",
    "History of Present Illness",
    "Past Medical History",
    "Hospital Course",
    "Discharge Medications",
    "Discharge Instructions",
];

const SENTENCES: [&str; 16] = [
    "Pt is a ___ year old male with a history of CHF who presented with shortness of breath.",
    "He was seen by Dr. ___ in the emergency department.",
    "Lasix 40 mg PO b.i.d. was started on admission.",
    "Chest x-ray showed mild pulmonary edema without effusion.",
    "Troponins were negative x3 and EKG showed no acute changes.",
    "She denies chest pain, fever or chills.",
    "Blood cultures remained negative throughout the stay.",
    "Metoprolol was titrated to a heart rate in the 70s.",
    "Creatinine peaked at 1.8 and trended down with hydration.",
    "The patient was ambulating independently by day 3.",
    "Follow up with cardiology in 2 weeks, i.e. on ___.",
    "Oxygen was weaned to room air with saturations above 94%.",
    "Insulin sliding scale was continued for hyperglycemia.",
    "Physical therapy evaluated the patient and recommended home with services.",
    "Warfarin was held given the INR of 3.4.",
    "Return to the ED for worsening dyspnea or weight gain over 3 lbs.",
];

const RADIOLOGY: [&str; 6] = [
    "FINDINGS: The lungs are clear without focal consolidation.",
    "There is no pleural effusion or pneumothorax.",
    "Heart size is mildly enlarged.",
    "IMPRESSION: No acute cardiopulmonary process.",
    "Degenerative changes of the thoracic spine are noted.",
    "Comparison is made to the prior study from ___.",
];

/// One clinical-style note as a JSON record with `note_id`, `text`,
/// `note_type` and `date_year`.
pub fn clinical_note(index: usize, rng: &mut impl Rng) -> Value {
    let radiology = rng.random_bool(0.2);
    let mut text = String::new();
    if radiology {
        let n = rng.random_range(3..8);
        for _ in 0..n {
            text.push_str(RADIOLOGY.choose(rng).unwrap());
            text.push(' ');
        }
    } else {
        let sections = rng.random_range(2..=SECTIONS.len());
        for s in &SECTIONS[..sections] {
            text.push_str(s);
            text.push_str(":\n");
            let n = rng.random_range(1..9);
            let mut line = Vec::new();
            for _ in 0..n {
                line.push(*SENTENCES.choose(rng).unwrap());
            }
            text.push_str(&line.join(if rng.random_bool(0.3) { "\n" } else { "  " }));
            text.push_str("\n\n");
        }
    }
    json!({
        "note_id": format!("note{index:04}"),
        "text": text.trim_end(),
        "note_type": if radiology { "radiology_report" } else { "discharge_summary" },
        "date_year": rng.random_range(2001..2020),
    })
}

pub fn clinical_notes(n: usize, seed: u64) -> Vec<Value> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|i| clinical_note(i, &mut rng)).collect()
}

/// Notes as JSONL, one record per line.
pub fn clinical_notes_jsonl(n: usize, seed: u64) -> String {
    clinical_notes(n, seed).iter().map(|v| format!("{v}\n")).collect()
}

/// Records over the vocabulary `{prefix}0 .. {prefix}{vocab-1}` totalling
/// about `total_tokens` whitespace tokens.
///
/// Word ranks are Zipf(1) distributed; half the time a word is instead the
/// fixed successor of the previous word, which gives the text some local
/// structure for an n-gram model to learn.
pub fn zipf_records(prefix: &str, vocab: usize, total_tokens: usize, seed: u64) -> Vec<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let zipf = WeightedIndex::new((1..=vocab).map(|r| 1.0 / r as f64)).expect("non-empty vocabulary");
    let mut records = Vec::new();
    let mut produced = 0;
    while produced < total_tokens {
        let len = rng.random_range(20..60).min(total_tokens - produced).max(1);
        let mut prev = zipf.sample(&mut rng);
        let mut words = Vec::with_capacity(len);
        for _ in 0..len {
            words.push(format!("{prefix}{prev}"));
            prev = if rng.random_bool(0.5) {
                (prev * 7 + 3) % vocab
            } else {
                zipf.sample(&mut rng)
            };
        }
        produced += len;
        records.push(words.join(" "));
    }
    records
}

const SYNONYMS: [(&str, &str); 14] = [
    ("patient", "individual"),
    ("Patient", "Individual"),
    ("denies", "reports no"),
    ("started", "initiated"),
    ("showed", "demonstrated"),
    ("presented", "came in"),
    ("history", "background"),
    ("negative", "unremarkable"),
    ("mild", "slight"),
    ("stay", "admission"),
    ("worsening", "increasing"),
    ("recommended", "advised"),
    ("held", "paused"),
    ("weaned", "tapered"),
];

/// Deterministic paraphrase: whitespace layout is kept, known clinical words
/// get a fixed synonym and about half of the remaining alphanumeric words
/// (chosen by a hash of the word) get a `v` suffix.
pub fn synonym_paraphrase(text: &str) -> String {
    let mut out = String::with_capacity(text.len() + text.len() / 8);
    let mut word = String::new();
    let flush = |word: &mut String, out: &mut String| {
        if word.is_empty() {
            return;
        }
        if let Some((_, s)) = SYNONYMS.iter().find(|(w, _)| *w == word) {
            out.push_str(s);
        } else if word.chars().any(|c| c.is_alphabetic()) && fnv1a(word.as_bytes()) % 2 == 0 {
            out.push_str(word);
            out.push('v');
        } else {
            out.push_str(word);
        }
        word.clear();
    };
    for c in text.chars() {
        if c.is_alphanumeric() {
            word.push(c);
        } else {
            flush(&mut word, &mut out);
            out.push(c);
        }
    }
    flush(&mut word, &mut out);
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn generators_are_deterministic() {
        assert_eq!(clinical_notes_jsonl(5, 1), clinical_notes_jsonl(5, 1));
        assert_ne!(clinical_notes_jsonl(5, 1), clinical_notes_jsonl(5, 2));
        assert_eq!(zipf_records("a", 50, 500, 3), zipf_records("a", 50, 500, 3));
    }

    #[test]
    fn zipf_total_is_exact() {
        let recs = zipf_records("b", 100, 1234, 9);
        assert_eq!(recs.iter().map(|r| r.split_whitespace().count()).sum::<usize>(), 1234);
        assert!(recs.iter().all(|r| r.split_whitespace().all(|w| w.starts_with('b'))));
    }

    #[test]
    fn paraphrase_keeps_layout() {
        let p = synonym_paraphrase("Pt denies pain.\n\nLasix 40 mg.");
        assert!(p.contains("reports no"));
        assert_eq!(p.matches('\n').count(), 2);
        assert_eq!(synonym_paraphrase("Pt denies pain."), p.lines().next().unwrap());
    }
}
