//! Train Kneser-Ney models on a few corpora and score them against held-out
//! text, printing the full report and the figure tables.

use std::collections::BTreeMap;

use rephrase::corpus::{mix, Corpus, CorpusRecord, MixMode, Origin, RecordSource};
use rephrase::eval::{run_matrix, NgramConfig};
use rephrase::ingest::count_ref_tokens;
use rephrase_testkit::gen::{synonym_paraphrase, zipf_records};

fn corpus(id: &str, texts: Vec<String>) -> Corpus {
    let records = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| CorpusRecord {
            ref_tokens: count_ref_tokens(&text) as u64,
            text,
            origin: Origin { corpus_id: id.into(), record_index: i },
            source: RecordSource { note_id: format!("n{i}"), chunk_id: format!("n{i}:0"), prompt_id: None, model_id: None },
        })
        .collect();
    Corpus::new(id, records)
}

fn main() -> anyhow::Result<()> {
    let real = corpus("real", zipf_records("a", 1000, 40_000, 1));
    let para = corpus("paraphrase", real.texts().map(synonym_paraphrase).collect());
    let other = corpus("other_domain", zipf_records("b", 1000, 40_000, 2));
    let aug = mix(&[(&real, 20_000), (&para, 20_000)], MixMode::Concat, 0)?.renamed("real+paraphrase");
    let half = mix(&[(&real, 20_000)], MixMode::Concat, 0)?.renamed("real_half");
    let heldout = corpus("heldout", zipf_records("a", 1000, 5_000, 3));

    let provider: BTreeMap<String, Corpus> =
        [real, para, other, aug, half, heldout].into_iter().map(|c| (c.corpus_id().to_string(), c)).collect();
    let train: Vec<String> = ["paraphrase", "other_domain", "real+paraphrase"].map(String::from).to_vec();
    let test = vec!["heldout".to_string(), "real".to_string()];

    let report = run_matrix(&provider, &train, &test, NgramConfig::default(), Some("real_half"))?;
    println!("{}", report.to_csv());
    println!("{}", report.fig1_csv());
    println!("{}", report.fig2_csv()?);
    Ok(())
}
