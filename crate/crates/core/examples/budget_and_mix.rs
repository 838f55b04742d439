//! Truncate corpora to token budgets and mix them.

use rephrase::corpus::{
    mix, now_utc, truncate_to_budget, Corpus, CorpusManifest, CorpusRecord, MixMode, MixParent, Origin, Recipe,
    RecordSource,
};
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
    let real = corpus("real", zipf_records("w", 500, 20_000, 1));
    let para = corpus("para", real.texts().map(synonym_paraphrase).collect());

    for budget in [1_000, 5_000, 12_345] {
        let t = truncate_to_budget(&real, budget)?;
        println!("real@{budget:<6} -> {:>3} records, {:>6} tokens", t.len(), t.total_ref_tokens());
    }

    let parents = [(&real, 4_000), (&para, 4_000)];
    for mode in [MixMode::Concat, MixMode::Interleave] {
        let m = mix(&parents, mode, 7)?;
        let head: Vec<_> = m.records().iter().take(6).map(|r| r.origin.corpus_id.as_str()).collect();
        println!("{mode:<10} {} records, {} tokens, starts {head:?}", m.len(), m.total_ref_tokens());
    }

    let mixed = mix(&parents, MixMode::Interleave, 7)?.renamed("real+para");
    let recipe = Recipe::Mixed {
        parents: parents
            .iter()
            .map(|(c, b)| MixParent { corpus_id: c.corpus_id().into(), budget_tokens: *b })
            .collect(),
        mode: MixMode::Interleave,
        seed: 7,
    };
    let manifest = CorpusManifest::for_corpus(&mixed, recipe, now_utc());
    println!("\n{}", manifest.to_canonical_json());
    let r = &mixed.records()[1];
    println!("record 1 comes from {}[{}], note {}", r.origin.corpus_id, r.origin.record_index, r.source.note_id);
    Ok(())
}
