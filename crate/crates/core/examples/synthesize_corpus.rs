//! Ingest the sample notes and rephrase them into a budgeted synthetic
//! corpus against a local mock endpoint, then print the manifest.

use std::path::PathBuf;

use rephrase::corpus::{Corpus, CorpusRecord, Origin, RecordSource};
use rephrase::gateway::{DecodingParams, Gateway, ModelEndpoint};
use rephrase::ingest::{chunk_note, load_notes, NoteFilter, NoteFormat};
use rephrase::prompting::get_prompt;
use rephrase::synthesis::{rephrase_corpus, BoilerplateRules, QualityConfig, SynthesisJob};
use rephrase::corpus::now_utc;
use rephrase_testkit::{MockConfig, MockServer, Responder};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data/notes.jsonl");
    let notes = load_notes(&path, NoteFormat::Jsonl, &NoteFilter::default())?;
    let mut chunks = Vec::new();
    for note in &notes.notes {
        chunks.extend(chunk_note(note, 60)?);
    }
    let real = Corpus::new(
        "notes",
        chunks
            .iter()
            .enumerate()
            .map(|(i, c)| CorpusRecord {
                text: c.text.clone(),
                ref_tokens: c.ref_token_count as u64,
                origin: Origin { corpus_id: "notes".into(), record_index: i },
                source: RecordSource { note_id: c.note_id.clone(), chunk_id: c.chunk_id.clone(), prompt_id: None, model_id: None },
            })
            .collect(),
    );
    println!("{} chunks, {} reference tokens", real.len(), real.total_ref_tokens());

    // The mock answers with a synonym paraphrase behind a chatty first line,
    // which the boilerplate rules strip.
    let server = MockServer::start(MockConfig::default().models(["qwen2-7b"]).responder(Responder::Paraphrase {
        prefix: Some("Sure! Here is a paraphrase of the paragraph:".into()),
    }));
    let endpoint = ModelEndpoint::new("qwen2-7b", server.base_url());
    let template = get_prompt("P1")?;
    let job = SynthesisJob {
        corpus_id: "notes.P1.qwen2-7b".into(),
        parent_corpus_id: real.corpus_id().into(),
        chunks: &chunks,
        template: &template,
        endpoint: &endpoint,
        decoding: DecodingParams { seed: Some(1), ..DecodingParams::default() },
        budget_tokens: 200,
        quality: QualityConfig::default(),
        boilerplate: BoilerplateRules::default(),
        created_utc: now_utc(),
    };
    let out = rephrase_corpus(&Gateway::new(), &job).await?;

    for r in &out.records {
        println!(
            "{:<9} stripped={:<5} flags={:?} tokens={}",
            r.chunk_id, r.boilerplate_stripped, r.quality_flags, r.clean_ref_tokens
        );
    }
    println!("\naccepted {} tokens after {} requests", out.accepted_tokens(), server.request_count());
    println!("first record: {}", out.corpus.records()[0].text);
    println!("\n{}", out.manifest.to_canonical_json());
    Ok(())
}
