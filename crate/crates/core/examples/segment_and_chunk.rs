//! Load a note file, split each note into sentences and pack them into chunks.
//!
//! ```text
//! cargo run --example segment_and_chunk -- [notes.jsonl] [chunk_budget]
//! ```

use std::path::PathBuf;

use rephrase::ingest::{chunk_note, load_notes, reconstruct, split_sentences, NoteFilter, NoteFormat};

fn main() -> anyhow::Result<()> {
    let mut args = std::env::args().skip(1);
    let path = args
        .next()
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("examples/data/notes.jsonl"));
    let budget: usize = args.next().map(|b| b.parse()).transpose()?.unwrap_or(40);

    let format = NoteFormat::from_path(&path).unwrap_or(NoteFormat::Jsonl);
    let loaded = load_notes(&path, format, &NoteFilter::default())?;
    println!("{}: kept {} of {} notes", loaded.corpus_id, loaded.summary.kept, loaded.summary.total);

    for note in &loaded.notes {
        let sentences = split_sentences(note);
        assert_eq!(reconstruct(&sentences), note.text);
        println!("\n{} ({}, {} sentences)", note.note_id, note.note_type.as_str(), sentences.len());
        for chunk in chunk_note(note, budget)? {
            let flag = if chunk.overflow { " overflow" } else { "" };
            println!(
                "  {:<10} sentences {:>2}..{:<2} {:>3} tokens{flag}",
                chunk.chunk_id, chunk.sentence_indices.start, chunk.sentence_indices.end, chunk.ref_token_count
            );
        }
    }
    Ok(())
}
