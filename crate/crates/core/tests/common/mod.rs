#![allow(dead_code)]

use std::path::PathBuf;

use rephrase::gateway::{ModelEndpoint, RetryPolicy};
use rephrase::ingest::{count_ref_tokens, Chunk};

pub fn golden(name: &str) -> Vec<u8> {
    let p = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    std::fs::read(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()))
}

pub fn chunk(id: &str, text: &str) -> Chunk {
    let (note_id, _) = id.split_once(':').unwrap_or((id, ""));
    Chunk {
        chunk_id: id.to_string(),
        note_id: note_id.to_string(),
        sentence_indices: 0..1,
        text: text.to_string(),
        ref_token_count: count_ref_tokens(text),
        overflow: false,
    }
}

pub fn endpoint(base_url: &str) -> ModelEndpoint {
    let mut e = ModelEndpoint::new("mock-model", base_url);
    e.retry = RetryPolicy {
        max_attempts: 5,
        base_backoff_ms: 2,
    };
    e.timeout_s = 10.0;
    e
}
