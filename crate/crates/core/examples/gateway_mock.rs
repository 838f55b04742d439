//! Send a batch of requests through the gateway to a local server that
//! injects rate limits and server errors, and watch the retries absorb them.

use std::time::Duration;

use rephrase::gateway::{DecodingParams, Gateway, ModelEndpoint, RetryPolicy};
use rephrase::ingest::{count_ref_tokens, Chunk};
use rephrase::prompting::{get_prompt, render_request};
use rephrase_testkit::{MockConfig, MockServer};

#[tokio::main]
async fn main() -> anyhow::Result<()> {
    let server = MockServer::start(
        MockConfig::default()
            .models(["qwen2-7b"])
            .faults(0.10, 0.05, 42)
            .latency(Duration::from_millis(5)),
    );
    let mut endpoint = ModelEndpoint::new("qwen2-7b", server.base_url());
    endpoint.max_in_flight = 4;
    endpoint.retry = RetryPolicy { max_attempts: 5, base_backoff_ms: 10 };

    let capture = tempfile::NamedTempFile::new()?;
    let gateway = Gateway::new().with_capture(capture.path())?;
    let health = gateway.healthcheck(&endpoint).await;
    println!("healthcheck: reachable={} model_listed={}", health.reachable, health.model_listed);

    let p2 = get_prompt("P2")?;
    let requests: Vec<_> = (0..24)
        .map(|i| {
            let text = format!("Pt denies chest pain on day {i}. Troponins were negative.");
            let chunk = Chunk {
                chunk_id: format!("n{i}:0"),
                note_id: format!("n{i}"),
                sentence_indices: 0..2,
                ref_token_count: count_ref_tokens(&text),
                text,
                overflow: false,
            };
            render_request(&p2, &chunk, &DecodingParams::default())
        })
        .collect();

    let results = futures::future::join_all(requests.iter().map(|r| gateway.complete(r, &endpoint))).await;
    for c in results.iter().flatten().filter(|c| c.attempt_count > 1) {
        println!("{:<6} needed {} attempts: {}", c.chunk_id, c.attempt_count, c.output_text);
    }
    let ok = results.iter().filter(|r| r.is_ok()).count();
    let statuses = server.statuses();
    println!(
        "{ok}/{} succeeded; server saw {} attempts ({} x 429, {} x 500), peak in flight {}",
        requests.len(),
        statuses.len(),
        statuses.iter().filter(|&&s| s == 429).count(),
        statuses.iter().filter(|&&s| s == 500).count(),
        server.max_in_flight()
    );
    let lines = std::fs::read_to_string(capture.path())?.lines().count();
    println!("transcript holds {lines} attempts");
    Ok(())
}
