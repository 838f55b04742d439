//! Render the built-in prompts for one chunk and show the exact request body.

use rephrase::gateway::{wire_body, DecodingParams};
use rephrase::ingest::{count_ref_tokens, Chunk};
use rephrase::prompting::{get_prompt, render_request, PromptRegistry, PromptTemplate, BUILTIN_IDS};

fn main() -> anyhow::Result<()> {
    let text = "Lasix 40 mg PO b.i.d. was started on admission. Chest x-ray showed mild pulmonary edema.";
    let chunk = Chunk {
        chunk_id: "dc-001:0".into(),
        note_id: "dc-001".into(),
        sentence_indices: 0..2,
        text: text.into(),
        ref_token_count: count_ref_tokens(text),
        overflow: false,
    };

    for id in BUILTIN_IDS {
        let template = get_prompt(id)?;
        let request = render_request(&template, &chunk, &DecodingParams::default());
        println!("== {id}\n{}\n", String::from_utf8(wire_body(&request, "qwen2-7b-instruct"))?);
    }

    // Custom prompts sit next to the built-ins under their own id.
    let mut registry = PromptRegistry::new();
    registry.register(PromptTemplate {
        prompt_id: "plain".into(),
        system_text: "You rewrite clinical text.".into(),
        user_prefix: "Rewrite in plain language:".into(),
    })?;
    let seeded = DecodingParams { seed: Some(7), temperature: 0.2, ..DecodingParams::default() };
    let request = render_request(registry.get("plain")?, &chunk, &seeded);
    println!("== plain (seeded)\n{}", String::from_utf8(wire_body(&request, "mistral-7b"))?);
    println!("\nregistered: {}", registry.ids().join(", "));
    Ok(())
}
