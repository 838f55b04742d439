//! Acceptance run: one PASS/FAIL line per criterion, each with its time limit.

mod common;

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{anyhow, bail, ensure, Context, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use rephrase::cli::{run_with_output, RunManifest};
use rephrase::corpus::{
    lineage, mix, read_manifest, truncate_to_budget, validate_lineage, Corpus, CorpusManifest, CorpusRecord, MixMode,
    Origin, Recipe, RecordSource, RunDir,
};
use rephrase::eval::{
    build_vocab, corpus_perplexity, export_trainer_config, perplexity, train_ngram, LanguageModel, NgramModel,
    TrainerKind, UniformModel, Vocab,
};
use rephrase::gateway::{DecodingParams, Gateway};
use rephrase::ingest::{chunk_note, count_ref_tokens, load_notes, reconstruct, split_sentences, NoteFilter, NoteFormat};
use rephrase::prompting::{get_prompt, render_request, SYSTEM_PROMPT};
use rephrase_testkit::gen::{clinical_notes_jsonl, synonym_paraphrase, zipf_records};
use rephrase_testkit::kn_oracle::KnOracle;
use rephrase_testkit::{MockConfig, MockServer};

struct Criterion {
    name: &'static str,
    limit: Duration,
    check: fn() -> Result<String>,
}

fn main() {
    let criteria = [
        Criterion { name: "prompt fidelity", limit: Duration::from_secs(1), check: prompt_fidelity },
        Criterion { name: "chunker contract", limit: Duration::from_secs(5), check: chunker_contract },
        Criterion { name: "budget semantics", limit: Duration::from_secs(10), check: budget_semantics },
        Criterion { name: "kn oracle equivalence", limit: Duration::from_secs(30), check: kn_oracle_equivalence },
        Criterion { name: "perplexity definition", limit: Duration::from_secs(1), check: perplexity_definition },
        Criterion { name: "in-domain beats out-of-domain", limit: Duration::from_secs(60), check: in_domain_wins },
        Criterion { name: "mix beats paraphrase only", limit: Duration::from_secs(90), check: mix_wins },
        Criterion { name: "gateway robustness", limit: Duration::from_secs(30), check: gateway_robustness },
        Criterion { name: "provenance totality", limit: Duration::from_secs(60), check: provenance_totality },
        Criterion { name: "config export fidelity", limit: Duration::from_secs(1), check: config_export },
    ];
    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let outcome = catch_unwind(AssertUnwindSafe(c.check))
            .unwrap_or_else(|p| Err(anyhow!("panicked: {}", panic_message(&p))));
        let elapsed = start.elapsed();
        let (ok, detail) = match outcome {
            Ok(d) if elapsed < c.limit => (true, d),
            Ok(d) => (false, format!("{d}; over the {:?} limit", c.limit)),
            Err(e) => (false, format!("{e:#}")),
        };
        if !ok {
            failed += 1;
        }
        println!(
            "[{}] {:<30} {:>8.3}s / {:>3}s  {}",
            if ok { "PASS" } else { "FAIL" },
            c.name,
            elapsed.as_secs_f64(),
            c.limit.as_secs(),
            detail
        );
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed > 0 {
        std::process::exit(1);
    }
}

fn panic_message(p: &Box<dyn std::any::Any + Send>) -> String {
    p.downcast_ref::<String>()
        .cloned()
        .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn prompt_fidelity() -> Result<String> {
    let golden = [
        ("SYSTEM", "You are a medical artificial intelligence assistant. The assistant gives truthful, detailed, and professional answers to the requests."),
        ("P1", "For the following paragraph give me a diverse paraphrase of the same in high quality English language as in sentences on Wikipedia:"),
        ("P2", "For the following paragraph give me a paraphrase of the same in high quality professional medical English language:"),
        ("P3", "For the following paragraph give me a paraphrase of the same in high quality professional medical English language and explain the medical terms using your medical knowledge when necessary:"),
    ];
    ensure!(SYSTEM_PROMPT.as_bytes() == golden[0].1.as_bytes(), "system prompt differs");
    for (id, text) in &golden[1..] {
        let t = get_prompt(id)?;
        ensure!(t.user_prefix.as_bytes() == text.as_bytes(), "{id} differs: {:?}", t.user_prefix);
        ensure!(t.system_text.as_bytes() == SYSTEM_PROMPT.as_bytes(), "{id} has a different system prompt");
    }
    Ok("system prompt and P1..P3 byte-identical".into())
}

fn chunker_contract() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let path = dir.path().join("notes.jsonl");
    std::fs::write(&path, clinical_notes_jsonl(100, 11))?;
    let loaded = load_notes(&path, NoteFormat::Jsonl, &NoteFilter::default())?;
    ensure!(loaded.notes.len() == 100, "loaded {} notes", loaded.notes.len());
    let (mut chunks, mut overflow, mut max_tokens) = (0, 0, 0);
    for note in &loaded.notes {
        let sentences = split_sentences(note);
        ensure!(reconstruct(&sentences) == note.text, "{}: reconstruction differs", note.note_id);
        let mut next = 0;
        for c in chunk_note(note, 300)? {
            ensure!(c.sentence_indices.start == next, "{}: chunks do not tile the sentences", c.chunk_id);
            next = c.sentence_indices.end;
            let actual = count_ref_tokens(&c.text);
            if c.overflow {
                ensure!(c.sentence_indices.len() == 1, "{}: overflow chunk has several sentences", c.chunk_id);
                overflow += 1;
            } else {
                ensure!(actual <= 300 && c.ref_token_count <= 300, "{}: {actual} tokens", c.chunk_id);
                max_tokens = max_tokens.max(actual);
            }
            chunks += 1;
        }
        ensure!(next == sentences.len(), "{}: {next} of {} sentences chunked", note.note_id, sentences.len());
    }
    Ok(format!("{chunks} chunks, {overflow} overflow, largest {max_tokens} tokens"))
}

fn zipf_corpus(id: &str, prefix: &str, tokens: usize, seed: u64) -> Corpus {
    records_corpus(id, zipf_records(prefix, 2000, tokens, seed))
}

fn records_corpus(id: &str, texts: Vec<String>) -> Corpus {
    let records = texts
        .into_iter()
        .enumerate()
        .map(|(i, text)| CorpusRecord {
            ref_tokens: count_ref_tokens(&text) as u64,
            text,
            origin: Origin { corpus_id: id.into(), record_index: i },
            source: RecordSource {
                note_id: format!("{id}{i}"),
                chunk_id: format!("{id}{i}:0"),
                prompt_id: None,
                model_id: None,
            },
        })
        .collect();
    Corpus::new(id, records)
}

fn content(c: &Corpus) -> Vec<(&str, u64)> {
    c.records().iter().map(|r| (r.text.as_str(), r.ref_tokens)).collect()
}

fn budget_semantics() -> Result<String> {
    let c = zipf_corpus("big", "w", 1_000_000, 5);
    ensure!(c.total_ref_tokens() == 1_000_000, "stand-in has {} tokens", c.total_ref_tokens());
    let max_record = c.records().iter().map(|r| r.ref_tokens).max().unwrap_or(0);
    let t = truncate_to_budget(&c, 200_000)?;
    let total = t.total_ref_tokens();
    ensure!(total <= 200_000 && total > 200_000 - max_record, "total {total}, max record {max_record}");
    ensure!(content(&t)[..] == content(&c)[..t.len()], "truncation is not a prefix");
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    for _ in 0..100 {
        let a = rng.random_range(1..=1_000_000u64);
        let b = rng.random_range(1..=1_000_000u64);
        let twice = truncate_to_budget(&truncate_to_budget(&c, a)?, b)?;
        let once = truncate_to_budget(&c, a.min(b))?;
        ensure!(content(&twice) == content(&once), "composition fails for a={a} b={b}");
    }
    Ok(format!("200k prefix holds {total} tokens (max record {max_record}); 100 pairs compose"))
}

fn kn_oracle_equivalence() -> Result<String> {
    let mut rng = ChaCha8Rng::seed_from_u64(23);
    let (mut probs, mut contexts, mut worst_p, mut worst_mass) = (0usize, 0usize, 0f64, 0f64);
    for case in 0..50 {
        let order = case % 3 + 1;
        let symbols = rng.random_range(2..10);
        let total = rng.random_range(10..=200);
        let mut texts = Vec::new();
        let mut left = total;
        while left > 0 {
            let len = rng.random_range(1..=left.min(25));
            let words: Vec<String> = (0..len).map(|_| format!("s{}", rng.random_range(0..symbols))).collect();
            texts.push(words.join(" "));
            left -= len;
        }
        let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
        let min_count = if case % 2 == 0 { 1 } else { 2 };
        let vocab = Vocab::build(refs.iter().copied(), min_count)?;
        let model = NgramModel::train(refs.iter().copied(), vocab.clone(), order, 0.75)?;
        let seqs: Vec<Vec<u32>> = refs.iter().map(|t| vocab.frame(t, order).0).collect();
        let predictable: Vec<u32> = vocab.predictable_ids().collect();
        let mut oracle = KnOracle::new(&seqs, order, 0.75, &predictable);
        let mut ctxs: HashSet<Vec<u32>> = model.contexts(order - 1).map(<[u32]>::to_vec).collect();
        ctxs.insert(vec![rephrase::eval::EOS_ID; order - 1]);
        for ctx in &ctxs {
            for &w in &predictable {
                let got = model.prob(ctx, w);
                let want = oracle.prob(ctx, w);
                let diff = (got - want).abs();
                worst_p = worst_p.max(diff);
                ensure!(diff < 1e-10, "case {case} order {order} ctx {ctx:?} w {w}: {got} vs {want}");
                probs += 1;
            }
        }
        for k in 0..order {
            for ctx in model.contexts(k) {
                let off = (model.mass(ctx) - 1.0).abs();
                worst_mass = worst_mass.max(off);
                ensure!(off < 1e-9, "case {case} level {k} ctx {ctx:?} mass off by {off}");
                contexts += 1;
            }
        }
    }
    Ok(format!("{probs} probabilities (max err {worst_p:.1e}), {contexts} contexts (max mass err {worst_mass:.1e})"))
}

fn perplexity_definition() -> Result<String> {
    let words: Vec<String> = (0..135).map(|i| format!("u{i}")).collect();
    let vocab = Vocab::from_symbols(words.iter().map(String::as_str));
    ensure!(vocab.predictable_len() == 137, "{} predictable symbols", vocab.predictable_len());
    let model = UniformModel::new(vocab);
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let texts: Vec<String> = (0..20)
        .map(|_| {
            let n = rng.random_range(1..40);
            (0..n).map(|_| words[rng.random_range(0..words.len())].as_str()).collect::<Vec<_>>().join(" ")
        })
        .chain(["u0 never-seen-word u1".to_string()])
        .collect();
    let r = perplexity(&model, texts.iter().map(String::as_str))?;
    ensure!((r.perplexity - 137.0).abs() < 1e-9, "perplexity {}", r.perplexity);
    Ok(format!("PPL {:.12} over {} tokens", r.perplexity, r.token_count))
}

fn ppl(train: &Corpus, test: &Corpus) -> Result<f64> {
    let vocab = build_vocab(train, 2)?;
    let model = train_ngram(train, 3, 0.75, vocab)?;
    Ok(corpus_perplexity(&model, test)?.perplexity)
}

fn in_domain_wins() -> Result<String> {
    let mut worst = 0f64;
    for seed in 0..10u64 {
        let a = zipf_corpus("A", "a", 200_000, 100 + seed);
        let b = zipf_corpus("B", "b", 200_000, 200 + seed);
        let held = zipf_corpus("A_heldout", "a", 20_000, 300 + seed);
        let (pa, pb) = (ppl(&a, &held)?, ppl(&b, &held)?);
        ensure!(pa < pb, "seed {seed}: A-model {pa:.2} not below B-model {pb:.2}");
        worst = worst.max(pa / pb);
    }
    Ok(format!("10 seeds, largest A/B perplexity ratio {worst:.3e}"))
}

fn mix_wins() -> Result<String> {
    let mut worst = 0f64;
    for seed in 0..10u64 {
        let a = zipf_corpus("A", "a", 200_000, 400 + seed);
        let para = records_corpus("Bp", a.texts().map(synonym_paraphrase).collect());
        let held = zipf_corpus("A_heldout", "a", 20_000, 500 + seed);
        let mixed = mix(&[(&a, 100_000), (&para, 100_000)], MixMode::Concat, seed)?;
        let para_only = truncate_to_budget(&para, 200_000)?;
        let (pm, pp) = (ppl(&mixed, &held)?, ppl(&para_only, &held)?);
        ensure!(pm <= pp, "seed {seed}: mix {pm:.2} above paraphrase-only {pp:.2}");
        worst = worst.max(pm / pp);
    }
    Ok(format!("10 seeds, largest mix/paraphrase perplexity ratio {worst:.3}"))
}

fn gateway_robustness() -> Result<String> {
    let server = MockServer::start(MockConfig::default().faults(0.10, 0.05, 2024).latency(Duration::from_millis(2)));
    let mut ep = common::endpoint(&server.base_url());
    ep.max_in_flight = 8;
    let template = String::from_utf8(common::golden("p1_template.json"))?;
    let p1 = get_prompt("P1")?;
    let chunks: Vec<_> = (0..200)
        .map(|i| common::chunk(&format!("n{i}:0"), &format!("Stand-in chunk {i}. Pt was seen on day {}.", i % 7)))
        .collect();
    let expected: HashMap<Vec<u8>, usize> = chunks
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let escaped = serde_json::to_string(&c.text).expect("string");
            (template.replace("@CHUNK@", &escaped[1..escaped.len() - 1]).into_bytes(), i)
        })
        .collect();
    let gateway = Gateway::new();
    let rt = tokio::runtime::Builder::new_multi_thread().worker_threads(2).enable_all().build()?;
    let results = rt.block_on(futures::future::join_all(chunks.iter().map(|c| {
        let req = render_request(&p1, c, &DecodingParams::default());
        let (gateway, ep) = (&gateway, &ep);
        async move { gateway.complete(&req, ep).await }
    })));
    let failures = results.iter().filter(|r| r.is_err()).count();
    ensure!(failures == 0, "{failures} requests failed: {:?}", results.iter().find(|r| r.is_err()));

    let exchanges = server.exchanges();
    let mut served = vec![0usize; chunks.len()];
    for (body, status) in &exchanges {
        let Some(&i) = expected.get(body) else {
            bail!("unexpected body {}", String::from_utf8_lossy(body));
        };
        if *status == 200 {
            served[i] += 1;
        }
    }
    ensure!(served.iter().all(|&n| n == 1), "some chunk was not served exactly once");
    let peak = server.max_in_flight();
    ensure!(peak <= 8, "{peak} requests in flight");
    let count = |s: u16| exchanges.iter().filter(|(_, x)| *x == s).count();
    Ok(format!(
        "200 ok after {} attempts ({} x 429, {} x 500), peak in flight {peak}",
        exchanges.len(),
        count(429),
        count(500)
    ))
}

fn cli(run: &Path, args: &[&str]) -> Result<String> {
    let mut out = Vec::new();
    let argv = ["rephrase", "--run-dir", run.to_str().unwrap()].into_iter().chain(args.iter().copied());
    let code = run_with_output(argv, &mut out);
    let out = String::from_utf8(out)?;
    ensure!(code == 0, "{args:?} exited {code}: {out}");
    Ok(out)
}

fn provenance_totality() -> Result<String> {
    let dir = tempfile::tempdir()?;
    let input = dir.path().join("notes.jsonl");
    std::fs::write(&input, clinical_notes_jsonl(40, 8))?;
    let run = dir.path().join("run");
    let server = MockServer::start(MockConfig::default().models(["qwen2-7b", "gemma-2-9b"]).faults(0.05, 0.05, 6));
    let url = server.base_url();
    cli(&run, &["ingest", "--input", input.to_str().unwrap()])?;
    cli(&run, &["synthesize", "--chunks", "notes", "--prompt", "P1", "--model", "qwen2-7b", "--base-url", &url, "--budget-tokens", "3000"])?;
    cli(&run, &["synthesize", "--chunks", "notes", "--prompt", "P2", "--model", "gemma-2-9b", "--base-url", &url, "--budget-tokens", "3000"])?;
    cli(&run, &["mix", "--parent", "notes.P1.qwen2-7b@2000", "--parent", "notes.P2.gemma-2-9b@2000", "--mode", "interleave", "--id", "synthetic"])?;
    cli(&run, &["matrix", "--train", "notes.P1.qwen2-7b", "--train", "notes.P2.gemma-2-9b", "--train", "synthetic", "--test", "notes", "--order", "2", "--min-count", "1"])?;

    let store = RunDir::open(&run);
    let mut manifests = BTreeMap::new();
    for path in files_in(&run.join("manifests"))? {
        let text = std::fs::read_to_string(&path)?;
        let m = read_manifest(&path)?;
        ensure!(m.to_canonical_json() == text, "{} does not round-trip", path.display());
        validate_lineage(&store, &m)?;
        manifests.insert(m.corpus_id.clone(), m);
    }
    let mut run_manifests = 0;
    for path in files_in(&run.join("reports"))? {
        if path.to_string_lossy().ends_with(".manifest.json") {
            let text = std::fs::read_to_string(&path)?;
            let m: RunManifest = serde_json::from_str(&text)?;
            ensure!(m.to_canonical_json() == text, "{} does not round-trip", path.display());
            run_manifests += 1;
        }
    }
    ensure!(run_manifests == 1, "{run_manifests} run manifests");

    let notes: HashSet<String> = load_notes(&input, NoteFormat::Jsonl, &NoteFilter::default())?
        .notes
        .into_iter()
        .map(|n| n.note_id)
        .collect();
    let chunk_notes: HashMap<String, String> =
        store.read_chunks("notes")?.into_iter().map(|c| (c.chunk_id, c.note_id)).collect();
    let mut loaded: HashMap<String, Corpus> = HashMap::new();
    let (mut traced_tokens, mut traced_records) = (0u64, 0usize);
    for id in ["notes.P1.qwen2-7b", "notes.P2.gemma-2-9b", "synthetic"] {
        let corpus = store.read_corpus(id)?;
        ensure!(!corpus.is_empty(), "{id} is empty");
        let m = &manifests[id];
        ensure!(m.token_totals.ref_tokens == corpus.total_ref_tokens(), "{id}: manifest token total disagrees");
        let lin = lineage(&store, id)?;
        for (i, r) in corpus.records().iter().enumerate() {
            let s = &r.source;
            let (Some(prompt), Some(model)) = (&s.prompt_id, &s.model_id) else {
                bail!("{id}[{i}] lacks a prompt or model");
            };
            ensure!(r.ref_tokens == count_ref_tokens(&r.text) as u64, "{id}[{i}]: token count disagrees with text");
            ensure!(notes.contains(&s.note_id), "{id}[{i}]: unknown note {}", s.note_id);
            ensure!(chunk_notes.get(&s.chunk_id) == Some(&s.note_id), "{id}[{i}]: chunk {} not in note", s.chunk_id);
            ensure!(lin.prompt_ids().contains(prompt.as_str()), "{id}[{i}]: prompt {prompt} not in lineage");
            ensure!(lin.model_ids().contains(model.as_str()), "{id}[{i}]: model {model} not in lineage");
            trace_origin(&store, &mut loaded, id, r).with_context(|| format!("{id}[{i}]"))?;
            traced_tokens += r.ref_tokens;
            traced_records += 1;
        }
    }
    let prompts: BTreeSet<_> = lineage(&store, "synthetic")?.prompt_ids().into_iter().map(String::from).collect();
    ensure!(prompts == BTreeSet::from(["P1".to_string(), "P2".to_string()]), "mix lineage prompts {prompts:?}");
    ensure!(matches!(manifests["synthetic"].recipe, Recipe::Mixed { .. }), "mix recipe");
    Ok(format!(
        "{traced_records} records / {traced_tokens} tokens traced, {} corpus + {run_manifests} run manifests round-trip",
        manifests.len()
    ))
}

/// Follow origins down to the ingested record and check that every hop
/// keeps the note and chunk.
fn trace_origin(store: &RunDir, loaded: &mut HashMap<String, Corpus>, id: &str, record: &CorpusRecord) -> Result<()> {
    let mut current = (id.to_string(), record.clone());
    for _ in 0..8 {
        let (cid, r) = &current;
        if r.origin.corpus_id == *cid {
            let m: CorpusManifest = store.read_manifest(cid)?;
            ensure!(matches!(m.recipe, Recipe::Ingested { .. }), "chain ends at non-ingested {cid}");
            return Ok(());
        }
        let parent_id = r.origin.corpus_id.clone();
        if !loaded.contains_key(&parent_id) {
            loaded.insert(parent_id.clone(), store.read_corpus(&parent_id)?);
        }
        let parent = loaded[&parent_id]
            .records()
            .get(r.origin.record_index)
            .cloned()
            .ok_or_else(|| anyhow!("{parent_id} has no record {}", r.origin.record_index))?;
        ensure!(
            parent.source.note_id == r.source.note_id && parent.source.chunk_id == r.source.chunk_id,
            "hop to {parent_id} changes the source"
        );
        current = (parent_id, parent);
    }
    bail!("origin chain too long")
}

fn files_in(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(dir)?.map(|e| e.map(|e| e.path())).collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

fn config_export() -> Result<String> {
    let dir = tempfile::tempdir()?;
    for kind in [TrainerKind::Causal, TrainerKind::Masked] {
        let path = dir.path().join(format!("{kind}.json"));
        export_trainer_config(kind, Some("manifests/synthetic.json"), &path)?;
        let v: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(&path)?)?;
        ensure!(v["batch_sequences"].as_u64() == Some(512), "{kind}: batch_sequences {}", v["batch_sequences"]);
        ensure!(v["sequence_length"].as_u64() == Some(128), "{kind}: sequence_length {}", v["sequence_length"]);
        ensure!(v["epochs"].as_u64() == Some(5), "{kind}: epochs {}", v["epochs"]);
        ensure!(v["learning_rate"].as_f64() == Some(5e-5), "{kind}: learning_rate {}", v["learning_rate"]);
        ensure!(v["warmup_fraction"].as_f64() == Some(0.10), "{kind}: warmup_fraction {}", v["warmup_fraction"]);
        match kind {
            TrainerKind::Masked => ensure!(v["mlm_probability"].as_f64() == Some(0.15), "masked: mlm_probability"),
            TrainerKind::Causal => ensure!(v.get("mlm_probability").is_none(), "causal carries mlm_probability"),
        }
    }
    Ok("causal and masked configs exact".into())
}
