//! Rephrase clinical-style notes through OpenAI-compatible chat endpoints
//! into token-budgeted synthetic pretraining corpora.
//!
//! The pipeline runs in stages, each its own module:
//!
//! - [`ingest`] loads notes, splits sentences and packs them into chunks.
//! - [`prompting`] renders chunks into chat requests.
//! - [`gateway`] sends requests with bounded concurrency and retries.
//! - [`synthesis`] drives a rephrasing run up to a token budget.
//! - [`corpus`] truncates, samples, deduplicates and mixes corpora, and
//!   keeps a manifest for every one of them.
//! - [`eval`] scores corpora with a Kneser–Ney n-gram model.
//! - [`cli`] is the command-line front end.

pub mod cli;
pub mod corpus;
pub mod eval;
pub mod gateway;
pub mod ingest;
pub mod prompting;
pub mod synthesis;
