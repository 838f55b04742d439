//! Test support: a mock chat-completions server, stand-in data generators
//! and a brute-force Kneser–Ney oracle.

pub mod gen;
pub mod kn_oracle;
pub mod mock;

pub use mock::{dead_base_url, Faults, MockConfig, MockServer, Responder};
