//! Rephrasing prompts and chat request rendering.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::gateway::DecodingParams;
use crate::ingest::Chunk;

pub const SYSTEM_PROMPT: &str = "You are a medical artificial intelligence assistant. The assistant gives truthful, detailed, and professional answers to the requests.";

/// Wikipedia-style general paraphrase.
pub const PROMPT_1: &str = "For the following paragraph give me a diverse paraphrase of the same in high quality English language as in sentences on Wikipedia:";

/// Professional medical paraphrase.
pub const PROMPT_2: &str = "For the following paragraph give me a paraphrase of the same in high quality professional medical English language:";

/// Medical paraphrase that also explains terminology.
pub const PROMPT_3: &str = "For the following paragraph give me a paraphrase of the same in high quality professional medical English language and explain the medical terms using your medical knowledge when necessary:";

pub const BUILTIN_IDS: [&str; 3] = ["P1", "P2", "P3"];

/// Separator between the instruction and the chunk in the user message.
pub const PROMPT_CHUNK_JOIN: &str = "\n\n";

#[derive(Debug, thiserror::Error)]
pub enum PromptError {
    #[error("unknown prompt id {id:?}; available: {}", available.join(", "))]
    Unknown { id: String, available: Vec<String> },
    #[error("prompt id {0:?} is reserved for a built-in template")]
    Reserved(String),
    #[error("prompt id {0:?} is already registered")]
    Duplicate(String),
    #[error("invalid prompt template: {0}")]
    Invalid(String),
    #[error("prompt template JSON: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PromptTemplate {
    pub prompt_id: String,
    pub system_text: String,
    pub user_prefix: String,
}

impl PromptTemplate {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("template serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, PromptError> {
        let t: Self = serde_json::from_str(s)?;
        if t.prompt_id.trim().is_empty() || t.user_prefix.is_empty() {
            return Err(PromptError::Invalid("prompt_id and user_prefix must be non-empty".into()));
        }
        Ok(t)
    }
}

fn builtin(prompt_id: &str, user_prefix: &str) -> PromptTemplate {
    PromptTemplate {
        prompt_id: prompt_id.to_string(),
        system_text: SYSTEM_PROMPT.to_string(),
        user_prefix: user_prefix.to_string(),
    }
}

/// Built-in templates plus user-registered ones. Built-ins cannot be replaced.
#[derive(Debug, Clone)]
pub struct PromptRegistry {
    templates: BTreeMap<String, PromptTemplate>,
}

impl Default for PromptRegistry {
    fn default() -> Self {
        let templates = [("P1", PROMPT_1), ("P2", PROMPT_2), ("P3", PROMPT_3)]
            .into_iter()
            .map(|(id, text)| (id.to_string(), builtin(id, text)))
            .collect();
        Self { templates }
    }
}

impl PromptRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, template: PromptTemplate) -> Result<(), PromptError> {
        if BUILTIN_IDS.contains(&template.prompt_id.as_str()) {
            return Err(PromptError::Reserved(template.prompt_id));
        }
        if self.templates.contains_key(&template.prompt_id) {
            return Err(PromptError::Duplicate(template.prompt_id));
        }
        self.templates.insert(template.prompt_id.clone(), template);
        Ok(())
    }

    pub fn get(&self, prompt_id: &str) -> Result<&PromptTemplate, PromptError> {
        self.templates.get(prompt_id).ok_or_else(|| PromptError::Unknown {
            id: prompt_id.to_string(),
            available: self.ids(),
        })
    }

    pub fn ids(&self) -> Vec<String> {
        self.templates.keys().cloned().collect()
    }
}

/// Look up a built-in template.
pub fn get_prompt(prompt_id: &str) -> Result<PromptTemplate, PromptError> {
    PromptRegistry::default().get(prompt_id).cloned()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

/// A rendered rephrasing request for one chunk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub chunk_id: String,
    pub prompt_id: String,
    pub messages: Vec<ChatMessage>,
    pub decoding: DecodingParams,
}

pub fn render_request(template: &PromptTemplate, chunk: &Chunk, decoding: &DecodingParams) -> ChatRequest {
    ChatRequest {
        chunk_id: chunk.chunk_id.clone(),
        prompt_id: template.prompt_id.clone(),
        messages: vec![
            ChatMessage {
                role: Role::System,
                content: template.system_text.clone(),
            },
            ChatMessage {
                role: Role::User,
                content: format!("{}{PROMPT_CHUNK_JOIN}{}", template.user_prefix, chunk.text),
            },
        ],
        decoding: decoding.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn chunk(text: &str) -> Chunk {
        Chunk {
            chunk_id: "n1:0".into(),
            note_id: "n1".into(),
            sentence_indices: 0..1,
            text: text.into(),
            ref_token_count: crate::ingest::count_ref_tokens(text),
            overflow: false,
        }
    }

    #[test]
    fn builtins_share_system_text() {
        let reg = PromptRegistry::default();
        for id in BUILTIN_IDS {
            assert_eq!(reg.get(id).unwrap().system_text, SYSTEM_PROMPT);
        }
        assert!(PROMPT_3.ends_with("explain the medical terms using your medical knowledge when necessary:"));
        assert!(PROMPT_3.starts_with(&PROMPT_2[..PROMPT_2.len() - 1]));
    }

    #[test]
    fn unknown_id_lists_available() {
        let err = get_prompt("P9").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("P1, P2, P3"), "{msg}");
    }

    #[test]
    fn custom_templates_are_namespaced() {
        let mut reg = PromptRegistry::default();
        let mut t = builtin("P2", "x:");
        assert!(matches!(reg.register(t.clone()), Err(PromptError::Reserved(_))));
        t.prompt_id = "radiology-v1".into();
        reg.register(t.clone()).unwrap();
        assert!(matches!(reg.register(t), Err(PromptError::Duplicate(_))));
        assert_eq!(reg.ids(), ["P1", "P2", "P3", "radiology-v1"]);
    }

    #[test]
    fn template_json_round_trip() {
        let t = get_prompt("P1").unwrap();
        assert_eq!(PromptTemplate::from_json(&t.to_json()).unwrap(), t);
        assert!(PromptTemplate::from_json(r#"{"prompt_id":"x","system_text":"s","user_prefix":"u","extra":1}"#).is_err());
    }

    #[test]
    fn render_joins_prefix_and_chunk() {
        let req = render_request(&get_prompt("P2").unwrap(), &chunk("Pt afebrile."), &DecodingParams::default());
        assert_eq!(req.messages[0].role, Role::System);
        assert_eq!(req.messages[0].content, SYSTEM_PROMPT);
        assert_eq!(req.messages[1].content, format!("{PROMPT_2}\n\nPt afebrile."));
        assert_eq!(req.chunk_id, "n1:0");
    }
}
