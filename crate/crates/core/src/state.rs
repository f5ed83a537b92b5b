//! Selective agent state: the instruction, a compressed action/summary
//! history, and only the newest observation in full.

use std::fmt;

use serde::{Deserialize, Deserializer, Serialize, Serializer};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{Action, Observation};

#[derive(Debug, Error, PartialEq, Eq)]
pub enum StateError {
    #[error("instruction must not be empty")]
    EmptyInstruction,
    #[error("template references unbound placeholder {{{0}}}")]
    UnboundPlaceholder(String),
    #[error("template has an unterminated placeholder at byte {0}")]
    Unterminated(usize),
}

/// Turns a retired observation into the short text kept in history.
pub trait Summarizer: Send + Sync {
    fn summarize(&self, observation: &Observation) -> String;
}

/// Keeps observation text unchanged. GridHouse observations are already one line.
#[derive(Debug, Default, Clone, Copy)]
pub struct IdentitySummarizer;

impl Summarizer for IdentitySummarizer {
    fn summarize(&self, observation: &Observation) -> String {
        observation.text.clone()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct HistoryEntry {
    pub action: Action,
    /// Summary of the observation the action was taken from.
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AgentState {
    pub instruction: String,
    pub history: Vec<HistoryEntry>,
    pub observation: Observation,
}

impl AgentState {
    pub fn init(instruction: &str, observation: Observation) -> Result<Self, StateError> {
        if instruction.trim().is_empty() {
            return Err(StateError::EmptyInstruction);
        }
        Ok(Self {
            instruction: instruction.to_owned(),
            history: Vec::new(),
            observation,
        })
    }

    pub fn depth(&self) -> usize {
        self.history.len()
    }

    /// New state after taking `action` and seeing `next`. The retired
    /// observation is compressed by `summarizer`.
    pub fn advance(&self, action: &Action, next: Observation, summarizer: &dyn Summarizer) -> Self {
        let summary = summarizer.summarize(&self.observation);
        self.advance_with_summary(action, next, summary)
    }

    /// Like [`advance`](Self::advance) with a summary produced elsewhere,
    /// e.g. by a model that returns the action and summary together.
    pub fn advance_with_summary(&self, action: &Action, next: Observation, summary: String) -> Self {
        let mut history = self.history.clone();
        history.push(HistoryEntry {
            action: action.clone(),
            summary,
        });
        Self {
            instruction: self.instruction.clone(),
            history,
            observation: next,
        }
    }

    pub fn last_action(&self) -> Option<&Action> {
        self.history.last().map(|h| &h.action)
    }

    pub fn key(&self) -> StateKey {
        let mut h = Sha256::new();
        let mut field = |bytes: &[u8]| {
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(bytes);
        };
        field(self.instruction.as_bytes());
        for entry in &self.history {
            field(entry.action.render().as_bytes());
            field(entry.summary.as_bytes());
        }
        let digest = h.finalize();
        let mut key = [0u8; 16];
        key.copy_from_slice(&digest[..16]);
        StateKey(key)
    }

    pub fn render(&self, template: &PromptTemplate, candidates: &[Action]) -> Result<String, StateError> {
        template.render(self, candidates)
    }
}

/// 128-bit identity of an agent state's instruction and history.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct StateKey(pub [u8; 16]);

impl fmt::Debug for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "StateKey({self})")
    }
}

impl fmt::Display for StateKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&hex::encode(self.0))
    }
}

impl Serialize for StateKey {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for StateKey {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let text = String::deserialize(d)?;
        let bytes = hex::decode(&text).map_err(serde::de::Error::custom)?;
        let key: [u8; 16] = bytes
            .try_into()
            .map_err(|_| serde::de::Error::custom("state key must be 16 bytes"))?;
        Ok(StateKey(key))
    }
}

const SYSTEM_PREAMBLE: &str = "You are an AI robot agent in an interactive environment. \
Your goal is to accomplish the given task through a series of actions. Follow these guidelines:";

const TEXT_GUIDELINES: &str = "\
- Carefully analyze the task requirements. Break down complex tasks into smaller, manageable steps and create a mental plan before acting
- Be persistent in searching for required objects. When searching for objects, use common sense to predict likely locations, then systematically explore those areas
- For tasks involving multiple objects, keep a mental count of how many you've collected or placed
- Avoid repeating the same action consecutively. If an action doesn't work, explore other objects or locations
- Your response must be exactly one action name chosen strictly from provided candidate actions";

const JSON_GUIDELINES: &str = "\
- Carefully analyze the task requirements. When searching for objects, use common sense to predict likely locations
- For tasks involving multiple objects, keep a mental count of collected or placed items
- Respond only with a JSON object containing:
  - \"what_you_see\": your detailed observation
  - \"action\": one action name";

const BODY: &str = "

Task: {instruction}
History:
{history}
Current observation: {observation}
Candidate actions:
{candidates}";

/// Plain-text prompt with `{instruction}`, `{history}`, `{observation}` and
/// `{candidates}` placeholders. `{{` and `}}` escape literal braces.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptTemplate {
    pub name: String,
    pub text: String,
}

enum Piece<'a> {
    Literal(&'a str),
    Slot(&'a str),
}

impl PromptTemplate {
    pub const PLACEHOLDERS: [&'static str; 4] = ["instruction", "history", "observation", "candidates"];

    pub fn new(name: impl Into<String>, text: impl Into<String>) -> Result<Self, StateError> {
        let t = Self {
            name: name.into(),
            text: text.into(),
        };
        t.pieces()?;
        Ok(t)
    }

    /// Single-action text prompt.
    pub fn text_only() -> Self {
        Self {
            name: "text-only".into(),
            text: format!("{SYSTEM_PREAMBLE}\n{TEXT_GUIDELINES}{BODY}"),
        }
    }

    /// Prompt asking for a JSON object with `what_you_see` and `action`.
    pub fn multi_modal() -> Self {
        Self {
            name: "multi-modal".into(),
            text: format!("{SYSTEM_PREAMBLE}\n{JSON_GUIDELINES}{BODY}"),
        }
    }

    pub fn load(path: &std::path::Path) -> std::io::Result<Result<Self, StateError>> {
        let text = std::fs::read_to_string(path)?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        Ok(Self::new(name, text))
    }

    fn pieces(&self) -> Result<Vec<Piece<'_>>, StateError> {
        let text = self.text.as_str();
        let mut out = Vec::new();
        let mut start = 0;
        let mut i = 0;
        let bytes = text.as_bytes();
        while i < bytes.len() {
            match bytes[i] {
                b'{' if bytes.get(i + 1) == Some(&b'{') => {
                    out.push(Piece::Literal(&text[start..i + 1]));
                    i += 2;
                    start = i;
                }
                b'}' if bytes.get(i + 1) == Some(&b'}') => {
                    out.push(Piece::Literal(&text[start..i + 1]));
                    i += 2;
                    start = i;
                }
                b'{' => {
                    let end = text[i..].find('}').ok_or(StateError::Unterminated(i))? + i;
                    let name = &text[i + 1..end];
                    if !Self::PLACEHOLDERS.contains(&name) {
                        return Err(StateError::UnboundPlaceholder(name.to_owned()));
                    }
                    out.push(Piece::Literal(&text[start..i]));
                    out.push(Piece::Slot(name));
                    i = end + 1;
                    start = i;
                }
                _ => i += 1,
            }
        }
        out.push(Piece::Literal(&text[start..]));
        Ok(out)
    }

    pub fn render(&self, state: &AgentState, candidates: &[Action]) -> Result<String, StateError> {
        let mut out = String::with_capacity(self.text.len() + 256);
        for piece in self.pieces()? {
            match piece {
                Piece::Literal(s) => out.push_str(s),
                Piece::Slot("instruction") => out.push_str(&state.instruction),
                Piece::Slot("observation") => out.push_str(&state.observation.text),
                Piece::Slot("history") => out.push_str(&render_history(state)),
                Piece::Slot(_) => {
                    let lines: Vec<String> = candidates.iter().map(|a| format!("- {a}")).collect();
                    out.push_str(&lines.join("\n"));
                }
            }
        }
        Ok(out)
    }
}

fn render_history(state: &AgentState) -> String {
    if state.history.is_empty() {
        return "(none)".to_owned();
    }
    let lines: Vec<String> = state
        .history
        .iter()
        .enumerate()
        .map(|(i, h)| format!("{}. {} => {}", i + 1, h.summary, h.action))
        .collect();
    lines.join("\n")
}
