//! Adapter for a generative model served over newline-delimited JSON.
//!
//! Request: `{"context": "...", "candidates": ["..."], "mode": "sample"|"score"}`.
//! Response: `{"text": "..."}` for sampling, `{"scores": [..]}` with one
//! sequence log-likelihood per candidate for scoring.

use std::io::{BufRead, BufReader, Write};
use std::net::TcpStream;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{softmax, ActionDistribution, Critic, CriticScore, Policy, PolicyError};
use crate::env::Action;
use crate::state::{AgentState, PromptTemplate};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RemoteMode {
    Sample,
    Score,
}

#[derive(Debug, Serialize)]
struct ModelRequest<'a> {
    context: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    candidates: Option<Vec<String>>,
    mode: RemoteMode,
}

#[derive(Debug, Deserialize)]
#[serde(untagged)]
enum ModelResponse {
    Scores { scores: Vec<f64> },
    Text { text: String },
}

#[derive(Debug, Deserialize)]
struct StructuredReply {
    what_you_see: String,
    action: String,
}

/// Counters shared across calls.
#[derive(Debug, Default)]
pub struct RemoteStats {
    pub requests: AtomicUsize,
    pub retries: AtomicUsize,
    pub fallbacks: AtomicUsize,
}

/// Outcome of one sampling call.
#[derive(Debug, Clone, PartialEq)]
pub struct RemoteDecision {
    pub action: Action,
    /// Summary of the current observation when the model returned one.
    pub summary: Option<String>,
    pub distribution: ActionDistribution,
    pub fallback: bool,
}

struct Connection {
    reader: BufReader<TcpStream>,
    writer: TcpStream,
}

impl Connection {
    fn open(endpoint: &str) -> Result<Self, PolicyError> {
        let writer = TcpStream::connect(endpoint).map_err(|e| PolicyError::Transport(e.to_string()))?;
        let reader = BufReader::new(writer.try_clone().map_err(|e| PolicyError::Transport(e.to_string()))?);
        Ok(Self { reader, writer })
    }

    fn call(&mut self, req: &ModelRequest<'_>) -> Result<String, PolicyError> {
        let mut line = serde_json::to_string(req).expect("request serializes");
        line.push('\n');
        self.writer
            .write_all(line.as_bytes())
            .and_then(|_| self.writer.flush())
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        let mut reply = String::new();
        let n = self
            .reader
            .read_line(&mut reply)
            .map_err(|e| PolicyError::Transport(e.to_string()))?;
        if n == 0 {
            return Err(PolicyError::Transport("endpoint closed the stream".into()));
        }
        Ok(reply)
    }
}

struct Client {
    endpoint: String,
    conn: Mutex<Option<Connection>>,
}

impl Client {
    fn call(&self, req: &ModelRequest<'_>) -> Result<ModelResponse, PolicyError> {
        let mut guard = self.conn.lock().expect("connection lock");
        if guard.is_none() {
            *guard = Some(Connection::open(&self.endpoint)?);
        }
        let reply = guard.as_mut().expect("just opened").call(req);
        let reply = match reply {
            Ok(r) => r,
            Err(e) => {
                *guard = None;
                return Err(e);
            }
        };
        serde_json::from_str(reply.trim_end()).map_err(|e| PolicyError::Parse(e.to_string()))
    }
}

/// Maps raw model text onto a candidate. Accepts the canonical text or a
/// unique token prefix of one (`"take pan"` for `"take pan from countertop"`).
pub fn resolve_action(text: &str, candidates: &[Action]) -> Result<Action, PolicyError> {
    let cleaned = text.trim().trim_end_matches('.').trim().to_lowercase();
    if cleaned.is_empty() {
        return Err(PolicyError::Parse("empty output".into()));
    }
    if let Some(a) = candidates.iter().find(|a| a.render() == cleaned) {
        return Ok(a.clone());
    }
    let want: Vec<&str> = cleaned.split_whitespace().collect();
    let matches: Vec<&Action> = candidates
        .iter()
        .filter(|a| {
            let r = a.render();
            let toks: Vec<&str> = r.split_whitespace().collect();
            toks.len() >= want.len() && toks[..want.len()] == want[..]
        })
        .collect();
    match matches.as_slice() {
        [one] => Ok((*one).clone()),
        _ => Err(PolicyError::NonCandidate(cleaned)),
    }
}

/// Parses a bare action name or a `{"what_you_see", "action"}` object.
pub fn parse_model_output(text: &str, candidates: &[Action]) -> Result<(Action, Option<String>), PolicyError> {
    let trimmed = text.trim();
    if trimmed.starts_with('{') {
        let reply: StructuredReply = serde_json::from_str(trimmed).map_err(|e| PolicyError::Parse(e.to_string()))?;
        let action = resolve_action(&reply.action, candidates)?;
        return Ok((action, Some(reply.what_you_see)));
    }
    let first_line = trimmed.lines().next().unwrap_or_default();
    Ok((resolve_action(first_line, candidates)?, None))
}

/// Policy backed by a remote model.
pub struct RemotePolicy {
    client: Client,
    template: PromptTemplate,
    mode: RemoteMode,
    max_retries: usize,
    stats: RemoteStats,
}

impl RemotePolicy {
    pub fn new(endpoint: impl Into<String>, template: PromptTemplate, mode: RemoteMode) -> Self {
        Self {
            client: Client {
                endpoint: endpoint.into(),
                conn: Mutex::new(None),
            },
            template,
            mode,
            max_retries: 2,
            stats: RemoteStats::default(),
        }
    }

    pub fn stats(&self) -> &RemoteStats {
        &self.stats
    }

    fn request(&self, context: &str, candidates: &[Action], mode: RemoteMode) -> Result<ModelResponse, PolicyError> {
        self.stats.requests.fetch_add(1, Ordering::Relaxed);
        self.client.call(&ModelRequest {
            context,
            candidates: Some(candidates.iter().map(Action::render).collect()),
            mode,
        })
    }

    /// Samples one action. Parse failures and non-candidate answers are
    /// retried up to `max_retries` times, then fall back to the uniform
    /// distribution. Transport failures that survive the retries are errors.
    pub fn act(&self, state: &AgentState, candidates: &[Action]) -> Result<RemoteDecision, PolicyError> {
        if candidates.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        let context = self.template.render(state, candidates)?;
        let mut last_err = None;
        for attempt in 0..=self.max_retries {
            if attempt > 0 {
                self.stats.retries.fetch_add(1, Ordering::Relaxed);
            }
            let result = self
                .request(&context, candidates, RemoteMode::Sample)
                .and_then(|resp| match resp {
                    ModelResponse::Text { text } => parse_model_output(&text, candidates),
                    ModelResponse::Scores { .. } => {
                        Err(PolicyError::Parse("scores returned for a sample request".into()))
                    }
                });
            match result {
                Ok((action, summary)) => {
                    let idx = candidates.iter().position(|c| *c == action).expect("resolved");
                    return Ok(RemoteDecision {
                        action,
                        summary,
                        distribution: ActionDistribution::point_mass(candidates, idx),
                        fallback: false,
                    });
                }
                Err(e) => {
                    tracing::debug!(attempt, error = %e, "model call failed");
                    last_err = Some(e);
                }
            }
        }
        match last_err {
            Some(e @ PolicyError::Transport(_)) => Err(e),
            e => {
                self.stats.fallbacks.fetch_add(1, Ordering::Relaxed);
                tracing::warn!(error = ?e, "model output unusable, falling back to uniform");
                Ok(RemoteDecision {
                    action: candidates[0].clone(),
                    summary: None,
                    distribution: ActionDistribution::uniform(candidates)?,
                    fallback: true,
                })
            }
        }
    }

    /// Scores every candidate; endpoints that only sample degrade to a
    /// point mass on the sampled action.
    pub fn score(&self, state: &AgentState, candidates: &[Action]) -> Result<ActionDistribution, PolicyError> {
        if candidates.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        let context = self.template.render(state, candidates)?;
        match self.request(&context, candidates, RemoteMode::Score)? {
            ModelResponse::Scores { scores }
                if scores.len() == candidates.len() && scores.iter().all(|s| s.is_finite()) =>
            {
                Ok(ActionDistribution {
                    actions: candidates.to_vec(),
                    probabilities: softmax(&scores),
                })
            }
            ModelResponse::Scores { scores } => Err(PolicyError::Parse(format!(
                "{} scores for {} candidates",
                scores.len(),
                candidates.len()
            ))),
            ModelResponse::Text { .. } => Ok(self.act(state, candidates)?.distribution),
        }
    }
}

impl Policy for RemotePolicy {
    fn distribution(&self, state: &AgentState, candidates: &[Action]) -> Result<ActionDistribution, PolicyError> {
        match self.mode {
            RemoteMode::Sample => Ok(self.act(state, candidates)?.distribution),
            RemoteMode::Score => self.score(state, candidates),
        }
    }
}

/// Critic that asks a remote model for a scalar in `[0, 1]`.
pub struct RemoteCritic {
    client: Client,
    template: PromptTemplate,
}

impl RemoteCritic {
    pub fn new(endpoint: impl Into<String>, template: PromptTemplate) -> Self {
        Self {
            client: Client {
                endpoint: endpoint.into(),
                conn: Mutex::new(None),
            },
            template,
        }
    }
}

/// First decimal number in `text`.
fn parse_scalar(text: &str) -> Option<f64> {
    text.split(|c: char| !(c.is_ascii_digit() || c == '.' || c == '-'))
        .filter(|t| !t.is_empty())
        .find_map(|t| t.parse::<f64>().ok())
}

impl Critic for RemoteCritic {
    fn score(&self, state: &AgentState, _search_depth: usize) -> Result<CriticScore, PolicyError> {
        let context = self.template.render(state, &[])?;
        let resp = self.client.call(&ModelRequest {
            context: &context,
            candidates: None,
            mode: RemoteMode::Sample,
        })?;
        match resp {
            ModelResponse::Text { text } => parse_scalar(&text)
                .filter(|v| (0.0..=1.0).contains(v))
                .map(CriticScore::new)
                .ok_or_else(|| PolicyError::Parse(format!("no score in {text:?}"))),
            ModelResponse::Scores { .. } => Err(PolicyError::Parse("expected text".into())),
        }
    }
}
