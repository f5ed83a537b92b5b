//! Action-distribution providers and the expansion critic.

mod critic;
pub mod features;
pub mod remote;

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::Action;
use crate::state::{AgentState, StateError};

pub use critic::{Critic, CriticScore, HeuristicCritic, DEFAULT_TAU_EXPAND};
pub use features::{featurize, FeatureContext, Features, FEATURE_MAP_VERSION};
pub use remote::{RemoteCritic, RemoteDecision, RemoteMode, RemotePolicy, RemoteStats};

pub const PARAMS_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("candidate list is empty")]
    EmptyCandidates,
    #[error("action {0:?} is not among the candidates")]
    NotACandidate(String),
    #[error("transport error: {0}")]
    Transport(String),
    #[error("cannot parse model output: {0}")]
    Parse(String),
    #[error("model chose a non-candidate action: {0}")]
    NonCandidate(String),
    #[error(transparent)]
    Template(#[from] StateError),
    #[error("params file: {0}")]
    Io(String),
    #[error("params version {found} (expected {expected})")]
    Version { found: String, expected: String },
}

/// Weights of the featurized softmax policy, keyed by feature id.
/// Features missing from the map have weight zero.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicyParams {
    pub format_version: u32,
    pub feature_map: String,
    pub weights: BTreeMap<String, f64>,
}

impl Default for PolicyParams {
    fn default() -> Self {
        Self::zeros()
    }
}

impl PolicyParams {
    pub fn zeros() -> Self {
        Self {
            format_version: PARAMS_FORMAT_VERSION,
            feature_map: FEATURE_MAP_VERSION.to_owned(),
            weights: BTreeMap::new(),
        }
    }

    pub fn weight(&self, feature: &str) -> f64 {
        self.weights.get(feature).copied().unwrap_or(0.0)
    }

    pub fn dot(&self, features: &Features) -> f64 {
        features.iter().map(|(k, v)| self.weight(k) * v).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.weights.values().all(|w| w.is_finite())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn from_json(text: &str) -> Result<Self, PolicyError> {
        let p: PolicyParams = serde_json::from_str(text).map_err(|e| PolicyError::Io(e.to_string()))?;
        if p.format_version != PARAMS_FORMAT_VERSION {
            return Err(PolicyError::Version {
                found: p.format_version.to_string(),
                expected: PARAMS_FORMAT_VERSION.to_string(),
            });
        }
        if p.feature_map != FEATURE_MAP_VERSION {
            return Err(PolicyError::Version {
                found: p.feature_map,
                expected: FEATURE_MAP_VERSION.into(),
            });
        }
        if !p.is_finite() {
            return Err(PolicyError::Io("non-finite weight".into()));
        }
        Ok(p)
    }

    pub fn load(path: &Path) -> Result<Self, PolicyError> {
        let text = std::fs::read_to_string(path).map_err(|e| PolicyError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }
}

/// Probabilities over an ordered candidate list.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActionDistribution {
    pub actions: Vec<Action>,
    pub probabilities: Vec<f64>,
}

impl ActionDistribution {
    pub fn uniform(actions: &[Action]) -> Result<Self, PolicyError> {
        if actions.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        let p = 1.0 / actions.len() as f64;
        Ok(Self {
            actions: actions.to_vec(),
            probabilities: vec![p; actions.len()],
        })
    }

    pub fn point_mass(actions: &[Action], chosen: usize) -> Self {
        let mut probabilities = vec![0.0; actions.len()];
        probabilities[chosen] = 1.0;
        Self {
            actions: actions.to_vec(),
            probabilities,
        }
    }

    pub fn from_logits(actions: &[Action], logits: &[f64]) -> Result<Self, PolicyError> {
        if actions.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        Ok(Self {
            actions: actions.to_vec(),
            probabilities: softmax(logits),
        })
    }

    pub fn probability(&self, action: &Action) -> Option<f64> {
        self.actions
            .iter()
            .position(|a| a == action)
            .map(|i| self.probabilities[i])
    }

    /// Index of the most probable action; ties go to the earliest.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &p) in self.probabilities.iter().enumerate() {
            if p > self.probabilities[best] {
                best = i;
            }
        }
        best
    }

    pub fn greedy(&self) -> &Action {
        &self.actions[self.argmax()]
    }
}

/// Max-subtracted softmax.
pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
    let z: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / z).collect()
}

/// Log-softmax computed with the log-sum-exp shift.
pub fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    logits.iter().map(|l| l - lse).collect()
}

/// Anything that can put a distribution over candidate actions.
pub trait Policy: Send + Sync {
    fn distribution(&self, state: &AgentState, candidates: &[Action]) -> Result<ActionDistribution, PolicyError>;
}

/// Linear-softmax policy over [`featurize`] features.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SoftmaxPolicy {
    pub params: PolicyParams,
}

impl SoftmaxPolicy {
    pub fn new(params: PolicyParams) -> Self {
        Self { params }
    }
}

impl Policy for SoftmaxPolicy {
    fn distribution(&self, state: &AgentState, candidates: &[Action]) -> Result<ActionDistribution, PolicyError> {
        action_distribution(&self.params, state, candidates)
    }
}

pub fn logits(params: &PolicyParams, state: &AgentState, candidates: &[Action]) -> Vec<f64> {
    let ctx = FeatureContext::new(state);
    candidates.iter().map(|a| params.dot(&ctx.featurize(a))).collect()
}

pub fn action_distribution(
    params: &PolicyParams,
    state: &AgentState,
    candidates: &[Action],
) -> Result<ActionDistribution, PolicyError> {
    ActionDistribution::from_logits(candidates, &logits(params, state, candidates))
}

pub fn log_prob(
    params: &PolicyParams,
    state: &AgentState,
    action: &Action,
    candidates: &[Action],
) -> Result<f64, PolicyError> {
    if candidates.is_empty() {
        return Err(PolicyError::EmptyCandidates);
    }
    let idx = candidates
        .iter()
        .position(|c| c == action)
        .ok_or_else(|| PolicyError::NotACandidate(action.render()))?;
    Ok(log_softmax(&logits(params, state, candidates))[idx])
}

pub fn greedy_action(params: &PolicyParams, state: &AgentState, candidates: &[Action]) -> Result<Action, PolicyError> {
    Ok(action_distribution(params, state, candidates)?.greedy().clone())
}
