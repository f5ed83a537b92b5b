use serde::{Deserialize, Serialize};

use super::PolicyError;
use crate::env::Verb;
use crate::state::AgentState;

pub const DEFAULT_TAU_EXPAND: f64 = 0.5;

/// Expansion confidence in `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct CriticScore(f64);

impl CriticScore {
    pub fn new(value: f64) -> Self {
        Self(if value.is_nan() { 0.0 } else { value.clamp(0.0, 1.0) })
    }

    pub fn value(self) -> f64 {
        self.0
    }
}

/// Decides whether a search leaf is worth expanding.
pub trait Critic: Send + Sync {
    /// `search_depth` is the leaf's depth below the search root.
    fn score(&self, state: &AgentState, search_depth: usize) -> Result<CriticScore, PolicyError>;
}

/// `1 - loop_penalty - depth_weight * depth / d_max`, clamped.
///
/// A state loops when its current observation already appeared earlier on
/// its own path with only movement or examination in between, i.e. the
/// agent is back where it was without having changed anything. With the
/// defaults a leaf at `d_max` scores exactly [`DEFAULT_TAU_EXPAND`], which
/// the strict gate rejects.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeuristicCritic {
    pub d_max: usize,
    pub loop_penalty: f64,
    pub depth_weight: f64,
}

impl HeuristicCritic {
    pub fn new(d_max: usize) -> Self {
        Self {
            d_max,
            loop_penalty: 1.0,
            depth_weight: 0.5,
        }
    }

    pub fn loops(state: &AgentState) -> bool {
        for h in state.history.iter().rev() {
            if !matches!(h.action.verb, Verb::Goto | Verb::Examine) {
                return false;
            }
            if h.summary == state.observation.text {
                return true;
            }
        }
        false
    }
}

impl Critic for HeuristicCritic {
    fn score(&self, state: &AgentState, search_depth: usize) -> Result<CriticScore, PolicyError> {
        let mut v = 1.0;
        if Self::loops(state) {
            v -= self.loop_penalty;
        }
        if self.d_max > 0 {
            v -= self.depth_weight * search_depth as f64 / self.d_max as f64;
        }
        Ok(CriticScore::new(v))
    }
}
