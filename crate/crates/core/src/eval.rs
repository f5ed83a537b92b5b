//! Held-out evaluation: success rate and mean interaction steps.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::datasets::task_id;
use crate::env::{Environment, Family, OutcomeStatus, TaskSpec};
use crate::exec::par_map;
use crate::policy::{Critic, Policy};
use crate::search::{play_greedy, play_with_search, Search, SearchConfig, SearchError};

/// How the agent acts during evaluation.
#[derive(Clone, Copy)]
pub enum EvalMode<'a> {
    /// Greedy policy actions, no search.
    Greedy,
    /// Best root action of a fresh search at every step.
    Search {
        config: SearchConfig,
        critic: &'a dyn Critic,
    },
}

impl EvalMode<'_> {
    pub fn name(&self) -> &'static str {
        match self {
            EvalMode::Greedy => "greedy",
            EvalMode::Search { .. } => "search",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub task: String,
    pub family: Family,
    pub status: OutcomeStatus,
    pub reward: f64,
    /// Environment steps, no-ops included.
    pub steps: u32,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub episodes: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub mean_reward: f64,
}

impl Metrics {
    fn of<'a>(episodes: impl IntoIterator<Item = &'a EpisodeRecord>) -> Self {
        let mut m = Metrics::default();
        let (mut steps, mut reward) = (0.0, 0.0);
        for e in episodes {
            m.episodes += 1;
            m.successes += usize::from(e.status == OutcomeStatus::Completed);
            steps += f64::from(e.steps);
            reward += e.reward;
        }
        if m.episodes > 0 {
            let n = m.episodes as f64;
            m.success_rate = m.successes as f64 / n;
            m.mean_steps = steps / n;
            m.mean_reward = reward / n;
        }
        m
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mode: String,
    pub overall: Metrics,
    pub per_family: BTreeMap<String, Metrics>,
    pub notes: Vec<String>,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Plays every task once and aggregates per family and overall.
pub fn evaluate(
    policy: &dyn Policy,
    specs: &[TaskSpec],
    make_env: &(dyn Fn() -> Box<dyn Environment> + Sync),
    mode: &EvalMode<'_>,
) -> Result<EvalReport, SearchError> {
    let results = par_map(specs, |spec| {
        let mut env = make_env();
        let r = match mode {
            EvalMode::Greedy => play_greedy(spec, policy, env.as_mut()),
            EvalMode::Search { config, critic } => {
                let mut cfg = *config;
                cfg.seed ^= spec.seed;
                play_with_search(spec, &Search::new(policy, *critic, cfg), env.as_mut())
            }
        }?;
        Ok(EpisodeRecord {
            task: task_id(spec),
            family: spec.family,
            status: r.outcome.status,
            reward: r.reward,
            steps: r.outcome.steps_used,
        })
    });
    let episodes = results.into_iter().collect::<Result<Vec<_>, SearchError>>()?;
    let mut per_family = BTreeMap::new();
    let mut notes = Vec::new();
    for family in Family::ALL {
        let eps: Vec<&EpisodeRecord> = episodes.iter().filter(|e| e.family == family).collect();
        if eps.is_empty() {
            notes.push(format!("{family}: no episodes; omitted"));
        } else {
            per_family.insert(family.to_string(), Metrics::of(eps));
        }
    }
    Ok(EvalReport {
        mode: mode.name().into(),
        overall: Metrics::of(&episodes),
        per_family,
        notes,
        episodes,
    })
}
