#![allow(dead_code)]

use std::sync::Arc;

use mctsep::env::{
    Action, EnvError, EnvSnapshot, Environment, Family, FeedbackCode, GridHouse, LayoutRegistry, Observation, Outcome,
    OutcomeStatus, StepView, TaskSpec,
};
use mctsep::policy::{ActionDistribution, Critic, CriticScore, Policy, PolicyError};
use mctsep::state::AgentState;

/// What a scripted world reports for one action prefix.
pub struct ScriptNode {
    pub candidates: Vec<Action>,
    /// Terminal status, if the prefix ends the episode.
    pub terminal: Option<OutcomeStatus>,
    /// Status reported when a rollout is truncated here.
    pub now: OutcomeStatus,
}

pub type Script = Arc<dyn Fn(&[Action]) -> ScriptNode + Send + Sync>;

/// Deterministic environment whose hidden state is the action prefix.
pub struct ScriptEnv {
    script: Script,
    spec: Option<TaskSpec>,
    actions: Vec<Action>,
    pub steps_taken: usize,
}

impl ScriptEnv {
    pub fn new(script: Script) -> Self {
        Self {
            script,
            spec: None,
            actions: Vec::new(),
            steps_taken: 0,
        }
    }

    fn view(&self) -> StepView {
        let node = (self.script)(&self.actions);
        let text = if self.actions.is_empty() {
            "start".to_string()
        } else {
            self.actions.iter().map(Action::render).collect::<Vec<_>>().join(" / ")
        };
        StepView {
            observation: Observation::new(text, vec![], FeedbackCode::Ok),
            candidates: if node.terminal.is_some() {
                vec![]
            } else {
                node.candidates
            },
            terminal: node.terminal.is_some(),
            outcome: node.terminal.map(|status| Outcome {
                status,
                steps_used: self.actions.len() as u32,
            }),
        }
    }
}

impl Environment for ScriptEnv {
    fn reset(&mut self, spec: &TaskSpec) -> Result<(StepView, EnvSnapshot), EnvError> {
        self.spec = Some(spec.clone());
        self.actions.clear();
        Ok((self.view(), self.snapshot()?))
    }

    fn step(&mut self, action: &Action) -> Result<StepView, EnvError> {
        self.steps_taken += 1;
        self.actions.push(action.clone());
        Ok(self.view())
    }

    fn snapshot(&self) -> Result<EnvSnapshot, EnvError> {
        Ok(EnvSnapshot::Replay {
            spec: self.spec.clone().expect("reset first"),
            actions: self.actions.clone(),
            transcript: vec![],
        })
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError> {
        match snapshot {
            EnvSnapshot::Replay { actions, .. } => {
                self.actions = actions.clone();
                Ok(())
            }
            _ => Err(EnvError::Config("scripted env restores replay snapshots only".into())),
        }
    }

    fn status_now(&self) -> Result<Outcome, EnvError> {
        Ok(Outcome {
            status: (self.script)(&self.actions).now,
            steps_used: self.actions.len() as u32,
        })
    }
}

pub fn script_spec() -> TaskSpec {
    TaskSpec {
        family: Family::PickPlace,
        instruction: "put a book in desk".into(),
        seed: 0,
        layout_id: "script".into(),
    }
}

/// Policy with fixed unnormalized weights per action text; unlisted
/// actions get `rest`.
pub struct TablePolicy {
    pub weights: Vec<(String, f64)>,
    pub rest: f64,
}

impl TablePolicy {
    pub fn new(weights: &[(&str, f64)], rest: f64) -> Self {
        Self {
            weights: weights.iter().map(|(a, w)| (a.to_string(), *w)).collect(),
            rest,
        }
    }
}

impl Policy for TablePolicy {
    fn distribution(&self, _: &AgentState, candidates: &[Action]) -> Result<ActionDistribution, PolicyError> {
        if candidates.is_empty() {
            return Err(PolicyError::EmptyCandidates);
        }
        let w: Vec<f64> = candidates
            .iter()
            .map(|a| {
                let r = a.render();
                self.weights
                    .iter()
                    .find(|(t, _)| *t == r)
                    .map_or(self.rest, |(_, w)| *w)
            })
            .collect();
        let total: f64 = w.iter().sum();
        Ok(ActionDistribution {
            actions: candidates.to_vec(),
            probabilities: w.iter().map(|x| x / total).collect(),
        })
    }
}

pub struct ConstCritic(pub f64);

impl Critic for ConstCritic {
    fn score(&self, _: &AgentState, _: usize) -> Result<CriticScore, PolicyError> {
        Ok(CriticScore::new(self.0))
    }
}

/// Two receptacles, two kinds, one goal: small enough to count by hand.
pub fn tiny_registry() -> LayoutRegistry {
    LayoutRegistry::from_json(
        r#"{"version": 1, "layouts": [{
            "id": "tiny",
            "receptacles": [{"name": "countertop"}, {"name": "desk"}],
            "kinds": [
                {"kind": "book", "places": ["countertop"]},
                {"kind": "cd", "places": ["countertop"]}
            ],
            "goal_receptacles": ["desk"],
            "distractors": 1
        }]}"#,
    )
    .unwrap()
}

pub fn tiny_spec() -> TaskSpec {
    TaskSpec {
        family: Family::PickPlace,
        instruction: "put a book in desk".into(),
        seed: 0,
        layout_id: "tiny".into(),
    }
}

pub fn house() -> (LayoutRegistry, Arc<LayoutRegistry>) {
    let reg = LayoutRegistry::builtin();
    let arc = Arc::new(reg.clone());
    (reg, arc)
}

pub fn gridhouse(reg: &Arc<LayoutRegistry>) -> GridHouse {
    GridHouse::new(reg.clone())
}

/// Seeded tasks cycling through the families.
pub fn specs(reg: &LayoutRegistry, layout: &str, seeds: std::ops::Range<u64>) -> Vec<TaskSpec> {
    let layout = reg.get(layout).unwrap();
    seeds
        .map(|s| TaskSpec::generate(Family::ALL[(s % 6) as usize], s, layout).unwrap())
        .collect()
}

/// Oracle solutions for `n` seeded tasks, one family after another.
pub fn experts(reg: &LayoutRegistry, n: u64) -> Vec<mctsep::datasets::Trajectory> {
    let tpl = mctsep::state::PromptTemplate::text_only();
    specs(reg, "house_s", 10_000..10_000 + n)
        .iter()
        .filter_map(|s| mctsep::oracle::expert_trajectory(s, reg, 0.95, &tpl).unwrap())
        .collect()
}

/// Policy warmed up on `n` oracle experts with the default training config.
pub fn warm_params(reg: &LayoutRegistry, n: u64) -> mctsep::policy::PolicyParams {
    mctsep::training::warmup_expert(
        &mctsep::policy::PolicyParams::zeros(),
        &experts(reg, n),
        &mctsep::training::TrainConfig::default(),
    )
    .unwrap()
}
