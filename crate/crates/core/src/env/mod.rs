//! Household task environments.
//!
//! [`GridHouse`] is the deterministic in-process simulator; [`ExternalEnv`]
//! drives any environment that speaks the newline-delimited JSON protocol in
//! [`external`]. Both implement [`Environment`].

mod action;
pub mod external;
mod gridhouse;
mod layout;
mod task;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use action::{sort_canonical, Action, Verb};
pub use external::{ExternalEnv, GridHouseServer};
pub use gridhouse::{GridHouse, ObjectState, WorldState, DEFAULT_STEP_CAP};
pub use layout::{Appliance, FixtureDef, KindDef, Layout, LayoutRegistry, ReceptacleDef, LAYOUT_FORMAT_VERSION};
pub use task::{object_kind, Goal};

#[derive(Debug, Error)]
pub enum EnvError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("protocol error: {0}")]
    Protocol(String),
    #[error("cannot parse action {0:?}")]
    ActionSyntax(String),
    #[error("connection failure: {0}")]
    Connection(String),
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("replay divergence at step {step}: expected {expected:?}, got {actual:?}")]
    ReplayDivergence {
        step: usize,
        expected: String,
        actual: String,
    },
}

/// The six household task families.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Family {
    PickPlace,
    CleanPlace,
    HeatPlace,
    CoolPlace,
    LookInLight,
    PickTwoPlace,
}

impl Family {
    pub const ALL: [Family; 6] = [
        Family::PickPlace,
        Family::CleanPlace,
        Family::HeatPlace,
        Family::CoolPlace,
        Family::LookInLight,
        Family::PickTwoPlace,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Family::PickPlace => "PickPlace",
            Family::CleanPlace => "CleanPlace",
            Family::HeatPlace => "HeatPlace",
            Family::CoolPlace => "CoolPlace",
            Family::LookInLight => "LookInLight",
            Family::PickTwoPlace => "PickTwoPlace",
        }
    }

    /// The attribute the target must carry, if any.
    pub fn required_treatment(self) -> Option<Appliance> {
        match self {
            Family::CleanPlace => Some(Appliance::Clean),
            Family::HeatPlace => Some(Appliance::Heat),
            Family::CoolPlace => Some(Appliance::Cool),
            _ => None,
        }
    }
}

impl std::fmt::Display for Family {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Family {
    type Err = EnvError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Family::ALL
            .into_iter()
            .find(|f| f.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| EnvError::Config(format!("unknown task family {s:?}")))
    }
}

/// One task instance: family, instruction, seed and layout.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct TaskSpec {
    pub family: Family,
    pub instruction: String,
    pub seed: u64,
    pub layout_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeedbackCode {
    Ok,
    InvalidAction,
    NothingHappens,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Observation {
    pub text: String,
    pub visible_objects: Vec<String>,
    pub feedback: FeedbackCode,
}

impl Observation {
    pub fn new(text: impl Into<String>, visible_objects: Vec<String>, feedback: FeedbackCode) -> Self {
        Self {
            text: text.into(),
            visible_objects,
            feedback,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutcomeStatus {
    Completed,
    Partial,
    Incomplete,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Outcome {
    pub status: OutcomeStatus,
    pub steps_used: u32,
}

/// Terminal outcome reward: 1 for completed, 0.5 for partial, 0 otherwise.
pub fn outcome_reward(outcome: &Outcome) -> f64 {
    status_reward(outcome.status)
}

pub fn status_reward(status: OutcomeStatus) -> f64 {
    match status {
        OutcomeStatus::Completed => 1.0,
        OutcomeStatus::Partial => 0.5,
        OutcomeStatus::Incomplete => 0.0,
    }
}

/// What an environment reports after reset or step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepView {
    pub observation: Observation,
    pub candidates: Vec<Action>,
    pub terminal: bool,
    pub outcome: Option<Outcome>,
}

/// Opaque capture of an environment at one point of an episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum EnvSnapshot {
    /// Full hidden state of an in-process GridHouse episode.
    World { layout_id: String, world: WorldState },
    /// Action prefix with the observations recorded when it was first played.
    Replay {
        spec: TaskSpec,
        actions: Vec<Action>,
        transcript: Vec<String>,
    },
}

impl EnvSnapshot {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("snapshot serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        serde_json::from_str(text).map_err(|e| EnvError::Malformed(e.to_string()))
    }
}

/// A POMDP episode driver.
pub trait Environment: Send {
    /// Starts an episode. Returns the first view and a snapshot of the
    /// initial state.
    fn reset(&mut self, spec: &TaskSpec) -> Result<(StepView, EnvSnapshot), EnvError>;

    fn step(&mut self, action: &Action) -> Result<StepView, EnvError>;

    fn snapshot(&self) -> Result<EnvSnapshot, EnvError>;

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError>;

    /// Outcome the goal predicate assigns to the current state, whether or
    /// not the episode has ended. Used when a rollout is truncated.
    fn status_now(&self) -> Result<Outcome, EnvError>;
}

impl<E: Environment + ?Sized> Environment for Box<E> {
    fn reset(&mut self, spec: &TaskSpec) -> Result<(StepView, EnvSnapshot), EnvError> {
        (**self).reset(spec)
    }
    fn step(&mut self, action: &Action) -> Result<StepView, EnvError> {
        (**self).step(action)
    }
    fn snapshot(&self) -> Result<EnvSnapshot, EnvError> {
        (**self).snapshot()
    }
    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError> {
        (**self).restore(snapshot)
    }
    fn status_now(&self) -> Result<Outcome, EnvError> {
        (**self).status_now()
    }
}
