//! Sparse indicator features over (agent state, candidate action).
//!
//! Feature ids are strings so checkpoints stay readable. Families:
//!
//! | prefix | meaning |
//! |--------|---------|
//! | `v`    | verb |
//! | `vo`   | verb and object (object kind, or receptacle name) |
//! | `og`   | family, verb, object matches the goal kind |
//! | `rg`   | family, verb, receptacle matches the goal target |
//! | `d`    | verb and depth bucket |
//! | `rep`  | action repeats the previous action |
//! | `ph`   | family, task progress, verb and both match flags |
//! | `pv`   | family, task progress, verb and object |
//! | `vis`  | verb, destination already visited or opened |
//! | `loc`  | task progress, goal kind and destination (search priors) |
//! | `lf`   | family, task progress and destination, shared across kinds |

use std::collections::BTreeSet;

use crate::env::{object_kind, Action, Goal, Verb};
use crate::state::AgentState;

pub const FEATURE_MAP_VERSION: &str = "gridhouse-features-v1";

pub type Features = Vec<(String, f64)>;

const FAILED_PREFIX: &str = "Nothing happens";

/// Task progress reconstructed from the action history.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Progress {
    pub at: Option<String>,
    pub holding: Option<String>,
    pub treated: BTreeSet<String>,
    pub placed: usize,
    pub lamp_on: bool,
    pub visited: BTreeSet<String>,
    pub opened: BTreeSet<String>,
}

impl Progress {
    pub fn from_state(state: &AgentState, goal: Option<&Goal>) -> Self {
        let mut p = Progress::default();
        let n = state.history.len();
        for (i, entry) in state.history.iter().enumerate() {
            let next = if i + 1 < n {
                state.history[i + 1].summary.as_str()
            } else {
                state.observation.text.as_str()
            };
            if next.starts_with(FAILED_PREFIX) {
                continue;
            }
            let a = &entry.action;
            match a.verb {
                Verb::Goto => {
                    p.at = Some(a.object.clone());
                    p.visited.insert(a.object.clone());
                }
                Verb::Open => {
                    p.opened.insert(a.object.clone());
                }
                Verb::Take => p.holding = Some(a.object.clone()),
                Verb::Put => {
                    p.holding = None;
                    if let Some(g) = goal {
                        if object_kind(&a.object) == g.kind && a.receptacle.as_deref() == Some(&g.target) {
                            p.placed += 1;
                        }
                    }
                }
                Verb::Clean | Verb::Heat | Verb::Cool => {
                    p.treated.insert(a.object.clone());
                }
                Verb::Use => p.lamp_on = true,
                Verb::Close | Verb::Examine => {}
            }
        }
        p
    }

    fn phase(&self, goal: Option<&Goal>) -> String {
        let Some(goal) = goal else {
            return "x".into();
        };
        let h = match &self.holding {
            None => "h0",
            Some(o) if object_kind(o) == goal.kind => "hg",
            Some(_) => "hx",
        };
        let t = match (goal.family.required_treatment(), &self.holding) {
            (None, _) => "",
            (Some(_), Some(o)) if self.treated.contains(o) => "t1",
            (Some(_), _) => "t0",
        };
        let extra = match goal.family {
            crate::env::Family::PickTwoPlace => format!("p{}", self.placed.min(2)),
            crate::env::Family::LookInLight => format!("l{}", u8::from(self.lamp_on)),
            _ => String::new(),
        };
        format!("{h}{t}{extra}")
    }
}

fn family_tag(goal: Option<&Goal>) -> &'static str {
    goal.map(|g| g.family.as_str()).unwrap_or("Unknown")
}

fn depth_bucket(depth: usize) -> &'static str {
    match depth {
        0..=2 => "0-2",
        3..=5 => "3-5",
        6..=9 => "6-9",
        _ => "10+",
    }
}

/// Object-or-receptacle token used in verb/object features.
fn object_token(a: &Action) -> &str {
    match a.verb {
        Verb::Goto | Verb::Open | Verb::Close | Verb::Examine => &a.object,
        _ => object_kind(&a.object),
    }
}

/// The receptacle an action concerns.
fn receptacle_of(a: &Action) -> Option<&str> {
    match a.verb {
        Verb::Goto | Verb::Open | Verb::Close | Verb::Examine => Some(&a.object),
        Verb::Use => None,
        _ => a.receptacle.as_deref(),
    }
}

/// Precomputed per-state context shared by every candidate.
pub struct FeatureContext {
    goal: Option<Goal>,
    progress: Progress,
    phase: String,
    depth: &'static str,
    last: Option<Action>,
}

impl FeatureContext {
    pub fn new(state: &AgentState) -> Self {
        let goal = Goal::from_instruction(&state.instruction).ok();
        let progress = Progress::from_state(state, goal.as_ref());
        let phase = progress.phase(goal.as_ref());
        Self {
            goal,
            progress,
            phase,
            depth: depth_bucket(state.depth()),
            last: state.last_action().cloned(),
        }
    }

    pub fn featurize(&self, a: &Action) -> Features {
        let fam = family_tag(self.goal.as_ref());
        let verb = a.verb.as_str();
        let obj = object_token(a);
        let phase = &self.phase;
        let goal_obj = self.goal.as_ref().is_some_and(|g| match a.verb {
            Verb::Use => a.object == g.target,
            Verb::Goto | Verb::Open | Verb::Close | Verb::Examine => false,
            _ => object_kind(&a.object) == g.kind,
        });
        let goal_rec = self
            .goal
            .as_ref()
            .zip(receptacle_of(a))
            .is_some_and(|(g, r)| r == g.target);
        let (og, rg) = (u8::from(goal_obj), u8::from(goal_rec));

        let mut f: Features = vec![
            (format!("v:{verb}"), 1.0),
            (format!("vo:{verb}:{obj}"), 1.0),
            (format!("og:{fam}:{verb}:{og}"), 1.0),
            (format!("rg:{fam}:{verb}:{rg}"), 1.0),
            (format!("d:{verb}:{}", self.depth), 1.0),
            (format!("ph:{fam}:{phase}:{verb}:{og}{rg}"), 1.0),
            (format!("pv:{fam}:{phase}:{verb}:{obj}"), 1.0),
        ];
        if self.last.as_ref() == Some(a) {
            f.push(("rep".into(), 1.0));
        }
        match a.verb {
            Verb::Goto => {
                if self.progress.visited.contains(&a.object) {
                    f.push(("vis:goto".into(), 1.0));
                }
                if let Some(g) = &self.goal {
                    f.push((format!("loc:{phase}:{}:{}", g.kind, a.object), 1.0));
                    f.push((format!("lf:{fam}:{phase}:{}", a.object), 1.0));
                }
            }
            Verb::Open if self.progress.opened.contains(&a.object) => {
                f.push(("vis:open".into(), 1.0));
            }
            _ => {}
        }
        f
    }
}

/// Features of `action` in `state`.
pub fn featurize(state: &AgentState, action: &Action) -> Features {
    FeatureContext::new(state).featurize(action)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{FeedbackCode, Observation};
    use crate::state::IdentitySummarizer;

    fn obs(t: &str) -> Observation {
        Observation::new(t, vec![], FeedbackCode::Ok)
    }

    fn has(f: &Features, name: &str) -> bool {
        f.iter().any(|(k, v)| k == name && *v == 1.0)
    }

    #[test]
    fn goal_object_match_flags_the_target_kind() {
        let s = AgentState::init("put a pan in desk", obs("o0")).unwrap();
        let f = featurize(&s, &Action::take("pan", "countertop"));
        assert!(has(&f, "og:PickPlace:take:1"));
        let f = featurize(&s, &Action::take("book", "countertop"));
        assert!(has(&f, "og:PickPlace:take:0"));
        let f = featurize(&s, &Action::put("pan", "desk"));
        assert!(has(&f, "rg:PickPlace:put:1"));
    }

    #[test]
    fn repeat_flag_marks_the_previous_action() {
        let s = AgentState::init("put a pan in desk", obs("o0")).unwrap().advance(
            &Action::goto("desk"),
            obs("o1"),
            &IdentitySummarizer,
        );
        assert!(has(&featurize(&s, &Action::goto("desk")), "rep"));
        assert!(!has(&featurize(&s, &Action::goto("cabinet")), "rep"));
        assert!(has(&featurize(&s, &Action::goto("desk")), "vis:goto"));
    }

    #[test]
    fn progress_tracks_holding_and_treatment() {
        let steps = [
            (Action::goto("countertop"), "You arrive at countertop."),
            (Action::take("pan", "countertop"), "You pick up the pan."),
            (Action::goto("sinkbasin"), "Nothing happens."),
            (Action::goto("sinkbasin"), "You arrive at sinkbasin."),
            (Action::clean("pan", "sinkbasin"), "You clean the pan."),
        ];
        let mut s = AgentState::init("put a clean pan in desk", obs("o0")).unwrap();
        for (a, o) in steps {
            s = s.advance(&a, obs(o), &IdentitySummarizer);
        }
        let goal = Goal::from_instruction(&s.instruction).unwrap();
        let p = Progress::from_state(&s, Some(&goal));
        assert_eq!(p.holding.as_deref(), Some("pan"));
        assert!(p.treated.contains("pan"));
        assert_eq!(p.phase(Some(&goal)), "hgt1");
        // The failed first move is ignored.
        assert_eq!(p.at.as_deref(), Some("sinkbasin"));
    }

    #[test]
    fn feature_dump_is_stable() {
        let s = AgentState::init("put a clean pan in desk", obs("o0")).unwrap();
        let f = featurize(&s, &Action::goto("countertop"));
        let names: Vec<&str> = f.iter().map(|(k, _)| k.as_str()).collect();
        assert_eq!(
            names,
            [
                "v:goto",
                "vo:goto:countertop",
                "og:CleanPlace:goto:0",
                "rg:CleanPlace:goto:0",
                "d:goto:0-2",
                "ph:CleanPlace:h0t0:goto:00",
                "pv:CleanPlace:h0t0:goto:countertop",
                "loc:h0t0:pan:countertop",
                "lf:CleanPlace:h0t0:countertop",
            ]
        );
    }
}
