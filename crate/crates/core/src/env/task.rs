//! Task generation and instruction grammar.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::gridhouse::{ObjectState, WorldState};
use super::{EnvError, Family, KindDef, Layout, TaskSpec};

const TASK_SALT: u64 = 0x7461_736b_5f67_656e;
const PLACE_SALT: u64 = 0x706c_6163_656d_6e74;

/// Goal parsed from an instruction.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Goal {
    pub family: Family,
    pub kind: String,
    /// Goal receptacle for placement families, lamp id for `LookInLight`.
    pub target: String,
}

impl Goal {
    /// Parses an instruction according to the family's grammar:
    ///
    /// ```text
    /// PickPlace     put a <kind> in <receptacle>
    /// CleanPlace    put a clean <kind> in <receptacle>
    /// HeatPlace     put a hot <kind> in <receptacle>
    /// CoolPlace     put a cool <kind> in <receptacle>
    /// LookInLight   look at <kind> under the <lamp>
    /// PickTwoPlace  put two <kind> in <receptacle>
    /// ```
    pub fn parse(family: Family, instruction: &str) -> Result<Self, EnvError> {
        let toks: Vec<&str> = instruction.split_whitespace().collect();
        let parsed = match (family, toks.as_slice()) {
            (Family::PickPlace, ["put", "a", kind, "in", rec])
            | (Family::CleanPlace, ["put", "a", "clean", kind, "in", rec])
            | (Family::HeatPlace, ["put", "a", "hot", kind, "in", rec])
            | (Family::CoolPlace, ["put", "a", "cool", kind, "in", rec])
            | (Family::PickTwoPlace, ["put", "two", kind, "in", rec])
            | (Family::LookInLight, ["look", "at", kind, "under", "the", rec]) => Some((*kind, *rec)),
            _ => None,
        };
        let (kind, target) = parsed
            .ok_or_else(|| EnvError::Config(format!("instruction {instruction:?} does not match {family} grammar")))?;
        Ok(Goal {
            family,
            kind: kind.to_owned(),
            target: target.to_owned(),
        })
    }

    /// Parses an instruction of any family; the grammars are disjoint.
    pub fn from_instruction(instruction: &str) -> Result<Self, EnvError> {
        Family::ALL
            .into_iter()
            .find_map(|f| Goal::parse(f, instruction).ok())
            .ok_or_else(|| EnvError::Config(format!("unrecognized instruction {instruction:?}")))
    }

    pub fn instruction(&self) -> String {
        let Goal { kind, target, .. } = self;
        match self.family {
            Family::PickPlace => format!("put a {kind} in {target}"),
            Family::CleanPlace => format!("put a clean {kind} in {target}"),
            Family::HeatPlace => format!("put a hot {kind} in {target}"),
            Family::CoolPlace => format!("put a cool {kind} in {target}"),
            Family::LookInLight => format!("look at {kind} under the {target}"),
            Family::PickTwoPlace => format!("put two {kind} in {target}"),
        }
    }

    pub fn target_count(&self) -> usize {
        if self.family == Family::PickTwoPlace {
            2
        } else {
            1
        }
    }

    fn check<'a>(&self, layout: &'a Layout) -> Result<&'a KindDef, EnvError> {
        let err = |m: String| EnvError::Config(format!("{}: {m}", layout.id));
        let kind = layout
            .kind(&self.kind)
            .ok_or_else(|| err(format!("unknown object kind {}", self.kind)))?;
        match self.family {
            Family::LookInLight => {
                if layout.lamp().map(|l| l.id.as_str()) != Some(self.target.as_str()) {
                    return Err(err(format!("no lamp named {}", self.target)));
                }
            }
            _ => {
                if layout.receptacle(&self.target).is_none() {
                    return Err(err(format!("unknown receptacle {}", self.target)));
                }
            }
        }
        if let Some(t) = self.family.required_treatment() {
            if !kind.can(t) {
                return Err(err(format!("{} cannot be treated for {}", self.kind, self.family)));
            }
        }
        Ok(kind)
    }
}

/// Kind of an object id: the id with trailing digits removed.
pub fn object_kind(id: &str) -> &str {
    id.trim_end_matches(|c: char| c.is_ascii_digit())
}

fn eligible_kinds(family: Family, layout: &Layout) -> Vec<&KindDef> {
    layout
        .kinds
        .iter()
        .filter(|k| match family.required_treatment() {
            Some(t) => k.can(t),
            None => k.is_plain(),
        })
        .collect()
}

impl TaskSpec {
    /// Draws a task of `family` in `layout`, deterministic in `seed`.
    pub fn generate(family: Family, seed: u64, layout: &Layout) -> Result<TaskSpec, EnvError> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ TASK_SALT ^ (family as u64) << 56);
        let kinds = eligible_kinds(family, layout);
        let kind = kinds
            .choose(&mut rng)
            .ok_or_else(|| EnvError::Config(format!("{}: no kind fits {family}", layout.id)))?;
        let target = if family == Family::LookInLight {
            layout
                .lamp()
                .ok_or_else(|| EnvError::Config(format!("{}: no lamp", layout.id)))?
                .id
                .clone()
        } else {
            let goals: Vec<&String> = layout
                .goal_receptacles
                .iter()
                .filter(|g| kind.places.iter().any(|p| p != *g))
                .collect();
            (*goals
                .choose(&mut rng)
                .ok_or_else(|| EnvError::Config(format!("{}: no goal receptacle", layout.id)))?)
            .clone()
        };
        let goal = Goal {
            family,
            kind: kind.kind.clone(),
            target,
        };
        Ok(TaskSpec {
            family,
            instruction: goal.instruction(),
            seed,
            layout_id: layout.id.clone(),
        })
    }
}

/// Seeded initial hidden state for `spec`.
pub(crate) fn initial_world(spec: &TaskSpec, layout: &Layout) -> Result<WorldState, EnvError> {
    if spec.instruction.trim().is_empty() {
        return Err(EnvError::Config("empty instruction".into()));
    }
    let goal = Goal::parse(spec.family, &spec.instruction)?;
    let kind = goal.check(layout)?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed ^ PLACE_SALT);

    let count = goal.target_count();
    let target_places: Vec<&String> = kind.places.iter().filter(|p| **p != goal.target).collect();
    if target_places.is_empty() {
        return Err(EnvError::Config(format!(
            "{}: {} can only start in the goal receptacle",
            layout.id, kind.kind
        )));
    }
    let mut objects = Vec::new();
    for i in 0..count {
        let id = if count == 1 {
            kind.kind.clone()
        } else {
            format!("{}{}", kind.kind, i + 1)
        };
        let at = target_places.choose(&mut rng).expect("non-empty");
        objects.push(ObjectState::new(id, at));
    }

    // Multi-target tasks trade their distractor for the second target.
    let distractors = layout.distractors.saturating_sub(count - 1);
    let mut others: Vec<&KindDef> = layout
        .kinds
        .iter()
        .filter(|k| k.is_plain() && k.kind != kind.kind)
        .collect();
    others.shuffle(&mut rng);
    for k in others.into_iter().take(distractors) {
        let at = k.places.choose(&mut rng).expect("validated non-empty");
        objects.push(ObjectState::new(k.kind.clone(), at));
    }
    objects.sort_by(|a, b| a.id.cmp(&b.id));

    Ok(WorldState {
        goal,
        agent_at: None,
        open: Vec::new(),
        objects,
        lamp_on: false,
        steps: 0,
        terminal: false,
    })
}
