//! GridHouse: a deterministic single-room household simulator.
//!
//! The agent starts in the middle of the room and moves between receptacles.
//! Contents of closed receptacles are hidden until opened. It can hold one
//! object at a time. Appliance receptacles clean, heat or cool the held
//! object; the desk lamp can be switched on.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::layout::{Appliance, Layout, LayoutRegistry};
use super::task::{initial_world, object_kind, Goal};
use super::{
    sort_canonical, Action, EnvError, EnvSnapshot, Environment, Family, FeedbackCode, Observation, Outcome,
    OutcomeStatus, StepView, TaskSpec, Verb,
};

pub const DEFAULT_STEP_CAP: u32 = 30;

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ObjectState {
    pub id: String,
    /// Receptacle holding the object; `None` while the agent carries it.
    pub at: Option<String>,
    pub clean: bool,
    pub hot: bool,
    pub cold: bool,
}

impl ObjectState {
    pub fn new(id: impl Into<String>, at: &str) -> Self {
        Self {
            id: id.into(),
            at: Some(at.to_owned()),
            clean: false,
            hot: false,
            cold: false,
        }
    }

    fn has(&self, treatment: Appliance) -> bool {
        match treatment {
            Appliance::Clean => self.clean,
            Appliance::Heat => self.hot,
            Appliance::Cool => self.cold,
        }
    }
}

/// Hidden world state of one episode.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct WorldState {
    pub goal: Goal,
    pub agent_at: Option<String>,
    /// Names of openable receptacles that are currently open, sorted.
    pub open: Vec<String>,
    /// Portable objects, sorted by id.
    pub objects: Vec<ObjectState>,
    pub lamp_on: bool,
    pub steps: u32,
    pub terminal: bool,
}

impl WorldState {
    pub fn held(&self) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.at.is_none())
    }

    fn object(&self, id: &str) -> Option<&ObjectState> {
        self.objects.iter().find(|o| o.id == id)
    }

    fn object_mut(&mut self, id: &str) -> &mut ObjectState {
        self.objects
            .iter_mut()
            .find(|o| o.id == id)
            .expect("object checked by caller")
    }

    fn is_open(&self, receptacle: &str) -> bool {
        self.open.iter().any(|r| r == receptacle)
    }
}

struct Episode {
    layout: Layout,
    world: WorldState,
}

/// In-process GridHouse environment.
pub struct GridHouse {
    registry: Arc<LayoutRegistry>,
    step_cap: u32,
    episode: Option<Episode>,
}

impl GridHouse {
    pub fn new(registry: Arc<LayoutRegistry>) -> Self {
        Self::with_step_cap(registry, DEFAULT_STEP_CAP)
    }

    pub fn with_step_cap(registry: Arc<LayoutRegistry>, step_cap: u32) -> Self {
        Self {
            registry,
            step_cap,
            episode: None,
        }
    }

    pub fn step_cap(&self) -> u32 {
        self.step_cap
    }

    pub fn registry(&self) -> &Arc<LayoutRegistry> {
        &self.registry
    }

    pub fn world(&self) -> Option<&WorldState> {
        self.episode.as_ref().map(|e| &e.world)
    }

    pub fn layout(&self) -> Option<&Layout> {
        self.episode.as_ref().map(|e| &e.layout)
    }

    /// Current observation-free view: candidates and terminal flag.
    pub fn candidates(&self) -> Vec<Action> {
        self.episode
            .as_ref()
            .map(|e| legal_actions(&e.layout, &e.world))
            .unwrap_or_default()
    }

    fn active(&mut self) -> Result<&mut Episode, EnvError> {
        self.episode
            .as_mut()
            .ok_or_else(|| EnvError::Protocol("no active episode".into()))
    }
}

impl Environment for GridHouse {
    fn reset(&mut self, spec: &TaskSpec) -> Result<(StepView, EnvSnapshot), EnvError> {
        let layout = self.registry.get(&spec.layout_id)?.clone();
        let world = initial_world(spec, &layout)?;
        let observation = Observation::new(room_overview(&layout), Vec::new(), FeedbackCode::Ok);
        let candidates = legal_actions(&layout, &world);
        let snapshot = EnvSnapshot::World {
            layout_id: layout.id.clone(),
            world: world.clone(),
        };
        self.episode = Some(Episode { layout, world });
        Ok((
            StepView {
                observation,
                candidates,
                terminal: false,
                outcome: None,
            },
            snapshot,
        ))
    }

    fn step(&mut self, action: &Action) -> Result<StepView, EnvError> {
        let cap = self.step_cap;
        let ep = self.active()?;
        if ep.world.terminal {
            return Err(EnvError::Protocol("step after terminal".into()));
        }
        let observation = apply(&ep.layout, &mut ep.world, action);
        ep.world.steps += 1;
        let status = goal_status(&ep.layout, &ep.world);
        ep.world.terminal = status == OutcomeStatus::Completed || ep.world.steps >= cap;
        let outcome = ep.world.terminal.then_some(Outcome {
            status,
            steps_used: ep.world.steps,
        });
        let candidates = if ep.world.terminal {
            Vec::new()
        } else {
            legal_actions(&ep.layout, &ep.world)
        };
        Ok(StepView {
            observation,
            candidates,
            terminal: ep.world.terminal,
            outcome,
        })
    }

    fn snapshot(&self) -> Result<EnvSnapshot, EnvError> {
        let ep = self
            .episode
            .as_ref()
            .ok_or_else(|| EnvError::Protocol("no active episode".into()))?;
        Ok(EnvSnapshot::World {
            layout_id: ep.layout.id.clone(),
            world: ep.world.clone(),
        })
    }

    fn restore(&mut self, snapshot: &EnvSnapshot) -> Result<(), EnvError> {
        let EnvSnapshot::World { layout_id, world } = snapshot else {
            return Err(EnvError::Config("GridHouse cannot restore a replay snapshot".into()));
        };
        match &mut self.episode {
            Some(ep) if ep.layout.id == *layout_id => ep.world = world.clone(),
            Some(ep) => {
                return Err(EnvError::Config(format!(
                    "snapshot from layout {layout_id} restored into {}",
                    ep.layout.id
                )))
            }
            None => {
                let layout = self.registry.get(layout_id)?.clone();
                self.episode = Some(Episode {
                    layout,
                    world: world.clone(),
                });
            }
        }
        Ok(())
    }

    fn status_now(&self) -> Result<Outcome, EnvError> {
        let ep = self
            .episode
            .as_ref()
            .ok_or_else(|| EnvError::Protocol("no active episode".into()))?;
        Ok(Outcome {
            status: goal_status(&ep.layout, &ep.world),
            steps_used: ep.world.steps,
        })
    }
}

fn a_list(items: &[String]) -> String {
    match items {
        [] => "nothing".to_owned(),
        [one] => format!("a {one}"),
        [init @ .., last] => {
            let head: Vec<String> = init.iter().map(|i| format!("a {i}")).collect();
            format!("{}, and a {last}", head.join(", "))
        }
    }
}

fn room_overview(layout: &Layout) -> String {
    let names: Vec<String> = layout.receptacles.iter().map(|r| r.name.clone()).collect();
    format!(
        "You are in the middle of a room. Looking quickly around you, you see {}.",
        a_list(&names)
    )
}

fn accessible(layout: &Layout, world: &WorldState, receptacle: &str) -> bool {
    layout
        .receptacle(receptacle)
        .is_some_and(|r| !r.openable || world.is_open(receptacle))
}

/// Objects and fixtures an agent standing at `receptacle` can see.
fn visible_at(layout: &Layout, world: &WorldState, receptacle: &str) -> Vec<String> {
    if !accessible(layout, world, receptacle) {
        return Vec::new();
    }
    let mut seen: Vec<String> = world
        .objects
        .iter()
        .filter(|o| o.at.as_deref() == Some(receptacle))
        .map(|o| o.id.clone())
        .chain(
            layout
                .fixtures
                .iter()
                .filter(|f| f.at == receptacle)
                .map(|f| f.id.clone()),
        )
        .collect();
    seen.sort();
    seen
}

fn describe(layout: &Layout, world: &WorldState, receptacle: &str) -> String {
    let openable = layout.receptacle(receptacle).is_some_and(|r| r.openable);
    let contents = a_list(&visible_at(layout, world, receptacle));
    if !openable {
        format!("On the {receptacle}, you see {contents}.")
    } else if world.is_open(receptacle) {
        format!("The {receptacle} is open. In it, you see {contents}.")
    } else {
        format!("The {receptacle} is closed.")
    }
}

fn holds(world: &WorldState, object: &str) -> bool {
    world.held().is_some_and(|o| o.id == object)
}

fn known_identifier(layout: &Layout, world: &WorldState, action: &Action) -> bool {
    let is_rec = |n: &str| layout.receptacle(n).is_some();
    let is_obj = |n: &str| world.object(n).is_some() || layout.fixtures.iter().any(|f| f.id == n);
    match action.verb {
        Verb::Goto | Verb::Open | Verb::Close | Verb::Examine => is_rec(&action.object),
        Verb::Use => is_obj(&action.object),
        _ => is_obj(&action.object) && action.receptacle.as_deref().is_some_and(is_rec),
    }
}

fn is_legal(layout: &Layout, world: &WorldState, action: &Action) -> bool {
    let here = world.agent_at.as_deref();
    let obj = action.object.as_str();
    let at_rec = action.receptacle.as_deref().is_some_and(|r| Some(r) == here);
    let kind_can = |t: Appliance| layout.kind(object_kind(obj)).is_some_and(|k| k.can(t));
    let treat = |t: Appliance| {
        at_rec
            && holds(world, obj)
            && kind_can(t)
            && layout
                .receptacle(here.unwrap_or_default())
                .is_some_and(|r| r.appliance == Some(t))
            && !world.held().is_some_and(|o| o.has(t))
    };
    match action.verb {
        Verb::Goto => layout.receptacle(obj).is_some() && here != Some(obj),
        Verb::Open | Verb::Close => {
            let openable = layout.receptacle(obj).is_some_and(|r| r.openable);
            let want_open = action.verb == Verb::Open;
            here == Some(obj) && openable && world.is_open(obj) != want_open
        }
        Verb::Examine => here == Some(obj),
        Verb::Take => {
            at_rec
                && world.held().is_none()
                && accessible(layout, world, here.unwrap_or_default())
                && world.object(obj).is_some_and(|o| o.at.as_deref() == here)
        }
        Verb::Put => at_rec && holds(world, obj) && accessible(layout, world, here.unwrap_or_default()),
        Verb::Clean => treat(Appliance::Clean),
        Verb::Heat => treat(Appliance::Heat),
        Verb::Cool => treat(Appliance::Cool),
        Verb::Use => {
            !world.lamp_on
                && layout
                    .lamp()
                    .is_some_and(|l| l.id == obj && Some(l.at.as_str()) == here)
        }
    }
}

/// Every action that is legal in `world`, in canonical text order.
pub(crate) fn legal_actions(layout: &Layout, world: &WorldState) -> Vec<Action> {
    let mut out = Vec::new();
    let here = world.agent_at.clone();
    for r in &layout.receptacles {
        out.push(Action::goto(&r.name));
    }
    if let Some(here) = &here {
        out.push(Action::open(here));
        out.push(Action::close(here));
        out.push(Action::examine(here));
        for o in &world.objects {
            out.push(Action::take(&o.id, here));
            out.push(Action::put(&o.id, here));
            out.push(Action::clean(&o.id, here));
            out.push(Action::heat(&o.id, here));
            out.push(Action::cool(&o.id, here));
        }
    }
    if let Some(lamp) = layout.lamp() {
        out.push(Action::use_object(&lamp.id));
    }
    out.retain(|a| is_legal(layout, world, a));
    sort_canonical(&mut out);
    out
}

fn apply(layout: &Layout, world: &mut WorldState, action: &Action) -> Observation {
    if !known_identifier(layout, world, action) {
        return Observation::new("Nothing happens.", Vec::new(), FeedbackCode::InvalidAction);
    }
    if !is_legal(layout, world, action) {
        return Observation::new("Nothing happens.", Vec::new(), FeedbackCode::NothingHappens);
    }
    let obj = action.object.clone();
    let rec = action.receptacle.clone().unwrap_or_default();
    let text = match action.verb {
        Verb::Goto => {
            world.agent_at = Some(obj.clone());
            format!("You arrive at {obj}. {}", describe(layout, world, &obj))
        }
        Verb::Open => {
            world.open.push(obj.clone());
            world.open.sort();
            format!(
                "You open the {obj}. In it, you see {}.",
                a_list(&visible_at(layout, world, &obj))
            )
        }
        Verb::Close => {
            world.open.retain(|r| *r != obj);
            format!("You close the {obj}.")
        }
        Verb::Examine => describe(layout, world, &obj),
        Verb::Take => {
            world.object_mut(&obj).at = None;
            format!("You pick up the {obj} from the {rec}.")
        }
        Verb::Put => {
            world.object_mut(&obj).at = Some(rec.clone());
            format!("You put the {obj} in the {rec}.")
        }
        Verb::Clean => {
            world.object_mut(&obj).clean = true;
            format!("You clean the {obj} using the {rec}.")
        }
        Verb::Heat => {
            let o = world.object_mut(&obj);
            o.hot = true;
            o.cold = false;
            format!("You heat the {obj} using the {rec}.")
        }
        Verb::Cool => {
            let o = world.object_mut(&obj);
            o.cold = true;
            o.hot = false;
            format!("You cool the {obj} using the {rec}.")
        }
        Verb::Use => {
            world.lamp_on = true;
            format!("You turn on the {obj}.")
        }
    };
    let visible = world
        .agent_at
        .as_deref()
        .map(|here| visible_at(layout, world, here))
        .unwrap_or_default();
    Observation::new(text, visible, FeedbackCode::Ok)
}

/// Goal predicate with partial-credit semantics.
///
/// Placement families are partial while a target-kind object is held or
/// already treated but not yet at the goal receptacle. `PickTwoPlace` is
/// partial with exactly one target placed. `LookInLight` is partial while
/// the target is held without the lit lamp.
pub(crate) fn goal_status(layout: &Layout, world: &WorldState) -> OutcomeStatus {
    let goal = &world.goal;
    let targets = || world.objects.iter().filter(|o| object_kind(&o.id) == goal.kind);
    let holding_target = world.held().is_some_and(|o| object_kind(&o.id) == goal.kind);
    if goal.family == Family::LookInLight {
        let lamp_here = layout
            .lamp()
            .is_some_and(|l| world.agent_at.as_deref() == Some(l.at.as_str()));
        return match (holding_target, world.lamp_on && lamp_here) {
            (true, true) => OutcomeStatus::Completed,
            (true, false) => OutcomeStatus::Partial,
            _ => OutcomeStatus::Incomplete,
        };
    }
    let treatment = goal.family.required_treatment();
    let treated = |o: &ObjectState| treatment.is_none_or(|t| o.has(t));
    let placed = targets()
        .filter(|o| o.at.as_deref() == Some(goal.target.as_str()) && treated(o))
        .count();
    if placed >= goal.target_count() {
        return OutcomeStatus::Completed;
    }
    let partial = if goal.family == Family::PickTwoPlace {
        placed == 1
    } else {
        holding_target || (treatment.is_some() && targets().any(treated))
    };
    if partial {
        OutcomeStatus::Partial
    } else {
        OutcomeStatus::Incomplete
    }
}
