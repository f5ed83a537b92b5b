//! Exhaustive ground truth for GridHouse tasks.
//!
//! The oracle carries its own compact state encoding, move generator,
//! transition function and goal predicate, written against the layout
//! definition rather than the engine, so engine/oracle agreement is a real
//! cross-check. Graph nodes are hidden world states without the step
//! counter; completed states are absorbing.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{task_id, RecordIds, Source, Trajectory, TrajectoryStep};
use crate::env::{
    object_kind, sort_canonical, status_reward, Action, Appliance, EnvError, EnvSnapshot, Environment, Family,
    GridHouse, Layout, LayoutRegistry, OutcomeStatus, TaskSpec, WorldState,
};

use crate::state::{AgentState, IdentitySummarizer, PromptTemplate};

pub const DEFAULT_NODE_CAP: usize = 100_000;
const VI_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum OracleError {
    #[error("state graph exceeds {cap} nodes with {frontier} states still queued")]
    TooLarge { cap: usize, frontier: usize },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error("policy returned {got} probabilities for {expected} moves at node {node}")]
    PolicyShape { node: usize, got: usize, expected: usize },
}

pub type NodeId = usize;

/// Where a portable object is.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
enum Place {
    Held,
    At(u8),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Item {
    place: Place,
    clean: bool,
    hot: bool,
    cold: bool,
}

/// Compact hidden state. Receptacles and objects are referred to by index
/// into the layout's receptacle list and the episode's sorted object list.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
struct Cell {
    agent: Option<u8>,
    open_mask: u32,
    items: Vec<Item>,
    lamp_on: bool,
}

/// Static facts about one episode the move generator needs.
#[derive(Debug, Clone)]
struct Rules {
    receptacles: Vec<String>,
    openable: Vec<bool>,
    appliance: Vec<Option<Appliance>>,
    objects: Vec<String>,
    object_caps: Vec<Vec<Appliance>>,
    lamp: Option<(String, u8)>,
    family: Family,
    goal_kind: String,
    goal_target: Option<u8>,
}

impl Rules {
    fn new(layout: &Layout, world: &WorldState) -> Self {
        let receptacles: Vec<String> = layout.receptacles.iter().map(|r| r.name.clone()).collect();
        let index = |n: &str| receptacles.iter().position(|r| r == n).map(|i| i as u8);
        let lamp = layout
            .fixtures
            .iter()
            .find(|f| f.lamp)
            .map(|f| (f.id.clone(), index(&f.at).expect("validated fixture")));
        Self {
            openable: layout.receptacles.iter().map(|r| r.openable).collect(),
            appliance: layout.receptacles.iter().map(|r| r.appliance).collect(),
            objects: world.objects.iter().map(|o| o.id.clone()).collect(),
            object_caps: world
                .objects
                .iter()
                .map(|o| {
                    layout
                        .kinds
                        .iter()
                        .find(|k| k.kind == object_kind(&o.id))
                        .map(|k| k.capabilities.clone())
                        .unwrap_or_default()
                })
                .collect(),
            family: world.goal.family,
            goal_kind: world.goal.kind.clone(),
            goal_target: index(&world.goal.target),
            lamp,
            receptacles,
        }
    }

    fn encode(&self, world: &WorldState) -> Cell {
        let index = |n: &str| self.receptacles.iter().position(|r| r == n).expect("known receptacle") as u8;
        let mut open_mask = 0;
        for r in &world.open {
            open_mask |= 1 << index(r);
        }
        Cell {
            agent: world.agent_at.as_deref().map(index),
            open_mask,
            items: world
                .objects
                .iter()
                .map(|o| Item {
                    place: o.at.as_deref().map_or(Place::Held, |r| Place::At(index(r))),
                    clean: o.clean,
                    hot: o.hot,
                    cold: o.cold,
                })
                .collect(),
            lamp_on: world.lamp_on,
        }
    }

    fn reachable_inside(&self, c: &Cell, r: u8) -> bool {
        !self.openable[r as usize] || c.open_mask & (1 << r) != 0
    }

    fn held(c: &Cell) -> Option<usize> {
        c.items.iter().position(|i| i.place == Place::Held)
    }

    /// Legal moves and their successors, in canonical action order.
    fn moves(&self, c: &Cell) -> Vec<(Action, Cell)> {
        let mut out = Vec::new();
        for (r, name) in self.receptacles.iter().enumerate() {
            if c.agent != Some(r as u8) {
                let mut n = c.clone();
                n.agent = Some(r as u8);
                out.push((Action::goto(name), n));
            }
        }
        if let Some(here) = c.agent {
            let hn = &self.receptacles[here as usize];
            let bit = 1u32 << here;
            if self.openable[here as usize] {
                let mut n = c.clone();
                n.open_mask ^= bit;
                let a = if c.open_mask & bit == 0 {
                    Action::open(hn)
                } else {
                    Action::close(hn)
                };
                out.push((a, n));
            }
            out.push((Action::examine(hn), c.clone()));
            let inside = self.reachable_inside(c, here);
            let held = Self::held(c);
            for (i, item) in c.items.iter().enumerate() {
                let id = &self.objects[i];
                if inside && held.is_none() && item.place == Place::At(here) {
                    let mut n = c.clone();
                    n.items[i].place = Place::Held;
                    out.push((Action::take(id, hn), n));
                }
                if item.place != Place::Held {
                    continue;
                }
                if inside {
                    let mut n = c.clone();
                    n.items[i].place = Place::At(here);
                    out.push((Action::put(id, hn), n));
                }
                if let Some(app) = self.appliance[here as usize] {
                    if !self.object_caps[i].contains(&app) {
                        continue;
                    }
                    let mut n = c.clone();
                    let it = &mut n.items[i];
                    match app {
                        Appliance::Clean if !item.clean => {
                            it.clean = true;
                            out.push((Action::clean(id, hn), n));
                        }
                        Appliance::Heat if !item.hot => {
                            it.hot = true;
                            it.cold = false;
                            out.push((Action::heat(id, hn), n));
                        }
                        Appliance::Cool if !item.cold => {
                            it.cold = true;
                            it.hot = false;
                            out.push((Action::cool(id, hn), n));
                        }
                        _ => {}
                    }
                }
            }
        }
        if let Some((lamp, at)) = &self.lamp {
            if !c.lamp_on && c.agent == Some(*at) {
                let mut n = c.clone();
                n.lamp_on = true;
                out.push((Action::use_object(lamp), n));
            }
        }
        out.sort_by_key(|a| a.0.render());
        out
    }

    fn treatment(&self) -> Option<Appliance> {
        match self.family {
            Family::CleanPlace => Some(Appliance::Clean),
            Family::HeatPlace => Some(Appliance::Heat),
            Family::CoolPlace => Some(Appliance::Cool),
            _ => None,
        }
    }

    fn status(&self, c: &Cell) -> OutcomeStatus {
        let is_target = |i: usize| object_kind(&self.objects[i]) == self.goal_kind;
        let holding = Self::held(c).is_some_and(is_target);
        if self.family == Family::LookInLight {
            let lit_here = self
                .lamp
                .as_ref()
                .is_some_and(|(_, at)| c.lamp_on && c.agent == Some(*at));
            return if holding && lit_here {
                OutcomeStatus::Completed
            } else if holding {
                OutcomeStatus::Partial
            } else {
                OutcomeStatus::Incomplete
            };
        }
        let treated = |it: &Item| match self.treatment() {
            None => true,
            Some(Appliance::Clean) => it.clean,
            Some(Appliance::Heat) => it.hot,
            Some(Appliance::Cool) => it.cold,
        };
        let targets: Vec<&Item> = c
            .items
            .iter()
            .enumerate()
            .filter(|(i, _)| is_target(*i))
            .map(|(_, it)| it)
            .collect();
        let placed = targets
            .iter()
            .filter(|it| self.goal_target.is_some_and(|g| it.place == Place::At(g)) && treated(it))
            .count();
        let needed = if self.family == Family::PickTwoPlace { 2 } else { 1 };
        if placed >= needed {
            return OutcomeStatus::Completed;
        }
        let partial = if self.family == Family::PickTwoPlace {
            placed == 1
        } else {
            holding || (self.treatment().is_some() && targets.iter().any(|it| treated(it)))
        };
        if partial {
            OutcomeStatus::Partial
        } else {
            OutcomeStatus::Incomplete
        }
    }

    fn canonical(&self, c: &Cell) -> CanonicalState {
        let name = |r: u8| self.receptacles[r as usize].clone();
        let mut open: Vec<String> = (0..self.receptacles.len() as u8)
            .filter(|r| c.open_mask & (1 << r) != 0)
            .map(name)
            .collect();
        open.sort();
        CanonicalState {
            agent_at: c.agent.map(name),
            open,
            objects: c
                .items
                .iter()
                .enumerate()
                .map(|(i, it)| CanonicalObject {
                    id: self.objects[i].clone(),
                    at: match it.place {
                        Place::Held => None,
                        Place::At(r) => Some(name(r)),
                    },
                    clean: it.clean,
                    hot: it.hot,
                    cold: it.cold,
                })
                .collect(),
            lamp_on: c.lamp_on,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanonicalObject {
    pub id: String,
    pub at: Option<String>,
    pub clean: bool,
    pub hot: bool,
    pub cold: bool,
}

/// Hidden state with sorted lists and no step counter.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CanonicalState {
    pub agent_at: Option<String>,
    pub open: Vec<String>,
    pub objects: Vec<CanonicalObject>,
    pub lamp_on: bool,
}

impl CanonicalState {
    pub fn of_world(world: &WorldState) -> Self {
        Self {
            agent_at: world.agent_at.clone(),
            open: world.open.clone(),
            objects: world
                .objects
                .iter()
                .map(|o| CanonicalObject {
                    id: o.id.clone(),
                    at: o.at.clone(),
                    clean: o.clean,
                    hot: o.hot,
                    cold: o.cold,
                })
                .collect(),
            lamp_on: world.lamp_on,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub action: Action,
    pub to: NodeId,
}

/// Reachable state graph of one task; node 0 is the initial state.
#[derive(Debug, Clone)]
pub struct StateGraph {
    pub spec: TaskSpec,
    rules: Rules,
    cells: Vec<Cell>,
    pub edges: Vec<Vec<GraphEdge>>,
    pub status: Vec<OutcomeStatus>,
    initial_world: WorldState,
}

#[derive(Serialize)]
struct GraphExport<'a> {
    spec: &'a TaskSpec,
    nodes: Vec<ExportNode<'a>>,
}

#[derive(Serialize)]
struct ExportNode<'a> {
    id: NodeId,
    state: CanonicalState,
    status: OutcomeStatus,
    edges: &'a [GraphEdge],
}

/// Breadth-first closure of the states reachable from the task's start.
pub fn build_graph(spec: &TaskSpec, registry: &LayoutRegistry, node_cap: usize) -> Result<StateGraph, OracleError> {
    let mut env = GridHouse::new(std::sync::Arc::new(registry.clone()));
    let (_, snapshot) = env.reset(spec)?;
    let EnvSnapshot::World { world, .. } = snapshot else {
        unreachable!("GridHouse snapshots are world snapshots")
    };
    let layout = registry.get(&spec.layout_id)?;
    let rules = Rules::new(layout, &world);
    let start = rules.encode(&world);

    let mut index: HashMap<Cell, NodeId> = HashMap::new();
    let mut cells = vec![start.clone()];
    index.insert(start, 0);
    let mut edges: Vec<Vec<GraphEdge>> = Vec::new();
    let mut status = Vec::new();
    let mut queue = VecDeque::from([0usize]);
    while let Some(id) = queue.pop_front() {
        let cell = cells[id].clone();
        let st = rules.status(&cell);
        let mut out = Vec::new();
        if st != OutcomeStatus::Completed {
            for (action, next) in rules.moves(&cell) {
                let to = match index.get(&next) {
                    Some(&to) => to,
                    None => {
                        if cells.len() >= node_cap {
                            return Err(OracleError::TooLarge {
                                cap: node_cap,
                                frontier: queue.len() + 1,
                            });
                        }
                        let to = cells.len();
                        index.insert(next.clone(), to);
                        cells.push(next);
                        queue.push_back(to);
                        to
                    }
                };
                out.push(GraphEdge { action, to });
            }
        }
        // BFS pops ids in creation order, so `edges[id]` lines up.
        debug_assert_eq!(edges.len(), id);
        edges.push(out);
        status.push(st);
    }
    Ok(StateGraph {
        spec: spec.clone(),
        rules,
        cells,
        edges,
        status,
        initial_world: world,
    })
}

impl StateGraph {
    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn canonical(&self, node: NodeId) -> CanonicalState {
        self.rules.canonical(&self.cells[node])
    }

    /// Node of a world state, if reachable.
    pub fn find(&self, world: &WorldState) -> Option<NodeId> {
        let c = self.rules.encode(world);
        self.cells.iter().position(|x| *x == c)
    }

    /// Engine world for `node` with the given step counter.
    pub fn world(&self, node: NodeId, steps: u32) -> WorldState {
        let s = self.canonical(node);
        let mut w = self.initial_world.clone();
        w.agent_at = s.agent_at;
        w.open = s.open;
        for (o, c) in w.objects.iter_mut().zip(s.objects) {
            o.at = c.at;
            o.clean = c.clean;
            o.hot = c.hot;
            o.cold = c.cold;
        }
        w.lamp_on = s.lamp_on;
        w.steps = steps;
        w.terminal = false;
        w
    }

    pub fn actions(&self, node: NodeId) -> Vec<Action> {
        let mut a: Vec<Action> = self.edges[node].iter().map(|e| e.action.clone()).collect();
        sort_canonical(&mut a);
        a
    }

    pub fn to_json(&self) -> String {
        let nodes = (0..self.len())
            .map(|id| ExportNode {
                id,
                state: self.canonical(id),
                status: self.status[id],
                edges: &self.edges[id],
            })
            .collect();
        serde_json::to_string(&GraphExport {
            spec: &self.spec,
            nodes,
        })
        .expect("graph serializes")
    }
}

/// Optimal values and the per-sweep max residuals of value iteration.
#[derive(Debug, Clone)]
pub struct ValueTable {
    pub values: Vec<f64>,
    pub residuals: Vec<f64>,
    pub gamma: f64,
}

/// `V(s) = 1` when completed, otherwise the better of stopping with the
/// partial reward and `max_a gamma * V(s')`.
pub fn value_iteration(graph: &StateGraph, gamma: f64) -> ValueTable {
    let stop: Vec<f64> = graph.status.iter().map(|&s| status_reward(s)).collect();
    let mut values = stop.clone();
    let mut residuals = Vec::new();
    loop {
        let mut residual: f64 = 0.0;
        for s in 0..graph.len() {
            if graph.status[s] == OutcomeStatus::Completed {
                continue;
            }
            let best = graph.edges[s]
                .iter()
                .map(|e| gamma * values[e.to])
                .fold(stop[s], f64::max);
            residual = residual.max((best - values[s]).abs());
            values[s] = best;
        }
        residuals.push(residual);
        if residual < VI_TOLERANCE {
            break;
        }
    }
    ValueTable {
        values,
        residuals,
        gamma,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalPlan {
    pub plan: Vec<Action>,
    pub value: f64,
}

fn better_moves(graph: &StateGraph, table: &ValueTable, node: NodeId) -> Vec<usize> {
    let v = table.values[node];
    let tol = 1e-9;
    graph.edges[node]
        .iter()
        .enumerate()
        .filter(|(_, e)| table.gamma * table.values[e.to] >= v - tol)
        .map(|(i, _)| i)
        .collect()
}

/// Actions at `node` that achieve the optimal value.
pub fn optimal_actions(graph: &StateGraph, table: &ValueTable, node: NodeId) -> Vec<Action> {
    better_moves(graph, table, node)
        .into_iter()
        .map(|i| graph.edges[node][i].action.clone())
        .collect()
}

/// Shortest highest-value plan from the initial state.
pub fn optimal_plan(graph: &StateGraph, gamma: f64) -> OptimalPlan {
    let table = value_iteration(graph, gamma);
    let mut plan = Vec::new();
    let mut node = 0;
    let mut acc = 1.0;
    while graph.status[node] != OutcomeStatus::Completed {
        let here = table.values[node];
        // Stop when continuing cannot beat the reward available right now.
        if status_reward(graph.status[node]) >= here - 1e-12 {
            break;
        }
        let Some(&i) = better_moves(graph, &table, node).first() else {
            break;
        };
        plan.push(graph.edges[node][i].action.clone());
        node = graph.edges[node][i].to;
        acc *= gamma;
    }
    let value = acc * status_reward(graph.status[node]);
    OptimalPlan { plan, value }
}

/// Exact expected `gamma^k * r_o` of a Markov policy from the initial
/// state, by backward induction over `(state, t)` up to `horizon` steps.
/// `policy(node)` returns one probability per out-edge of `node`.
pub fn evaluate_policy(
    graph: &StateGraph,
    gamma: f64,
    horizon: usize,
    policy: &dyn Fn(NodeId) -> Vec<f64>,
) -> Result<f64, OracleError> {
    let n = graph.len();
    let mut probs = Vec::with_capacity(n);
    for s in 0..n {
        let p = if graph.edges[s].is_empty() {
            Vec::new()
        } else {
            policy(s)
        };
        if p.len() != graph.edges[s].len() {
            return Err(OracleError::PolicyShape {
                node: s,
                got: p.len(),
                expected: graph.edges[s].len(),
            });
        }
        probs.push(p);
    }
    // At the horizon the episode ends with whatever status it has.
    let mut next: Vec<f64> = graph.status.iter().map(|&s| status_reward(s)).collect();
    for _ in 0..horizon {
        let cur: Vec<f64> = (0..n)
            .map(|s| {
                if graph.status[s] == OutcomeStatus::Completed || graph.edges[s].is_empty() {
                    status_reward(graph.status[s])
                } else {
                    graph.edges[s]
                        .iter()
                        .zip(&probs[s])
                        .map(|(e, p)| p * gamma * next[e.to])
                        .sum()
                }
            })
            .collect();
        next = cur;
    }
    Ok(next[0])
}

/// Oracle solution of `spec` replayed through the engine as an expert
/// trajectory. `None` when the task cannot be completed.
pub fn expert_trajectory(
    spec: &TaskSpec,
    registry: &LayoutRegistry,
    gamma: f64,
    template: &PromptTemplate,
) -> Result<Option<Trajectory>, OracleError> {
    let graph = build_graph(spec, registry, DEFAULT_NODE_CAP)?;
    let plan = optimal_plan(&graph, gamma);
    if plan.value <= 0.0 || plan.plan.is_empty() {
        return Ok(None);
    }
    let mut env = GridHouse::new(std::sync::Arc::new(registry.clone()));
    let (mut view, _) = env.reset(spec)?;
    let mut state =
        AgentState::init(&spec.instruction, view.observation.clone()).map_err(|e| EnvError::Config(e.to_string()))?;
    let mut steps = Vec::with_capacity(plan.plan.len());
    for action in &plan.plan {
        let next = env.step(action)?;
        steps.push(TrajectoryStep {
            context: template
                .render(&state, &view.candidates)
                .map_err(|e| EnvError::Config(e.to_string()))?,
            state: state.clone(),
            candidates: view.candidates.clone(),
            action: action.clone(),
            summary: next.observation.text.clone(),
        });
        state = state.advance(action, next.observation.clone(), &IdentitySummarizer);
        view = next;
    }
    let completed = view.outcome.is_some_and(|o| o.status == OutcomeStatus::Completed);
    if !completed {
        return Ok(None);
    }
    let task = task_id(spec);
    Ok(Some(Trajectory {
        instruction: spec.instruction.clone(),
        spec: Some(spec.clone()),
        steps,
        reward: 1.0,
        source: Source::Expert,
        ids: RecordIds {
            tree: format!("oracle/{task}"),
            task,
            node: None,
        },
    }))
}
