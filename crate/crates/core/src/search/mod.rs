//! Monte-Carlo tree search with PUCT selection, critic-gated expansion,
//! greedy rollouts scored by the outcome reward, and discounted mean-return
//! backup.

mod tree;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::env::{outcome_reward, status_reward, Action, EnvError, EnvSnapshot, Environment, StepView, TaskSpec};
use crate::policy::{ActionDistribution, Critic, Policy, PolicyError, DEFAULT_TAU_EXPAND};
use crate::state::{AgentState, IdentitySummarizer, StateError, Summarizer};

pub use tree::{
    best_edge, best_root_action, puct_score, puct_select, LeafKind, NodeId, SearchEdge, SearchNode, SearchStats,
    SearchTree,
};

#[derive(Debug, Error)]
pub enum SearchError {
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("invalid search config: {field}: {message}")]
    Config { field: String, message: String },
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    State(#[from] StateError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchConfig {
    pub c_puct: f64,
    /// Maximum children created per expansion.
    pub width: usize,
    pub d_max: usize,
    /// Rollouts per newly created child.
    pub simulations: usize,
    /// Selection passes per search.
    pub budget: usize,
    pub gamma: f64,
    pub tau_expand: f64,
    /// Sample children in proportion to the policy instead of taking the
    /// most probable ones.
    pub stochastic_expansion: bool,
    pub seed: u64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            c_puct: 1.25,
            width: 3,
            d_max: 10,
            simulations: 3,
            budget: 200,
            gamma: 0.95,
            tau_expand: DEFAULT_TAU_EXPAND,
            stochastic_expansion: false,
            seed: 0,
        }
    }
}

impl SearchConfig {
    pub fn validate(&self) -> Result<(), SearchError> {
        let bad = |field: &str, message: &str| {
            Err(SearchError::Config {
                field: field.into(),
                message: message.into(),
            })
        };
        if !(self.c_puct.is_finite() && self.c_puct >= 0.0) {
            return bad("c_puct", "must be finite and non-negative");
        }
        if self.width < 1 {
            return bad("width", "must be at least 1");
        }
        if self.budget < 1 {
            return bad("budget", "must be at least 1");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0) {
            return bad("gamma", "must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.tau_expand) {
            return bad("tau_expand", "must lie in [0, 1]");
        }
        Ok(())
    }
}

/// Indices of the children to create, in edge order.
pub fn choose_children(dist: &ActionDistribution, width: usize, rng: Option<&mut ChaCha8Rng>) -> Vec<usize> {
    let n = dist.actions.len();
    let k = width.min(n);
    match rng {
        None => {
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| dist.probabilities[b].total_cmp(&dist.probabilities[a]).then(a.cmp(&b)));
            idx.truncate(k);
            idx
        }
        Some(rng) => {
            use rand::distributions::{Distribution, WeightedIndex};
            let mut weights: Vec<f64> = dist.probabilities.iter().map(|p| p.max(0.0)).collect();
            let mut out = Vec::with_capacity(k);
            for _ in 0..k {
                let i = match WeightedIndex::new(&weights) {
                    Ok(w) => w.sample(rng),
                    // Remaining mass is zero: fall back to the first unused index.
                    Err(_) => (0..n).find(|i| !out.contains(i)).expect("k <= n"),
                };
                weights[i] = 0.0;
                out.push(i);
            }
            out
        }
    }
}

/// Priors proportional to the chosen probabilities; uniform if they sum to 0.
pub fn renormalize(dist: &ActionDistribution, chosen: &[usize]) -> Vec<f64> {
    let total: f64 = chosen.iter().map(|&i| dist.probabilities[i]).sum();
    if total > 0.0 && total.is_finite() {
        chosen.iter().map(|&i| dist.probabilities[i] / total).collect()
    } else {
        vec![1.0 / chosen.len() as f64; chosen.len()]
    }
}

/// One search: a policy, a critic, a summarizer and a config.
pub struct Search<'a> {
    pub policy: &'a dyn Policy,
    pub critic: &'a dyn Critic,
    pub summarizer: &'a dyn Summarizer,
    pub config: SearchConfig,
}

impl<'a> Search<'a> {
    pub fn new(policy: &'a dyn Policy, critic: &'a dyn Critic, config: SearchConfig) -> Self {
        Self {
            policy,
            critic,
            summarizer: &IdentitySummarizer,
            config,
        }
    }

    /// Resets `env` to `spec` and searches from the initial state.
    pub fn run(&self, spec: &TaskSpec, env: &mut dyn Environment) -> Result<SearchTree, SearchError> {
        self.config.validate()?;
        let (view, snapshot) = env.reset(spec)?;
        let state = AgentState::init(&spec.instruction, view.observation.clone())?;
        self.run_from(Some(spec.clone()), state, &view, snapshot, env)
    }

    /// Searches from an arbitrary materialized state.
    pub fn run_from(
        &self,
        spec: Option<TaskSpec>,
        state: AgentState,
        view: &StepView,
        snapshot: EnvSnapshot,
        env: &mut dyn Environment,
    ) -> Result<SearchTree, SearchError> {
        self.config.validate()?;
        let mut root = SearchNode::new(state, view.candidates.clone(), 0);
        root.terminal = view.terminal;
        root.outcome = view.outcome;
        root.snapshot = Some(snapshot);
        let mut tree = SearchTree::new(spec, self.config, root);
        let mut rng = self
            .config
            .stochastic_expansion
            .then(|| ChaCha8Rng::seed_from_u64(self.config.seed));
        for _ in 0..self.config.budget {
            self.pass(&mut tree, env, rng.as_mut())?;
        }
        Ok(tree)
    }

    fn pass(
        &self,
        tree: &mut SearchTree,
        env: &mut dyn Environment,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<(), SearchError> {
        tree.stats.passes += 1;
        let gamma = self.config.gamma;
        let mut path = Vec::new();
        let mut node = 0;
        loop {
            let n = &tree.nodes[node];
            if n.terminal || n.leaf != LeafKind::Open || !n.is_expanded() {
                break;
            }
            let e = puct_select(n, self.config.c_puct)?;
            path.push((node, e));
            node = n.edges[e].child.expect("expanded edges have children");
        }

        let leaf = &tree.nodes[node];
        if leaf.terminal {
            tree.stats.terminal_hits += 1;
            let g = leaf.outcome.as_ref().map(outcome_reward).unwrap_or(0.0);
            return tree.backup(&path, node, g, gamma);
        }
        if let Some(g) = leaf.leaf_value {
            return tree.backup(&path, node, g, gamma);
        }

        let closed = if leaf.depth >= self.config.d_max {
            Some(LeafKind::DepthCap)
        } else if leaf.candidates.is_empty() {
            Some(LeafKind::Stuck)
        } else {
            let score = match self.critic.score(&leaf.state, leaf.depth) {
                Ok(s) => s.value(),
                Err(e) => {
                    tracing::warn!(error = %e, node, "critic failed; treating score as 0");
                    tree.stats.critic_errors += 1;
                    0.0
                }
            };
            tree.nodes[node].critic_score = Some(score);
            (score <= self.config.tau_expand).then_some(LeafKind::Suppressed)
        };
        if let Some(kind) = closed {
            if kind == LeafKind::Suppressed {
                tree.stats.suppressed += 1;
            }
            let g = self.simulate(tree, node, env)?;
            let n = &mut tree.nodes[node];
            n.leaf = kind;
            n.leaf_value = Some(g);
            return tree.backup(&path, node, g, gamma);
        }

        let first_new = tree.nodes[node].edges.len();
        self.expand(tree, node, env, rng)?;
        tree.stats.expansions += 1;
        for e in first_new..tree.nodes[node].edges.len() {
            let child = tree.nodes[node].edges[e].child.expect("materialized");
            path.push((node, e));
            for _ in 0..self.config.simulations {
                let g = self.simulate(tree, child, env)?;
                tree.backup(&path, child, g, gamma)?;
            }
            path.pop();
        }
        Ok(())
    }

    /// Creates up to `width` children of an open leaf.
    pub fn expand(
        &self,
        tree: &mut SearchTree,
        node: NodeId,
        env: &mut dyn Environment,
        rng: Option<&mut ChaCha8Rng>,
    ) -> Result<Vec<usize>, SearchError> {
        let parent = &tree.nodes[node];
        if parent.terminal || parent.is_expanded() {
            return Err(SearchError::Contract(format!("node {node} is not an open leaf")));
        }
        let dist = self.policy.distribution(&parent.state, &parent.candidates)?;
        let chosen = choose_children(&dist, self.config.width, rng);
        let priors = renormalize(&dist, &chosen);
        let snapshot = parent
            .snapshot
            .clone()
            .ok_or_else(|| SearchError::Contract(format!("node {node} has no snapshot")))?;
        let parent_state = parent.state.clone();
        let mut edges = Vec::with_capacity(chosen.len());
        for (i, prior) in chosen.into_iter().zip(priors) {
            let action = dist.actions[i].clone();
            env.restore(&snapshot)?;
            let view = env.step(&action)?;
            let state = parent_state.advance(&action, view.observation.clone(), self.summarizer);
            let mut child = SearchNode::new(state, view.candidates, 0);
            child.terminal = view.terminal;
            child.outcome = view.outcome;
            child.snapshot = Some(env.snapshot()?);
            edges.push(tree.attach(node, action, prior, child));
        }
        Ok(edges)
    }

    /// Greedy rollout from `node` to a terminal state or the depth cap;
    /// returns `gamma^k * r_o`.
    pub fn simulate(&self, tree: &mut SearchTree, node: NodeId, env: &mut dyn Environment) -> Result<f64, SearchError> {
        tree.stats.rollouts += 1;
        let n = &tree.nodes[node];
        if n.terminal {
            return Ok(n.outcome.as_ref().map(outcome_reward).unwrap_or(0.0));
        }
        let snapshot = n
            .snapshot
            .as_ref()
            .ok_or_else(|| SearchError::Contract(format!("node {node} has no snapshot")))?;
        env.restore(snapshot)?;
        let mut state = n.state.clone();
        let mut candidates = n.candidates.clone();
        let mut discount = 1.0;
        for _ in n.depth..self.config.d_max {
            if candidates.is_empty() {
                break;
            }
            let action = self.policy.distribution(&state, &candidates)?.greedy().clone();
            let view = env.step(&action)?;
            discount *= self.config.gamma;
            if view.terminal {
                return Ok(discount * view.outcome.as_ref().map(outcome_reward).unwrap_or(0.0));
            }
            state = state.advance(&action, view.observation, self.summarizer);
            candidates = view.candidates;
        }
        Ok(discount * status_reward(env.status_now()?.status))
    }
}

/// Runs one search from the initial state of `spec`.
pub fn run_search(
    spec: &TaskSpec,
    policy: &dyn Policy,
    critic: &dyn Critic,
    env: &mut dyn Environment,
    config: &SearchConfig,
) -> Result<SearchTree, SearchError> {
    Search::new(policy, critic, *config).run(spec, env)
}

/// Result of acting in one episode.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub spec: TaskSpec,
    pub actions: Vec<Action>,
    pub outcome: crate::env::Outcome,
    pub reward: f64,
}

/// Plays an episode to termination, choosing each action with `choose`.
pub fn play_episode(
    spec: &TaskSpec,
    env: &mut dyn Environment,
    summarizer: &dyn Summarizer,
    mut choose: impl FnMut(&AgentState, &StepView, &EnvSnapshot, &mut dyn Environment) -> Result<Action, SearchError>,
) -> Result<EpisodeResult, SearchError> {
    let (mut view, _) = env.reset(spec)?;
    let mut state = AgentState::init(&spec.instruction, view.observation.clone())?;
    let mut actions = Vec::new();
    while !view.terminal {
        if view.candidates.is_empty() {
            break;
        }
        let snapshot = env.snapshot()?;
        let action = choose(&state, &view, &snapshot, env)?;
        // Searching may have moved the environment; put it back.
        env.restore(&snapshot)?;
        let next = env.step(&action)?;
        state = state.advance(&action, next.observation.clone(), summarizer);
        actions.push(action);
        view = next;
    }
    let outcome = match view.outcome {
        Some(o) => o,
        None => env.status_now()?,
    };
    Ok(EpisodeResult {
        spec: spec.clone(),
        actions,
        reward: outcome_reward(&outcome),
        outcome,
    })
}

/// Greedy policy acting without search.
pub fn play_greedy(
    spec: &TaskSpec,
    policy: &dyn Policy,
    env: &mut dyn Environment,
) -> Result<EpisodeResult, SearchError> {
    play_episode(spec, env, &IdentitySummarizer, |state, view, _, _| {
        Ok(policy.distribution(state, &view.candidates)?.greedy().clone())
    })
}

/// Acting by the best root action of a fresh search at every step.
pub fn play_with_search(
    spec: &TaskSpec,
    search: &Search<'_>,
    env: &mut dyn Environment,
) -> Result<EpisodeResult, SearchError> {
    play_episode(spec, env, search.summarizer, |state, view, snapshot, env| {
        let tree = search.run_from(Some(spec.clone()), state.clone(), view, snapshot.clone(), env)?;
        match best_root_action(&tree) {
            Ok(a) => Ok(a),
            // Root closed to expansion: fall back to the policy.
            Err(_) => Ok(search.policy.distribution(state, &view.candidates)?.greedy().clone()),
        }
    })
}
