//! Imitation (SFT) and preference (DPO) objectives for the featurized
//! softmax policy, the optimizer, and one iteration of the search-then-train
//! loop.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::datasets::{
    extract_preferences, extract_success, merge_buffers, PreferencePair, Source, Trajectory, DEFAULT_EPSILON,
    DEFAULT_N_MIN, DEFAULT_PAIRS_PER_NODE,
};
use crate::env::{Action, Environment, TaskSpec};
use crate::eval::{evaluate, EvalMode, EvalReport};
use crate::exec::par_map;
use crate::policy::{log_softmax, Critic, FeatureContext, PolicyParams, SoftmaxPolicy};
use crate::search::{run_search, SearchConfig, SearchError};
use crate::state::{AgentState, PromptTemplate};

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("item {item}, step {step}: {message}")]
    Data { item: usize, step: usize, message: String },
    #[error("{phase} loss became non-finite at epoch {epoch} ({loss})")]
    NonFinite { phase: String, epoch: usize, loss: f64 },
    #[error("invalid training config: {field}: {message}")]
    Config { field: String, message: String },
    #[error("task {task}: {source}")]
    Search {
        task: String,
        #[source]
        source: SearchError,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// DPO temperature.
    pub beta: f64,
    pub learning_rate: f64,
    pub epochs_sft: usize,
    pub epochs_dpo: usize,
    pub batch_size: usize,
    /// Maximum L2 norm of a mini-batch gradient.
    pub grad_clip: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            beta: 0.5,
            learning_rate: 0.5,
            epochs_sft: 30,
            epochs_dpo: 30,
            batch_size: 16,
            grad_clip: 5.0,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |field: &str, message: &str| {
            Err(TrainError::Config {
                field: field.into(),
                message: message.into(),
            })
        };
        if !(self.beta.is_finite() && self.beta > 0.0) {
            return bad("beta", "must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate", "must be positive");
        }
        if self.batch_size == 0 {
            return bad("batch_size", "must be at least 1");
        }
        if !(self.grad_clip.is_finite() && self.grad_clip > 0.0) {
            return bad("grad_clip", "must be positive");
        }
        Ok(())
    }
}

/// Frozen policy whose log-probabilities normalize the DPO log-ratios.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferencePolicy {
    params: PolicyParams,
}

impl ReferencePolicy {
    pub fn snapshot(params: &PolicyParams) -> Self {
        Self { params: params.clone() }
    }

    pub fn params(&self) -> &PolicyParams {
        &self.params
    }
}

type SparseRow = Vec<(usize, f64)>;

/// Feature-name interning: string features become dense indices.
#[derive(Debug, Default, Clone)]
struct Interner {
    index: HashMap<String, usize>,
    names: Vec<String>,
}

impl Interner {
    fn intern(&mut self, name: &str) -> usize {
        if let Some(&i) = self.index.get(name) {
            return i;
        }
        let i = self.names.len();
        self.index.insert(name.to_owned(), i);
        self.names.push(name.to_owned());
        i
    }

    fn rows(&mut self, state: &AgentState, candidates: &[Action]) -> Vec<SparseRow> {
        let ctx = FeatureContext::new(state);
        candidates
            .iter()
            .map(|a| {
                ctx.featurize(a)
                    .into_iter()
                    .map(|(name, v)| (self.intern(&name), v))
                    .collect()
            })
            .collect()
    }
}

#[derive(Debug, Clone)]
struct Decision {
    rows: Vec<SparseRow>,
    chosen: usize,
}

#[derive(Debug, Clone)]
struct PairItem {
    rows: Vec<SparseRow>,
    winner: usize,
    loser: usize,
    /// `log pi_ref(w) - log pi_ref(l)`, fixed when the problem is compiled.
    ref_gap: f64,
}

#[derive(Debug, Clone)]
enum Items {
    Sft(Vec<Vec<Decision>>),
    Dpo { pairs: Vec<PairItem>, beta: f64 },
}

/// A loss over dense weights, compiled from records.
#[derive(Debug, Clone)]
pub struct Objective {
    names: Vec<String>,
    base: PolicyParams,
    items: Items,
}

fn dot(w: &[f64], row: &SparseRow) -> f64 {
    row.iter().map(|&(i, v)| w[i] * v).sum()
}

fn log_probs(w: &[f64], rows: &[SparseRow]) -> Vec<f64> {
    let logits: Vec<f64> = rows.iter().map(|r| dot(w, r)).collect();
    log_softmax(&logits)
}

/// `log(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn position(candidates: &[Action], a: &Action, item: usize, step: usize) -> Result<usize, TrainError> {
    candidates.iter().position(|c| c == a).ok_or_else(|| TrainError::Data {
        item,
        step,
        message: format!("action {a} is not among the recorded candidates"),
    })
}

impl Objective {
    /// Negative log-likelihood of every recorded action, summed over each
    /// trajectory and averaged over trajectories.
    pub fn sft(params: &PolicyParams, trajectories: &[Trajectory]) -> Result<Self, TrainError> {
        let mut interner = Interner::default();
        let mut items = Vec::with_capacity(trajectories.len());
        for (t, traj) in trajectories.iter().enumerate() {
            let mut steps = Vec::with_capacity(traj.steps.len());
            for (s, step) in traj.steps.iter().enumerate() {
                let chosen = position(&step.candidates, &step.action, t, s)?;
                steps.push(Decision {
                    rows: interner.rows(&step.state, &step.candidates),
                    chosen,
                });
            }
            items.push(steps);
        }
        Ok(Self {
            names: interner.names,
            base: params.clone(),
            items: Items::Sft(items),
        })
    }

    /// Mean sigmoid preference loss against a frozen reference.
    pub fn dpo(
        params: &PolicyParams,
        reference: &ReferencePolicy,
        pairs: &[PreferencePair],
        beta: f64,
    ) -> Result<Self, TrainError> {
        let mut interner = Interner::default();
        let mut items = Vec::with_capacity(pairs.len());
        for (p, pair) in pairs.iter().enumerate() {
            let winner = position(&pair.candidates, &pair.winner, p, 0)?;
            let loser = position(&pair.candidates, &pair.loser, p, 0)?;
            if winner == loser {
                return Err(TrainError::Data {
                    item: p,
                    step: 0,
                    message: "winner equals loser".into(),
                });
            }
            let rows = interner.rows(&pair.state, &pair.candidates);
            let ref_logits: Vec<f64> = {
                let ctx = FeatureContext::new(&pair.state);
                pair.candidates
                    .iter()
                    .map(|a| reference.params.dot(&ctx.featurize(a)))
                    .collect()
            };
            let lpr = log_softmax(&ref_logits);
            items.push(PairItem {
                rows,
                winner,
                loser,
                ref_gap: lpr[winner] - lpr[loser],
            });
        }
        Ok(Self {
            names: interner.names,
            base: params.clone(),
            items: Items::Dpo { pairs: items, beta },
        })
    }

    pub fn dim(&self) -> usize {
        self.names.len()
    }

    pub fn len(&self) -> usize {
        match &self.items {
            Items::Sft(t) => t.len(),
            Items::Dpo { pairs, .. } => pairs.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn feature_names(&self) -> &[String] {
        &self.names
    }

    /// Dense weights of the params the objective was compiled from.
    pub fn initial_weights(&self) -> Vec<f64> {
        self.names.iter().map(|n| self.base.weight(n)).collect()
    }

    /// `base` with the interned features replaced by `w`.
    pub fn params_from(&self, w: &[f64]) -> PolicyParams {
        let mut out = self.base.clone();
        for (name, &v) in self.names.iter().zip(w) {
            if v != 0.0 || out.weights.contains_key(name) {
                out.weights.insert(name.clone(), v);
            }
        }
        out
    }

    fn item_loss_grad(&self, w: &[f64], i: usize, grad: Option<&mut [f64]>) -> f64 {
        match &self.items {
            Items::Sft(trajs) => {
                let mut loss = 0.0;
                let mut grad = grad;
                for d in &trajs[i] {
                    let lp = log_probs(w, &d.rows);
                    loss -= lp[d.chosen];
                    if let Some(g) = grad.as_deref_mut() {
                        // d(-log p_a) = E_p[phi] - phi_a
                        for (row, l) in d.rows.iter().zip(&lp) {
                            let p = l.exp();
                            for &(k, v) in row {
                                g[k] += p * v;
                            }
                        }
                        for &(k, v) in &d.rows[d.chosen] {
                            g[k] -= v;
                        }
                    }
                }
                loss
            }
            Items::Dpo { pairs, beta } => {
                let p = &pairs[i];
                let lp = log_probs(w, &p.rows);
                let z = beta * ((lp[p.winner] - lp[p.loser]) - p.ref_gap);
                if let Some(g) = grad {
                    // The expectation terms of the two log-prob gradients cancel.
                    let c = -sigmoid(-z) * beta;
                    for &(k, v) in &p.rows[p.winner] {
                        g[k] += c * v;
                    }
                    for &(k, v) in &p.rows[p.loser] {
                        g[k] -= c * v;
                    }
                }
                softplus(-z)
            }
        }
    }

    /// Mean loss over the listed items.
    pub fn loss_on(&self, w: &[f64], items: &[usize]) -> f64 {
        if items.is_empty() {
            return 0.0;
        }
        items.iter().map(|&i| self.item_loss_grad(w, i, None)).sum::<f64>() / items.len() as f64
    }

    /// Mean loss and its gradient over the listed items.
    pub fn loss_grad_on(&self, w: &[f64], items: &[usize]) -> (f64, Vec<f64>) {
        let mut g = vec![0.0; self.dim()];
        if items.is_empty() {
            return (0.0, g);
        }
        let mut loss = 0.0;
        for &i in items {
            loss += self.item_loss_grad(w, i, Some(&mut g));
        }
        let n = items.len() as f64;
        g.iter_mut().for_each(|x| *x /= n);
        (loss / n, g)
    }

    pub fn loss(&self, w: &[f64]) -> f64 {
        self.loss_on(w, &(0..self.len()).collect::<Vec<_>>())
    }

    pub fn loss_grad(&self, w: &[f64]) -> (f64, Vec<f64>) {
        self.loss_grad_on(w, &(0..self.len()).collect::<Vec<_>>())
    }

    fn sparse(&self, g: &[f64]) -> BTreeMap<String, f64> {
        self.names.iter().cloned().zip(g.iter().copied()).collect()
    }
}

pub fn sft_loss(params: &PolicyParams, trajectories: &[Trajectory]) -> Result<f64, TrainError> {
    let obj = Objective::sft(params, trajectories)?;
    Ok(obj.loss(&obj.initial_weights()))
}

/// Gradient keyed by feature; features absent from the data have zero gradient.
pub fn sft_grad(params: &PolicyParams, trajectories: &[Trajectory]) -> Result<BTreeMap<String, f64>, TrainError> {
    let obj = Objective::sft(params, trajectories)?;
    Ok(obj.sparse(&obj.loss_grad(&obj.initial_weights()).1))
}

pub fn dpo_loss(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<f64, TrainError> {
    let obj = Objective::dpo(params, reference, pairs, beta)?;
    Ok(obj.loss(&obj.initial_weights()))
}

pub fn dpo_grad(
    params: &PolicyParams,
    reference: &ReferencePolicy,
    pairs: &[PreferencePair],
    beta: f64,
) -> Result<BTreeMap<String, f64>, TrainError> {
    let obj = Objective::dpo(params, reference, pairs, beta)?;
    Ok(obj.sparse(&obj.loss_grad(&obj.initial_weights()).1))
}

/// Mini-batch gradient descent with norm clipping and a seeded shuffle.
/// Returns the final weights and the full-data mean loss after each epoch.
pub fn descend(
    obj: &Objective,
    epochs: usize,
    cfg: &TrainConfig,
    phase: &str,
) -> Result<(Vec<f64>, Vec<f64>), TrainError> {
    cfg.validate()?;
    let mut w = obj.initial_weights();
    let mut curve = Vec::with_capacity(epochs);
    let mut order: Vec<usize> = (0..obj.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    for epoch in 0..epochs {
        order.shuffle(&mut rng);
        for batch in order.chunks(cfg.batch_size) {
            let (_, mut g) = obj.loss_grad_on(&w, batch);
            let norm = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm > cfg.grad_clip {
                let s = cfg.grad_clip / norm;
                g.iter_mut().for_each(|x| *x *= s);
            }
            for (wi, gi) in w.iter_mut().zip(&g) {
                *wi -= cfg.learning_rate * gi;
            }
        }
        let loss = obj.loss(&w);
        if !loss.is_finite() {
            return Err(TrainError::NonFinite {
                phase: phase.into(),
                epoch,
                loss,
            });
        }
        curve.push(loss);
    }
    Ok((w, curve))
}

/// Data for one training phase.
pub enum PhaseData<'a> {
    Sft(&'a [Trajectory]),
    Dpo {
        pairs: &'a [PreferencePair],
        reference: &'a ReferencePolicy,
    },
}

/// Trains `params` on one phase's data. Empty data leaves params unchanged.
pub fn train_phase(
    params: &PolicyParams,
    data: PhaseData<'_>,
    cfg: &TrainConfig,
) -> Result<(PolicyParams, Vec<f64>), TrainError> {
    cfg.validate()?;
    let (obj, epochs, phase) = match data {
        PhaseData::Sft(t) => (Objective::sft(params, t)?, cfg.epochs_sft, "sft"),
        PhaseData::Dpo { pairs, reference } => (
            Objective::dpo(params, reference, pairs, cfg.beta)?,
            cfg.epochs_dpo,
            "dpo",
        ),
    };
    if obj.is_empty() {
        return Ok((params.clone(), Vec::new()));
    }
    let (w, curve) = descend(&obj, epochs, cfg, phase)?;
    Ok((obj.params_from(&w), curve))
}

/// Imitation warm-up on expert trajectories only.
pub fn warmup_expert(
    params: &PolicyParams,
    expert: &[Trajectory],
    cfg: &TrainConfig,
) -> Result<PolicyParams, TrainError> {
    let data: Vec<Trajectory> = expert.iter().filter(|t| t.source == Source::Expert).cloned().collect();
    if data.is_empty() {
        tracing::warn!("no expert trajectories; warm-up leaves the policy unchanged");
        return Ok(params.clone());
    }
    Ok(train_phase(params, PhaseData::Sft(&data), cfg)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    /// Minimum Q margin of a preference pair.
    pub epsilon: f64,
    /// Minimum visits of both edges of a preference pair.
    pub n_min: u64,
    pub pairs_per_node: usize,
    /// Maximum records kept in each accumulated buffer.
    pub buffer_cap: usize,
    /// Train only on the current iteration's data.
    pub fresh_only: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            epsilon: DEFAULT_EPSILON,
            n_min: DEFAULT_N_MIN,
            pairs_per_node: DEFAULT_PAIRS_PER_NODE,
            buffer_cap: 5000,
            fresh_only: false,
        }
    }
}

/// Everything one loop iteration needs besides params and buffers.
pub struct IterationSetup<'a> {
    pub suite: &'a [TaskSpec],
    pub held_out: &'a [TaskSpec],
    pub search: SearchConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub skip_sft: bool,
    pub skip_dpo: bool,
    pub critic: &'a dyn Critic,
    pub make_env: &'a (dyn Fn() -> Box<dyn Environment> + Sync),
    pub template: &'a PromptTemplate,
}

/// Accumulated success and preference buffers.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Buffers {
    pub success: Vec<Trajectory>,
    pub preferences: Vec<PreferencePair>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IterationReport {
    pub iteration: usize,
    pub new_success: usize,
    pub new_preferences: usize,
    pub buffer_success: usize,
    pub buffer_preferences: usize,
    pub tasks_with_success: usize,
    pub sft_loss: Option<f64>,
    pub dpo_loss: Option<f64>,
    pub success_rate: f64,
    pub mean_steps: f64,
    pub eval: EvalReport,
}

/// Search every suite task with the current policy, grow the buffers, run
/// SFT on successes, then DPO against the post-SFT snapshot, and evaluate.
pub fn run_iteration(
    iteration: usize,
    params: &PolicyParams,
    buffers: &Buffers,
    setup: &IterationSetup<'_>,
) -> Result<(PolicyParams, Buffers, IterationReport), TrainError> {
    let policy = SoftmaxPolicy::new(params.clone());
    let searched = par_map(setup.suite, |spec| {
        let mut env = (setup.make_env)();
        let mut cfg = setup.search;
        cfg.seed ^= spec.seed;
        run_search(spec, &policy, setup.critic, env.as_mut(), &cfg)
            .map(|tree| {
                (
                    extract_success(&tree, setup.template),
                    extract_preferences(
                        &tree,
                        setup.template,
                        setup.data.epsilon,
                        setup.data.n_min,
                        setup.data.pairs_per_node,
                    ),
                )
            })
            .map_err(|source| TrainError::Search {
                task: crate::datasets::task_id(spec),
                source,
            })
    });
    let mut new_success = Vec::new();
    let mut new_prefs = Vec::new();
    let mut tasks_with_success = 0;
    for r in searched {
        let (s, p) = r?;
        tasks_with_success += usize::from(!s.is_empty());
        new_success.extend(s);
        new_prefs.extend(p);
    }
    let cap = setup.data.buffer_cap;
    let next = if setup.data.fresh_only {
        Buffers {
            success: merge_buffers(&[], &new_success, cap),
            preferences: merge_buffers(&[], &new_prefs, cap),
        }
    } else {
        Buffers {
            success: merge_buffers(&buffers.success, &new_success, cap),
            preferences: merge_buffers(&buffers.preferences, &new_prefs, cap),
        }
    };
    if next.success.is_empty() && next.preferences.is_empty() {
        tracing::warn!(
            iteration,
            "no success trajectories or preference pairs; parameters unchanged"
        );
    }

    let mut current = params.clone();
    let mut sft_loss = None;
    if !setup.skip_sft {
        let (p, curve) = train_phase(&current, PhaseData::Sft(&next.success), &setup.train)?;
        current = p;
        sft_loss = curve.last().copied();
    }
    let mut dpo_loss = None;
    if !setup.skip_dpo {
        let reference = ReferencePolicy::snapshot(&current);
        let (p, curve) = train_phase(
            &current,
            PhaseData::Dpo {
                pairs: &next.preferences,
                reference: &reference,
            },
            &setup.train,
        )?;
        current = p;
        dpo_loss = curve.last().copied();
    }

    let eval = evaluate(
        &SoftmaxPolicy::new(current.clone()),
        setup.held_out,
        setup.make_env,
        &EvalMode::Greedy,
    )
    .map_err(|source| TrainError::Search {
        task: "held-out".into(),
        source,
    })?;
    let report = IterationReport {
        iteration,
        new_success: new_success.len(),
        new_preferences: new_prefs.len(),
        buffer_success: next.success.len(),
        buffer_preferences: next.preferences.len(),
        tasks_with_success,
        sft_loss,
        dpo_loss,
        success_rate: eval.overall.success_rate,
        mean_steps: eval.overall.mean_steps,
        eval,
    };
    tracing::info!(
        iteration,
        success = report.new_success,
        preferences = report.new_preferences,
        success_rate = report.success_rate,
        mean_steps = report.mean_steps,
        "iteration finished"
    );
    Ok((current, next, report))
}
