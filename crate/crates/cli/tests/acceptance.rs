//! Acceptance suite: one PASS/FAIL line per criterion, each checked against
//! its tolerance and time limit. Exits non-zero when any criterion fails.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::{Duration, Instant};

use mctsep::datasets::{
    extract_preferences, extract_success, parse_jsonl, to_jsonl, PreferencePair, RecordIds, Source, Trajectory,
    TrajectoryStep,
};
use mctsep::env::{
    Action, Environment, Family, FeedbackCode, GridHouse, LayoutRegistry, Observation, OutcomeStatus, TaskSpec,
};
use mctsep::eval::{evaluate, EvalMode};
use mctsep::exec::par_map;
use mctsep::oracle::{build_graph, optimal_actions, value_iteration};
use mctsep::policy::{featurize, HeuristicCritic, PolicyParams, SoftmaxPolicy};
use mctsep::search::{best_root_action, puct_select, run_search, SearchConfig, SearchEdge, SearchNode, SearchTree};
use mctsep::state::{AgentState, IdentitySummarizer, PromptTemplate};
use mctsep::training::{dpo_loss, sft_loss, warmup_expert, Objective, ReferencePolicy, TrainConfig};
use mctsep_cli::commands;
use mctsep_cli::RunConfig;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

// ---------------------------------------------------------------- fixtures

fn registry() -> (LayoutRegistry, Arc<LayoutRegistry>) {
    let reg = LayoutRegistry::builtin();
    let arc = Arc::new(reg.clone());
    (reg, arc)
}

fn specs(reg: &LayoutRegistry, seeds: std::ops::Range<u64>) -> Vec<TaskSpec> {
    let layout = reg.get("house_s").unwrap();
    seeds
        .map(|s| TaskSpec::generate(Family::ALL[(s % 6) as usize], s, layout).unwrap())
        .collect()
}

fn experts(reg: &LayoutRegistry, n: u64) -> Vec<Trajectory> {
    let tpl = PromptTemplate::text_only();
    specs(reg, 10_000..10_000 + n)
        .iter()
        .filter_map(|s| mctsep::oracle::expert_trajectory(s, reg, 0.95, &tpl).unwrap())
        .collect()
}

fn warm(reg: &LayoutRegistry, n: u64) -> PolicyParams {
    warmup_expert(&PolicyParams::zeros(), &experts(reg, n), &TrainConfig::default()).unwrap()
}

fn obs(text: &str) -> Observation {
    Observation::new(text, vec![], FeedbackCode::Ok)
}

/// A tree of the given shape with distinct child observations.
fn random_shape_tree(rng: &mut ChaCha8Rng, nodes: usize) -> SearchTree {
    let root = AgentState::init("put a book in desk", obs("start")).unwrap();
    let mut tree = SearchTree::new(None, SearchConfig::default(), SearchNode::new(root, vec![], 0));
    for i in 1..nodes {
        let parent = rng.gen_range(0..tree.nodes.len());
        let k = tree.nodes[parent].edges.len();
        let a = Action::goto(&format!("r{k}"));
        let state = tree.nodes[parent]
            .state
            .advance(&a, obs(&format!("n{i}")), &IdentitySummarizer);
        let depth = tree.nodes[parent].depth + 1;
        tree.attach(parent, a, 0.5, SearchNode::new(state, vec![], depth));
    }
    tree
}

/// States, candidates and a chosen index from seeded random walks.
fn random_decisions(rng: &mut ChaCha8Rng, n: usize) -> Vec<(AgentState, Vec<Action>, usize)> {
    let (reg, arc) = registry();
    let pool = specs(&reg, 0..12);
    let mut out = Vec::new();
    while out.len() < n {
        let spec = pool.choose(rng).unwrap();
        let mut env = GridHouse::new(arc.clone());
        let (mut view, _) = env.reset(spec).unwrap();
        let mut s = AgentState::init(&spec.instruction, view.observation.clone()).unwrap();
        for _ in 0..rng.gen_range(0..6) {
            if view.terminal {
                break;
            }
            let a = view.candidates.choose(rng).unwrap().clone();
            view = env.step(&a).unwrap();
            s = s.advance(&a, view.observation.clone(), &IdentitySummarizer);
        }
        if view.candidates.len() >= 2 {
            let k = rng.gen_range(0..view.candidates.len());
            out.push((s, view.candidates.clone(), k));
        }
    }
    out
}

fn random_params(rng: &mut ChaCha8Rng, ds: &[(AgentState, Vec<Action>, usize)]) -> PolicyParams {
    let mut p = PolicyParams::zeros();
    for (s, cands, _) in ds {
        for a in cands {
            for (f, _) in featurize(s, a) {
                let w = rng.gen_range(-1.0..1.0);
                p.weights.entry(f).or_insert(w);
            }
        }
    }
    p
}

fn ids() -> RecordIds {
    RecordIds {
        task: "t".into(),
        tree: "x".into(),
        node: None,
    }
}

fn trajectory(steps: Vec<TrajectoryStep>) -> Trajectory {
    Trajectory {
        instruction: "put a book in desk".into(),
        spec: None,
        steps,
        reward: 1.0,
        source: Source::Search,
        ids: ids(),
    }
}

fn step(s: &AgentState, candidates: Vec<Action>, chosen: usize) -> TrajectoryStep {
    TrajectoryStep {
        context: String::new(),
        state: s.clone(),
        action: candidates[chosen].clone(),
        candidates,
        summary: String::new(),
    }
}

/// Norm-wise relative error between the analytic gradient and central
/// differences with h = 1e-5.
fn fd_rel_err(obj: &Objective, w: &[f64]) -> f64 {
    let (_, g) = obj.loss_grad(w);
    let h = 1e-5;
    let (mut diff, mut norm) = (0.0, 0.0);
    let mut x = w.to_vec();
    for k in 0..w.len() {
        x[k] = w[k] + h;
        let up = obj.loss(&x);
        x[k] = w[k] - h;
        let down = obj.loss(&x);
        x[k] = w[k];
        let fd = (up - down) / (2.0 * h);
        diff += (fd - g[k]).powi(2);
        norm += g[k].powi(2).max(fd * fd);
    }
    diff.sqrt() / norm.sqrt().max(1e-12)
}

fn config(dir: &Path, f: impl FnOnce(&mut RunConfig)) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.run.output_dir = dir.to_path_buf();
    f(&mut cfg);
    cfg.validate().unwrap();
    cfg
}

fn files_under(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(dir) = stack.pop() {
        for entry in std::fs::read_dir(&dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(
                    path.strip_prefix(root).unwrap().to_path_buf(),
                    std::fs::read(&path).unwrap(),
                );
            }
        }
    }
    out
}

// -------------------------------------------------------------- criteria

/// Q values after random backups equal an independent mean of discounted
/// returns; visit counts are conserved.
fn backup_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    let mut visit_errors = 0;
    for _ in 0..1000 {
        let nodes = rng.gen_range(2..40);
        let mut tree = random_shape_tree(&mut rng, nodes);
        let gamma: f64 = rng.gen_range(0.5..=1.0);
        let mut sums: HashMap<(usize, usize), (f64, u64)> = HashMap::new();
        let mut node_backups = vec![0u64; tree.nodes.len()];
        for _ in 0..rng.gen_range(1..100) {
            let leaf = rng.gen_range(1..tree.nodes.len());
            let path = tree.path_to(leaf);
            let g: f64 = rng.gen_range(0.0..=1.0);
            tree.backup(&path, leaf, g, gamma).unwrap();
            node_backups[leaf] += 1;
            // The edge k levels above the leaf sees g * gamma^k.
            let mut discounted = g;
            for &(n, e) in path.iter().rev() {
                let s = sums.entry((n, e)).or_default();
                s.0 += discounted;
                s.1 += 1;
                discounted *= gamma;
                node_backups[n] += 1;
            }
        }
        for (&(n, e), &(sum, count)) in &sums {
            let edge = &tree.node(n).edges[e];
            visit_errors += usize::from(edge.visits != count);
            worst = worst.max((edge.q - sum / count as f64).abs());
        }
        for (id, node) in tree.nodes.iter().enumerate() {
            let created = u64::from(id == 0);
            visit_errors += usize::from(node.visits != node_backups[id] + created);
            let through: u64 = node.edges.iter().map(|e| e.visits).sum();
            visit_errors += usize::from(through > node.visits);
        }
    }
    outcome(
        worst <= 1e-9 && visit_errors == 0,
        format!("1000 trees, max |Q - mean| = {worst:.2e} (tol 1e-9), visit mismatches = {visit_errors}"),
    )
}

/// `puct_select` agrees with a scalar re-evaluation, ties to the lowest index.
fn puct_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut mismatches = 0;
    let mut ties = 0;
    let state = AgentState::init("put a book in desk", obs("start")).unwrap();
    for i in 0..10_000 {
        let k = rng.gen_range(1..8);
        let mut node = SearchNode::new(state.clone(), vec![], 0);
        let c: f64 = if i % 10 == 0 { 0.0 } else { rng.gen_range(0.0..3.0) };
        node.visits = rng.gen_range(0..50);
        for j in 0..k {
            let mut e = SearchEdge::new(Action::goto(&format!("r{j}")), rng.gen_range(0.0..1.0));
            e.visits = rng.gen_range(0..10);
            e.q = rng.gen_range(0.0..1.0);
            node.edges.push(e);
        }
        // Every third instance copies an edge so the scores tie exactly.
        if i % 3 == 0 && k >= 2 {
            let (a, b) = (rng.gen_range(0..k), rng.gen_range(0..k));
            let src = node.edges[a].clone();
            node.edges[b].q = src.q;
            node.edges[b].prior = src.prior;
            node.edges[b].visits = src.visits;
        }
        let mut best = 0;
        let mut best_score = f64::NEG_INFINITY;
        let mut tie = false;
        for (j, e) in node.edges.iter().enumerate() {
            let u = c * e.prior * (node.visits as f64).sqrt() / (1.0 + e.visits as f64);
            let score = e.q + u;
            if score > best_score {
                best = j;
                best_score = score;
                tie = false;
            } else if score == best_score {
                tie = true;
            }
        }
        ties += usize::from(tie);
        mismatches += usize::from(puct_select(&node, c).unwrap() != best);
    }
    outcome(
        mismatches == 0 && ties > 0,
        format!("10000 instances ({ties} with tied maxima), index mismatches = {mismatches}"),
    )
}

/// Best root action at budget 500 is oracle-optimal on ≥ 90 of 100 tasks.
fn oracle_calibration() -> Outcome {
    let (reg, arc) = registry();
    let policy = SoftmaxPolicy::new(warm(&reg, 30));
    let critic = HeuristicCritic::new(10);
    let cfg = SearchConfig {
        budget: 500,
        ..SearchConfig::default()
    };
    let mut tasks = Vec::new();
    let mut skipped = 0;
    for spec in specs(&reg, 50_000..50_400) {
        if tasks.len() == 100 {
            break;
        }
        match build_graph(&spec, &reg, 10_000) {
            Ok(g) => tasks.push((spec, g)),
            Err(_) => skipped += 1,
        }
    }
    if tasks.len() < 100 {
        return outcome(false, format!("only {} tasks within 10^4 states", tasks.len()));
    }
    let hits: Vec<bool> = par_map(&tasks, |(spec, graph)| {
        let table = value_iteration(graph, cfg.gamma);
        let optimal = optimal_actions(graph, &table, 0);
        let mut c = cfg;
        c.seed ^= spec.seed;
        let tree = run_search(spec, &policy, &critic, &mut GridHouse::new(arc.clone()), &c).unwrap();
        best_root_action(&tree).is_ok_and(|a| optimal.contains(&a))
    });
    let n = hits.iter().filter(|h| **h).count();
    outcome(
        n >= 90,
        format!("{n}/100 optimal first actions (need ≥ 90); {skipped} larger tasks skipped"),
    )
}

/// Search-assisted acting has no higher mean episode loss than greedy acting.
fn theorem_one() -> Outcome {
    let (reg, arc) = registry();
    let policy = SoftmaxPolicy::new(warm(&reg, 10));
    let critic = HeuristicCritic::new(10);
    let held = specs(&reg, 20_000..20_100);
    let make_env = move || -> Box<dyn Environment> { Box::new(GridHouse::new(arc.clone())) };
    let greedy = evaluate(&policy, &held, &make_env, &EvalMode::Greedy).unwrap();
    let searched = evaluate(
        &policy,
        &held,
        &make_env,
        &EvalMode::Search {
            config: SearchConfig::default(),
            critic: &critic,
        },
    )
    .unwrap();
    let diffs: Vec<f64> = greedy
        .episodes
        .iter()
        .zip(&searched.episodes)
        .map(|(g, s)| (1.0 - s.reward) - (1.0 - g.reward))
        .collect();
    let n = diffs.len();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let mut means: Vec<f64> = (0..10_000)
        .map(|_| (0..n).map(|_| diffs[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let upper = means[(0.95 * means.len() as f64) as usize];
    outcome(
        upper <= 0.0,
        format!(
            "loss greedy {:.3}, search {:.3}; mean diff {mean:.3}, bootstrap 95% upper bound {upper:.3} (need ≤ 0)",
            1.0 - greedy.overall.mean_reward,
            1.0 - searched.overall.mean_reward
        ),
    )
}

/// Closed-form loss values and finite-difference gradient checks.
fn losses_and_gradients() -> Outcome {
    let s = AgentState::init("put a book in desk", obs("room")).unwrap();
    let four: Vec<Action> = ["a", "b", "c", "d"].iter().map(|r| Action::goto(r)).collect();
    let t = trajectory((0..3).map(|i| step(&s, four.clone(), i)).collect());
    let sft = sft_loss(&PolicyParams::zeros(), &[t]).unwrap();
    let sft_err = (sft - 3.0 * 4f64.ln()).abs();

    let mut rng = ChaCha8Rng::seed_from_u64(105);
    let pair = |rng: &mut ChaCha8Rng| {
        let (s, c, w) = random_decisions(rng, 1).remove(0);
        let l = (w + rng.gen_range(1..c.len())) % c.len();
        PreferencePair {
            context: String::new(),
            state: s,
            winner: c[w].clone(),
            loser: c[l].clone(),
            candidates: c,
            q_w: 1.0,
            q_l: 0.0,
            n_w: 2,
            n_l: 2,
            ids: ids(),
        }
    };
    let pairs: Vec<PreferencePair> = (0..8).map(|_| pair(&mut rng)).collect();
    let ds = random_decisions(&mut rng, 4);
    let p = random_params(&mut rng, &ds);
    let dpo = dpo_loss(&p, &ReferencePolicy::snapshot(&p), &pairs, 0.5).unwrap();
    let dpo_err = (dpo - std::f64::consts::LN_2).abs();

    let (mut worst_sft, mut worst_dpo): (f64, f64) = (0.0, 0.0);
    for _ in 0..100 {
        let ds = random_decisions(&mut rng, 4);
        let p = random_params(&mut rng, &ds);
        let trajs = vec![trajectory(ds.iter().map(|(s, a, k)| step(s, a.clone(), *k)).collect())];
        let obj = Objective::sft(&p, &trajs).unwrap();
        worst_sft = worst_sft.max(fd_rel_err(&obj, &obj.initial_weights()));

        let pairs: Vec<PreferencePair> = (0..3).map(|_| pair(&mut rng)).collect();
        let mut r = p.clone();
        r.weights.values_mut().for_each(|w| *w *= 0.5);
        let obj = Objective::dpo(&p, &ReferencePolicy::snapshot(&r), &pairs, rng.gen_range(0.1..2.0)).unwrap();
        let w: Vec<f64> = obj
            .initial_weights()
            .iter()
            .map(|x| x + rng.gen_range(-0.5..0.5))
            .collect();
        worst_dpo = worst_dpo.max(fd_rel_err(&obj, &w));
    }
    outcome(
        sft_err <= 1e-12 && dpo_err <= 1e-12 && worst_sft <= 1e-5 && worst_dpo <= 1e-5,
        format!(
            "|sft - 3 ln 4| = {sft_err:.1e}, |dpo - ln 2| = {dpo_err:.1e}, worst FD rel err sft {worst_sft:.1e} / dpo {worst_dpo:.1e} (tol 1e-5)"
        ),
    )
}

/// Extracted data replays and satisfies the pair rules; extraction equals a
/// brute-force scan.
fn dataset_soundness() -> Outcome {
    let (reg, arc) = registry();
    let policy = SoftmaxPolicy::new(warm(&reg, 10));
    let critic = HeuristicCritic::new(10);
    let tpl = PromptTemplate::text_only();
    let cfg = SearchConfig::default();
    let (eps, n_min, cap) = (0.1, 2, 6);
    let tasks = specs(&reg, 60_000..60_100);
    let trees: Vec<SearchTree> = par_map(&tasks, |spec| {
        let mut c = cfg;
        c.seed ^= spec.seed;
        run_search(spec, &policy, &critic, &mut GridHouse::new(arc.clone()), &c).unwrap()
    });

    let (mut trajectories, mut replay_failures) = (0, 0);
    let (mut pairs_total, mut rule_violations, mut scan_mismatches) = (0, 0, 0);
    for (spec, tree) in tasks.iter().zip(&trees) {
        for t in extract_success(tree, &tpl) {
            trajectories += 1;
            let mut env = GridHouse::new(arc.clone());
            env.reset(spec).unwrap();
            let mut last = None;
            for s in &t.steps {
                last = Some(env.step(&s.action).unwrap());
            }
            let done = last
                .and_then(|v| v.outcome)
                .is_some_and(|o| o.status == OutcomeStatus::Completed);
            replay_failures += usize::from(!done);
        }
        let pairs = extract_preferences(tree, &tpl, eps, n_min, cap);
        pairs_total += pairs.len();
        for p in &pairs {
            rule_violations += usize::from(!(p.q_w - p.q_l > eps && p.n_w >= n_min && p.n_l >= n_min));
        }
        // Scan every node and ordered edge pair; keep the widest margins.
        let mut expected = Vec::new();
        for node in &tree.nodes {
            let mut here = Vec::new();
            for (i, w) in node.edges.iter().enumerate() {
                for (j, l) in node.edges.iter().enumerate() {
                    if i != j && w.q - l.q > eps && w.visits >= n_min && l.visits >= n_min {
                        here.push((w.q - l.q, i, j));
                    }
                }
            }
            here.sort_by(|a, b| b.0.total_cmp(&a.0).then((a.1, a.2).cmp(&(b.1, b.2))));
            for (_, i, j) in here.into_iter().take(cap) {
                expected.push((node.id, node.edges[i].action.render(), node.edges[j].action.render()));
            }
        }
        let got: Vec<_> = pairs
            .iter()
            .map(|p| (p.ids.node.unwrap(), p.winner.render(), p.loser.render()))
            .collect();
        scan_mismatches += usize::from(got != expected);
    }
    let passed =
        trajectories > 0 && pairs_total > 0 && replay_failures == 0 && rule_violations == 0 && scan_mismatches == 0;
    outcome(
        passed,
        format!(
            "100 trees: {trajectories} trajectories ({replay_failures} failed replays), {pairs_total} pairs ({rule_violations} rule violations), {scan_mismatches} trees differing from the scan"
        ),
    )
}

/// Warm-up plus three loop iterations, with SFT and DPO ablations.
fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let run = |name: &str, skip_sft: bool, skip_dpo: bool| {
        let cfg = config(&tmp.path().join(name), |c| {
            c.train.beta = 2.0;
            c.loop_.skip_sft = skip_sft;
            c.loop_.skip_dpo = skip_dpo;
        });
        commands::run_loop(&cfg, None, None).unwrap();
        let start = cfg.run.output_dir.join("loop").join("start.json");
        let warm = commands::eval(&cfg, Some(&start), false).unwrap();
        let last = commands::eval(
            &cfg,
            Some(&cfg.run.output_dir.join("checkpoints").join("final.json")),
            false,
        )
        .unwrap();
        let f = |v: &serde_json::Value, k: &str| v[k].as_f64().unwrap();
        (
            f(&warm, "success_rate"),
            f(&warm, "mean_steps"),
            f(&last, "success_rate"),
            f(&last, "mean_steps"),
        )
    };
    let (w_sr, w_steps, sr, steps) = run("full", false, false);
    let (_, _, nosft_sr, nosft_steps) = run("no-sft", true, false);
    let (_, _, nodpo_sr, nodpo_steps) = run("no-dpo", false, true);
    let reduction = 1.0 - steps / w_steps;
    let passed = sr >= 0.80 && reduction >= 0.20 && nosft_sr < sr && nodpo_steps > steps;
    outcome(
        passed,
        format!(
            "warm-up {w_sr:.2}/{w_steps:.2} → full {sr:.2}/{steps:.2} ({:.0}% fewer steps); w/o SFT {nosft_sr:.2}/{nosft_steps:.2}; w/o DPO {nodpo_sr:.2}/{nodpo_steps:.2}",
            reduction * 100.0
        ),
    )
}

/// Every command reproduces byte-identical artifacts; JSONL round trips.
fn determinism() -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    let run_all = |name: &str, workers: usize| {
        let cfg = config(&tmp.path().join(name), |c| {
            c.run.workers = workers;
            c.suite.train.count = 6;
            c.suite.held_out.count = 12;
            c.loop_.iterations = 2;
        });
        let ck = |n: &str| cfg.run.output_dir.join("checkpoints").join(format!("{n}.json"));
        commands::search(&cfg, 3, None).unwrap();
        commands::warmup(&cfg, None, None).unwrap();
        commands::collect(&cfg, Some(&ck("warmup"))).unwrap();
        commands::train_sft(&cfg, None, Some(&ck("warmup"))).unwrap();
        commands::train_dpo(&cfg, None, Some(&ck("sft")), None).unwrap();
        commands::eval(&cfg, Some(&ck("dpo")), false).unwrap();
        commands::eval(&cfg, Some(&ck("dpo")), true).unwrap();
        commands::run_loop(&cfg, None, None).unwrap();
        files_under(&cfg.run.output_dir)
    };
    let a = run_all("a", 1);
    let b = run_all("b", 3);
    let differing: Vec<String> = a
        .keys()
        .chain(b.keys())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .filter(|k| a.get(*k) != b.get(*k))
        .map(|k| k.display().to_string())
        .collect();

    let mut round_trip_failures = 0;
    let mut checked = 0;
    for (path, bytes) in &a {
        let text = String::from_utf8(bytes.clone()).unwrap();
        let again = match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") if text.contains("\"format\":\"trajectory\"") => {
                to_jsonl(&parse_jsonl::<Trajectory>(&text, path).unwrap())
            }
            Some("jsonl") if text.contains("\"format\":\"preference\"") => {
                to_jsonl(&parse_jsonl::<PreferencePair>(&text, path).unwrap())
            }
            _ => continue,
        };
        checked += 1;
        round_trip_failures += usize::from(again != text);
    }
    outcome(
        differing.is_empty() && checked > 0 && round_trip_failures == 0,
        format!(
            "{} artifacts identical across two runs (1 vs 3 workers), differing: {differing:?}; {checked} JSONL files, {round_trip_failures} round-trip mismatches",
            a.len()
        ),
    )
}

type Criterion = (&'static str, Duration, fn() -> Outcome);

fn main() {
    let criteria: [Criterion; 8] = [
        ("backup correctness", Duration::from_secs(5), backup_correctness),
        ("PUCT correctness", Duration::from_secs(1), puct_correctness),
        ("oracle calibration", Duration::from_secs(180), oracle_calibration),
        ("search vs greedy loss", Duration::from_secs(300), theorem_one),
        (
            "loss values and gradients",
            Duration::from_secs(10),
            losses_and_gradients,
        ),
        ("dataset soundness", Duration::from_secs(30), dataset_soundness),
        ("end-to-end improvement", Duration::from_secs(1200), end_to_end),
        ("determinism and persistence", Duration::from_secs(60), determinism),
    ];
    let mut failed = 0;
    for (i, (name, limit, check)) in criteria.into_iter().enumerate() {
        let start = Instant::now();
        let result = check();
        let took = start.elapsed();
        let pass = result.pass && took <= limit;
        failed += usize::from(!pass);
        println!(
            "criterion {} {:<28} {}  {:.2}s (limit {}s)  {}",
            i + 1,
            name,
            if pass { "PASS" } else { "FAIL" },
            took.as_secs_f64(),
            limit.as_secs(),
            result.detail
        );
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        std::process::exit(1);
    }
}
