//! One function per subcommand. Each returns a JSON summary for stdout.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{Context, Result};
use mctsep::datasets::{
    extract_preferences, extract_success, merge_buffers, task_id, write_jsonl, PreferencePair, Source, Trajectory,
};
use mctsep::env::external::ExternalEnv;
use mctsep::env::{Environment, GridHouse, LayoutRegistry, OutcomeStatus};
use mctsep::eval::{evaluate, EvalMode};
use mctsep::exec::{par_map, with_workers};
use mctsep::oracle::expert_trajectory;
use mctsep::policy::{Critic, Policy, PolicyParams, RemoteCritic, RemotePolicy, SoftmaxPolicy};
use mctsep::search::{best_root_action, run_search, SearchTree};
use mctsep::training::{
    run_iteration, train_phase, warmup_expert, Buffers, IterationSetup, PhaseData, ReferencePolicy,
};
use serde_json::{json, Value};

use crate::artifacts::{
    load_dataset, manifest_info, read_json, write_json, Checkpoint, IterationRecord, Layout, ReportFile, TreeManifest,
    ARTIFACT_FORMAT_VERSION,
};
use crate::{DataError, RunConfig, ValidationError};

type EnvFactory = Box<dyn Fn() -> Box<dyn Environment> + Sync>;

/// Builds environments for the configured backend. External endpoints are
/// probed once up front so that later connections failing is exceptional.
fn env_factory(cfg: &RunConfig, registry: &LayoutRegistry) -> Result<EnvFactory> {
    match &cfg.env.endpoint {
        Some(endpoint) => {
            ExternalEnv::connect(endpoint.as_str()).with_context(|| format!("environment endpoint {endpoint}"))?;
            let endpoint = endpoint.clone();
            Ok(Box::new(move || {
                Box::new(ExternalEnv::connect(endpoint.as_str()).expect("environment endpoint became unreachable"))
            }))
        }
        None => {
            let registry = Arc::new(registry.clone());
            let cap = cfg.env.step_cap;
            Ok(Box::new(move || {
                Box::new(GridHouse::with_step_cap(registry.clone(), cap))
            }))
        }
    }
}

fn make_policy(cfg: &RunConfig, params: PolicyParams) -> Box<dyn Policy> {
    match &cfg.policy.endpoint {
        Some(endpoint) => Box::new(RemotePolicy::new(endpoint.clone(), cfg.template(), cfg.policy.mode)),
        None => Box::new(SoftmaxPolicy::new(params)),
    }
}

fn make_critic(cfg: &RunConfig) -> Box<dyn Critic> {
    match &cfg.critic.endpoint {
        Some(endpoint) => Box::new(RemoteCritic::new(endpoint.clone(), cfg.template())),
        None => Box::new(cfg.critic()),
    }
}

fn load_params(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<PolicyParams> {
    match checkpoint {
        Some(p) => Ok(Checkpoint::load(p, cfg)?.params),
        None => Ok(PolicyParams::zeros()),
    }
}

fn completed_leaves(tree: &SearchTree) -> usize {
    tree.nodes
        .iter()
        .filter(|n| n.terminal && n.outcome.is_some_and(|o| o.status == OutcomeStatus::Completed))
        .count()
}

fn display(p: &Path) -> String {
    p.display().to_string()
}

/// Searches one task of the training suite family cycle and dumps the tree.
pub fn search(cfg: &RunConfig, task_seed: u64, checkpoint: Option<&Path>) -> Result<Value> {
    let registry = cfg.registry()?;
    let spec = cfg
        .specs(
            &registry,
            crate::config::SeedRange {
                start: task_seed,
                count: 1,
            },
        )?
        .remove(0);
    let policy = make_policy(cfg, load_params(cfg, checkpoint)?);
    let critic = make_critic(cfg);
    let make_env = env_factory(cfg, &registry)?;
    let mut search_cfg = cfg.search_config();
    search_cfg.seed ^= spec.seed;
    let tree = run_search(
        &spec,
        policy.as_ref(),
        critic.as_ref(),
        make_env().as_mut(),
        &search_cfg,
    )?;

    let layout = Layout::new(cfg);
    let task = task_id(&spec);
    let path = layout.tree(&task);
    let manifest = TreeManifest {
        format_version: ARTIFACT_FORMAT_VERSION,
        config_hash: cfg.hash(),
        created_at: cfg.run.created_at,
        tree_id: mctsep::datasets::RecordIds::for_tree(&tree, None).tree,
        task: task.clone(),
        nodes: tree.nodes.len(),
        completed_leaves: completed_leaves(&tree),
    };
    mctsep::datasets::write_atomic(&path, (tree.to_json() + "\n").as_bytes())?;
    write_json(&mctsep::datasets::manifest_path(&path), &manifest)?;
    tracing::info!(task = %task, nodes = manifest.nodes, completed = manifest.completed_leaves, "search finished");
    Ok(json!({
        "tree": display(&path),
        "task": task,
        "nodes": manifest.nodes,
        "completed_leaves": manifest.completed_leaves,
        "best_action": best_root_action(&tree).ok().map(|a| a.render()),
    }))
}

/// Searches every training task and writes the merged 𝓑 and 𝓟 buffers.
pub fn collect(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Value> {
    let registry = cfg.registry()?;
    let suite = cfg.specs(&registry, cfg.suite.train)?;
    let policy = make_policy(cfg, load_params(cfg, checkpoint)?);
    let critic = make_critic(cfg);
    let make_env = env_factory(cfg, &registry)?;
    let template = cfg.template();
    let search_cfg = cfg.search_config();

    let results = with_workers(cfg.run.workers, || {
        par_map(&suite, |spec| {
            let mut c = search_cfg;
            c.seed ^= spec.seed;
            let tree = run_search(spec, policy.as_ref(), critic.as_ref(), make_env().as_mut(), &c)?;
            let d = &cfg.data;
            Ok::<_, anyhow::Error>((
                extract_success(&tree, &template),
                extract_preferences(&tree, &template, d.epsilon, d.n_min, d.pairs_per_node),
            ))
        })
    });
    let mut success = Vec::new();
    let mut prefs = Vec::new();
    for (spec, r) in suite.iter().zip(results) {
        let (s, p) = r.with_context(|| task_id(spec))?;
        tracing::info!(task = %task_id(spec), trajectories = s.len(), pairs = p.len(), "episode collected");
        success.extend(s);
        prefs.extend(p);
    }
    if success.is_empty() {
        tracing::warn!("no successful trajectories across the suite; writing an empty success buffer");
    }

    let layout = Layout::new(cfg);
    let (sp, pp) = (layout.data("success.jsonl"), layout.data("preferences.jsonl"));
    let old_s: Vec<Trajectory> = if sp.exists() {
        load_dataset(&sp, cfg, false)?
    } else {
        Vec::new()
    };
    let old_p: Vec<PreferencePair> = if pp.exists() {
        load_dataset(&pp, cfg, false)?
    } else {
        Vec::new()
    };
    let cap = cfg.data.buffer_cap;
    let (success, prefs) = if cfg.data.fresh_only {
        (merge_buffers(&[], &success, cap), merge_buffers(&[], &prefs, cap))
    } else {
        (merge_buffers(&old_s, &success, cap), merge_buffers(&old_p, &prefs, cap))
    };
    let info = manifest_info(cfg);
    let ms = write_jsonl(&success, &sp, &info)?;
    let mp = write_jsonl(&prefs, &pp, &info)?;
    Ok(json!({
        "success": display(&sp),
        "preferences": display(&pp),
        "success_count": ms.count,
        "preference_count": mp.count,
        "tasks": suite.len(),
    }))
}

/// Oracle solutions for the expert seeds.
pub fn oracle_experts(cfg: &RunConfig, registry: &LayoutRegistry) -> Result<Vec<Trajectory>> {
    let specs = cfg.specs(registry, cfg.suite.expert)?;
    let template = cfg.template();
    let gamma = cfg.search.gamma;
    let out = with_workers(cfg.run.workers, || {
        par_map(&specs, |s| expert_trajectory(s, registry, gamma, &template))
    });
    let mut experts = Vec::new();
    for (spec, r) in specs.iter().zip(out) {
        match r.with_context(|| task_id(spec))? {
            Some(t) => experts.push(t),
            None => tracing::warn!(task = %task_id(spec), "task has no oracle solution; skipped"),
        }
    }
    Ok(experts)
}

/// Supervised warm-up on expert trajectories.
pub fn warmup(cfg: &RunConfig, experts: Option<&Path>, init: Option<&Path>) -> Result<Value> {
    let registry = cfg.registry()?;
    let layout = Layout::new(cfg);
    let params = load_params(cfg, init)?;
    let (data, source): (Vec<Trajectory>, PathBuf) = match experts {
        Some(p) => (load_dataset(p, cfg, true)?, p.to_path_buf()),
        None => {
            let data = oracle_experts(cfg, &registry)?;
            let path = layout.data("experts.jsonl");
            write_jsonl(&data, &path, &manifest_info(cfg))?;
            (data, path)
        }
    };
    let expert_count = data.iter().filter(|t| t.source == Source::Expert).count();
    let warm = warmup_expert(&params, &data, &cfg.train_config())?;
    let out = layout.checkpoint("warmup");
    write_json(&out, &Checkpoint::new(cfg, "warmup", None, warm))?;
    Ok(json!({ "checkpoint": display(&out), "experts": display(&source), "expert_trajectories": expert_count }))
}

/// SFT on a success buffer.
pub fn train_sft(cfg: &RunConfig, data: Option<&Path>, init: Option<&Path>) -> Result<Value> {
    let layout = Layout::new(cfg);
    let path = data
        .map(Path::to_path_buf)
        .unwrap_or_else(|| layout.data("success.jsonl"));
    let items: Vec<Trajectory> = load_dataset(&path, cfg, false)?;
    let params = load_params(cfg, init)?;
    let (p, curve) = train_phase(&params, PhaseData::Sft(&items), &cfg.train_config())?;
    let out = layout.checkpoint("sft");
    write_json(&out, &Checkpoint::new(cfg, "sft", None, p))?;
    Ok(json!({ "checkpoint": display(&out), "records": items.len(), "loss_curve": curve }))
}

/// DPO on a preference buffer against a frozen reference (the initial
/// checkpoint unless one is given).
pub fn train_dpo(cfg: &RunConfig, data: Option<&Path>, init: Option<&Path>, reference: Option<&Path>) -> Result<Value> {
    let layout = Layout::new(cfg);
    let path = data
        .map(Path::to_path_buf)
        .unwrap_or_else(|| layout.data("preferences.jsonl"));
    let items: Vec<PreferencePair> = load_dataset(&path, cfg, false)?;
    let params = load_params(cfg, init)?;
    let reference = match reference {
        Some(r) => ReferencePolicy::snapshot(&Checkpoint::load(r, cfg)?.params),
        None => ReferencePolicy::snapshot(&params),
    };
    let (p, curve) = train_phase(
        &params,
        PhaseData::Dpo {
            pairs: &items,
            reference: &reference,
        },
        &cfg.train_config(),
    )?;
    let out = layout.checkpoint("dpo");
    write_json(&out, &Checkpoint::new(cfg, "dpo", None, p))?;
    Ok(json!({ "checkpoint": display(&out), "records": items.len(), "loss_curve": curve }))
}

fn iteration_done(layout: &Layout, i: usize) -> bool {
    layout.iteration_dir(i).join("report.json").exists()
}

/// Warm-up (optional) followed by `loop.iterations` rounds of search, SFT
/// and DPO. Finished iterations are kept on disk, so an interrupted run
/// picks up after the last complete one. `stop_after` ends the command
/// early once that many iterations exist.
pub fn run_loop(cfg: &RunConfig, init: Option<&Path>, stop_after: Option<usize>) -> Result<Value> {
    if cfg.policy.endpoint.is_some() {
        return Err(ValidationError {
            field: "policy.endpoint".into(),
            message: "the loop trains the featurized policy; unset the remote endpoint".into(),
        }
        .into());
    }
    let registry = cfg.registry()?;
    let layout = Layout::new(cfg);
    let suite = cfg.specs(&registry, cfg.suite.train)?;
    let held_out = cfg.specs(&registry, cfg.suite.held_out)?;
    let make_env = env_factory(cfg, &registry)?;
    let critic = make_critic(cfg);
    let template = cfg.template();
    let train = cfg.train_config();

    let start_path = layout.root.join("loop").join("start.json");
    let start = if start_path.exists() {
        Checkpoint::load(&start_path, cfg)?
    } else {
        let mut params = load_params(cfg, init)?;
        if cfg.loop_.warmup {
            let experts = oracle_experts(cfg, &registry)?;
            write_jsonl(
                &experts,
                &layout.root.join("loop").join("experts.jsonl"),
                &manifest_info(cfg),
            )?;
            params = warmup_expert(&params, &experts, &train)?;
        }
        let ck = Checkpoint::new(cfg, if cfg.loop_.warmup { "warmup" } else { "init" }, None, params);
        write_json(&start_path, &ck)?;
        ck
    };

    let mut params = start.params;
    let mut buffers = Buffers::default();
    let mut first = 0;
    while first < cfg.loop_.iterations && iteration_done(&layout, first) {
        first += 1;
    }
    if first > 0 {
        let dir = layout.iteration_dir(first - 1);
        params = Checkpoint::load(&dir.join("checkpoint.json"), cfg)?.params;
        buffers = Buffers {
            success: load_dataset(&dir.join("success.jsonl"), cfg, false)?,
            preferences: load_dataset(&dir.join("preferences.jsonl"), cfg, false)?,
        };
        tracing::info!(resumed_after = first, "resuming loop");
    }

    let setup = IterationSetup {
        suite: &suite,
        held_out: &held_out,
        search: cfg.search_config(),
        train,
        data: cfg.data,
        skip_sft: cfg.loop_.skip_sft,
        skip_dpo: cfg.loop_.skip_dpo,
        critic: critic.as_ref(),
        make_env: make_env.as_ref(),
        template: &template,
    };
    let last = stop_after.map_or(cfg.loop_.iterations, |s| s.min(cfg.loop_.iterations));
    for i in first..last {
        let (p, b, report) = with_workers(cfg.run.workers, || run_iteration(i, &params, &buffers, &setup))?;
        let dir = layout.iteration_dir(i);
        let info = manifest_info(cfg);
        write_jsonl(&b.success, &dir.join("success.jsonl"), &info)?;
        write_jsonl(&b.preferences, &dir.join("preferences.jsonl"), &info)?;
        write_json(
            &dir.join("checkpoint.json"),
            &Checkpoint::new(cfg, "iteration", Some(i), p.clone()),
        )?;
        // Written last: its presence marks the iteration complete.
        write_json(
            &dir.join("report.json"),
            &IterationRecord {
                config_hash: cfg.hash(),
                report,
            },
        )?;
        params = p;
        buffers = b;
    }

    let mut log = String::new();
    let mut summaries = Vec::new();
    for i in (0..cfg.loop_.iterations).take_while(|&i| iteration_done(&layout, i)) {
        let path = layout.iteration_dir(i).join("report.json");
        let rec: IterationRecord = read_json(&path)?;
        crate::artifacts::check_hash(&rec.config_hash, &cfg.hash(), &path)?;
        log.push_str(&serde_json::to_string(&rec)?);
        log.push('\n');
        summaries.push(json!({
            "iteration": rec.report.iteration,
            "success_rate": rec.report.success_rate,
            "mean_steps": rec.report.mean_steps,
            "new_success": rec.report.new_success,
            "new_preferences": rec.report.new_preferences,
        }));
    }
    let log_path = layout.report("loop.jsonl");
    mctsep::datasets::write_atomic(&log_path, log.as_bytes())?;
    let done = summaries.len();
    let mut out = json!({ "iterations": summaries, "reports": display(&log_path), "start": display(&start_path) });
    if done == cfg.loop_.iterations {
        let final_path = layout.checkpoint("final");
        write_json(
            &final_path,
            &Checkpoint::new(cfg, "iteration", done.checked_sub(1), params),
        )?;
        out["checkpoint"] = json!(display(&final_path));
    }
    Ok(out)
}

/// Held-out evaluation, greedy by default or with search at every step.
pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, with_search: bool) -> Result<Value> {
    let registry = cfg.registry()?;
    let held_out = cfg.specs(&registry, cfg.suite.held_out)?;
    let ck_hash = match checkpoint {
        Some(p) => Some(Checkpoint::load(p, cfg)?.config_hash),
        None => None,
    };
    let policy = make_policy(cfg, load_params(cfg, checkpoint)?);
    let critic = make_critic(cfg);
    let make_env = env_factory(cfg, &registry)?;
    let mode = if with_search {
        EvalMode::Search {
            config: cfg.search_config(),
            critic: critic.as_ref(),
        }
    } else {
        EvalMode::Greedy
    };
    let report = with_workers(cfg.run.workers, || {
        evaluate(policy.as_ref(), &held_out, make_env.as_ref(), &mode)
    })?;
    for note in &report.notes {
        tracing::info!(note = %note, "evaluation note");
    }
    let path = Layout::new(cfg).report(&format!("eval-{}.json", mode.name()));
    let overall = report.overall.clone();
    write_json(
        &path,
        &ReportFile {
            format_version: ARTIFACT_FORMAT_VERSION,
            config_hash: cfg.hash(),
            created_at: cfg.run.created_at,
            checkpoint: ck_hash,
            report,
        },
    )?;
    Ok(json!({
        "report": display(&path),
        "mode": mode.name(),
        "episodes": overall.episodes,
        "success_rate": overall.success_rate,
        "mean_steps": overall.mean_steps,
    }))
}

/// The effective configuration as TOML, preceded by its hash.
pub fn dump_config(cfg: &RunConfig) -> String {
    format!("# config_hash = \"{}\"\n{}", cfg.hash(), cfg.to_toml())
}

/// Reads a report written by [`eval`].
pub fn read_report(path: &Path, cfg: &RunConfig) -> Result<ReportFile> {
    let r: ReportFile = read_json(path)?;
    crate::artifacts::check_hash(&r.config_hash, &cfg.hash(), path)?;
    if r.format_version != ARTIFACT_FORMAT_VERSION {
        return Err(DataError(format!("{}: report format {}", path.display(), r.format_version)).into());
    }
    Ok(r)
}
