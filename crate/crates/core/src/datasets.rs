//! Success trajectories and step-level preference pairs extracted from
//! search trees, and their JSONL persistence.

use std::collections::HashSet;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::env::{Action, OutcomeStatus, TaskSpec};
use crate::search::SearchTree;
use crate::state::{AgentState, PromptTemplate};

pub const DATASET_FORMAT_VERSION: u32 = 1;
pub const DEFAULT_EPSILON: f64 = 0.1;
pub const DEFAULT_N_MIN: u64 = 2;
pub const DEFAULT_PAIRS_PER_NODE: usize = 6;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("{path}: format {found} (expected {expected})")]
    Format {
        path: PathBuf,
        found: String,
        expected: String,
    },
    #[error("manifest mismatch: {0}")]
    Manifest(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Expert,
    Search,
}

/// Where a record came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RecordIds {
    pub task: String,
    pub tree: String,
    pub node: Option<usize>,
}

impl RecordIds {
    pub fn for_tree(tree: &SearchTree, node: Option<usize>) -> Self {
        let task = tree.spec.as_ref().map(task_id).unwrap_or_else(|| "unknown".into());
        Self {
            tree: format!("{task}/{}", tree.root().key),
            task,
            node,
        }
    }
}

/// Stable identifier of a task: `layout/family/seed`.
pub fn task_id(spec: &TaskSpec) -> String {
    format!("{}/{}/{}", spec.layout_id, spec.family, spec.seed)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryStep {
    /// Rendered prompt of the state the action was taken from.
    pub context: String,
    pub state: AgentState,
    pub candidates: Vec<Action>,
    pub action: Action,
    /// Summary of the observation the action produced.
    pub summary: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub instruction: String,
    pub spec: Option<TaskSpec>,
    pub steps: Vec<TrajectoryStep>,
    pub reward: f64,
    pub source: Source,
    pub ids: RecordIds,
}

impl Trajectory {
    pub fn actions(&self) -> Vec<Action> {
        self.steps.iter().map(|s| s.action.clone()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PreferencePair {
    pub context: String,
    pub state: AgentState,
    pub candidates: Vec<Action>,
    pub winner: Action,
    pub loser: Action,
    pub q_w: f64,
    pub q_l: f64,
    pub n_w: u64,
    pub n_l: u64,
    pub ids: RecordIds,
}

/// A JSONL record type.
pub trait Record: Serialize + DeserializeOwned {
    const KIND: &'static str;
    /// Identity used for de-duplication when merging buffers.
    fn dedup_key(&self) -> String;
}

fn digest(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(&h.finalize()[..16])
}

impl Record for Trajectory {
    const KIND: &'static str = "trajectory";

    fn dedup_key(&self) -> String {
        let actions: Vec<String> = self.steps.iter().map(|s| s.action.render()).collect();
        digest(&[&self.ids.task, &self.instruction, &actions.join("\n")])
    }
}

impl Record for PreferencePair {
    const KIND: &'static str = "preference";

    fn dedup_key(&self) -> String {
        digest(&[
            &self.ids.task,
            &self.context,
            &self.winner.render(),
            &self.loser.render(),
        ])
    }
}

/// Every completed root-to-terminal path, in node order, deduplicated by
/// action sequence.
pub fn extract_success(tree: &SearchTree, template: &PromptTemplate) -> Vec<Trajectory> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for node in &tree.nodes {
        let completed = node.terminal && node.outcome.is_some_and(|o| o.status == OutcomeStatus::Completed);
        if !completed {
            continue;
        }
        let path = tree.path_to(node.id);
        if path.is_empty() {
            continue;
        }
        let steps: Vec<TrajectoryStep> = path
            .iter()
            .map(|&(n, e)| {
                let from = tree.node(n);
                let child = tree.node(from.edges[e].child.expect("path edges have children"));
                TrajectoryStep {
                    context: template
                        .render(&from.state, &from.candidates)
                        .expect("built-in templates bind every placeholder"),
                    state: from.state.clone(),
                    candidates: from.candidates.clone(),
                    action: from.edges[e].action.clone(),
                    summary: child.state.observation.text.clone(),
                }
            })
            .collect();
        let traj = Trajectory {
            instruction: tree.root().state.instruction.clone(),
            spec: tree.spec.clone(),
            steps,
            reward: 1.0,
            source: Source::Search,
            ids: RecordIds::for_tree(tree, Some(node.id)),
        };
        if seen.insert(traj.dedup_key()) {
            out.push(traj);
        }
    }
    out
}

/// Ordered pairs `(w, l)` of sibling edges with `q_w - q_l > epsilon` and
/// both visit counts at least `n_min`. At most `per_node_cap` pairs per node,
/// largest margin first, then by edge indices.
pub fn extract_preferences(
    tree: &SearchTree,
    template: &PromptTemplate,
    epsilon: f64,
    n_min: u64,
    per_node_cap: usize,
) -> Vec<PreferencePair> {
    let mut out = Vec::new();
    for node in &tree.nodes {
        if node.edges.len() < 2 {
            continue;
        }
        let mut pairs = Vec::new();
        for (i, w) in node.edges.iter().enumerate() {
            for (j, l) in node.edges.iter().enumerate() {
                if i != j && w.q - l.q > epsilon && w.visits >= n_min && l.visits >= n_min {
                    pairs.push((i, j));
                }
            }
        }
        let margin = |&(i, j): &(usize, usize)| node.edges[i].q - node.edges[j].q;
        pairs.sort_by(|a, b| margin(b).total_cmp(&margin(a)).then(a.cmp(b)));
        pairs.truncate(per_node_cap);
        if pairs.is_empty() {
            continue;
        }
        let context = template
            .render(&node.state, &node.candidates)
            .expect("built-in templates bind every placeholder");
        for (i, j) in pairs {
            let (w, l) = (&node.edges[i], &node.edges[j]);
            out.push(PreferencePair {
                context: context.clone(),
                state: node.state.clone(),
                candidates: node.candidates.clone(),
                winner: w.action.clone(),
                loser: l.action.clone(),
                q_w: w.q,
                q_l: l.q,
                n_w: w.visits,
                n_l: l.visits,
                ids: RecordIds::for_tree(tree, Some(node.id)),
            });
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
}

/// Metadata stored next to every dataset file as `<file>.manifest.json`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub kind: String,
    pub format_version: u32,
    pub count: usize,
    pub config_hash: String,
    pub tree_ids: Vec<String>,
    /// Seconds since the Unix epoch, taken from the run configuration so
    /// repeated runs stay byte-identical.
    pub created_at: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ManifestInfo {
    pub config_hash: String,
    pub created_at: u64,
}

pub fn manifest_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".manifest.json");
    path.with_file_name(name)
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Writes via a temporary sibling and renames into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), DatasetError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
    }
    let mut tmp_name = path.file_name().unwrap_or_default().to_os_string();
    tmp_name.push(".tmp");
    let tmp = path.with_file_name(tmp_name);
    let mut f = fs::File::create(&tmp).map_err(io_err(&tmp))?;
    f.write_all(bytes).map_err(io_err(&tmp))?;
    f.sync_all().map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

/// Serializes records: a header line, then one JSON object per line.
pub fn to_jsonl<T: Record>(items: &[T]) -> String {
    let header = Header {
        format: T::KIND.into(),
        version: DATASET_FORMAT_VERSION,
    };
    let mut out = serde_json::to_string(&header).expect("header serializes");
    out.push('\n');
    for item in items {
        out.push_str(&serde_json::to_string(item).expect("record serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Record>(items: &[T], path: &Path, info: &ManifestInfo) -> Result<DatasetManifest, DatasetError> {
    write_atomic(path, to_jsonl(items).as_bytes())?;
    let tree_ids = {
        let mut ids: Vec<String> = items
            .iter()
            .filter_map(|i| serde_json::to_value(i).ok())
            .filter_map(|v| v.pointer("/ids/tree").and_then(|t| t.as_str()).map(str::to_owned))
            .collect();
        ids.sort();
        ids.dedup();
        ids
    };
    let manifest = DatasetManifest {
        kind: T::KIND.into(),
        format_version: DATASET_FORMAT_VERSION,
        count: items.len(),
        config_hash: info.config_hash.clone(),
        tree_ids,
        created_at: info.created_at,
    };
    let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes") + "\n";
    write_atomic(&manifest_path(path), text.as_bytes())?;
    Ok(manifest)
}

pub fn parse_jsonl<T: Record>(text: &str, path: &Path) -> Result<Vec<T>, DatasetError> {
    let parse_err = |line: usize, message: String| DatasetError::Parse {
        path: path.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.split_inclusive('\n').enumerate();
    let Some((_, first)) = lines.next() else {
        return Err(parse_err(1, "missing header line".into()));
    };
    let header: Header = serde_json::from_str(first.trim_end()).map_err(|e| parse_err(1, e.to_string()))?;
    if header.format != T::KIND || header.version != DATASET_FORMAT_VERSION {
        return Err(DatasetError::Format {
            path: path.to_path_buf(),
            found: format!("{} v{}", header.format, header.version),
            expected: format!("{} v{}", T::KIND, DATASET_FORMAT_VERSION),
        });
    }
    let mut items = Vec::new();
    for (i, line) in lines {
        let n = i + 1;
        if !line.ends_with('\n') {
            return Err(parse_err(n, "truncated line (no trailing newline)".into()));
        }
        let body = line.trim_end();
        if body.is_empty() {
            continue;
        }
        items.push(serde_json::from_str(body).map_err(|e| parse_err(n, e.to_string()))?);
    }
    Ok(items)
}

pub fn read_jsonl<T: Record>(path: &Path) -> Result<Vec<T>, DatasetError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    parse_jsonl(&text, path)
}

pub fn read_manifest(path: &Path) -> Result<DatasetManifest, DatasetError> {
    let mpath = manifest_path(path);
    let text = fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    serde_json::from_str(&text).map_err(|e| DatasetError::Parse {
        path: mpath,
        line: e.line(),
        message: e.to_string(),
    })
}

/// Newest-first union of `new` and `existing`, de-duplicated, keeping at
/// most `cap` records.
pub fn merge_buffers<T: Record + Clone>(existing: &[T], new: &[T], cap: usize) -> Vec<T> {
    let mut seen = HashSet::new();
    new.iter()
        .chain(existing)
        .filter(|item| seen.insert(item.dedup_key()))
        .take(cap)
        .cloned()
        .collect()
}
