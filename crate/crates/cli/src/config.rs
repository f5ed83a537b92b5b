//! Run configuration: TOML file, `MCTSEP_SECTION__FIELD` environment
//! overrides, validation with field paths and a content hash.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use mctsep::env::{Family, LayoutRegistry, TaskSpec};
use mctsep::policy::{HeuristicCritic, RemoteMode};
use mctsep::search::{SearchConfig, SearchError};
use mctsep::state::PromptTemplate;
use mctsep::training::{DataConfig, TrainConfig, TrainError};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ValidationError;

pub const ENV_PREFIX: &str = "MCTSEP_";

/// Settings that change where and how fast a run executes but not what it
/// computes; they are left out of the config hash.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub output_dir: PathBuf,
    /// Worker threads for episode-level parallelism; 0 uses every core.
    pub workers: usize,
    /// Global seed mixed into the search and training seeds.
    pub seed: u64,
    /// Timestamp stamped into artifacts, seconds since the Unix epoch.
    pub created_at: u64,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            output_dir: PathBuf::from("runs/default"),
            workers: 0,
            seed: 0,
            created_at: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub layout: String,
    /// Extra layout file merged over the built-in layouts.
    pub layout_file: Option<PathBuf>,
    pub step_cap: u32,
    /// Address of an external environment server; in-process when unset.
    pub endpoint: Option<String>,
}

impl Default for EnvSection {
    fn default() -> Self {
        Self {
            layout: "house_s".into(),
            layout_file: None,
            step_cap: 30,
            endpoint: None,
        }
    }
}

/// A contiguous block of task seeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SeedRange {
    pub start: u64,
    pub count: u64,
}

impl SeedRange {
    pub fn range(&self) -> std::ops::Range<u64> {
        self.start..self.start.saturating_add(self.count)
    }

    fn overlaps(&self, other: &SeedRange) -> bool {
        let (a, b) = (self.range(), other.range());
        a.start < b.end && b.start < a.end
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSection {
    /// Families cycled through by seed: seed `s` gets `families[s % len]`.
    pub families: Vec<Family>,
    pub train: SeedRange,
    pub held_out: SeedRange,
    pub expert: SeedRange,
}

impl Default for SuiteSection {
    fn default() -> Self {
        Self {
            families: Family::ALL.to_vec(),
            train: SeedRange {
                start: 30_000,
                count: 20,
            },
            held_out: SeedRange {
                start: 20_000,
                count: 100,
            },
            expert: SeedRange {
                start: 10_000,
                count: 10,
            },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TemplateKind {
    TextOnly,
    MultiModal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    /// Address of a model server; the featurized policy is used when unset.
    pub endpoint: Option<String>,
    pub mode: RemoteMode,
    pub template: TemplateKind,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            endpoint: None,
            mode: RemoteMode::Sample,
            template: TemplateKind::TextOnly,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CriticSection {
    pub loop_penalty: f64,
    pub depth_weight: f64,
    /// Address of a model server scoring states; heuristic when unset.
    pub endpoint: Option<String>,
}

impl Default for CriticSection {
    fn default() -> Self {
        let h = HeuristicCritic::new(10);
        Self {
            loop_penalty: h.loop_penalty,
            depth_weight: h.depth_weight,
            endpoint: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LoopSection {
    pub iterations: usize,
    /// Warm the policy up on oracle experts before the first iteration.
    pub warmup: bool,
    pub skip_sft: bool,
    pub skip_dpo: bool,
}

impl Default for LoopSection {
    fn default() -> Self {
        Self {
            iterations: 3,
            warmup: true,
            skip_sft: false,
            skip_dpo: false,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub run: RunSection,
    pub env: EnvSection,
    pub search: SearchConfig,
    pub train: TrainConfig,
    pub data: DataConfig,
    pub suite: SuiteSection,
    pub policy: PolicySection,
    pub critic: CriticSection,
    #[serde(rename = "loop")]
    pub loop_: LoopSection,
}

fn invalid(field: impl Into<String>, message: impl Into<String>) -> ValidationError {
    ValidationError {
        field: field.into(),
        message: message.into(),
    }
}

/// Parses an override value as a TOML scalar or array, falling back to a
/// bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_owned()))
}

fn apply_override(table: &mut toml::Table, path: &[String], value: toml::Value) -> Result<(), ValidationError> {
    let (last, parents) = path.split_last().expect("non-empty path");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.clone())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| invalid(path.join("."), "override descends into a non-table value"))?;
    }
    cur.insert(last.clone(), value);
    Ok(())
}

/// Turns a deserialization failure into a validation error carrying the
/// dotted path of the offending field.
fn parse_error(e: serde_path_to_error::Error<toml::de::Error>) -> ValidationError {
    let field = e.path().to_string();
    invalid(
        if field == "." { "<config>".to_owned() } else { field },
        e.inner().message(),
    )
}

/// Recursively overlays `top` onto `base`.
fn deep_merge(base: &mut toml::Table, top: toml::Table) {
    for (k, v) in top {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => deep_merge(b, t),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

impl RunConfig {
    /// Reads `path` (or starts from defaults), applies environment overrides
    /// and validates.
    pub fn load(path: Option<&Path>, env: impl IntoIterator<Item = (String, String)>) -> Result<Self, ValidationError> {
        let mut table = toml::Table::try_from(RunConfig::default()).expect("defaults serialize");
        let file = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| invalid("<config>", format!("{}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text).map_err(|e| invalid("<config>", e.to_string()))?
            }
            None => toml::Table::new(),
        };
        deep_merge(&mut table, file);
        let mut overrides: Vec<(String, String)> = env.into_iter().filter(|(k, _)| k.starts_with(ENV_PREFIX)).collect();
        overrides.sort();
        for (key, raw) in overrides {
            let path: Vec<String> = key[ENV_PREFIX.len()..].split("__").map(str::to_lowercase).collect();
            if path.len() < 2 || path.iter().any(String::is_empty) {
                continue;
            }
            apply_override(&mut table, &path, override_value(&raw))?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(toml::Value::Table(table)).map_err(parse_error)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), ValidationError> {
        self.search.validate().map_err(|e| match e {
            SearchError::Config { field, message } => invalid(format!("search.{field}"), message),
            other => invalid("search", other.to_string()),
        })?;
        self.train.validate().map_err(|e| match e {
            TrainError::Config { field, message } => invalid(format!("train.{field}"), message),
            other => invalid("train", other.to_string()),
        })?;
        if !(self.data.epsilon.is_finite() && self.data.epsilon >= 0.0) {
            return Err(invalid("data.epsilon", "must be finite and non-negative"));
        }
        if self.data.buffer_cap == 0 {
            return Err(invalid("data.buffer_cap", "must be at least 1"));
        }
        if self.env.step_cap == 0 {
            return Err(invalid("env.step_cap", "must be at least 1"));
        }
        if self.suite.families.is_empty() {
            return Err(invalid("suite.families", "must name at least one family"));
        }
        if self.suite.families.iter().collect::<BTreeSet<_>>().len() != self.suite.families.len() {
            return Err(invalid("suite.families", "families must be distinct"));
        }
        if self.suite.held_out.overlaps(&self.suite.train) {
            return Err(invalid("suite.held_out", "overlaps the training seeds"));
        }
        if self.suite.held_out.overlaps(&self.suite.expert) {
            return Err(invalid("suite.held_out", "overlaps the expert seeds"));
        }
        for (field, v) in [
            ("critic.loop_penalty", self.critic.loop_penalty),
            ("critic.depth_weight", self.critic.depth_weight),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(invalid(field, "must be finite and non-negative"));
            }
        }
        let registry = self.registry()?;
        registry
            .get(&self.env.layout)
            .map_err(|e| invalid("env.layout", e.to_string()))?;
        Ok(())
    }

    /// Canonical JSON of everything that affects results.
    pub fn canonical_json(&self) -> String {
        let mut v = serde_json::to_value(self).expect("config serializes");
        let run = v["run"].as_object_mut().expect("run section");
        run.remove("output_dir");
        run.remove("workers");
        // serde_json maps are ordered, so this is canonical.
        serde_json::to_string(&v).expect("config serializes")
    }

    /// Hex SHA-256 of [`canonical_json`](Self::canonical_json), shortened.
    pub fn hash(&self) -> String {
        hex::encode(&Sha256::digest(self.canonical_json().as_bytes())[..12])
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes to TOML")
    }

    pub fn registry(&self) -> Result<LayoutRegistry, ValidationError> {
        let mut reg = LayoutRegistry::builtin();
        if let Some(path) = &self.env.layout_file {
            let extra = LayoutRegistry::load(path).map_err(|e| invalid("env.layout_file", e.to_string()))?;
            for layout in extra.layouts {
                reg.layouts.retain(|l| l.id != layout.id);
                reg.layouts.push(layout);
            }
        }
        Ok(reg)
    }

    pub fn search_config(&self) -> SearchConfig {
        SearchConfig {
            seed: self.search.seed ^ self.run.seed,
            ..self.search
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            seed: self.train.seed ^ self.run.seed,
            ..self.train
        }
    }

    pub fn critic(&self) -> HeuristicCritic {
        HeuristicCritic {
            d_max: self.search.d_max,
            loop_penalty: self.critic.loop_penalty,
            depth_weight: self.critic.depth_weight,
        }
    }

    pub fn template(&self) -> PromptTemplate {
        match self.policy.template {
            TemplateKind::TextOnly => PromptTemplate::text_only(),
            TemplateKind::MultiModal => PromptTemplate::multi_modal(),
        }
    }

    pub fn specs(&self, registry: &LayoutRegistry, seeds: SeedRange) -> Result<Vec<TaskSpec>, ValidationError> {
        let layout = registry
            .get(&self.env.layout)
            .map_err(|e| invalid("env.layout", e.to_string()))?;
        let fams = &self.suite.families;
        seeds
            .range()
            .map(|s| {
                TaskSpec::generate(fams[(s % fams.len() as u64) as usize], s, layout)
                    .map_err(|e| invalid("suite.families", e.to_string()))
            })
            .collect()
    }
}
