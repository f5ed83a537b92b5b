//! Versioned layout registry for GridHouse.

use std::collections::BTreeSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::EnvError;

pub const LAYOUT_FORMAT_VERSION: u32 = 1;

const BUILTIN_LAYOUTS: &str = include_str!("../../data/layouts.json");

/// Attribute-changing role of a receptacle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Appliance {
    Clean,
    Heat,
    Cool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReceptacleDef {
    pub name: String,
    #[serde(default)]
    pub openable: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub appliance: Option<Appliance>,
}

/// A non-portable object that sits at a fixed receptacle.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FixtureDef {
    pub id: String,
    pub at: String,
    #[serde(default)]
    pub lamp: bool,
}

/// A kind of portable object and the receptacles it is usually found in.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct KindDef {
    pub kind: String,
    #[serde(default)]
    pub capabilities: Vec<Appliance>,
    pub places: Vec<String>,
}

impl KindDef {
    pub fn can(&self, appliance: Appliance) -> bool {
        self.capabilities.contains(&appliance)
    }

    pub fn is_plain(&self) -> bool {
        self.capabilities.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub id: String,
    pub receptacles: Vec<ReceptacleDef>,
    #[serde(default)]
    pub fixtures: Vec<FixtureDef>,
    pub kinds: Vec<KindDef>,
    pub goal_receptacles: Vec<String>,
    #[serde(default)]
    pub distractors: usize,
}

impl Layout {
    pub fn receptacle(&self, name: &str) -> Option<&ReceptacleDef> {
        self.receptacles.iter().find(|r| r.name == name)
    }

    pub fn receptacle_index(&self, name: &str) -> Option<usize> {
        self.receptacles.iter().position(|r| r.name == name)
    }

    pub fn kind(&self, kind: &str) -> Option<&KindDef> {
        self.kinds.iter().find(|k| k.kind == kind)
    }

    pub fn appliance(&self, appliance: Appliance) -> Option<&ReceptacleDef> {
        self.receptacles.iter().find(|r| r.appliance == Some(appliance))
    }

    pub fn lamp(&self) -> Option<&FixtureDef> {
        self.fixtures.iter().find(|f| f.lamp)
    }

    fn validate(&self) -> Result<(), EnvError> {
        let err = |msg: String| EnvError::Config(format!("layout {}: {msg}", self.id));
        let mut names = BTreeSet::new();
        for r in &self.receptacles {
            if !names.insert(r.name.as_str()) {
                return Err(err(format!("duplicate receptacle {}", r.name)));
            }
        }
        if self.receptacles.is_empty() {
            return Err(err("no receptacles".into()));
        }
        for f in &self.fixtures {
            if !names.contains(f.at.as_str()) {
                return Err(err(format!("fixture {} at unknown receptacle {}", f.id, f.at)));
            }
        }
        for k in &self.kinds {
            if k.kind.ends_with(|c: char| c.is_ascii_digit()) {
                return Err(err(format!("kind {} must not end in a digit", k.kind)));
            }
            if k.places.is_empty() {
                return Err(err(format!("kind {} has no places", k.kind)));
            }
            for p in &k.places {
                if !names.contains(p.as_str()) {
                    return Err(err(format!("kind {} placed at unknown {p}", k.kind)));
                }
            }
        }
        for g in &self.goal_receptacles {
            if !names.contains(g.as_str()) {
                return Err(err(format!("unknown goal receptacle {g}")));
            }
        }
        Ok(())
    }
}

/// The set of layouts an environment may be reset into.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutRegistry {
    pub version: u32,
    pub layouts: Vec<Layout>,
}

impl LayoutRegistry {
    pub fn builtin() -> Self {
        Self::from_json(BUILTIN_LAYOUTS).expect("built-in layout registry is valid")
    }

    pub fn from_json(text: &str) -> Result<Self, EnvError> {
        let reg: LayoutRegistry =
            serde_json::from_str(text).map_err(|e| EnvError::Config(format!("layout registry: {e}")))?;
        if reg.version != LAYOUT_FORMAT_VERSION {
            return Err(EnvError::Config(format!(
                "layout registry version {} (expected {LAYOUT_FORMAT_VERSION})",
                reg.version
            )));
        }
        for layout in &reg.layouts {
            layout.validate()?;
        }
        Ok(reg)
    }

    pub fn load(path: &Path) -> Result<Self, EnvError> {
        let text = std::fs::read_to_string(path).map_err(|e| EnvError::Config(format!("{}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn get(&self, id: &str) -> Result<&Layout, EnvError> {
        self.layouts
            .iter()
            .find(|l| l.id == id)
            .ok_or_else(|| EnvError::Config(format!("unknown layout_id {id:?}")))
    }
}
