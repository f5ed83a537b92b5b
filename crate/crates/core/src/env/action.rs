use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

use super::EnvError;

/// Action verbs understood by household environments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Verb {
    Goto,
    Open,
    Close,
    Take,
    Put,
    Clean,
    Heat,
    Cool,
    Examine,
    Use,
}

impl Verb {
    pub const ALL: [Verb; 10] = [
        Verb::Goto,
        Verb::Open,
        Verb::Close,
        Verb::Take,
        Verb::Put,
        Verb::Clean,
        Verb::Heat,
        Verb::Cool,
        Verb::Examine,
        Verb::Use,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            Verb::Goto => "goto",
            Verb::Open => "open",
            Verb::Close => "close",
            Verb::Take => "take",
            Verb::Put => "put",
            Verb::Clean => "clean",
            Verb::Heat => "heat",
            Verb::Cool => "cool",
            Verb::Examine => "examine",
            Verb::Use => "use",
        }
    }

    /// Whether the canonical form carries a receptacle argument.
    pub fn takes_receptacle(self) -> bool {
        matches!(self, Verb::Take | Verb::Put | Verb::Clean | Verb::Heat | Verb::Cool)
    }

    fn preposition(self) -> Option<&'static str> {
        match self {
            Verb::Take => Some("from"),
            Verb::Put => Some("in"),
            Verb::Clean | Verb::Heat | Verb::Cool => Some("with"),
            _ => None,
        }
    }
}

/// A structured household action.
///
/// Canonical text grammar (identifiers are single lowercase tokens):
///
/// ```text
/// go to <receptacle>        open <receptacle>        close <receptacle>
/// examine <receptacle>      use <object>
/// take <object> from <receptacle>
/// put <object> in <receptacle>
/// clean|heat|cool <object> with <receptacle>
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Action {
    pub verb: Verb,
    pub object: String,
    pub receptacle: Option<String>,
}

impl Action {
    pub fn new(verb: Verb, object: impl Into<String>, receptacle: Option<&str>) -> Self {
        Self {
            verb,
            object: object.into(),
            receptacle: receptacle.map(str::to_owned),
        }
    }

    pub fn goto(receptacle: &str) -> Self {
        Self::new(Verb::Goto, receptacle, None)
    }

    pub fn open(receptacle: &str) -> Self {
        Self::new(Verb::Open, receptacle, None)
    }

    pub fn close(receptacle: &str) -> Self {
        Self::new(Verb::Close, receptacle, None)
    }

    pub fn examine(receptacle: &str) -> Self {
        Self::new(Verb::Examine, receptacle, None)
    }

    pub fn use_object(object: &str) -> Self {
        Self::new(Verb::Use, object, None)
    }

    pub fn take(object: &str, receptacle: &str) -> Self {
        Self::new(Verb::Take, object, Some(receptacle))
    }

    pub fn put(object: &str, receptacle: &str) -> Self {
        Self::new(Verb::Put, object, Some(receptacle))
    }

    pub fn clean(object: &str, receptacle: &str) -> Self {
        Self::new(Verb::Clean, object, Some(receptacle))
    }

    pub fn heat(object: &str, receptacle: &str) -> Self {
        Self::new(Verb::Heat, object, Some(receptacle))
    }

    pub fn cool(object: &str, receptacle: &str) -> Self {
        Self::new(Verb::Cool, object, Some(receptacle))
    }

    /// Canonical text form.
    pub fn render(&self) -> String {
        self.to_string()
    }

    pub fn parse(text: &str) -> Result<Self, EnvError> {
        text.parse()
    }
}

impl fmt::Display for Action {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.verb {
            Verb::Goto => write!(f, "go to {}", self.object),
            v => {
                write!(f, "{} {}", v.as_str(), self.object)?;
                if let (Some(prep), Some(rec)) = (v.preposition(), &self.receptacle) {
                    write!(f, " {prep} {rec}")?;
                }
                Ok(())
            }
        }
    }
}

fn is_identifier(tok: &str) -> bool {
    !tok.is_empty()
        && tok
            .chars()
            .all(|c| c.is_ascii_lowercase() || c.is_ascii_digit() || c == '_')
}

impl FromStr for Action {
    type Err = EnvError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let bad = || EnvError::ActionSyntax(s.to_owned());
        let toks: Vec<&str> = s.split_whitespace().collect();
        let ident = |t: &str| {
            if is_identifier(t) {
                Ok(t.to_owned())
            } else {
                Err(bad())
            }
        };
        match toks.as_slice() {
            ["go", "to", r] => Ok(Action::new(Verb::Goto, ident(r)?, None)),
            [verb, x] => {
                let verb = match *verb {
                    "open" => Verb::Open,
                    "close" => Verb::Close,
                    "examine" => Verb::Examine,
                    "use" => Verb::Use,
                    _ => return Err(bad()),
                };
                Ok(Action::new(verb, ident(x)?, None))
            }
            [verb, o, prep, r] => {
                let verb = match *verb {
                    "take" => Verb::Take,
                    "put" => Verb::Put,
                    "clean" => Verb::Clean,
                    "heat" => Verb::Heat,
                    "cool" => Verb::Cool,
                    _ => return Err(bad()),
                };
                if verb.preposition() != Some(*prep) {
                    return Err(bad());
                }
                Ok(Action {
                    verb,
                    object: ident(o)?,
                    receptacle: Some(ident(r)?),
                })
            }
            _ => Err(bad()),
        }
    }
}

impl Serialize for Action {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(&self.render())
    }
}

impl<'de> Deserialize<'de> for Action {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let text = String::deserialize(deserializer)?;
        text.parse().map_err(serde::de::Error::custom)
    }
}

/// Orders actions by canonical text.
pub fn sort_canonical(actions: &mut [Action]) {
    actions.sort_by_cached_key(Action::render);
}
