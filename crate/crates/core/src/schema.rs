use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Column family tag carried by every feature.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FeatureGroup {
    Spectral,
    Timbral,
    Harmonic,
    Rhythmic,
    Tempogram,
    Meta,
    Engineered,
    Embedding,
}

impl FeatureGroup {
    pub const ALL: [FeatureGroup; 8] = [
        FeatureGroup::Spectral,
        FeatureGroup::Timbral,
        FeatureGroup::Harmonic,
        FeatureGroup::Rhythmic,
        FeatureGroup::Tempogram,
        FeatureGroup::Meta,
        FeatureGroup::Engineered,
        FeatureGroup::Embedding,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FeatureGroup::Spectral => "spectral",
            FeatureGroup::Timbral => "timbral",
            FeatureGroup::Harmonic => "harmonic",
            FeatureGroup::Rhythmic => "rhythmic",
            FeatureGroup::Tempogram => "tempogram",
            FeatureGroup::Meta => "meta",
            FeatureGroup::Engineered => "engineered",
            FeatureGroup::Embedding => "embedding",
        }
    }
}

impl fmt::Display for FeatureGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FeatureGroup {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FeatureGroup::ALL
            .into_iter()
            .find(|g| g.as_str() == s.trim())
            .ok_or_else(|| Error::Schema(format!("unknown group tag `{s}`")))
    }
}

/// Named, group-tagged feature values for one track.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct FeatureVector {
    pub values: Vec<f64>,
    pub names: Vec<String>,
    pub groups: Vec<FeatureGroup>,
}

impl FeatureVector {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, group: FeatureGroup, value: f64) {
        self.names.push(name.into());
        self.groups.push(group);
        self.values.push(value);
    }

    pub fn extend(&mut self, other: FeatureVector) {
        self.values.extend(other.values);
        self.names.extend(other.names);
        self.groups.extend(other.groups);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn get(&self, name: &str) -> Option<f64> {
        self.names.iter().position(|n| n == name).map(|i| self.values[i])
    }

    /// Checks equal lengths, finite values and unique names.
    pub fn validate(&self) -> Result<()> {
        if self.values.len() != self.names.len() || self.names.len() != self.groups.len() {
            return Err(Error::Schema("feature vector fields have different lengths".into()));
        }
        let mut seen = HashSet::new();
        for (name, v) in self.names.iter().zip(&self.values) {
            if !seen.insert(name.as_str()) {
                return Err(Error::Schema(format!("duplicate feature name `{name}`")));
            }
            if !v.is_finite() {
                return Err(Error::Schema(format!("feature `{name}` is not finite")));
            }
        }
        Ok(())
    }
}
