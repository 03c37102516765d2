//! Versioned pass thresholds, shipped with the crate.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::ExperimentError;

const DEFAULT_TABLE: &str = include_str!("../thresholds.toml");

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Threshold {
    AtMost(f64),
    Below(f64),
    AtLeast(f64),
    Above(f64),
    Within([f64; 2]),
}

impl Threshold {
    /// NaN never passes.
    pub fn admits(&self, v: f64) -> bool {
        match *self {
            Threshold::AtMost(x) => v <= x,
            Threshold::Below(x) => v < x,
            Threshold::AtLeast(x) => v >= x,
            Threshold::Above(x) => v > x,
            Threshold::Within([lo, hi]) => lo <= v && v <= hi,
        }
    }
}

impl fmt::Display for Threshold {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Threshold::AtMost(x) => write!(f, "<= {x:e}"),
            Threshold::Below(x) => write!(f, "< {x:e}"),
            Threshold::AtLeast(x) => write!(f, ">= {x:e}"),
            Threshold::Above(x) => write!(f, "> {x:e}"),
            Threshold::Within([lo, hi]) => write!(f, "in [{lo}, {hi}]"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub version: u32,
    pub criteria: BTreeMap<String, Threshold>,
}

impl Thresholds {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        toml::from_str(text).map_err(|e| ExperimentError::Thresholds(e.to_string()))
    }

    pub fn builtin() -> Self {
        Self::parse(DEFAULT_TABLE).expect("shipped threshold table parses")
    }

    pub fn get(&self, name: &str) -> Result<Threshold, ExperimentError> {
        self.criteria
            .get(name)
            .copied()
            .ok_or_else(|| ExperimentError::Thresholds(format!("no threshold for criterion `{name}`")))
    }

    /// The acceptance entry a criterion belongs to: the part before the first dot.
    pub fn group(name: &str) -> &str {
        name.split('.').next().unwrap_or(name)
    }
}
