//! Scenario results: criteria, measurements, diagnostics tables and provenance.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use nsv_core::io::write_diagnostics;
use nsv_core::{HistoryMode, Trajectory};
use serde::Serialize;
use serde_json::Value;

use crate::runfile::RunFile;
use crate::thresholds::{Threshold, Thresholds};
use crate::ExperimentError;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Criterion {
    pub name: String,
    pub value: f64,
    pub threshold: Threshold,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Resolution {
    pub dim: usize,
    pub n: usize,
    pub dt: f64,
    pub intervals: usize,
    pub history_mode: HistoryMode,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Provenance {
    pub config_hash: String,
    pub seed: u64,
    pub resolution: Resolution,
    pub thresholds_version: u32,
}

impl Provenance {
    pub fn new(rf: &RunFile, seed: u64, thresholds: &Thresholds) -> Self {
        Self {
            config_hash: rf.config_hash(),
            seed,
            resolution: Resolution {
                dim: rf.domain.dim,
                n: rf.domain.n,
                dt: rf.time.dt,
                intervals: rf.history.intervals,
                history_mode: rf.history.mode,
            },
            thresholds_version: thresholds.version,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct ReportBundle {
    pub scenario: String,
    pub criteria: Vec<Criterion>,
    pub measurements: BTreeMap<String, Value>,
    /// Paths of the written diagnostics, filled by [`ReportBundle::write`].
    pub diagnostics: Vec<PathBuf>,
    pub provenance: Provenance,
    /// Rendered diagnostics CSVs, keyed by file stem.
    #[serde(skip)]
    pub tables: Vec<(String, Vec<u8>)>,
    #[serde(skip)]
    thresholds: Thresholds,
}

impl ReportBundle {
    pub fn new(scenario: &str, provenance: Provenance, thresholds: &Thresholds) -> Self {
        Self {
            scenario: scenario.to_string(),
            criteria: Vec::new(),
            measurements: BTreeMap::new(),
            diagnostics: Vec::new(),
            provenance,
            tables: Vec::new(),
            thresholds: thresholds.clone(),
        }
    }

    /// Judges `value` against the named threshold.
    pub fn criterion(&mut self, name: &str, value: f64) -> Result<bool, ExperimentError> {
        let threshold = self.thresholds.get(name)?;
        let pass = threshold.admits(value);
        self.criteria.push(Criterion {
            name: name.to_string(),
            value,
            threshold,
            pass,
        });
        Ok(pass)
    }

    pub fn measure<V: Serialize>(&mut self, key: &str, value: V) {
        let v = serde_json::to_value(value).unwrap_or(Value::Null);
        self.measurements.insert(key.to_string(), v);
    }

    pub fn table(&mut self, stem: &str, traj: &Trajectory) -> Result<(), ExperimentError> {
        let mut buf = Vec::new();
        write_diagnostics(&mut buf, traj)?;
        self.tables.push((stem.to_string(), buf));
        Ok(())
    }

    pub fn all_pass(&self) -> bool {
        self.criteria.iter().all(|c| c.pass)
    }

    /// Absorbs another bundle's criteria, measurements (prefixed) and tables.
    pub fn merge(&mut self, prefix: &str, other: ReportBundle) {
        self.criteria.extend(other.criteria);
        for (k, v) in other.measurements {
            self.measurements.insert(format!("{prefix}.{k}"), v);
        }
        for (stem, t) in other.tables {
            self.tables.push((format!("{prefix}_{stem}"), t));
        }
    }

    pub fn summary_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    /// Writes `summary.json` and the diagnostics CSVs under `dir`, as selected by `formats`.
    pub fn write(&mut self, dir: &Path, formats: &[String]) -> Result<(), ExperimentError> {
        std::fs::create_dir_all(dir)?;
        let want = |f: &str| formats.iter().any(|x| x == f);
        self.diagnostics.clear();
        if want("csv") {
            for (stem, bytes) in &self.tables {
                let path = dir.join(format!("{stem}.csv"));
                std::fs::write(&path, bytes)?;
                self.diagnostics.push(path);
            }
        }
        if want("json") {
            std::fs::write(dir.join("summary.json"), self.summary_json())?;
        }
        Ok(())
    }

    /// One line per criterion.
    pub fn render(&self) -> String {
        let mut s = String::new();
        for c in &self.criteria {
            let mark = if c.pass { "PASS" } else { "FAIL" };
            s += &format!(
                "{mark} {:<32} value {:<14.6e} threshold {}\n",
                c.name, c.value, c.threshold
            );
        }
        s
    }
}
