//! Run files: one TOML document per experiment.

use std::path::{Path, PathBuf};

use nsv_core::history::HistoryMode;
use nsv_core::integrator::HistorySettings;
use nsv_core::kernel::{ExpTerm, Kernel, KernelShape, Table};
use nsv_core::spectral::{leray_project, Grid, SpectralField};
use nsv_core::ModelConfig;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::ExperimentError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunFile {
    pub domain: Domain,
    #[serde(default)]
    pub model: Model,
    pub kernel: KernelSection,
    #[serde(default)]
    pub damping: Damping,
    #[serde(default)]
    pub forcing: Forcing,
    #[serde(default)]
    pub time: Time,
    #[serde(default)]
    pub history: HistorySection,
    pub experiment: Experiment,
    #[serde(default)]
    pub output: Output,
    /// Directory the file was loaded from; relative table paths resolve against it.
    #[serde(skip)]
    pub base_dir: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Domain {
    pub dim: usize,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Model {
    pub alpha: f64,
    pub varrho: f64,
}

impl Default for Model {
    fn default() -> Self {
        Self {
            alpha: 0.1,
            varrho: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KernelVariant {
    ExponentialSum,
    Tabulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSection {
    pub variant: KernelVariant,
    /// `[amplitude, rate]` pairs for exponential sums.
    #[serde(default)]
    pub coefficients: Vec<[f64; 2]>,
    /// Two-column CSV `s, mu` for tabulated kernels.
    #[serde(default)]
    pub table: Option<PathBuf>,
    #[serde(default = "one")]
    pub epsilon: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Damping {
    pub beta: f64,
    pub theta: f64,
}

impl Default for Damping {
    fn default() -> Self {
        Self { beta: 0.5, theta: 0.0 }
    }
}

/// One forced wavevector; the conjugate partner is added automatically.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForcedMode {
    pub k: Vec<i32>,
    pub re: Vec<f64>,
    #[serde(default)]
    pub im: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Forcing {
    pub zero: bool,
    pub modes: Vec<ForcedMode>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Time {
    pub dt: f64,
    pub t_end: f64,
    pub stride: usize,
}

impl Default for Time {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_end: 20.0,
            stride: 10,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HistorySection {
    pub mode: HistoryMode,
    #[serde(rename = "M")]
    pub intervals: usize,
    pub s_max_factor: f64,
}

impl Default for HistorySection {
    fn default() -> Self {
        let d = HistorySettings::default();
        Self {
            mode: d.mode,
            intervals: d.intervals,
            s_max_factor: d.s_max_factor,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Experiment {
    pub name: String,
    #[serde(default)]
    pub parameters: toml::Table,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Output {
    pub directory: PathBuf,
    pub formats: Vec<String>,
}

impl Default for Output {
    fn default() -> Self {
        Self {
            directory: PathBuf::from("out"),
            formats: vec!["csv".into(), "json".into()],
        }
    }
}

impl RunFile {
    pub fn parse(text: &str) -> Result<Self, ExperimentError> {
        let rf: Self = toml::from_str(text).map_err(|e| ExperimentError::RunFile(e.to_string()))?;
        rf.check()?;
        Ok(rf)
    }

    pub fn load(path: &Path) -> Result<Self, ExperimentError> {
        let text =
            std::fs::read_to_string(path).map_err(|e| ExperimentError::RunFile(format!("{}: {e}", path.display())))?;
        let mut rf = Self::parse(&text).map_err(|e| ExperimentError::RunFile(format!("{}: {e}", path.display())))?;
        rf.base_dir = path.parent().map(Path::to_path_buf);
        Ok(rf)
    }

    fn check(&self) -> Result<(), ExperimentError> {
        let bad = |m: String| Err(ExperimentError::RunFile(m));
        match self.kernel.variant {
            KernelVariant::ExponentialSum if self.kernel.coefficients.is_empty() => {
                return bad("kernel.coefficients must be given for an exponential sum".into())
            }
            KernelVariant::Tabulated if self.kernel.table.is_none() => {
                return bad("kernel.table must be given for a tabulated kernel".into())
            }
            _ => {}
        }
        if self.forcing.zero && !self.forcing.modes.is_empty() {
            return bad("forcing.zero conflicts with forcing.modes".into());
        }
        for (i, m) in self.forcing.modes.iter().enumerate() {
            let d = self.domain.dim;
            if m.k.len() != d || m.re.len() != d || !(m.im.is_empty() || m.im.len() == d) {
                return bad(format!("forcing.modes[{i}]: k, re and im need {d} entries"));
            }
        }
        if let Some(f) = self
            .output
            .formats
            .iter()
            .find(|f| !matches!(f.as_str(), "csv" | "json"))
        {
            return bad(format!("output.formats: unknown format `{f}`; expected csv or json"));
        }
        Ok(())
    }

    pub fn grid(&self) -> Result<std::sync::Arc<Grid>, ExperimentError> {
        Ok(Grid::new(self.domain.dim, self.domain.n)?)
    }

    pub fn kernel(&self) -> Result<Kernel, ExperimentError> {
        let shape = match self.kernel.variant {
            KernelVariant::ExponentialSum => KernelShape::ExponentialSum {
                terms: self
                    .kernel
                    .coefficients
                    .iter()
                    .map(|[c, d]| ExpTerm::new(*c, *d))
                    .collect(),
            },
            KernelVariant::Tabulated => {
                let rel = self.kernel.table.as_ref().expect("checked at parse");
                let path = match &self.base_dir {
                    Some(base) if rel.is_relative() => base.join(rel),
                    _ => rel.clone(),
                };
                KernelShape::Tabulated {
                    table: Table::from_csv(&path)?,
                }
            }
        };
        Ok(Kernel::from_shape(shape, self.kernel.epsilon)?)
    }

    /// Forcing field, projected and symmetrized.
    pub fn forcing_field(&self, grid: &std::sync::Arc<Grid>) -> Result<SpectralField, ExperimentError> {
        let mut f = SpectralField::zeros(grid);
        for m in &self.forcing.modes {
            let mut k = [0; 3];
            let mut a = [Complex64::default(); 3];
            for c in 0..m.k.len() {
                k[c] = m.k[c];
                a[c] = Complex64::new(m.re[c], m.im.get(c).copied().unwrap_or(0.0));
            }
            f.add_mode(k, a)?;
        }
        Ok(leray_project(f))
    }

    pub fn model_config(&self) -> Result<ModelConfig, ExperimentError> {
        let grid = self.grid()?;
        let mut cfg = ModelConfig::new(&grid, self.kernel()?);
        cfg.alpha = self.model.alpha;
        cfg.varrho = self.model.varrho;
        cfg.beta = self.damping.beta;
        cfg.theta = self.damping.theta;
        cfg.forcing = self.forcing_field(&grid)?;
        cfg.dt = self.time.dt;
        cfg.t_end = self.time.t_end;
        cfg.stride = self.time.stride;
        cfg.history = HistorySettings {
            mode: self.history.mode,
            intervals: self.history.intervals,
            s_max_factor: self.history.s_max_factor,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Scenario parameters decoded into `T`; absent keys take `T`'s defaults.
    pub fn parameters<T: serde::de::DeserializeOwned>(&self) -> Result<T, ExperimentError> {
        toml::Value::Table(self.experiment.parameters.clone())
            .try_into()
            .map_err(|e| ExperimentError::RunFile(format!("experiment.parameters: {e}")))
    }

    /// SHA-256 of the canonical serialization.
    pub fn config_hash(&self) -> String {
        let canonical = serde_json::to_vec(self).expect("run file serializes");
        let digest = Sha256::digest(&canonical);
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }
}
