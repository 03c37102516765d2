//! Desk-scale experiments for the memory solver: run files, scenarios,
//! pass/fail thresholds and report bundles.

pub mod bundle;
pub mod runfile;
pub mod scenarios;
pub mod thresholds;

use std::sync::Arc;

use nsv_core::{Grid, SpectralField};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub use bundle::{Criterion, Provenance, ReportBundle};
pub use runfile::RunFile;
pub use scenarios::{run_ensemble, run_refinement, run_scenario, Scenario, SCENARIOS};
pub use thresholds::{Threshold, Thresholds};

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error("unknown scenario `{0}`; run `nsv list` for the inventory")]
    UnknownScenario(String),

    #[error("invalid run file: {0}")]
    RunFile(String),

    #[error("invalid threshold table: {0}")]
    Thresholds(String),

    #[error("invalid arguments: {0}")]
    Arguments(String),

    #[error(transparent)]
    Core(#[from] nsv_core::Error),

    #[error("scenario {scenario}: {source}")]
    Scenario {
        scenario: String,
        #[source]
        source: nsv_core::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Band-limited random solenoidal field (`|k| ≤ 4`) with energy
/// `½(‖u‖² + α‖u‖₁²)` equal to `level`.
pub fn random_velocity(grid: &Arc<Grid>, alpha: f64, level: f64, seed: u64) -> SpectralField {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut u = SpectralField::random(grid, 4.0, &mut rng);
    let e = 0.5 * (u.inner(&u, 0.0) + alpha * u.inner(&u, 1.0));
    if e > 0.0 {
        u.scale((level / e).sqrt());
    }
    u
}
