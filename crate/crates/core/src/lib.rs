//! Spectral Galerkin solver for the Navier–Stokes–Voigt equations with fading
//! memory and generalized Ekman damping on a periodic box, together with the
//! energy functionals used to study its long-time behaviour.

pub mod energy;
pub mod error;
pub mod history;
pub mod integrator;
pub mod io;
pub mod kernel;
pub mod quad;
pub mod spectral;

pub use energy::{EnergyMeter, EnergyReport};
pub use error::{Error, Result};
pub use history::{HistoryField, HistoryMode, InitialHistory, LagGrid, VelocityPath};
pub use integrator::{ModelConfig, SolveOptions, State, Stepper, Trajectory};
pub use kernel::{ExpTerm, Kernel, KernelShape, Table};
pub use spectral::{Grid, SpectralField};
