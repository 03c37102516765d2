//! Scalar functionals of a state and analyses of their time series.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::history::{self, HistoryField, KernelWeights};
use crate::integrator::{ModelConfig, State, Trajectory};
use crate::kernel::Kernel;
use crate::spectral::SpectralField;

pub const DEFAULT_EPSILON: f64 = 1e-2;

/// Every functional at one time. `phi`, `phi1`, `lambda_eps` and `lambda1`
/// are NaN for moment-form histories, where the `μ_*` pairing is unavailable.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub t: f64,
    pub e: f64,
    pub e1: f64,
    pub pi: f64,
    pub pi1: f64,
    pub phi: f64,
    pub phi1: f64,
    pub psi: f64,
    pub psi1: f64,
    pub lambda_eps: f64,
    pub lambda1: f64,
    pub norm_u_minus_theta: f64,
    pub norm_u_0: f64,
    pub norm_u_1: f64,
    pub norm_u_2: f64,
    /// `‖η‖²_M`
    pub history_sq: f64,
    /// `‖η‖²_{M¹}`
    pub history1_sq: f64,
    /// `⟨f, u⟩`
    pub forcing_work: f64,
}

impl EnergyReport {
    pub fn zero(t: f64) -> Self {
        Self {
            t,
            e: 0.0,
            e1: 0.0,
            pi: 0.0,
            pi1: 0.0,
            phi: 0.0,
            phi1: 0.0,
            psi: 0.0,
            psi1: 0.0,
            lambda_eps: 0.0,
            lambda1: 0.0,
            norm_u_minus_theta: 0.0,
            norm_u_0: 0.0,
            norm_u_1: 0.0,
            norm_u_2: 0.0,
            history_sq: 0.0,
            history1_sq: 0.0,
            forcing_work: 0.0,
        }
    }

    /// `½E ≤ Λ_ε ≤ 2E`; vacuous when `Λ_ε` is unavailable.
    pub fn lambda_brackets_energy(&self) -> bool {
        self.lambda_eps.is_nan() || (0.5 * self.e <= self.lambda_eps && self.lambda_eps <= 2.0 * self.e)
    }

    pub fn lambda1_brackets_energy(&self) -> bool {
        self.lambda1.is_nan() || (0.5 * self.e1 <= self.lambda1 && self.lambda1 <= 2.0 * self.e1)
    }
}

/// `ν = min(ακδ/32, 1)`.
pub fn nu(alpha: f64, kernel: &Kernel) -> f64 {
    (alpha * kernel.total_mass() * kernel.dafermos_rate() / 32.0).min(1.0)
}

/// `ν₁ = min(ακδ/72, 1)`.
pub fn nu1(alpha: f64, kernel: &Kernel) -> f64 {
    (alpha * kernel.total_mass() * kernel.dafermos_rate() / 72.0).min(1.0)
}

/// Evaluates reports for one configuration, caching the lag weights.
#[derive(Debug, Clone)]
pub struct EnergyMeter<'a> {
    cfg: &'a ModelConfig,
    eps: f64,
    weights: Option<KernelWeights>,
}

impl<'a> EnergyMeter<'a> {
    pub fn new(cfg: &'a ModelConfig, eps: f64) -> Self {
        Self {
            cfg,
            eps,
            weights: None,
        }
    }

    fn weights_for(&mut self, eta: &HistoryField) -> Option<&KernelWeights> {
        let lags = eta.lags()?;
        if self.weights.as_ref().map_or(true, |w| w.mu.len() != lags.len()) {
            self.weights = Some(KernelWeights::new(&self.cfg.kernel, lags));
        }
        self.weights.as_ref()
    }

    /// Report for a velocity alone (no memory), as in the instantaneous limit.
    pub fn report_velocity(&self, u: &SpectralField, t: f64) -> EnergyReport {
        let cfg = self.cfg;
        let n0 = u.inner(u, 0.0);
        let n1 = u.inner(u, 1.0);
        let n2 = u.inner(u, 2.0);
        let nmt = u.inner(u, -cfg.theta);
        let psi = 2.0 * cfg.beta * nmt;
        let psi1 = cfg.beta * u.inner(u, 1.0 - cfg.theta);
        let e = 0.5 * (n0 + cfg.alpha * n1);
        let e1 = 0.5 * (cfg.alpha * n2 + n1);
        EnergyReport {
            t,
            e,
            e1,
            pi: 0.0,
            pi1: 0.0,
            phi: 0.0,
            phi1: 0.0,
            psi,
            psi1,
            lambda_eps: e + self.eps * self.eps * psi,
            lambda1: e1 + self.eps * self.eps * psi1,
            norm_u_minus_theta: nmt.sqrt(),
            norm_u_0: n0.sqrt(),
            norm_u_1: n1.sqrt(),
            norm_u_2: n2.sqrt(),
            history_sq: 0.0,
            history1_sq: 0.0,
            forcing_work: cfg.forcing.inner(u, 0.0),
        }
    }

    pub fn report(&mut self, state: &State) -> Result<EnergyReport> {
        let cfg = self.cfg;
        let kernel = &cfg.kernel;
        let eps = self.eps;
        let mut r = self.report_velocity(&state.u, state.t);
        let w = self.weights_for(&state.eta).cloned();
        let w = w.as_ref();
        r.history_sq = history::history_norm_sq(&state.eta, kernel, 0, w)?;
        r.history1_sq = history::history_norm_sq(&state.eta, kernel, 1, w)?;
        r.pi = history::pi_with_weights(&state.eta, kernel, 0, w)?;
        r.pi1 = history::pi_with_weights(&state.eta, kernel, 1, w)?;
        r.e += 0.5 * r.history_sq;
        r.e1 += 0.5 * r.history1_sq;
        let kappa = kernel.total_mass();
        match (
            history::split_pairing(&state.eta, &state.u, kernel, 0, w)?,
            history::split_pairing(&state.eta, &state.u, kernel, 1, w)?,
        ) {
            (Some(p0), Some(p1)) => {
                r.phi = -4.0 / kappa * p0;
                r.phi1 = -6.0 / kappa * p1;
                r.lambda_eps = r.e + nu(cfg.alpha, kernel) * eps * r.phi + eps * eps * r.psi;
                r.lambda1 = r.e1 + nu1(cfg.alpha, kernel) * eps * r.phi1 + eps * eps * r.psi1;
            }
            _ => {
                r.phi = f64::NAN;
                r.phi1 = f64::NAN;
                r.lambda_eps = f64::NAN;
                r.lambda1 = f64::NAN;
            }
        }
        Ok(r)
    }
}

pub fn report(state: &State, cfg: &ModelConfig, eps: f64) -> Result<EnergyReport> {
    EnergyMeter::new(cfg, eps).report(state)
}

/// `‖U‖²_H = ‖u‖² + α‖u‖₁² + ‖η‖²_M`.
pub fn h_norm_sq(r: &EnergyReport, alpha: f64) -> f64 {
    r.norm_u_0.powi(2) + alpha * r.norm_u_1.powi(2) + r.history_sq
}

/// `‖U‖²_{H¹} = α‖u‖₂² + ‖u‖₁² + ‖η‖²_{M¹}`.
pub fn h1_norm_sq(r: &EnergyReport, alpha: f64) -> f64 {
    alpha * r.norm_u_2.powi(2) + r.norm_u_1.powi(2) + r.history1_sq
}

/// Per-step residual of `dE/dt + β‖u‖²_{-θ} + Π - ⟨f,u⟩ = 0`, midpoint-averaged.
pub fn step_residual(a: &EnergyReport, b: &EnergyReport) -> f64 {
    let dt = b.t - a.t;
    (b.e - a.e) / dt + 0.25 * (a.psi + b.psi) + 0.5 * (a.pi + b.pi) - 0.5 * (a.forcing_work + b.forcing_work)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BalanceResidual {
    pub series: Vec<f64>,
    pub max_abs: f64,
}

pub fn balance_residual(traj: &Trajectory) -> Result<BalanceResidual> {
    if traj.stride != 1 {
        return Err(Error::Precondition(format!(
            "balance residual needs a report every step, stride is {}",
            traj.stride
        )));
    }
    let series: Vec<f64> = traj.reports.windows(2).map(|w| step_residual(&w[0], &w[1])).collect();
    let max_abs = series.iter().fold(0.0_f64, |m, r| m.max(r.abs()));
    Ok(BalanceResidual { series, max_abs })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    pub omega: f64,
    pub r2: f64,
    pub intercept: f64,
    pub samples: usize,
}

/// Least-squares fit of `log E = c - ω t` over `window`.
pub fn fit_decay(times: &[f64], values: &[f64], window: (f64, f64)) -> Result<DecayFit> {
    let pts: Vec<(f64, f64)> = times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= window.0 && **t <= window.1)
        .map(|(t, v)| (*t, *v))
        .collect();
    if pts.len() < 2 {
        return Err(Error::Fit(format!(
            "fewer than two samples in [{}, {}]",
            window.0, window.1
        )));
    }
    if let Some((t, v)) = pts.iter().find(|(_, v)| !(*v > 0.0)) {
        return Err(Error::Fit(format!(
            "nonpositive value {v} at t = {t}; shrink the window"
        )));
    }
    let n = pts.len() as f64;
    let tm = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let ym = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut stt, mut sty, mut syy) = (0.0, 0.0, 0.0);
    for (t, v) in &pts {
        let (dt, dy) = (t - tm, v.ln() - ym);
        stt += dt * dt;
        sty += dt * dy;
        syy += dy * dy;
    }
    let slope = sty / stt;
    let r2 = if syy == 0.0 { 1.0 } else { sty * sty / (stt * syy) };
    Ok(DecayFit {
        omega: -slope,
        r2,
        intercept: ym - slope * tm,
        samples: pts.len(),
    })
}

/// Running `Σ dt ‖(u_{n+1} - u_n)/dt‖₁²` at the output times.
pub fn dtu_budget(traj: &Trajectory) -> Vec<f64> {
    traj.dtu_cumulative.clone()
}

/// Largest candidate `ε` for which every state satisfies `½E ≤ Λ_ε ≤ 2E`.
pub fn eps_max(states: &[State], cfg: &ModelConfig, candidates: &[f64]) -> Result<Option<f64>> {
    let mut sorted = candidates.to_vec();
    sorted.sort_by(|a, b| b.total_cmp(a));
    for eps in sorted {
        let mut meter = EnergyMeter::new(cfg, eps);
        let mut ok = true;
        for s in states {
            let r = meter.report(s)?;
            if r.lambda_eps.is_nan() {
                return Err(Error::UnsupportedMode("Λ_ε needs a grid history".into()));
            }
            if !r.lambda_brackets_energy() {
                ok = false;
                break;
            }
        }
        if ok {
            return Ok(Some(eps));
        }
    }
    Ok(None)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_exponential_fit() {
        let t: Vec<f64> = (0..200).map(|i| i as f64 * 0.1).collect();
        let e: Vec<f64> = t.iter().map(|t| 3.0 * (-0.7 * t).exp()).collect();
        let f = fit_decay(&t, &e, (0.0, 20.0)).unwrap();
        assert!((f.omega - 0.7).abs() < 1e-12);
        assert!((f.r2 - 1.0).abs() < 1e-12);
    }

    #[test]
    fn oscillating_prefactor_fit() {
        let t: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.01).collect();
        let e: Vec<f64> = t.iter().map(|t| (-t).exp() * (2.0 + t.cos())).collect();
        let f = fit_decay(&t, &e, (0.0, 20.0)).unwrap();
        assert!(f.omega >= 0.9 && f.omega <= 1.1, "{}", f.omega);
    }

    #[test]
    fn constant_series_has_zero_rate() {
        let t = [0.0, 1.0, 2.0];
        let f = fit_decay(&t, &[2.0; 3], (0.0, 2.0)).unwrap();
        assert_eq!(f.omega, 0.0);
    }

    #[test]
    fn nonpositive_values_fail() {
        let t = [0.0, 1.0, 2.0];
        assert!(matches!(
            fit_decay(&t, &[1.0, 0.0, 1.0], (0.0, 2.0)),
            Err(Error::Fit(_))
        ));
        assert!(matches!(
            fit_decay(&t, &[1.0, 0.5, 0.2], (5.0, 6.0)),
            Err(Error::Fit(_))
        ));
    }

    #[test]
    fn rate_constants() {
        let k = Kernel::single_exponential(1.0).unwrap();
        assert!((nu(0.1, &k) - 0.1 / 32.0).abs() < 1e-12);
        assert!((nu1(0.1, &k) - 0.1 / 72.0).abs() < 1e-12);
        assert_eq!(nu(1e4, &k), 1.0);
    }
}
