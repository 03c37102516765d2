//! Time integration of the velocity/history system.
//!
//! Each step treats `(I + αA)∂_t u`, the memory force and the damping by
//! Crank–Nicolson (all diagonal per mode) and the advection `B` by Heun's
//! two-stage rule. The memory force at the new level is linear in the step's
//! mean velocity `ū`, so the implicit solve stays diagonal:
//!
//! `u'[(1+αλ)/dt + λK/4 + βλ^{-θ}/2] = u[(1+αλ)/dt - λK/4 - βλ^{-θ}/2] - ½λ(M^n + M_S) - N + f`
//!
//! with `M^n` the memory moment now, `M_S` the moment of the shifted history
//! and `K` the gain of the source term.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::energy::{self, EnergyMeter, EnergyReport};
use crate::error::{Error, Result};
use crate::history::{HistoryField, HistoryMode, LagGrid, TransportPlan, VelocityPath};
use crate::kernel::Kernel;
use crate::spectral::{bilinear_b, project_in_place, Grid, SpectralField};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HistorySettings {
    pub mode: HistoryMode,
    /// Number of lag intervals `M`.
    pub intervals: usize,
    /// `S_max = s_max_factor / δ`.
    pub s_max_factor: f64,
}

impl Default for HistorySettings {
    fn default() -> Self {
        Self {
            mode: HistoryMode::Grid,
            intervals: 256,
            s_max_factor: 40.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ModelConfig {
    pub alpha: f64,
    pub beta: f64,
    pub theta: f64,
    pub kernel: Kernel,
    /// Constant-in-time forcing; its grid is the simulation grid.
    pub forcing: SpectralField,
    /// Regularity exponent at which the forcing norm is reported.
    pub varrho: f64,
    pub dt: f64,
    pub t_end: f64,
    /// Steps between reports.
    pub stride: usize,
    pub history: HistorySettings,
    /// `ε` of the reported `Λ_ε`.
    pub epsilon: f64,
}

impl ModelConfig {
    pub fn new(grid: &Arc<Grid>, kernel: Kernel) -> Self {
        Self {
            alpha: 0.1,
            beta: 0.5,
            theta: 0.0,
            kernel,
            forcing: SpectralField::zeros(grid),
            varrho: 0.0,
            dt: 1e-3,
            t_end: 20.0,
            stride: 10,
            history: HistorySettings::default(),
            epsilon: energy::DEFAULT_EPSILON,
        }
    }

    pub fn grid(&self) -> &Arc<Grid> {
        self.forcing.grid()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::Domain(what.to_string()));
        if !(self.alpha > 0.0) {
            return bad("alpha must be positive");
        }
        if !(self.beta >= 0.0) {
            return bad("beta must be nonnegative");
        }
        if !(self.theta >= 0.0) {
            return bad("theta must be nonnegative");
        }
        if !(self.dt > 0.0) {
            return bad("dt must be positive");
        }
        if !(self.t_end >= 0.0) {
            return bad("t_end must be nonnegative");
        }
        if self.stride == 0 {
            return bad("stride must be at least 1");
        }
        if !self.forcing.is_finite() {
            return bad("forcing has non-finite coefficients");
        }
        Ok(())
    }

    pub fn steps(&self) -> usize {
        (self.t_end / self.dt).round() as usize
    }

    pub fn lag_grid(&self) -> Result<Arc<LagGrid>> {
        LagGrid::for_kernel(&self.kernel, self.history.intervals, self.dt, self.history.s_max_factor)
    }

    /// Zero history in the configured representation.
    pub fn zero_history(&self) -> Result<HistoryField> {
        match self.history.mode {
            HistoryMode::Grid => Ok(HistoryField::zero(self.grid(), &self.lag_grid()?)),
            HistoryMode::Prony => HistoryField::zero_prony(self.grid(), &self.kernel),
        }
    }

    /// `‖f‖_ϱ`.
    pub fn forcing_norm(&self) -> f64 {
        self.forcing.norm(self.varrho)
    }
}

/// `U = (u, η)` at time `t`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub u: SpectralField,
    pub eta: HistoryField,
    pub t: f64,
}

impl State {
    pub fn new(u: SpectralField, eta: HistoryField) -> Result<Self> {
        if !Arc::ptr_eq(u.grid(), eta.grid()) && **u.grid() != **eta.grid() {
            return Err(Error::GridMismatch("velocity and history grids differ".into()));
        }
        Ok(Self { u, eta, t: 0.0 })
    }

    pub fn rest(cfg: &ModelConfig) -> Result<Self> {
        Self::new(SpectralField::zeros(cfg.grid()), cfg.zero_history()?)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.eta.is_finite() && self.t.is_finite()
    }
}

#[derive(Debug, Clone)]
enum Memory {
    History(TransportPlan),
    /// Memory force replaced by `γ A u` with `γ = ∫g`.
    Instantaneous,
}

/// Precomputed per-mode factors for steps of size `cfg.dt`.
#[derive(Debug, Clone)]
pub struct Stepper {
    grid: Arc<Grid>,
    dt: f64,
    memory: Memory,
    forcing: SpectralField,
    /// `βλ^{-θ}`
    damping: Vec<f64>,
    lambda: Vec<f64>,
    /// damped left/right factors
    lhs: Vec<f64>,
    rhs: Vec<f64>,
    /// undamped left/right factors
    lhs_free: Vec<f64>,
    rhs_free: Vec<f64>,
}

/// Advecting velocities of one step: the old level and Heun's predictor.
#[derive(Debug, Clone)]
pub struct Advection {
    pub now: SpectralField,
    pub predicted: SpectralField,
}

impl Stepper {
    /// Stepper for the memory system; `template` fixes the history representation.
    pub fn new(cfg: &ModelConfig, template: &HistoryField) -> Result<Self> {
        cfg.validate()?;
        let plan = TransportPlan::new(template, Some(&cfg.kernel), cfg.dt)?;
        let gain = plan.source_gain();
        Ok(Self::build(cfg, Memory::History(plan), 0.25 * gain))
    }

    /// Stepper for the instantaneous limit.
    pub fn instantaneous(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let gmass = cfg.kernel.g_mass();
        Ok(Self::build(cfg, Memory::Instantaneous, 0.5 * gmass))
    }

    fn build(cfg: &ModelConfig, memory: Memory, mem_gain: f64) -> Self {
        let grid = Arc::clone(cfg.grid());
        let lambda = grid.eigenvalues().to_vec();
        let damping: Vec<f64> = lambda.iter().map(|l| cfg.beta * l.powf(-cfg.theta)).collect();
        let mut lhs = Vec::with_capacity(lambda.len());
        let mut rhs = Vec::with_capacity(lambda.len());
        let mut lhs_free = Vec::with_capacity(lambda.len());
        let mut rhs_free = Vec::with_capacity(lambda.len());
        for (l, d) in lambda.iter().zip(&damping) {
            let mass = (1.0 + cfg.alpha * l) / cfg.dt;
            let mem = mem_gain * l;
            lhs.push(mass + mem + 0.5 * d);
            rhs.push(mass - mem - 0.5 * d);
            lhs_free.push(mass + mem);
            rhs_free.push(mass - mem);
        }
        Self {
            grid,
            dt: cfg.dt,
            memory,
            forcing: cfg.forcing.clone(),
            damping,
            lambda,
            lhs,
            rhs,
            lhs_free,
            rhs_free,
        }
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// One diagonal solve. `explicit` collects `½λ(M^n + M_S)`, `N` and `-f`.
    fn solve(&self, x: &SpectralField, explicit: &SpectralField, damped: bool) -> SpectralField {
        let (lhs, rhs) = if damped {
            (&self.lhs, &self.rhs)
        } else {
            (&self.lhs_free, &self.rhs_free)
        };
        let d = self.grid.dim();
        let mut out = x.clone();
        for ((o, e), c) in out.coeffs_mut().iter_mut().zip(explicit.coeffs()).zip(0..) {
            let m = c / d;
            *o = (*o * rhs[m] - e) / lhs[m];
        }
        project_in_place(&mut out);
        out
    }

    /// Shifts the history in place and returns `½λ(M^n + M_S)`.
    fn memory_terms(&self, eta: &mut HistoryField) -> Result<SpectralField> {
        match &self.memory {
            Memory::History(plan) => {
                if !Arc::ptr_eq(eta.grid(), &self.grid) && **eta.grid() != *self.grid {
                    return Err(Error::GridMismatch("history grid differs from the stepper grid".into()));
                }
                let moments = plan.prepare(eta).expect("plan carries kernel weights");
                let mut m = moments.now;
                m.axpy(1.0, &moments.shifted);
                let lam = &self.lambda;
                let d = self.grid.dim();
                for (c, z) in m.coeffs_mut().iter_mut().enumerate() {
                    *z *= 0.5 * lam[c / d];
                }
                Ok(m)
            }
            Memory::Instantaneous => Ok(SpectralField::zeros(&self.grid)),
        }
    }

    fn finish_history(&self, eta: &mut HistoryField, old: &SpectralField, new: &SpectralField) {
        if let Memory::History(plan) = &self.memory {
            let mut mean = old.clone();
            mean.axpy(1.0, new);
            mean.scale(0.5);
            plan.complete(eta, &mean);
        }
    }

    /// Full nonlinear step in place; returns the advecting velocities for coupled systems.
    pub fn advance(&self, state: &mut State) -> Result<Advection> {
        let mem = self.memory_terms(&mut state.eta)?;
        let u = &state.u;
        let n1 = bilinear_b(u, u)?;
        let mut explicit = mem;
        explicit.axpy(1.0, &n1);
        explicit.axpy(-1.0, &self.forcing);
        let predicted = self.solve(u, &explicit, true);
        let n2 = bilinear_b(&predicted, &predicted)?;
        explicit.axpy(-0.5, &n1);
        explicit.axpy(0.5, &n2);
        let next = self.solve(u, &explicit, true);
        self.finish_history(&mut state.eta, u, &next);
        let now = std::mem::replace(&mut state.u, next);
        state.t += self.dt;
        Ok(Advection { now, predicted })
    }

    pub fn step(&self, state: &State) -> Result<State> {
        let mut next = state.clone();
        self.advance(&mut next)?;
        Ok(next)
    }

    /// In-place step of a system linear in its own velocity `x`, advected by
    /// `B(a, x)`. `forcing(stage)` is the right-hand side of stage 0 (predictor)
    /// or 1 (corrector); `damped` selects the `βA^{-θ}` term. Returns the predictor.
    fn advance_linear<F>(&self, state: &mut State, adv: &Advection, damped: bool, forcing: F) -> Result<SpectralField>
    where
        F: Fn(usize) -> Option<SpectralField>,
    {
        let mem = self.memory_terms(&mut state.eta)?;
        let x = &state.u;
        let n1 = bilinear_b(&adv.now, x)?;
        let mut explicit = mem.clone();
        explicit.axpy(1.0, &n1);
        if let Some(g) = forcing(0) {
            explicit.axpy(-1.0, &g);
        }
        let predicted = self.solve(x, &explicit, damped);
        let n2 = bilinear_b(&adv.predicted, &predicted)?;
        let mut explicit = mem;
        explicit.axpy(0.5, &n1);
        explicit.axpy(0.5, &n2);
        if let Some(g) = forcing(1) {
            explicit.axpy(-1.0, &g);
        }
        let next = self.solve(x, &explicit, damped);
        self.finish_history(&mut state.eta, x, &next);
        state.u = next;
        state.t += self.dt;
        Ok(predicted)
    }

    /// `f - βA^{-θ}(a + b)/2`.
    fn split_forcing(&self, a: &SpectralField, b: &SpectralField) -> SpectralField {
        let d = self.grid.dim();
        let mut out = self.forcing.clone();
        for (c, o) in out.coeffs_mut().iter_mut().enumerate() {
            let k = c / d;
            *o -= (a.coeffs()[c] + b.coeffs()[c]) * (0.5 * self.damping[k]);
        }
        out
    }
}

/// One step of the full system.
pub fn step(state: &State, cfg: &ModelConfig) -> Result<State> {
    Stepper::new(cfg, &state.eta)?.step(state)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SolveOptions {
    /// Keep the velocity at every report.
    pub snapshots: bool,
    /// Keep the velocity at every step.
    pub path: bool,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub dt: f64,
    pub stride: usize,
    pub times: Vec<f64>,
    pub reports: Vec<EnergyReport>,
    /// `Σ dt ‖(u_{n+1} - u_n)/dt‖₁²` up to each report.
    pub dtu_cumulative: Vec<f64>,
    pub snapshots: Vec<SpectralField>,
    pub path: Option<VelocityPath>,
    pub final_u: SpectralField,
    /// Absent in the instantaneous limit.
    pub final_eta: Option<HistoryField>,
}

impl Trajectory {
    fn new(cfg: &ModelConfig, u0: &SpectralField, opts: SolveOptions) -> Self {
        let mut path = opts.path.then(VelocityPath::default);
        if let Some(p) = path.as_mut() {
            p.push(0.0, u0.clone());
        }
        Self {
            dt: cfg.dt,
            stride: cfg.stride,
            times: Vec::new(),
            reports: Vec::new(),
            dtu_cumulative: Vec::new(),
            snapshots: Vec::new(),
            path,
            final_u: u0.clone(),
            final_eta: None,
        }
    }

    fn record(&mut self, report: EnergyReport, u: &SpectralField, budget: f64, snapshots: bool) {
        self.times.push(report.t);
        self.reports.push(report);
        self.dtu_cumulative.push(budget);
        if snapshots {
            self.snapshots.push(u.clone());
        }
    }

    pub fn energies(&self) -> Vec<f64> {
        self.reports.iter().map(|r| r.e).collect()
    }

    /// Residual column for the diagnostics file: defined between consecutive
    /// single-step reports, NaN otherwise and on the last row.
    pub fn residual_column(&self) -> Vec<f64> {
        let mut out = vec![f64::NAN; self.reports.len()];
        if self.stride == 1 {
            for (i, w) in self.reports.windows(2).enumerate() {
                out[i] = energy::step_residual(&w[0], &w[1]);
            }
        }
        out
    }

    pub fn final_state(&self) -> Option<State> {
        let t = self.times.last().copied().unwrap_or(0.0);
        self.final_eta.as_ref().map(|eta| State {
            u: self.final_u.clone(),
            eta: eta.clone(),
            t,
        })
    }
}

fn is_output(step: usize, stride: usize, total: usize) -> bool {
    step % stride == 0 || step == total
}

fn blow_up(t: f64, step: usize, last: Option<&EnergyReport>) -> Error {
    Error::BlowUp {
        t,
        step,
        last_report: last.map(|r| Box::new(*r)),
    }
}

pub fn solve(cfg: &ModelConfig, u0: &SpectralField, eta0: &HistoryField) -> Result<Trajectory> {
    solve_with(cfg, u0, eta0, SolveOptions::default())
}

pub fn solve_with(
    cfg: &ModelConfig,
    u0: &SpectralField,
    eta0: &HistoryField,
    opts: SolveOptions,
) -> Result<Trajectory> {
    let stepper = Stepper::new(cfg, eta0)?;
    let mut meter = EnergyMeter::new(cfg, cfg.epsilon);
    let mut state = State::new(u0.clone(), eta0.clone())?;
    let mut traj = Trajectory::new(cfg, u0, opts);
    let total = cfg.steps();
    let mut budget = 0.0;
    traj.record(meter.report(&state)?, &state.u, budget, opts.snapshots);
    for n in 1..=total {
        let adv = stepper.advance(&mut state)?;
        let t = n as f64 * cfg.dt;
        state.t = t;
        if !state.is_finite() {
            return Err(blow_up(t, n, traj.reports.last()));
        }
        let du = &state.u - &adv.now;
        budget += du.inner(&du, 1.0) / cfg.dt;
        if let Some(p) = traj.path.as_mut() {
            p.push(t, state.u.clone());
        }
        if is_output(n, cfg.stride, total) {
            traj.record(meter.report(&state)?, &state.u, budget, opts.snapshots);
        }
    }
    traj.final_u = state.u;
    traj.final_eta = Some(state.eta);
    Ok(traj)
}

/// The same scheme with the memory force replaced by `(∫g) A u`.
pub fn solve_instantaneous(cfg: &ModelConfig, u0: &SpectralField) -> Result<Trajectory> {
    solve_instantaneous_with(cfg, u0, SolveOptions::default())
}

pub fn solve_instantaneous_with(cfg: &ModelConfig, u0: &SpectralField, opts: SolveOptions) -> Result<Trajectory> {
    let stepper = Stepper::instantaneous(cfg)?;
    let meter = EnergyMeter::new(cfg, cfg.epsilon);
    let placeholder = HistoryField::zero_prony(cfg.grid(), &Kernel::single_exponential(1.0)?)?;
    let mut state = State::new(u0.clone(), placeholder)?;
    let mut traj = Trajectory::new(cfg, u0, opts);
    let total = cfg.steps();
    let mut budget = 0.0;
    traj.record(meter.report_velocity(&state.u, 0.0), &state.u, budget, opts.snapshots);
    for n in 1..=total {
        let adv = stepper.advance(&mut state)?;
        let t = n as f64 * cfg.dt;
        state.t = t;
        if !state.u.is_finite() {
            return Err(blow_up(t, n, traj.reports.last()));
        }
        let du = &state.u - &adv.now;
        budget += du.inner(&du, 1.0) / cfg.dt;
        if let Some(p) = traj.path.as_mut() {
            p.push(t, state.u.clone());
        }
        if is_output(n, cfg.stride, total) {
            traj.record(meter.report_velocity(&state.u, t), &state.u, budget, opts.snapshots);
        }
    }
    traj.final_u = state.u;
    Ok(traj)
}

/// Co-evolved full solution `S` and the two parts `L` (unforced, undamped,
/// started from `U₀`) and `K` (started from rest, forced by `f - βA^{-θ}v`).
#[derive(Debug, Clone)]
pub struct SplitTrajectory {
    pub full: Trajectory,
    pub decaying: Trajectory,
    pub regular: Trajectory,
    /// `‖(L + K) - S‖_H` at each report.
    pub defect: Vec<f64>,
}

pub fn solve_split(cfg: &ModelConfig, u0: &SpectralField, eta0: &HistoryField) -> Result<SplitTrajectory> {
    let stepper = Stepper::new(cfg, eta0)?;
    let mut meter = EnergyMeter::new(cfg, cfg.epsilon);
    let mut s = State::new(u0.clone(), eta0.clone())?;
    let mut l = s.clone();
    let zero = match eta0.mode() {
        HistoryMode::Grid => HistoryField::zero(cfg.grid(), eta0.lags().expect("grid history")),
        HistoryMode::Prony => HistoryField::zero_prony(cfg.grid(), &cfg.kernel)?,
    };
    let mut k = State::new(SpectralField::zeros(cfg.grid()), zero.clone())?;
    // Moment histories do not combine linearly in their quadratic part, so the
    // history of the defect is transported alongside, driven by the defect velocity.
    let mut defect_eta = (eta0.mode() == HistoryMode::Prony).then_some(zero);
    let opts = SolveOptions::default();
    let mut full = Trajectory::new(cfg, u0, opts);
    let mut decaying = Trajectory::new(cfg, u0, opts);
    let mut regular = Trajectory::new(cfg, &k.u, opts);
    let mut defect = Vec::new();
    let mut record = |s: &State,
                      l: &State,
                      k: &State,
                      defect_eta: Option<&HistoryField>,
                      full: &mut Trajectory,
                      decaying: &mut Trajectory,
                      regular: &mut Trajectory|
     -> Result<()> {
        full.record(meter.report(s)?, &s.u, 0.0, false);
        decaying.record(meter.report(l)?, &l.u, 0.0, false);
        regular.record(meter.report(k)?, &k.u, 0.0, false);
        let du = &(&l.u + &k.u) - &s.u;
        let deta = match defect_eta {
            Some(eta) => eta.clone(),
            None => l.eta.lin_comb(1.0, &k.eta, 1.0)?.lin_comb(1.0, &s.eta, -1.0)?,
        };
        let r = meter.report(&State {
            u: du,
            eta: deta,
            t: s.t,
        })?;
        defect.push(energy::h_norm_sq(&r, cfg.alpha).sqrt());
        Ok(())
    };
    record(&s, &l, &k, defect_eta.as_ref(), &mut full, &mut decaying, &mut regular)?;
    let total = cfg.steps();
    for n in 1..=total {
        let t = n as f64 * cfg.dt;
        let defect_old = defect_eta.as_ref().map(|_| &(&l.u + &k.u) - &s.u);
        let adv = stepper.advance(&mut s)?;
        let v_old = l.u.clone();
        let v_pred = stepper.advance_linear(&mut l, &adv, false, |_| None)?;
        let g_pred = stepper.split_forcing(&v_old, &v_pred);
        let g_next = stepper.split_forcing(&v_old, &l.u);
        stepper.advance_linear(&mut k, &adv, true, |stage| {
            Some(if stage == 0 { g_pred.clone() } else { g_next.clone() })
        })?;
        for x in [&mut s, &mut l, &mut k] {
            x.t = t;
        }
        if let (Some(eta), Some(old)) = (defect_eta.as_mut(), defect_old) {
            let new = &(&l.u + &k.u) - &s.u;
            *eta = eta.advance(&old, &new, cfg.dt)?;
        }
        if !(s.is_finite() && l.is_finite() && k.is_finite()) {
            return Err(blow_up(t, n, full.reports.last()));
        }
        if is_output(n, cfg.stride, total) {
            record(&s, &l, &k, defect_eta.as_ref(), &mut full, &mut decaying, &mut regular)?;
        }
    }
    full.final_u = s.u;
    full.final_eta = Some(s.eta);
    decaying.final_u = l.u;
    decaying.final_eta = Some(l.eta);
    regular.final_u = k.u;
    regular.final_eta = Some(k.eta);
    Ok(SplitTrajectory {
        full,
        decaying,
        regular,
        defect,
    })
}
