//! The scenario inventory and its runners.

use std::fmt::Write as _;
use std::sync::Arc;

use nsv_core::energy::{balance_residual, fit_decay, h1_norm_sq, h_norm_sq};
use nsv_core::history::{history_norm, memory_force, pi_functional, representation_oracle};
use nsv_core::integrator::{solve, solve_instantaneous, solve_split, solve_with};
use nsv_core::spectral::{bilinear_b, trilinear_b};
use nsv_core::{
    ExpTerm, Grid, HistoryField, HistoryMode, Kernel, ModelConfig, SolveOptions, SpectralField, State, Stepper,
    Trajectory, VelocityPath,
};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Deserialize;

use crate::bundle::{Provenance, ReportBundle};
use crate::runfile::RunFile;
use crate::thresholds::Thresholds;
use crate::{random_velocity, ExperimentError};

type Res<T> = Result<T, ExperimentError>;

pub struct Scenario {
    pub name: &'static str,
    pub summary: &'static str,
}

pub const SCENARIOS: &[Scenario] = &[
    Scenario {
        name: "decay",
        summary: "unforced, damped: monotone exponential energy decay",
    },
    Scenario {
        name: "decay-nodamp",
        summary: "unforced, undamped: decay driven by memory dissipation alone",
    },
    Scenario {
        name: "absorb",
        summary: "forced ensembles at two energy levels: absorbing ball, entering time, d/dt u budget",
    },
    Scenario {
        name: "split",
        summary: "decaying plus regular decomposition of the full solution",
    },
    Scenario {
        name: "rescale",
        summary: "kernel rescaling towards the instantaneous limit",
    },
    Scenario {
        name: "continuity",
        summary: "growth of a small perturbation and stability of its exponent",
    },
    Scenario {
        name: "selfcheck",
        summary: "structural identities, history representation, grid versus moment memory",
    },
    Scenario {
        name: "refine",
        summary: "energy balance order and dt, n, M refinement studies",
    },
];

/// Runs a named scenario with the builtin thresholds.
pub fn run_scenario(name: &str, rf: &RunFile, seed: u64) -> Res<ReportBundle> {
    let th = Thresholds::builtin();
    let out = match name {
        "decay" => decay(rf, seed, &th, false),
        "decay-nodamp" => decay(rf, seed, &th, true),
        "absorb" => absorb(rf, seed, &th),
        "split" => split(rf, seed, &th),
        "rescale" => rescale(rf, seed, &th),
        "continuity" => continuity(rf, seed, &th),
        "selfcheck" => selfcheck(rf, seed, &th),
        "refine" => refine(rf, seed, &th),
        other => return Err(ExperimentError::UnknownScenario(other.to_string())),
    };
    out.map_err(|e| match e {
        ExperimentError::Core(source) => ExperimentError::Scenario {
            scenario: name.to_string(),
            source,
        },
        other => other,
    })
}

fn bundle(name: &str, rf: &RunFile, seed: u64, th: &Thresholds) -> ReportBundle {
    ReportBundle::new(name, Provenance::new(rf, seed, th), th)
}

/// `‖u‖² + α‖u‖₁²`, the velocity part of `‖U‖²_H`.
fn velocity_h_sq(u: &SpectralField, alpha: f64) -> f64 {
    u.inner(u, 0.0) + alpha * u.inner(u, 1.0)
}

fn window_max(times: &[f64], values: &[f64], lo: f64, hi: f64) -> f64 {
    times
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= lo - 1e-9 && **t <= hi + 1e-9)
        .map(|(_, v)| *v)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn check_window(w: [f64; 2], what: &str) -> Res<()> {
    if !(w[0] < w[1]) {
        return Err(ExperimentError::RunFile(format!(
            "{what}: window [{}, {}] is empty",
            w[0], w[1]
        )));
    }
    Ok(())
}

// ---------------------------------------------------------------- decay

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct DecayParams {
    level: f64,
    window: [f64; 2],
}

impl Default for DecayParams {
    fn default() -> Self {
        Self {
            level: 1.0,
            window: [2.0, 15.0],
        }
    }
}

/// Unforced runs; `undamped` also sets `β = 0`.
fn decay(rf: &RunFile, seed: u64, th: &Thresholds, undamped: bool) -> Res<ReportBundle> {
    let p: DecayParams = rf.parameters()?;
    check_window(p.window, "decay")?;
    let mut cfg = rf.model_config()?;
    cfg.forcing = SpectralField::zeros(cfg.grid());
    if undamped {
        cfg.beta = 0.0;
    }
    let name = if undamped { "decay-nodamp" } else { "decay" };
    let mut b = bundle(name, rf, seed, th);
    let u0 = random_velocity(cfg.grid(), cfg.alpha, p.level, seed);
    let traj = solve(&cfg, &u0, &cfg.zero_history()?)?;
    let e = traj.energies();
    let rise = e
        .windows(2)
        .map(|w| (w[1] - w[0]) / e[0])
        .fold(f64::NEG_INFINITY, f64::max);
    let fit = fit_decay(&traj.times, &e, (p.window[0], p.window[1]))?;
    b.criterion("monotone_decay.increase", rise)?;
    let group = if undamped {
        "exp_decay_undamped"
    } else {
        "exp_decay_damped"
    };
    b.criterion(&format!("{group}.omega"), fit.omega)?;
    b.criterion(&format!("{group}.r2"), fit.r2)?;
    b.measure("beta", cfg.beta);
    b.measure("fit", fit);
    b.measure("energy_initial", e[0]);
    b.measure("energy_final", *e.last().expect("at least one report"));
    b.table("energy", &traj)?;
    Ok(b)
}

// ---------------------------------------------------------------- absorb

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct AbsorbParams {
    level: f64,
    level_factor: f64,
    runs: usize,
    ceiling_window: [f64; 2],
    budget_t_end: f64,
    budget_split: f64,
}

impl Default for AbsorbParams {
    fn default() -> Self {
        Self {
            level: 1.0,
            level_factor: 16.0,
            runs: 2,
            ceiling_window: [10.0, 20.0],
            budget_t_end: 50.0,
            budget_split: 25.0,
        }
    }
}

struct Ensemble {
    runs: Vec<Trajectory>,
    ceiling: f64,
}

impl Ensemble {
    /// Latest time at which any member is last outside the ball of energy `radius`.
    fn entering_time(&self, radius: f64) -> f64 {
        self.runs
            .iter()
            .map(|tr| {
                let e = tr.energies();
                match e.iter().rposition(|v| *v > radius) {
                    Some(i) if i + 1 < tr.times.len() => tr.times[i + 1],
                    Some(_) => f64::INFINITY,
                    None => 0.0,
                }
            })
            .fold(0.0, f64::max)
    }
}

fn ensemble(cfg: &ModelConfig, level: f64, runs: usize, seed: u64, window: [f64; 2]) -> Res<Ensemble> {
    if runs < 2 {
        return Err(ExperimentError::Arguments(format!(
            "an ensemble needs at least 2 runs, got {runs}"
        )));
    }
    if cfg.t_end < window[1] - 1e-9 {
        return Err(ExperimentError::RunFile(format!(
            "t_end {} ends before the ceiling window [{}, {}]",
            cfg.t_end, window[0], window[1]
        )));
    }
    let mut out = Vec::with_capacity(runs);
    let mut ceiling = f64::NEG_INFINITY;
    for i in 0..runs {
        let u0 = random_velocity(cfg.grid(), cfg.alpha, level, seed.wrapping_add(i as u64));
        let tr = solve(cfg, &u0, &cfg.zero_history()?)?;
        ceiling = ceiling.max(window_max(&tr.times, &tr.energies(), window[0], window[1]));
        out.push(tr);
    }
    Ok(Ensemble { runs: out, ceiling })
}

fn ensemble_measurements(b: &mut ReportBundle, tag: &str, ens: &Ensemble, radius: f64) -> Res<()> {
    b.measure(&format!("{tag}.ceiling"), ens.ceiling);
    b.measure(&format!("{tag}.entering_time"), ens.entering_time(radius));
    let finals: Vec<f64> = ens
        .runs
        .iter()
        .map(|r| *r.energies().last().expect("reports"))
        .collect();
    b.measure(&format!("{tag}.final_energies"), finals);
    for (i, tr) in ens.runs.iter().enumerate() {
        b.table(&format!("{tag}_run{i}"), tr)?;
    }
    Ok(())
}

/// `n_runs` random initial data at the energy level of the run file's
/// `level` parameter; reports the post-entry ceiling and the common entering
/// time into the ball of twice that ceiling.
pub fn run_ensemble(rf: &RunFile, n_runs: usize, seed: u64) -> Res<ReportBundle> {
    if n_runs < 2 {
        return Err(ExperimentError::Arguments(format!(
            "an ensemble needs at least 2 runs, got {n_runs}"
        )));
    }
    let th = Thresholds::builtin();
    let p: AbsorbParams = rf.parameters()?;
    check_window(p.ceiling_window, "absorb")?;
    let cfg = rf.model_config()?;
    let mut b = bundle("ensemble", rf, seed, &th);
    let ens = ensemble(&cfg, p.level, n_runs, seed, p.ceiling_window)?;
    let radius = 2.0 * ens.ceiling;
    b.measure("ball_energy", radius);
    ensemble_measurements(&mut b, "level", &ens, radius)?;
    Ok(b)
}

fn absorb(rf: &RunFile, seed: u64, th: &Thresholds) -> Res<ReportBundle> {
    let p: AbsorbParams = rf.parameters()?;
    check_window(p.ceiling_window, "absorb")?;
    if !(p.budget_split > 0.0 && p.budget_split < p.budget_t_end) {
        return Err(ExperimentError::RunFile(
            "absorb: budget_split must lie inside (0, budget_t_end)".into(),
        ));
    }
    let cfg = rf.model_config()?;
    let mut b = bundle("absorb", rf, seed, th);

    let low = ensemble(&cfg, p.level, p.runs, seed, p.ceiling_window)?;
    let high = ensemble(
        &cfg,
        p.level * p.level_factor,
        p.runs,
        seed.wrapping_add(1000),
        p.ceiling_window,
    )?;
    let spread = (low.ceiling - high.ceiling).abs() / low.ceiling.max(high.ceiling);
    b.criterion("absorbing_ball.ceiling_spread", spread)?;
    let radius = 2.0 * low.ceiling.max(high.ceiling);
    b.measure("ball_energy", radius);
    ensemble_measurements(&mut b, "low", &low, radius)?;
    ensemble_measurements(&mut b, "high", &high, radius)?;

    let mut long = cfg.clone();
    long.t_end = p.budget_t_end;
    let u0 = random_velocity(long.grid(), long.alpha, p.level, seed);
    let tr = solve(&long, &u0, &long.zero_history()?)?;
    let scaled: Vec<f64> = tr
        .dtu_cumulative
        .iter()
        .zip(&tr.times)
        .map(|(s, t)| s / (1.0 + t))
        .collect();
    let early = window_max(&tr.times, &scaled, 0.0, p.budget_split);
    let late = window_max(&tr.times, &scaled, p.budget_split, p.budget_t_end);
    b.criterion("dtu_budget.growth", late / early)?;
    b.measure("dtu_budget.early_max", early);
    b.measure("dtu_budget.late_max", late);
    b.measure("dtu_budget.final", *tr.dtu_cumulative.last().expect("reports"));
    b.table("budget", &tr)?;
    Ok(b)
}

// ---------------------------------------------------------------- split

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SplitParams {
    level: f64,
    decay_window: [f64; 2],
    regular_from: f64,
}

impl Default for SplitParams {
    fn default() -> Self {
        Self {
            level: 1.0,
            decay_window: [2.0, 15.0],
            regular_from: 5.0,
        }
    }
}

fn split(rf: &RunFile, seed: u64, th: &Thresholds) -> Res<ReportBundle> {
    let p: SplitParams = rf.parameters()?;
    check_window(p.decay_window, "split")?;
    let cfg = rf.model_config()?;
    if !(p.regular_from < cfg.t_end) {
        return Err(ExperimentError::RunFile(
            "split: regular_from must precede t_end".into(),
        ));
    }
    let mut b = bundle("split", rf, seed, th);
    let u0 = random_velocity(cfg.grid(), cfg.alpha, p.level, seed);
    let sp = solve_split(&cfg, &u0, &cfg.zero_history()?)?;

    let scale = sp
        .full
        .reports
        .iter()
        .map(|r| h_norm_sq(r, cfg.alpha).sqrt())
        .fold(0.0, f64::max);
    let defect = sp.defect.iter().cloned().fold(0.0, f64::max);
    b.criterion("splitting.superposition", defect / scale)?;

    let fit = fit_decay(
        &sp.decaying.times,
        &sp.decaying.energies(),
        (p.decay_window[0], p.decay_window[1]),
    )?;
    b.criterion("splitting.decay_omega", fit.omega)?;

    let h1: Vec<f64> = sp
        .regular
        .reports
        .iter()
        .map(|r| h1_norm_sq(r, cfg.alpha).sqrt())
        .collect();
    let start = sp
        .regular
        .times
        .iter()
        .position(|t| *t >= p.regular_from - 1e-9)
        .expect("regular_from precedes t_end");
    let peak = window_max(&sp.regular.times, &h1, p.regular_from, cfg.t_end);
    b.criterion("splitting.regular_bound", peak / h1[start])?;

    b.measure("scale", scale);
    b.measure("defect_max", defect);
    b.measure("decaying_fit", fit);
    b.measure("regular_h1_at_start", h1[start]);
    b.measure("regular_h1_peak", peak);
    b.table("full", &sp.full)?;
    b.table("decaying", &sp.decaying)?;
    b.table("regular", &sp.regular)?;
    Ok(b)
}

// ---------------------------------------------------------------- rescale

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RescaleParams {
    level: f64,
    epsilons: Vec<f64>,
}

impl Default for RescaleParams {
    fn default() -> Self {
        Self {
            level: 1.0,
            epsilons: vec![0.4, 0.2, 0.1, 0.05],
        }
    }
}

fn rescale(rf: &RunFile, seed: u64, th: &Thresholds) -> Res<ReportBundle> {
    let p: RescaleParams = rf.parameters()?;
    if p.epsilons.len() < 2 || p.epsilons.windows(2).any(|w| !(w[1] < w[0])) {
        return Err(ExperimentError::RunFile(
            "rescale: epsilons must hold at least two strictly decreasing values".into(),
        ));
    }
    let cfg = rf.model_config()?;
    let mut b = bundle("rescale", rf, seed, th);
    let u0 = random_velocity(cfg.grid(), cfg.alpha, p.level, seed);
    let inst = solve_instantaneous(&cfg, &u0)?;
    b.table("instantaneous", &inst)?;
    let mut dev = Vec::with_capacity(p.epsilons.len());
    for &eps in &p.epsilons {
        let mut c = cfg.clone();
        c.kernel = cfg.kernel.rescale(eps)?;
        let tr = solve(&c, &u0, &c.zero_history()?)?;
        dev.push((&tr.final_u - &inst.final_u).norm(1.0));
        b.table(&format!("eps_{eps}"), &tr)?;
    }
    let ratio = dev.windows(2).map(|w| w[1] / w[0]).fold(f64::NEG_INFINITY, f64::max);
    b.criterion("singular_limit.ratio", ratio)?;
    b.measure("epsilons", &p.epsilons);
    b.measure("deviations", &dev);
    b.measure("t_end", cfg.t_end);
    b.measure("beta", cfg.beta);
    Ok(b)
}

// ---------------------------------------------------------------- continuity

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct ContinuityParams {
    level: f64,
    perturbation: f64,
    sample: f64,
}

impl Default for ContinuityParams {
    fn default() -> Self {
        Self {
            level: 1.0,
            perturbation: 1e-6,
            sample: 0.1,
        }
    }
}

/// Ratio `‖δU(t)‖_H / ‖δU₀‖_H` at every sample time. The history of the
/// difference is carried alongside, driven by the velocity difference.
fn perturbation_growth(cfg: &ModelConfig, u: &SpectralField, du: &SpectralField, sample: f64) -> Res<Vec<(f64, f64)>> {
    let mut a = State::new(u.clone(), cfg.zero_history()?)?;
    let mut b = State::new(u + du, cfg.zero_history()?)?;
    let mut d = cfg.zero_history()?;
    let stepper = Stepper::new(cfg, &a.eta)?;
    let n0 = velocity_h_sq(du, cfg.alpha).sqrt();
    let every = ((sample / cfg.dt).round() as usize).max(1);
    let mut out = Vec::new();
    for n in 1..=cfg.steps() {
        let old = &b.u - &a.u;
        stepper.advance(&mut a)?;
        stepper.advance(&mut b)?;
        let new = &b.u - &a.u;
        d = d.advance(&old, &new, cfg.dt)?;
        if !(a.is_finite() && b.is_finite()) {
            return Err(nsv_core::Error::BlowUp {
                t: n as f64 * cfg.dt,
                step: n,
                last_report: None,
            }
            .into());
        }
        if n % every == 0 {
            let h = (velocity_h_sq(&new, cfg.alpha) + history_norm(&d, &cfg.kernel, 0)?.powi(2)).sqrt();
            out.push((n as f64 * cfg.dt, h / n0));
        }
    }
    Ok(out)
}

fn growth_exponent(series: &[(f64, f64)]) -> f64 {
    series.iter().map(|(t, r)| r.ln() / t).fold(f64::NEG_INFINITY, f64::max)
}

fn continuity(rf: &RunFile, seed: u64, th: &Thresholds) -> Res<ReportBundle> {
    let p: ContinuityParams = rf.parameters()?;
    let cfg = rf.model_config()?;
    if !(p.sample >= cfg.dt && p.sample <= cfg.t_end) {
        return Err(ExperimentError::RunFile(
            "continuity: sample must lie in [dt, t_end]".into(),
        ));
    }
    let mut b = bundle("continuity", rf, seed, th);
    let u = random_velocity(cfg.grid(), cfg.alpha, p.level, seed);
    let mut du = random_velocity(cfg.grid(), cfg.alpha, 1.0, seed.wrapping_add(1));
    du.scale(p.perturbation / velocity_h_sq(&du, cfg.alpha).sqrt());

    let coarse = perturbation_growth(&cfg, &u, &du, p.sample)?;
    let mut half = cfg.clone();
    half.dt = 0.5 * cfg.dt;
    let fine = perturbation_growth(&half, &u, &du, p.sample)?;
    let (kc, kf) = (growth_exponent(&coarse), growth_exponent(&fine));
    b.criterion("continuity.k_stability", (kf - kc).abs() / kc.abs())?;
    b.measure("k_dt", kc);
    b.measure("k_half_dt", kf);

    let mut csv = String::from("t,ratio_dt,ratio_half_dt\n");
    for ((t, rc), (_, rf_)) in coarse.iter().zip(&fine) {
        let _ = writeln!(csv, "{t:e},{rc:e},{rf_:e}");
    }
    b.tables.push(("growth".into(), csv.into_bytes()));
    Ok(b)
}

// ---------------------------------------------------------------- selfcheck

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct SelfcheckParams {
    level: f64,
    pairs: usize,
    rep_t_end: f64,
    dual_steps: usize,
    /// Extra kernel `[[c, d], ...]` whose grid/moment gap is recorded at two resolutions.
    dual_probe: Vec<[f64; 2]>,
    structural_t_end: f64,
}

impl Default for SelfcheckParams {
    fn default() -> Self {
        Self {
            level: 1.0,
            pairs: 100,
            rep_t_end: 0.2,
            dual_steps: 100,
            dual_probe: vec![[0.5, 1.0], [1.5, 3.0]],
            structural_t_end: 1.0,
        }
    }
}

/// Largest deviation of the evolved history from the representation oracle
/// and the tolerance `5(Δs_min + dt) sup‖u‖` of that run.
fn representation_error(cfg: &ModelConfig, u0: &SpectralField, t_end: f64) -> Res<(f64, f64, HistoryField)> {
    let eta0 = cfg.zero_history()?;
    let lags = Arc::clone(eta0.lags().expect("grid history"));
    let stepper = Stepper::new(cfg, &eta0)?;
    let mut st = State::new(u0.clone(), eta0.clone())?;
    let mut path = VelocityPath::default();
    path.push(0.0, u0.clone());
    let mut scale = u0.norm(0.0);
    let steps = (t_end / cfg.dt).round() as usize;
    for n in 1..=steps {
        stepper.advance(&mut st)?;
        scale = scale.max(st.u.norm(0.0));
        path.push(n as f64 * cfg.dt, st.u.clone());
    }
    let oracle = representation_oracle(&path, &eta0, steps as f64 * cfg.dt)?;
    let mut err: f64 = 0.0;
    for i in 0..st.eta.node_count() {
        let a = st.eta.node(i).expect("node");
        let b = oracle.node(i).expect("node");
        err = err.max((&a - &b).norm(0.0));
    }
    Ok((err, 5.0 * (lags.ds_min() + cfg.dt) * scale, st.eta))
}

/// Relative memory-force gap between grid and moment histories after `steps`
/// steps from rest history; returns both final states.
fn dual_gap(cfg: &ModelConfig, u0: &SpectralField, steps: usize) -> Res<(f64, State, State)> {
    let mut moments = cfg.clone();
    moments.history.mode = HistoryMode::Prony;
    let mut on_grid = State::new(u0.clone(), cfg.zero_history()?)?;
    let mut on_moments = State::new(u0.clone(), moments.zero_history()?)?;
    let sg = Stepper::new(cfg, &on_grid.eta)?;
    let sm = Stepper::new(&moments, &on_moments.eta)?;
    for _ in 0..steps {
        sg.advance(&mut on_grid)?;
        sm.advance(&mut on_moments)?;
    }
    let fg = memory_force(&on_grid.eta, &cfg.kernel)?;
    let fm = memory_force(&on_moments.eta, &cfg.kernel)?;
    Ok(((&fg - &fm).norm(0.0) / fm.norm(0.0), on_grid, on_moments))
}

/// `(Π - δ/2 ‖η‖²_M) / (δ/2 ‖η‖²_M)`, or `+∞` for a zero history.
fn dafermos_margin(pi: f64, norm_sq: f64, delta: f64) -> f64 {
    let floor = 0.5 * delta * norm_sq;
    if floor > 0.0 {
        (pi - floor) / floor
    } else {
        f64::INFINITY
    }
}

fn selfcheck(rf: &RunFile, seed: u64, th: &Thresholds) -> Res<ReportBundle> {
    let p: SelfcheckParams = rf.parameters()?;
    let mut cfg = rf.model_config()?;
    cfg.history.mode = HistoryMode::Grid;
    let grid = Arc::clone(cfg.grid());
    let mut b = bundle("selfcheck", rf, seed, th);

    // skew symmetry and solenoidal output on random dealiased fields
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let band = grid.kmax() as f64 * (grid.dim() as f64).sqrt();
    let mut prony = cfg.clone();
    prony.history.mode = HistoryMode::Prony;
    let step_template = prony.zero_history()?;
    let stepper = Stepper::new(&prony, &step_template)?;
    let (mut skew, mut div): (f64, f64) = (0.0, 0.0);
    for _ in 0..p.pairs {
        let u = SpectralField::random(&grid, band, &mut rng);
        let v = SpectralField::random(&grid, band, &mut rng);
        let buv = bilinear_b(&u, &v)?;
        skew = skew.max(trilinear_b(&u, &v, &v)?.abs() / (buv.norm(0.0) * v.norm(0.0)));
        div = div.max(buv.divergence_residual());
        let mut st = State::new(u, step_template.clone())?;
        stepper.advance(&mut st)?;
        div = div.max(st.u.divergence_residual());
    }
    b.criterion("structural.skew", skew)?;
    b.criterion("structural.divergence", div)?;

    // history representation at two resolutions
    let u0 = random_velocity(&grid, cfg.alpha, p.level, seed);
    let (err, tol, eta_a) = representation_error(&cfg, &u0, p.rep_t_end)?;
    let mut fine = cfg.clone();
    fine.dt = 0.5 * cfg.dt;
    fine.history.intervals = 2 * cfg.history.intervals;
    let (err_fine, tol_fine, eta_b) = representation_error(&fine, &u0, p.rep_t_end)?;
    b.criterion("history_fidelity.error", err / tol)?;
    b.criterion("history_fidelity.refinement", err_fine / err)?;
    b.measure("history_fidelity.errors", [err, err_fine]);
    b.measure("history_fidelity.tolerances", [tol, tol_fine]);

    // grid against moment memory
    let (gap, on_grid, on_moments) = dual_gap(&cfg, &u0, p.dual_steps)?;
    b.criterion("dual_representation.force", gap)?;
    if !p.dual_probe.is_empty() {
        let terms = p.dual_probe.iter().map(|[c, d]| ExpTerm::new(*c, *d)).collect();
        let mut probe = cfg.clone();
        probe.kernel = Kernel::exponential_sum(terms)?;
        let coarse = dual_gap(&probe, &u0, p.dual_steps)?.0;
        probe.dt *= 0.5;
        probe.history.intervals *= 2;
        let fine = dual_gap(&probe, &u0, 2 * p.dual_steps)?.0;
        b.measure("dual_representation.probe_kernel", &p.dual_probe);
        b.measure("dual_representation.probe_gaps", [coarse, fine]);
    }

    // functionals along an evolved trajectory
    let mut run = cfg.clone();
    run.t_end = p.structural_t_end;
    let tr = solve_with(&run, &u0, &run.zero_history()?, SolveOptions::default())?;
    let delta = cfg.kernel.dafermos_rate();
    let mut margin = f64::INFINITY;
    let mut bracket = f64::NEG_INFINITY;
    for r in &tr.reports {
        margin = margin.min(dafermos_margin(r.pi, r.history_sq, delta));
        if r.e > 0.0 {
            bracket = bracket.max((0.5 * r.e - r.lambda_eps).max(r.lambda_eps - 2.0 * r.e) / r.e);
        }
    }
    for eta in [&eta_a, &eta_b, &on_grid.eta, &on_moments.eta] {
        let pi = pi_functional(eta, &cfg.kernel, 0)?;
        let n = history_norm(eta, &cfg.kernel, 0)?;
        margin = margin.min(dafermos_margin(pi, n * n, delta));
    }
    b.criterion("structural.dafermos", margin)?;
    b.criterion("structural.lambda_bracket", bracket)?;
    b.measure("structural.epsilon", cfg.epsilon);
    b.table("structural", &tr)?;
    Ok(b)
}

// ---------------------------------------------------------------- refine

#[derive(Debug, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct RefineParams {
    levels: usize,
    t_end: f64,
    balance_t_end: f64,
    memory_t_end: f64,
    level: f64,
}

impl Default for RefineParams {
    fn default() -> Self {
        Self {
            levels: 3,
            t_end: 1.0,
            balance_t_end: 2.0,
            memory_t_end: 0.2,
            level: 1.0,
        }
    }
}

/// Copies `u` onto a finer grid; modes missing there are dropped.
fn embed(u: &SpectralField, grid: &Arc<Grid>) -> Res<SpectralField> {
    let mut out = SpectralField::zeros(grid);
    let d = grid.dim();
    for m in 0..u.grid().mode_count() {
        if let Some(target) = grid.mode_index(u.grid().wavevector(m)) {
            out.coeffs_mut()[target * d..(target + 1) * d].copy_from_slice(u.mode(m));
        }
    }
    Ok(out)
}

/// Observed orders `log2(d_i / d_{i+1})` of successive differences.
fn orders(diffs: &[f64]) -> Vec<f64> {
    diffs.windows(2).map(|w| (w[0] / w[1]).log2()).collect()
}

/// Pairwise differences at `t_end` under dt halving, n doubling and M doubling.
pub fn run_refinement(rf: &RunFile, levels: usize, seed: u64) -> Res<ReportBundle> {
    if levels < 3 {
        return Err(ExperimentError::Arguments(format!(
            "refinement needs at least 3 levels, got {levels}"
        )));
    }
    let th = Thresholds::builtin();
    let p: RefineParams = rf.parameters()?;
    let base = rf.model_config()?;
    let mut b = bundle("refinement", rf, seed, &th);
    let alpha = base.alpha;

    // dt halving at fixed n
    let u0 = random_velocity(base.grid(), alpha, p.level, seed);
    let mut finals = Vec::with_capacity(levels);
    for i in 0..levels {
        let mut c = base.clone();
        c.history.mode = HistoryMode::Prony;
        c.dt = base.dt / f64::powi(2.0, i as i32);
        c.t_end = p.t_end;
        c.stride = c.steps();
        finals.push(solve(&c, &u0, &c.zero_history()?)?.final_u);
    }
    let dt_diffs: Vec<f64> = finals
        .windows(2)
        .map(|w| velocity_h_sq(&(&w[0] - &w[1]), alpha).sqrt())
        .collect();
    b.measure("dt.differences", &dt_diffs);
    b.measure("dt.orders", orders(&dt_diffs));

    // n doubling at fixed dt, ending at the run file's n
    let n_top = rf.domain.n;
    let mut fields = Vec::with_capacity(levels);
    let mut ns = Vec::with_capacity(levels);
    for i in (0..levels).rev() {
        let n = n_top >> i;
        let grid = Grid::new(rf.domain.dim, n)?;
        let mut c = ModelConfig::new(&grid, base.kernel.clone());
        c.alpha = alpha;
        c.beta = base.beta;
        c.theta = base.theta;
        c.forcing = embed(&base.forcing, &grid)?;
        c.dt = base.dt;
        c.t_end = p.t_end;
        c.stride = c.steps();
        c.history.mode = HistoryMode::Prony;
        let u = embed(&u0, &grid)?;
        fields.push(solve(&c, &u, &c.zero_history()?)?.final_u);
        ns.push(n);
    }
    let top = Arc::clone(base.grid());
    let lifted: Vec<SpectralField> = fields.iter().map(|f| embed(f, &top)).collect::<Res<_>>()?;
    let n_diffs: Vec<f64> = lifted
        .windows(2)
        .map(|w| velocity_h_sq(&(&w[0] - &w[1]), alpha).sqrt())
        .collect();
    b.measure("n.levels", &ns);
    b.measure("n.differences", &n_diffs);

    // M doubling of the lag grid, ending at the run file's M
    let mut forces = Vec::with_capacity(levels);
    let mut ms = Vec::with_capacity(levels);
    for i in (0..levels).rev() {
        let mut c = base.clone();
        c.history.mode = HistoryMode::Grid;
        c.history.intervals = (base.history.intervals >> i).max(2);
        c.t_end = p.memory_t_end;
        c.stride = c.steps();
        let tr = solve(&c, &u0, &c.zero_history()?)?;
        forces.push(memory_force(tr.final_eta.as_ref().expect("memory run"), &c.kernel)?);
        ms.push(c.history.intervals);
    }
    let m_diffs: Vec<f64> = forces.windows(2).map(|w| (&w[0] - &w[1]).norm(0.0)).collect();
    b.measure("m.levels", &ms);
    b.measure("m.force_differences", &m_diffs);
    b.measure("m.monotone", m_diffs.windows(2).all(|w| w[1] < w[0]));
    Ok(b)
}

fn refine(rf: &RunFile, seed: u64, th: &Thresholds) -> Res<ReportBundle> {
    let p: RefineParams = rf.parameters()?;
    let base = rf.model_config()?;
    let mut b = bundle("refine", rf, seed, th);
    let u0 = random_velocity(base.grid(), base.alpha, p.level, seed);
    let mut maxima = Vec::with_capacity(2);
    for (i, factor) in [1.0, 0.5].into_iter().enumerate() {
        let mut c = base.clone();
        c.history.mode = HistoryMode::Prony;
        c.dt = base.dt * factor;
        c.t_end = p.balance_t_end;
        c.stride = 1;
        let tr = solve(&c, &u0, &c.zero_history()?)?;
        maxima.push(balance_residual(&tr)?.max_abs);
        b.table(if i == 0 { "balance_dt" } else { "balance_half_dt" }, &tr)?;
    }
    b.criterion("energy_balance.order", maxima[0] / maxima[1])?;
    b.measure("energy_balance.max_residuals", &maxima);
    b.merge("refinement", run_refinement(rf, p.levels, seed)?);
    Ok(b)
}
