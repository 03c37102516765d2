//! The history variable `η^t(s) = ∫_0^s u(t-σ) dσ` and its functionals.
//!
//! Two representations are available:
//!
//! * `Grid`: node values on a geometric lag grid `0 = s_0 < … < s_M`, transported
//!   by a semi-Lagrangian shift with linear interpolation. Lag integrals use
//!   product-integration weights `∫ w(s) φ_i(s) ds` against the hat functions
//!   of the same piecewise-linear interpolant.
//! * `Prony`: for exponential-sum kernels, the Laplace moments
//!   `m_j = ∫ e^{-d_j s} η(s) ds` together with the quadratic moments
//!   `Q_j = ∫ e^{-d_j s} ‖η(s)‖²_{1+r} ds` (`r = 0, 1`), which close exactly
//!   under the transport equation and give the memory force, the history norms
//!   and the dissipation `Π` without any lag discretization. The pairing with
//!   the split weight `μ_*` is not expressible in these moments.

use std::sync::Arc;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::kernel::{ExpTerm, Kernel};
use crate::spectral::{Grid, SpectralField};

const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

/// Geometric lag grid: `s_i = Δs_min (ρ^i - 1)/(ρ - 1)`, `i = 0..=M`, with `s_M = S_max`.
#[derive(Debug, Clone, PartialEq)]
pub struct LagGrid {
    nodes: Vec<f64>,
    ratio: f64,
}

impl LagGrid {
    pub fn geometric(intervals: usize, ds_min: f64, s_max: f64) -> Result<Arc<Self>> {
        if intervals < 2 {
            return Err(Error::Domain("lag grid needs at least two intervals".into()));
        }
        if !(ds_min > 0.0 && s_max > ds_min) {
            return Err(Error::Domain(format!(
                "lag grid needs 0 < ds_min < s_max, got {ds_min}, {s_max}"
            )));
        }
        let m = intervals as f64;
        if s_max <= m * ds_min {
            let h = s_max / m;
            let nodes = (0..=intervals).map(|i| i as f64 * h).collect();
            return Ok(Arc::new(Self { nodes, ratio: 1.0 }));
        }
        // solve ds_min (ρ^M - 1)/(ρ - 1) = s_max for ρ > 1
        let span = |rho: f64| ds_min * (rho.powf(m) - 1.0) / (rho - 1.0) - s_max;
        let mut hi = 2.0;
        while span(hi) < 0.0 {
            hi *= 2.0;
        }
        let rho = crate::quad::bisect(span, 1.0 + 1e-15, hi, 1e-15);
        let mut nodes: Vec<f64> = (0..=intervals)
            .map(|i| ds_min * (rho.powi(i as i32) - 1.0) / (rho - 1.0))
            .collect();
        nodes[intervals] = s_max;
        Ok(Arc::new(Self { nodes, ratio: rho }))
    }

    /// Default grid for a kernel: `Δs_min = dt`, `S_max = factor/δ`.
    pub fn for_kernel(kernel: &Kernel, intervals: usize, dt: f64, s_max_factor: f64) -> Result<Arc<Self>> {
        Self::geometric(intervals, dt, s_max_factor / kernel.dafermos_rate())
    }

    /// Rebuilds a grid from stored nodes and growth ratio.
    pub fn from_nodes(nodes: Vec<f64>, ratio: f64) -> Result<Arc<Self>> {
        if nodes.len() < 3 || nodes[0] != 0.0 || nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Format("lag nodes must start at 0 and increase".into()));
        }
        if !(ratio >= 1.0 && ratio.is_finite()) {
            return Err(Error::Format(format!("lag grid ratio {ratio} below 1")));
        }
        Ok(Arc::new(Self { nodes, ratio }))
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn ratio(&self) -> f64 {
        self.ratio
    }

    pub fn ds_min(&self) -> f64 {
        self.nodes[1]
    }

    pub fn s_max(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    /// Product-integration weights `∫_0^{S_max} w(s) φ_i(s) ds`. Intervals
    /// containing one of `breaks` are split there.
    pub fn hat_weights<F: Fn(f64) -> f64>(&self, w: F, breaks: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.nodes.len()];
        for i in 0..self.nodes.len() - 1 {
            let (a, b) = (self.nodes[i], self.nodes[i + 1]);
            let h = b - a;
            let mut cuts = vec![a];
            cuts.extend(breaks.iter().copied().filter(|&x| x > a && x < b));
            cuts.push(b);
            for piece in cuts.windows(2) {
                let (lo, hi) = (piece[0], piece[1]);
                let c = 0.5 * (lo + hi);
                let r = 0.5 * (hi - lo);
                for (x, wt) in GL_NODES.iter().zip(GL_WEIGHTS) {
                    for s in [c - r * x, c + r * x] {
                        let v = w(s) * wt * r;
                        let right = (s - a) / h;
                        out[i] += v * (1.0 - right);
                        out[i + 1] += v * right;
                    }
                }
            }
        }
        out
    }

    /// Source and interpolation fraction for each node after a shift by `dt`.
    fn shift_plan(&self, dt: f64) -> Vec<Shift> {
        self.nodes
            .iter()
            .map(|&s| {
                if s < dt {
                    return Shift::Fresh { gain: s };
                }
                let x = s - dt;
                let j = (self.nodes.partition_point(|&v| v <= x) - 1).min(self.nodes.len() - 2);
                let frac = (x - self.nodes[j]) / (self.nodes[j + 1] - self.nodes[j]);
                Shift::Interp { src: j, frac }
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy)]
enum Shift {
    /// `s_i < dt`: the characteristic starts inside the step, `η = s_i ū`.
    Fresh {
        gain: f64,
    },
    Interp {
        src: usize,
        frac: f64,
    },
}

/// Lag-grid weights of a kernel: `∫μφ_i`, `-∫μ'φ_i`, `∫μ_*φ_i`.
#[derive(Debug, Clone)]
pub struct KernelWeights {
    pub mu: Vec<f64>,
    pub neg_mu_prime: Vec<f64>,
    pub mu_star: Vec<f64>,
}

impl KernelWeights {
    pub fn new(kernel: &Kernel, lags: &LagGrid) -> Self {
        let s_star = kernel.tail_split().s_star;
        Self {
            mu: lags.hat_weights(|s| kernel.mu(s), &[]),
            neg_mu_prime: lags.hat_weights(|s| -kernel.mu_prime(s), &[]),
            mu_star: lags.hat_weights(|s| kernel.mu_star(s), &[s_star]),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HistoryMode {
    Grid,
    Prony,
}

#[derive(Debug, Clone, PartialEq)]
enum Repr {
    /// Coefficient-major node values: coefficient `c` at node `i` is `data[c * P + i]`.
    Nodes { lags: Arc<LagGrid>, data: Vec<Complex64> },
    Moments {
        terms: Vec<ExpTerm>,
        moments: Vec<SpectralField>,
        /// `[Q_j in M, Q_j in M¹]`
        quad: Vec<[f64; 2]>,
    },
}

/// A history `η^t(·)` in one of the two representations.
#[derive(Debug, Clone, PartialEq)]
pub struct HistoryField {
    grid: Arc<Grid>,
    repr: Repr,
}

/// How to build the initial history.
pub enum InitialHistory<'a> {
    Zero,
    /// `η_0(s) = ∫_0^s φ_0(σ) dσ` for a past velocity `φ_0`.
    FromPast(&'a dyn Fn(f64) -> SpectralField),
}

/// Velocity samples along a trajectory, in increasing time.
#[derive(Debug, Clone, Default)]
pub struct VelocityPath {
    pub times: Vec<f64>,
    pub fields: Vec<SpectralField>,
}

impl VelocityPath {
    pub fn push(&mut self, t: f64, u: SpectralField) {
        self.times.push(t);
        self.fields.push(u);
    }
}

impl HistoryField {
    pub fn zero(grid: &Arc<Grid>, lags: &Arc<LagGrid>) -> Self {
        Self {
            grid: Arc::clone(grid),
            repr: Repr::Nodes {
                lags: Arc::clone(lags),
                data: vec![Complex64::default(); grid.coeff_len() * lags.len()],
            },
        }
    }

    pub fn zero_prony(grid: &Arc<Grid>, kernel: &Kernel) -> Result<Self> {
        let terms = kernel
            .exponential_terms()
            .ok_or_else(|| Error::UnsupportedMode("moment closure needs an exponential-sum kernel".into()))?;
        Ok(Self {
            grid: Arc::clone(grid),
            repr: Repr::Moments {
                moments: vec![SpectralField::zeros(grid); terms.len()],
                quad: vec![[0.0; 2]; terms.len()],
                terms,
            },
        })
    }

    /// Grid-mode initial history.
    pub fn init(grid: &Arc<Grid>, lags: &Arc<LagGrid>, spec: InitialHistory<'_>) -> Self {
        let mut eta = Self::zero(grid, lags);
        if let InitialHistory::FromPast(past) = spec {
            let nodes = lags.nodes();
            let mut prev = past(nodes[0]);
            let mut acc = SpectralField::zeros(grid);
            for i in 1..nodes.len() {
                let next = past(nodes[i]);
                let h = 0.5 * (nodes[i] - nodes[i - 1]);
                acc.axpy(h, &prev);
                acc.axpy(h, &next);
                eta.set_node(i, &acc);
                prev = next;
            }
        }
        eta
    }

    pub(crate) fn from_nodes(grid: &Arc<Grid>, lags: &Arc<LagGrid>, data: Vec<Complex64>) -> Result<Self> {
        if data.len() != grid.coeff_len() * lags.len() {
            return Err(Error::Format("history node data has the wrong length".into()));
        }
        Ok(Self {
            grid: Arc::clone(grid),
            repr: Repr::Nodes {
                lags: Arc::clone(lags),
                data,
            },
        })
    }

    pub(crate) fn from_moments(
        grid: &Arc<Grid>,
        terms: Vec<ExpTerm>,
        moments: Vec<SpectralField>,
        quad: Vec<[f64; 2]>,
    ) -> Result<Self> {
        if moments.len() != terms.len() || quad.len() != terms.len() {
            return Err(Error::Format("moment counts disagree with the term count".into()));
        }
        Ok(Self {
            grid: Arc::clone(grid),
            repr: Repr::Moments { terms, moments, quad },
        })
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn mode(&self) -> HistoryMode {
        match self.repr {
            Repr::Nodes { .. } => HistoryMode::Grid,
            Repr::Moments { .. } => HistoryMode::Prony,
        }
    }

    pub fn lags(&self) -> Option<&Arc<LagGrid>> {
        match &self.repr {
            Repr::Nodes { lags, .. } => Some(lags),
            Repr::Moments { .. } => None,
        }
    }

    pub(crate) fn node_data(&self) -> Option<&[Complex64]> {
        match &self.repr {
            Repr::Nodes { data, .. } => Some(data),
            Repr::Moments { .. } => None,
        }
    }

    pub(crate) fn moment_parts(&self) -> Option<(&[ExpTerm], &[SpectralField], &[[f64; 2]])> {
        match &self.repr {
            Repr::Moments { terms, moments, quad } => Some((terms, moments, quad)),
            Repr::Nodes { .. } => None,
        }
    }

    pub fn node_count(&self) -> usize {
        self.lags().map_or(0, |l| l.len())
    }

    /// Value at node `i` (grid mode only).
    pub fn node(&self, i: usize) -> Option<SpectralField> {
        let Repr::Nodes { lags, data } = &self.repr else {
            return None;
        };
        let p = lags.len();
        let coeffs = (0..self.grid.coeff_len()).map(|c| data[c * p + i]).collect();
        SpectralField::from_coeffs(&self.grid, coeffs).ok()
    }

    fn set_node(&mut self, i: usize, v: &SpectralField) {
        if let Repr::Nodes { lags, data } = &mut self.repr {
            let p = lags.len();
            for (c, z) in v.coeffs().iter().enumerate() {
                data[c * p + i] = *z;
            }
        }
    }

    /// Laplace moments `m_j` (Prony mode only).
    pub fn moments(&self) -> Option<&[SpectralField]> {
        self.moment_parts().map(|(_, m, _)| m)
    }

    pub fn is_finite(&self) -> bool {
        match &self.repr {
            Repr::Nodes { data, .. } => data.iter().all(|z| z.re.is_finite() && z.im.is_finite()),
            Repr::Moments { moments, quad, .. } => {
                moments.iter().all(SpectralField::is_finite)
                    && quad.iter().all(|q| q[0].is_finite() && q[1].is_finite())
            }
        }
    }

    /// `a·self + b·other` for node histories on the same lag grid.
    pub fn lin_comb(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        match (&self.repr, &other.repr) {
            (Repr::Nodes { lags, data }, Repr::Nodes { lags: l2, data: d2 })
                if lags == l2 && self.grid == other.grid =>
            {
                let data = data.iter().zip(d2).map(|(x, y)| x * a + y * b).collect();
                Ok(Self {
                    grid: Arc::clone(&self.grid),
                    repr: Repr::Nodes {
                        lags: Arc::clone(lags),
                        data,
                    },
                })
            }
            (Repr::Nodes { .. }, Repr::Nodes { .. }) => {
                Err(Error::GridMismatch("histories live on different grids".into()))
            }
            _ => Err(Error::UnsupportedMode(
                "quadratic moments do not combine linearly".into(),
            )),
        }
    }

    /// Moments of a grid history against an exponential-sum kernel.
    pub fn to_prony(&self, kernel: &Kernel) -> Result<Self> {
        let Repr::Nodes { lags, data } = &self.repr else {
            return Ok(self.clone());
        };
        let terms = kernel
            .exponential_terms()
            .ok_or_else(|| Error::UnsupportedMode("moment closure needs an exponential-sum kernel".into()))?;
        let p = lags.len();
        let lam = self.grid.eigenvalues();
        let d = self.grid.dim();
        let mut moments = Vec::with_capacity(terms.len());
        let mut quad = Vec::with_capacity(terms.len());
        for t in &terms {
            let w = lags.hat_weights(|s| (-t.rate * s).exp(), &[]);
            let mut m = SpectralField::zeros(&self.grid);
            let mut q = [0.0; 2];
            for (c, z) in m.coeffs_mut().iter_mut().enumerate() {
                let line = &data[c * p..(c + 1) * p];
                *z = line.iter().zip(&w).map(|(v, wi)| v * wi).sum();
                let l = lam[c / d];
                let sq: f64 = line.iter().zip(&w).map(|(v, wi)| v.norm_sqr() * wi).sum();
                q[0] += l * sq;
                q[1] += l * l * sq;
            }
            moments.push(m);
            quad.push(q);
        }
        Ok(Self {
            grid: Arc::clone(&self.grid),
            repr: Repr::Moments { terms, moments, quad },
        })
    }

    /// One transport step `∂_t η = -∂_s η + u` with the trapezoidal source `(u_old + u_new)/2`.
    pub fn advance(&self, u_old: &SpectralField, u_new: &SpectralField, dt: f64) -> Result<Self> {
        if !(dt > 0.0) {
            return Err(Error::Domain(format!("time step must be positive, got {dt}")));
        }
        u_old.ensure_same_grid(u_new)?;
        let plan = TransportPlan::new(self, None, dt)?;
        let mut next = self.clone();
        plan.prepare(&mut next);
        let mut mean = u_old.clone();
        mean.axpy(1.0, u_new);
        mean.scale(0.5);
        plan.complete(&mut next, &mean);
        Ok(next)
    }
}

/// Moment-closure step: `m_j ← e^{-d_j dt} m_j + (1 - e^{-d_j dt})/d_j² ū`.
pub fn prony_advance(
    eta: &HistoryField,
    u_old: &SpectralField,
    u_new: &SpectralField,
    dt: f64,
) -> Result<HistoryField> {
    if eta.mode() != HistoryMode::Prony {
        return Err(Error::UnsupportedMode("history is not in moment form".into()));
    }
    eta.advance(u_old, u_new, dt)
}

/// `η^t` from the representation formula, on the lag grid of `eta0`.
///
/// `η^t(s) = ∫_0^s u(t-σ)dσ` for `s ≤ t`, `η_0(s-t) + ∫_0^t u(t-σ)dσ` otherwise,
/// integrating the piecewise-linear interpolant of the path samples.
pub fn representation_oracle(path: &VelocityPath, eta0: &HistoryField, t: f64) -> Result<HistoryField> {
    let Repr::Nodes { lags, data: data0 } = &eta0.repr else {
        return Err(Error::UnsupportedMode("oracle works on grid histories".into()));
    };
    if t == 0.0 {
        return Ok(eta0.clone());
    }
    let times = &path.times;
    let covers = !times.is_empty()
        && times[0] <= 1e-12 * t.max(1.0)
        && *times.last().unwrap() >= t * (1.0 - 1e-12)
        && times.windows(2).all(|w| w[1] > w[0]);
    if !covers || path.fields.len() != times.len() {
        return Err(Error::Precondition(format!("velocity path does not cover [0, {t}]")));
    }
    let grid = &eta0.grid;
    let ncoef = grid.coeff_len();
    // cumulative integral C(τ) = ∫_0^τ u at each sample
    let mut cumulative = vec![vec![Complex64::default(); ncoef]];
    for k in 1..times.len() {
        let h = 0.5 * (times[k] - times[k - 1]);
        let prev = &cumulative[k - 1];
        let next = prev
            .iter()
            .zip(path.fields[k - 1].coeffs().iter().zip(path.fields[k].coeffs()))
            .map(|(c, (a, b))| c + (a + b) * h)
            .collect();
        cumulative.push(next);
    }
    let integral_to = |tau: f64, out: &mut [Complex64]| {
        let j = (times.partition_point(|&x| x <= tau).max(1) - 1).min(times.len() - 2);
        let h = times[j + 1] - times[j];
        let x = (tau - times[j]).clamp(0.0, h);
        let (a, b) = (path.fields[j].coeffs(), path.fields[j + 1].coeffs());
        for c in 0..ncoef {
            out[c] = cumulative[j][c] + a[c] * x + (b[c] - a[c]) * (0.5 * x * x / h);
        }
    };
    let p = lags.len();
    let nodes = lags.nodes();
    let mut data = vec![Complex64::default(); ncoef * p];
    let mut at_t = vec![Complex64::default(); ncoef];
    let mut at_back = vec![Complex64::default(); ncoef];
    integral_to(t, &mut at_t);
    for (i, &s) in nodes.iter().enumerate() {
        if s <= t {
            integral_to(t - s, &mut at_back);
            for c in 0..ncoef {
                data[c * p + i] = at_t[c] - at_back[c];
            }
        } else {
            // η_0(s - t) by linear interpolation on the same lag grid
            let x = s - t;
            let j = (nodes.partition_point(|&v| v <= x) - 1).min(p - 2);
            let f = (x - nodes[j]) / (nodes[j + 1] - nodes[j]);
            for c in 0..ncoef {
                let old = data0[c * p + j] * (1.0 - f) + data0[c * p + j + 1] * f;
                data[c * p + i] = old + at_t[c];
            }
        }
    }
    HistoryField::from_nodes(grid, lags, data)
}

/// `∫_0^∞ μ(s) A η(s) ds`.
pub fn memory_force(eta: &HistoryField, kernel: &Kernel) -> Result<SpectralField> {
    let m = memory_moment(eta, kernel, None)?;
    Ok(apply_stokes(&m))
}

fn apply_stokes(m: &SpectralField) -> SpectralField {
    m.map_modes(|lam| lam)
}

/// `∫_0^∞ μ(s) η(s) ds` (before applying `A`).
fn memory_moment(eta: &HistoryField, kernel: &Kernel, weights: Option<&KernelWeights>) -> Result<SpectralField> {
    match &eta.repr {
        Repr::Nodes { lags, data } => {
            let owned;
            let w = match weights {
                Some(w) => w,
                None => {
                    owned = KernelWeights::new(kernel, lags);
                    &owned
                }
            };
            let p = lags.len();
            let coeffs = (0..eta.grid.coeff_len())
                .map(|c| data[c * p..(c + 1) * p].iter().zip(&w.mu).map(|(v, wi)| v * wi).sum())
                .collect();
            SpectralField::from_coeffs(&eta.grid, coeffs)
        }
        Repr::Moments { terms, moments, .. } => {
            check_terms(terms, kernel)?;
            let mut out = SpectralField::zeros(&eta.grid);
            for (t, m) in terms.iter().zip(moments) {
                out.axpy(t.amplitude * t.rate, m);
            }
            Ok(out)
        }
    }
}

fn check_terms(terms: &[ExpTerm], kernel: &Kernel) -> Result<()> {
    match kernel.exponential_terms() {
        Some(k)
            if k.len() == terms.len()
                && k.iter().zip(terms).all(|(a, b)| {
                    (a.amplitude - b.amplitude).abs() <= 1e-12 * a.amplitude
                        && (a.rate - b.rate).abs() <= 1e-12 * a.rate
                }) =>
        {
            Ok(())
        }
        _ => Err(Error::UnsupportedMode(
            "moment history was built for a different kernel".into(),
        )),
    }
}

/// Weighted lag sums `Σ_i w_i ‖η(s_i)‖²_{1+order}` for several weight vectors at once.
fn weighted_square_sums(
    eta: &HistoryField,
    lags: &LagGrid,
    data: &[Complex64],
    order: u8,
    weights: &[&[f64]],
) -> Vec<f64> {
    let p = lags.len();
    let d = eta.grid.dim();
    let lam = eta.grid.eigenvalues();
    let mut out = vec![0.0; weights.len()];
    for c in 0..eta.grid.coeff_len() {
        let l = lam[c / d];
        let scale = if order == 0 { l } else { l * l };
        let line = &data[c * p..(c + 1) * p];
        for (o, w) in out.iter_mut().zip(weights) {
            let s: f64 = line.iter().zip(w.iter()).map(|(v, wi)| v.norm_sqr() * wi).sum();
            *o += scale * s;
        }
    }
    out
}

/// `‖η‖_M` (order 0) or `‖η‖_{M¹}` (order 1).
pub fn history_norm(eta: &HistoryField, kernel: &Kernel, order: u8) -> Result<f64> {
    Ok(history_norm_sq(eta, kernel, order, None)?.sqrt())
}

pub(crate) fn history_norm_sq(
    eta: &HistoryField,
    kernel: &Kernel,
    order: u8,
    weights: Option<&KernelWeights>,
) -> Result<f64> {
    check_order(order)?;
    match &eta.repr {
        Repr::Nodes { lags, data } => {
            let owned;
            let w = match weights {
                Some(w) => w,
                None => {
                    owned = KernelWeights::new(kernel, lags);
                    &owned
                }
            };
            Ok(weighted_square_sums(eta, lags, data, order, &[&w.mu])[0])
        }
        Repr::Moments { terms, quad, .. } => {
            check_terms(terms, kernel)?;
            Ok(terms
                .iter()
                .zip(quad)
                .map(|(t, q)| t.amplitude * t.rate * q[order as usize])
                .sum())
        }
    }
}

/// `Π = -½ ∫ μ'(s) ‖η(s)‖²_{1+order} ds`.
pub fn pi_functional(eta: &HistoryField, kernel: &Kernel, order: u8) -> Result<f64> {
    pi_with_weights(eta, kernel, order, None)
}

pub(crate) fn pi_with_weights(
    eta: &HistoryField,
    kernel: &Kernel,
    order: u8,
    weights: Option<&KernelWeights>,
) -> Result<f64> {
    check_order(order)?;
    match &eta.repr {
        Repr::Nodes { lags, data } => {
            let owned;
            let w = match weights {
                Some(w) => w,
                None => {
                    owned = KernelWeights::new(kernel, lags);
                    &owned
                }
            };
            Ok(0.5 * weighted_square_sums(eta, lags, data, order, &[&w.neg_mu_prime])[0])
        }
        Repr::Moments { terms, quad, .. } => {
            check_terms(terms, kernel)?;
            Ok(0.5
                * terms
                    .iter()
                    .zip(quad)
                    .map(|(t, q)| t.amplitude * t.rate * t.rate * q[order as usize])
                    .sum::<f64>())
        }
    }
}

/// `∫ μ_*(s) ⟨η(s), u⟩_{1+order} ds`; `None` for moment histories.
pub fn split_pairing(
    eta: &HistoryField,
    u: &SpectralField,
    kernel: &Kernel,
    order: u8,
    weights: Option<&KernelWeights>,
) -> Result<Option<f64>> {
    check_order(order)?;
    let Repr::Nodes { lags, data } = &eta.repr else {
        return Ok(None);
    };
    eta.grid
        .eq(u.grid())
        .then_some(())
        .ok_or_else(|| Error::GridMismatch("history and velocity grids differ".into()))?;
    let owned;
    let w = match weights {
        Some(w) => w,
        None => {
            owned = KernelWeights::new(kernel, lags);
            &owned
        }
    };
    let p = lags.len();
    let d = eta.grid.dim();
    let lam = eta.grid.eigenvalues();
    let mut acc = 0.0;
    for (c, uc) in u.coeffs().iter().enumerate() {
        let l = lam[c / d];
        let scale = if order == 0 { l } else { l * l };
        let line = &data[c * p..(c + 1) * p];
        let s: Complex64 = line.iter().zip(&w.mu_star).map(|(v, wi)| v * wi).sum();
        acc += scale * (s.re * uc.re + s.im * uc.im);
    }
    Ok(Some(acc))
}

fn check_order(order: u8) -> Result<()> {
    if order <= 1 {
        Ok(())
    } else {
        Err(Error::Domain(format!("history order must be 0 or 1, got {order}")))
    }
}

/// Precomputed data for repeated transport steps of a fixed size.
#[derive(Debug, Clone)]
pub(crate) struct TransportPlan {
    kind: PlanKind,
}

#[derive(Debug, Clone)]
enum PlanKind {
    Nodes {
        /// Left interpolation node, `None` when `s_i < dt`.
        src: Vec<Option<usize>>,
        frac: Vec<f64>,
        /// Source coefficient: `s_i` for fresh nodes, `dt` otherwise.
        gain: Vec<f64>,
        /// `∫μφ_i` when the plan also serves a memory force.
        mu_weights: Option<Vec<f64>>,
    },
    Moments {
        decay: Vec<f64>,
        /// `(1 - e^{-d dt})/d²`
        gain: Vec<f64>,
        weights: Vec<f64>,
    },
}

/// Memory moments `∫μη` before and after the shift of a step.
pub(crate) struct ShiftMoments {
    pub now: SpectralField,
    pub shifted: SpectralField,
}

impl TransportPlan {
    pub fn new(eta: &HistoryField, kernel: Option<&Kernel>, dt: f64) -> Result<Self> {
        let kind = match &eta.repr {
            Repr::Nodes { lags, .. } => {
                let shifts = lags.shift_plan(dt);
                let mut src = Vec::with_capacity(shifts.len());
                let mut frac = Vec::with_capacity(shifts.len());
                let mut gain = Vec::with_capacity(shifts.len());
                for sh in shifts {
                    match sh {
                        Shift::Fresh { gain: g } => {
                            src.push(None);
                            frac.push(0.0);
                            gain.push(g);
                        }
                        Shift::Interp { src: j, frac: f } => {
                            src.push(Some(j));
                            frac.push(f);
                            gain.push(dt);
                        }
                    }
                }
                PlanKind::Nodes {
                    src,
                    frac,
                    gain,
                    mu_weights: kernel.map(|k| KernelWeights::new(k, lags).mu),
                }
            }
            Repr::Moments { terms, .. } => {
                if let Some(k) = kernel {
                    check_terms(terms, k)?;
                }
                PlanKind::Moments {
                    decay: terms.iter().map(|t| (-t.rate * dt).exp()).collect(),
                    gain: terms
                        .iter()
                        .map(|t| -(-t.rate * dt).exp_m1() / (t.rate * t.rate))
                        .collect(),
                    weights: terms.iter().map(|t| t.amplitude * t.rate).collect(),
                }
            }
        };
        Ok(Self { kind })
    }

    /// `K` such that the memory moment after the step is `shifted + K ū`.
    pub fn source_gain(&self) -> f64 {
        match &self.kind {
            PlanKind::Nodes { gain, mu_weights, .. } => mu_weights
                .as_ref()
                .map_or(0.0, |w| gain.iter().zip(w).map(|(g, wi)| g * wi).sum()),
            PlanKind::Moments { gain, weights, .. } => gain.iter().zip(weights).map(|(g, w)| g * w).sum(),
        }
    }

    /// First half of a step. Node histories are shifted in place; moment
    /// histories are left untouched until `complete`.
    pub fn prepare(&self, eta: &mut HistoryField) -> Option<ShiftMoments> {
        let grid = Arc::clone(&eta.grid);
        match (&self.kind, &mut eta.repr) {
            (
                PlanKind::Nodes {
                    src, frac, mu_weights, ..
                },
                Repr::Nodes { lags, data },
            ) => {
                let p = lags.len();
                let ncoef = grid.coeff_len();
                let mut now = vec![Complex64::default(); ncoef];
                let mut after = vec![Complex64::default(); ncoef];
                for c in 0..ncoef {
                    let line = &mut data[c * p..(c + 1) * p];
                    let (mut acc_now, mut acc_after) = (Complex64::default(), Complex64::default());
                    // descending: node i only reads nodes j, j+1 <= i, still unshifted
                    for i in (0..p).rev() {
                        let old = line[i];
                        let new = match src[i] {
                            Some(j) => line[j] * (1.0 - frac[i]) + line[j + 1] * frac[i],
                            None => Complex64::default(),
                        };
                        line[i] = new;
                        if let Some(w) = mu_weights {
                            acc_now += old * w[i];
                            acc_after += new * w[i];
                        }
                    }
                    now[c] = acc_now;
                    after[c] = acc_after;
                }
                mu_weights.as_ref().map(|_| ShiftMoments {
                    now: SpectralField::from_coeffs(&grid, now).expect("grid length"),
                    shifted: SpectralField::from_coeffs(&grid, after).expect("grid length"),
                })
            }
            (PlanKind::Moments { decay, weights, .. }, Repr::Moments { moments, .. }) => {
                let mut now = SpectralField::zeros(&grid);
                let mut after = SpectralField::zeros(&grid);
                for ((m, e), w) in moments.iter().zip(decay).zip(weights) {
                    now.axpy(*w, m);
                    after.axpy(w * e, m);
                }
                Some(ShiftMoments { now, shifted: after })
            }
            _ => unreachable!("plan built for another representation"),
        }
    }

    /// Second half: adds the source `ū` (the mean velocity over the step).
    pub fn complete(&self, eta: &mut HistoryField, mean: &SpectralField) {
        match (&self.kind, &mut eta.repr) {
            (PlanKind::Nodes { gain, .. }, Repr::Nodes { lags, data }) => {
                let p = lags.len();
                for (c, ub) in mean.coeffs().iter().enumerate() {
                    let line = &mut data[c * p..(c + 1) * p];
                    for (o, g) in line.iter_mut().zip(gain) {
                        *o += ub * g;
                    }
                }
            }
            (PlanKind::Moments { decay, gain, .. }, Repr::Moments { terms, moments, quad }) => {
                for (j, (m, q)) in moments.iter_mut().zip(quad.iter_mut()).enumerate() {
                    let mut next = m.scaled(decay[j]);
                    next.axpy(gain[j], mean);
                    let mut mid = m.clone();
                    mid.axpy(1.0, &next);
                    mid.scale(0.5);
                    let src = 2.0 * gain[j] * terms[j].rate;
                    *q = [
                        decay[j] * q[0] + src * mid.inner(mean, 1.0),
                        decay[j] * q[1] + src * mid.inner(mean, 2.0),
                    ];
                    *m = next;
                }
            }
            _ => unreachable!("plan built for another representation"),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernel::Kernel;

    fn unit_mode(grid: &Arc<Grid>) -> SpectralField {
        let s = std::f64::consts::FRAC_1_SQRT_2;
        SpectralField::single_mode(
            grid,
            [1, 0, 0],
            [Complex64::default(), Complex64::new(s, 0.0), Complex64::default()],
        )
        .unwrap()
    }

    fn setup() -> (Arc<Grid>, Kernel, Arc<LagGrid>) {
        let grid = Grid::new(2, 8).unwrap();
        let k = Kernel::single_exponential(1.0).unwrap();
        let lags = LagGrid::for_kernel(&k, 256, 1e-3, 40.0).unwrap();
        (grid, k, lags)
    }

    #[test]
    fn geometric_grid_shape() {
        let l = LagGrid::geometric(256, 1e-3, 40.0).unwrap();
        assert_eq!(l.len(), 257);
        assert!((l.ds_min() - 1e-3).abs() < 1e-15);
        assert_eq!(l.s_max(), 40.0);
        assert!(l.ratio() > 1.02 && l.ratio() < 1.04);
        let u = LagGrid::geometric(10, 1.0, 5.0).unwrap();
        assert_eq!(u.ratio(), 1.0);
    }

    #[test]
    fn zero_history_is_null() {
        let (grid, k, lags) = setup();
        let eta = HistoryField::init(&grid, &lags, InitialHistory::Zero);
        assert_eq!(history_norm(&eta, &k, 0).unwrap(), 0.0);
        assert_eq!(pi_functional(&eta, &k, 0).unwrap(), 0.0);
        assert_eq!(memory_force(&eta, &k).unwrap().max_amplitude(), 0.0);
    }

    #[test]
    fn constant_past_integrates_exactly() {
        let (grid, _, lags) = setup();
        let e = unit_mode(&grid);
        let past = |_: f64| e.clone();
        let eta = HistoryField::init(&grid, &lags, InitialHistory::FromPast(&past));
        for i in [0, 1, 50, 256] {
            let expect = e.scaled(lags.nodes()[i]);
            assert!((&eta.node(i).unwrap() - &expect).max_amplitude() < 1e-13);
        }
    }

    #[test]
    fn linear_past_is_second_order() {
        let (grid, _, lags) = setup();
        let e = unit_mode(&grid);
        let past = |s: f64| e.scaled(s);
        let eta = HistoryField::init(&grid, &lags, InitialHistory::FromPast(&past));
        for i in [10, 100, 200] {
            let s = lags.nodes()[i];
            let err = (&eta.node(i).unwrap() - &e.scaled(0.5 * s * s)).max_amplitude();
            // trapezoid error of σ ↦ σ is zero; of the cumulative sum it stays at round-off
            assert!(err < 1e-10, "node {i}: {err}");
        }
    }

    #[test]
    fn constant_unit_history_functionals() {
        let (grid, k, lags) = setup();
        let e = unit_mode(&grid);
        let mut eta = HistoryField::zero(&grid, &lags);
        for i in 0..lags.len() {
            eta.set_node(i, &e);
        }
        let f = memory_force(&eta, &k).unwrap();
        assert!((&f - &e.scaled(k.total_mass())).max_amplitude() < 1e-6 * k.total_mass());
        let kappa = k.total_mass();
        for order in [0, 1] {
            let n = history_norm(&eta, &k, order).unwrap();
            assert!((n - kappa.sqrt()).abs() < 1e-8, "order {order}: {n}");
        }
        let pi = pi_functional(&eta, &k, 0).unwrap();
        assert!((pi - 0.5).abs() < 1e-8);
    }

    #[test]
    fn linear_history_norm_against_gamma() {
        let (grid, k, lags) = setup();
        let e = unit_mode(&grid);
        let mut eta = HistoryField::zero(&grid, &lags);
        for (i, &s) in lags.nodes().iter().enumerate() {
            eta.set_node(i, &e.scaled(s));
        }
        let n2 = history_norm(&eta, &k, 0).unwrap().powi(2);
        // ∫_0^40 s² e^{-s} ds, lumped against hat weights
        assert!((n2 - 2.0).abs() < 1e-3, "{n2}");
    }

    #[test]
    fn pure_shift_without_source() {
        let (grid, _, lags) = setup();
        let e = unit_mode(&grid);
        let past = |s: f64| e.scaled((-s).exp());
        let eta = HistoryField::init(&grid, &lags, InitialHistory::FromPast(&past));
        let zero = SpectralField::zeros(&grid);
        let dt = 1e-3;
        let next = eta.advance(&zero, &zero, dt).unwrap();
        assert_eq!(next.node(0).unwrap().max_amplitude(), 0.0);
        for i in [5, 60, 150] {
            let s = lags.nodes()[i];
            let expect = e.scaled(1.0 - (-(s - dt)).exp());
            let err = (&next.node(i).unwrap() - &expect).max_amplitude();
            let ds = lags.nodes()[i] - lags.nodes()[i - 1];
            assert!(err < ds * ds, "node {i}: {err}");
        }
    }

    #[test]
    fn constant_forcing_fills_min_profile() {
        let (grid, _, lags) = setup();
        let c = unit_mode(&grid);
        let dt = 1e-3;
        let mut eta = HistoryField::zero(&grid, &lags);
        let steps = 500;
        for _ in 0..steps {
            eta = eta.advance(&c, &c, dt).unwrap();
        }
        let t = steps as f64 * dt;
        let ds_at_t = t * (lags.ratio() - 1.0) + dt;
        for (i, &s) in lags.nodes().iter().enumerate() {
            let err = (&eta.node(i).unwrap() - &c.scaled(s.min(t))).max_amplitude();
            assert!(err <= 2.0 * (ds_at_t + dt) * c.max_amplitude(), "node {i}: {err}");
        }
    }

    #[test]
    fn nonpositive_step_is_rejected() {
        let (grid, _, lags) = setup();
        let eta = HistoryField::zero(&grid, &lags);
        let z = SpectralField::zeros(&grid);
        assert!(matches!(eta.advance(&z, &z, 0.0), Err(Error::Domain(_))));
    }

    #[test]
    fn oracle_at_time_zero_returns_initial() {
        let (grid, _, lags) = setup();
        let e = unit_mode(&grid);
        let past = |s: f64| e.scaled(s.cos());
        let eta0 = HistoryField::init(&grid, &lags, InitialHistory::FromPast(&past));
        let path = VelocityPath::default();
        assert_eq!(representation_oracle(&path, &eta0, 0.0).unwrap(), eta0);
    }

    #[test]
    fn oracle_needs_covering_path() {
        let (grid, _, lags) = setup();
        let eta0 = HistoryField::zero(&grid, &lags);
        let mut path = VelocityPath::default();
        path.push(0.0, SpectralField::zeros(&grid));
        path.push(0.5, SpectralField::zeros(&grid));
        assert!(matches!(
            representation_oracle(&path, &eta0, 1.0),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn oracle_constant_and_cosine_paths() {
        let (grid, _, lags) = setup();
        let c = unit_mode(&grid);
        let eta0 = HistoryField::zero(&grid, &lags);
        let dt = 1e-3;
        let t = 0.7;
        let omega = 3.0;
        let mut flat = VelocityPath::default();
        let mut wave = VelocityPath::default();
        for i in 0..=700 {
            let tau = i as f64 * dt;
            flat.push(tau, c.clone());
            wave.push(tau, c.scaled((omega * tau).cos()));
        }
        let a = representation_oracle(&flat, &eta0, t).unwrap();
        let b = representation_oracle(&wave, &eta0, t).unwrap();
        for (i, &s) in lags.nodes().iter().enumerate() {
            let err = (&a.node(i).unwrap() - &c.scaled(s.min(t))).max_amplitude();
            assert!(err < 1e-12, "node {i}");
            if s <= t {
                let exact = ((omega * t).sin() - (omega * (t - s)).sin()) / omega;
                let err = (&b.node(i).unwrap() - &c.scaled(exact)).max_amplitude();
                assert!(err < 10.0 * dt * dt, "node {i}: {err}");
            }
        }
    }

    #[test]
    fn moment_closure_homogeneous_and_steady() {
        let grid = Grid::new(2, 8).unwrap();
        let k = Kernel::exponential_sum(vec![ExpTerm::new(0.5, 1.0), ExpTerm::new(0.5, 3.0)]).unwrap();
        let c = unit_mode(&grid);
        let zero = SpectralField::zeros(&grid);
        let dt = 1e-2;
        let mut eta = HistoryField::zero_prony(&grid, &k).unwrap();
        for _ in 0..4000 {
            eta = prony_advance(&eta, &c, &c, dt).unwrap();
        }
        for (m, t) in eta.moments().unwrap().iter().zip(k.exponential_terms().unwrap()) {
            let expect = c.scaled(1.0 / (t.rate * t.rate));
            assert!((m - &expect).max_amplitude() < 1e-12);
        }
        let before = eta.moments().unwrap().to_vec();
        let after = prony_advance(&eta, &zero, &zero, dt).unwrap();
        for ((a, b), t) in after
            .moments()
            .unwrap()
            .iter()
            .zip(&before)
            .zip(k.exponential_terms().unwrap())
        {
            assert!((a - &b.scaled((-t.rate * dt).exp())).max_amplitude() < 1e-15);
        }
    }

    #[test]
    fn moment_closure_rejects_grid_and_tabulated() {
        let (grid, _, lags) = setup();
        let eta = HistoryField::zero(&grid, &lags);
        let z = SpectralField::zeros(&grid);
        assert!(matches!(
            prony_advance(&eta, &z, &z, 1e-3),
            Err(Error::UnsupportedMode(_))
        ));
        let table = crate::kernel::Table::new(vec![0.0, 1.0, 2.0], vec![1.0, 0.5, 0.25]).unwrap();
        let tk = Kernel::tabulated(table).unwrap();
        assert!(matches!(
            HistoryField::zero_prony(&grid, &tk),
            Err(Error::UnsupportedMode(_))
        ));
    }
}
