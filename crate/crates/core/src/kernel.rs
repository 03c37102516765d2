//! Memory kernels `g` and the quantities derived from them.
//!
//! A kernel is described by its weight `μ = -g'`. Two shapes are supported: a
//! finite sum of decaying exponentials, `g(s) = Σ c_j e^{-d_j s}`, and a table
//! of samples `(s_i, μ_i)` interpolated log-linearly (piecewise exponential)
//! and continued past the last sample by the exponential through the last two
//! samples. Every kernel carries a rescaling parameter `ε ∈ (0, 1]` under which
//! `g_ε(s) = g(s/ε)/ε` and `μ_ε(s) = μ(s/ε)/ε²`.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::quad;

/// Smallest Dafermos rate accepted as admissible.
pub const MIN_DAFERMOS_RATE: f64 = 1e-8;

const QUAD_RTOL: f64 = 1e-12;

/// One term `c e^{-d s}` of an exponential-sum kernel `g`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExpTerm {
    pub amplitude: f64,
    pub rate: f64,
}

impl ExpTerm {
    pub fn new(amplitude: f64, rate: f64) -> Self {
        Self { amplitude, rate }
    }
}

/// Log-linear table of `μ` samples.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table {
    s: Vec<f64>,
    mu: Vec<f64>,
    /// Log-slope of each segment; the last entry is the tail rate.
    #[serde(skip)]
    slopes: Vec<f64>,
    /// `∫_{s_i}^∞ μ`.
    #[serde(skip)]
    tails: Vec<f64>,
}

impl Table {
    pub fn new(s: Vec<f64>, mu: Vec<f64>) -> Result<Self> {
        if s.len() != mu.len() {
            return Err(Error::Kernel("table columns differ in length".into()));
        }
        if s.len() < 2 {
            return Err(Error::Kernel("table needs at least two samples".into()));
        }
        if s[0] < 0.0 || s.iter().any(|v| !v.is_finite()) {
            return Err(Error::Kernel("table lags must be finite and nonnegative".into()));
        }
        for w in s.windows(2) {
            if w[1] <= w[0] {
                return Err(Error::Kernel("table lags must be strictly increasing".into()));
            }
        }
        if mu.iter().any(|&m| !(m > 0.0 && m.is_finite())) {
            return Err(Error::Kernel("table values must be positive and finite".into()));
        }
        for (i, w) in mu.windows(2).enumerate() {
            if w[1] > w[0] {
                return Err(Error::Kernel(format!(
                    "table values increase between rows {} and {}",
                    i,
                    i + 1
                )));
            }
        }
        let n = s.len();
        let mut slopes: Vec<f64> = (0..n - 1)
            .map(|i| (mu[i] / mu[i + 1]).ln() / (s[i + 1] - s[i]))
            .collect();
        let tail_rate = slopes[n - 2];
        slopes.push(tail_rate);
        if tail_rate <= 0.0 {
            return Err(Error::Kernel(
                "table does not decay at its end; tail is not summable".into(),
            ));
        }
        let mut tails = vec![0.0; n];
        tails[n - 1] = mu[n - 1] / tail_rate;
        for i in (0..n - 1).rev() {
            tails[i] = tails[i + 1] + segment_integral(mu[i], slopes[i], s[i + 1] - s[i]);
        }
        Ok(Self { s, mu, slopes, tails })
    }

    /// Reads a two-column `s,mu` CSV. A non-numeric first line is treated as a header.
    pub fn from_csv(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::parse_csv(&text)
    }

    pub fn parse_csv(text: &str) -> Result<Self> {
        let mut s = Vec::new();
        let mut mu = Vec::new();
        for (lineno, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let mut cols = line.split(',').map(str::trim);
            let (a, b) = match (cols.next(), cols.next(), cols.next()) {
                (Some(a), Some(b), None) => (a, b),
                _ => {
                    return Err(Error::Format(format!(
                        "kernel table line {}: expected two columns",
                        lineno + 1
                    )))
                }
            };
            match (a.parse::<f64>(), b.parse::<f64>()) {
                (Ok(x), Ok(y)) => {
                    s.push(x);
                    mu.push(y);
                }
                _ if s.is_empty() => continue,
                _ => return Err(Error::Format(format!("kernel table line {}: not a number", lineno + 1))),
            }
        }
        Self::new(s, mu)
    }

    pub fn lags(&self) -> &[f64] {
        &self.s
    }

    pub fn values(&self) -> &[f64] {
        &self.mu
    }

    /// Segment index governing `s` (`None` before the first sample).
    fn locate(&self, s: f64) -> Option<usize> {
        if s < self.s[0] {
            return None;
        }
        let n = self.s.len();
        if s >= self.s[n - 1] {
            return Some(n - 1);
        }
        Some(self.s.partition_point(|&x| x <= s) - 1)
    }

    fn mu(&self, s: f64) -> (f64, f64) {
        let (base, rate, s0) = match self.locate(s) {
            Some(i) => (self.mu[i], self.slopes[i], self.s[i]),
            None => (self.mu[0], self.slopes[0], self.s[0]),
        };
        let m = base * (-rate * (s - s0)).exp();
        (m, -rate * m)
    }

    fn g(&self, s: f64) -> f64 {
        match self.locate(s) {
            Some(i) => {
                let (m, _) = self.mu(s);
                if i == self.s.len() - 1 {
                    m / self.slopes[i]
                } else {
                    segment_integral(m, self.slopes[i], self.s[i + 1] - s) + self.tails[i + 1]
                }
            }
            None => {
                let (m, _) = self.mu(s);
                segment_integral(m, self.slopes[0], self.s[0] - s) + self.tails[0]
            }
        }
    }

    fn min_slope(&self) -> f64 {
        self.slopes.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

/// `∫_0^h m e^{-r x} dx`.
fn segment_integral(m: f64, r: f64, h: f64) -> f64 {
    let x = r * h;
    if x.abs() < 1e-8 {
        m * h * (1.0 - 0.5 * x)
    } else {
        m * (-(-x).exp_m1()) / r
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "variant", rename_all = "snake_case")]
pub enum KernelShape {
    ExponentialSum { terms: Vec<ExpTerm> },
    Tabulated { table: Table },
}

/// Values of the kernel at one lag.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct KernelValue {
    pub g: f64,
    pub mu: f64,
    pub mu_prime: f64,
}

/// Split of the weight at `s_*`, where half of the total mass has accumulated.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TailSplit {
    pub s_star: f64,
    /// `μ(s_*)`, the constant value of `μ_*` on `(0, s_*]`.
    pub mu_at_split: f64,
}

/// An admissible memory kernel.
///
/// Immutable once built; the derived constants (mass, Dafermos rate, split
/// point) are computed at construction.
#[derive(Debug, Clone, PartialEq)]
pub struct Kernel {
    shape: KernelShape,
    epsilon: f64,
    kappa: f64,
    delta: f64,
    split: TailSplit,
}

impl Kernel {
    pub fn exponential_sum(terms: Vec<ExpTerm>) -> Result<Self> {
        validate_terms(&terms)?;
        Self::build(KernelShape::ExponentialSum { terms }, 1.0)
    }

    /// `g(s) = e^{-s}`.
    pub fn single_exponential(rate: f64) -> Result<Self> {
        Self::exponential_sum(vec![ExpTerm::new(rate, rate)])
    }

    pub fn tabulated(table: Table) -> Result<Self> {
        Self::build(KernelShape::Tabulated { table }, 1.0)
    }

    pub fn from_shape(shape: KernelShape, epsilon: f64) -> Result<Self> {
        let shape = match shape {
            // rebuild derived columns that are not serialized
            KernelShape::Tabulated { table } => KernelShape::Tabulated {
                table: Table::new(table.s, table.mu)?,
            },
            KernelShape::ExponentialSum { terms } => {
                validate_terms(&terms)?;
                KernelShape::ExponentialSum { terms }
            }
        };
        check_epsilon(epsilon)?;
        Self::build(shape, epsilon)
    }

    fn build(shape: KernelShape, epsilon: f64) -> Result<Self> {
        let mut k = Self {
            shape,
            epsilon,
            kappa: f64::NAN,
            delta: f64::NAN,
            split: TailSplit {
                s_star: f64::NAN,
                mu_at_split: f64::NAN,
            },
        };
        let delta = k.unscaled_rate() / epsilon;
        if !(delta >= MIN_DAFERMOS_RATE) {
            return Err(Error::Kernel(format!(
                "Dafermos rate {delta:e} is below the admissibility floor {MIN_DAFERMOS_RATE:e}"
            )));
        }
        k.delta = delta;
        let kappa = quad::integrate_to_infinity(|s| k.raw_mu(s).0, 0.0, QUAD_RTOL) / epsilon;
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::Kernel("total mass does not converge".into()));
        }
        k.kappa = kappa;
        k.split = k.compute_split();
        Ok(k)
    }

    pub fn shape(&self) -> &KernelShape {
        &self.shape
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    /// `μ` and `μ'` of the unscaled kernel.
    fn raw_mu(&self, s: f64) -> (f64, f64) {
        match &self.shape {
            KernelShape::ExponentialSum { terms } => terms.iter().fold((0.0, 0.0), |acc, t| {
                let e = t.amplitude * (-t.rate * s).exp();
                (acc.0 + t.rate * e, acc.1 - t.rate * t.rate * e)
            }),
            KernelShape::Tabulated { table } => table.mu(s),
        }
    }

    fn raw_g(&self, s: f64) -> f64 {
        match &self.shape {
            KernelShape::ExponentialSum { terms } => terms.iter().map(|t| t.amplitude * (-t.rate * s).exp()).sum(),
            KernelShape::Tabulated { table } => table.g(s),
        }
    }

    fn unscaled_rate(&self) -> f64 {
        match &self.shape {
            KernelShape::ExponentialSum { terms } => terms.iter().map(|t| t.rate).fold(f64::INFINITY, f64::min),
            KernelShape::Tabulated { table } => table.min_slope(),
        }
    }

    pub fn evaluate(&self, s: f64) -> Result<KernelValue> {
        if !(s >= 0.0) {
            return Err(Error::Domain(format!("kernel lag must be nonnegative, got {s}")));
        }
        Ok(self.eval_unchecked(s))
    }

    pub(crate) fn eval_unchecked(&self, s: f64) -> KernelValue {
        let e = self.epsilon;
        let x = s / e;
        let (mu, mu_prime) = self.raw_mu(x);
        KernelValue {
            g: self.raw_g(x) / e,
            mu: mu / (e * e),
            mu_prime: mu_prime / (e * e * e),
        }
    }

    pub fn mu(&self, s: f64) -> f64 {
        self.eval_unchecked(s).mu
    }

    pub fn mu_prime(&self, s: f64) -> f64 {
        self.eval_unchecked(s).mu_prime
    }

    pub fn g(&self, s: f64) -> f64 {
        self.eval_unchecked(s).g
    }

    /// `κ = ∫_0^∞ μ`.
    pub fn total_mass(&self) -> f64 {
        self.kappa
    }

    /// Largest `δ` with `μ' + δ μ ≤ 0`.
    pub fn dafermos_rate(&self) -> f64 {
        self.delta
    }

    /// `∫_0^∞ g`, equal to one for a normalized kernel.
    pub fn g_mass(&self) -> f64 {
        quad::integrate_to_infinity(|s| self.g(s), 0.0, QUAD_RTOL)
    }

    /// The same kernel scaled so that `∫ g = 1`.
    pub fn normalized(&self) -> Result<Self> {
        let m = self.g_mass() * self.epsilon;
        let shape = match &self.shape {
            KernelShape::ExponentialSum { terms } => KernelShape::ExponentialSum {
                terms: terms.iter().map(|t| ExpTerm::new(t.amplitude / m, t.rate)).collect(),
            },
            KernelShape::Tabulated { table } => KernelShape::Tabulated {
                table: Table::new(table.s.clone(), table.mu.iter().map(|v| v / m).collect())?,
            },
        };
        Self::from_shape(shape, self.epsilon)
    }

    pub fn tail_split(&self) -> TailSplit {
        self.split
    }

    fn compute_split(&self) -> TailSplit {
        let half = 0.5 * self.kappa;
        // ∫_0^s μ = κ - g(s); g(0) = κ up to quadrature error
        let g0 = self.g(0.0);
        let cumulative = |s: f64| g0 - self.g(s) - half;
        let mut hi = 1.0 / self.delta;
        while cumulative(hi) < 0.0 {
            hi *= 2.0;
        }
        let s_star = quad::bisect(cumulative, 0.0, hi, 1e-13 * hi.max(1.0));
        TailSplit {
            s_star,
            mu_at_split: self.mu(s_star),
        }
    }

    /// `μ_*(s)`: `μ(s_*)` up to the split point, `μ(s)` beyond it.
    pub fn mu_star(&self, s: f64) -> f64 {
        if s <= self.split.s_star {
            self.split.mu_at_split
        } else {
            self.mu(s)
        }
    }

    /// `g_ε(s) = g(s/ε)/ε` relative to the unscaled kernel.
    pub fn rescale(&self, eps: f64) -> Result<Self> {
        check_epsilon(eps)?;
        Self::build(self.shape.clone(), eps)
    }

    /// Effective terms `(c/ε, d/ε)` of an exponential-sum kernel.
    pub fn exponential_terms(&self) -> Option<Vec<ExpTerm>> {
        match &self.shape {
            KernelShape::ExponentialSum { terms } => Some(
                terms
                    .iter()
                    .map(|t| ExpTerm::new(t.amplitude / self.epsilon, t.rate / self.epsilon))
                    .collect(),
            ),
            KernelShape::Tabulated { .. } => None,
        }
    }
}

fn validate_terms(terms: &[ExpTerm]) -> Result<()> {
    if terms.is_empty() {
        return Err(Error::Kernel("exponential sum needs at least one term".into()));
    }
    for t in terms {
        if !(t.amplitude > 0.0 && t.amplitude.is_finite()) {
            return Err(Error::Kernel(format!("amplitude {} is not positive", t.amplitude)));
        }
        if !(t.rate > 0.0 && t.rate.is_finite()) {
            return Err(Error::Kernel(format!("rate {} is not positive", t.rate)));
        }
    }
    Ok(())
}

fn check_epsilon(eps: f64) -> Result<()> {
    if eps > 0.0 && eps <= 1.0 {
        Ok(())
    } else {
        Err(Error::Domain(format!(
            "rescaling parameter must lie in (0, 1], got {eps}"
        )))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn two_term() -> Kernel {
        Kernel::exponential_sum(vec![ExpTerm::new(0.5, 1.0), ExpTerm::new(0.5, 3.0)]).unwrap()
    }

    fn sampled_exponential() -> Kernel {
        let s: Vec<f64> = (0..=2000).map(|i| i as f64 * 0.01).collect();
        let mu = s.iter().map(|x| (-x).exp()).collect();
        Kernel::tabulated(Table::new(s, mu).unwrap()).unwrap()
    }

    #[test]
    fn single_exponential_at_origin() {
        let k = Kernel::single_exponential(1.0).unwrap();
        let v = k.evaluate(0.0).unwrap();
        assert_eq!((v.g, v.mu, v.mu_prime), (1.0, 1.0, -1.0));
    }

    #[test]
    fn single_exponential_far_tail() {
        let k = Kernel::single_exponential(1.0).unwrap();
        let v = k.evaluate(50.0).unwrap();
        assert!(v.g < 1e-20 && v.mu < 1e-20 && v.mu_prime.abs() < 1e-20);
    }

    #[test]
    fn two_term_weight_at_one() {
        let k = two_term();
        let expect = 0.5 * (-1f64).exp() + 1.5 * (-3f64).exp();
        assert!((k.mu(1.0) - expect).abs() < 1e-15);
        // centered difference of g
        let h = 1e-5;
        let fd = -(k.g(1.0 + h) - k.g(1.0 - h)) / (2.0 * h);
        assert!((fd - expect).abs() < 1e-9);
    }

    #[test]
    fn negative_lag_is_rejected() {
        let k = Kernel::single_exponential(1.0).unwrap();
        assert!(matches!(k.evaluate(-1e-3), Err(Error::Domain(_))));
    }

    #[test]
    fn total_masses() {
        assert!((Kernel::single_exponential(1.0).unwrap().total_mass() - 1.0).abs() < 1e-10);
        assert!((Kernel::single_exponential(2.0).unwrap().total_mass() - 2.0).abs() < 1e-10);
        let k = Kernel::single_exponential(1.0).unwrap();
        for eps in [0.5, 0.25] {
            let r = k.rescale(eps).unwrap();
            assert!((r.total_mass() - 1.0 / eps).abs() < 1e-9);
        }
    }

    #[test]
    fn dafermos_rates() {
        assert_eq!(Kernel::single_exponential(2.0).unwrap().dafermos_rate(), 2.0);
        assert_eq!(two_term().dafermos_rate(), 1.0);
        assert!((sampled_exponential().dafermos_rate() - 1.0).abs() < 1e-3);
    }

    #[test]
    fn split_of_unit_exponential() {
        let k = Kernel::single_exponential(1.0).unwrap();
        let split = k.tail_split();
        assert!((split.s_star - 2f64.ln()).abs() < 1e-10);
        assert!((k.mu_star(0.0) - 0.5).abs() < 1e-10);
        assert!((k.mu_star(2.0 * split.s_star) - 0.25).abs() < 1e-10);
    }

    #[test]
    fn rescale_identity_and_values() {
        let k = two_term();
        let same = k.rescale(1.0).unwrap();
        for i in 0..20 {
            let s = 0.37 * i as f64;
            assert_eq!(k.evaluate(s).unwrap(), same.evaluate(s).unwrap());
        }
        let e = Kernel::single_exponential(1.0).unwrap().rescale(0.5).unwrap();
        assert!((e.mu(0.0) - 4.0).abs() < 1e-15);
        let q = Kernel::single_exponential(1.0).unwrap().rescale(0.25).unwrap();
        assert!((q.g_mass() - 1.0).abs() < 1e-9);
    }

    #[test]
    fn rescale_domain() {
        let k = two_term();
        assert!(k.rescale(0.0).is_err());
        assert!(k.rescale(1.5).is_err());
        assert!(k.rescale(-0.1).is_err());
    }

    #[test]
    fn table_validation() {
        assert!(Table::new(vec![0.0, 1.0, 2.0], vec![1.0, 2.0, 0.5]).is_err());
        assert!(Table::new(vec![0.0, 0.0], vec![1.0, 0.5]).is_err());
        assert!(Table::new(vec![0.0, 1.0], vec![1.0, 1.0]).is_err());
        // flat segment: valid table, non-admissible kernel
        let flat = Table::new(vec![0.0, 1.0, 2.0], vec![1.0, 1.0, 0.5]).unwrap();
        assert!(matches!(Kernel::tabulated(flat), Err(Error::Kernel(_))));
    }

    #[test]
    fn table_csv_with_header() {
        let t = Table::parse_csv("s,mu\n0,1\n1,0.5\n2,0.25\n").unwrap();
        assert_eq!(t.lags(), &[0.0, 1.0, 2.0]);
        assert!(Table::parse_csv("0,1\n1,x\n").is_err());
    }

    #[test]
    fn table_g_matches_tail_integral() {
        let k = sampled_exponential();
        for s in [0.0, 0.5, 3.3, 19.99, 25.0] {
            assert!((k.g(s) - (-s).exp()).abs() < 1e-12, "s = {s}");
        }
        assert!((k.total_mass() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn normalization() {
        let k = two_term();
        assert!((k.g_mass() - (0.5 + 0.5 / 3.0)).abs() < 1e-10);
        let n = k.normalized().unwrap();
        assert!((n.g_mass() - 1.0).abs() < 1e-10);
        assert_eq!(n.dafermos_rate(), 1.0);
    }

    #[test]
    fn shape_round_trips_through_json() {
        let k = sampled_exponential();
        let text = serde_json::to_string(k.shape()).unwrap();
        let back: KernelShape = serde_json::from_str(&text).unwrap();
        let k2 = Kernel::from_shape(back, 1.0).unwrap();
        assert_eq!(k.mu(3.21), k2.mu(3.21));
    }
}
