//! Divergence-free Fourier-Galerkin calculus on the periodic box `[0, 2π)^dim`.
//!
//! Fields are stored only on the retained (dealiased) wavevectors
//! `0 < max_i |k_i| < n/3`; the full `n^dim` lattice is used solely for the
//! pseudospectral evaluation of products. With this truncation the product of
//! two retained fields is computed without aliasing, so the discrete trilinear
//! form inherits the exact skew-symmetry of the continuous one.
//!
//! Norms use the Parseval convention `‖u‖² = Σ_k |û_k|²`, and the Stokes
//! operator acts as multiplication by `λ_k = |k|²` (so `λ₁ = 1`).

mod fft;

use std::fmt;
use std::ops::{Add, Mul, Sub};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use fft::{Direction, LatticeFft};

/// Retained wavevectors of a periodic box and the transform plans used for products.
pub struct Grid {
    dim: usize,
    n: usize,
    kmax: i32,
    wavevectors: Vec<[i32; 3]>,
    lambda: Vec<f64>,
    lattice_index: Vec<usize>,
    negated: Vec<usize>,
    fft: LatticeFft,
}

impl fmt::Debug for Grid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Grid")
            .field("dim", &self.dim)
            .field("n", &self.n)
            .field("modes", &self.wavevectors.len())
            .finish()
    }
}

impl PartialEq for Grid {
    fn eq(&self, other: &Self) -> bool {
        self.dim == other.dim && self.n == other.n
    }
}

impl Grid {
    pub fn new(dim: usize, n: usize) -> Result<Arc<Self>> {
        if dim != 2 && dim != 3 {
            return Err(Error::Domain(format!("dimension must be 2 or 3, got {dim}")));
        }
        if n < 4 || !n.is_power_of_two() {
            return Err(Error::Domain(format!(
                "modes per axis must be a power of two >= 4, got {n}"
            )));
        }
        // largest integer strictly below n/3
        let kmax = ((n + 2) / 3 - 1) as i32;
        let side = 2 * kmax + 1;
        let total = (side as usize).pow(dim as u32);
        let mut wavevectors = Vec::with_capacity(total - 1);
        for flat in 0..total {
            let mut k = [0i32; 3];
            let mut rem = flat;
            for c in (0..dim).rev() {
                k[c] = (rem % side as usize) as i32 - kmax;
                rem /= side as usize;
            }
            if k != [0, 0, 0] {
                wavevectors.push(k);
            }
        }
        let lambda = wavevectors
            .iter()
            .map(|k| k.iter().map(|&v| (v * v) as f64).sum())
            .collect();
        let lattice_index = wavevectors
            .iter()
            .map(|k| (0..dim).fold(0usize, |acc, c| acc * n + (k[c].rem_euclid(n as i32)) as usize))
            .collect();
        let mut grid = Self {
            dim,
            n,
            kmax,
            wavevectors,
            lambda,
            lattice_index,
            negated: Vec::new(),
            fft: LatticeFft::new(dim, n),
        };
        grid.negated = (0..grid.wavevectors.len())
            .map(|m| {
                let k = grid.wavevectors[m];
                grid.mode_index([-k[0], -k[1], -k[2]])
                    .expect("retained set is symmetric")
            })
            .collect();
        Ok(Arc::new(grid))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// Largest retained `|k_i|`.
    pub fn kmax(&self) -> i32 {
        self.kmax
    }

    pub fn box_size(&self) -> f64 {
        2.0 * std::f64::consts::PI
    }

    /// Modes with any `|k_i|` at or above this radius are discarded.
    pub fn dealias_radius(&self) -> f64 {
        self.n as f64 / 3.0
    }

    pub fn mode_count(&self) -> usize {
        self.wavevectors.len()
    }

    /// Number of complex coefficients of a vector field.
    pub fn coeff_len(&self) -> usize {
        self.wavevectors.len() * self.dim
    }

    pub fn wavevector(&self, mode: usize) -> [i32; 3] {
        self.wavevectors[mode]
    }

    pub fn wavevectors(&self) -> &[[i32; 3]] {
        &self.wavevectors
    }

    /// Stokes eigenvalue `|k|²` of each mode.
    pub fn eigenvalues(&self) -> &[f64] {
        &self.lambda
    }

    pub fn negated_mode(&self, mode: usize) -> usize {
        self.negated[mode]
    }

    pub fn mode_index(&self, k: [i32; 3]) -> Option<usize> {
        let kmax = self.kmax;
        if k[self.dim..].iter().any(|&v| v != 0) || k.iter().any(|&v| v.abs() > kmax) {
            return None;
        }
        if k == [0, 0, 0] {
            return None;
        }
        let side = (2 * kmax + 1) as usize;
        let flat = (0..self.dim).fold(0usize, |acc, c| acc * side + (k[c] + kmax) as usize);
        let zero = (0..self.dim).fold(0usize, |acc, _| acc * side + kmax as usize);
        Some(if flat > zero { flat - 1 } else { flat })
    }

    fn lattice_points(&self) -> usize {
        self.fft.len()
    }

    /// Physical coordinates of lattice point `idx`.
    fn lattice_coord(&self, idx: usize) -> [f64; 3] {
        let h = self.box_size() / self.n as f64;
        let mut x = [0.0; 3];
        let mut rem = idx;
        for c in (0..self.dim).rev() {
            x[c] = (rem % self.n) as f64 * h;
            rem /= self.n;
        }
        x
    }

    /// Synthesizes real physical values from spectral scalars, two per transform.
    fn synthesize(&self, spectra: &[Vec<Complex64>]) -> Vec<Vec<f64>> {
        let npts = self.lattice_points();
        let mut out = Vec::with_capacity(spectra.len());
        let mut buf = vec![Complex64::default(); npts];
        for pair in spectra.chunks(2) {
            buf.iter_mut().for_each(|v| *v = Complex64::default());
            for (m, &idx) in self.lattice_index.iter().enumerate() {
                let b = pair.get(1).map_or(Complex64::default(), |s| s[m]);
                buf[idx] = pair[0][m] + Complex64::i() * b;
            }
            self.fft.process(&mut buf, Direction::Inverse);
            out.push(buf.iter().map(|v| v.re).collect());
            if pair.len() == 2 {
                out.push(buf.iter().map(|v| v.im).collect());
            }
        }
        out
    }

    /// Retained Fourier coefficients of real physical scalars, two per transform.
    fn analyze(&self, fields: &[Vec<f64>]) -> Vec<Vec<Complex64>> {
        let npts = self.lattice_points();
        let norm = 1.0 / npts as f64;
        let mut out = Vec::with_capacity(fields.len());
        let mut buf = vec![Complex64::default(); npts];
        for pair in fields.chunks(2) {
            for (x, v) in buf.iter_mut().enumerate() {
                let im = pair.get(1).map_or(0.0, |q| q[x]);
                *v = Complex64::new(pair[0][x], im);
            }
            self.fft.process(&mut buf, Direction::Forward);
            let mut first = Vec::with_capacity(self.mode_count());
            let mut second = Vec::with_capacity(self.mode_count());
            for m in 0..self.mode_count() {
                let z = buf[self.lattice_index[m]] * norm;
                let zc = buf[self.lattice_index[self.negated[m]]].conj() * norm;
                first.push(0.5 * (z + zc));
                second.push(Complex64::new(0.0, -0.5) * (z - zc));
            }
            out.push(first);
            if pair.len() == 2 {
                out.push(second);
            }
        }
        out
    }
}

/// Real, mean-zero vector field stored as Fourier amplitudes on the retained modes.
///
/// Coefficients are laid out mode-major: component `c` of mode `m` sits at
/// `m * dim + c`.
#[derive(Clone)]
pub struct SpectralField {
    grid: Arc<Grid>,
    coeffs: Vec<Complex64>,
}

impl fmt::Debug for SpectralField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SpectralField")
            .field("grid", &self.grid)
            .field("l2", &self.norm(0.0))
            .finish()
    }
}

impl PartialEq for SpectralField {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid && self.coeffs == other.coeffs
    }
}

impl SpectralField {
    pub fn zeros(grid: &Arc<Grid>) -> Self {
        Self {
            grid: Arc::clone(grid),
            coeffs: vec![Complex64::default(); grid.coeff_len()],
        }
    }

    pub fn from_coeffs(grid: &Arc<Grid>, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != grid.coeff_len() {
            return Err(Error::GridMismatch(format!(
                "expected {} coefficients, got {}",
                grid.coeff_len(),
                coeffs.len()
            )));
        }
        Ok(Self {
            grid: Arc::clone(grid),
            coeffs,
        })
    }

    /// Single Fourier pair `a e^{ik·x} + conj(a) e^{-ik·x}`, Leray-projected.
    pub fn single_mode(grid: &Arc<Grid>, k: [i32; 3], amplitude: [Complex64; 3]) -> Result<Self> {
        let mut u = Self::zeros(grid);
        u.add_mode(k, amplitude)?;
        Ok(leray_project(u))
    }

    /// Adds `a e^{ik·x}` and its conjugate partner (not projected).
    pub fn add_mode(&mut self, k: [i32; 3], amplitude: [Complex64; 3]) -> Result<()> {
        let dim = self.grid.dim;
        let m = self
            .grid
            .mode_index(k)
            .ok_or_else(|| Error::Domain(format!("wavevector {k:?} is not a retained mode")))?;
        let mneg = self.grid.negated[m];
        for c in 0..dim {
            self.coeffs[m * dim + c] += amplitude[c];
            self.coeffs[mneg * dim + c] += amplitude[c].conj();
        }
        Ok(())
    }

    /// Samples a real vector function on the lattice and keeps its retained modes.
    pub fn from_physical<F>(grid: &Arc<Grid>, f: F) -> Self
    where
        F: Fn([f64; 3]) -> [f64; 3],
    {
        let dim = grid.dim;
        let npts = grid.lattice_points();
        let mut comps = vec![vec![0.0; npts]; dim];
        for idx in 0..npts {
            let v = f(grid.lattice_coord(idx));
            for c in 0..dim {
                comps[c][idx] = v[c];
            }
        }
        let spectra = grid.analyze(&comps);
        let mut u = Self::zeros(grid);
        for m in 0..grid.mode_count() {
            for c in 0..dim {
                u.coeffs[m * dim + c] = spectra[c][m];
            }
        }
        u
    }

    /// Physical values on the lattice, one vector per component.
    pub fn to_physical(&self) -> Vec<Vec<f64>> {
        let spectra: Vec<Vec<Complex64>> = (0..self.grid.dim).map(|c| self.component(c)).collect();
        self.grid.synthesize(&spectra)
    }

    pub fn grid(&self) -> &Arc<Grid> {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    pub fn into_coeffs(self) -> Vec<Complex64> {
        self.coeffs
    }

    pub fn mode(&self, m: usize) -> &[Complex64] {
        let d = self.grid.dim;
        &self.coeffs[m * d..(m + 1) * d]
    }

    fn component(&self, c: usize) -> Vec<Complex64> {
        let d = self.grid.dim;
        (0..self.grid.mode_count()).map(|m| self.coeffs[m * d + c]).collect()
    }

    pub fn same_grid(&self, other: &Self) -> bool {
        self.grid == other.grid
    }

    pub(crate) fn ensure_same_grid(&self, other: &Self) -> Result<()> {
        if self.same_grid(other) {
            Ok(())
        } else {
            Err(Error::GridMismatch(format!(
                "fields on ({}D, n={}) and ({}D, n={})",
                self.grid.dim, self.grid.n, other.grid.dim, other.grid.n
            )))
        }
    }

    pub fn is_finite(&self) -> bool {
        self.coeffs.iter().all(|z| z.re.is_finite() && z.im.is_finite())
    }

    pub fn scale(&mut self, a: f64) {
        self.coeffs.iter_mut().for_each(|z| *z *= a);
    }

    pub fn scaled(&self, a: f64) -> Self {
        let mut out = self.clone();
        out.scale(a);
        out
    }

    /// `self += a * x`.
    pub fn axpy(&mut self, a: f64, x: &Self) {
        debug_assert!(self.same_grid(x));
        for (y, xv) in self.coeffs.iter_mut().zip(&x.coeffs) {
            *y += xv * a;
        }
    }

    /// Multiplies mode `k` by `factor(λ_k)`.
    pub fn map_modes<F: Fn(f64) -> f64>(&self, factor: F) -> Self {
        let d = self.grid.dim;
        let mut out = self.clone();
        for (m, &lam) in self.grid.lambda.iter().enumerate() {
            let f = factor(lam);
            out.coeffs[m * d..(m + 1) * d].iter_mut().for_each(|z| *z *= f);
        }
        out
    }

    /// `⟨A^{r/2} u, A^{r/2} v⟩`.
    pub fn inner(&self, other: &Self, r: f64) -> f64 {
        debug_assert!(self.same_grid(other));
        let d = self.grid.dim;
        let mut acc = 0.0;
        for (m, &lam) in self.grid.lambda.iter().enumerate() {
            let w = if r == 0.0 { 1.0 } else { lam.powf(r) };
            let mut s = 0.0;
            for c in m * d..(m + 1) * d {
                let (a, b) = (self.coeffs[c], other.coeffs[c]);
                s += a.re * b.re + a.im * b.im;
            }
            acc += w * s;
        }
        acc
    }

    pub fn norm(&self, r: f64) -> f64 {
        self.inner(self, r).sqrt()
    }

    pub fn max_amplitude(&self) -> f64 {
        self.coeffs.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `max_k |k·û_k|`, relative to the largest amplitude.
    pub fn divergence_residual(&self) -> f64 {
        let scale = self.max_amplitude();
        if scale == 0.0 {
            return 0.0;
        }
        let d = self.grid.dim;
        let mut worst: f64 = 0.0;
        for (m, k) in self.grid.wavevectors.iter().enumerate() {
            let mut div = Complex64::default();
            for c in 0..d {
                div += self.coeffs[m * d + c] * k[c] as f64;
            }
            worst = worst.max(div.norm());
        }
        worst / scale
    }

    /// `max_k |û_{-k} - conj(û_k)|`, relative to the largest amplitude.
    pub fn reality_residual(&self) -> f64 {
        let scale = self.max_amplitude();
        if scale == 0.0 {
            return 0.0;
        }
        let d = self.grid.dim;
        let mut worst: f64 = 0.0;
        for m in 0..self.grid.mode_count() {
            let mn = self.grid.negated[m];
            for c in 0..d {
                worst = worst.max((self.coeffs[mn * d + c] - self.coeffs[m * d + c].conj()).norm());
            }
        }
        worst / scale
    }

    /// Replaces each pair `(û_k, û_{-k})` by its Hermitian average.
    pub fn symmetrize(&mut self) {
        let d = self.grid.dim;
        for m in 0..self.grid.mode_count() {
            let mn = self.grid.negated[m];
            if mn < m {
                continue;
            }
            for c in 0..d {
                let avg = 0.5 * (self.coeffs[m * d + c] + self.coeffs[mn * d + c].conj());
                self.coeffs[m * d + c] = avg;
                self.coeffs[mn * d + c] = avg.conj();
            }
        }
    }

    /// Gaussian random solenoidal field supported on `0 < |k| ≤ band`.
    pub fn random<R: Rng + ?Sized>(grid: &Arc<Grid>, band: f64, rng: &mut R) -> Self {
        let d = grid.dim;
        let mut u = Self::zeros(grid);
        for m in 0..grid.mode_count() {
            if grid.lambda[m] > band * band {
                continue;
            }
            for c in 0..d {
                let re: f64 = rng.sample(StandardNormal);
                let im: f64 = rng.sample(StandardNormal);
                u.coeffs[m * d + c] = Complex64::new(re, im);
            }
        }
        u.symmetrize();
        leray_project(u)
    }
}

impl Add for &SpectralField {
    type Output = SpectralField;
    fn add(self, rhs: Self) -> SpectralField {
        let mut out = self.clone();
        out.axpy(1.0, rhs);
        out
    }
}

impl Sub for &SpectralField {
    type Output = SpectralField;
    fn sub(self, rhs: Self) -> SpectralField {
        let mut out = self.clone();
        out.axpy(-1.0, rhs);
        out
    }
}

impl Mul<&SpectralField> for f64 {
    type Output = SpectralField;
    fn mul(self, rhs: &SpectralField) -> SpectralField {
        rhs.scaled(self)
    }
}

/// Leray projection `û_k ← û_k - k (k·û_k)/|k|²`.
pub fn leray_project(mut raw: SpectralField) -> SpectralField {
    project_in_place(&mut raw);
    raw
}

pub(crate) fn project_in_place(u: &mut SpectralField) {
    let d = u.grid.dim;
    let grid = Arc::clone(&u.grid);
    for (m, k) in grid.wavevectors.iter().enumerate() {
        let slot = &mut u.coeffs[m * d..(m + 1) * d];
        let mut kdotu = Complex64::default();
        for c in 0..d {
            kdotu += slot[c] * k[c] as f64;
        }
        let f = kdotu / grid.lambda[m];
        for c in 0..d {
            slot[c] -= f * k[c] as f64;
        }
    }
}

/// `A^{r/2} u`: multiplies mode `k` by `|k|^r`.
pub fn apply_power(u: &SpectralField, r: f64) -> SpectralField {
    if r == 0.0 {
        return u.clone();
    }
    u.map_modes(|lam| lam.powf(0.5 * r))
}

/// `‖u‖_r = ‖A^{r/2} u‖`.
pub fn norm_r(u: &SpectralField, r: f64) -> f64 {
    u.norm(r)
}

/// `B(u, v) = P[(u·∇)v]`, evaluated pseudospectrally.
pub fn bilinear_b(u: &SpectralField, v: &SpectralField) -> Result<SpectralField> {
    u.ensure_same_grid(v)?;
    let grid = Arc::clone(&u.grid);
    let d = grid.dim;
    let nm = grid.mode_count();
    // u_a followed by ∂_a v_c (row a, column c)
    let mut spectra: Vec<Vec<Complex64>> = (0..d).map(|a| u.component(a)).collect();
    for a in 0..d {
        for c in 0..d {
            spectra.push(
                (0..nm)
                    .map(|m| Complex64::new(0.0, grid.wavevectors[m][a] as f64) * v.coeffs[m * d + c])
                    .collect(),
            );
        }
    }
    let phys = grid.synthesize(&spectra);
    let npts = grid.lattice_points();
    let mut products = vec![vec![0.0; npts]; d];
    for (c, prod) in products.iter_mut().enumerate() {
        for a in 0..d {
            let ua = &phys[a];
            let dv = &phys[d + a * d + c];
            for x in 0..npts {
                prod[x] += ua[x] * dv[x];
            }
        }
    }
    let spec = grid.analyze(&products);
    let mut out = SpectralField::zeros(&grid);
    for m in 0..nm {
        for c in 0..d {
            out.coeffs[m * d + c] = spec[c][m];
        }
    }
    project_in_place(&mut out);
    Ok(out)
}

/// `b(u, v, w) = ⟨B(u, v), w⟩`.
pub fn trilinear_b(u: &SpectralField, v: &SpectralField, w: &SpectralField) -> Result<f64> {
    u.ensure_same_grid(w)?;
    Ok(bilinear_b(u, v)?.inner(w, 0.0))
}

/// Margin `‖u‖_c^ϖ ‖u‖_a^{1-ϖ} - ‖u‖_b` of the interpolation inequality, `ϖ = (b-a)/(c-a)`.
pub fn check_interpolation(u: &SpectralField, a: f64, b: f64, c: f64) -> Result<f64> {
    if !(a < b && b < c) {
        return Err(Error::Domain(format!(
            "exponents must satisfy a < b < c, got {a}, {b}, {c}"
        )));
    }
    let w = (b - a) / (c - a);
    Ok(u.norm(c).powf(w) * u.norm(a).powf(1.0 - w) - u.norm(b))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn grid2() -> Arc<Grid> {
        Grid::new(2, 16).unwrap()
    }

    fn c(re: f64) -> Complex64 {
        Complex64::new(re, 0.0)
    }

    #[test]
    fn retained_set() {
        let g = Grid::new(2, 64).unwrap();
        assert_eq!(g.kmax(), 21);
        assert_eq!(g.mode_count(), 43 * 43 - 1);
        let g3 = Grid::new(3, 32).unwrap();
        assert_eq!(g3.kmax(), 10);
        assert!(g3
            .wavevectors()
            .iter()
            .all(|k| k.iter().all(|&v| (v.abs() as f64) < 32.0 / 3.0)));
        for (m, &k) in g3.wavevectors().iter().enumerate() {
            assert_eq!(g3.mode_index(k), Some(m));
        }
        assert_eq!(g3.mode_index([11, 0, 0]), None);
        assert!(Grid::new(2, 48).is_err());
        assert!(Grid::new(4, 16).is_err());
    }

    #[test]
    fn gradients_project_to_zero() {
        let g = grid2();
        let mut raw = SpectralField::zeros(&g);
        for (m, k) in g.wavevectors().iter().enumerate() {
            let phase = Complex64::new(0.3 * m as f64, 1.0);
            raw.coeffs[m * 2] = phase * k[0] as f64;
            raw.coeffs[m * 2 + 1] = phase * k[1] as f64;
        }
        let scale = raw.max_amplitude();
        let p = leray_project(raw);
        assert!(p.max_amplitude() < 1e-14 * scale);
    }

    #[test]
    fn solenoidal_fields_are_fixed() {
        let g = grid2();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let u = SpectralField::random(&g, 5.0, &mut rng);
        let p = leray_project(u.clone());
        assert!((&p - &u).max_amplitude() < 1e-15 * u.max_amplitude().max(1.0));
    }

    #[test]
    fn power_examples() {
        let g = grid2();
        let u = SpectralField::single_mode(&g, [1, 0, 0], [c(0.0), c(0.7), c(0.0)]).unwrap();
        assert_eq!(apply_power(&u, 0.0), u);
        assert_eq!(apply_power(&u, -1.3), u);
        let w = SpectralField::single_mode(&g, [1, 1, 0], [c(0.5), c(-0.5), c(0.0)]).unwrap();
        let a = apply_power(&w, 2.0);
        assert!((&a - &w.scaled(2.0)).max_amplitude() < 1e-15);
    }

    #[test]
    fn unit_mode_norms() {
        let g = grid2();
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let u = SpectralField::single_mode(&g, [0, 1, 0], [c(s), c(0.0), c(0.0)]).unwrap();
        for r in [-2.0, -0.5, 0.0, 1.0, 2.5] {
            assert!((norm_r(&u, r) - 1.0).abs() < 1e-15);
        }
        assert_eq!(norm_r(&SpectralField::zeros(&g), 1.0), 0.0);
    }

    #[test]
    fn taylor_green_self_advection_vanishes() {
        let g = Grid::new(2, 32).unwrap();
        let u = SpectralField::from_physical(&g, |x| [x[0].sin() * x[1].cos(), -x[0].cos() * x[1].sin(), 0.0]);
        // mean square of each component is 1/4
        assert!((u.norm(0.0).powi(2) - 0.5).abs() < 1e-14);
        let b = bilinear_b(&u, &u).unwrap();
        assert!(b.max_amplitude() < 1e-12 * u.max_amplitude());
    }

    #[test]
    fn physical_round_trip() {
        let g = grid2();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let u = SpectralField::random(&g, 4.0, &mut rng);
        let phys = u.to_physical();
        let n = g.n();
        let back = SpectralField::from_physical(&g, |x| {
            let h = 2.0 * std::f64::consts::PI / n as f64;
            let i = (x[0] / h).round() as usize;
            let j = (x[1] / h).round() as usize;
            [phys[0][i * n + j], phys[1][i * n + j], 0.0]
        });
        assert!((&back - &u).max_amplitude() < 1e-13 * u.max_amplitude());
    }

    #[test]
    fn interpolation_margins() {
        let g = grid2();
        let u = SpectralField::single_mode(&g, [2, 1, 0], [c(1.0), c(-2.0), c(0.0)]).unwrap();
        assert!(check_interpolation(&u, -1.0, 0.0, 1.0).unwrap().abs() < 1e-14);
        let mut two = SpectralField::zeros(&g);
        two.add_mode([1, 0, 0], [c(0.0), c(1.0), c(0.0)]).unwrap();
        two.add_mode([0, 2, 0], [c(1.0), c(0.0), c(0.0)]).unwrap();
        assert!(check_interpolation(&two, -1.0, 0.0, 1.0).unwrap() > 1e-3);
        assert!(check_interpolation(&two, 1.0, 0.0, 2.0).is_err());
    }

    #[test]
    fn grid_mismatch_is_reported() {
        let u = SpectralField::zeros(&grid2());
        let v = SpectralField::zeros(&Grid::new(2, 32).unwrap());
        assert!(matches!(bilinear_b(&u, &v), Err(Error::GridMismatch(_))));
    }
}
