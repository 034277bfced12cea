//! Discretized one-dimensional Hilbert space.
//!
//! States live on a uniform grid with either Dirichlet walls (`Boundary::Box`,
//! boundary points excluded) or periodic wraparound (`Boundary::Ring`). The
//! inner product is the rectangle rule `<a|b> = sum(conj(a_k) b_k) dx`, so the
//! identity observable has unit expectation in every normalized state.
//!
//! Every observable in this module is at most tridiagonal (plus one wrap
//! entry on a ring), and is stored as a real diagonal and the upper band.
//! The lower band is never stored, which makes Hermiticity exact.

use std::ops::Range;

use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub type C64 = Complex64;

/// Smallest grid accepted by [`Grid::new`].
pub const MIN_POINTS: usize = 8;

/// Norm below which a state is considered identically zero.
pub const ZERO_NORM: f64 = 1e-14;

/// Largest imaginary residual tolerated in an expectation value.
pub const IMAG_LEAK_TOL: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HilbertError {
    #[error("invalid grid: {0}")]
    InvalidGrid(String),
    #[error("state has zero norm ({0:e})")]
    ZeroState(f64),
    #[error("operands live on different grids")]
    GridMismatch,
    #[error("expectation value has imaginary part {0:e}; observable is not Hermitian")]
    NonHermitianLeak(f64),
    #[error("cell {start}..{end} is empty")]
    EmptyCell { start: usize, end: usize },
    #[error("cell {start}..{end} exceeds grid of {n_points} points")]
    CellOutOfRange { start: usize, end: usize, n_points: usize },
    #[error("expected {expected} values, got {got}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("invalid physical constant: {0}")]
    InvalidConstant(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Boundary {
    /// Dirichlet walls at `x_min` and `x_max`; the wall points are not stored.
    Box,
    /// Periodic: `x_max` is identified with `x_min`.
    Ring,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid {
    n_points: usize,
    x_min: f64,
    x_max: f64,
    boundary: Boundary,
}

impl Grid {
    pub fn new(n_points: usize, x_min: f64, x_max: f64, boundary: Boundary) -> Result<Self, HilbertError> {
        if n_points < MIN_POINTS {
            return Err(HilbertError::InvalidGrid(format!("n_points must be at least {MIN_POINTS}, got {n_points}")));
        }
        if !(x_min.is_finite() && x_max.is_finite() && x_max > x_min) {
            return Err(HilbertError::InvalidGrid(format!("need finite x_min < x_max, got [{x_min}, {x_max}]")));
        }
        Ok(Self { n_points, x_min, x_max, boundary })
    }

    pub fn boxed(n_points: usize, x_min: f64, x_max: f64) -> Result<Self, HilbertError> {
        Self::new(n_points, x_min, x_max, Boundary::Box)
    }

    pub fn ring(n_points: usize, x_min: f64, x_max: f64) -> Result<Self, HilbertError> {
        Self::new(n_points, x_min, x_max, Boundary::Ring)
    }

    pub fn n_points(&self) -> usize {
        self.n_points
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn boundary(&self) -> Boundary {
        self.boundary
    }

    pub fn is_ring(&self) -> bool {
        self.boundary == Boundary::Ring
    }

    pub fn length(&self) -> f64 {
        self.x_max - self.x_min
    }

    pub fn dx(&self) -> f64 {
        match self.boundary {
            Boundary::Box => self.length() / (self.n_points + 1) as f64,
            Boundary::Ring => self.length() / self.n_points as f64,
        }
    }

    /// Coordinate of grid point `k`.
    pub fn point(&self, k: usize) -> f64 {
        match self.boundary {
            Boundary::Box => self.x_min + (k + 1) as f64 * self.dx(),
            Boundary::Ring => self.x_min + k as f64 * self.dx(),
        }
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n_points).map(|k| self.point(k)).collect()
    }

    fn check_cell(&self, cell: &Range<usize>) -> Result<(), HilbertError> {
        if cell.start >= cell.end {
            return Err(HilbertError::EmptyCell { start: cell.start, end: cell.end });
        }
        if cell.end > self.n_points {
            return Err(HilbertError::CellOutOfRange { start: cell.start, end: cell.end, n_points: self.n_points });
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhysicalConstants {
    pub hbar: f64,
    pub mass: f64,
    /// Pointer mass; `f64::INFINITY` freezes the pointer's free dynamics.
    pub pointer_mass: f64,
}

impl Default for PhysicalConstants {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0, pointer_mass: f64::INFINITY }
    }
}

impl PhysicalConstants {
    pub fn new(hbar: f64, mass: f64, pointer_mass: f64) -> Result<Self, HilbertError> {
        let c = Self { hbar, mass, pointer_mass };
        c.validate()?;
        Ok(c)
    }

    pub fn validate(&self) -> Result<(), HilbertError> {
        if !(self.hbar.is_finite() && self.hbar > 0.0) {
            return Err(HilbertError::InvalidConstant(format!("hbar must be positive, got {}", self.hbar)));
        }
        if !(self.mass.is_finite() && self.mass > 0.0) {
            return Err(HilbertError::InvalidConstant(format!("mass must be positive, got {}", self.mass)));
        }
        if self.pointer_mass.is_nan() || self.pointer_mass <= 0.0 {
            return Err(HilbertError::InvalidConstant(format!("pointer_mass must be positive, got {}", self.pointer_mass)));
        }
        Ok(())
    }
}

/// Complex amplitudes on a grid, in units of length^(-1/2).
#[derive(Clone, Debug, PartialEq)]
pub struct WaveFunction {
    grid: Grid,
    amplitudes: Vec<C64>,
}

impl WaveFunction {
    pub fn new(grid: Grid, amplitudes: Vec<C64>) -> Result<Self, HilbertError> {
        if amplitudes.len() != grid.n_points() {
            return Err(HilbertError::LengthMismatch { expected: grid.n_points(), got: amplitudes.len() });
        }
        Ok(Self { grid, amplitudes })
    }

    pub fn from_fn(grid: Grid, f: impl Fn(f64) -> C64) -> Self {
        let amplitudes = grid.points().into_iter().map(f).collect();
        Self { grid, amplitudes }
    }

    pub fn from_real(grid: Grid, values: &[f64]) -> Result<Self, HilbertError> {
        Self::new(grid, values.iter().map(|&v| C64::new(v, 0.0)).collect())
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn amplitudes(&self) -> &[C64] {
        &self.amplitudes
    }

    pub fn into_amplitudes(self) -> Vec<C64> {
        self.amplitudes
    }

    pub fn norm_sqr(&self) -> f64 {
        self.amplitudes.iter().map(|a| a.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    pub fn norm(&self) -> f64 {
        self.norm_sqr().sqrt()
    }

    /// Rescale to unit norm. Fails with `ZeroState` below [`ZERO_NORM`].
    pub fn normalize(mut self) -> Result<Self, HilbertError> {
        let norm = self.norm();
        if !(norm >= ZERO_NORM) {
            return Err(HilbertError::ZeroState(norm));
        }
        let inv = 1.0 / norm;
        self.amplitudes.iter_mut().for_each(|a| *a *= inv);
        Ok(self)
    }

    /// `<self|other>` with the rectangle-rule weight.
    pub fn inner(&self, other: &WaveFunction) -> Result<C64, HilbertError> {
        if self.grid != other.grid {
            return Err(HilbertError::GridMismatch);
        }
        let sum: C64 = self.amplitudes.iter().zip(&other.amplitudes).map(|(a, b)| a.conj() * b).sum();
        Ok(sum * self.grid.dx())
    }

    /// Multiply by a global phase `exp(i alpha)`.
    pub fn with_phase(mut self, alpha: f64) -> Self {
        let phase = C64::from_polar(1.0, alpha);
        self.amplitudes.iter_mut().for_each(|a| *a *= phase);
        self
    }

    pub fn scaled(mut self, factor: f64) -> Self {
        self.amplitudes.iter_mut().for_each(|a| *a *= factor);
        self
    }
}

/// Hermitian operator with bandwidth one on a grid.
///
/// `upper[k]` is the `(k, k+1)` entry; on a ring `upper[n-1]` is the wrap
/// entry `(n-1, 0)`. The `(k+1, k)` entries are the conjugates, produced on
/// read.
#[derive(Clone, Debug, PartialEq)]
pub struct HermitianObservable {
    grid: Grid,
    diag: Vec<f64>,
    upper: Vec<C64>,
    label: String,
}

fn band_len(grid: &Grid) -> usize {
    match grid.boundary() {
        Boundary::Box => grid.n_points() - 1,
        Boundary::Ring => grid.n_points(),
    }
}

impl HermitianObservable {
    pub fn from_parts(grid: Grid, diag: Vec<f64>, upper: Vec<C64>, label: impl Into<String>) -> Result<Self, HilbertError> {
        if diag.len() != grid.n_points() {
            return Err(HilbertError::LengthMismatch { expected: grid.n_points(), got: diag.len() });
        }
        if upper.len() != band_len(&grid) {
            return Err(HilbertError::LengthMismatch { expected: band_len(&grid), got: upper.len() });
        }
        Ok(Self { grid, diag, upper, label: label.into() })
    }

    pub fn diagonal(grid: Grid, diag: Vec<f64>, label: impl Into<String>) -> Result<Self, HilbertError> {
        let upper = vec![C64::new(0.0, 0.0); band_len(&grid)];
        Self::from_parts(grid, diag, upper, label)
    }

    pub fn identity(grid: Grid) -> Self {
        Self::diagonal(grid, vec![1.0; grid.n_points()], "identity").expect("lengths match")
    }

    pub fn position(grid: Grid) -> Self {
        Self::diagonal(grid, grid.points(), "x").expect("lengths match")
    }

    pub fn position_squared(grid: Grid) -> Self {
        let d = grid.points().into_iter().map(|x| x * x).collect();
        Self::diagonal(grid, d, "x^2").expect("lengths match")
    }

    pub fn potential(grid: Grid, values: &[f64]) -> Result<Self, HilbertError> {
        Self::diagonal(grid, values.to_vec(), "V")
    }

    /// Central-difference kinetic energy `-(hbar^2/2m) d^2/dx^2`.
    ///
    /// On a ring, `flux` (in flux quanta) threads the loop as a uniform
    /// Peierls phase `exp(-i 2 pi flux / n)` on every hopping.
    pub fn kinetic(grid: Grid, constants: &PhysicalConstants, flux: f64) -> Self {
        let n = grid.n_points();
        let dx = grid.dx();
        let c = constants.hbar * constants.hbar / (2.0 * constants.mass * dx * dx);
        let hop =
            if grid.is_ring() { -c * C64::from_polar(1.0, -std::f64::consts::TAU * flux / n as f64) } else { C64::new(-c, 0.0) };
        Self { grid, diag: vec![2.0 * c; n], upper: vec![hop; band_len(&grid)], label: "kinetic".into() }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn with_label(mut self, label: impl Into<String>) -> Self {
        self.label = label.into();
        self
    }

    pub fn diag(&self) -> &[f64] {
        &self.diag
    }

    pub fn upper(&self) -> &[C64] {
        &self.upper
    }

    pub fn is_diagonal(&self) -> bool {
        self.upper.iter().all(|u| *u == C64::new(0.0, 0.0))
    }

    /// Matrix entry `(i, j)`.
    pub fn entry(&self, i: usize, j: usize) -> C64 {
        let n = self.grid.n_points();
        let zero = C64::new(0.0, 0.0);
        if i == j {
            return C64::new(self.diag[i], 0.0);
        }
        if j == i + 1 {
            return self.upper[i];
        }
        if i == j + 1 {
            return self.upper[j].conj();
        }
        if self.grid.is_ring() {
            if i == n - 1 && j == 0 {
                return self.upper[n - 1];
            }
            if i == 0 && j == n - 1 {
                return self.upper[n - 1].conj();
            }
        }
        zero
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        let n = self.grid.n_points();
        DMatrix::from_fn(n, n, |i, j| self.entry(i, j))
    }

    /// Largest entry of `M - M^H`. Zero for every observable built here.
    pub fn hermiticity_defect(&self) -> f64 {
        let m = self.to_dense();
        let d = &m - m.adjoint();
        d.iter().map(|z| z.norm()).fold(0.0, f64::max)
    }

    /// `out = M v`.
    pub fn apply_into(&self, v: &[C64], out: &mut [C64]) {
        let n = self.grid.n_points();
        for k in 0..n {
            out[k] = v[k] * self.diag[k];
        }
        for k in 0..n - 1 {
            let u = self.upper[k];
            out[k] += u * v[k + 1];
            out[k + 1] += u.conj() * v[k];
        }
        if self.grid.is_ring() {
            let u = self.upper[n - 1];
            out[n - 1] += u * v[0];
            out[0] += u.conj() * v[n - 1];
        }
    }

    pub fn apply(&self, v: &[C64]) -> Vec<C64> {
        let mut out = vec![C64::new(0.0, 0.0); v.len()];
        self.apply_into(v, &mut out);
        out
    }

    pub fn apply_state(&self, psi: &WaveFunction) -> Result<WaveFunction, HilbertError> {
        if psi.grid() != &self.grid {
            return Err(HilbertError::GridMismatch);
        }
        Ok(WaveFunction { grid: self.grid, amplitudes: self.apply(psi.amplitudes()) })
    }

    /// `self + factor * other`.
    pub fn add_scaled(&self, other: &HermitianObservable, factor: f64) -> Result<Self, HilbertError> {
        if self.grid != other.grid {
            return Err(HilbertError::GridMismatch);
        }
        let diag = self.diag.iter().zip(&other.diag).map(|(a, b)| a + factor * b).collect();
        let upper = self.upper.iter().zip(&other.upper).map(|(a, b)| a + b * factor).collect();
        Ok(Self { grid: self.grid, diag, upper, label: format!("{} + {}*{}", self.label, factor, other.label) })
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self {
            grid: self.grid,
            diag: self.diag.iter().map(|d| d * factor).collect(),
            upper: self.upper.iter().map(|u| u * factor).collect(),
            label: format!("{}*{}", factor, self.label),
        }
    }

    /// Shift the spectrum by a constant.
    pub fn shifted(&self, offset: f64) -> Self {
        let mut out = self.clone();
        out.diag.iter_mut().for_each(|d| *d += offset);
        out
    }
}

/// `<psi|A|psi>` with the rectangle-rule weight.
pub fn expectation(obs: &HermitianObservable, psi: &WaveFunction) -> Result<f64, HilbertError> {
    if obs.grid() != psi.grid() {
        return Err(HilbertError::GridMismatch);
    }
    let a_psi = obs.apply(psi.amplitudes());
    let value: C64 = psi.amplitudes().iter().zip(&a_psi).map(|(p, q)| p.conj() * q).sum::<C64>() * psi.grid().dx();
    if value.im.abs() >= IMAG_LEAK_TOL {
        return Err(HilbertError::NonHermitianLeak(value.im));
    }
    Ok(value.re)
}

/// Normalized projector onto a contiguous cell: `1/v` on the cell, zero
/// elsewhere, with `v = len(cell) * dx`.
pub fn cell_projector(grid: &Grid, cell: Range<usize>) -> Result<HermitianObservable, HilbertError> {
    grid.check_cell(&cell)?;
    let volume = cell.len() as f64 * grid.dx();
    let mut diag = vec![0.0; grid.n_points()];
    diag[cell.clone()].iter_mut().for_each(|d| *d = 1.0 / volume);
    HermitianObservable::diagonal(*grid, diag, format!("P[{}..{}]", cell.start, cell.end))
}

/// Cell-averaged current `(hbar/2mi)(A D + D A)` with `A` the normalized cell
/// projector and `D` the central difference (wrapping on a ring, zero-padded
/// in a box).
///
/// With `a_k` the projector diagonal, the `(k, k+1)` entry is
/// `-i hbar (a_k + a_{k+1}) / (4 m dx)`; the diagonal vanishes.
pub fn current_observable(
    grid: &Grid,
    cell: Range<usize>,
    constants: &PhysicalConstants,
) -> Result<HermitianObservable, HilbertError> {
    let projector = cell_projector(grid, cell.clone())?;
    let a = projector.diag();
    let n = grid.n_points();
    let scale = constants.hbar / (4.0 * constants.mass * grid.dx());
    let upper = (0..band_len(grid))
        .map(|k| {
            let s = a[k] + a[(k + 1) % n];
            C64::new(0.0, -scale * s)
        })
        .collect();
    HermitianObservable::from_parts(*grid, vec![0.0; n], upper, format!("J[{}..{}]", cell.start, cell.end))
}

/// `rho_k = |psi_k|^2`.
pub fn density_profile(psi: &WaveFunction) -> Vec<f64> {
    psi.amplitudes().iter().map(|a| a.norm_sqr()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use std::f64::consts::{PI, TAU};

    fn ring() -> Grid {
        Grid::ring(64, 0.0, TAU).unwrap()
    }

    fn ho_grid() -> Grid {
        Grid::boxed(256, -8.0, 8.0).unwrap()
    }

    fn gaussian(grid: Grid) -> WaveFunction {
        WaveFunction::from_fn(grid, |x| C64::new((-x * x / 2.0).exp() / PI.powf(0.25), 0.0))
    }

    #[test]
    fn grid_spacing_conventions() {
        let b = Grid::boxed(9, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(b.dx(), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(b.point(0), 0.1, epsilon = 1e-15);
        assert_abs_diff_eq!(b.point(8), 0.9, epsilon = 1e-15);
        let r = Grid::ring(10, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(r.dx(), 0.1, epsilon = 1e-15);
        assert_eq!(r.point(0), 0.0);
    }

    #[test]
    fn rejects_bad_grids() {
        assert!(Grid::boxed(7, 0.0, 1.0).is_err());
        assert!(Grid::ring(16, 1.0, 1.0).is_err());
        assert!(Grid::ring(16, 0.0, f64::NAN).is_err());
    }

    #[test]
    fn normalize_uniform_ring_state() {
        let g = ring();
        let psi = WaveFunction::from_fn(g, |_| C64::new(3.0, 0.0)).normalize().unwrap();
        let expected = 1.0 / g.length().sqrt();
        for a in psi.amplitudes() {
            assert_abs_diff_eq!(a.re, expected, epsilon = 1e-14);
            assert_eq!(a.im, 0.0);
        }
    }

    #[test]
    fn normalize_is_idempotent_and_scale_free() {
        let psi0 = gaussian(ho_grid()).normalize().unwrap();
        let again = psi0.clone().normalize().unwrap();
        let scaled = psi0.clone().scaled(2.0).normalize().unwrap();
        for ((a, b), c) in psi0.amplitudes().iter().zip(again.amplitudes()).zip(scaled.amplitudes()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-15);
            assert_abs_diff_eq!((a - c).norm(), 0.0, epsilon = 1e-15);
        }
        assert!((psi0.norm_sqr() - 1.0).abs() < 1e-10);
    }

    #[test]
    fn normalize_zero_state_fails() {
        let psi = WaveFunction::from_fn(ring(), |_| C64::new(0.0, 0.0));
        assert!(matches!(psi.normalize(), Err(HilbertError::ZeroState(_))));
    }

    #[test]
    fn identity_expectation_is_one() {
        let psi = gaussian(ho_grid()).normalize().unwrap();
        let id = HermitianObservable::identity(*psi.grid());
        assert_abs_diff_eq!(expectation(&id, &psi).unwrap(), 1.0, epsilon = 1e-12);
    }

    #[test]
    fn position_expectation_vanishes_by_parity() {
        let psi = gaussian(ho_grid()).normalize().unwrap();
        let x = HermitianObservable::position(*psi.grid());
        assert_abs_diff_eq!(expectation(&x, &psi).unwrap(), 0.0, epsilon = 1e-6);
    }

    #[test]
    fn expectation_checks_grid() {
        let psi = gaussian(ho_grid());
        let id = HermitianObservable::identity(ring());
        assert_eq!(expectation(&id, &psi), Err(HilbertError::GridMismatch));
    }

    #[test]
    fn complex_hopping_has_real_expectation() {
        let g = ring();
        let obs = HermitianObservable::from_parts(g, vec![0.0; 64], vec![C64::new(0.0, 1.0); 64], "i-hop").unwrap();
        let psi = WaveFunction::from_fn(g, |x| C64::from_polar(1.0, 2.0 * x)).normalize().unwrap();
        assert!(expectation(&obs, &psi).is_ok());
        assert_eq!(obs.hermiticity_defect(), 0.0);
    }

    #[test]
    fn whole_ring_cell_gives_inverse_length() {
        let g = ring();
        let psi = WaveFunction::from_fn(g, |_| C64::new(1.0, 0.0)).normalize().unwrap();
        let whole = cell_projector(&g, 0..64).unwrap();
        assert_abs_diff_eq!(expectation(&whole, &psi).unwrap(), 1.0 / g.length(), epsilon = 1e-12);
        let small = cell_projector(&g, 10..13).unwrap();
        assert_abs_diff_eq!(expectation(&small, &psi).unwrap(), 1.0 / g.length(), epsilon = 1e-12);
    }

    #[test]
    fn empty_and_out_of_range_cells() {
        let g = ring();
        assert!(matches!(cell_projector(&g, 5..5), Err(HilbertError::EmptyCell { .. })));
        assert!(matches!(cell_projector(&g, 60..70), Err(HilbertError::CellOutOfRange { .. })));
        assert!(matches!(current_observable(&g, 3..3, &PhysicalConstants::default()), Err(HilbertError::EmptyCell { .. })));
    }

    #[test]
    fn central_cell_matches_gaussian_quadrature() {
        // Oracle: fine midpoint quadrature of the analytic density over the
        // same interval the rectangle rule covers.
        let g = Grid::boxed(511, -8.0, 8.0).unwrap();
        let dx = g.dx();
        let psi = gaussian(g).normalize().unwrap();
        // Points 256..259 cover x in [0 - dx/2, 3dx - dx/2] = [-dx/2, 2.5dx].
        assert_abs_diff_eq!(g.point(255), 0.0, epsilon = 1e-12);
        let cell = 255..258;
        let lo = g.point(cell.start) - dx / 2.0;
        let hi = g.point(cell.end - 1) + dx / 2.0;
        let m = 20_000;
        let h = (hi - lo) / m as f64;
        let oracle: f64 = (0..m)
            .map(|i| {
                let x = lo + (i as f64 + 0.5) * h;
                (-x * x).exp() / PI.sqrt()
            })
            .sum::<f64>()
            * h
            / (hi - lo);
        let value = expectation(&cell_projector(&g, cell).unwrap(), &psi).unwrap();
        assert!((value - oracle).abs() / oracle < 1e-4, "{value} vs {oracle}");
    }

    #[test]
    fn real_states_carry_no_current() {
        let g = ho_grid();
        let psi = gaussian(g).normalize().unwrap();
        let c = PhysicalConstants::default();
        for start in [0, 37, 128, 250] {
            let j = current_observable(&g, start..start + 4, &c).unwrap();
            assert_abs_diff_eq!(expectation(&j, &psi).unwrap(), 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn plane_wave_current_matches_discrete_closed_form() {
        // Oracle: central difference acting on exp(ikx) gives i sin(k dx)/dx.
        let g = Grid::ring(128, 0.0, 5.0).unwrap();
        let c = PhysicalConstants { hbar: 1.3, mass: 0.7, pointer_mass: f64::INFINITY };
        let k = TAU * 3.0 / g.length();
        let psi = WaveFunction::from_fn(g, |x| C64::from_polar(1.0, k * x)).normalize().unwrap();
        let whole = current_observable(&g, 0..128, &c).unwrap();
        let kdx = k * g.dx();
        let expected = c.hbar * k / (c.mass * g.length()) * kdx.sin() / kdx;
        assert_abs_diff_eq!(expectation(&whole, &psi).unwrap(), expected, epsilon = 1e-12);
    }

    #[test]
    fn cell_current_matches_pointwise_flux() {
        // Oracle: (hbar/m) Im(conj(psi) D psi), evaluated directly with the
        // same stencil, averaged over the cell.
        let g = Grid::boxed(200, -6.0, 6.0).unwrap();
        let c = PhysicalConstants::default();
        let psi = WaveFunction::from_fn(g, |x| {
            let a = (-(x - 0.5).powi(2)).exp();
            let b = (-(x + 1.0).powi(2) / 2.0).exp();
            C64::from_polar(a, 1.3 * x) + C64::from_polar(b, -0.4 * x * x)
        })
        .normalize()
        .unwrap();
        let amps = psi.amplitudes();
        let n = g.n_points();
        let dx = g.dx();
        let pointwise: Vec<f64> = (0..n)
            .map(|k| {
                let next = if k + 1 < n { amps[k + 1] } else { C64::new(0.0, 0.0) };
                let prev = if k > 0 { amps[k - 1] } else { C64::new(0.0, 0.0) };
                let d = (next - prev) / (2.0 * dx);
                c.hbar / c.mass * (amps[k].conj() * d).im
            })
            .collect();
        for cell in [0..5, 90..97, 100..101, 195..200] {
            let avg = pointwise[cell.clone()].iter().sum::<f64>() / cell.len() as f64;
            let j = current_observable(&g, cell, &c).unwrap();
            assert_abs_diff_eq!(expectation(&j, &psi).unwrap(), avg, epsilon = 1e-10);
        }
    }

    #[test]
    fn density_profile_of_uniform_and_ground_states() {
        let g = ring();
        let psi = WaveFunction::from_fn(g, |_| C64::new(1.0, 0.0)).normalize().unwrap();
        for r in density_profile(&psi) {
            assert_abs_diff_eq!(r, 1.0 / g.length(), epsilon = 1e-14);
        }
        let ho = gaussian(ho_grid()).normalize().unwrap();
        let rho = density_profile(&ho);
        assert_abs_diff_eq!(rho.iter().sum::<f64>() * ho.grid().dx(), 1.0, epsilon = 1e-10);
        for (x, r) in ho.grid().points().iter().zip(&rho) {
            assert_abs_diff_eq!(*r, (-x * x).exp() / PI.sqrt(), epsilon = 1e-6);
        }
    }

    #[test]
    fn odd_state_has_node_at_origin() {
        let g = Grid::boxed(255, -8.0, 8.0).unwrap();
        let psi = WaveFunction::from_fn(g, |x| C64::new(x * (-x * x / 2.0).exp(), 0.0)).normalize().unwrap();
        let mid = 127;
        assert_abs_diff_eq!(g.point(mid), 0.0, epsilon = 1e-12);
        assert!(density_profile(&psi)[mid] <= 1e-10);
    }

    #[test]
    fn constructed_observables_are_exactly_hermitian() {
        let c = PhysicalConstants::default();
        for g in [ring(), ho_grid()] {
            let ops = [
                HermitianObservable::identity(g),
                HermitianObservable::position(g),
                HermitianObservable::kinetic(g, &c, 0.37),
                cell_projector(&g, 3..9).unwrap(),
                current_observable(&g, 0..7, &c).unwrap(),
                current_observable(&g, 50..64, &c).unwrap(),
            ];
            for op in &ops {
                assert_eq!(op.hermiticity_defect(), 0.0, "{}", op.label());
            }
        }
    }

    #[test]
    fn apply_matches_dense_product() {
        let g = ring();
        let h = HermitianObservable::kinetic(g, &PhysicalConstants::default(), 0.2)
            .add_scaled(&current_observable(&g, 4..9, &PhysicalConstants::default()).unwrap(), 0.3)
            .unwrap();
        let v: Vec<C64> = (0..64).map(|k| C64::new((k as f64).sin(), (k as f64 * 0.3).cos())).collect();
        let dense = h.to_dense() * nalgebra::DVector::from_vec(v.clone());
        for (a, b) in h.apply(&v).iter().zip(dense.iter()) {
            assert_abs_diff_eq!((a - b).norm(), 0.0, epsilon = 1e-9);
        }
    }
}
