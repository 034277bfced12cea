//! Joint system ⊗ pointer states.
//!
//! The pointer lives on a periodic grid. Its momentum `P` is the spectral
//! derivative `-i hbar d/dX`, diagonal in the unitary discrete Fourier basis,
//! so `exp(-i s P / hbar)` translates band-limited packets by exactly `s`.
//! Coefficients are stored pointer-major: `coeffs[j * dim + i]` is the
//! amplitude of system basis state `i` at pointer point `j`, normalized so
//! that `sum |c|^2 dX = 1`.

use std::sync::Arc;

use rustfft::{Fft, FftPlanner};
use thiserror::Error;

use crate::hilbert::{Grid, HilbertError, WaveFunction, C64};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum JointError {
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error("pointer grid must be periodic")]
    PointerNotPeriodic,
    #[error("pointer packet width {width} is below two grid spacings ({min})")]
    UnresolvedPacket { width: f64, min: f64 },
    #[error("invalid pointer configuration: {0}")]
    InvalidPointer(String),
    #[error("basis has dimension {basis}, coefficients imply {got}")]
    DimensionMismatch { basis: usize, got: usize },
    #[error("truncated basis needs at least 2 states, got {0}")]
    BasisTooSmall(usize),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PointerConfig {
    pub grid: Grid,
    pub initial_center: f64,
    pub initial_width: f64,
    /// `f64::INFINITY` freezes the pointer (`H_ptr = 0`).
    pub mass: f64,
}

impl Default for PointerConfig {
    fn default() -> Self {
        Self {
            grid: Grid::ring(128, -20.0, 20.0).expect("valid default grid"),
            initial_center: 0.0,
            initial_width: 2.0,
            mass: f64::INFINITY,
        }
    }
}

impl PointerConfig {
    pub fn validate(&self) -> Result<(), JointError> {
        if !self.grid.is_ring() {
            return Err(JointError::PointerNotPeriodic);
        }
        let min = 2.0 * self.grid.dx();
        if !(self.initial_width >= min) {
            return Err(JointError::UnresolvedPacket { width: self.initial_width, min });
        }
        if !self.initial_center.is_finite() || self.initial_center < self.grid.x_min() || self.initial_center >= self.grid.x_max()
        {
            return Err(JointError::InvalidPointer(format!(
                "initial_center {} outside [{}, {})",
                self.initial_center,
                self.grid.x_min(),
                self.grid.x_max()
            )));
        }
        if self.mass.is_nan() || self.mass <= 0.0 {
            return Err(JointError::InvalidPointer(format!("mass must be positive, got {}", self.mass)));
        }
        Ok(())
    }

    /// Gaussian `exp(-(X - c)^2 / 4 sigma^2)`, so `sigma` is the standard
    /// deviation of the pointer position.
    pub fn initial_packet(&self) -> Vec<C64> {
        let c = self.initial_center;
        let s = self.initial_width;
        let raw: Vec<f64> = self.grid.points().iter().map(|x| (-(x - c).powi(2) / (4.0 * s * s)).exp()).collect();
        let norm = (raw.iter().map(|v| v * v).sum::<f64>() * self.grid.dx()).sqrt();
        raw.into_iter().map(|v| C64::new(v / norm, 0.0)).collect()
    }
}

/// Eigenvalues of the spectral pointer momentum, in FFT order.
pub fn pointer_momenta(grid: &Grid, hbar: f64) -> Vec<f64> {
    let n = grid.n_points() as i64;
    let dp = std::f64::consts::TAU * hbar / grid.length();
    (0..n).map(|q| if q < (n + 1) / 2 { q } else { q - n }).map(|m| m as f64 * dp).collect()
}

/// Forward/inverse unitary DFT along the pointer index.
#[derive(Clone)]
pub struct PointerTransform {
    n: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for PointerTransform {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PointerTransform").field("n", &self.n).finish()
    }
}

impl PointerTransform {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self { n, forward: planner.plan_fft_forward(n), inverse: planner.plan_fft_inverse(n) }
    }

    fn run(&self, coeffs: &mut [C64], dim: usize, fft: &Arc<dyn Fft<f64>>) {
        let n = self.n;
        let scale = 1.0 / (n as f64).sqrt();
        let mut line = vec![C64::new(0.0, 0.0); n];
        for i in 0..dim {
            for j in 0..n {
                line[j] = coeffs[j * dim + i];
            }
            fft.process(&mut line);
            for j in 0..n {
                coeffs[j * dim + i] = line[j] * scale;
            }
        }
    }

    pub fn to_momentum(&self, coeffs: &mut [C64], dim: usize) {
        self.run(coeffs, dim, &self.forward);
    }

    pub fn to_position(&self, coeffs: &mut [C64], dim: usize) {
        self.run(coeffs, dim, &self.inverse);
    }
}

/// Representation of the system factor.
#[derive(Clone, Debug, PartialEq)]
pub enum SystemBasis {
    /// Orthonormal truncated set, usually the lowest energy eigenstates.
    Levels(Vec<WaveFunction>),
    /// Full position grid, basis states `delta_k / sqrt(dx)`.
    Grid(Grid),
}

impl SystemBasis {
    pub fn dim(&self) -> usize {
        match self {
            SystemBasis::Levels(states) => states.len(),
            SystemBasis::Grid(grid) => grid.n_points(),
        }
    }

    pub fn system_grid(&self) -> &Grid {
        match self {
            SystemBasis::Levels(states) => states[0].grid(),
            SystemBasis::Grid(grid) => grid,
        }
    }

    /// Expansion coefficients `<b_i|psi>`.
    pub fn coefficients(&self, psi: &WaveFunction) -> Result<Vec<C64>, HilbertError> {
        match self {
            SystemBasis::Levels(states) => states.iter().map(|b| b.inner(psi)).collect(),
            SystemBasis::Grid(grid) => {
                if psi.grid() != grid {
                    return Err(HilbertError::GridMismatch);
                }
                let w = grid.dx().sqrt();
                Ok(psi.amplitudes().iter().map(|a| a * w).collect())
            }
        }
    }

    /// Grid wave function with the given basis coefficients.
    pub fn synthesize(&self, coeffs: &[C64]) -> WaveFunction {
        match self {
            SystemBasis::Levels(states) => {
                let grid = *states[0].grid();
                let mut amps = vec![C64::new(0.0, 0.0); grid.n_points()];
                for (c, b) in coeffs.iter().zip(states) {
                    for (a, v) in amps.iter_mut().zip(b.amplitudes()) {
                        *a += c * v;
                    }
                }
                WaveFunction::new(grid, amps).expect("basis states share a grid")
            }
            SystemBasis::Grid(grid) => {
                let w = 1.0 / grid.dx().sqrt();
                WaveFunction::new(*grid, coeffs.iter().map(|c| c * w).collect()).expect("length matches grid")
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct JointState {
    basis: SystemBasis,
    pointer: Grid,
    coeffs: Vec<C64>,
}

impl JointState {
    pub fn new(basis: SystemBasis, pointer: Grid, coeffs: Vec<C64>) -> Result<Self, JointError> {
        let dim = basis.dim();
        if dim * pointer.n_points() != coeffs.len() {
            return Err(JointError::DimensionMismatch { basis: dim, got: coeffs.len() / pointer.n_points().max(1) });
        }
        if let SystemBasis::Levels(states) = &basis {
            if states.len() < 2 {
                return Err(JointError::BasisTooSmall(states.len()));
            }
        }
        if !pointer.is_ring() {
            return Err(JointError::PointerNotPeriodic);
        }
        Ok(Self { basis, pointer, coeffs })
    }

    /// `|system> ⊗ |pointer>` from basis coefficients and pointer amplitudes.
    pub fn product(basis: SystemBasis, system: &[C64], pointer: Grid, packet: &[C64]) -> Result<Self, JointError> {
        let dim = basis.dim();
        if system.len() != dim {
            return Err(JointError::DimensionMismatch { basis: dim, got: system.len() });
        }
        let mut coeffs = Vec::with_capacity(dim * packet.len());
        for p in packet {
            coeffs.extend(system.iter().map(|s| s * p));
        }
        Self::new(basis, pointer, coeffs)
    }

    pub fn basis(&self) -> &SystemBasis {
        &self.basis
    }

    pub fn pointer_grid(&self) -> &Grid {
        &self.pointer
    }

    pub fn dim(&self) -> usize {
        self.basis.dim()
    }

    pub fn coeffs(&self) -> &[C64] {
        &self.coeffs
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() * self.pointer.dx()
    }

    /// Pointer position density `sum_i |c_ij|^2`.
    pub fn pointer_marginal(&self) -> Vec<f64> {
        self.coeffs.chunks(self.dim()).map(|col| col.iter().map(|c| c.norm_sqr()).sum()).collect()
    }

    /// `<X> = sum_ij |c_ij|^2 X_j dX`.
    pub fn pointer_mean(&self) -> f64 {
        pointer_mean_of(&self.coeffs, self.dim(), &self.pointer)
    }

    /// `sqrt(<psi|rho_sys|psi>)` for the reduced system state.
    pub fn system_overlap(&self, psi: &WaveFunction) -> Result<f64, HilbertError> {
        let t = self.basis.coefficients(psi)?;
        let total: f64 = self
            .coeffs
            .chunks(self.dim())
            .map(|col| col.iter().zip(&t).map(|(c, ti)| ti.conj() * c).sum::<C64>().norm_sqr())
            .sum();
        Ok((total * self.pointer.dx()).sqrt())
    }
}

pub(crate) fn pointer_mean_of(coeffs: &[C64], dim: usize, pointer: &Grid) -> f64 {
    coeffs.chunks(dim).enumerate().map(|(j, col)| pointer.point(j) * col.iter().map(|c| c.norm_sqr()).sum::<f64>()).sum::<f64>()
        * pointer.dx()
}

/// Apply `|t><t| ⊗ I` column by column and return the squared norm of the
/// result (weight `dX`). `target` must be unit norm. Works in either the
/// position or momentum representation of the pointer.
pub(crate) fn project_columns(coeffs: &mut [C64], dim: usize, target: &[C64], dx_pointer: f64) -> f64 {
    let mut kept = 0.0;
    for col in coeffs.chunks_mut(dim) {
        let amp: C64 = col.iter().zip(target).map(|(c, t)| t.conj() * c).sum();
        kept += amp.norm_sqr();
        for (c, t) in col.iter_mut().zip(target) {
            *c = t * amp;
        }
    }
    kept * dx_pointer
}
