//! Density and current campaigns over a cell partition, and recovery of the
//! wave function (up to a global phase) from the measured profiles.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hilbert::{
    cell_projector, current_observable, Grid, HermitianObservable, HilbertError, PhysicalConstants, WaveFunction, C64,
};
use crate::pm::{run_prepared, PmError, PmSettings};
use crate::protection::ProtectedSystem;

/// Cells below this fraction of the peak density are treated as nodes.
pub const NODE_FRACTION: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ReconstructionError {
    #[error("invalid partition: {0}")]
    InvalidPartition(String),
    #[error("profile has {got} cells, partition has {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("every cell density is at or below zero")]
    AllCellsBelowThreshold,
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
}

#[derive(Clone, Debug, PartialEq)]
pub struct CellPartition {
    grid: Grid,
    cells: Vec<Range<usize>>,
}

impl CellPartition {
    /// Disjoint contiguous cells covering the grid in order.
    pub fn new(grid: Grid, cells: Vec<Range<usize>>) -> Result<Self, ReconstructionError> {
        let mut next = 0;
        for c in &cells {
            if c.start != next || c.end <= c.start {
                return Err(ReconstructionError::InvalidPartition(format!(
                    "cell {}..{} does not continue a contiguous cover at {next}",
                    c.start, c.end
                )));
            }
            next = c.end;
        }
        if next != grid.n_points() {
            return Err(ReconstructionError::InvalidPartition(format!("cells cover {next} of {} points", grid.n_points())));
        }
        Ok(Self { grid, cells })
    }

    /// `n_cells` cells of near-equal size; leftover points go to the first cells.
    pub fn uniform(grid: Grid, n_cells: usize) -> Result<Self, ReconstructionError> {
        let n = grid.n_points();
        if n_cells == 0 || n_cells > n {
            return Err(ReconstructionError::InvalidPartition(format!("cannot split {n} points into {n_cells} cells")));
        }
        let base = n / n_cells;
        let extra = n % n_cells;
        let mut start = 0;
        let cells = (0..n_cells)
            .map(|i| {
                let len = base + usize::from(i < extra);
                let c = start..start + len;
                start += len;
                c
            })
            .collect();
        Self::new(grid, cells)
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn cells(&self) -> &[Range<usize>] {
        &self.cells
    }

    pub fn len(&self) -> usize {
        self.cells.len()
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    pub fn volumes(&self) -> Vec<f64> {
        self.cells.iter().map(|c| c.len() as f64 * self.grid.dx()).collect()
    }

    pub fn centers(&self) -> Vec<f64> {
        self.cells.iter().map(|c| 0.5 * (self.grid.point(c.start) + self.grid.point(c.end - 1))).collect()
    }
}

/// One protective measurement of a cell observable. `value` is NaN when
/// the run failed; `error` then holds the reason.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CellMeasurement {
    pub value: f64,
    pub reference: f64,
    pub fidelity: f64,
    pub survival: f64,
    pub error: Option<String>,
}

impl CellMeasurement {
    pub fn shift_error(&self) -> f64 {
        (self.value - self.reference).abs()
    }

    fn failed(err: impl std::fmt::Display) -> Self {
        Self { value: f64::NAN, reference: f64::NAN, fidelity: f64::NAN, survival: f64::NAN, error: Some(err.to_string()) }
    }
}

fn measure_cells(
    system: &ProtectedSystem,
    partition: &CellPartition,
    settings: &PmSettings,
    observable: impl Fn(Range<usize>) -> Result<HermitianObservable, HilbertError> + Sync,
) -> Vec<CellMeasurement> {
    partition
        .cells()
        .par_iter()
        .map(|cell| {
            let run = observable(cell.clone()).map_err(PmError::from).and_then(|a| run_prepared(system, &a, settings));
            match run {
                Ok(r) => CellMeasurement {
                    value: r.pointer_shift,
                    reference: r.reference_expectation,
                    fidelity: r.system_fidelity,
                    survival: r.survival,
                    error: None,
                },
                Err(e) => CellMeasurement::failed(e),
            }
        })
        .collect()
}

/// One protective measurement of the normalized cell projector per cell.
pub fn measure_density_profile(
    system: &ProtectedSystem,
    partition: &CellPartition,
    settings: &PmSettings,
) -> Vec<CellMeasurement> {
    let grid = *partition.grid();
    measure_cells(system, partition, settings, |cell| cell_projector(&grid, cell))
}

/// One protective measurement of the cell current operator per cell.
pub fn measure_current_profile(
    system: &ProtectedSystem,
    partition: &CellPartition,
    settings: &PmSettings,
    constants: &PhysicalConstants,
) -> Vec<CellMeasurement> {
    let grid = *partition.grid();
    measure_cells(system, partition, settings, |cell| current_observable(&grid, cell, constants))
}

#[derive(Clone, Debug, PartialEq)]
pub struct Reconstruction {
    pub psi: WaveFunction,
    /// Cells whose density was negative or missing and was set to zero.
    pub clamped: Vec<bool>,
    /// Cells treated as nodes of the density.
    pub nodes: Vec<bool>,
    /// Phase at each cell center before interpolation.
    pub cell_phases: Vec<f64>,
    /// Net phase winding around a ring, in units of 2 pi.
    pub winding: Option<i64>,
    /// Accumulated loop phase minus `2 pi winding`, spread back over the ring.
    pub winding_residual: f64,
}

/// Rebuild `psi` from cell densities and currents. Amplitudes are `sqrt(rho)`;
/// the phase integrates the velocity field `m j / (hbar rho)` between cell
/// centers with midpoint averages. A link touching a node cell reuses the
/// velocity of the previous link (zero if there is none), so each segment
/// after a node continues the trend of the one before it. On a ring the
/// loop phase is rounded to a whole winding and the remainder spread evenly.
/// Values are interpolated linearly to grid points and held constant beyond
/// the outermost centers of a box.
pub fn reconstruct_wavefunction(
    rho: &[f64],
    current: &[f64],
    partition: &CellPartition,
    constants: &PhysicalConstants,
) -> Result<Reconstruction, ReconstructionError> {
    let n = partition.len();
    for len in [rho.len(), current.len()] {
        if len != n {
            return Err(ReconstructionError::LengthMismatch { expected: n, got: len });
        }
    }
    let clamped: Vec<bool> = rho.iter().map(|r| !(*r >= 0.0)).collect();
    let rho: Vec<f64> = rho.iter().map(|r| if *r >= 0.0 { *r } else { 0.0 }).collect();
    let current: Vec<f64> = current.iter().map(|j| if j.is_finite() { *j } else { 0.0 }).collect();
    let peak = rho.iter().copied().fold(0.0, f64::max);
    if !(peak > 0.0) {
        return Err(ReconstructionError::AllCellsBelowThreshold);
    }
    let eps = NODE_FRACTION * peak;
    let nodes: Vec<bool> = rho.iter().map(|r| *r < eps).collect();
    let scale = constants.mass / constants.hbar;

    let grid = *partition.grid();
    let centers = partition.centers();
    let ring = grid.is_ring();
    let n_links = if ring { n } else { n - 1 };
    let mut link_len = Vec::with_capacity(n_links);
    let mut link_vel = Vec::with_capacity(n_links);
    let mut last = 0.0;
    for l in 0..n_links {
        let (a, b) = (l, (l + 1) % n);
        let mut dx = centers[b] - centers[a];
        if b <= a {
            dx += grid.length();
        }
        if !nodes[a] && !nodes[b] {
            last = scale * 0.5 * (current[a] + current[b]) / (0.5 * (rho[a] + rho[b]));
        }
        link_len.push(dx);
        link_vel.push(last);
    }
    let mut increments: Vec<f64> = link_len.iter().zip(&link_vel).map(|(d, v)| d * v).collect();

    let (winding, residual) = if ring {
        let total: f64 = increments.iter().sum();
        let w = (total / std::f64::consts::TAU).round();
        let residual = total - w * std::f64::consts::TAU;
        for (inc, d) in increments.iter_mut().zip(&link_len) {
            *inc -= residual * d / grid.length();
        }
        (Some(w as i64), residual)
    } else {
        (None, 0.0)
    };

    let mut phases = vec![0.0; n];
    for l in 1..n {
        phases[l] = phases[l - 1] + increments[l - 1];
    }

    let amps: Vec<f64> = rho.iter().map(|r| r.sqrt()).collect();
    let points = grid.points();
    let mut values = Vec::with_capacity(points.len());
    let mut cell = 0;
    for &x in &points {
        while cell + 1 < n && x >= centers[cell + 1] {
            cell += 1;
        }
        let value = if x < centers[0] {
            if ring {
                let d = link_len[n - 1];
                let s = (x + grid.length() - centers[n - 1]) / d;
                interpolate(amps[n - 1], amps[0], phases[n - 1], increments[n - 1], s)
            } else {
                let v = if n > 1 { increments[0] / link_len[0] } else { 0.0 };
                C64::from_polar(amps[0], phases[0] + v * (x - centers[0]))
            }
        } else if cell + 1 < n {
            let s = (x - centers[cell]) / link_len[cell];
            interpolate(amps[cell], amps[cell + 1], phases[cell], increments[cell], s)
        } else if ring {
            let s = (x - centers[n - 1]) / link_len[n - 1];
            interpolate(amps[n - 1], amps[0], phases[n - 1], increments[n - 1], s)
        } else {
            let v = if n > 1 { increments[n - 2] / link_len[n - 2] } else { 0.0 };
            C64::from_polar(amps[n - 1], phases[n - 1] + v * (x - centers[n - 1]))
        };
        values.push(value);
    }
    let psi = WaveFunction::new(grid, values)?.normalize()?;
    Ok(Reconstruction { psi, clamped, nodes, cell_phases: phases, winding, winding_residual: residual })
}

fn interpolate(a0: f64, a1: f64, theta0: f64, increment: f64, s: f64) -> C64 {
    C64::from_polar(a0 + (a1 - a0) * s, theta0 + increment * s)
}

/// Phase-invariant overlap `|<a|b>|` of two states, normalized.
pub fn fidelity(a: &WaveFunction, b: &WaveFunction) -> Result<f64, HilbertError> {
    Ok((a.inner(b)?.norm() / (a.norm() * b.norm())).min(1.0))
}

#[derive(Clone, Debug, PartialEq)]
pub struct ReconstructionReport {
    pub rho_cells: Vec<f64>,
    pub j_cells: Vec<f64>,
    pub density: Vec<CellMeasurement>,
    pub current: Vec<CellMeasurement>,
    pub reconstruction: Reconstruction,
    pub fidelity_to_truth: f64,
    /// Larger of the density and current shift errors per cell; NaN on failure.
    pub per_cell_pm_errors: Vec<f64>,
}

/// Density and current campaign on the protected state, then reconstruction.
pub fn run_campaign(
    system: &ProtectedSystem,
    partition: &CellPartition,
    settings: &PmSettings,
    constants: &PhysicalConstants,
) -> Result<ReconstructionReport, ReconstructionError> {
    let density = measure_density_profile(system, partition, settings);
    let current = measure_current_profile(system, partition, settings, constants);
    let rho: Vec<f64> = density.iter().map(|m| m.value).collect();
    let j: Vec<f64> = current.iter().map(|m| m.value).collect();
    let reconstruction = reconstruct_wavefunction(&rho, &j, partition, constants)?;
    let fidelity_to_truth = fidelity(&reconstruction.psi, &system.state)?;
    let per_cell_pm_errors = density.iter().zip(&current).map(|(d, c)| d.shift_error().max(c.shift_error())).collect();
    let rho_cells = rho.iter().map(|r| if *r >= 0.0 { *r } else { 0.0 }).collect();
    Ok(ReconstructionReport { rho_cells, j_cells: j, density, current, reconstruction, fidelity_to_truth, per_cell_pm_errors })
}

/// Exact cell averages of the density and current of `psi`, for use in
/// place of measured profiles.
pub fn exact_profiles(
    psi: &WaveFunction,
    partition: &CellPartition,
    constants: &PhysicalConstants,
) -> Result<(Vec<f64>, Vec<f64>), HilbertError> {
    let grid = *partition.grid();
    let mut rho = Vec::with_capacity(partition.len());
    let mut j = Vec::with_capacity(partition.len());
    for cell in partition.cells() {
        rho.push(crate::hilbert::expectation(&cell_projector(&grid, cell.clone())?, psi)?);
        j.push(crate::hilbert::expectation(&current_observable(&grid, cell.clone(), constants)?, psi)?);
    }
    Ok((rho, j))
}
