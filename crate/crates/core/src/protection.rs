//! Protection schemes: a protective potential that makes the measured state a
//! non-degenerate eigenstate, or repeated Zeno projections onto a target.

use thiserror::Error;

use crate::evolution::{eigenstates, Eigenpair, EvolutionError};
use crate::hilbert::{expectation, Grid, HermitianObservable, HilbertError, PhysicalConstants, WaveFunction, ZERO_NORM};
use crate::joint::{project_columns, JointError, JointState};

/// Minimum energy gap to neighbouring levels for a protected eigenstate.
pub const DEGENERACY_GAP: f64 = 1e-6;
const NORM_TOL: f64 = 1e-10;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtectionError {
    #[error("level {level} is degenerate: gap {gap:e} to a neighbour")]
    DegenerateLevel { level: usize, gap: f64 },
    #[error("level {level} requested but the grid has {n} points")]
    LevelOutOfRange { level: usize, n: usize },
    #[error("projection survival {0:e} is effectively zero")]
    ZeroSurvival(f64),
    #[error("invalid protection scheme: {0}")]
    InvalidScheme(String),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Joint(#[from] JointError),
}

/// The measured system: grid, constants, and magnetic flux through the ring
/// in flux quanta (ignored on a box).
#[derive(Clone, Debug, PartialEq)]
pub struct SystemModel {
    pub grid: Grid,
    pub constants: PhysicalConstants,
    pub flux: f64,
}

impl SystemModel {
    pub fn new(grid: Grid, constants: PhysicalConstants) -> Self {
        Self { grid, constants, flux: 0.0 }
    }

    pub fn with_flux(mut self, flux: f64) -> Self {
        self.flux = flux;
        self
    }

    pub fn kinetic(&self) -> HermitianObservable {
        HermitianObservable::kinetic(self.grid, &self.constants, self.flux)
    }

    pub fn hamiltonian(&self, potential: &[f64]) -> Result<HermitianObservable, HilbertError> {
        self.kinetic().add_scaled(&HermitianObservable::potential(self.grid, potential)?, 1.0)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum ProtectionScheme {
    ProtectivePotential { potential: Vec<f64>, level: usize },
    Zeno { target: WaveFunction, n_projections: usize },
}

impl ProtectionScheme {
    pub fn validate(&self, grid: &Grid) -> Result<(), ProtectionError> {
        match self {
            ProtectionScheme::ProtectivePotential { potential, level } => {
                if potential.len() != grid.n_points() {
                    return Err(HilbertError::LengthMismatch { expected: grid.n_points(), got: potential.len() }.into());
                }
                if potential.iter().any(|v| !v.is_finite()) {
                    return Err(ProtectionError::InvalidScheme("potential must be finite".into()));
                }
                if *level >= grid.n_points() {
                    return Err(ProtectionError::LevelOutOfRange { level: *level, n: grid.n_points() });
                }
            }
            ProtectionScheme::Zeno { target, n_projections } => {
                if target.grid() != grid {
                    return Err(HilbertError::GridMismatch.into());
                }
                if (target.norm_sqr() - 1.0).abs() > NORM_TOL {
                    return Err(ProtectionError::InvalidScheme(format!(
                        "Zeno target must be normalized, norm^2 = {}",
                        target.norm_sqr()
                    )));
                }
                if *n_projections == 0 {
                    return Err(ProtectionError::InvalidScheme("n_projections must be at least 1".into()));
                }
            }
        }
        Ok(())
    }

    pub fn kind(&self) -> &'static str {
        match self {
            ProtectionScheme::ProtectivePotential { .. } => "protective_potential",
            ProtectionScheme::Zeno { .. } => "zeno",
        }
    }
}

/// A prepared protected state with the system Hamiltonian that acts while
/// it is measured.
#[derive(Clone, Debug, PartialEq)]
pub struct ProtectedSystem {
    pub state: WaveFunction,
    /// `<state|H|state>`; the exact eigenvalue under a protective potential.
    pub energy: f64,
    pub hamiltonian: HermitianObservable,
    /// Lowest eigenpairs of `hamiltonian`, ascending.
    pub levels: Vec<Eigenpair>,
    pub scheme: ProtectionScheme,
    pub hbar: f64,
}

impl ProtectedSystem {
    /// Prepare the protected state, computing at least `min_levels`
    /// eigenpairs of the measurement Hamiltonian. Under a protective potential
    /// that Hamiltonian is kinetic plus potential; under Zeno protection it is
    /// the bare kinetic term.
    pub fn prepare(scheme: &ProtectionScheme, model: &SystemModel, min_levels: usize) -> Result<Self, ProtectionError> {
        scheme.validate(&model.grid)?;
        let n = model.grid.n_points();
        match scheme {
            ProtectionScheme::ProtectivePotential { potential, level } => {
                let h = model.hamiltonian(potential)?;
                let count = (level + 2).max(min_levels).min(n);
                let levels = eigenstates(&h, count)?;
                let e = levels[*level].energy;
                let mut gap = f64::INFINITY;
                if *level > 0 {
                    gap = gap.min(e - levels[level - 1].energy);
                }
                if level + 1 < levels.len() {
                    gap = gap.min(levels[level + 1].energy - e);
                }
                if gap <= DEGENERACY_GAP {
                    return Err(ProtectionError::DegenerateLevel { level: *level, gap });
                }
                Ok(Self {
                    state: levels[*level].state.clone(),
                    energy: e,
                    hamiltonian: h,
                    levels,
                    scheme: scheme.clone(),
                    hbar: model.constants.hbar,
                })
            }
            ProtectionScheme::Zeno { target, .. } => {
                let h = model.kinetic();
                let levels = if min_levels > 0 { eigenstates(&h, min_levels.min(n))? } else { Vec::new() };
                let energy = expectation(&h, target)?;
                Ok(Self {
                    state: target.clone(),
                    energy,
                    hamiltonian: h,
                    levels,
                    scheme: scheme.clone(),
                    hbar: model.constants.hbar,
                })
            }
        }
    }
}

pub fn prepare_protected_state(scheme: &ProtectionScheme, model: &SystemModel) -> Result<WaveFunction, ProtectionError> {
    Ok(ProtectedSystem::prepare(scheme, model, 0)?.state)
}

/// Steps after which projection `m = 1..=M` is applied: the step ending
/// nearest to `t = m T / M`.
pub fn projection_steps(n_steps: usize, n_projections: usize) -> Vec<usize> {
    (1..=n_projections)
        .map(|m| {
            let end = (m as f64 * n_steps as f64 / n_projections as f64).round() as usize;
            end.clamp(1, n_steps) - 1
        })
        .collect()
}

/// Apply `|target><target| ⊗ I`, renormalize, and return the survival
/// probability (squared norm kept, relative to the input norm).
pub fn zeno_project(joint: &JointState, target: &WaveFunction) -> Result<(JointState, f64), ProtectionError> {
    let t = target_coefficients(joint, target)?;
    let before = joint.norm_sqr();
    let mut coeffs = joint.coeffs().to_vec();
    let kept = project_columns(&mut coeffs, joint.dim(), &t, joint.pointer_grid().dx());
    let survival = if before > 0.0 { kept / before } else { 0.0 };
    if survival < ZERO_NORM {
        return Err(ProtectionError::ZeroSurvival(survival));
    }
    let scale = 1.0 / kept.sqrt();
    coeffs.iter_mut().for_each(|c| *c *= scale);
    Ok((JointState::new(joint.basis().clone(), *joint.pointer_grid(), coeffs)?, survival))
}

/// Basis coefficients of `target`, unit normalized within the basis.
pub(crate) fn target_coefficients(
    joint: &JointState,
    target: &WaveFunction,
) -> Result<Vec<crate::hilbert::C64>, ProtectionError> {
    let t = joint.basis().coefficients(target)?;
    let norm = t.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
    if norm < ZERO_NORM {
        return Err(ProtectionError::ZeroSurvival(0.0));
    }
    Ok(t.iter().map(|c| c / norm).collect())
}

/// Phase-invariant overlap `|<initial|final>|`, clamped to `[0, 1]`.
pub fn protection_fidelity(final_state: &WaveFunction, initial: &WaveFunction) -> Result<f64, ProtectionError> {
    let f = initial.inner(final_state)?.norm() / (initial.norm() * final_state.norm());
    Ok(f.min(1.0))
}

/// `sqrt(<initial|rho_sys|initial>)` of the reduced system state.
pub fn joint_protection_fidelity(joint: &JointState, initial: &WaveFunction) -> Result<f64, ProtectionError> {
    let overlap = joint.system_overlap(initial)?;
    Ok((overlap / (joint.norm_sqr().sqrt() * initial.norm())).min(1.0))
}
