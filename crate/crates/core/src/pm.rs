//! Protective measurement runs on the joint system ⊗ pointer space, and the
//! projective (Born rule) sampler they are contrasted with.

use nalgebra::DMatrix;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{weighted_alias::WeightedAliasIndex, Distribution};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{
    evolve, CouplingProfile, EvolutionError, EvolveOptions, HamiltonianSchedule, ProfileShape, Sampling, SystemOperator,
    TimeGrid, TraceSample,
};
use crate::hilbert::{expectation, HermitianObservable, HilbertError, WaveFunction, C64, ZERO_NORM};
use crate::joint::{project_columns, JointError, JointState, PointerConfig, SystemBasis};
use crate::protection::{
    joint_protection_fidelity, projection_steps, target_coefficients, ProtectedSystem, ProtectionError, ProtectionScheme,
    SystemModel,
};

/// Largest truncated basis accepted.
pub const MAX_LEVELS: usize = 16;
/// Largest tail weight of `A psi` outside the truncated basis.
pub const MAX_TRUNCATION_TAIL: f64 = 1e-3;
/// Eigenvalues closer than this, relative to the spectral radius, share one outcome.
pub const EIGENVALUE_MERGE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PmError {
    #[error("truncated basis drops weight {tail:e} of the coupled state (limit {MAX_TRUNCATION_TAIL:e})")]
    TruncationTooSmall { tail: f64 },
    #[error("truncation must be between 2 and {MAX_LEVELS}, got {0}")]
    InvalidTruncation(usize),
    #[error("n_samples must be at least 1")]
    NoSamples,
    #[error("Born probabilities are not normalizable")]
    InvalidDistribution,
    #[error(transparent)]
    Protection(#[from] ProtectionError),
    #[error(transparent)]
    Evolution(#[from] EvolutionError),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Joint(#[from] JointError),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Representation {
    /// Lowest `k` eigenstates of the measurement Hamiltonian.
    Levels(usize),
    /// Full position grid.
    Grid,
}

#[derive(Clone, Debug, PartialEq)]
pub struct PmSettings {
    pub pointer: PointerConfig,
    pub time: TimeGrid,
    pub profile: ProfileShape,
    pub representation: Representation,
    pub sampling: Sampling,
}

impl PmSettings {
    pub fn new(time: TimeGrid, representation: Representation) -> Self {
        Self {
            pointer: PointerConfig::default(),
            time,
            profile: ProfileShape::default(),
            representation,
            sampling: Sampling::EveryStep,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
pub struct PmDiagnostics {
    /// Largest `|norm - 1|` along the trace.
    pub norm_drift: f64,
    /// Weight of `A psi` outside the basis (zero on the grid).
    pub truncation_tail: f64,
    pub active_blocks: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PmResult {
    pub pointer_shift: f64,
    pub reference_expectation: f64,
    pub system_fidelity: f64,
    /// Product of Zeno survival probabilities; 1 without projections.
    pub survival: f64,
    pub trace: Vec<TraceSample>,
    pub scheme: String,
    pub diagnostics: PmDiagnostics,
}

impl PmResult {
    pub fn shift_error(&self) -> f64 {
        (self.pointer_shift - self.reference_expectation).abs()
    }
}

/// Prepare the protected state and measure `observable` on it.
pub fn run_protective_measurement(
    model: &SystemModel,
    observable: &HermitianObservable,
    scheme: &ProtectionScheme,
    settings: &PmSettings,
) -> Result<PmResult, PmError> {
    let levels = match settings.representation {
        Representation::Levels(k) => k,
        Representation::Grid => 0,
    };
    let system = ProtectedSystem::prepare(scheme, model, levels)?;
    run_prepared(&system, observable, settings)
}

fn hermitian_matrix(basis: &[WaveFunction], op: &HermitianObservable) -> Result<DMatrix<C64>, HilbertError> {
    let k = basis.len();
    let images = basis.iter().map(|b| op.apply_state(b)).collect::<Result<Vec<_>, _>>()?;
    let mut m = DMatrix::from_element(k, k, C64::new(0.0, 0.0));
    for i in 0..k {
        for j in i..k {
            let v = basis[i].inner(&images[j])?;
            if i == j {
                m[(i, i)] = C64::new(v.re, 0.0);
            } else {
                m[(i, j)] = v;
                m[(j, i)] = v.conj();
            }
        }
    }
    Ok(m)
}

/// Orthonormal basis for the Zeno scheme: the target followed by the lowest
/// eigenstates of the free Hamiltonian, Gram-Schmidt orthogonalized.
fn zeno_levels(system: &ProtectedSystem, k: usize) -> Result<Vec<WaveFunction>, PmError> {
    let grid = *system.state.grid();
    let mut basis = vec![system.state.clone()];
    for pair in &system.levels {
        if basis.len() == k {
            break;
        }
        let mut v = pair.state.amplitudes().to_vec();
        for _ in 0..2 {
            for b in &basis {
                let c = b.inner(&WaveFunction::new(grid, v.clone())?)?;
                for (x, y) in v.iter_mut().zip(b.amplitudes()) {
                    *x -= c * y;
                }
            }
        }
        let w = WaveFunction::new(grid, v)?;
        if w.norm() > 1e-6 {
            basis.push(w.normalize()?);
        }
    }
    Ok(basis)
}

fn truncation_tail(basis: &[WaveFunction], image: &WaveFunction) -> Result<f64, HilbertError> {
    let total = image.norm_sqr();
    if total < ZERO_NORM {
        return Ok(0.0);
    }
    let kept: f64 = basis.iter().map(|b| b.inner(image).map(|c| c.norm_sqr())).sum::<Result<f64, _>>()?;
    Ok((1.0 - kept / total).max(0.0))
}

/// Measure `observable` on an already prepared protected state.
pub fn run_prepared(
    system: &ProtectedSystem,
    observable: &HermitianObservable,
    settings: &PmSettings,
) -> Result<PmResult, PmError> {
    settings.pointer.validate()?;
    let psi0 = &system.state;
    if observable.grid() != psi0.grid() {
        return Err(HilbertError::GridMismatch.into());
    }
    let reference = expectation(observable, psi0)?;
    let h_shifted = system.hamiltonian.shifted(-system.energy);

    let (basis, system_op, coupled_op, tail) = match settings.representation {
        Representation::Grid => {
            (SystemBasis::Grid(*psi0.grid()), SystemOperator::Banded(h_shifted), SystemOperator::Banded(observable.clone()), 0.0)
        }
        Representation::Levels(k) => {
            if !(2..=MAX_LEVELS).contains(&k) {
                return Err(PmError::InvalidTruncation(k));
            }
            let states: Vec<WaveFunction> = match &system.scheme {
                ProtectionScheme::ProtectivePotential { level, .. } => {
                    if *level >= k {
                        return Err(PmError::TruncationTooSmall { tail: 1.0 });
                    }
                    system.levels.iter().take(k).map(|p| p.state.clone()).collect()
                }
                ProtectionScheme::Zeno { .. } => zeno_levels(system, k)?,
            };
            if states.len() < k {
                return Err(PmError::InvalidTruncation(states.len()));
            }
            let image = observable.apply_state(psi0)?;
            let mut tail = truncation_tail(&states, &image)?;
            tail = tail.max(truncation_tail(&states, psi0)?);
            if tail > MAX_TRUNCATION_TAIL {
                return Err(PmError::TruncationTooSmall { tail });
            }
            let h = hermitian_matrix(&states, &h_shifted)?;
            let a = hermitian_matrix(&states, observable)?;
            (SystemBasis::Levels(states), SystemOperator::Dense(h), SystemOperator::Dense(a), tail)
        }
    };

    let system_coeffs = basis.coefficients(psi0)?;
    let packet = settings.pointer.initial_packet();
    let joint = JointState::product(basis, &system_coeffs, settings.pointer.grid, &packet)?;
    let hbar = system.hbar;
    let coupling = CouplingProfile::new(settings.profile, settings.time.t_total())?;
    let schedule = HamiltonianSchedule::new(system_op, coupled_op, coupling, settings.pointer.mass, hbar)?;
    let options = EvolveOptions { sampling: settings.sampling, reverse: false };

    let mut survival = 1.0;
    let evolution = match &system.scheme {
        ProtectionScheme::ProtectivePotential { .. } => {
            evolve::<PmError, _>(&joint, &schedule, &settings.time, options, |_, _| Ok(()))?
        }
        ProtectionScheme::Zeno { target, n_projections } => {
            let t = target_coefficients(&joint, target)?;
            let steps = projection_steps(settings.time.n_steps(), *n_projections);
            let mut next = 0;
            evolve::<PmError, _>(&joint, &schedule, &settings.time, options, |s, view| {
                while next < steps.len() && steps[next] == s {
                    let before = view.coeffs.iter().map(|c| c.norm_sqr()).sum::<f64>() * view.dx_pointer;
                    let kept = project_columns(view.coeffs, view.dim, &t, view.dx_pointer);
                    let p = kept / before;
                    if !(p >= ZERO_NORM) {
                        return Err(ProtectionError::ZeroSurvival(p).into());
                    }
                    survival *= p;
                    let scale = 1.0 / kept.sqrt();
                    view.coeffs.iter_mut().for_each(|c| *c *= scale);
                    next += 1;
                }
                Ok(())
            })?
        }
    };

    let first = evolution.trace.first().expect("trace starts at t = 0");
    let last = evolution.trace.last().expect("trace ends at t = T");
    let norm_drift = evolution.trace.iter().map(|s| (s.norm - 1.0).abs()).fold(0.0, f64::max);
    Ok(PmResult {
        pointer_shift: last.pointer_mean - first.pointer_mean,
        reference_expectation: reference,
        system_fidelity: joint_protection_fidelity(&evolution.state, psi0)?,
        survival,
        scheme: system.scheme.kind().to_string(),
        diagnostics: PmDiagnostics { norm_drift, truncation_tail: tail, active_blocks: evolution.active_blocks },
        trace: evolution.trace,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct BornSamples {
    pub samples: Vec<f64>,
    pub mean: f64,
    /// Distinct eigenvalues with their Born probabilities, ascending.
    pub spectrum: Vec<(f64, f64)>,
}

/// Eigenvalues of `observable` and their Born probabilities on `psi`,
/// merged where eigenvalues coincide to `EIGENVALUE_MERGE` relative to the spectral radius.
pub fn born_distribution(observable: &HermitianObservable, psi: &WaveFunction) -> Result<Vec<(f64, f64)>, PmError> {
    if observable.grid() != psi.grid() {
        return Err(HilbertError::GridMismatch.into());
    }
    let dx = psi.grid().dx();
    let mut pairs: Vec<(f64, f64)> = if observable.is_diagonal() {
        observable.diag().iter().zip(psi.amplitudes()).map(|(a, c)| (*a, c.norm_sqr() * dx)).collect()
    } else {
        let eig = observable.to_dense().try_symmetric_eigen(1e-15, 0).ok_or(EvolutionError::ConvergenceFailure)?;
        let v: Vec<C64> = psi.amplitudes().iter().map(|c| c * dx.sqrt()).collect();
        eig.eigenvalues
            .iter()
            .zip(eig.eigenvectors.column_iter())
            .map(|(a, col)| (*a, col.iter().zip(&v).map(|(e, c)| e.conj() * c).sum::<C64>().norm_sqr()))
            .collect()
    };
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(PmError::InvalidDistribution);
    }
    let scale = pairs.iter().map(|p| p.0.abs()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    let mut merged: Vec<(f64, f64)> = Vec::new();
    for (a, p) in pairs {
        match merged.last_mut() {
            Some(last) if a - last.0 <= EIGENVALUE_MERGE * scale => last.1 += p / total,
            _ => merged.push((a, p / total)),
        }
    }
    Ok(merged)
}

/// Draw `n_samples` eigenvalues i.i.d. from the Born distribution.
/// Deterministic for a given seed.
pub fn run_projective_measurement(
    observable: &HermitianObservable,
    psi: &WaveFunction,
    n_samples: usize,
    seed: u64,
) -> Result<BornSamples, PmError> {
    if n_samples == 0 {
        return Err(PmError::NoSamples);
    }
    let spectrum = born_distribution(observable, psi)?;
    let weights: Vec<f64> = spectrum.iter().map(|p| p.1).collect();
    let alias = WeightedAliasIndex::new(weights).map_err(|_| PmError::InvalidDistribution)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let samples: Vec<f64> = (0..n_samples).map(|_| spectrum[alias.sample(&mut rng)].0).collect();
    let mean = samples.iter().sum::<f64>() / n_samples as f64;
    Ok(BornSamples { samples, mean, spectrum })
}
