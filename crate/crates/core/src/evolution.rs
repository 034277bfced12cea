//! Time grids, coupling profiles, eigenstates and Crank-Nicolson propagation.
//!
//! The joint Hamiltonian `H_S ⊗ I + I ⊗ H_ptr + g(t) A ⊗ P` commutes with the
//! pointer momentum, so after a Fourier transform along the pointer it splits
//! into independent system-sized blocks `H_S + h_ptr(p) + g(t) p A`, one per
//! momentum. Each block is propagated with its own Crank-Nicolson solve.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hilbert::{HermitianObservable, HilbertError, WaveFunction, C64};
use crate::joint::{pointer_mean_of, pointer_momenta, JointError, JointState, PointerTransform};
use crate::linalg::{LinalgError, Tridiagonal, Workspace, RESIDUAL_TOL};

pub const MIN_STEPS: usize = 16;
/// Blocks whose initial weight is below this fraction of the largest carry
/// nothing representable in double precision and are left untouched.
pub const ACTIVE_BLOCK_WEIGHT: f64 = 1e-20;
const PROFILE_QUADRATURE_TOL: f64 = 1e-10;
const PROFILE_CHECK_POINTS: usize = 4096;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvolutionError {
    #[error("invalid time grid: {0}")]
    InvalidTimeGrid(String),
    #[error("coupling profile integrates to {0}, expected 1")]
    ProfileNormalization(f64),
    #[error("eigensolver did not converge")]
    ConvergenceFailure,
    #[error("requested {requested} eigenstates of a {n}-point operator")]
    TooManyStates { requested: usize, n: usize },
    #[error("linear solve failed: {0}")]
    SolverFailure(#[from] LinalgError),
    #[error("operator dimensions disagree: {0}")]
    DimensionMismatch(String),
    #[error(transparent)]
    Hilbert(#[from] HilbertError),
    #[error(transparent)]
    Joint(#[from] JointError),
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_total: f64,
    n_steps: usize,
}

impl TimeGrid {
    pub fn new(t_total: f64, n_steps: usize) -> Result<Self, EvolutionError> {
        if !(t_total > 0.0) || !t_total.is_finite() {
            return Err(EvolutionError::InvalidTimeGrid(format!("t_total must be positive, got {t_total}")));
        }
        if n_steps < MIN_STEPS {
            return Err(EvolutionError::InvalidTimeGrid(format!("n_steps must be at least {MIN_STEPS}, got {n_steps}")));
        }
        Ok(Self { t_total, n_steps })
    }

    pub fn t_total(&self) -> f64 {
        self.t_total
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.t_total / self.n_steps as f64
    }

    pub fn midpoint(&self, step: usize) -> f64 {
        (step as f64 + 0.5) * self.dt()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProfileShape {
    /// `(1 - cos(2 pi t / T)) / T`
    #[default]
    RaisedCosine,
    /// `exp(-1 / (s (1 - s))) / (Z T)` with `s = t / T`.
    SmoothBump,
}

/// Integral of `exp(-1/(s(1-s)))` over `[0, 1]`.
const BUMP_INTEGRAL: f64 = 0.007029858406609657;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CouplingProfile {
    shape: ProfileShape,
    t_total: f64,
}

impl CouplingProfile {
    pub fn new(shape: ProfileShape, t_total: f64) -> Result<Self, EvolutionError> {
        if !(t_total > 0.0) || !t_total.is_finite() {
            return Err(EvolutionError::InvalidTimeGrid(format!("t_total must be positive, got {t_total}")));
        }
        let profile = Self { shape, t_total };
        let integral = profile.midpoint_integral(PROFILE_CHECK_POINTS);
        if (integral - 1.0).abs() > PROFILE_QUADRATURE_TOL {
            return Err(EvolutionError::ProfileNormalization(integral));
        }
        Ok(profile)
    }

    pub fn shape(&self) -> ProfileShape {
        self.shape
    }

    pub fn t_total(&self) -> f64 {
        self.t_total
    }

    /// `g(t)`; exactly zero at and outside the endpoints.
    pub fn value(&self, t: f64) -> f64 {
        let big_t = self.t_total;
        if t <= 0.0 || t >= big_t {
            return 0.0;
        }
        let s = t / big_t;
        match self.shape {
            ProfileShape::RaisedCosine => (1.0 - (std::f64::consts::TAU * s).cos()) / big_t,
            ProfileShape::SmoothBump => (-1.0 / (s * (1.0 - s))).exp() / (BUMP_INTEGRAL * big_t),
        }
    }

    pub fn midpoint_integral(&self, n: usize) -> f64 {
        let h = self.t_total / n as f64;
        (0..n).map(|k| self.value((k as f64 + 0.5) * h)).sum::<f64>() * h
    }

    /// `int_0^t g`, closed form for the raised cosine.
    pub fn cumulative(&self, t: f64) -> f64 {
        let big_t = self.t_total;
        let t = t.clamp(0.0, big_t);
        match self.shape {
            ProfileShape::RaisedCosine => {
                let w = std::f64::consts::TAU / big_t;
                (t - (w * t).sin() / w) / big_t
            }
            ProfileShape::SmoothBump => {
                let n = 2048;
                let h = t / n as f64;
                (0..n).map(|k| self.value((k as f64 + 0.5) * h)).sum::<f64>() * h
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Eigenpair {
    pub energy: f64,
    pub state: WaveFunction,
}

/// The `k` lowest eigenpairs, energies ascending. Each state has its
/// largest-magnitude amplitude (first one, within rounding) real positive.
pub fn eigenstates(h: &HermitianObservable, k: usize) -> Result<Vec<Eigenpair>, EvolutionError> {
    let grid = *h.grid();
    let n = grid.n_points();
    if k == 0 || k > n {
        return Err(EvolutionError::TooManyStates { requested: k, n });
    }
    let real = h.upper().iter().all(|u| u.im == 0.0);
    let (values, vectors): (Vec<f64>, DMatrix<C64>) = if real {
        let m = DMatrix::from_fn(n, n, |i, j| h.entry(i, j).re);
        let eig = m.try_symmetric_eigen(1e-15, 0).ok_or(EvolutionError::ConvergenceFailure)?;
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors.map(|v| C64::new(v, 0.0)))
    } else {
        let eig = h.to_dense().try_symmetric_eigen(1e-15, 0).ok_or(EvolutionError::ConvergenceFailure)?;
        (eig.eigenvalues.iter().copied().collect(), eig.eigenvectors)
    };
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let scale = 1.0 / grid.dx().sqrt();
    order
        .into_iter()
        .take(k)
        .map(|col| {
            let v = vectors.column(col);
            let max = v.iter().map(|c| c.norm()).fold(0.0, f64::max);
            let lead = v.iter().find(|c| c.norm() >= max * (1.0 - 1e-9)).copied().unwrap_or(C64::new(1.0, 0.0));
            let phase = lead.conj() / lead.norm();
            let amps = v.iter().map(|c| c * phase * scale).collect();
            Ok(Eigenpair { energy: values[col], state: WaveFunction::new(grid, amps)? })
        })
        .collect()
}

/// Matrix `I + i tau H` for a banded Hermitian operator plus a real shift.
fn crank_nicolson_banded(
    h: &HermitianObservable,
    shift: f64,
    coupled: Option<(&HermitianObservable, f64)>,
    tau: f64,
    m: &mut Tridiagonal,
) {
    let n = h.grid().n_points();
    let i_tau = C64::new(0.0, tau);
    let diag = h.diag();
    let upper = h.upper();
    let hop = |k: usize| match coupled {
        Some((a, lam)) => upper[k] + a.upper()[k] * lam,
        None => upper[k],
    };
    for (k, (out, d)) in m.diag.iter_mut().zip(diag).enumerate() {
        let mut d = d + shift;
        if let Some((a, lam)) = coupled {
            d += lam * a.diag()[k];
        }
        *out = C64::new(1.0, 0.0) + i_tau * d;
    }
    for k in 0..n - 1 {
        let u = hop(k);
        m.upper[k] = i_tau * u;
        m.lower[k + 1] = i_tau * u.conj();
    }
    m.wrap = if h.grid().is_ring() {
        let u = hop(n - 1);
        // upper entry (n-1, 0) and its conjugate (0, n-1)
        Some((i_tau * u.conj(), i_tau * u))
    } else {
        None
    };
}

/// One Crank-Nicolson step `(I + i dt H / 2 hbar) psi' = (I - i dt H / 2 hbar) psi`.
pub fn step(state: &[C64], h_mid: &HermitianObservable, dt: f64, hbar: f64) -> Result<Vec<C64>, EvolutionError> {
    let n = h_mid.grid().n_points();
    if state.len() != n {
        return Err(EvolutionError::DimensionMismatch(format!("state has {} entries, operator {n}", state.len())));
    }
    let mut m = Tridiagonal::with_size(n);
    crank_nicolson_banded(h_mid, 0.0, None, dt / (2.0 * hbar), &mut m);
    let mut rhs = vec![C64::new(0.0, 0.0); n];
    m.apply_into(state, &mut rhs);
    for (r, s) in rhs.iter_mut().zip(state) {
        *r = 2.0 * s - *r;
    }
    let mut out = vec![C64::new(0.0, 0.0); n];
    m.solve_into(&rhs, &mut out, &mut Workspace::default())?;
    Ok(out)
}

/// Propagate a system state under `H(t)` (evaluated at step midpoints).
/// Returns the final state and the norm after every step.
pub fn evolve_system(
    initial: &WaveFunction,
    hamiltonian_at: impl Fn(f64) -> HermitianObservable,
    time: &TimeGrid,
    hbar: f64,
) -> Result<(WaveFunction, Vec<f64>), EvolutionError> {
    let grid = *initial.grid();
    let mut amps = initial.amplitudes().to_vec();
    let mut norms = Vec::with_capacity(time.n_steps());
    for s in 0..time.n_steps() {
        let h = hamiltonian_at(time.midpoint(s));
        if h.grid() != &grid {
            return Err(HilbertError::GridMismatch.into());
        }
        amps = step(&amps, &h, time.dt(), hbar)?;
        norms.push(amps.iter().map(|a| a.norm_sqr()).sum::<f64>() * grid.dx());
    }
    Ok((WaveFunction::new(grid, amps)?, norms))
}

/// A system-space operator, either on the position grid or as a dense
/// matrix in a truncated basis.
#[derive(Clone, Debug, PartialEq)]
pub enum SystemOperator {
    Banded(HermitianObservable),
    Dense(DMatrix<C64>),
}

impl SystemOperator {
    pub fn dim(&self) -> usize {
        match self {
            SystemOperator::Banded(h) => h.grid().n_points(),
            SystemOperator::Dense(m) => m.nrows(),
        }
    }

    pub fn to_dense(&self) -> DMatrix<C64> {
        match self {
            SystemOperator::Banded(h) => h.to_dense(),
            SystemOperator::Dense(m) => m.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HamiltonianSchedule {
    system: SystemOperator,
    coupled: SystemOperator,
    coupling: CouplingProfile,
    pointer_mass: f64,
    hbar: f64,
}

impl HamiltonianSchedule {
    pub fn new(
        system: SystemOperator,
        coupled: SystemOperator,
        coupling: CouplingProfile,
        pointer_mass: f64,
        hbar: f64,
    ) -> Result<Self, EvolutionError> {
        let same_kind = matches!(
            (&system, &coupled),
            (SystemOperator::Banded(_), SystemOperator::Banded(_)) | (SystemOperator::Dense(_), SystemOperator::Dense(_))
        );
        if !same_kind || system.dim() != coupled.dim() {
            return Err(EvolutionError::DimensionMismatch("system and coupled operators differ".into()));
        }
        if let (SystemOperator::Banded(h), SystemOperator::Banded(a)) = (&system, &coupled) {
            if h.grid() != a.grid() {
                return Err(HilbertError::GridMismatch.into());
            }
        }
        for m in [&system, &coupled] {
            if let SystemOperator::Dense(d) = m {
                if !d.is_square() || (d - d.adjoint()).iter().any(|c| c.norm() != 0.0) {
                    return Err(EvolutionError::DimensionMismatch("dense operator must be square and Hermitian".into()));
                }
            }
        }
        Ok(Self { system, coupled, coupling, pointer_mass, hbar })
    }

    pub fn coupling(&self) -> &CouplingProfile {
        &self.coupling
    }

    pub fn dim(&self) -> usize {
        self.system.dim()
    }

    fn pointer_energy(&self, p: f64) -> f64 {
        if self.pointer_mass.is_infinite() {
            0.0
        } else {
            p * p / (2.0 * self.pointer_mass)
        }
    }

    /// System block of the joint Hamiltonian at time `t` and pointer momentum `p`.
    pub fn block(&self, t: f64, p: f64) -> DMatrix<C64> {
        let lam = self.coupling.value(t) * p;
        let dim = self.dim();
        self.system.to_dense()
            + self.coupled.to_dense() * C64::new(lam, 0.0)
            + DMatrix::identity(dim, dim) * C64::new(self.pointer_energy(p), 0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Sampling {
    #[default]
    EveryStep,
    Every(usize),
    Endpoints,
}

#[derive(Clone, Copy, Debug, PartialEq, Default)]
pub struct EvolveOptions {
    pub sampling: Sampling,
    /// Run the schedule backwards from `T` to `0` (`dt -> -dt`).
    pub reverse: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub t: f64,
    pub pointer_mean: f64,
    pub norm: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evolution {
    pub state: JointState,
    pub trace: Vec<TraceSample>,
    /// Pointer momentum blocks that were propagated.
    pub active_blocks: usize,
}

/// Pointer-momentum-resolved coefficients handed to the per-step hook.
pub struct MomentumView<'a> {
    pub coeffs: &'a mut [C64],
    pub dim: usize,
    pub dx_pointer: f64,
}

enum BlockSolver {
    Banded(Box<(Tridiagonal, Workspace)>),
    Dense,
}

/// Evolve a joint state over `time`. `after_step(step, view)` runs after
/// every step with the momentum-space coefficients and may modify them.
pub fn evolve<E, F>(
    initial: &JointState,
    schedule: &HamiltonianSchedule,
    time: &TimeGrid,
    options: EvolveOptions,
    mut after_step: F,
) -> Result<Evolution, E>
where
    E: From<EvolutionError>,
    F: FnMut(usize, MomentumView<'_>) -> Result<(), E>,
{
    let dim = initial.dim();
    if dim != schedule.dim() {
        return Err(EvolutionError::DimensionMismatch(format!("state dimension {dim}, schedule {}", schedule.dim())).into());
    }
    let pointer = *initial.pointer_grid();
    let nq = pointer.n_points();
    let dx_ptr = pointer.dx();
    let transform = PointerTransform::new(nq);
    let momenta = pointer_momenta(&pointer, schedule.hbar);

    let mut coeffs = initial.coeffs().to_vec();
    transform.to_momentum(&mut coeffs, dim);
    let weights: Vec<f64> = coeffs.chunks(dim).map(|c| c.iter().map(|v| v.norm_sqr()).sum()).collect();
    let max_w = weights.iter().copied().fold(0.0, f64::max);
    let active: Vec<usize> = (0..nq).filter(|&q| weights[q] > ACTIVE_BLOCK_WEIGHT * max_w).collect();

    let sign = if options.reverse { -1.0 } else { 1.0 };
    let tau = sign * time.dt() / (2.0 * schedule.hbar);
    let n_steps = time.n_steps();
    let sample_at = |done: usize| match options.sampling {
        Sampling::EveryStep => true,
        Sampling::Every(k) => done.is_multiple_of(k.max(1)) || done == n_steps,
        Sampling::Endpoints => done == n_steps,
    };

    let mut trace = Vec::new();
    let probe = |coeffs: &[C64], t: f64, trace: &mut Vec<TraceSample>| {
        let mut pos = coeffs.to_vec();
        transform.to_position(&mut pos, dim);
        let norm = pos.iter().map(|c| c.norm_sqr()).sum::<f64>() * dx_ptr;
        trace.push(TraceSample { t, pointer_mean: pointer_mean_of(&pos, dim, &pointer), norm });
    };
    let t_start = if options.reverse { time.t_total() } else { 0.0 };
    probe(&coeffs, t_start, &mut trace);

    let mut solver = match &schedule.system {
        SystemOperator::Banded(_) => BlockSolver::Banded(Box::new((Tridiagonal::with_size(dim), Workspace::default()))),
        SystemOperator::Dense(_) => BlockSolver::Dense,
    };
    let mut rhs = vec![C64::new(0.0, 0.0); dim];
    let mut out = vec![C64::new(0.0, 0.0); dim];

    for done in 1..=n_steps {
        let s = if options.reverse { n_steps - done } else { done - 1 };
        let g = schedule.coupling.value(time.midpoint(s));
        for &q in &active {
            let p = momenta[q];
            let block = &mut coeffs[q * dim..(q + 1) * dim];
            let shift = schedule.pointer_energy(p);
            match (&mut solver, &schedule.system, &schedule.coupled) {
                (BlockSolver::Banded(banded), SystemOperator::Banded(h), SystemOperator::Banded(a)) => {
                    let (m, ws) = &mut **banded;
                    crank_nicolson_banded(h, shift, Some((a, g * p)), tau, m);
                    m.apply_into(block, &mut rhs);
                    for (r, c) in rhs.iter_mut().zip(block.iter()) {
                        *r = 2.0 * c - *r;
                    }
                    m.solve_into(&rhs, &mut out, ws).map_err(EvolutionError::from)?;
                    block.copy_from_slice(&out);
                }
                (BlockSolver::Dense, SystemOperator::Dense(h), SystemOperator::Dense(a)) => {
                    let i_tau = C64::new(0.0, tau);
                    let mut m = h * i_tau + a * (i_tau * g * p);
                    for k in 0..dim {
                        m[(k, k)] += C64::new(1.0, 0.0) + i_tau * shift;
                    }
                    let x = DVector::from_column_slice(block);
                    let b = x.scale(2.0) - &m * &x;
                    let sol = m.clone().lu().solve(&b).ok_or(EvolutionError::SolverFailure(LinalgError::SingularPivot(0)))?;
                    let res = (&m * &sol - &b).norm() / b.norm().max(f64::MIN_POSITIVE);
                    if res >= RESIDUAL_TOL {
                        return Err(EvolutionError::SolverFailure(LinalgError::Residual(res)).into());
                    }
                    block.copy_from_slice(sol.as_slice());
                }
                _ => unreachable!("schedule operators share a representation"),
            }
        }
        after_step(s, MomentumView { coeffs: &mut coeffs, dim, dx_pointer: dx_ptr })?;
        if sample_at(done) {
            let t = if options.reverse { s as f64 * time.dt() } else { done as f64 * time.dt() };
            probe(&coeffs, t, &mut trace);
        }
    }

    transform.to_position(&mut coeffs, dim);
    let state = JointState::new(initial.basis().clone(), pointer, coeffs).map_err(EvolutionError::from)?;
    Ok(Evolution { state, trace, active_blocks: active.len() })
}

/// Hook that does nothing, for plain evolution.
pub fn no_hook(_: usize, _: MomentumView<'_>) -> Result<(), EvolutionError> {
    Ok(())
}
