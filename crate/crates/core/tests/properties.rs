mod common;

use proptest::prelude::*;

use pmsim::config::ExperimentConfig;
use pmsim::evolution::{step, CouplingProfile, ProfileShape};
use pmsim::hilbert::{
    cell_projector, current_observable, expectation, Grid, HermitianObservable, PhysicalConstants, WaveFunction, C64,
};
use pmsim::pm::born_distribution;
use pmsim::protection::protection_fidelity;
use pmsim::reconstruction::{exact_profiles, fidelity, reconstruct_wavefunction, CellPartition};

const N: usize = 32;

fn grid() -> Grid {
    Grid::boxed(N, -4.0, 4.0).unwrap()
}

fn ring() -> Grid {
    Grid::ring(N, 0.0, 8.0).unwrap()
}

fn amplitudes() -> impl Strategy<Value = Vec<C64>> {
    prop::collection::vec((-1.0..1.0f64, -1.0..1.0f64), N)
        .prop_filter("non-zero", |v| v.iter().map(|(a, b)| a * a + b * b).sum::<f64>() > 1e-3)
        .prop_map(|v| v.into_iter().map(|(a, b)| C64::new(a, b)).collect())
}

fn state(g: Grid) -> impl Strategy<Value = WaveFunction> {
    amplitudes().prop_map(move |a| WaveFunction::new(g, a).unwrap().normalize().unwrap())
}

fn cuts() -> impl Strategy<Value = Vec<std::ops::Range<usize>>> {
    prop::collection::btree_set(1..N, 0..8).prop_map(|set| {
        let mut edges: Vec<usize> = std::iter::once(0).chain(set).chain(std::iter::once(N)).collect();
        edges.dedup();
        edges.windows(2).map(|w| w[0]..w[1]).collect()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn normalize_gives_unit_norm(a in amplitudes(), s in 1e-3..1e3f64) {
        let psi = WaveFunction::new(grid(), a).unwrap().scaled(s).normalize().unwrap();
        prop_assert!((psi.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn cell_densities_partition_unity(psi in state(grid()), cells in cuts()) {
        let total: f64 = cells
            .iter()
            .map(|c| expectation(&cell_projector(&grid(), c.clone()).unwrap(), &psi).unwrap() * (c.len() as f64 * grid().dx()))
            .sum();
        prop_assert!((total - 1.0).abs() < 1e-12);
    }

    #[test]
    fn real_states_carry_no_current(values in prop::collection::vec(-1.0..1.0f64, N), start in 0..N - 1, len in 1..8usize) {
        prop_assume!(values.iter().any(|v| v.abs() > 1e-2));
        let psi = WaveFunction::from_real(ring(), &values).unwrap().normalize().unwrap().with_phase(0.7);
        let cell = start..(start + len).min(N);
        let j = expectation(&current_observable(&ring(), cell, &PhysicalConstants::default()).unwrap(), &psi).unwrap();
        prop_assert!(j.abs() < 1e-12);
    }

    #[test]
    fn constructed_operators_are_exactly_hermitian(v in prop::collection::vec(-5.0..5.0f64, N), flux in -2.0..2.0f64, start in 0..N - 1) {
        let constants = PhysicalConstants::default();
        let h = HermitianObservable::kinetic(ring(), &constants, flux)
            .add_scaled(&HermitianObservable::potential(ring(), &v).unwrap(), 1.0)
            .unwrap();
        prop_assert_eq!(h.hermiticity_defect(), 0.0);
        let current = current_observable(&ring(), start..N, &constants).unwrap();
        prop_assert_eq!(current.hermiticity_defect(), 0.0);
    }

    #[test]
    fn expectation_ignores_global_phase(psi in state(grid()), alpha in -10.0..10.0f64) {
        let x2 = HermitianObservable::position_squared(grid());
        let a = expectation(&x2, &psi).unwrap();
        let b = expectation(&x2, &psi.clone().with_phase(alpha)).unwrap();
        prop_assert!((a - b).abs() < 1e-12 * a.abs().max(1.0));
        prop_assert!((protection_fidelity(&psi, &psi.clone().with_phase(alpha)).unwrap() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn coupling_has_unit_area_and_vanishes_at_ends(t_total in 0.1..200.0f64, bump in any::<bool>()) {
        let shape = if bump { ProfileShape::SmoothBump } else { ProfileShape::RaisedCosine };
        let g = CouplingProfile::new(shape, t_total).unwrap();
        prop_assert!((g.midpoint_integral(4096) - 1.0).abs() < 1e-9);
        prop_assert_eq!(g.value(0.0), 0.0);
        prop_assert_eq!(g.value(t_total), 0.0);
        prop_assert!((g.cumulative(t_total) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn crank_nicolson_step_preserves_norm(psi in state(grid()), v in prop::collection::vec(-20.0..20.0f64, N), dt in 1e-3..1.0f64) {
        let h = HermitianObservable::kinetic(grid(), &PhysicalConstants::default(), 0.0)
            .add_scaled(&HermitianObservable::potential(grid(), &v).unwrap(), 1.0)
            .unwrap();
        let next = step(psi.amplitudes(), &h, dt, 1.0).unwrap();
        let norm: f64 = next.iter().map(|c| c.norm_sqr()).sum::<f64>() * grid().dx();
        prop_assert!((norm - 1.0).abs() < 1e-12);
    }

    #[test]
    fn born_probabilities_sum_to_one(psi in state(grid()), lo in 0..N / 2, len in 1..N / 2) {
        let projector = cell_projector(&grid(), lo..lo + len).unwrap();
        let spectrum = born_distribution(&projector, &psi).unwrap();
        prop_assert!((spectrum.iter().map(|p| p.1).sum::<f64>() - 1.0).abs() < 1e-12);
        prop_assert!(spectrum.len() <= 2);
        let mean: f64 = spectrum.iter().map(|(a, p)| a * p).sum();
        prop_assert!((mean - expectation(&projector, &psi).unwrap()).abs() < 1e-10 * mean.abs().max(1.0));
    }

    #[test]
    fn reconstruction_ignores_global_phase(psi in state(ring()), alpha in -3.0..3.0f64, cells in 4..=N) {
        let constants = PhysicalConstants::default();
        let partition = CellPartition::uniform(ring(), cells).unwrap();
        let (rho, j) = exact_profiles(&psi, &partition, &constants).unwrap();
        let (rho2, j2) = exact_profiles(&psi.clone().with_phase(alpha), &partition, &constants).unwrap();
        let a = reconstruct_wavefunction(&rho, &j, &partition, &constants).unwrap();
        let b = reconstruct_wavefunction(&rho2, &j2, &partition, &constants).unwrap();
        prop_assert!(fidelity(&a.psi, &b.psi).unwrap() > 1.0 - 1e-10);
        prop_assert!((a.psi.norm() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn plane_waves_reconstruct_with_their_winding(k in -5i64..=5) {
        let constants = PhysicalConstants::default();
        let g = Grid::ring(128, 0.0, std::f64::consts::TAU).unwrap();
        let psi = WaveFunction::from_fn(g, |x| C64::from_polar(1.0, k as f64 * x)).normalize().unwrap();
        let partition = CellPartition::uniform(g, 64).unwrap();
        let (rho, j) = exact_profiles(&psi, &partition, &constants).unwrap();
        let rec = reconstruct_wavefunction(&rho, &j, &partition, &constants).unwrap();
        prop_assert_eq!(rec.winding, Some(k));
        prop_assert!(fidelity(&rec.psi, &psi).unwrap() > 1.0 - 1e-10);
    }

    #[test]
    fn config_round_trips(t_total in 0.5..100.0f64, n_steps in 16..2000usize, seed in 0..=i64::MAX as u64, omega in 0.1..5.0f64) {
        let text = format!(
            "seed = {seed}\n\n[system]\nkind = \"harmonic\"\nomega = {omega}\n\n[time]\nt_total = {t_total}\nn_steps = {n_steps}\n"
        );
        let cfg = ExperimentConfig::from_toml(&text).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(cfg.hash(), again.hash());
        prop_assert_eq!(cfg, again);
    }
}
