#![allow(dead_code)]

use std::f64::consts::TAU;

use pmsim::hilbert::{Grid, PhysicalConstants, WaveFunction, C64};
use pmsim::protection::{ProtectedSystem, ProtectionScheme, SystemModel};

pub fn harmonic() -> (SystemModel, ProtectionScheme) {
    let grid = Grid::boxed(128, -6.0, 6.0).unwrap();
    let potential = grid.points().iter().map(|x| 0.5 * x * x).collect();
    (SystemModel::new(grid, PhysicalConstants::default()), ProtectionScheme::ProtectivePotential { potential, level: 0 })
}

pub fn square_well() -> (SystemModel, ProtectionScheme) {
    let grid = Grid::boxed(128, 0.0, 1.0).unwrap();
    (
        SystemModel::new(grid, PhysicalConstants::default()),
        ProtectionScheme::ProtectivePotential { potential: vec![0.0; 128], level: 0 },
    )
}

pub fn ring_grid() -> Grid {
    Grid::ring(128, 0.0, TAU).unwrap()
}

pub fn plane_wave(k_index: i32) -> WaveFunction {
    let grid = ring_grid();
    let k = TAU * k_index as f64 / grid.length();
    WaveFunction::from_fn(grid, |x| C64::from_polar(1.0, k * x)).normalize().unwrap()
}

pub fn zeno_plane_wave(n_projections: usize) -> (SystemModel, ProtectionScheme) {
    let model = SystemModel::new(ring_grid(), PhysicalConstants::default());
    (model, ProtectionScheme::Zeno { target: plane_wave(3), n_projections })
}

pub fn flux_ring() -> (SystemModel, ProtectionScheme) {
    let model = SystemModel::new(ring_grid(), PhysicalConstants::default()).with_flux(0.3);
    (model, ProtectionScheme::ProtectivePotential { potential: vec![0.0; 128], level: 1 })
}

pub fn prepared((model, scheme): (SystemModel, ProtectionScheme), levels: usize) -> (SystemModel, ProtectedSystem) {
    let system = ProtectedSystem::prepare(&scheme, &model, levels).unwrap();
    (model, system)
}
