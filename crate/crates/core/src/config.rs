//! Declarative experiment configuration (TOML).

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::evolution::{eigenstates, ProfileShape, Sampling, TimeGrid, MIN_STEPS};
use crate::hilbert::{
    cell_projector, current_observable, Grid, HermitianObservable, PhysicalConstants, WaveFunction, C64, MIN_POINTS,
};
use crate::joint::PointerConfig;
use crate::pm::{PmSettings, Representation, MAX_LEVELS};
use crate::protection::{ProtectionScheme, SystemModel};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConfigError {
    #[error("cannot read config: {0}")]
    Read(String),
    #[error("cannot parse config: {0}")]
    Parse(String),
    #[error("invalid `{field}`: {message}")]
    Invalid { field: String, message: String },
}

fn invalid(field: &str, message: impl Into<String>) -> ConfigError {
    ConfigError::Invalid { field: field.to_string(), message: message.into() }
}

fn positive(field: &str, value: f64) -> Result<(), ConfigError> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(invalid(field, format!("must be positive and finite, got {value}")))
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SystemConfig {
    /// Hard-wall box `[0, length]`.
    Box { length: f64 },
    /// Oscillator `m omega^2 x^2 / 2` on the box `[-half_width, half_width]`.
    Harmonic {
        omega: f64,
        #[serde(default = "default_half_width")]
        half_width: f64,
    },
    /// Periodic ring `[0, length)` threaded by `flux` flux quanta.
    Ring {
        length: f64,
        #[serde(default)]
        flux: f64,
    },
}

fn default_half_width() -> f64 {
    6.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridConfig {
    pub n_points: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self { n_points: 128 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ConstantsConfig {
    pub hbar: f64,
    pub mass: f64,
}

impl Default for ConstantsConfig {
    fn default() -> Self {
        Self { hbar: 1.0, mass: 1.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SchemeConfig {
    ProtectivePotential {
        #[serde(default)]
        level: usize,
    },
    /// The target is `plane_wave` (a ring wavenumber index) when given,
    /// otherwise eigenstate `level` of the system Hamiltonian.
    Zeno {
        n_projections: usize,
        #[serde(default)]
        level: usize,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        plane_wave: Option<i64>,
    },
}

impl Default for SchemeConfig {
    fn default() -> Self {
        SchemeConfig::ProtectivePotential { level: 0 }
    }
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObservableConfig {
    Identity,
    Position,
    #[default]
    PositionSquared,
    /// Half-open index range `[start, end)`.
    CellProjector {
        cell: [usize; 2],
    },
    Current {
        cell: [usize; 2],
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointerSection {
    pub n_points: usize,
    pub half_width: f64,
    pub center: f64,
    pub width: f64,
    /// `inf` freezes the pointer.
    pub mass: f64,
}

impl Default for PointerSection {
    fn default() -> Self {
        Self { n_points: 128, half_width: 20.0, center: 0.0, width: 2.0, mass: f64::INFINITY }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeConfig {
    pub t_total: f64,
    pub n_steps: usize,
    #[serde(default)]
    pub profile: ProfileShape,
}

#[derive(Clone, Debug, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeasurementConfig {
    /// Number of system levels kept; the full grid when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub truncation: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParameter {
    #[serde(alias = "T")]
    TTotal,
    NSteps,
    #[serde(alias = "zeno_M")]
    ZenoM,
    Cells,
}

impl SweepParameter {
    pub fn name(&self) -> &'static str {
        match self {
            SweepParameter::TTotal => "t_total",
            SweepParameter::NSteps => "n_steps",
            SweepParameter::ZenoM => "zeno_m",
            SweepParameter::Cells => "cells",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub parameter: SweepParameter,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconstructConfig {
    pub cells: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BornConfig {
    pub n_samples: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EigenConfig {
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OutputFormat {
    #[default]
    Csv,
    Json,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub path: PathBuf,
    #[serde(default)]
    pub format: OutputFormat,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub seed: u64,
    pub system: SystemConfig,
    #[serde(default)]
    pub grid: GridConfig,
    #[serde(default)]
    pub constants: ConstantsConfig,
    #[serde(default)]
    pub scheme: SchemeConfig,
    #[serde(default)]
    pub observable: ObservableConfig,
    #[serde(default)]
    pub pointer: PointerSection,
    pub time: TimeConfig,
    #[serde(default)]
    pub measurement: MeasurementConfig,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reconstruct: Option<ReconstructConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub born: Option<BornConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eigen: Option<EigenConfig>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<OutputConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Read(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config is representable as TOML")
    }

    /// SHA-256 of the canonical serialization, hex encoded.
    pub fn hash(&self) -> String {
        hex::encode(Sha256::digest(self.to_toml().as_bytes()))
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.seed > i64::MAX as u64 {
            return Err(invalid("seed", format!("must fit a signed 64-bit integer, got {}", self.seed)));
        }
        let n = self.grid.n_points;
        if n < MIN_POINTS {
            return Err(invalid("grid.n_points", format!("must be at least {MIN_POINTS}, got {n}")));
        }
        match &self.system {
            SystemConfig::Box { length } => positive("system.length", *length)?,
            SystemConfig::Harmonic { omega, half_width } => {
                positive("system.omega", *omega)?;
                positive("system.half_width", *half_width)?;
            }
            SystemConfig::Ring { length, flux } => {
                positive("system.length", *length)?;
                if !flux.is_finite() {
                    return Err(invalid("system.flux", "must be finite"));
                }
            }
        }
        positive("constants.hbar", self.constants.hbar)?;
        positive("constants.mass", self.constants.mass)?;
        positive("time.t_total", self.time.t_total)?;
        if self.time.n_steps < MIN_STEPS {
            return Err(invalid("time.n_steps", format!("must be at least {MIN_STEPS}, got {}", self.time.n_steps)));
        }
        let p = &self.pointer;
        if p.n_points < MIN_POINTS {
            return Err(invalid("pointer.n_points", format!("must be at least {MIN_POINTS}, got {}", p.n_points)));
        }
        positive("pointer.half_width", p.half_width)?;
        if !(p.mass > 0.0) {
            return Err(invalid("pointer.mass", format!("must be positive, got {}", p.mass)));
        }
        let dx_ptr = 2.0 * p.half_width / p.n_points as f64;
        if !(p.width >= 2.0 * dx_ptr) {
            return Err(invalid(
                "pointer.width",
                format!("must be at least two pointer grid spacings ({}), got {}", 2.0 * dx_ptr, p.width),
            ));
        }
        if !(p.center.abs() < p.half_width) {
            return Err(invalid("pointer.center", format!("must lie inside (-{0}, {0})", p.half_width)));
        }
        match &self.scheme {
            SchemeConfig::ProtectivePotential { level } => {
                if *level >= n {
                    return Err(invalid("scheme.level", format!("must be below grid.n_points ({n})")));
                }
            }
            SchemeConfig::Zeno { n_projections, level, plane_wave } => {
                if *n_projections == 0 || *n_projections > self.time.n_steps {
                    return Err(invalid("scheme.n_projections", format!("must be in 1..={}", self.time.n_steps)));
                }
                if *level >= n {
                    return Err(invalid("scheme.level", format!("must be below grid.n_points ({n})")));
                }
                if plane_wave.is_some() && !matches!(self.system, SystemConfig::Ring { .. }) {
                    return Err(invalid("scheme.plane_wave", "requires a ring system"));
                }
            }
        }
        if let ObservableConfig::CellProjector { cell } | ObservableConfig::Current { cell } = &self.observable {
            if cell[0] >= cell[1] || cell[1] > n {
                return Err(invalid("observable.cell", format!("must satisfy start < end <= {n}, got {cell:?}")));
            }
        }
        if let Some(k) = self.measurement.truncation {
            if !(2..=MAX_LEVELS).contains(&k) {
                return Err(invalid("measurement.truncation", format!("must be in 2..={MAX_LEVELS}, got {k}")));
            }
        }
        if let Some(sweep) = &self.sweep {
            if sweep.values.is_empty() {
                return Err(invalid("sweep.values", "must not be empty"));
            }
            if sweep.values.windows(2).any(|w| !(w[1] > w[0])) {
                return Err(invalid("sweep.values", "must be strictly increasing"));
            }
            if sweep.values.iter().any(|v| !(*v > 0.0) || !v.is_finite()) {
                return Err(invalid("sweep.values", "must be positive"));
            }
            if sweep.parameter != SweepParameter::TTotal && sweep.values.iter().any(|v| v.fract() != 0.0) {
                return Err(invalid("sweep.values", format!("{} takes integer values", sweep.parameter.name())));
            }
            if sweep.parameter == SweepParameter::ZenoM && !matches!(self.scheme, SchemeConfig::Zeno { .. }) {
                return Err(invalid("sweep.parameter", "zeno_m requires the zeno scheme"));
            }
            for v in &sweep.values {
                self.with_sweep_value(sweep.parameter, *v).validate_swept()?;
            }
        }
        if let Some(r) = &self.reconstruct {
            if r.cells == 0 || r.cells > n {
                return Err(invalid("reconstruct.cells", format!("must be in 1..={n}, got {}", r.cells)));
            }
        }
        if let Some(b) = &self.born {
            if b.n_samples == 0 {
                return Err(invalid("born.n_samples", "must be at least 1"));
            }
        }
        if let Some(e) = &self.eigen {
            if e.count == 0 || e.count > n {
                return Err(invalid("eigen.count", format!("must be in 1..={n}, got {}", e.count)));
            }
        }
        Ok(())
    }

    fn validate_swept(mut self) -> Result<(), ConfigError> {
        self.sweep = None;
        self.validate().map_err(|e| match e {
            ConfigError::Invalid { field, message } => invalid("sweep.values", format!("gives invalid `{field}`: {message}")),
            other => other,
        })
    }

    /// Copy with one swept parameter replaced and the sweep section removed.
    pub fn with_sweep_value(&self, parameter: SweepParameter, value: f64) -> Self {
        let mut cfg = self.clone();
        cfg.sweep = None;
        match parameter {
            SweepParameter::TTotal => cfg.time.t_total = value,
            SweepParameter::NSteps => cfg.time.n_steps = value as usize,
            SweepParameter::ZenoM => {
                if let SchemeConfig::Zeno { n_projections, .. } = &mut cfg.scheme {
                    *n_projections = value as usize;
                }
            }
            SweepParameter::Cells => {
                cfg.reconstruct = Some(ReconstructConfig { cells: value as usize });
            }
        }
        cfg
    }

    pub fn grid(&self) -> Grid {
        let n = self.grid.n_points;
        match self.system {
            SystemConfig::Box { length } => Grid::boxed(n, 0.0, length),
            SystemConfig::Harmonic { half_width, .. } => Grid::boxed(n, -half_width, half_width),
            SystemConfig::Ring { length, .. } => Grid::ring(n, 0.0, length),
        }
        .expect("validated grid")
    }

    pub fn constants(&self) -> PhysicalConstants {
        PhysicalConstants::new(self.constants.hbar, self.constants.mass, self.pointer.mass).expect("validated constants")
    }

    pub fn model(&self) -> SystemModel {
        let model = SystemModel::new(self.grid(), self.constants());
        match self.system {
            SystemConfig::Ring { flux, .. } => model.with_flux(flux),
            _ => model,
        }
    }

    pub fn potential(&self) -> Vec<f64> {
        let grid = self.grid();
        match self.system {
            SystemConfig::Harmonic { omega, .. } => {
                let k = self.constants.mass * omega * omega;
                grid.points().iter().map(|x| 0.5 * k * x * x).collect()
            }
            _ => vec![0.0; grid.n_points()],
        }
    }

    pub fn scheme(&self) -> Result<ProtectionScheme, crate::protection::ProtectionError> {
        match &self.scheme {
            SchemeConfig::ProtectivePotential { level } => {
                Ok(ProtectionScheme::ProtectivePotential { potential: self.potential(), level: *level })
            }
            SchemeConfig::Zeno { n_projections, level, plane_wave } => {
                let grid = self.grid();
                let target = match plane_wave {
                    Some(m) => {
                        let k = std::f64::consts::TAU * *m as f64 / grid.length();
                        WaveFunction::from_fn(grid, |x| C64::from_polar(1.0, k * x)).normalize()?
                    }
                    None => {
                        let h = self.model().hamiltonian(&self.potential())?;
                        eigenstates(&h, level + 1)?.swap_remove(*level).state
                    }
                };
                Ok(ProtectionScheme::Zeno { target, n_projections: *n_projections })
            }
        }
    }

    pub fn observable(&self) -> HermitianObservable {
        let grid = self.grid();
        match &self.observable {
            ObservableConfig::Identity => HermitianObservable::identity(grid),
            ObservableConfig::Position => HermitianObservable::position(grid),
            ObservableConfig::PositionSquared => HermitianObservable::position_squared(grid),
            ObservableConfig::CellProjector { cell } => cell_projector(&grid, cell[0]..cell[1]).expect("validated cell"),
            ObservableConfig::Current { cell } => {
                current_observable(&grid, cell[0]..cell[1], &self.constants()).expect("validated cell")
            }
        }
    }

    pub fn pointer_config(&self) -> PointerConfig {
        let p = &self.pointer;
        PointerConfig {
            grid: Grid::ring(p.n_points, -p.half_width, p.half_width).expect("validated pointer grid"),
            initial_center: p.center,
            initial_width: p.width,
            mass: p.mass,
        }
    }

    pub fn pm_settings(&self, sampling: Sampling) -> PmSettings {
        PmSettings {
            pointer: self.pointer_config(),
            time: TimeGrid::new(self.time.t_total, self.time.n_steps).expect("validated time grid"),
            profile: self.time.profile,
            representation: match self.measurement.truncation {
                Some(k) => Representation::Levels(k),
                None => Representation::Grid,
            },
            sampling,
        }
    }
}
