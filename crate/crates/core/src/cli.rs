//! Command-line experiment runner.

use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::config::{ConfigError, ExperimentConfig, OutputFormat, SweepParameter};
use crate::evolution::{eigenstates, Sampling};
use crate::hilbert::expectation;
use crate::pm::{run_prepared, run_projective_measurement};
use crate::protection::ProtectedSystem;
use crate::reconstruction::{run_campaign, CellPartition, ReconstructionReport};

pub const EXIT_OK: i32 = 0;
pub const EXIT_IO: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "pmsim", version, about = "Protective measurement simulator")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Run one protective measurement, or a sweep if the config has one.
    Pm(RunArgs),
    /// Density and current campaign followed by wave function reconstruction.
    Reconstruct(RunArgs),
    /// Sample projective (Born rule) outcomes.
    Born(RunArgs),
    /// Dump the lowest eigenvalues of the system Hamiltonian.
    Eigen(RunArgs),
    /// Protective measurement sweep; the config must contain a sweep section.
    Sweep(RunArgs),
}

#[derive(Debug, Args)]
pub struct RunArgs {
    /// Experiment config (TOML).
    pub config: PathBuf,
    /// Output file; overrides the config. Standard output when absent.
    #[arg(short, long)]
    pub output: Option<PathBuf>,
    #[arg(short, long, value_enum)]
    pub format: Option<OutputFormat>,
}

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("output error: {0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Numerical(_) => EXIT_NUMERICAL,
            CliError::Io(_) => EXIT_IO,
        }
    }
}

fn numerical(e: impl std::fmt::Display) -> CliError {
    CliError::Numerical(e.to_string())
}

fn io_error(e: impl std::fmt::Display) -> CliError {
    CliError::Io(e.to_string())
}

/// One output row. Field order is the CSV column order.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ResultRecord {
    pub config_hash: String,
    pub sweep_param: String,
    pub sweep_value: Option<f64>,
    pub pointer_shift: Option<f64>,
    pub reference_expectation: Option<f64>,
    pub shift_error: Option<f64>,
    pub fidelity: f64,
    pub survival: f64,
    pub wall_time_s: f64,
}

struct Output {
    path: Option<PathBuf>,
    format: OutputFormat,
}

impl Output {
    fn resolve(args: &RunArgs, cfg: &ExperimentConfig) -> Self {
        let path = args.output.clone().or_else(|| cfg.output.as_ref().map(|o| o.path.clone()));
        let format = args.format.or_else(|| cfg.output.as_ref().map(|o| o.format)).unwrap_or_default();
        Self { path, format }
    }

    fn writer(&self) -> Result<Box<dyn Write>, CliError> {
        match &self.path {
            Some(p) => Ok(Box::new(io::BufWriter::new(File::create(p).map_err(|e| io_error(format!("{}: {e}", p.display())))?))),
            None => Ok(Box::new(io::stdout().lock())),
        }
    }

    fn sibling(&self, suffix: &str) -> Option<PathBuf> {
        self.path.as_ref().map(|p| {
            let stem = p.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
            p.with_file_name(format!("{stem}.{suffix}"))
        })
    }
}

fn write_csv<T: Serialize>(mut out: Box<dyn Write>, rows: &[T]) -> Result<(), CliError> {
    {
        let mut w = csv::Writer::from_writer(&mut out);
        for row in rows {
            w.serialize(row).map_err(io_error)?;
        }
        w.flush().map_err(io_error)?;
    }
    out.flush().map_err(io_error)
}

fn write_json<T: Serialize>(mut out: Box<dyn Write>, value: &T) -> Result<(), CliError> {
    serde_json::to_writer_pretty(&mut out, value).map_err(io_error)?;
    writeln!(out).map_err(io_error)?;
    out.flush().map_err(io_error)
}

fn sweep_points(cfg: &ExperimentConfig) -> Vec<(String, Option<f64>, ExperimentConfig)> {
    match &cfg.sweep {
        Some(s) => {
            s.values.iter().map(|v| (s.parameter.name().to_string(), Some(*v), cfg.with_sweep_value(s.parameter, *v))).collect()
        }
        None => vec![(String::new(), None, cfg.clone())],
    }
}

fn pm_row(hash: &str, param: String, value: Option<f64>, cfg: &ExperimentConfig) -> Result<ResultRecord, CliError> {
    let start = Instant::now();
    let scheme = cfg.scheme().map_err(numerical)?;
    let levels = cfg.measurement.truncation.unwrap_or(0);
    let system = ProtectedSystem::prepare(&scheme, &cfg.model(), levels).map_err(numerical)?;
    let result = run_prepared(&system, &cfg.observable(), &cfg.pm_settings(Sampling::Endpoints)).map_err(numerical)?;
    Ok(ResultRecord {
        config_hash: hash.to_string(),
        sweep_param: param,
        sweep_value: value,
        pointer_shift: Some(result.pointer_shift),
        reference_expectation: Some(result.reference_expectation),
        shift_error: Some(result.shift_error()),
        fidelity: result.system_fidelity,
        survival: result.survival,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

pub fn cmd_pm(cfg: &ExperimentConfig, args: &RunArgs) -> Result<Vec<ResultRecord>, CliError> {
    if cfg.sweep.as_ref().is_some_and(|s| s.parameter == SweepParameter::Cells) {
        return Err(ConfigError::Invalid {
            field: "sweep.parameter".into(),
            message: "cells can only be swept by the reconstruct command".into(),
        }
        .into());
    }
    let hash = cfg.hash();
    let rows = sweep_points(cfg)
        .into_par_iter()
        .map(|(param, value, point)| pm_row(&hash, param, value, &point))
        .collect::<Result<Vec<_>, _>>()?;
    let out = Output::resolve(args, cfg);
    match out.format {
        OutputFormat::Csv => write_csv(out.writer()?, &rows)?,
        OutputFormat::Json => write_json(out.writer()?, &rows)?,
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct CellRow {
    cell: usize,
    start: usize,
    end: usize,
    center: f64,
    volume: f64,
    rho: f64,
    rho_reference: f64,
    j: f64,
    j_reference: f64,
    phase: f64,
    pm_error: f64,
    clamped: bool,
    error: String,
}

fn cell_rows(report: &ReconstructionReport, partition: &CellPartition) -> Vec<CellRow> {
    let centers = partition.centers();
    let volumes = partition.volumes();
    partition
        .cells()
        .iter()
        .enumerate()
        .map(|(i, c)| {
            let d = &report.density[i];
            let j = &report.current[i];
            let error = [&d.error, &j.error].iter().filter_map(|e| e.as_deref()).collect::<Vec<_>>().join("; ");
            CellRow {
                cell: i,
                start: c.start,
                end: c.end,
                center: centers[i],
                volume: volumes[i],
                rho: report.rho_cells[i],
                rho_reference: d.reference,
                j: report.j_cells[i],
                j_reference: j.reference,
                phase: report.reconstruction.cell_phases[i],
                pm_error: report.per_cell_pm_errors[i],
                clamped: report.reconstruction.clamped[i],
                error,
            }
        })
        .collect()
}

#[derive(Debug, Serialize)]
struct ReconstructionJson<'a> {
    row: &'a ResultRecord,
    winding: Option<i64>,
    winding_residual: f64,
    partition_sum: f64,
    cells: Vec<CellRow>,
}

pub fn cmd_reconstruct(cfg: &ExperimentConfig, args: &RunArgs) -> Result<Vec<ResultRecord>, CliError> {
    if cfg.reconstruct.is_none() && !cfg.sweep.as_ref().is_some_and(|s| s.parameter == SweepParameter::Cells) {
        return Err(ConfigError::Invalid { field: "reconstruct".into(), message: "section is required".into() }.into());
    }
    let hash = cfg.hash();
    let points = sweep_points(cfg);
    let runs = points
        .iter()
        .map(|(param, value, point)| {
            let start = Instant::now();
            let model = point.model();
            let scheme = point.scheme().map_err(numerical)?;
            let system = ProtectedSystem::prepare(&scheme, &model, 0).map_err(numerical)?;
            let cells = point.reconstruct.as_ref().map(|r| r.cells).expect("reconstruct section checked");
            let partition = CellPartition::uniform(model.grid, cells).map_err(numerical)?;
            let report = run_campaign(&system, &partition, &point.pm_settings(Sampling::Endpoints), &model.constants)
                .map_err(numerical)?;
            let survival = report.density.iter().chain(&report.current).map(|m| m.survival).fold(1.0, f64::min);
            let row = ResultRecord {
                config_hash: hash.clone(),
                sweep_param: param.clone(),
                sweep_value: *value,
                pointer_shift: None,
                reference_expectation: None,
                shift_error: Some(report.per_cell_pm_errors.iter().copied().fold(0.0, f64::max)),
                fidelity: report.fidelity_to_truth,
                survival,
                wall_time_s: start.elapsed().as_secs_f64(),
            };
            Ok((row, report, partition))
        })
        .collect::<Result<Vec<_>, CliError>>()?;

    let out = Output::resolve(args, cfg);
    let rows: Vec<ResultRecord> = runs.iter().map(|r| r.0.clone()).collect();
    match out.format {
        OutputFormat::Csv => {
            write_csv(out.writer()?, &rows)?;
            for (i, (_, report, partition)) in runs.iter().enumerate() {
                let suffix = if runs.len() > 1 { format!("cells.{i}.csv") } else { "cells.csv".to_string() };
                if let Some(path) = out.sibling(&suffix) {
                    write_csv(Box::new(File::create(&path).map_err(io_error)?), &cell_rows(report, partition))?;
                }
            }
        }
        OutputFormat::Json => {
            let docs: Vec<ReconstructionJson> = runs
                .iter()
                .map(|(row, report, partition)| ReconstructionJson {
                    row,
                    winding: report.reconstruction.winding,
                    winding_residual: report.reconstruction.winding_residual,
                    partition_sum: report.rho_cells.iter().zip(partition.volumes()).map(|(r, v)| r * v).sum(),
                    cells: cell_rows(report, partition),
                })
                .collect();
            write_json(out.writer()?, &docs)?;
        }
    }
    for (row, report, _) in &runs {
        let winding = report.reconstruction.winding.map(|w| format!(", winding {w}")).unwrap_or_default();
        let point = row.sweep_value.map(|v| format!("{} = {v}: ", row.sweep_param)).unwrap_or_default();
        eprintln!("{point}fidelity {:.8}{winding}", row.fidelity);
    }
    Ok(rows)
}

#[derive(Debug, Serialize)]
struct HistogramRow {
    config_hash: String,
    eigenvalue: f64,
    count: usize,
    frequency: f64,
    probability: f64,
}

#[derive(Debug, Serialize)]
struct BornJson {
    config_hash: String,
    seed: u64,
    n_samples: usize,
    mean: f64,
    expectation: f64,
    histogram: Vec<HistogramRow>,
}

pub fn cmd_born(cfg: &ExperimentConfig, args: &RunArgs) -> Result<(), CliError> {
    let born =
        cfg.born.as_ref().ok_or_else(|| ConfigError::Invalid { field: "born".into(), message: "section is required".into() })?;
    let scheme = cfg.scheme().map_err(numerical)?;
    let psi = crate::protection::prepare_protected_state(&scheme, &cfg.model()).map_err(numerical)?;
    let a = cfg.observable();
    let result = run_projective_measurement(&a, &psi, born.n_samples, cfg.seed).map_err(numerical)?;
    let mean_expectation = expectation(&a, &psi).map_err(numerical)?;
    let hash = cfg.hash();
    let n = born.n_samples;
    let mut histogram = Vec::new();
    for &(value, probability) in &result.spectrum {
        let count = result.samples.iter().filter(|s| **s == value).count();
        if count > 0 || probability > 0.0 {
            histogram.push(HistogramRow {
                config_hash: hash.clone(),
                eigenvalue: value,
                count,
                frequency: count as f64 / n as f64,
                probability,
            });
        }
    }
    histogram.retain(|h| h.count > 0);
    let out = Output::resolve(args, cfg);
    match out.format {
        OutputFormat::Csv => write_csv(out.writer()?, &histogram)?,
        OutputFormat::Json => write_json(
            out.writer()?,
            &BornJson {
                config_hash: hash,
                seed: cfg.seed,
                n_samples: n,
                mean: result.mean,
                expectation: mean_expectation,
                histogram,
            },
        )?,
    }
    eprintln!("born mean {:.6} over {n} samples (expectation {mean_expectation:.6})", result.mean);
    Ok(())
}

#[derive(Debug, Serialize)]
struct EigenRow {
    config_hash: String,
    index: usize,
    energy: f64,
}

pub fn cmd_eigen(cfg: &ExperimentConfig, args: &RunArgs) -> Result<(), CliError> {
    let count = cfg.eigen.as_ref().map(|e| e.count).unwrap_or(8).min(cfg.grid.n_points);
    let h = cfg.model().hamiltonian(&cfg.potential()).map_err(numerical)?;
    let pairs = eigenstates(&h, count).map_err(numerical)?;
    let hash = cfg.hash();
    let rows: Vec<EigenRow> =
        pairs.iter().enumerate().map(|(index, p)| EigenRow { config_hash: hash.clone(), index, energy: p.energy }).collect();
    let out = Output::resolve(args, cfg);
    match out.format {
        OutputFormat::Csv => write_csv(out.writer()?, &rows),
        OutputFormat::Json => write_json(out.writer()?, &rows),
    }
}

pub fn run(cli: Cli) -> Result<(), CliError> {
    let (Command::Pm(args) | Command::Reconstruct(args) | Command::Born(args) | Command::Eigen(args) | Command::Sweep(args)) =
        &cli.command;
    let cfg = ExperimentConfig::load(&args.config)?;
    match &cli.command {
        Command::Pm(a) => cmd_pm(&cfg, a).map(|_| ()),
        Command::Sweep(a) => {
            if cfg.sweep.is_none() {
                return Err(ConfigError::Invalid { field: "sweep".into(), message: "section is required".into() }.into());
            }
            cmd_pm(&cfg, a).map(|_| ())
        }
        Command::Reconstruct(a) => cmd_reconstruct(&cfg, a).map(|_| ()),
        Command::Born(a) => cmd_born(&cfg, a),
        Command::Eigen(a) => cmd_eigen(&cfg, a),
    }
}
