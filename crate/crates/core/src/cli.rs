//! Command-line interface: `simulate`, `decompose`, `fit`, `sweep`, `evaluate`.
//!
//! Settings resolve as defaults, then a `key = value` config file (`--config`),
//! then command-line flags. Every command writes a `manifest.json` into its output
//! directory. Exit codes: 0 success, 1 input or usage error, 2 completed without
//! convergence.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::fmt::{Display, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde_json::json;

use crate::error::{Error, Result};
use crate::eval::{score_stack, StackScore, StructureScore, DEFAULT_EDGE_THRESHOLD};
use crate::io::{self, RunManifest};
use crate::model::{build_design, to_graph, StackLayout};
use crate::panel::TimeSeriesPanel;
use crate::persistence::{
    is_nested, log_grid, persistence_scores, persistent_graph, select_lambda_range, sweep,
    PersistenceReport, DEFAULT_CBARS,
};
use crate::solver::{fit_multiscale, fit_single_scale, LossScale, SolverConfig};
use crate::synth::{default_sparsity, grid_dataset, GridCell, GridSpec};
use crate::wavelet::{filter_bank, swt_decompose, variance_partition, WaveletFamily};

pub const EXIT_OK: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_NOT_CONVERGED: i32 = 2;

#[derive(Debug, Parser)]
#[command(
    name = "mscastle",
    version,
    about = "Multiscale causal structure learning"
)]
pub struct Cli {
    /// Plain `key = value` settings file; flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Worker threads for grids and sweeps.
    #[arg(long, global = true, env = "MSCASTLE_JOBS")]
    pub jobs: Option<usize>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate ground-truth systems and sample datasets from them.
    Simulate(SimulateArgs),
    /// Stationary wavelet decomposition of a panel.
    Decompose(DecomposeArgs),
    /// Fit one sparsity weight.
    Fit(FitArgs),
    /// Fit a grid of sparsity weights and score edge persistence.
    Sweep(SweepArgs),
    /// Score an estimate against a ground truth.
    Evaluate(EvaluateArgs),
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[arg(long)]
    pub out: PathBuf,
    /// Preset grid: `paper-ss` (four network sizes, Gaussian) or `paper-ng`
    /// (sample size x network size x noise shape).
    #[arg(long)]
    pub grid: Option<String>,
    /// Network sizes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub n: Option<Vec<usize>>,
    /// Sample lengths, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub t: Option<Vec<usize>>,
    /// Noise shapes, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub p: Option<Vec<f64>>,
    /// Overrides the sparsity paired with each network size.
    #[arg(long)]
    pub sparsity: Option<f64>,
    #[arg(long)]
    pub lags: Option<usize>,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub replicates: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub weight_lo: Option<f64>,
    #[arg(long)]
    pub weight_hi: Option<f64>,
}

#[derive(Debug, Args)]
pub struct DecomposeArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub wavelet: Option<String>,
    /// Subtract each column's mean first.
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Args)]
pub struct ModelArgs {
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub lags: Option<usize>,
    /// Detail levels of the wavelet decomposition.
    #[arg(long)]
    pub scales: Option<usize>,
    #[arg(long)]
    pub wavelet: Option<String>,
    /// Fit the raw series (single scale); requires `--scales 1`.
    #[arg(long)]
    pub no_decompose: bool,
    #[arg(long)]
    pub center: bool,
}

#[derive(Debug, Args)]
pub struct SolverArgs {
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub rho: Option<f64>,
    #[arg(long)]
    pub gamma0: Option<f64>,
    #[arg(long)]
    pub gamma_max: Option<f64>,
    #[arg(long)]
    pub ratio_r: Option<f64>,
    #[arg(long)]
    pub tol_h: Option<f64>,
    #[arg(long)]
    pub tol_primal: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
    #[arg(long)]
    pub inner_tol: Option<f64>,
    #[arg(long)]
    pub inner_max_iter: Option<usize>,
    /// `mean` or `sum` weighting of the squared error.
    #[arg(long)]
    pub loss_scale: Option<String>,
    #[arg(long)]
    pub max_backtracks: Option<usize>,
    /// Keep `rho` fixed instead of rebalancing it.
    #[arg(long)]
    pub fixed_rho: bool,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    /// Magnitude above which a coefficient is listed as an edge.
    #[arg(long)]
    pub threshold: Option<f64>,
}

#[derive(Debug, Args)]
pub struct SweepArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    #[command(flatten)]
    pub solver: SolverArgs,
    #[arg(long)]
    pub lambda_lo: Option<f64>,
    #[arg(long)]
    pub lambda_hi: Option<f64>,
    #[arg(long)]
    pub k: Option<usize>,
    /// Persistence thresholds, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub cbar: Option<Vec<f64>>,
    /// Choose the lambda range from a probe sweep so ratios span [0.1, 1].
    #[arg(long)]
    pub auto_range: bool,
    #[arg(long)]
    pub probe_lo: Option<f64>,
    #[arg(long)]
    pub probe_hi: Option<f64>,
    #[arg(long)]
    pub probe_k: Option<usize>,
    /// Any opposite-signed nonzero coefficient breaks sign stability.
    #[arg(long)]
    pub strict_sign: bool,
}

#[derive(Debug, Args)]
pub struct EvaluateArgs {
    #[arg(long)]
    pub estimate: PathBuf,
    #[arg(long)]
    pub truth: PathBuf,
    #[arg(long)]
    pub threshold: Option<f64>,
    /// Directory for `scores.csv` and a manifest; stdout only when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Config-file values keyed by flag name (`-` and `_` are interchangeable).
struct Settings {
    values: BTreeMap<String, String>,
    source: Option<PathBuf>,
    resolved: serde_json::Map<String, serde_json::Value>,
}

impl Settings {
    fn load(path: Option<&Path>) -> Result<Self> {
        let values = match path {
            Some(p) => io::read_key_values(p)?
                .into_iter()
                .map(|(k, v)| (k.replace('-', "_"), v))
                .collect(),
            None => BTreeMap::new(),
        };
        Ok(Self {
            values,
            source: path.map(Path::to_path_buf),
            resolved: serde_json::Map::new(),
        })
    }

    fn file_value<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw.parse().map(Some).map_err(|e| {
                let path = self.source.as_deref().unwrap_or(Path::new("config"));
                Error::InvalidArgument(format!("{}: `{key} = {raw}`: {e}", path.display()))
            }),
        }
    }

    fn record(&mut self, key: &str, value: serde_json::Value) {
        self.resolved.insert(key.to_string(), value);
    }

    fn get<T>(&mut self, flag: Option<T>, key: &str, default: T) -> Result<T>
    where
        T: FromStr + serde::Serialize,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => self.file_value(key)?.unwrap_or(default),
        };
        self.record(key, json!(v));
        Ok(v)
    }

    fn opt<T>(&mut self, flag: Option<T>, key: &str) -> Result<Option<T>>
    where
        T: FromStr + serde::Serialize,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => Some(v),
            None => self.file_value(key)?,
        };
        self.record(key, json!(v));
        Ok(v)
    }

    fn switch(&mut self, flag: bool, key: &str) -> Result<bool> {
        let v = flag || self.file_value::<bool>(key)?.unwrap_or(false);
        self.record(key, json!(v));
        Ok(v)
    }

    fn list<T>(&mut self, flag: Option<Vec<T>>, key: &str, default: &[T]) -> Result<Vec<T>>
    where
        T: FromStr + serde::Serialize + Clone,
        T::Err: Display,
    {
        let v = match flag {
            Some(v) => v,
            None => match self.values.get(key) {
                Some(raw) => raw
                    .split(',')
                    .map(|s| {
                        s.trim().parse::<T>().map_err(|e| {
                            Error::InvalidArgument(format!("config `{key} = {raw}`: {e}"))
                        })
                    })
                    .collect::<Result<_>>()?,
                None => default.to_vec(),
            },
        };
        self.record(key, json!(v));
        Ok(v)
    }
}

/// What a command produced, for the manifest and the exit code.
struct Report {
    inputs: Vec<PathBuf>,
    outputs: Vec<PathBuf>,
    seed: Option<u64>,
    summary: serde_json::Value,
    converged: bool,
}

/// Parse `args` (including the program name), run, and return the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_ERROR } else { EXIT_OK };
        }
    };
    match execute(cli, &args) {
        Ok(true) => EXIT_OK,
        Ok(false) => EXIT_NOT_CONVERGED,
        Err(e) => {
            eprintln!("error: {e}");
            EXIT_ERROR
        }
    }
}

/// Run a parsed command; `Ok(false)` means it completed without converging.
pub fn execute(cli: Cli, raw_args: &[OsString]) -> Result<bool> {
    let started = Instant::now();
    let mut settings = Settings::load(cli.config.as_deref())?;
    let default_jobs = std::thread::available_parallelism().map_or(1, |n| n.get());
    let jobs = settings.get(cli.jobs, "jobs", default_jobs)?.max(1);
    let (name, out, report) = match &cli.command {
        Command::Simulate(a) => (
            "simulate",
            Some(a.out.clone()),
            simulate(a, &mut settings, jobs)?,
        ),
        Command::Decompose(a) => (
            "decompose",
            Some(a.out.clone()),
            decompose(a, &mut settings)?,
        ),
        Command::Fit(a) => ("fit", Some(a.model.out.clone()), fit_cmd(a, &mut settings)?),
        Command::Sweep(a) => (
            "sweep",
            Some(a.model.out.clone()),
            sweep_cmd(a, &mut settings, jobs)?,
        ),
        Command::Evaluate(a) => ("evaluate", a.out.clone(), evaluate(a, &mut settings)?),
    };
    if let Some(dir) = out {
        let rel = |p: &PathBuf| {
            p.strip_prefix(&dir)
                .unwrap_or(p)
                .to_string_lossy()
                .into_owned()
        };
        let manifest = RunManifest {
            command: name.to_string(),
            args: raw_args
                .iter()
                .skip(1)
                .map(|a| a.to_string_lossy().into_owned())
                .collect(),
            config: serde_json::Value::Object(settings.resolved),
            inputs: report
                .inputs
                .iter()
                .map(|p| p.display().to_string())
                .collect(),
            outputs: report.outputs.iter().map(rel).collect(),
            seed: report.seed,
            duration_ms: started.elapsed().as_millis(),
            summary: report.summary,
        };
        io::write_manifest(&dir, &manifest)?;
    }
    Ok(report.converged)
}

fn write(path: PathBuf, contents: &str, outputs: &mut Vec<PathBuf>) -> Result<()> {
    io::write_atomic(&path, contents.as_bytes())?;
    outputs.push(path);
    Ok(())
}

fn simulate(a: &SimulateArgs, s: &mut Settings, jobs: usize) -> Result<Report> {
    let grid_name = s.opt(a.grid.clone(), "grid")?;
    let replicates = s.get(a.replicates, "replicates", 1usize)?;
    let seed = s.get(a.seed, "seed", 0u64)?;
    let lags = s.get(a.lags, "lags", 1usize)?;
    let scales = s.get(a.scales, "scales", 1usize)?;
    let weight_range = (
        s.get(a.weight_lo, "weight_lo", 0.3)?,
        s.get(a.weight_hi, "weight_hi", 0.9)?,
    );
    let sparsity = s.opt(a.sparsity, "sparsity")?;
    let (lens, sizes, ps): (Vec<usize>, Vec<usize>, Vec<f64>) = match grid_name.as_deref() {
        None => (
            s.list(a.t.clone(), "t", &[1000])?,
            s.list(a.n.clone(), "n", &[10])?,
            s.list(a.p.clone(), "p", &[2.0])?,
        ),
        Some("paper-ss") => (vec![1000], vec![10, 30, 50, 100], vec![2.0]),
        Some("paper-ng") => (
            vec![100, 500, 1000],
            vec![10, 30, 50],
            vec![1.0, 1.5, 2.0, 2.5, 100.0],
        ),
        Some(other) => {
            return Err(Error::InvalidArgument(format!(
                "unknown grid `{other}`; expected paper-ss or paper-ng"
            )))
        }
    };
    let mut cells = Vec::new();
    for &len in &lens {
        for &series in &sizes {
            let sparsity = match sparsity.or_else(|| default_sparsity(series)) {
                Some(v) => v,
                None => {
                    return Err(Error::InvalidArgument(format!(
                        "no default sparsity for N = {series}; pass --sparsity"
                    )))
                }
            };
            for &p in &ps {
                cells.push(GridCell {
                    len,
                    series,
                    sparsity,
                    p,
                });
            }
        }
    }
    let grid = GridSpec {
        cells,
        replicates,
        lags,
        scales,
        weight_range,
        master_seed: seed,
    };
    grid.validate()?;

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::InvalidArgument(format!("cannot build worker pool: {e}")))?;
    let made: Vec<(serde_json::Value, Vec<PathBuf>)> = pool.install(|| {
        grid.jobs()
            .par_iter()
            .map(|&(cell, rep)| {
                let (truth, panel) = grid_dataset(&grid, cell, rep)?;
                let c = &grid.cells[cell];
                let id = format!("c{cell:03}_r{rep:03}");
                let dir = a.out.join(&id);
                let mut outputs = Vec::new();
                write(dir.join("data.csv"), &io::panel_csv(&panel), &mut outputs)?;
                outputs.extend(io::write_stack(&dir, "truth", &truth.w_true, &panel.names)?);
                let (structure_seed, sample_seed) = grid.seeds(cell, rep);
                let record = json!({
                    "id": id,
                    "data": format!("{id}/data.csv"),
                    "truth_prefix": format!("{id}/truth"),
                    "len": c.len,
                    "series": c.series,
                    "sparsity": c.sparsity,
                    "p": c.p,
                    "lags": grid.lags,
                    "scales": grid.scales,
                    "replicate": rep,
                    "structure_seed": structure_seed,
                    "sample_seed": sample_seed,
                    "noise_variances": truth.noise_variances,
                    "true_edges": truth.w_true.nonzero_count(),
                });
                Ok((record, outputs))
            })
            .collect::<Result<_>>()
    })?;
    let mut outputs = Vec::new();
    let mut listing = String::new();
    for (record, files) in &made {
        listing.push_str(&record.to_string());
        listing.push('\n');
        outputs.extend(files.iter().cloned());
    }
    write(a.out.join("datasets.jsonl"), &listing, &mut outputs)?;
    println!("wrote {} datasets to {}", made.len(), a.out.display());
    Ok(Report {
        inputs: Vec::new(),
        outputs,
        seed: Some(seed),
        summary: json!({ "datasets": made.len(), "cells": grid.cells.len() }),
        converged: true,
    })
}

fn wavelet(s: &mut Settings, flag: Option<String>) -> Result<WaveletFamily> {
    s.get(flag, "wavelet", "symlet8".to_string())?.parse()
}

fn load_panel(path: &Path, center: bool) -> Result<TimeSeriesPanel> {
    let panel = io::read_panel(path)?;
    Ok(if center { panel.centered() } else { panel })
}

fn decompose(a: &DecomposeArgs, s: &mut Settings) -> Result<Report> {
    let levels = s.get(a.scales, "scales", 4usize)?;
    let family = wavelet(s, a.wavelet.clone())?;
    let center = s.switch(a.center, "center")?;
    let panel = load_panel(&a.input, center)?;
    let aug = swt_decompose(&panel, levels, &filter_bank(family))?;
    let shares = variance_partition(&aug, &panel)?;

    let mut outputs = Vec::new();
    write(
        a.out.join("details.csv"),
        &io::matrix_csv(&panel.timestamps, &aug.column_names(), &aug.details),
        &mut outputs,
    )?;
    write(
        a.out.join("smooth.csv"),
        &io::matrix_csv(&panel.timestamps, &panel.names, &aug.smooth),
        &mut outputs,
    )?;
    let mut energy = String::from("series,energy");
    for d in 1..=levels {
        let _ = write!(energy, ",s{d}");
    }
    energy.push_str(",smooth,total\n");
    for e in &shares {
        let _ = write!(energy, "{},{}", e.series, io::fmt_f64(e.energy));
        for v in &e.detail_shares {
            let _ = write!(energy, ",{}", io::fmt_f64(*v));
        }
        let _ = writeln!(
            energy,
            ",{},{}",
            io::fmt_f64(e.smooth_share),
            io::fmt_f64(e.total())
        );
    }
    write(a.out.join("energy.csv"), &energy, &mut outputs)?;
    Ok(Report {
        inputs: vec![a.input.clone()],
        outputs,
        seed: None,
        summary: json!({ "levels": levels, "wavelet": family.name(), "energy": shares }),
        converged: true,
    })
}

fn solver_config(a: &SolverArgs, s: &mut Settings) -> Result<SolverConfig> {
    let d = SolverConfig::default();
    let loss_scale: LossScale = s
        .get(a.loss_scale.clone(), "loss_scale", "mean".to_string())?
        .parse()?;
    let config = SolverConfig {
        lambda: s.get(a.lambda, "lambda", d.lambda)?,
        rho: s.get(a.rho, "rho", d.rho)?,
        gamma0: s.get(a.gamma0, "gamma0", d.gamma0)?,
        gamma_max: s.get(a.gamma_max, "gamma_max", d.gamma_max)?,
        ratio_r: s.get(a.ratio_r, "ratio_r", d.ratio_r)?,
        tol_h: s.get(a.tol_h, "tol_h", d.tol_h)?,
        tol_primal: s.get(a.tol_primal, "tol_primal", d.tol_primal)?,
        max_iter: s.get(a.max_iter, "max_iter", d.max_iter)?,
        inner_tol: s.get(a.inner_tol, "inner_tol", d.inner_tol)?,
        inner_max_iter: s.get(a.inner_max_iter, "inner_max_iter", d.inner_max_iter)?,
        loss_scale,
        max_backtracks: s.get(a.max_backtracks, "max_backtracks", d.max_backtracks)?,
        adaptive_rho: !s.switch(a.fixed_rho, "fixed_rho")?,
    };
    config.validate()?;
    Ok(config)
}

/// Resolved model flags: `(lags, scales, wavelet or None for the raw path, center)`.
fn model_settings(
    a: &ModelArgs,
    s: &mut Settings,
) -> Result<(usize, usize, Option<WaveletFamily>, bool)> {
    let lags = s.get(a.lags, "lags", 1usize)?;
    let scales = s.get(a.scales, "scales", 1usize)?;
    let no_decompose = s.switch(a.no_decompose, "no_decompose")?;
    let center = s.switch(a.center, "center")?;
    let family = if no_decompose {
        if scales != 1 {
            return Err(Error::InvalidArgument(
                "--no-decompose fits the raw series and requires --scales 1".into(),
            ));
        }
        None
    } else {
        Some(wavelet(s, a.wavelet.clone())?)
    };
    Ok((lags, scales, family, center))
}

fn fit_cmd(a: &FitArgs, s: &mut Settings) -> Result<Report> {
    let (lags, scales, family, center) = model_settings(&a.model, s)?;
    let config = solver_config(&a.solver, s)?;
    let threshold = s.get(a.threshold, "threshold", DEFAULT_EDGE_THRESHOLD)?;
    let panel = load_panel(&a.model.input, center)?;
    let result = match family {
        None => fit_single_scale(&panel, lags, &config)?,
        Some(f) => fit_multiscale(&panel, scales, &filter_bank(f), lags, &config)?,
    };
    let state = &result.state;
    let out = &a.model.out;
    let mut outputs = io::write_stack(out, "Z", &state.z, &panel.names)?;
    outputs.extend(io::write_stack(out, "W", &state.w, &panel.names)?);
    let graph = to_graph(&state.z, threshold);
    write(
        out.join("edges.csv"),
        &io::edges_csv(&graph, &panel.names),
        &mut outputs,
    )?;
    let mut history = String::from("iteration,h,gamma,primal_residual,objective\n");
    for k in 0..state.h_history.len() {
        let _ = writeln!(
            history,
            "{},{},{},{},{}",
            k + 1,
            io::fmt_f64(state.h_history[k]),
            io::fmt_f64(state.gamma_history[k]),
            io::fmt_f64(state.primal_residual_history[k]),
            io::fmt_f64(state.objective_history[k]),
        );
    }
    write(out.join("history.csv"), &history, &mut outputs)?;
    let summary = json!({
        "converged": state.converged,
        "iterations": state.iterations,
        "h_w": state.h_w(),
        "h_z": state.h_z(),
        "primal_residual": state.primal_residual(),
        "fit_loss": state.fit_loss,
        "reg_loss": state.reg_loss,
        "ratio": state.loss_ratio(),
        "alpha": state.alpha,
        "gamma": state.gamma,
        "edges": graph.edges.len(),
    });
    let mut diag =
        serde_json::to_string_pretty(&summary).map_err(|e| Error::InvalidData(e.to_string()))?;
    diag.push('\n');
    write(out.join("diagnostics.json"), &diag, &mut outputs)?;
    if state.converged {
        println!(
            "converged after {} iterations: {} edges above {threshold}",
            state.iterations,
            graph.edges.len()
        );
    } else {
        eprintln!(
            "not converged after {} iterations (h = {:.3e}, |w - z| = {:.3e})",
            state.iterations,
            state.h_z(),
            state.primal_residual()
        );
    }
    Ok(Report {
        inputs: vec![a.model.input.clone()],
        outputs,
        seed: None,
        summary,
        converged: state.converged,
    })
}

fn cbar_label(cbar: f64) -> String {
    format!("{cbar}")
}

fn persistence_csv(report: &PersistenceReport, names: &[String]) -> String {
    let mut out =
        String::from("scale,lag,source,target,persistence,sign_stable,highly_persistent\n");
    for e in report.entries() {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            e.scale,
            e.lag,
            names[e.source],
            names[e.target],
            io::fmt_f64(e.persistence),
            e.sign_stable,
            e.highly_persistent
        );
    }
    out
}

fn sweep_cmd(a: &SweepArgs, s: &mut Settings, jobs: usize) -> Result<Report> {
    if a.solver.lambda.is_some() {
        return Err(Error::InvalidArgument(
            "sweep takes --lambda-lo/--lambda-hi, not --lambda".into(),
        ));
    }
    let (lags, scales, family, center) = model_settings(&a.model, s)?;
    let base = solver_config(&a.solver, s)?;
    let (default_lo, default_hi) = if family.is_some() {
        (0.003, 0.03)
    } else {
        (0.004, 0.04)
    };
    let k = s.get(a.k, "k", 10usize)?;
    let cbars = s.list(a.cbar.clone(), "cbar", &DEFAULT_CBARS)?;
    let strict_sign = s.switch(a.strict_sign, "strict_sign")?;
    let auto_range = s.switch(a.auto_range, "auto_range")?;
    let panel = load_panel(&a.model.input, center)?;
    let (series, layout) = match family {
        None => (
            panel.data.clone(),
            StackLayout::new(lags, 1, panel.n_series())?,
        ),
        Some(f) => (
            swt_decompose(&panel, scales, &filter_bank(f))?.details,
            StackLayout::new(lags, scales, panel.n_series())?,
        ),
    };
    let design = build_design(&series, lags)?;

    let (lo, hi, probe) = if auto_range {
        let probe_lo = s.get(a.probe_lo, "probe_lo", 1e-4)?;
        let probe_hi = s.get(a.probe_hi, "probe_hi", 1.0)?;
        let probe_k = s.get(a.probe_k, "probe_k", 9usize)?;
        let probe = log_grid(probe_lo, probe_hi, probe_k)?;
        let (lo, hi) = select_lambda_range(&design, layout, &base, &probe, jobs)?;
        (lo, hi, Some(probe))
    } else {
        (
            s.get(a.lambda_lo, "lambda_lo", default_lo)?,
            s.get(a.lambda_hi, "lambda_hi", default_hi)?,
            None,
        )
    };
    let lambdas = log_grid(lo, hi, k)?;
    let result = sweep(&design, layout, &base, &lambdas, jobs)?;

    let out = &a.model.out;
    let mut outputs = Vec::new();
    let mut table = String::from("index,lambda,ratio,fit_loss,reg_loss,converged,iterations\n");
    for (i, run) in result.runs.iter().enumerate() {
        let _ = writeln!(
            table,
            "{i},{},{},{},{},{},{}",
            io::fmt_f64(run.lambda),
            io::fmt_f64(run.ratio),
            io::fmt_f64(run.fit_loss),
            io::fmt_f64(run.reg_loss),
            run.converged,
            run.iterations
        );
        let dir = out.join("runs").join(format!("k{i:02}"));
        outputs.extend(io::write_stack(&dir, "Z", &run.z, &panel.names)?);
    }
    write(out.join("ratios.csv"), &table, &mut outputs)?;

    let mut reports = Vec::new();
    let mut per_cbar = Vec::new();
    for &cbar in &cbars {
        let report = persistence_scores(&result, cbar, strict_sign)?;
        let graph = persistent_graph(&report, &result);
        let label = cbar_label(cbar);
        write(
            out.join(format!("persistence_c{label}.csv")),
            &persistence_csv(&report, &panel.names),
            &mut outputs,
        )?;
        write(
            out.join(format!("persistent_edges_c{label}.csv")),
            &io::edges_csv(&graph, &panel.names),
            &mut outputs,
        )?;
        per_cbar.push(json!({ "cbar": cbar, "persistent_edges": graph.edges.len() }));
        reports.push(report);
    }
    let mut order: Vec<usize> = (0..reports.len()).collect();
    order.sort_by(|&i, &j| cbars[i].total_cmp(&cbars[j]));
    let nested = order
        .windows(2)
        .all(|w| is_nested(&reports[w[1]], &reports[w[0]]));
    let converged = result.converged_runs().count();
    let all_converged = converged == result.runs.len();
    println!(
        "{converged}/{} runs converged over lambda in [{lo:.4e}, {hi:.4e}]; persistent edge sets nested: {nested}",
        result.runs.len()
    );
    Ok(Report {
        inputs: vec![a.model.input.clone()],
        outputs,
        seed: None,
        summary: json!({
            "lambda_range": [lo, hi],
            "probe": probe,
            "lambdas": result.lambdas(),
            "ratios": result.ratios(),
            "converged_runs": converged,
            "runs": result.runs.len(),
            "persistence": per_cbar,
            "nested": nested,
        }),
        converged: all_converged,
    })
}

fn score_row(out: &mut String, scale: &str, lag: &str, kind: &str, s: &StructureScore) {
    let _ = writeln!(
        out,
        "{scale},{lag},{kind},{},{},{},{},{},{},{},{},{},{}",
        s.shd,
        s.extra,
        s.missing,
        s.reverse,
        s.true_positives,
        s.estimated_edges,
        s.true_edges,
        io::fmt_f64(s.precision),
        io::fmt_f64(s.recall),
        io::fmt_f64(s.f1)
    );
}

fn scores_csv(scores: &StackScore) -> String {
    let mut out = String::from(
        "scale,lag,kind,shd,extra,missing,reverse,true_positives,estimated_edges,true_edges,precision,recall,f1\n",
    );
    for b in &scores.blocks {
        let kind = if b.lag == 0 {
            "instantaneous"
        } else {
            "lagged"
        };
        score_row(
            &mut out,
            &b.scale.to_string(),
            &b.lag.to_string(),
            kind,
            &b.score,
        );
    }
    score_row(&mut out, "all", "all", "aggregate", &scores.aggregate);
    out
}

fn scores_table(scores: &StackScore) -> String {
    let mut out = format!(
        "{:>5} {:>4} {:>5} {:>5} {:>7} {:>7} {:>9} {:>7} {:>6}\n",
        "scale", "lag", "shd", "extra", "missing", "reverse", "precision", "recall", "f1"
    );
    let mut line = |scale: String, lag: String, s: &StructureScore| {
        let _ = writeln!(
            out,
            "{scale:>5} {lag:>4} {:>5} {:>5} {:>7} {:>7} {:>9.3} {:>7.3} {:>6.3}",
            s.shd, s.extra, s.missing, s.reverse, s.precision, s.recall, s.f1
        );
    };
    for b in &scores.blocks {
        line(b.scale.to_string(), b.lag.to_string(), &b.score);
    }
    line("all".into(), "all".into(), &scores.aggregate);
    out
}

fn find_stack(dir: &Path, candidates: &[&str]) -> Result<String> {
    match io::detect_prefix(dir, candidates)? {
        Some(p) => Ok(p.to_string()),
        None => Err(Error::Io {
            path: dir.join(io::block_file_name(candidates[0], 1, 0)),
            source: std::io::Error::new(
                std::io::ErrorKind::NotFound,
                format!(
                    "no coefficient blocks with prefix {}",
                    candidates.join(" or ")
                ),
            ),
        }),
    }
}

fn evaluate(a: &EvaluateArgs, s: &mut Settings) -> Result<Report> {
    let threshold = s.get(a.threshold, "threshold", DEFAULT_EDGE_THRESHOLD)?;
    let est_prefix = find_stack(&a.estimate, &["Z", "truth", "W"])?;
    let truth_prefix = find_stack(&a.truth, &["truth", "Z"])?;
    let (estimate, est_names) = io::read_stack(&a.estimate, &est_prefix)?;
    let (truth, truth_names) = io::read_stack(&a.truth, &truth_prefix)?;
    if est_names != truth_names {
        return Err(Error::InvalidArgument(format!(
            "series differ: estimate has {est_names:?}, truth has {truth_names:?}"
        )));
    }
    let scores = score_stack(&estimate, &truth, threshold)?;
    print!("{}", scores_table(&scores));
    let mut outputs = Vec::new();
    if let Some(dir) = &a.out {
        write(dir.join("scores.csv"), &scores_csv(&scores), &mut outputs)?;
    }
    Ok(Report {
        inputs: vec![a.estimate.clone(), a.truth.clone()],
        outputs,
        seed: None,
        summary: json!({ "aggregate": scores.aggregate, "blocks": scores.blocks }),
        converged: true,
    })
}
