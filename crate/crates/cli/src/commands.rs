//! The `run`, `compare` and `plotdata` commands.

use std::fs::File;
use std::io::Write;
use std::path::{Path, PathBuf};

use adaptive_admm::engine::{compare_fixed_vs_adaptive, run_until_converged, RunStatus};
use adaptive_admm::trace::Trace;
use rayon::prelude::*;
use serde::Serialize;

use crate::config::{validate_agents, ExperimentConfig, Format};
use crate::error::{CliError, Result};
use crate::table::{render_summary, FailedCell, Sweep};

/// Process exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    Success = 0,
    Failure = 1,
    IterationLimit = 2,
    Diverged = 3,
}

impl From<RunStatus> for Exit {
    fn from(s: RunStatus) -> Self {
        match s {
            RunStatus::Converged => Exit::Success,
            RunStatus::IterationLimit => Exit::IterationLimit,
            RunStatus::Diverged => Exit::Diverged,
        }
    }
}

fn create(path: &Path) -> Result<File> {
    File::create(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

fn write_all(file: &mut File, path: &Path, text: &str) -> Result<()> {
    file.write_all(text.as_bytes()).map_err(|source| CliError::Io { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, Default)]
pub struct RunArgs {
    pub config: PathBuf,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
    pub adaptive: Option<bool>,
}

/// Runs one simulation and writes its trace.
pub fn run(args: &RunArgs, stdout: &mut dyn Write) -> Result<Exit> {
    let mut cfg = ExperimentConfig::load(&args.config)?;
    if let Some(a) = args.adaptive {
        cfg.run.adaptive = a;
    }
    let format = args.format.unwrap_or(cfg.output.format);
    let trace_path = args.out.clone().or_else(|| cfg.output.trace.clone());
    // fail on an unwritable path before spending the run
    let mut file = trace_path.as_deref().map(create).transpose()?;

    let topology = cfg.build_topology(cfg.topology.agents, 0)?;
    let spec = cfg.build_problem(&topology, 0)?;
    let res = run_until_converged(&spec, &topology, &cfg.run)?;

    if let (Some(file), Some(path)) = (file.as_mut(), trace_path.as_deref()) {
        let text = match format {
            Format::Csv => res.trace.to_csv(cfg.output.wall_time)?,
            Format::Json => res.trace.to_json(cfg.output.wall_time)?,
        };
        write_all(file, path, &text)?;
    }
    let _ = writeln!(stdout, "status: {}", res.status.as_str());
    let _ = writeln!(stdout, "iterations: {}", res.iterations);
    let _ = writeln!(stdout, "final residual: {:e}", res.final_residual);
    if let Some(path) = trace_path {
        let _ = writeln!(stdout, "trace: {}", path.display());
    }
    Ok(res.status.into())
}

#[derive(Debug, Clone, Default)]
pub struct CompareArgs {
    pub config: PathBuf,
    pub sizes: Vec<usize>,
    pub seeds: usize,
    pub out: Option<PathBuf>,
    pub format: Option<Format>,
}

/// Runs both arms for every size and seed.
///
/// Seed `s` of a sweep shifts the problem, topology and run seeds of the
/// config by `s`, so every cell is reproducible on its own.
pub fn sweep(cfg: &ExperimentConfig, sizes: &[usize], seeds: usize) -> Result<Sweep> {
    if sizes.is_empty() {
        return Err(CliError::Invalid { field: "--sizes".into(), reason: "needs at least one network size".into() });
    }
    for &n in sizes {
        validate_agents(n, "--sizes")?;
    }
    if seeds == 0 {
        return Err(CliError::Invalid { field: "--seeds".into(), reason: "must be at least 1".into() });
    }
    let label = cfg.topology.shape.label();
    let cells: Vec<(usize, u64)> = sizes.iter().flat_map(|&n| (0..seeds as u64).map(move |s| (n, s))).collect();
    let outcomes: Vec<_> = cells
        .par_iter()
        .map(|&(n, s)| {
            let seed = cfg.run.seed.wrapping_add(s);
            let cell = || -> Result<_> {
                let t = cfg.build_topology(n, s)?;
                let spec = cfg.build_problem(&t, s)?;
                Ok(compare_fixed_vs_adaptive(&spec, &t, label, &cfg.run, &[seed])?)
            };
            cell().map_err(|e| FailedCell { seed, agents: n, topology: label.to_string(), error: e.to_string() })
        })
        .collect();
    let mut out = Sweep::default();
    for o in outcomes {
        match o {
            Ok(t) => out.table.extend(t),
            Err(f) => out.failures.push(f),
        }
    }
    Ok(out)
}

pub fn compare(args: &CompareArgs, stdout: &mut dyn Write, stderr: &mut dyn Write) -> Result<Exit> {
    let cfg = ExperimentConfig::load(&args.config)?;
    let format = args.format.unwrap_or(cfg.output.format);
    let path = args.out.clone().or_else(|| cfg.output.table.clone());
    let mut file = path.as_deref().map(create).transpose()?;

    let result = sweep(&cfg, &args.sizes, args.seeds)?;
    for f in &result.failures {
        let _ = writeln!(stderr, "cell N={} seed={} failed: {}", f.agents, f.seed, f.error);
    }
    if let (Some(file), Some(path)) = (file.as_mut(), path.as_deref()) {
        let text = match format {
            Format::Csv => result.to_csv()?,
            Format::Json => result.to_json()?,
        };
        write_all(file, path, &text)?;
    }
    let _ = write!(stdout, "{}", render_summary(&result.table.summary(), cfg.run.max_iter));
    if let Some(path) = path {
        let _ = writeln!(stdout, "table: {}", path.display());
    }
    Ok(Exit::Success)
}

/// Reads a trace written by `run`, in either format.
pub fn read_trace(path: &Path) -> Result<Trace> {
    let text = std::fs::read_to_string(path).map_err(|source| CliError::Io { path: path.to_path_buf(), source })?;
    let json = path.extension().is_some_and(|e| e == "json") || text.trim_start().starts_with('{');
    let trace = if json { Trace::from_json(&text) } else { Trace::from_csv(&text) };
    trace.map_err(|source| CliError::Input { path: path.to_path_buf(), source })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Series {
    pub label: String,
    /// `(iteration, residual)` pairs.
    pub points: Vec<(usize, f64)>,
}

/// Projects traces onto `(iteration, residual)`. Labels default to file stems.
pub fn plot_series(traces: &[PathBuf], labels: &[String]) -> Result<Vec<Series>> {
    if traces.is_empty() {
        return Err(CliError::Usage("plotdata needs at least one trace".into()));
    }
    if !labels.is_empty() && labels.len() != traces.len() {
        return Err(CliError::Invalid {
            field: "--label".into(),
            reason: format!("{} labels for {} traces", labels.len(), traces.len()),
        });
    }
    traces
        .iter()
        .enumerate()
        .map(|(k, path)| {
            let trace = read_trace(path)?;
            if trace.is_empty() {
                return Err(CliError::Usage(format!("{}: trace has no records", path.display())));
            }
            let label = labels.get(k).cloned().unwrap_or_else(|| {
                path.file_stem().map_or_else(|| format!("run{}", k + 1), |s| s.to_string_lossy().into_owned())
            });
            Ok(Series { label, points: trace.records.iter().map(|r| (r.iter, r.residual)).collect() })
        })
        .collect()
}

/// One series renders as `iteration,residual`; several as a labeled overlay.
pub fn render_series(series: &[Series], format: Format) -> Result<String> {
    if format == Format::Json {
        return Ok(serde_json::to_string_pretty(series)?);
    }
    let overlay = series.len() > 1;
    let mut w = csv::Writer::from_writer(Vec::new());
    if overlay {
        w.write_record(["label", "iteration", "residual"])?;
    } else {
        w.write_record(["iteration", "residual"])?;
    }
    for s in series {
        for (it, res) in &s.points {
            if overlay {
                w.write_record([s.label.clone(), it.to_string(), res.to_string()])?;
            } else {
                w.write_record([it.to_string(), res.to_string()])?;
            }
        }
    }
    let bytes = w.into_inner().map_err(|e| csv::Error::from(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[derive(Debug, Clone, Default)]
pub struct PlotArgs {
    pub traces: Vec<PathBuf>,
    pub labels: Vec<String>,
    pub out: Option<PathBuf>,
    pub format: Format,
}

pub fn plotdata(args: &PlotArgs, stdout: &mut dyn Write) -> Result<Exit> {
    let series = plot_series(&args.traces, &args.labels)?;
    let text = render_series(&series, args.format)?;
    match &args.out {
        Some(path) => write_all(&mut create(path)?, path, &text)?,
        None => {
            let _ = stdout.write_all(text.as_bytes());
        }
    }
    Ok(Exit::Success)
}
