//! The four batch commands. Each writes its files under an output directory
//! and stamps them with the configuration hash.

use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use log::info;
use ruin_core::hjb::{solve_with, Checkpoint, SolveOptions};
use ruin_core::io::{
    fmt_f64, read_checkpoint, read_field, write_field, write_path_events, write_path_header, write_slices,
    write_summary_header, write_summary_row, Provenance,
};
use ruin_core::simulator::{estimate_survival_with, simulate_path, PathStream, SimOptions};
use ruin_core::validation::{run_suite, SuiteOptions};
use ruin_core::{solve, ModelParams, Policy, Solution, SolverConfig};
use serde::Serialize;

use crate::config::{ClaimKind, Format, HazardKind, PolicyKind, RunConfig};
use crate::error::{io_at, CliError, Result};

pub const VALUE_FILE: &str = "value.csv";
pub const SOLVE_META_FILE: &str = "solve.json";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const PATHS_FILE: &str = "paths.csv";
pub const REPORT_FILE: &str = "report.json";
pub const SWEEP_FILE: &str = "sweep.csv";
pub const CHECKPOINT_DIR: &str = "checkpoint";

#[derive(Debug, Clone, Default)]
pub struct SolveFlags {
    /// Write a checkpoint segment after every this many slices.
    pub checkpoint_every: Option<usize>,
    /// Directory of checkpoint segments to resume from.
    pub resume: Option<PathBuf>,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    Ok(BufWriter::new(File::create(path).map_err(io_at(path))?))
}

fn finish(mut w: BufWriter<File>, path: &Path) -> Result<()> {
    w.flush().map_err(io_at(path))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_at(dir))
}

/// Core errors from writers carry a placeholder path; attach the real one.
fn at_path(path: &Path) -> impl Fn(ruin_core::Error) -> CliError + '_ {
    move |e| match e {
        ruin_core::Error::Io { source, .. } => CliError::Io { path: path.to_path_buf(), source },
        other => CliError::Core(other),
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value).map_err(|e| CliError::Io { path: path.into(), source: e.into() })?;
    writeln!(w).map_err(io_at(path))?;
    finish(w, path)
}

/// Reads every segment in `dir` and joins them into one run of slices that
/// must reach the terminal slice without gaps.
pub fn load_checkpoint(dir: &Path, params: &ModelParams, cfg: &SolverConfig) -> Result<Checkpoint> {
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(io_at(dir))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "csv"))
        .collect();
    files.sort();
    let mut runs = Vec::new();
    for f in &files {
        let file = File::open(f).map_err(io_at(f))?;
        let cp = read_checkpoint(BufReader::new(file), params, cfg).map_err(|e| match e {
            ruin_core::Error::Format { line, msg } => {
                CliError::Usage(format!("{}: line {line}: {msg}", f.display()))
            }
            other => at_path(f)(other),
        })?;
        runs.push(cp);
    }
    runs.sort_by_key(|r| r.start);
    let mut joined: Option<Checkpoint> = None;
    for run in runs.into_iter().rev() {
        joined = Some(match joined {
            None => {
                if run.start + run.values.len() != cfg.n_s + 1 {
                    return Err(CliError::Usage(format!(
                        "checkpoint in {} does not reach the terminal slice",
                        dir.display()
                    )));
                }
                run
            }
            Some(mut later) => {
                let end = run.start + run.values.len();
                if end < later.start {
                    return Err(CliError::Usage(format!(
                        "checkpoint in {} is missing slices {end}..{}",
                        dir.display(),
                        later.start
                    )));
                }
                // overlapping segments: keep the later copy of shared slices
                let keep = later.start - run.start;
                let mut values = run.values;
                let mut policy = run.policy;
                values.truncate(keep);
                policy.truncate(keep);
                values.append(&mut later.values);
                policy.append(&mut later.policy);
                Checkpoint { start: run.start, values, policy }
            }
        });
    }
    joined.ok_or_else(|| CliError::Usage(format!("no checkpoint segments in {}", dir.display())))
}

#[derive(Serialize)]
struct SolveMeta<'a> {
    version: &'a str,
    config_sha256: &'a str,
    n_s: usize,
    n_x: usize,
    n_q: usize,
    n_quad: usize,
    node_count: usize,
    max_monotonicity_violation: f64,
    max_fixed_point_iterations: usize,
}

/// Solves with optional checkpointing; writes nothing but checkpoints.
pub fn solve_checkpointed(
    params: &ModelParams,
    cfg: &SolverConfig,
    prov: &Provenance,
    out: &Path,
    flags: &SolveFlags,
) -> Result<Solution> {
    let resume = match &flags.resume {
        Some(dir) => {
            let cp = load_checkpoint(dir, params, cfg)?;
            info!("resuming from slice {} of {}", cp.start, cfg.n_s);
            Some(cp)
        }
        None => None,
    };
    let every = match flags.checkpoint_every {
        Some(0) => return Err(CliError::Usage("--checkpoint-every must be >= 1".into())),
        other => other,
    };
    let Some(every) = every else {
        return Ok(solve_with(params, cfg, SolveOptions { resume, on_slice: None })?);
    };
    let dir = out.join(CHECKPOINT_DIR);
    ensure_dir(&dir)?;
    let grid = ruin_core::Grid::new(params, cfg.n_s, cfg.n_x)?;
    let mut pending: Vec<(usize, Vec<f64>, Vec<u16>)> = Vec::new();
    let flush = |pending: &mut Vec<(usize, Vec<f64>, Vec<u16>)>| -> ruin_core::Result<()> {
        if pending.is_empty() {
            return Ok(());
        }
        pending.reverse();
        let (lo, hi) = (pending[0].0, pending[pending.len() - 1].0);
        let path = dir.join(format!("slices_{lo:05}_{hi:05}.csv"));
        let io = |source| ruin_core::Error::Io { path: path.clone(), source };
        let mut w = BufWriter::new(File::create(&path).map_err(io)?);
        write_slices(&mut w, prov, &grid, cfg.n_q, pending)?;
        w.flush().map_err(|source| ruin_core::Error::Io { path: path.clone(), source })?;
        pending.clear();
        Ok(())
    };
    let mut on_slice = |i: usize, v: &[f64], q: &[u16]| -> ruin_core::Result<()> {
        pending.push((i, v.to_vec(), q.to_vec()));
        if pending.len() == every || i == 0 {
            flush(&mut pending)?;
        }
        Ok(())
    };
    Ok(solve_with(params, cfg, SolveOptions { resume, on_slice: Some(&mut on_slice) })?)
}

pub fn run_solve(config: &RunConfig, out: &Path, flags: &SolveFlags) -> Result<Solution> {
    let params = config.model.params()?;
    let cfg = config.solver.solver_config()?;
    let hash = config.hash();
    let prov = Provenance::new(&hash);
    ensure_dir(out)?;
    let sol = solve_checkpointed(&params, &cfg, &prov, out, flags)?;
    info!(
        "solved {}x{} ({} nodes) in {:.2}s",
        cfg.n_s, cfg.n_x, sol.diagnostics.node_count, sol.diagnostics.wall_time_secs
    );
    if config.wants(Format::Csv) {
        let path = out.join(VALUE_FILE);
        let mut w = create(&path)?;
        write_field(&mut w, &prov, &sol.value, &sol.policy, 0).map_err(at_path(&path))?;
        finish(w, &path)?;
    }
    if config.wants(Format::Json) {
        let d = &sol.diagnostics;
        write_json(
            &out.join(SOLVE_META_FILE),
            &SolveMeta {
                version: ruin_core::VERSION,
                config_sha256: &hash,
                n_s: cfg.n_s,
                n_x: cfg.n_x,
                n_q: cfg.n_q,
                n_quad: cfg.n_quad,
                node_count: d.node_count,
                max_monotonicity_violation: d.max_monotonicity_violation,
                max_fixed_point_iterations: d.max_fixed_point_iterations,
            },
        )?;
    }
    Ok(sol)
}

fn table_policy(config: &RunConfig, params: &ModelParams) -> Result<Policy> {
    let table = match &config.simulate.table {
        Some(path) => {
            let file = File::open(path).map_err(io_at(path))?;
            read_field(BufReader::new(file), params).map_err(at_path(path))?.1
        }
        None => {
            let sol = solve(params, &config.solver.solver_config()?)?;
            sol.policy.to_table(params)?
        }
    };
    Ok(Policy::Table(Arc::new(table)))
}

pub fn run_simulate(config: &RunConfig, out: &Path, dump_paths: bool) -> Result<()> {
    let params = config.model.params()?;
    let sim = &config.simulate;
    let points = sim.points(&params)?;
    let policy = match sim.policy {
        PolicyKind::Constant => Policy::constant(sim.retention.expect("checked at parse time"))?,
        PolicyKind::Table => table_policy(config, &params)?,
    };
    let prov = Provenance::new(config.hash());
    let opts = SimOptions { early_stop: sim.early_stop };
    ensure_dir(out)?;

    let path = out.join(SUMMARY_FILE);
    let mut w = create(&path)?;
    write_summary_header(&mut w, &prov).map_err(at_path(&path))?;
    for pt in &points {
        let est = estimate_survival_with(&params, &policy, pt, sim.n_paths, sim.seed, opts)?;
        info!("{} from ({}, {}, {}): {} ± {}", policy.label(), pt.s, pt.x, pt.w, est.mean, est.std_error);
        write_summary_row(&mut w, pt, &policy.label(), &est).map_err(at_path(&path))?;
    }
    finish(w, &path)?;

    if dump_paths {
        let path = out.join(PATHS_FILE);
        let mut w = create(&path)?;
        write_path_header(&mut w, &prov).map_err(at_path(&path))?;
        for (n, pt) in points.iter().enumerate() {
            for index in 0..sim.n_paths {
                let mut stream = PathStream::new(sim.seed, index);
                let rec = simulate_path(&params, &policy, pt, &mut stream, opts)?;
                let id = n as u64 * sim.n_paths + index;
                write_path_events(&mut w, id, &rec).map_err(at_path(&path))?;
            }
        }
        finish(w, &path)?;
    }
    Ok(())
}

#[derive(Serialize)]
struct ReportFile<'a> {
    version: &'a str,
    config_sha256: &'a str,
    passed: bool,
    #[serde(flatten)]
    report: &'a ruin_core::validation::ValidationReport,
}

/// Runs the validation suite; returns whether every check passed.
pub fn run_validate(config: &RunConfig, out: &Path) -> Result<bool> {
    let params = config.model.params()?;
    let cfg = config.solver.solver_config()?;
    let v = &config.validate;
    let hash = config.hash();
    ensure_dir(out)?;
    let sol = solve(&params, &cfg)?;
    let fine = if v.refine {
        let fine_cfg = SolverConfig { n_s: 2 * cfg.n_s, n_x: 2 * cfg.n_x, ..cfg };
        Some(solve(&params, &fine_cfg)?)
    } else {
        None
    };
    let opts = SuiteOptions {
        points: v.points(&params)?,
        n_paths: v.n_paths,
        seed: v.seed,
        dpp_point: v.dpp_point(&params)?,
        dpp_steps: v.dpp_steps.clone(),
        eps_grid: v.eps_grid,
    };
    let report = run_suite(&params, &sol, fine.as_ref(), &opts)?;
    for c in &report.checks {
        info!("{:<24} {:?} violation {:e} tolerance {:e}", c.name, c.status, c.violation, c.tolerance);
    }
    let passed = report.passed();
    write_json(
        &out.join(REPORT_FILE),
        &ReportFile { version: ruin_core::VERSION, config_sha256: &hash, passed, report: &report },
    )?;
    Ok(passed)
}

/// Model parameter varied by a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Eta,
    P,
    Horizon,
    ClaimMean,
    HazardRate,
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Eta => "eta",
            Axis::P => "p",
            Axis::Horizon => "horizon",
            Axis::ClaimMean => "claim_mean",
            Axis::HazardRate => "hazard_rate",
        }
    }

    /// Copy of `config` with the axis set to `value`. Changing the claim
    /// mean rescales the claim law and keeps its shape parameter.
    pub fn apply(self, config: &RunConfig, value: f64) -> Result<RunConfig> {
        let mut c = config.clone();
        let m = &mut c.model;
        match self {
            Axis::Eta => m.eta = value,
            Axis::P => m.p = value,
            Axis::Horizon => m.horizon = value,
            Axis::ClaimMean => match m.claims {
                ClaimKind::Exponential => m.claim_mean = Some(value),
                ClaimKind::Gamma => {
                    let shape = m.claim_shape.unwrap_or(1.0);
                    m.claim_scale = Some(value / shape);
                }
                ClaimKind::Lognormal => {
                    let sd = m.claim_sdlog.unwrap_or(0.0);
                    if !(value > 0.0) {
                        return Err(CliError::Usage(format!("claim mean must be > 0, got {value}")));
                    }
                    m.claim_meanlog = Some(value.ln() - 0.5 * sd * sd);
                }
            },
            Axis::HazardRate => match m.hazard {
                HazardKind::ConstantRate | HazardKind::Erlang => m.hazard_rate = Some(value),
                HazardKind::Weibull => {
                    return Err(CliError::Usage("hazard_rate does not apply to a weibull hazard".into()))
                }
            },
        }
        c.check().map_err(|e| match e {
            CliError::Config(msg) => CliError::Usage(format!("{}={value}: {msg}", self.name())),
            other => other,
        })?;
        Ok(c)
    }
}

/// Solves once per value and collects the value and retention at the
/// configured simulation points into one summary.
pub fn run_sweep(config: &RunConfig, axis: Axis, values: &[f64], out: &Path) -> Result<()> {
    if values.is_empty() {
        return Err(CliError::Usage("--values is empty".into()));
    }
    let variants = values.iter().map(|&v| axis.apply(config, v)).collect::<Result<Vec<_>>>()?;
    ensure_dir(out)?;
    let sweep_hash = {
        let tag: Vec<String> = variants.iter().map(RunConfig::hash).collect();
        let mut joined = config.hash();
        joined.push_str(&tag.concat());
        crate::config::digest(joined.as_bytes())
    };
    let path = out.join(SWEEP_FILE);
    let mut w = create(&path)?;
    let prov = Provenance::new(&sweep_hash);
    let line = |w: &mut BufWriter<File>, s: String| writeln!(w, "{s}").map_err(io_at(&path));
    line(&mut w, prov.line())?;
    line(&mut w, "axis,value,s,x,w,V,q_star".into())?;
    for (n, (variant, &value)) in variants.iter().zip(values).enumerate() {
        let dir = out.join(format!("{}_{n:03}", axis.name()));
        let sol = run_solve(variant, &dir, &SolveFlags::default())?;
        let params = variant.model.params()?;
        let table = sol.policy.to_table(&params)?;
        for pt in variant.simulate.points(&params)? {
            line(
                &mut w,
                format!(
                    "{},{},{},{},{},{},{}",
                    axis.name(),
                    fmt_f64(value),
                    fmt_f64(pt.s),
                    fmt_f64(pt.x),
                    fmt_f64(pt.w),
                    fmt_f64(sol.value.interpolate(&params, &pt)),
                    fmt_f64(table.evaluate(&pt))
                ),
            )?;
        }
    }
    finish(w, &path)
}
