//! Command line surface: periodic solves, multiscale and resolved runs,
//! comparisons, sweeps and geometry dumps. Every run writes a report that
//! embeds the fully expanded configuration.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::growth::GrowthField;
use crate::microflow::FlowError;
use crate::multiscale::{build_solver, initial_growth, run_multiscale, vessel_map, MultiscaleError, MultiscaleRun};
use crate::oracle::{compare, run_resolved, GrowthRun, OracleError, ResolvedRun};
use crate::periodic::{solve_periodic, CavityProblem, PeriodicMode, PeriodicSolveReport};
use crate::report::{write_csv_rows, write_json};

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("{path}: {message}")]
    Report { path: String, message: String },
    #[error(transparent)]
    Multiscale(#[from] MultiscaleError),
    #[error(transparent)]
    Oracle(#[from] OracleError),
    #[error(transparent)]
    Flow(#[from] FlowError),
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    NotConverged(String),
}

impl CliError {
    /// Stable machine-readable category.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } | CliError::Report { .. } => "io",
            CliError::Usage(_) => "usage",
            CliError::NotConverged(_) | CliError::Multiscale(MultiscaleError::NotConverged { .. }) => "not_converged",
            CliError::Oracle(OracleError::Budget { .. }) => "budget",
            CliError::Oracle(OracleError::ConfigMismatch(..)) => "config_mismatch",
            _ => "solver",
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io { path: path.display().to_string(), source }
}

#[derive(Debug, Parser)]
#[command(name = "pulsegrowth", version, about = "Pulsatile flow and wall growth near stent tips")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// TOML configuration file; defaults apply to anything left out.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory, created if missing.
    #[arg(long, default_value = "out")]
    pub out: PathBuf,
    /// Override a single value, `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub set: Vec<String>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Problem {
    /// Forced box flow, Stokes, unit density.
    Cavity,
    /// The vessel channel of the run configuration.
    Channel,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    Forward,
    Averaging,
}

impl From<ModeArg> for PeriodicMode {
    fn from(m: ModeArg) -> Self {
        match m {
            ModeArg::Forward => PeriodicMode::Forward,
            ModeArg::Averaging => PeriodicMode::Averaging,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RunKind {
    Multiscale,
    Resolve,
}

#[derive(Debug, Clone, Args)]
pub struct StepArgs {
    /// Macro step in seconds; must divide the horizon.
    #[arg(long = "K", value_name = "SECONDS")]
    pub macro_step: Option<f64>,
    /// Micro step in seconds; must divide the period.
    #[arg(long = "k", value_name = "SECONDS")]
    pub micro_step: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Periodic flow solve on a frozen domain.
    Periodic {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value = "cavity")]
        problem: Problem,
        #[arg(long, value_enum)]
        mode: Option<ModeArg>,
        /// Kinematic viscosity.
        #[arg(long)]
        nu: Option<f64>,
        /// Cavity intervals per side.
        #[arg(long)]
        n: Option<usize>,
        /// Uniform growth value for the channel.
        #[arg(long)]
        c: Option<f64>,
    },
    /// Multiscale growth run.
    Multiscale {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        steps: StepArgs,
    },
    /// Resolved reference run: flow and growth together at the micro step.
    Resolve {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        steps: StepArgs,
    },
    /// Errors of a candidate run against a reference run.
    Compare {
        /// Reference report.json or its directory.
        #[arg(long)]
        reference: PathBuf,
        /// Candidate report.json or its directory.
        #[arg(long)]
        candidate: PathBuf,
        #[arg(long, default_value = "out")]
        out: PathBuf,
    },
    /// Independent runs over a list of values for one key.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Dotted key to vary, e.g. `growth.alpha`.
        #[arg(long)]
        param: String,
        /// Comma-separated values.
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, value_enum, default_value = "multiscale")]
        kind: RunKind,
        /// Concurrent runs.
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Mapped channel nodes and Jacobian for a uniform growth value.
    GeometryDump {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        c: Option<f64>,
    },
}

/// Report written by `multiscale` and `resolve`; `compare` reads it back.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunReport {
    pub kind: RunKind,
    pub config: RunConfig,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub multiscale: Option<MultiscaleRun>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub resolved: Option<ResolvedRun>,
}

impl RunReport {
    pub fn run(&self) -> Result<&dyn GrowthRun, CliError> {
        match (&self.multiscale, &self.resolved) {
            (Some(m), _) => Ok(m),
            (_, Some(r)) => Ok(r),
            _ => Err(CliError::Usage("report holds no run".into())),
        }
    }

    pub fn read(path: &Path) -> Result<Self, CliError> {
        let file = if path.is_dir() { path.join("report.json") } else { path.to_path_buf() };
        let text = fs::read_to_string(&file).map_err(io_err(&file))?;
        serde_json::from_str(&text).map_err(|e| CliError::Report { path: file.display().to_string(), message: e.to_string() })
    }
}

/// Parses `argv`, runs the command and returns the exit status. Failures
/// print `{"error": kind, "message": ...}` on stdout.
pub fn run_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            if !e.use_stderr() {
                print!("{e}");
                return 0;
            }
            println!("{}", json!({ "error": "usage", "message": e.to_string().trim() }));
            return 2;
        }
    };
    match execute(cli.command) {
        Ok(summary) => {
            println!("{summary}");
            0
        }
        Err(e) => {
            println!("{}", json!({ "error": e.kind(), "message": e.to_string() }));
            1
        }
    }
}

pub fn execute(command: Command) -> Result<serde_json::Value, CliError> {
    match command {
        Command::Periodic { common, problem, mode, nu, n, c } => periodic(&common, problem, mode.map(Into::into), nu, n, c),
        Command::Multiscale { common, steps } => {
            let cfg = load_config(&common, &steps)?;
            let report = run_kind(&cfg, RunKind::Multiscale, &common.out)?;
            Ok(summary(&report, &common.out))
        }
        Command::Resolve { common, steps } => {
            let cfg = load_config(&common, &steps)?;
            let report = run_kind(&cfg, RunKind::Resolve, &common.out)?;
            Ok(summary(&report, &common.out))
        }
        Command::Compare { reference, candidate, out } => {
            let r = RunReport::read(&reference)?;
            let c = RunReport::read(&candidate)?;
            let cmp = compare(r.run()?, c.run()?)?;
            create_dir(&out)?;
            let path = out.join("compare.json");
            write_json(&path, &cmp).map_err(io_err(&path))?;
            Ok(json!({ "status": "ok", "linf_rel": cmp.linf_rel, "l2_rel": cmp.l2_rel, "speedup": cmp.speedup }))
        }
        Command::Sweep { common, param, values, kind, workers } => sweep(&common, &param, &values, kind, workers),
        Command::GeometryDump { common, c } => {
            let cfg = load_config(&common, &StepArgs { macro_step: None, micro_step: None })?;
            create_dir(&common.out)?;
            let path = common.out.join("geometry.csv");
            geometry_dump(&cfg, c.unwrap_or(cfg.wall.initial_c), &path)?;
            Ok(json!({ "status": "ok", "file": path }))
        }
    }
}

fn create_dir(dir: &Path) -> Result<(), CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))
}

fn load_config(common: &Common, steps: &StepArgs) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::load(common.config.as_deref(), &common.set)?;
    if let Some(k) = steps.micro_step {
        cfg.schedule.micro_step = k;
    }
    if let Some(big) = steps.macro_step {
        let n = (cfg.schedule.horizon / big).round();
        if !(big > 0.0) || n < 1.0 || (n * big - cfg.schedule.horizon).abs() > 1e-9 * cfg.schedule.horizon {
            return Err(CliError::Usage(format!("--K {big} does not divide the horizon {}", cfg.schedule.horizon)));
        }
        cfg.schedule.steps = n as usize;
    }
    cfg.validate()?;
    if cfg.deterministic {
        faer::set_global_parallelism(faer::Par::Seq);
    }
    Ok(cfg)
}

fn periodic(
    common: &Common,
    problem: Problem,
    mode: Option<PeriodicMode>,
    nu: Option<f64>,
    n: Option<usize>,
    c: Option<f64>,
) -> Result<serde_json::Value, CliError> {
    let (report, described) = match problem {
        Problem::Cavity => {
            let mut p = CavityProblem::default();
            if let Some(v) = nu {
                p.nu = v;
            }
            if let Some(v) = n {
                p.n = v;
            }
            if !(p.nu > 0.0) {
                return Err(CliError::Usage(format!("--nu must be positive, got {}", p.nu)));
            }
            let sol = p.solve(mode.unwrap_or_default())?;
            (sol.report, json!({ "problem": "cavity", "cavity": p }))
        }
        Problem::Channel => {
            let mut cfg = load_config(common, &StepArgs { macro_step: None, micro_step: None })?;
            if let Some(v) = nu {
                cfg.fluid.nu_f = v;
            }
            if let Some(m) = mode {
                cfg.periodic.mode = m;
            }
            cfg.validate()?;
            let growth = initial_growth(&cfg, c.unwrap_or(cfg.wall.initial_c))?;
            let mut s = build_solver(&cfg, &growth)?;
            s.record_wss = false;
            let x0 = s.rest();
            let sol = solve_periodic(&mut s, &x0, cfg.periodic.mode, cfg.periodic.eps_p, cfg.periodic.max_cycles)?;
            (sol.report, json!({ "problem": "channel", "config": cfg, "config_hash": cfg.hash(), "growth_value": growth.max() }))
        }
    };
    write_periodic(&common.out, &report, described)?;
    let out = json!({
        "status": "ok",
        "converged": report.converged,
        "cycles": report.cycles,
        "mean_ratio": report.mean_ratio(),
    });
    if !report.converged {
        return Err(CliError::NotConverged(format!("periodic solve not converged after {} cycles", report.cycles)));
    }
    Ok(out)
}

fn write_periodic(out: &Path, report: &PeriodicSolveReport, mut described: serde_json::Value) -> Result<(), CliError> {
    create_dir(out)?;
    described["report"] = serde_json::to_value(report).map_err(|e| CliError::Usage(e.to_string()))?;
    described["converged"] = json!(report.converged);
    described["cycles"] = json!(report.cycles);
    let path = out.join("report.json");
    write_json(&path, &described).map_err(io_err(&path))?;
    let path = out.join("error_history.csv");
    report.write_error_csv(&path).map_err(io_err(&path))
}

/// Runs one configuration and writes its files under `out`.
pub fn run_kind(cfg: &RunConfig, kind: RunKind, out: &Path) -> Result<RunReport, CliError> {
    create_dir(out)?;
    let report = match kind {
        RunKind::Multiscale => match run_multiscale(cfg) {
            Ok(run) => RunReport { kind, config: cfg.clone(), multiscale: Some(run), resolved: None },
            Err(MultiscaleError::NotConverged { step, cycles, partial }) => {
                let r = RunReport { kind, config: cfg.clone(), multiscale: Some(*partial), resolved: None };
                write_outputs(&r, out)?;
                return Err(CliError::NotConverged(format!(
                    "periodic solve did not converge in macro step {step} after {cycles} cycles"
                )));
            }
            Err(e) => return Err(e.into()),
        },
        RunKind::Resolve => RunReport { kind, config: cfg.clone(), multiscale: None, resolved: Some(run_resolved(cfg)?) },
    };
    write_outputs(&report, out)?;
    Ok(report)
}

fn write_outputs(report: &RunReport, out: &Path) -> Result<(), CliError> {
    let path = out.join("report.json");
    write_json(&path, report).map_err(io_err(&path))?;
    let Ok(run) = report.run() else { return Ok(()) };
    let path = out.join("jout.csv");
    write_csv_rows(&path, &["t", "jout"], run.jout().into_iter().map(|(t, j)| vec![t, j])).map_err(io_err(&path))?;
    if !report.multiscale.as_ref().is_some_and(|m| m.snapshots.is_empty()) {
        let path = out.join("c_final.csv");
        write_growth_csv(run.final_growth(), &path).map_err(io_err(&path))?;
    }
    let reports: Vec<&PeriodicSolveReport> = match (&report.multiscale, &report.resolved) {
        (Some(m), _) => m.reports.iter().collect(),
        (_, Some(r)) => vec![&r.initial_periodic],
        _ => Vec::new(),
    };
    let rows = reports.iter().enumerate().flat_map(|(s, r)| {
        r.error_history.iter().enumerate().map(move |(i, e)| vec![(s + 1) as f64, (i + 1) as f64, *e])
    });
    let path = out.join("error_history.csv");
    write_csv_rows(&path, &["macro_step", "cycle", "error"], rows).map_err(io_err(&path))
}

/// `wall` is 0 for the lower and 1 for the upper wall.
pub fn write_growth_csv(c: &GrowthField, path: &Path) -> std::io::Result<()> {
    let rows = c.walls.iter().enumerate().flat_map(|(w, f)| {
        (0..f.len()).map(move |i| vec![w as f64, f.x1[i], f.arc[i], f.values[i]])
    });
    write_csv_rows(path, &["wall", "x1", "arc", "c"], rows)
}

/// Mapped grid nodes `(i, j, x1, x2, y1, y2, det)` for uniform growth `c`.
pub fn geometry_dump(cfg: &RunConfig, c: f64, path: &Path) -> Result<(), CliError> {
    let growth = initial_growth(cfg, c)?;
    let map = vessel_map(cfg, &growth);
    let grid = cfg.channel_grid()?;
    let mut rows = Vec::with_capacity(grid.node_count());
    for j in 0..=grid.ny {
        for i in 0..=grid.nx {
            let (x, y) = grid.coords(i, j);
            let m = map.eval(x, y)?;
            rows.push(vec![i as f64, j as f64, x, y, m.pos[0], m.pos[1], m.det]);
        }
    }
    write_csv_rows(path, &["i", "j", "x1", "x2", "y1", "y2", "det_j"], rows).map_err(io_err(path))
}

fn summary(report: &RunReport, out: &Path) -> serde_json::Value {
    let (jout_final, seconds) = match report.run() {
        Ok(r) => (r.jout().last().map(|p| p.1), r.seconds()),
        Err(_) => (None, 0.0),
    };
    json!({ "status": "ok", "kind": report.kind, "out": out, "jout_final": jout_final, "seconds": seconds })
}

fn sweep(common: &Common, param: &str, values: &[String], kind: RunKind, workers: usize) -> Result<serde_json::Value, CliError> {
    if workers == 0 {
        return Err(CliError::Usage("--workers must be at least 1".into()));
    }
    let mut configs = Vec::with_capacity(values.len());
    for v in values {
        let mut c = common.clone();
        c.set.push(format!("{param}={v}"));
        configs.push(load_config(&c, &StepArgs { macro_step: None, micro_step: None })?);
    }
    create_dir(&common.out)?;
    let next = AtomicUsize::new(0);
    let mut results: Vec<(usize, serde_json::Value)> = std::thread::scope(|scope| {
        let handles: Vec<_> = (0..workers.min(configs.len()))
            .map(|_| {
                scope.spawn(|| {
                    let mut done = Vec::new();
                    loop {
                        let i = next.fetch_add(1, Ordering::Relaxed);
                        let Some(cfg) = configs.get(i) else { break };
                        let dir = common.out.join(format!("run_{i:03}"));
                        let entry = match run_kind(cfg, kind, &dir) {
                            Ok(r) => {
                                let s = summary(&r, &dir);
                                json!({ "index": i, "value": values[i], "status": "ok", "jout_final": s["jout_final"], "seconds": s["seconds"], "dir": dir })
                            }
                            Err(e) => json!({ "index": i, "value": values[i], "status": "failed", "error": e.kind(), "message": e.to_string(), "dir": dir }),
                        };
                        done.push((i, entry));
                    }
                    done
                })
            })
            .collect();
        handles.into_iter().flat_map(|h| h.join().expect("sweep worker panicked")).collect()
    });
    results.sort_by_key(|r| r.0);
    let entries: Vec<serde_json::Value> = results.into_iter().map(|r| r.1).collect();
    let failed = entries.iter().filter(|e| e["status"] != "ok").count();
    let path = common.out.join("sweep.json");
    write_json(&path, &json!({ "param": param, "kind": kind, "runs": entries })).map_err(io_err(&path))?;
    if failed > 0 {
        return Err(CliError::NotConverged(format!("{failed} of {} sweep runs failed, see {}", values.len(), path.display())));
    }
    Ok(json!({ "status": "ok", "runs": values.len(), "file": path }))
}
