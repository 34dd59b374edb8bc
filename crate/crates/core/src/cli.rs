//! Command-line front end: `solve`, `validate` and `report`.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use nalgebra::Vector3;
use serde::Serialize;

use crate::config::{times_from_list, RunConfig};
use crate::error::GuidanceError;
use crate::io::{read_metrics, read_run, write_artifacts, MetricsDocument, METRICS_FILE, VALIDATION_FILE};
use crate::model::{derive_params, ThrustProfile};
use crate::outer::{solve_switching_times, ProfileMode};
use crate::validation::{
    metrics_report, propagate_oracle, InitialCostate, MetricsReport, PropagationReport, ReferenceSet, DEFAULT_REL_TOL,
};

/// Process exit codes; each failure mode maps to exactly one.
pub mod exit {
    pub const OK: i32 = 0;
    pub const IO: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const INNER: i32 = 3;
    pub const OUTER: i32 = 4;
    pub const CLASSIFICATION: i32 = 5;
    pub const TOLERANCE: i32 = 6;
}

/// Exit code for a solver error.
pub fn exit_code(e: &GuidanceError) -> i32 {
    match e {
        GuidanceError::Config(_)
        | GuidanceError::DegenerateSegment { .. }
        | GuidanceError::Domain { .. }
        | GuidanceError::InfeasibleProfile { .. }
        | GuidanceError::Initialization(_) => exit::CONFIG,
        GuidanceError::InnerFailure { .. }
        | GuidanceError::SingularCostate { .. }
        | GuidanceError::RankDeficient { .. }
        | GuidanceError::Divergence { .. } => exit::INNER,
        GuidanceError::OuterNonConvergence { .. } | GuidanceError::TimeOrdering { .. } => exit::OUTER,
        GuidanceError::Classification { .. } => exit::CLASSIFICATION,
        GuidanceError::Integrator(_) | GuidanceError::Internal(_) => exit::IO,
    }
}

#[derive(Debug, Parser)]
#[command(name = "tfc-pdg", version, about = "Fuel-optimal powered-descent guidance solver")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ProfileArg {
    MinMax,
    MaxMinMax,
    Auto,
}

impl From<ProfileArg> for ProfileMode {
    fn from(p: ProfileArg) -> Self {
        match p {
            ProfileArg::MinMax => ProfileMode::ForceMinMax,
            ProfileArg::MaxMinMax => ProfileMode::ForceMaxMinMax,
            ProfileArg::Auto => ProfileMode::Auto,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Table,
    Json,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Solve one scenario and write trajectory.csv and metrics.json.
    Solve {
        #[arg(long)]
        config: PathBuf,
        /// Output directory; overrides `output.dir` in the config.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        profile: Option<ProfileArg>,
        #[arg(long)]
        n_basis: Option<usize>,
        #[arg(long)]
        nodes: Option<usize>,
        #[arg(long)]
        t1: Option<f64>,
        #[arg(long)]
        t2: Option<f64>,
        #[arg(long)]
        tf: Option<f64>,
    },
    /// Re-propagate a solved run with an adaptive integrator.
    Validate {
        #[arg(long = "in")]
        input: PathBuf,
        #[arg(long, default_value_t = DEFAULT_REL_TOL)]
        rtol: f64,
    },
    /// Compare one or more runs with the stored reference values.
    Report {
        #[arg(required = true)]
        metrics: Vec<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Table)]
        format: Format,
    },
}

/// Parses `args` (program name first) and runs the command; returns the exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { exit::CONFIG } else { exit::OK };
        }
    };
    match cli.command {
        Command::Solve { config, out, profile, n_basis, nodes, t1, t2, tf } => {
            let overrides = Overrides { profile, n_basis, nodes, t1, t2, tf };
            cmd_solve(&config, out.as_deref(), &overrides)
        }
        Command::Validate { input, rtol } => cmd_validate(&input, rtol),
        Command::Report { metrics, format } => cmd_report(&metrics, format),
    }
}

struct Overrides {
    profile: Option<ProfileArg>,
    n_basis: Option<usize>,
    nodes: Option<usize>,
    t1: Option<f64>,
    t2: Option<f64>,
    tf: Option<f64>,
}

fn apply(cfg: &mut RunConfig, o: &Overrides) -> Result<(), GuidanceError> {
    if let Some(p) = o.profile {
        cfg.solver.profile = p.into();
    }
    if let Some(n) = o.n_basis {
        cfg.solver.n_basis = n;
    }
    if let Some(n) = o.nodes {
        cfg.solver.nodes = n;
    }
    match (o.t1, o.t2, o.tf) {
        (None, None, None) => {}
        (Some(t1), None, Some(tf)) => cfg.solver.initial_times = Some(vec![t1, tf]),
        (Some(t1), Some(t2), Some(tf)) => cfg.solver.initial_times = Some(vec![t1, t2, tf]),
        _ => return Err(GuidanceError::Config("initial times need --t1 and --tf, plus --t2 for max-min-max".into())),
    }
    if let Some(t) = &cfg.solver.initial_times {
        times_from_list(t)?;
    }
    cfg.validate()
}

fn fail(e: &GuidanceError) -> i32 {
    eprintln!("error: {e}");
    exit_code(e)
}

fn cmd_solve(config: &Path, out: Option<&Path>, overrides: &Overrides) -> i32 {
    let mut cfg = match RunConfig::load(config) {
        Ok(c) => c,
        Err(e) => return fail(&e),
    };
    if let Err(e) = apply(&mut cfg, overrides) {
        return fail(&e);
    }
    let Some(dir) = out.map(Path::to_path_buf).or_else(|| cfg.output.dir.clone()) else {
        return fail(&GuidanceError::Config("no output directory: pass --out or set output.dir".into()));
    };
    let (lander, settings) = match (cfg.lander_config(), cfg.outer_settings()) {
        (Ok(l), Ok(s)) => (l, s),
        (Err(e), _) | (_, Err(e)) => return fail(&e),
    };
    let bc = cfg.boundary.to_conditions();
    let solution = match solve_switching_times(&bc, &lander, &settings) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let name = config.file_stem().map_or("run".into(), |s| s.to_string_lossy().into_owned());
    let doc = match write_artifacts(
        &dir,
        &name,
        &solution,
        &cfg.lander,
        &cfg.boundary,
        settings.n_basis,
        settings.n_intervals,
        cfg.output.reference.clone(),
    ) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: writing artifacts to {}: {e}", dir.display());
            return exit::IO;
        }
    };
    println!(
        "{}: {} times {:?} m_used {:.6} kg, L2(loss) {:.3e}, L2(H) {:.3e}, {} outer iterations",
        doc.name,
        doc.profile,
        doc.times,
        doc.metrics.m_used,
        doc.metrics.l2_loss,
        doc.metrics.l2_hamiltonian,
        doc.metrics.outer_iterations
    );
    exit::OK
}

#[derive(Debug, Serialize)]
struct ValidationDocument {
    propagation: PropagationReport,
    position_error_max: f64,
    velocity_error_max: f64,
    lambda_m_final_max: f64,
    pass: bool,
}

/// Propagation bounds used when the run names no reference set.
const DEFAULT_POSITION_MAX: f64 = 1e-4;
const DEFAULT_VELOCITY_MAX: f64 = 1e-5;
const DEFAULT_LAMBDA_M_MAX: f64 = 1e-9;

fn cmd_validate(dir: &Path, rtol: f64) -> i32 {
    let (doc, histories) = match read_run(dir) {
        Ok(r) => r,
        Err(e) => return fail(&e),
    };
    if histories.is_empty() || histories.t.last() != doc.times.last() {
        return fail(&GuidanceError::Config("trajectory does not cover the recorded time span".into()));
    }
    let result = (|| {
        let config = derive_params(&doc.lander)?;
        let times = times_from_list(&doc.times[1..])?;
        let profile = ThrustProfile::new(doc.profile, times, &config)?;
        let costate = InitialCostate {
            lambda_r: Vector3::from(doc.lambda_r),
            lambda_v: Vector3::from(doc.lambda_v0),
            lambda_m: doc.lambda_m0,
        };
        propagate_oracle(&doc.boundary.to_conditions(), &costate, &profile, &config, rtol)
    })();
    let propagation = match result {
        Ok(p) => p,
        Err(e @ GuidanceError::Config(_)) => return fail(&e),
        Err(e) => {
            eprintln!("error: {e}");
            return exit::TOLERANCE;
        }
    };
    let reference = doc.reference.as_deref().and_then(ReferenceSet::by_name);
    let bound = |f: fn(&ReferenceSet) -> Option<f64>, default: f64| reference.as_ref().and_then(f).unwrap_or(default);
    let position_error_max = bound(|r| r.position_error_max, DEFAULT_POSITION_MAX);
    let velocity_error_max = bound(|r| r.velocity_error_max, DEFAULT_VELOCITY_MAX);
    let lambda_m_final_max = bound(|r| r.lambda_m_final_max, DEFAULT_LAMBDA_M_MAX);
    let pass = propagation.position_error <= position_error_max
        && propagation.velocity_error <= velocity_error_max
        && propagation.lambda_m_final.abs() <= lambda_m_final_max;
    let out = ValidationDocument { propagation, position_error_max, velocity_error_max, lambda_m_final_max, pass };
    let json = serde_json::to_string_pretty(&out).expect("validation document serializes");
    if let Err(e) = std::fs::write(dir.join(VALIDATION_FILE), json) {
        eprintln!("error: writing {}: {e}", VALIDATION_FILE);
        return exit::IO;
    }
    let p = &out.propagation;
    println!(
        "{}: |r(tf)| {:.3e} m (max {:.0e}), |v(tf)| {:.3e} m/s (max {:.0e}), lambda_m(tf) {:.3e} (max {:.0e}), rtol {:.0e}, {} steps: {}",
        doc.name,
        p.position_error,
        position_error_max,
        p.velocity_error,
        velocity_error_max,
        p.lambda_m_final,
        lambda_m_final_max,
        p.rel_tol,
        p.steps,
        if out.pass { "pass" } else { "FAIL" }
    );
    if out.pass {
        exit::OK
    } else {
        exit::TOLERANCE
    }
}

#[derive(Debug, Serialize)]
struct ReportEntry {
    name: String,
    profile: String,
    report: MetricsReport,
}

fn load_entry(path: &Path) -> Result<ReportEntry, GuidanceError> {
    let metrics_path = if path.is_dir() { path.join(METRICS_FILE) } else { path.to_path_buf() };
    let doc: MetricsDocument = read_metrics(&metrics_path)?;
    let propagation = metrics_path
        .parent()
        .map(|d| d.join(VALIDATION_FILE))
        .and_then(|p| std::fs::read_to_string(p).ok())
        .and_then(|text| serde_json::from_str::<serde_json::Value>(&text).ok())
        .and_then(|v| serde_json::from_value::<PropagationReport>(v["propagation"].clone()).ok());
    let reference = doc.reference.as_deref().and_then(ReferenceSet::by_name);
    let report = metrics_report(&doc.times, &doc.metrics, propagation.as_ref(), reference.as_ref());
    Ok(ReportEntry { name: doc.name, profile: doc.profile.to_string(), report })
}

fn mark(pass: Option<bool>) -> &'static str {
    match pass {
        Some(true) => "pass",
        Some(false) => "FAIL",
        None => "-",
    }
}

fn cmd_report(paths: &[PathBuf], format: Format) -> i32 {
    let mut entries = Vec::with_capacity(paths.len());
    for p in paths {
        match load_entry(p) {
            Ok(e) => entries.push(e),
            Err(e) => {
                eprintln!("error: {e}");
                return exit::IO;
            }
        }
    }
    let stdout = std::io::stdout();
    let mut out = stdout.lock();
    let written = match format {
        Format::Json => writeln!(out, "{}", serde_json::to_string_pretty(&entries).expect("report serializes")),
        Format::Table => write_table(&mut out, &entries),
    };
    match written {
        Ok(()) => exit::OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit::IO
        }
    }
}

fn write_table(out: &mut impl Write, entries: &[ReportEntry]) -> std::io::Result<()> {
    let fields = ["t1", "t2", "tf", "m_used", "l2_loss", "l2_hamiltonian", "position_error"];
    let w = entries.iter().map(|e| e.name.len()).max().unwrap_or(0).max(3);
    write!(out, "{:<w$} {:<12}", "run", "profile")?;
    for f in fields {
        write!(out, " {:>22}", f)?;
    }
    writeln!(out, " {:>6}", "result")?;
    for e in entries {
        write!(out, "{:<w$} {:<12}", e.name, e.profile)?;
        for f in fields {
            let cell = match e.report.rows.iter().find(|r| r.field == f) {
                Some(r) => {
                    let value = if r.value.abs() >= 1e-3 { format!("{:.4}", r.value) } else { format!("{:.3e}", r.value) };
                    match r.reference {
                        Some(rf) => format!("{value} ({rf}) {}", mark(r.pass)),
                        None => format!("{value} {}", mark(r.pass)),
                    }
                }
                None => "-".into(),
            };
            write!(out, " {:>22}", cell)?;
        }
        writeln!(out, " {:>6}", mark(e.report.all_pass()))?;
    }
    Ok(())
}
