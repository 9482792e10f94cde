//! Command-line layer: JSON configs in, CSV and JSON artifacts out, stable exit codes.
//!
//! | code | meaning |
//! |------|---------|
//! | 0  | success (feasible, design verified) |
//! | 1  | design or verification ran but the verification failed |
//! | 2  | parameters sit on the feasibility threshold |
//! | 3  | parameters are infeasible |
//! | 5  | no contraction found around the anchor |
//! | 6  | Picard iteration did not converge |
//! | 64 | malformed command line or configuration |
//! | 65 | invalid anchor for a collimated construction |
//! | 74 | input or output path could not be used |
//! | 70 | any other internal failure |

use std::ffi::OsString;
use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::collimated::{surface_gap, LowerProfileCartesian, SurfaceGap};
use crate::error::LensError;
use crate::fde::{solve_algebraic_anchor, ContractionDiagnostics};
use crate::pointsource::{
    build_h, build_norm_weights, colinearity_residual, design_lens_with, feasibility, reparam_residual,
    rho_window_check, select_neighbourhood, DesignOptions, Feasibility, FeasibilityReport, HContext,
    LensGeometry,
};
use crate::raytrace::{verify_design, VerificationReport};
use crate::refraction::Direction2;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VERIFY_FAILED: i32 = 1;
pub const EXIT_BOUNDARY: i32 = 2;
pub const EXIT_INFEASIBLE: i32 = 3;
pub const EXIT_NOT_CONTRACTIVE: i32 = 5;
pub const EXIT_NO_CONVERGENCE: i32 = 6;
pub const EXIT_USAGE: i32 = 64;
pub const EXIT_BAD_ANCHOR: i32 = 65;
pub const EXIT_SOFTWARE: i32 = 70;
pub const EXIT_IO: i32 = 74;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("design refused: {1}")]
    Refused(Feasibility, String),
    #[error(transparent)]
    Lens(#[from] LensError),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_USAGE,
            CliError::Io { .. } => EXIT_IO,
            CliError::Refused(f, _) => feasibility_exit_code(*f),
            CliError::Lens(e) => lens_exit_code(e),
        }
    }

    fn io(path: &Path, e: impl std::fmt::Display) -> Self {
        CliError::Io { path: path.to_path_buf(), message: e.to_string() }
    }
}

pub fn lens_exit_code(e: &LensError) -> i32 {
    match e {
        LensError::Infeasible(_) => EXIT_INFEASIBLE,
        LensError::NotContractive { .. } => EXIT_NOT_CONTRACTIVE,
        LensError::NoConvergence { .. }
        | LensError::DeltaTooLarge { .. }
        | LensError::CompositionOutOfRange { .. } => EXIT_NO_CONVERGENCE,
        LensError::AnchorInvalid { .. } => EXIT_BAD_ANCHOR,
        LensError::InvalidInput(_) | LensError::Domain(_) | LensError::Ordering(_) => EXIT_USAGE,
        _ => EXIT_SOFTWARE,
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn default_rho0() -> f64 {
    1.0
}

/// Point-source lens parameters shared by `feasibility`, `design` and `verify`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LensConfig {
    pub n_r: f64,
    pub n_b: f64,
    #[serde(default = "default_rho0")]
    pub rho0: f64,
    pub d0: f64,
    /// Express lengths in units of `rho0`.
    #[serde(default)]
    pub normalize: bool,
    /// Angle of the outgoing direction from the vertical axis, in radians. Designs are
    /// solved for the vertical direction and rotated on output.
    #[serde(default)]
    pub w_angle: f64,
    pub grid_n: Option<usize>,
    pub delta: Option<f64>,
    pub tol: Option<f64>,
    pub max_iter: Option<usize>,
    /// Angular tolerance used by the verification step.
    pub verify_tol: Option<f64>,
}

impl LensConfig {
    pub fn context(&self) -> CliResult<HContext> {
        let (rho0, d0) = if self.normalize { (1.0, self.d0 / self.rho0) } else { (self.rho0, self.d0) };
        if !(self.w_angle.is_finite() && self.w_angle.abs() < std::f64::consts::FRAC_PI_2) {
            return Err(CliError::Config(format!("w_angle must lie in (-pi/2, pi/2), got {}", self.w_angle)));
        }
        HContext::new(self.n_r, self.n_b, rho0, d0).map_err(|e| CliError::Config(e.to_string()))
    }
}

/// Overrides given on the command line; they win over the config file.
#[derive(Debug, Clone, Default, PartialEq, Args)]
pub struct SolveFlags {
    /// Number of grid nodes (odd).
    #[arg(long)]
    pub grid_n: Option<usize>,
    /// Requested half-width of the parameter interval.
    #[arg(long)]
    pub delta: Option<f64>,
    /// Picard residual tolerance.
    #[arg(long)]
    pub tol: Option<f64>,
    #[arg(long)]
    pub max_iter: Option<usize>,
}

impl SolveFlags {
    pub fn design_options(&self, cfg: &LensConfig) -> CliResult<DesignOptions> {
        let d = DesignOptions::default();
        let opts = DesignOptions {
            delta: self.delta.or(cfg.delta).unwrap_or(d.delta),
            grid_n: self.grid_n.or(cfg.grid_n).unwrap_or(d.grid_n),
            tol: self.tol.or(cfg.tol).unwrap_or(d.tol),
            max_iter: self.max_iter.or(cfg.max_iter).unwrap_or(d.max_iter),
            eps: None,
        };
        if opts.grid_n == 0 || opts.grid_n % 2 == 0 {
            return Err(CliError::Config(format!("grid_n must be odd, got {}", opts.grid_n)));
        }
        if !(opts.delta > 0.0 && opts.tol > 0.0) || opts.max_iter == 0 {
            return Err(CliError::Config("delta, tol and max_iter must be positive".into()));
        }
        Ok(opts)
    }
}

pub const DEFAULT_VERIFY_TOL: f64 = 1e-6;

fn verify_tol(cfg: &LensConfig) -> CliResult<f64> {
    let tol = cfg.verify_tol.unwrap_or(DEFAULT_VERIFY_TOL);
    if tol > 0.0 {
        Ok(tol)
    } else {
        Err(CliError::Config(format!("verify_tol must be positive, got {tol}")))
    }
}

pub fn feasibility_exit_code(f: Feasibility) -> i32 {
    match f {
        Feasibility::Feasible => EXIT_OK,
        Feasibility::Boundary => EXIT_BOUNDARY,
        Feasibility::Infeasible => EXIT_INFEASIBLE,
    }
}

pub fn cmd_feasibility(cfg: &LensConfig) -> CliResult<FeasibilityReport> {
    Ok(feasibility(&cfg.context()?))
}

/// Summary of the solve that produced a design.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignSummary {
    pub delta: f64,
    pub grid_n: usize,
    pub iterations: usize,
    pub residual: f64,
    pub anchor: Vec<f64>,
    pub anchor_residual: f64,
    pub weights: [f64; 5],
    pub contraction: ContractionDiagnostics,
    pub rho2_over_rho0: f64,
    pub rho2_over_rho0_closed_form: Option<f64>,
    pub reparam_residual: f64,
    pub colinearity_residual: f64,
    pub w_angle: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DesignReport {
    #[serde(flatten)]
    pub verification: VerificationReport,
    pub design: DesignSummary,
}

/// Rotation taking the vertical direction to the one at angle `theta`.
fn rotate(p: [f64; 2], theta: f64) -> [f64; 2] {
    let (s, c) = theta.sin_cos();
    [p[0] * c + p[1] * s, -p[0] * s + p[1] * c]
}

/// Rotates a lens solved for the vertical direction so that it refracts into angle `theta`.
pub fn rotate_geometry(g: &LensGeometry, theta: f64) -> LensGeometry {
    if theta == 0.0 {
        return g.clone();
    }
    let dir = |m: &Direction2| {
        let r = rotate(m.as_array(), theta);
        Direction2::new(r[0], r[1]).expect("rotation preserves length")
    };
    LensGeometry {
        t: g.t.iter().map(|t| t + theta).collect(),
        phi: g.phi.iter().map(|t| t + theta).collect(),
        f_r: g.f_r.iter().map(|p| rotate(*p, theta)).collect(),
        f_b: g.f_b.iter().map(|p| rotate(*p, theta)).collect(),
        m_r: g.m_r.iter().map(dir).collect(),
        m_b: g.m_b.iter().map(dir).collect(),
        ..g.clone()
    }
}

fn create(path: &Path) -> CliResult<BufWriter<File>> {
    File::create(path).map(BufWriter::new).map_err(|e| CliError::io(path, e))
}

fn write_json<W: Write, T: Serialize>(mut out: W, value: &T) -> std::io::Result<()> {
    serde_json::to_writer_pretty(&mut out, value)?;
    writeln!(out)?;
    out.flush()
}

/// Solves, verifies and writes the lens profile CSV to `out_csv` and the report JSON to
/// `out_report`. The returned report says whether verification passed.
pub fn cmd_design(
    cfg: &LensConfig,
    flags: &SolveFlags,
    out_csv: &Path,
    out_report: Option<&Path>,
) -> CliResult<DesignReport> {
    let ctx = cfg.context()?;
    let opts = flags.design_options(cfg)?;
    let tol = verify_tol(cfg)?;
    let rep = feasibility(&ctx);
    match rep.feasible {
        Feasibility::Feasible => {}
        Feasibility::Boundary => {
            return Err(CliError::Refused(rep.feasible, format!("k0 = {} sits on the threshold", rep.k0)));
        }
        Feasibility::Infeasible => {
            return Err(CliError::Refused(rep.feasible, format!("k0 = {} exceeds {}", rep.k0, rep.threshold)));
        }
    }
    // open outputs first so that a bad path fails before the solve
    let csv_out = create(out_csv)?;
    let report_out = out_report.map(create).transpose()?;
    let sol = design_lens_with(&ctx, &opts)?;
    let verification = verify_design(&sol.geometry, tol);
    let design = DesignSummary {
        delta: sol.grid.delta,
        grid_n: sol.grid.grid_n,
        iterations: sol.grid.iterations,
        residual: sol.grid.residual,
        anchor: sol.anchor.p.clone(),
        anchor_residual: sol.anchor.residual,
        weights: sol.weights.weights,
        contraction: sol.diagnostics.clone(),
        rho2_over_rho0: rho_window_check(&sol).value,
        rho2_over_rho0_closed_form: rep.rho2_over_rho0,
        reparam_residual: reparam_residual(&sol)?.0,
        colinearity_residual: colinearity_residual(&sol)?,
        w_angle: cfg.w_angle,
    };
    let report = DesignReport { verification, design };
    rotate_geometry(&sol.geometry, cfg.w_angle).write_csv(csv_out).map_err(|e| CliError::io(out_csv, e))?;
    if let (Some(path), Some(out)) = (out_report, report_out) {
        write_json(out, &report).map_err(|e| CliError::io(path, e))?;
    }
    Ok(report)
}

/// Reads a lens profile CSV written by `design` and traces it.
pub fn cmd_verify(cfg: &LensConfig, input: &Path) -> CliResult<VerificationReport> {
    let ctx = cfg.context()?;
    let tol = verify_tol(cfg)?;
    let file = File::open(input).map_err(|e| CliError::io(input, e))?;
    let geom = LensGeometry::read_csv(&ctx, file)?;
    let geom = rotate_geometry(&geom, -cfg.w_angle);
    Ok(verify_design(&geom, tol))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Spacing {
    #[default]
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub n_r: f64,
    pub n_b: f64,
    #[serde(default = "default_rho0")]
    pub rho0: f64,
    /// Endpoints of the `k0 = rho0 / d0` range; a descending pair is swapped.
    pub k0_range: [f64; 2],
    pub points: usize,
    #[serde(default)]
    pub spacing: Spacing,
}

impl SweepConfig {
    pub fn k0_values(&self) -> CliResult<Vec<f64>> {
        let [a, b] = self.k0_range;
        let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
        if !(lo > 0.0 && hi.is_finite()) {
            return Err(CliError::Config(format!("k0 range must be positive, got {:?}", self.k0_range)));
        }
        let n = self.points;
        Ok((0..n)
            .map(|i| {
                if n == 1 {
                    return lo;
                }
                let s = i as f64 / (n - 1) as f64;
                match self.spacing {
                    Spacing::Linear => lo + s * (hi - lo),
                    Spacing::Log => (lo.ln() + s * (hi.ln() - lo.ln())).exp(),
                }
            })
            .collect())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum SweepStatus {
    Feasible,
    NotContractive,
    Boundary,
    Infeasible,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepRow {
    pub k0: f64,
    pub status: SweepStatus,
    pub feasibility: FeasibilityReport,
    pub eps: Option<f64>,
    pub diagnostics: Option<ContractionDiagnostics>,
    pub error: Option<String>,
}

/// Feasibility and contraction screening at one `k0`.
pub fn sweep_row(n_r: f64, n_b: f64, rho0: f64, k0: f64) -> CliResult<SweepRow> {
    let ctx = HContext::new(n_r, n_b, rho0, rho0 / k0).map_err(|e| CliError::Config(e.to_string()))?;
    let rep = feasibility(&ctx);
    let mut row = SweepRow { k0, status: SweepStatus::Infeasible, feasibility: rep, eps: None, diagnostics: None, error: None };
    match row.feasibility.feasible {
        Feasibility::Infeasible => return Ok(row),
        Feasibility::Boundary => {
            row.status = SweepStatus::Boundary;
            return Ok(row);
        }
        Feasibility::Feasible => {}
    }
    let guess = row.feasibility.p.expect("feasible report carries P");
    let screened = (|| {
        let h = build_h(&ctx);
        let norm = build_norm_weights(&ctx)?.norm();
        let anchor = solve_algebraic_anchor(&h, &guess)?;
        select_neighbourhood(&h, &anchor, &norm, None)
    })();
    match screened {
        Ok((eps, d)) => {
            row.status = SweepStatus::Feasible;
            row.eps = Some(eps);
            row.diagnostics = Some(d);
        }
        Err(LensError::NotContractive { .. }) => row.status = SweepStatus::NotContractive,
        Err(e) => {
            row.status = SweepStatus::Failed;
            row.error = Some(e.to_string());
        }
    }
    Ok(row)
}

/// Evaluates every `k0` of the sweep in parallel and writes one JSON line per value, in
/// input order.
pub fn cmd_sweep<W: Write>(cfg: &SweepConfig, mut out: W) -> CliResult<Vec<SweepRow>> {
    let ks = cfg.k0_values()?;
    let rows = ks
        .par_iter()
        .map(|k| sweep_row(cfg.n_r, cfg.n_b, cfg.rho0, *k))
        .collect::<CliResult<Vec<_>>>()?;
    for row in &rows {
        let line = serde_json::to_string(row).map_err(|e| CliError::Config(e.to_string()))?;
        writeln!(out, "{line}").map_err(|e| CliError::io(Path::new("<stdout>"), e))?;
    }
    Ok(rows)
}

fn default_samples() -> usize {
    201
}

/// Collimated two-colour lens with a polynomial lower face `u(t) = sum_k u[k] t^k`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GapConfig {
    pub n_r: f64,
    pub n_b: f64,
    pub d0: f64,
    #[serde(default)]
    pub t0: f64,
    pub interval: [f64; 2],
    #[serde(default = "default_samples")]
    pub samples: usize,
    pub u: Vec<f64>,
}

impl GapConfig {
    pub fn lower(&self) -> CliResult<LowerProfileCartesian> {
        if self.u.is_empty() {
            return Err(CliError::Config("u needs at least one coefficient".into()));
        }
        let [a, b] = self.interval;
        if !(a < b) || self.samples < 2 {
            return Err(CliError::Config("interval must be increasing with at least 2 samples".into()));
        }
        let c = self.u.clone();
        let dc = self.u.clone();
        let u = move |t: f64| c.iter().rev().fold(0.0, |acc, k| acc * t + k);
        let du = move |t: f64| {
            dc.iter().enumerate().skip(1).rev().fold(0.0, |acc, (k, v)| acc * t + k as f64 * v)
        };
        LowerProfileCartesian::from_fn(a, b, self.samples, u, du).map_err(|e| CliError::Config(e.to_string()))
    }
}

pub const GAP_CSV_HEADER: [&str; 12] =
    ["t", "frx", "fry", "fbx", "fby", "gap", "m_gap", "m_bound", "d_gap", "d_bound", "gap_bound", "dn"];

/// Builds both faces over the configured lower profile and writes the gap curve with its
/// bound columns.
pub fn cmd_collimated_gap<W: Write>(cfg: &GapConfig, out: W) -> CliResult<SurfaceGap> {
    let lower = cfg.lower()?;
    let gap = surface_gap(&lower, cfg.n_r, cfg.n_b, cfg.d0, cfg.t0)?;
    let dn = (cfg.n_b - cfg.n_r).abs();
    let mut wtr = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(out);
    let io = |e: csv::Error| CliError::io(Path::new("<output>"), e);
    wtr.write_record(GAP_CSV_HEADER).map_err(io)?;
    for s in &gap.per_t {
        let row = [
            s.t,
            s.f_r[0],
            s.f_r[1],
            s.f_b[0],
            s.f_b[1],
            s.gap,
            s.m_gap,
            gap.m_bound,
            s.d_gap,
            gap.c_prime * dn,
            gap.c_bar * dn,
            dn,
        ];
        wtr.write_record(row.iter().map(|v| crate::fmt_f64(*v))).map_err(io)?;
    }
    wtr.flush().map_err(|e| CliError::io(Path::new("<output>"), e))?;
    Ok(gap)
}

#[derive(Debug, Parser)]
#[command(name = "dichroic-lens", version, about = "Design and verify lenses that refract two colours into one direction")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Args)]
pub struct ConfigArg {
    /// JSON configuration file, or `-` for standard input.
    #[arg(long, default_value = "-")]
    pub config: String,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Classify the parameters and print the anchor report as JSON.
    Feasibility {
        #[command(flatten)]
        config: ConfigArg,
    },
    /// Solve a lens, verify it by ray tracing and write the profile CSV.
    Design {
        #[command(flatten)]
        config: ConfigArg,
        /// Profile CSV destination.
        #[arg(long)]
        out: PathBuf,
        /// Report JSON destination; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        solve: SolveFlags,
    },
    /// Trace a previously written profile CSV.
    Verify {
        #[command(flatten)]
        config: ConfigArg,
        /// Profile CSV to check.
        #[arg(long)]
        input: PathBuf,
        /// Report JSON destination; printed to stdout when omitted.
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Screen a range of k0 values; one JSON line per value.
    Sweep {
        #[command(flatten)]
        config: ConfigArg,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Gap between the two collimated faces over a polynomial lower face, as CSV.
    CollimatedGap {
        #[command(flatten)]
        config: ConfigArg,
        /// Output file; standard output when omitted.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn read_config<T: for<'de> Deserialize<'de>>(arg: &ConfigArg, stdin: &mut dyn Read) -> CliResult<T> {
    let mut text = String::new();
    if arg.config == "-" {
        stdin.read_to_string(&mut text).map_err(|e| CliError::io(Path::new("<stdin>"), e))?;
    } else {
        let path = Path::new(&arg.config);
        File::open(path)
            .and_then(|mut f| f.read_to_string(&mut text))
            .map_err(|e| CliError::io(path, e))?;
    }
    serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))
}

fn emit<T: Serialize>(value: &T, path: Option<&Path>, stdout: &mut dyn Write) -> CliResult<()> {
    match path {
        Some(p) => write_json(create(p)?, value).map_err(|e| CliError::io(p, e)),
        None => write_json(stdout, value).map_err(|e| CliError::io(Path::new("<stdout>"), e)),
    }
}

fn output<'a>(path: Option<&Path>, stdout: &'a mut dyn Write) -> CliResult<Box<dyn Write + 'a>> {
    Ok(match path {
        Some(p) => Box::new(create(p)?),
        None => Box::new(stdout),
    })
}

fn dispatch(cli: Cli, stdin: &mut dyn Read, stdout: &mut dyn Write) -> CliResult<i32> {
    match cli.command {
        Command::Feasibility { config } => {
            let cfg: LensConfig = read_config(&config, stdin)?;
            let rep = cmd_feasibility(&cfg)?;
            emit(&rep, None, stdout)?;
            Ok(feasibility_exit_code(rep.feasible))
        }
        Command::Design { config, out, report, solve } => {
            let cfg: LensConfig = read_config(&config, stdin)?;
            let rep = cmd_design(&cfg, &solve, &out, report.as_deref())?;
            if report.is_none() {
                emit(&rep, None, stdout)?;
            }
            Ok(if rep.verification.pass { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
        Command::Verify { config, input, report } => {
            let cfg: LensConfig = read_config(&config, stdin)?;
            let rep = cmd_verify(&cfg, &input)?;
            emit(&rep, report.as_deref(), stdout)?;
            Ok(if rep.pass { EXIT_OK } else { EXIT_VERIFY_FAILED })
        }
        Command::Sweep { config, out } => {
            let cfg: SweepConfig = read_config(&config, stdin)?;
            let mut w = output(out.as_deref(), stdout)?;
            cmd_sweep(&cfg, &mut w)?;
            w.flush().map_err(|e| CliError::io(Path::new("<output>"), e))?;
            Ok(EXIT_OK)
        }
        Command::CollimatedGap { config, out } => {
            let cfg: GapConfig = read_config(&config, stdin)?;
            cmd_collimated_gap(&cfg, output(out.as_deref(), stdout)?)?;
            Ok(EXIT_OK)
        }
    }
}

/// Parses `args` (including the program name), runs the command and returns the exit code.
/// Diagnostics go to `stderr`.
pub fn run<I, T>(args: I, stdin: &mut dyn Read, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = write!(stderr, "{}", e.render());
            // clap's own code 2 would collide with the Boundary status
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match dispatch(cli, stdin, stdout) {
        Ok(code) => code,
        Err(e) => {
            let _ = writeln!(stderr, "error: {e}");
            e.exit_code()
        }
    }
}
