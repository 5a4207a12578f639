//! Command-line front end.
//!
//! Subcommands: `simulate` runs a scenario file and exports the trace as
//! CSV, `mas build` constructs and caches an admissible set, `bench` times
//! the governor step under a chosen solver, and `analyze` prints gain, norm,
//! and decoupling diagnostics for a system file.
//!
//! Exit codes: 0 on success, 1 for validation problems (bad arguments,
//! malformed or missing input files, dimension errors), 2 for runtime
//! failures (infeasible governor steps, unstable systems, failed builds).
//! When `--out` is omitted, outputs land in the directory named by the
//! `REFGOV_OUT_DIR` environment variable (falling back to the working
//! directory).

use super::bench::benchmark;
use super::run::run_scenario;
use super::scenario::{Scenario, SolverSpec, SystemSpec};
use crate::decouple::{design_tf_diagonal, fw_identity_pair, small_gain_certificate};
use crate::error::{Error, Result};
use crate::mas::{build_mas, DEFAULT_EPSILON, DEFAULT_T_MAX};
use crate::polytope::BoxSet;
use crate::sys::{condition_number, hinf_norm, l1_impulse_norm, singular_values};
use clap::{Parser, Subcommand};
use num_complex::Complex64;
use std::ffi::OsString;
use std::fmt::Write as _;
use std::path::PathBuf;

/// Environment variable naming the default output directory.
pub const OUT_DIR_ENV: &str = "REFGOV_OUT_DIR";

#[derive(Parser)]
#[command(
    name = "refgov",
    version,
    about = "Constraint-management toolkit: run governor scenarios, build admissible sets, benchmark solvers, analyze systems"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and export the trace as CSV.
    Simulate {
        /// Scenario file (JSON with a schema tag).
        scenario: PathBuf,
        /// Output CSV path; defaults to `<scenario id>.csv` in the default
        /// output directory.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Admissible-set operations.
    Mas {
        #[command(subcommand)]
        cmd: MasCmd,
    },
    /// Benchmark the governor step of a scenario.
    Bench {
        /// Scenario file (JSON with a schema tag).
        scenario: PathBuf,
        /// Solver: explicit, implicit_lp, or implicit_qp.
        #[arg(long, default_value = "explicit")]
        solver: String,
        /// Steps per repetition (at least 1000).
        #[arg(long, default_value_t = 1000)]
        steps: usize,
        /// Measured repetitions after the discarded warm-up run.
        #[arg(long, default_value_t = 5)]
        repetitions: usize,
    },
    /// Print gain, norm, and decoupling diagnostics for a system file.
    Analyze {
        /// System definition file (JSON, transfer-function or state-space).
        system: PathBuf,
    },
}

#[derive(Subcommand)]
enum MasCmd {
    /// Build the admissible set of a system under box output constraints
    /// and write it to a cache file.
    Build {
        /// System definition file (JSON, transfer-function or state-space).
        system: PathBuf,
        /// Output bounds as `lo:hi,lo:hi,...`, one pair per output; leave a
        /// side empty (or write `inf`/`-inf`) for an unbounded side.
        #[arg(long)]
        constraints: String,
        /// Output path; defaults to `<system stem>.mas` in the default
        /// output directory.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Steady-state tightening margin in (0, 1).
        #[arg(long, default_value_t = DEFAULT_EPSILON)]
        epsilon: f64,
    },
}

/// Runs the command line and returns the process exit code.
pub fn cli<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    match dispatch(cli.cmd) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

/// 1 for problems with the inputs, 2 for failures while computing.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Validation(_) | Error::Parse(_) | Error::DimensionMismatch(_) | Error::Json(_) => 1,
        Error::Io(io) if io.kind() == std::io::ErrorKind::NotFound => 1,
        _ => 2,
    }
}

fn dispatch(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Simulate { scenario, out } => {
            let s = Scenario::load(&scenario)?;
            let trace = run_scenario(&s)?;
            let path = resolve_out(out, &format!("{}.csv", s.id));
            trace.export(&path)?;
            println!(
                "wrote {} rows (header + {} steps) to {}",
                trace.len() + 1,
                trace.len(),
                path.display()
            );
            println!("max violation: {:.3e}", trace.summary.max_violation);
            println!(
                "steady input gap: {:.3e}",
                trace.summary.steady_input_gap
            );
            println!(
                "mean governor step: {:.3e} s",
                trace.summary.governor_time.mean.as_secs_f64()
            );
            Ok(())
        }
        Cmd::Mas {
            cmd:
                MasCmd::Build {
                    system,
                    constraints,
                    out,
                    epsilon,
                },
        } => {
            let spec = SystemSpec::load(&system)?;
            let built = spec.build_at("system")?;
            let y = parse_bounds(&constraints, built.ss.n_outputs())?;
            let mas = build_mas(&built.ss, &y, epsilon, DEFAULT_T_MAX)?;
            let stem = system
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| "system".into());
            let path = resolve_out(out, &format!("{stem}.mas"));
            std::fs::write(&path, mas.to_text())?;
            println!(
                "admissible set: {} rows over {} states + {} inputs, settled at t* = {}",
                mas.polytope().n_rows(),
                mas.n_states(),
                mas.n_inputs(),
                mas.t_star()
            );
            println!("wrote {}", path.display());
            Ok(())
        }
        Cmd::Bench {
            scenario,
            solver,
            steps,
            repetitions,
        } => {
            let s = Scenario::load(&scenario)?;
            let solver: SolverSpec = solver.parse().map_err(Error::Parse)?;
            let report = benchmark(&s, solver, steps, repetitions)?;
            println!("{report}");
            Ok(())
        }
        Cmd::Analyze { system } => {
            let spec = SystemSpec::load(&system)?;
            print!("{}", analyze_report(&spec)?);
            Ok(())
        }
    }
}

/// Formats the `analyze` diagnostics for a system definition: dimensions,
/// stability, DC gain with its singular values and condition number, the
/// H-infinity and L1 impulse-response norms, and — for square systems — the
/// DC singular values of the diagonal decoupling filter together with the
/// small-gain certificate of the state-feedback decoupling.
pub fn analyze_report(spec: &SystemSpec) -> Result<String> {
    let built = spec.build_at("system")?;
    let sys = &built.ss;
    let mut out = String::new();
    writeln!(
        out,
        "system: {} states, {} inputs, {} outputs",
        sys.n_states(),
        sys.n_inputs(),
        sys.n_outputs()
    )
    .unwrap();
    writeln!(out, "spectral radius: {:.6}", sys.spectral_radius()).unwrap();
    if !sys.is_stable() {
        writeln!(
            out,
            "system is unstable; gain and norm diagnostics need a stable system"
        )
        .unwrap();
        return Ok(out);
    }
    let g0 = sys.dc_gain()?;
    writeln!(out, "dc gain:").unwrap();
    for i in 0..g0.nrows() {
        let row: Vec<String> = (0..g0.ncols()).map(|j| format!("{:10.4}", g0[(i, j)])).collect();
        writeln!(out, "  [{}]", row.join(" ")).unwrap();
    }
    let sv = singular_values(&g0);
    let sv_text: Vec<String> = sv.iter().map(|s| format!("{s:.4}")).collect();
    writeln!(out, "dc singular values: {}", sv_text.join(", ")).unwrap();
    writeln!(out, "dc condition number: {:.4}", condition_number(&g0)).unwrap();
    match hinf_norm(sys) {
        Ok(h) => writeln!(out, "hinf norm: {h:.4}").unwrap(),
        Err(e) => writeln!(out, "hinf norm: unavailable ({e})").unwrap(),
    }
    match l1_impulse_norm(sys) {
        Ok(l) => writeln!(out, "l1 impulse norm: {l:.4}").unwrap(),
        Err(e) => writeln!(out, "l1 impulse norm: unavailable ({e})").unwrap(),
    }
    if sys.n_inputs() == sys.n_outputs() {
        match built.main_tf().and_then(|g| design_tf_diagonal(&g)) {
            Ok(dec) => {
                // DC behaviour of the forward filter: its largest/smallest
                // singular values bound how the filter amplifies references
                // at steady state.
                let f0 = dec.f.eval(Complex64::new(1.0, 0.0)).map(|c| c.re);
                let sv = singular_values(&f0);
                let s_max = sv.first().copied().unwrap_or(0.0);
                let s_min = sv.last().copied().unwrap_or(0.0);
                writeln!(out, "filter sigma_max: {s_max:.4}").unwrap();
                writeln!(out, "filter sigma_min: {s_min:.4}").unwrap();
                if s_min > 0.0 {
                    writeln!(out, "filter gamma: {:.4}", s_max / s_min).unwrap();
                }
            }
            Err(e) => writeln!(out, "diagonal filter: unavailable ({e})").unwrap(),
        }
        match fw_identity_pair(sys).and_then(|dec| small_gain_certificate(sys, &dec, 1e-12)) {
            Ok(gain) => {
                let verdict = if gain < 1.0 { "certified" } else { "not conclusive" };
                writeln!(out, "small-gain certificate: {gain:.4} ({verdict})").unwrap();
            }
            Err(e) => writeln!(out, "small-gain certificate: unavailable ({e})").unwrap(),
        }
    }
    Ok(out)
}

/// Parses `lo:hi,lo:hi,...` into a box; an empty side is unbounded.
fn parse_bounds(text: &str, n_outputs: usize) -> Result<BoxSet> {
    let mut bounds = Vec::new();
    for (k, pair) in text.split(',').enumerate() {
        let (l, h) = pair.split_once(':').ok_or_else(|| {
            Error::Parse(format!("constraints[{k}]: expected lo:hi, got {pair:?}"))
        })?;
        let lo = parse_side(l.trim(), k, f64::NEG_INFINITY)?;
        let hi = parse_side(h.trim(), k, f64::INFINITY)?;
        bounds.push((lo, hi));
    }
    if bounds.len() != n_outputs {
        return Err(Error::Validation(format!(
            "constraints: {} bound pairs supplied for {} outputs",
            bounds.len(),
            n_outputs
        )));
    }
    BoxSet::from_bounds(&bounds)
}

fn parse_side(text: &str, index: usize, unbounded: f64) -> Result<f64> {
    if text.is_empty() {
        return Ok(unbounded);
    }
    let value: f64 = text
        .parse()
        .map_err(|_| Error::Parse(format!("constraints[{index}]: bad number {text:?}")))?;
    if value.is_nan() {
        return Err(Error::Parse(format!(
            "constraints[{index}]: bound must not be NaN"
        )));
    }
    Ok(value)
}

/// Explicit `--out` wins; otherwise the default name lands in the directory
/// named by `REFGOV_OUT_DIR`, or the working directory.
fn resolve_out(out: Option<PathBuf>, default_name: &str) -> PathBuf {
    match out {
        Some(p) => p,
        None => std::env::var_os(OUT_DIR_ENV)
            .map(PathBuf::from)
            .unwrap_or_else(|| PathBuf::from("."))
            .join(default_name),
    }
}
