mod output;

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use cyclotrace::analytic::{
    exact_trace, format_float, lhs_geodesic, lhs_latticesum, AnalyticError, Method, TraceReport,
};
use cyclotrace::arith::{is_square, Discriminant};
use cyclotrace::bqf;
use cyclotrace::selftest;
use cyclotrace::special_forms::SpecialFormsError;

use output::{write_csv, write_json, write_text, Row};

const EXIT_MISMATCH: u8 = 1;
const EXIT_HYPOTHESIS: u8 = 2;
const EXIT_INPUT: u8 = 3;
const EXIT_CONVERGENCE: u8 = 4;

const DEFAULT_GEODESIC_TOL: f64 = 1e-6;
const DEFAULT_LATTICE_TOL: f64 = 1e-4;
// solvers aim this much tighter than the requested agreement
const SOLVER_MARGIN: f64 = 0.1;

#[derive(Parser)]
#[command(name = "cyclotrace", version, about = "Traces of cycle integrals of meromorphic modular forms")]
struct Cli {
    /// Worker threads (overrides CYCLOTRACE_THREADS)
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute one trace
    Trace(TraceArgs),
    /// Compare all applicable methods
    Verify(VerifyArgs),
    /// Tabulate traces over a range of discriminants
    Table(TableArgs),
    /// Run the built-in invariant suite
    Selftest,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MethodArg {
    Exact,
    Geodesic,
    Latticesum,
    All,
}

#[derive(Args)]
struct Target {
    #[arg(long, allow_negative_numbers = true)]
    k: i64,
    /// Negative discriminant of the CM class
    #[arg(long, default_value_t = -4, allow_negative_numbers = true)]
    d: i64,
}

#[derive(Args)]
struct Tolerances {
    /// Relative tolerance for the geodesic method (and `trace` in general)
    #[arg(long)]
    tol: Option<f64>,
    /// Relative tolerance for the lattice sum (default: the larger of --tol and 1e-4)
    #[arg(long)]
    lattice_tol: Option<f64>,
    /// Record wall-clock seconds instead of 0
    #[arg(long)]
    timing: bool,
}

#[derive(Args)]
struct TraceArgs {
    #[command(flatten)]
    target: Target,
    #[arg(long = "D", allow_negative_numbers = true)]
    big_d: i64,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    method: MethodArg,
    #[command(flatten)]
    tol: Tolerances,
    #[arg(long)]
    json: bool,
}

#[derive(Args)]
struct VerifyArgs {
    #[command(flatten)]
    target: Target,
    #[arg(long = "D", allow_negative_numbers = true)]
    big_d: i64,
    #[command(flatten)]
    tol: Tolerances,
}

#[derive(Args)]
struct TableArgs {
    #[command(flatten)]
    target: Target,
    #[arg(long = "Dmin", default_value_t = 1, allow_negative_numbers = true)]
    d_min: i64,
    #[arg(long = "Dmax", allow_negative_numbers = true)]
    d_max: i64,
    #[arg(long, value_enum, default_value_t = MethodArg::All)]
    method: MethodArg,
    #[command(flatten)]
    tol: Tolerances,
    /// Output file (default: standard output)
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    json: bool,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn input(message: impl Into<String>) -> Failure {
        Failure { code: EXIT_INPUT, message: message.into() }
    }
}

impl From<AnalyticError> for Failure {
    fn from(e: AnalyticError) -> Failure {
        let code = match &e {
            AnalyticError::HypothesisViolated { .. }
            | AnalyticError::PoleOnGeodesic(_)
            | AnalyticError::PoleAtZ(_)
            | AnalyticError::SpecialForms(SpecialFormsError::HypothesisViolated { .. }) => EXIT_HYPOTHESIS,
            AnalyticError::NoConvergence { .. } | AnalyticError::DivergentParameters { .. } => EXIT_CONVERGENCE,
            _ => EXIT_INPUT,
        };
        Failure { code, message: e.to_string() }
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Failure {
        Failure::input(e.to_string())
    }
}

impl From<csv::Error> for Failure {
    fn from(e: csv::Error) -> Failure {
        Failure::input(e.to_string())
    }
}

fn validate_target(t: &Target) -> Result<u32, Failure> {
    if t.k < 2 {
        return Err(Failure::input(format!("k = {} must be at least 2", t.k)));
    }
    bqf::principal_form(t.d).map_err(|_| Failure::input(format!("d = {} is not a negative discriminant", t.d)))?;
    u32::try_from(t.k).map_err(|_| Failure::input(format!("k = {} is too large", t.k)))
}

fn is_trace_disc(big_d: i64) -> bool {
    big_d > 0 && Discriminant::new(big_d).is_ok() && !is_square(big_d as u64)
}

fn validate_disc(big_d: i64) -> Result<(), Failure> {
    if is_trace_disc(big_d) {
        Ok(())
    } else {
        Err(Failure::input(format!("D = {big_d} is not a positive non-square discriminant")))
    }
}

fn exact_applies(k: u32, d: i64) -> bool {
    k % 2 == 0 && d == -4
}

fn methods(arg: MethodArg, k: u32, d: i64) -> Result<Vec<Method>, Failure> {
    Ok(match arg {
        MethodArg::Exact if !exact_applies(k, d) => {
            return Err(Failure::input("the exact method needs even k and d = -4"));
        }
        MethodArg::Exact => vec![Method::Exact],
        MethodArg::Geodesic => vec![Method::Geodesic],
        MethodArg::Latticesum => vec![Method::LatticeSum],
        MethodArg::All if exact_applies(k, d) => vec![Method::Exact, Method::Geodesic, Method::LatticeSum],
        MethodArg::All => vec![Method::Geodesic, Method::LatticeSum],
    })
}

fn tolerance(method: Method, tol: &Tolerances) -> f64 {
    match method {
        Method::Exact => 0.0,
        Method::Geodesic => tol.tol.unwrap_or(DEFAULT_GEODESIC_TOL),
        Method::LatticeSum => tol
            .lattice_tol
            .unwrap_or_else(|| tol.tol.unwrap_or(0.0).max(DEFAULT_LATTICE_TOL)),
    }
}

fn validate_tolerances(tol: &Tolerances) -> Result<(), Failure> {
    for t in [tol.tol, tol.lattice_tol].into_iter().flatten() {
        if !(t > 0.0 && t < 1.0) {
            return Err(Failure::input(format!("tolerance {t} must lie in (0, 1)")));
        }
    }
    Ok(())
}

fn run_method(method: Method, k: u32, big_d: i64, d: i64, tol: &Tolerances) -> Result<TraceReport, AnalyticError> {
    let solver_tol = tolerance(method, tol) * SOLVER_MARGIN;
    match method {
        Method::Exact => exact_trace(k, big_d, d),
        Method::Geodesic => lhs_geodesic(k, big_d, d, solver_tol),
        Method::LatticeSum => lhs_latticesum(k, big_d, d, solver_tol),
    }
}

fn cmd_trace(args: &TraceArgs) -> Result<u8, Failure> {
    let k = validate_target(&args.target)?;
    validate_disc(args.big_d)?;
    validate_tolerances(&args.tol)?;
    let d = args.target.d;
    let mut rows = Vec::new();
    for m in methods(args.method, k, d)? {
        let r = run_method(m, k, args.big_d, d, &args.tol)?;
        rows.push(Row::from_report(&r, args.tol.timing));
    }
    let stdout = io::stdout();
    if args.json {
        write_json(stdout.lock(), &rows)?;
    } else {
        write_text(stdout.lock(), &rows, args.tol.timing)?;
    }
    Ok(0)
}

fn cmd_verify(args: &VerifyArgs) -> Result<u8, Failure> {
    let k = validate_target(&args.target)?;
    validate_disc(args.big_d)?;
    validate_tolerances(&args.tol)?;
    let d = args.target.d;
    let list = methods(MethodArg::All, k, d)?;
    let reports: Vec<TraceReport> = list
        .iter()
        .map(|&m| run_method(m, k, args.big_d, d, &args.tol))
        .collect::<Result<_, _>>()?;

    let mut out = io::stdout().lock();
    writeln!(out, "{:<11} {:<22} {}", "method", "value", "error_estimate")?;
    for r in &reports {
        writeln!(out, "{:<11} {:<22} {}", r.method.name(), r.value.to_string(), format_float(r.error_estimate))?;
    }
    writeln!(out)?;
    writeln!(out, "{:<22} {:<20} {:<20} {}", "pair", "delta", "allowed", "ok")?;
    let reference = reports[0].value.to_f64();
    let mut all_ok = true;
    for (i, a) in reports.iter().enumerate() {
        for b in &reports[i + 1..] {
            let delta = (a.value.to_f64() - b.value.to_f64()).abs();
            let allowed = tolerance(a.method, &args.tol).max(tolerance(b.method, &args.tol)) * (1.0 + reference.abs());
            let ok = delta < allowed;
            all_ok &= ok;
            writeln!(
                out,
                "{:<22} {:<20} {:<20} {}",
                format!("{}-{}", b.method.name(), a.method.name()),
                format_float(delta),
                format_float(allowed),
                ok
            )?;
        }
    }
    Ok(if all_ok { 0 } else { EXIT_MISMATCH })
}

fn cmd_table(args: &TableArgs) -> Result<u8, Failure> {
    let k = validate_target(&args.target)?;
    validate_tolerances(&args.tol)?;
    let d = args.target.d;
    let list = methods(args.method, k, d)?;
    let mut sink: Box<dyn Write> = match &args.out {
        Some(path) => Box::new(BufWriter::new(
            File::create(path).map_err(|e| Failure::input(format!("cannot write {}: {e}", path.display())))?,
        )),
        None => Box::new(io::stdout().lock()),
    };

    let discs: Vec<i64> = (args.d_min.max(1)..=args.d_max).filter(|&x| is_trace_disc(x)).collect();
    let jobs: Vec<(i64, Method)> = discs.iter().flat_map(|&x| list.iter().map(move |&m| (x, m))).collect();
    let rows: Vec<Row> = jobs
        .par_iter()
        .map(|&(big_d, m)| match run_method(m, k, big_d, d, &args.tol) {
            Ok(r) => Ok(Row::from_report(&r, args.tol.timing)),
            Err(AnalyticError::HypothesisViolated { .. }) => Ok(Row::rejected(k, big_d, d, m)),
            Err(e) => Err(Failure::from(e)),
        })
        .collect::<Result<_, _>>()?;

    if args.json {
        write_json(&mut sink, &rows)?;
    } else {
        write_csv(&mut sink, &rows)?;
    }
    sink.flush()?;
    Ok(0)
}

fn cmd_selftest() -> Result<u8, Failure> {
    let mut out = io::stdout().lock();
    let mut failed = 0;
    let results = selftest::run_all();
    for r in &results {
        match &r.outcome {
            Ok(()) => writeln!(out, "PASS {}", r.name)?,
            Err(msg) => {
                failed += 1;
                writeln!(out, "FAIL {}: {msg}", r.name)?;
            }
        }
    }
    writeln!(out, "selftest: {} passed, {failed} failed", results.len() - failed)?;
    Ok(if failed == 0 { 0 } else { EXIT_MISMATCH })
}

fn configure_threads(flag: Option<usize>) -> Result<(), Failure> {
    let n = match flag {
        Some(n) => n,
        None => match std::env::var("CYCLOTRACE_THREADS") {
            Ok(v) => v.trim().parse().map_err(|_| Failure::input(format!("CYCLOTRACE_THREADS={v:?} is not a count")))?,
            Err(_) => 0,
        },
    };
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Failure::input(e.to_string()))
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_INPUT } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = configure_threads(cli.threads).and_then(|()| match &cli.command {
        Command::Trace(a) => cmd_trace(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Table(a) => cmd_table(a),
        Command::Selftest => cmd_selftest(),
    });
    match result {
        Ok(code) => ExitCode::from(code),
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
