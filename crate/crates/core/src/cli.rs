//! Command-line front end.
//!
//! Every command produces one artifact: a CSV table for `curves`, a JSON
//! document otherwise. Artifacts echo the resolved parameters and carry a
//! SHA-256 of their content, and are byte-identical across runs and worker
//! counts.

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bounds::{
    default_t_grid, figure_curves_parallel, log_grid, loss_exponent, optimum, ChannelSpec,
    CurveTable, Figure,
};
use crate::error::Error;
use crate::fock::{default_dim, simulate_p2p, simulate_three_party, ArmParams};
use crate::search::{search, SearchConfig};
use crate::yields::{
    verify_yield_contract, ConvexProfile, DistillableEntanglement, FnYield, SingletFractionYield,
    YieldFunction,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERIC: i32 = 3;

const TOOLKIT: &str = "setgen";

#[derive(Debug, Parser)]
#[command(name = "setgen", version, about = "Entanglement generation bounds and simulations over lossy channels")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Write the artifact here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Tabulate the figure curves as CSV.
    Curves(CurvesArgs),
    /// Maximise Y(u^gamma, 0)(1 - u) over the overlap u.
    Optimize(OptimizeArgs),
    /// Fock-space simulation of a protocol.
    Simulate(SimulateArgs),
    /// Search separable protocols and compare with the analytic bound.
    VerifyBound(VerifyArgs),
    /// Check a yield function against the contract.
    CheckYield(CheckArgs),
}

#[derive(Debug, Args)]
struct CurvesArgs {
    /// fig3 (point-to-point) or fig6 (three-party, equal arms).
    #[arg(long)]
    figure: String,
    /// Evaluate at a single transmittance.
    #[arg(long, conflicts_with_all = ["t_min", "t_max", "t_points"])]
    t: Option<f64>,
    /// Lower end of the log-spaced grid.
    #[arg(long)]
    t_min: Option<f64>,
    /// Upper end of the log-spaced grid.
    #[arg(long)]
    t_max: Option<f64>,
    /// Number of grid points.
    #[arg(long)]
    t_points: Option<usize>,
}

#[derive(Debug, Args)]
struct ChannelArgs {
    /// End-to-end transmittance (split evenly across two arms for three-party runs).
    #[arg(long, conflicts_with_all = ["ta", "tb"])]
    transmittance: Option<f64>,
    /// Transmittance of arm a.
    #[arg(long, requires = "tb")]
    ta: Option<f64>,
    /// Transmittance of arm b.
    #[arg(long, requires = "ta")]
    tb: Option<f64>,
}

#[derive(Debug, Args)]
struct OptimizeArgs {
    /// ed, linear:C, power:K, pwl:B0:S0,B1:S1,... or sqrt.
    #[arg(long = "yield")]
    yield_spec: String,
    #[command(flatten)]
    channel: ChannelArgs,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    /// p2p or three-party.
    #[arg(long)]
    protocol: String,
    /// Coherent pulse amplitude.
    #[arg(long)]
    alpha: f64,
    /// Pulse amplitude of the second arm (three-party only; defaults to alpha).
    #[arg(long)]
    beta: Option<f64>,
    /// Conditional rotation angle.
    #[arg(long)]
    theta: f64,
    #[command(flatten)]
    channel: ChannelArgs,
    /// Source population of |0>.
    #[arg(long, default_value_t = 0.5)]
    q0: f64,
    /// Fock truncation (chosen from the pulse amplitude when omitted).
    #[arg(long)]
    dim: Option<usize>,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    /// ed, linear:C, power:K, pwl:B0:S0,B1:S1,... or sqrt.
    #[arg(long = "yield")]
    yield_spec: String,
    /// Received overlap s = |<u1|u0>|.
    #[arg(long)]
    overlap: f64,
    /// Environment overlap v = |<v1|v0>|, which dephases the output.
    #[arg(long)]
    dephase: f64,
    /// Success outcomes per protocol.
    #[arg(long, default_value_t = 4)]
    outcomes: usize,
    #[arg(long, default_value_t = 64)]
    restarts: usize,
    #[arg(long, default_value_t = 2000)]
    iterations: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// ed, linear:C, power:K, pwl:B0:S0,B1:S1,... or sqrt.
    #[arg(long = "yield")]
    yield_spec: String,
    /// Points per axis of the (z, x) grid.
    #[arg(long, default_value_t = 41)]
    grid: usize,
    /// Random convexity segments.
    #[arg(long, default_value_t = 2000)]
    segments: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

/// Yield selected on the command line.
#[derive(Debug, Clone, PartialEq)]
pub enum YieldSpec {
    Ed,
    Profile(ConvexProfile),
    /// `sqrt(z)`: concave, kept as a known contract failure.
    Sqrt,
}

impl YieldSpec {
    /// Accepts `ed`, `linear:C`, `power:K`, `pwl:B0:S0,B1:S1,...` and `sqrt`.
    pub fn parse(s: &str) -> Result<Self, String> {
        let num = |v: &str| {
            v.parse::<f64>()
                .map_err(|_| format!("invalid number `{v}` in yield `{s}`"))
        };
        let profile = |r: crate::Result<ConvexProfile>| r.map(YieldSpec::Profile).map_err(|e| e.to_string());
        match s.split_once(':') {
            None if s == "ed" => Ok(YieldSpec::Ed),
            None if s == "sqrt" => Ok(YieldSpec::Sqrt),
            Some(("linear", c)) => profile(ConvexProfile::linear(num(c)?)),
            Some(("power", k)) => profile(ConvexProfile::power(num(k)?)),
            Some(("pwl", rest)) => {
                let mut bps = Vec::new();
                let mut slopes = Vec::new();
                for part in rest.split(',') {
                    let (b, sl) = part
                        .split_once(':')
                        .ok_or_else(|| format!("pwl segment `{part}` must be B:S"))?;
                    bps.push(num(b)?);
                    slopes.push(num(sl)?);
                }
                profile(ConvexProfile::piecewise_linear(bps, slopes))
            }
            _ => Err(format!(
                "unknown yield `{s}` (expected ed, linear:C, power:K, pwl:B:S,... or sqrt)"
            )),
        }
    }

    pub fn build(&self) -> Box<dyn YieldFunction> {
        match self {
            YieldSpec::Ed => Box::new(DistillableEntanglement),
            YieldSpec::Profile(p) => Box::new(SingletFractionYield(p.clone())),
            YieldSpec::Sqrt => Box::new(FnYield::new("sqrt", |z: f64, _x: f64| z.max(0.0).sqrt())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Format {
    Csv,
    Json,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunArtifact {
    pub path: Option<PathBuf>,
    pub format: Format,
    pub bytes: Vec<u8>,
    pub content_sha256: String,
}

#[derive(Debug)]
pub enum CliError {
    /// Help or version text requested; not an error.
    Info(String),
    Usage(String),
    Numeric(Error),
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Info(_) => EXIT_OK,
            CliError::Usage(_) => EXIT_USAGE,
            CliError::Numeric(_) | CliError::Io(_) => EXIT_NUMERIC,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Info(s) => write!(f, "{s}"),
            CliError::Usage(s) => write!(f, "error: {s}"),
            CliError::Numeric(e) => write!(f, "numerical failure: {e}"),
            CliError::Io(s) => write!(f, "i/o error: {s}"),
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Numeric(e)
    }
}

fn usage(msg: impl Into<String>) -> CliError {
    CliError::Usage(msg.into())
}

fn check_unit_open(flag: &str, v: f64) -> Result<(), CliError> {
    if v.is_finite() && v > 0.0 && v < 1.0 {
        Ok(())
    } else {
        Err(usage(format!("--{flag} must be in (0, 1), got {v}")))
    }
}

fn check_min(flag: &str, v: usize, min: usize) -> Result<(), CliError> {
    if v >= min {
        Ok(())
    } else {
        Err(usage(format!("--{flag} must be >= {min}, got {v}")))
    }
}

/// `%.12g`: 12 significant digits, trailing zeros trimmed.
pub fn format_g12(x: f64) -> String {
    if x == 0.0 {
        return "0".into();
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.11e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    let trim = |s: String| {
        if s.contains('.') {
            s.trim_end_matches('0').trim_end_matches('.').to_string()
        } else {
            s
        }
    };
    if !(-4..12).contains(&exp) {
        let sign = if exp < 0 { '-' } else { '+' };
        format!("{}e{}{:02}", trim(mantissa.to_string()), sign, exp.abs())
    } else {
        let decimals = (11 - exp).max(0) as usize;
        trim(format!("{:.*}", decimals, x))
    }
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn json_artifact(command: &str, params: Value, result: Value) -> (Vec<u8>, String) {
    let mut doc = json!({
        "toolkit": { "name": TOOLKIT, "version": env!("CARGO_PKG_VERSION") },
        "command": command,
        "params": params,
        "result": result,
    });
    let canonical = serde_json::to_vec(&doc).expect("json");
    let hash = sha256_hex(&canonical);
    doc["content_sha256"] = Value::String(hash.clone());
    let mut bytes = serde_json::to_vec_pretty(&doc).expect("json");
    bytes.push(b'\n');
    (bytes, hash)
}

fn csv_artifact(params: &Value, table: &CurveTable) -> (Vec<u8>, String) {
    let mut body = String::from("T,curve,value\n");
    for r in &table.rows {
        body.push_str(&format!("{},{},{}\n", format_g12(r.t), r.curve, format_g12(r.value)));
    }
    let hash = sha256_hex(body.as_bytes());
    let mut out = format!("# {TOOLKIT} {}\n# command: curves\n", env!("CARGO_PKG_VERSION"));
    out.push_str(&format!("# params: {}\n", serde_json::to_string(params).expect("json")));
    out.push_str(&format!("# content_sha256: {hash}\n"));
    out.push_str(&body);
    (out.into_bytes(), hash)
}

fn to_value<T: Serialize>(v: &T) -> Value {
    serde_json::to_value(v).expect("serializable")
}

fn resolve_channel(c: &ChannelArgs) -> Result<ChannelSpec, CliError> {
    match (c.transmittance, c.ta, c.tb) {
        (Some(t), None, None) => {
            check_unit_open("transmittance", t)?;
            Ok(ChannelSpec::point_to_point(t)?)
        }
        (None, Some(ta), Some(tb)) => {
            check_unit_open("ta", ta)?;
            check_unit_open("tb", tb)?;
            Ok(ChannelSpec::three_party(ta, tb)?)
        }
        _ => Err(usage("give either --transmittance or both --ta and --tb")),
    }
}

fn with_pool<T: Send>(jobs: usize, f: impl FnOnce() -> T + Send) -> Result<T, CliError> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| CliError::Io(e.to_string()))?;
    Ok(pool.install(f))
}

fn run_curves(a: &CurvesArgs, jobs: usize) -> Result<(Vec<u8>, String, Format), CliError> {
    let figure: Figure = a.figure.parse().map_err(|e: String| usage(format!("--figure: {e}")))?;
    let grid = match a.t {
        Some(t) => {
            check_unit_open("t", t)?;
            vec![t]
        }
        None if a.t_min.is_none() && a.t_max.is_none() && a.t_points.is_none() => default_t_grid(),
        None => {
            let (lo, hi, n) = (a.t_min.unwrap_or(0.01), a.t_max.unwrap_or(0.99), a.t_points.unwrap_or(200));
            check_unit_open("t-min", lo)?;
            check_unit_open("t-max", hi)?;
            if lo > hi {
                return Err(usage(format!("--t-min {lo} exceeds --t-max {hi}")));
            }
            check_min("t-points", n, 1)?;
            log_grid(lo, hi, n)
        }
    };
    let params = json!({
        "figure": a.figure,
        "t_grid": grid.iter().map(|t| format_g12(*t)).collect::<Vec<_>>(),
    });
    let table = figure_curves_parallel(figure, &grid, jobs)?;
    let (bytes, hash) = csv_artifact(&params, &table);
    Ok((bytes, hash, Format::Csv))
}

fn run_optimize(a: &OptimizeArgs) -> Result<(Vec<u8>, String, Format), CliError> {
    let spec = YieldSpec::parse(&a.yield_spec).map_err(|e| usage(format!("--yield: {e}")))?;
    let channel = resolve_channel(&a.channel)?;
    let g = loss_exponent(&channel)?;
    let y = spec.build();
    let res = optimum(&y, g);
    let params = json!({ "yield": a.yield_spec, "channel": to_value(&channel) });
    let result = json!({
        "gamma": g.value(),
        "u_star": res.u_star,
        "value": res.value,
        "fidelity": (1.0 + res.u_star.powf(g.value())) / 2.0,
        "success_probability": 1.0 - res.u_star,
        "evaluations": res.evaluations,
    });
    let (bytes, hash) = json_artifact("optimize", params, result);
    Ok((bytes, hash, Format::Json))
}

fn run_simulate(a: &SimulateArgs) -> Result<(Vec<u8>, String, Format), CliError> {
    let three = match a.protocol.as_str() {
        "p2p" => false,
        "three-party" => true,
        other => return Err(usage(format!("--protocol: unknown protocol `{other}` (p2p or three-party)"))),
    };
    let beta = a.beta.unwrap_or(a.alpha);
    for (flag, v) in [("alpha", a.alpha), ("beta", beta)] {
        if !(v.is_finite() && v >= 0.0) {
            return Err(usage(format!("--{flag} must be >= 0, got {v}")));
        }
    }
    if a.beta.is_some() && !three {
        return Err(usage("--beta only applies to --protocol three-party"));
    }
    if !a.theta.is_finite() {
        return Err(usage("--theta must be finite"));
    }
    check_unit_open("q0", a.q0)?;
    let dim = a.dim.unwrap_or_else(|| default_dim(a.alpha.max(beta)));
    check_min("dim", dim, 1)?;
    let (ta, tb) = match (three, resolve_channel(&a.channel)?) {
        (false, ChannelSpec::PointToPoint { t }) => (t, t),
        (false, ChannelSpec::ThreeParty { .. }) => {
            return Err(usage("--ta/--tb only apply to --protocol three-party"))
        }
        // End-to-end transmittance split evenly over the two arms.
        (true, ChannelSpec::PointToPoint { t }) => (t.sqrt(), t.sqrt()),
        (true, ChannelSpec::ThreeParty { ta, tb }) => (ta, tb),
    };
    let arm = |alpha: f64, t: f64| ArmParams {
        q0: a.q0,
        phases: (0.0, 0.0),
        alpha,
        theta: a.theta,
        t,
        dim,
    };
    let report = if three {
        simulate_three_party(&arm(a.alpha, ta), &arm(beta, tb))?
    } else {
        simulate_p2p(&arm(a.alpha, ta))?
    };
    let mut params = json!({
        "protocol": a.protocol,
        "alpha": a.alpha,
        "theta": a.theta,
        "q0": a.q0,
        "dim": dim,
    });
    if three {
        params["beta"] = json!(beta);
        params["ta"] = json!(ta);
        params["tb"] = json!(tb);
    } else {
        params["transmittance"] = json!(ta);
    }
    let (bytes, hash) = json_artifact("simulate", params, to_value(&report));
    Ok((bytes, hash, Format::Json))
}

fn run_verify(a: &VerifyArgs, jobs: usize) -> Result<(Vec<u8>, String, Format), CliError> {
    let spec = YieldSpec::parse(&a.yield_spec).map_err(|e| usage(format!("--yield: {e}")))?;
    check_unit_open("overlap", a.overlap)?;
    check_unit_open("dephase", a.dephase)?;
    check_min("outcomes", a.outcomes, 1)?;
    check_min("restarts", a.restarts, 1)?;
    let cfg = SearchConfig {
        outcomes: a.outcomes,
        restarts: a.restarts,
        iterations: a.iterations,
        seed: a.seed,
        ..SearchConfig::default()
    };
    let y = spec.build();
    let res = with_pool(jobs, || search(&y, a.overlap, a.dephase, &cfg))??;
    let params = json!({
        "yield": a.yield_spec,
        "overlap": a.overlap,
        "dephase": a.dephase,
        "config": to_value(&cfg),
    });
    let (bytes, hash) = json_artifact("verify-bound", params, to_value(&res));
    Ok((bytes, hash, Format::Json))
}

fn run_check(a: &CheckArgs) -> Result<(Vec<u8>, String, Format), CliError> {
    let spec = YieldSpec::parse(&a.yield_spec).map_err(|e| usage(format!("--yield: {e}")))?;
    check_min("grid", a.grid, 8)?;
    check_min("segments", a.segments, 100)?;
    let y = spec.build();
    let report = verify_yield_contract(&y, a.grid, a.segments, a.seed)?;
    let params = json!({
        "yield": a.yield_spec,
        "grid": a.grid,
        "segments": a.segments,
        "seed": a.seed,
    });
    let mut result = to_value(&report);
    result["passed"] = json!(report.all_ok());
    let (bytes, hash) = json_artifact("check-yield", params, result);
    Ok((bytes, hash, Format::Json))
}

/// Parses `argv` (program name first) and builds the artifact without
/// writing it anywhere.
pub fn run<I, T>(argv: I) -> Result<RunArtifact, CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(argv).map_err(|e| {
        use clap::error::ErrorKind;
        match e.kind() {
            ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => CliError::Info(e.to_string()),
            _ => CliError::Usage(e.to_string().trim_start_matches("error: ").trim_end().to_string()),
        }
    })?;
    check_min("jobs", cli.jobs, 1)?;
    let (bytes, content_sha256, format) = match &cli.command {
        Command::Curves(a) => run_curves(a, cli.jobs)?,
        Command::Optimize(a) => run_optimize(a)?,
        Command::Simulate(a) => run_simulate(a)?,
        Command::VerifyBound(a) => run_verify(a, cli.jobs)?,
        Command::CheckYield(a) => run_check(a)?,
    };
    Ok(RunArtifact {
        path: cli.out.clone(),
        format,
        bytes,
        content_sha256,
    })
}

/// Runs the command and writes its artifact to `--out` or stdout.
/// Returns the process exit code together with the artifact.
pub fn execute<I, T>(argv: I) -> (i32, Option<RunArtifact>)
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    match run(argv) {
        Ok(art) => {
            let written = match &art.path {
                Some(p) => std::fs::write(p, &art.bytes).map_err(|e| format!("{}: {e}", p.display())),
                None => std::io::stdout().write_all(&art.bytes).map_err(|e| e.to_string()),
            };
            match written {
                Ok(()) => (EXIT_OK, Some(art)),
                Err(e) => {
                    eprintln!("{}", CliError::Io(e));
                    (EXIT_NUMERIC, None)
                }
            }
        }
        Err(CliError::Info(text)) => {
            print!("{text}");
            (EXIT_OK, None)
        }
        Err(e) => {
            eprintln!("{e}");
            (e.exit_code(), None)
        }
    }
}
