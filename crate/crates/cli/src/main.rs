//! `ftscert` command-line front end.
//!
//! Human-readable output goes to stdout, diagnostics to stderr, and every
//! run ends by writing one JSON [`RunReport`] line to stderr (or to the file
//! named by `--report`).

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use ftscert::certify::{
    certify, max_valid_level, settling_bound, Certificate, CertifyConfig,
};
use ftscert::exprparse::{parse_problem, ProblemSpec};
use ftscert::sdpsolve::SolverMetrics;
use ftscert::simulate::{
    integrate, sublevel_grid, validate_batch, write_csv, StepControl, Termination, DEFAULT_THRESHOLD,
};
use ftscert::Error;

#[derive(Parser)]
#[command(name = "ftscert", version, about = "Finite-time stability certificates via SoS programming")]
struct Cli {
    /// Write the run report here instead of standard error.
    #[arg(long, global = true)]
    report: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Search for a certificate and write it as JSON.
    Certify(CertifyArgs),
    /// Evaluate the settling-time bound of a certificate.
    Bound(BoundArgs),
    /// Integrate the system and report the settling time.
    Simulate(SimulateArgs),
    /// Compare certified bounds against simulation.
    Validate(ValidateArgs),
    /// Compute the largest validated sublevel value.
    Sublevel(SublevelArgs),
}

#[derive(Args)]
struct CertifyArgs {
    problem: PathBuf,
    #[arg(long)]
    k: Option<f64>,
    #[arg(long, num_args = 2, value_names = ["LO", "HI"])]
    mu_bracket: Option<Vec<f64>>,
    #[arg(long)]
    deg_v: Option<u32>,
    #[arg(long)]
    deg_mult: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    q: Option<Vec<u32>>,
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<u32>>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BoundArgs {
    cert: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    z0: Vec<f64>,
}

#[derive(Args)]
struct SimulateArgs {
    problem: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
    z0: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_THRESHOLD)]
    threshold: f64,
    #[arg(long, default_value_t = 100.0)]
    horizon: f64,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Args)]
struct ValidateArgs {
    cert: PathBuf,
    /// Problem file holding the vector field.
    #[arg(long)]
    problem: PathBuf,
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true, conflicts_with = "grid")]
    z0: Option<Vec<f64>>,
    /// Points per axis of a grid inside the validated sublevel set.
    #[arg(long)]
    grid: Option<usize>,
    /// Relative slack granted to the simulated settling time.
    #[arg(long, default_value_t = 0.01)]
    slack: f64,
}

#[derive(Args)]
struct SublevelArgs {
    cert: PathBuf,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Serialize, Default)]
struct RunReport {
    command: Vec<String>,
    inputs_digest: BTreeMap<String, String>,
    outcome: String,
    certificate: Option<String>,
    failure: Option<String>,
    timings: BTreeMap<String, f64>,
    solver: Option<SolverMetrics>,
}

struct Run {
    report: RunReport,
    clock: Instant,
}

impl Run {
    fn stage(&mut self, name: &str) {
        let now = Instant::now();
        self.report
            .timings
            .insert(name.to_string(), now.duration_since(self.clock).as_secs_f64());
        self.clock = now;
    }

    fn read(&mut self, path: &Path) -> Result<String, Error> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(std::io::Error::new(e.kind(), format!("{}: {e}", path.display()))))?;
        let digest = Sha256::digest(text.as_bytes());
        let hex: String = digest.iter().map(|b| format!("{b:02x}")).collect();
        self.report.inputs_digest.insert(path.display().to_string(), hex);
        Ok(text)
    }
}

/// Failure carrying its exit code.
struct Fail(u8, String);

impl From<Error> for Fail {
    fn from(e: Error) -> Self {
        let code = if matches!(e, Error::NoCertificate(_)) { 2 } else { 1 };
        Fail(code, e.to_string())
    }
}

fn threads() -> usize {
    std::env::var("FTSCERT_THREADS")
        .ok()
        .and_then(|v| v.parse().ok())
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn load_problem(run: &mut Run, path: &Path) -> Result<ProblemSpec, Fail> {
    let text = run.read(path)?;
    Ok(parse_problem(&text)?)
}

fn load_cert(run: &mut Run, path: &Path) -> Result<Certificate, Fail> {
    let text = run.read(path)?;
    Ok(Certificate::from_json(&text)?)
}

fn check_dim(z0: &[f64], n: usize) -> Result<(), Fail> {
    if z0.len() != n {
        return Err(Fail(1, format!("--z0 has {} entries, the system has {n} states", z0.len())));
    }
    Ok(())
}

fn cmd_certify(run: &mut Run, a: &CertifyArgs) -> Result<(), Fail> {
    let mut spec = load_problem(run, &a.problem)?;
    let o = &mut spec.options;
    if let Some(k) = a.k {
        o.k = k;
    }
    if let Some(b) = &a.mu_bracket {
        o.mu_bracket = (b[0], b[1]);
    }
    if let Some(dv) = a.deg_v {
        o.deg_v = dv;
    }
    if a.deg_mult.is_some() {
        o.deg_mult = a.deg_mult;
    }
    if a.q.is_some() {
        o.q.clone_from(&a.q);
    }
    if a.lambda.is_some() {
        o.lambda.clone_from(&a.lambda);
    }
    spec.validate()?;
    run.stage("parse");

    let mut cfg = CertifyConfig {
        compute_level: false,
        ..CertifyConfig::default()
    };
    let mut cert = certify(&spec, &cfg)?;
    run.report.solver = Some(cert.provenance.solver.clone());
    run.stage("certify");
    cfg.compute_level = true;
    cert.c_star = Some(max_valid_level(&cert, &cfg)?);
    run.stage("sublevel");

    let out = a.out.clone().unwrap_or_else(|| a.problem.with_extension("cert.json"));
    fs::write(&out, cert.to_json()).map_err(Error::from)?;
    run.stage("write");
    run.report.certificate = Some(out.display().to_string());
    println!("certified: mu* = {}, mu~ = {}, gamma = {}", cert.mu, cert.mu_tilde, cert.gamma);
    println!("V = {}", cert.v.display_with(&cert.state_names));
    println!("c* = {}", cert.c_star.unwrap_or(f64::NAN));
    println!("certificate written to {}", out.display());
    Ok(())
}

fn cmd_bound(run: &mut Run, a: &BoundArgs) -> Result<(), Fail> {
    let cert = load_cert(run, &a.cert)?;
    check_dim(&a.z0, cert.nvars())?;
    let b = settling_bound(&cert, &a.z0);
    let vt = cert.v_tilde.eval(&a.z0);
    let inside = cert.c_star.is_some_and(|c| vt <= c);
    run.stage("bound");
    println!("bound = {b:.4}, in validated region: {}", if inside { "yes" } else { "no" });
    Ok(())
}

fn cmd_simulate(run: &mut Run, a: &SimulateArgs) -> Result<(), Fail> {
    let spec = load_problem(run, &a.problem)?;
    check_dim(&a.z0, spec.nvars())?;
    if !(a.threshold > 0.0 && a.horizon > 0.0) {
        return Err(Fail(1, "threshold and horizon must be positive".into()));
    }
    let rec = integrate(&spec.f, &a.z0, a.threshold, a.horizon, &StepControl::default());
    run.stage("simulate");
    if let Some(path) = &a.csv {
        let mut file = fs::File::create(path).map_err(Error::from)?;
        write_csv(&mut file, &rec, &spec.state_names, None).map_err(Error::from)?;
        run.stage("csv");
    }
    match (rec.terminated_by, rec.settle_time) {
        (Termination::Settled, Some(t)) => println!("settled at t = {t:.6}"),
        (Termination::Horizon, _) => println!("not settled by the horizon t = {}", a.horizon),
        _ => println!("trajectory blew up at t = {}", rec.times.last().copied().unwrap_or(0.0)),
    }
    Ok(())
}

fn cmd_validate(run: &mut Run, a: &ValidateArgs) -> Result<(), Fail> {
    let cert = load_cert(run, &a.cert)?;
    let spec = load_problem(run, &a.problem)?;
    if spec.nvars() != cert.nvars() {
        return Err(Fail(1, "certificate and problem disagree on the state dimension".into()));
    }
    let cfg = CertifyConfig::default();
    let points = match (&a.z0, a.grid) {
        (Some(z), _) => {
            check_dim(z, cert.nvars())?;
            vec![z.clone()]
        }
        (None, Some(m)) => {
            let level = match cert.c_star {
                Some(c) => c,
                None => max_valid_level(&cert, &cfg)?,
            };
            sublevel_grid(&cert, level, m)
        }
        (None, None) => return Err(Fail(1, "give --z0 or --grid".into())),
    };
    let reports = validate_batch(&cert, &spec.f, &points, a.slack, &cfg, threads())?;
    run.stage("validate");
    println!("{:>28} {:>10} {:>10} {:>9} {:>6}", "z0", "bound", "simulated", "in region", "sound");
    let mut all_ok = true;
    for r in &reports {
        let z: Vec<String> = r.z0.iter().map(|v| format!("{v:.4}")).collect();
        let sim = r.simulated.map_or("-".to_string(), |s| format!("{s:.4}"));
        println!(
            "{:>28} {:>10.4} {:>10} {:>9} {:>6}",
            z.join(","),
            r.bound,
            sim,
            if r.in_region { "yes" } else { "no" },
            if r.sound { "yes" } else { "no" }
        );
        all_ok &= r.sound || !r.in_region;
    }
    if all_ok {
        Ok(())
    } else {
        Err(Fail(2, "simulated settling time exceeds the bound inside the validated region".into()))
    }
}

fn cmd_sublevel(run: &mut Run, a: &SublevelArgs) -> Result<(), Fail> {
    let cert = load_cert(run, &a.cert)?;
    let cfg = CertifyConfig {
        level_tol: a.tol,
        level_steps: 200,
        ..CertifyConfig::default()
    };
    let c = max_valid_level(&cert, &cfg)?;
    run.stage("sublevel");
    println!("c* = {c}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let mut run = Run {
        report: RunReport {
            command: std::env::args().collect(),
            ..RunReport::default()
        },
        clock: Instant::now(),
    };
    let result = match &cli.command {
        Command::Certify(a) => cmd_certify(&mut run, a),
        Command::Bound(a) => cmd_bound(&mut run, a),
        Command::Simulate(a) => cmd_simulate(&mut run, a),
        Command::Validate(a) => cmd_validate(&mut run, a),
        Command::Sublevel(a) => cmd_sublevel(&mut run, a),
    };
    let code = match result {
        Ok(()) => {
            run.report.outcome = "ok".into();
            0
        }
        Err(Fail(code, msg)) => {
            eprintln!("error: {msg}");
            run.report.outcome = if code == 2 { "rejected" } else { "error" }.into();
            run.report.failure = Some(msg);
            code
        }
    };
    let json = serde_json::to_string(&run.report).expect("report serializes");
    match &cli.report {
        Some(path) => {
            if let Err(e) = fs::write(path, json + "\n") {
                eprintln!("error: cannot write report: {e}");
            }
        }
        None => eprintln!("{json}"),
    }
    ExitCode::from(code)
}
