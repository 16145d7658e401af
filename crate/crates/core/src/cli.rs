//! Command-line front end.
//!
//! Every file written gets a sibling `<file>.manifest.json` recording the
//! arguments, seed, tool version, SHA-256 digests of inputs and outputs, and
//! the wall-clock duration. Exit codes: 0 success, 1 invalid input, 2 runtime
//! failure.

use std::collections::BTreeMap;
use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::asymptotics::{self, IntegrationConfig};
use crate::channel::{apply_erasure, observed_instance, transmit, BitVector, Signal};
use crate::ensemble::{self, degree_stats, Ensemble, SparseCode};
use crate::error::{Error, Result};
use crate::experiments::{self, BatchConfig, GridRange};
use crate::oracle;
use crate::ucp::{self, UcpOptions};

/// `println!` that ignores a closed stdout, e.g. when piped into `head`.
macro_rules! out {
    ($($arg:tt)*) => {{
        use std::io::Write;
        let _ = writeln!(std::io::stdout(), $($arg)*);
    }};
}

/// Environment variable capping the worker threads.
pub const THREADS_ENV: &str = "SPARSEMUD_THREADS";

#[derive(Parser, Debug)]
#[command(name = "sparsemud", version, about = "Sparse-code multiuser detection by unit clause propagation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Sample a spreading code
    Gen(GenArgs),
    /// Compute the chip signal for a bit vector, optionally erasing chips
    Transmit(TransmitArgs),
    /// Run the unit-clause decoder
    Decode(DecodeArgs),
    /// Exact reference computations on small instances
    #[command(subcommand)]
    Oracle(OracleCommand),
    /// Integrate the mean-field equations
    Ode(OdeArgs),
    /// Monte Carlo phase-diagram sweep
    Sweep(SweepArgs),
    /// Mean-field against Monte Carlo end of the deterministic phase
    Compare(CompareArgs),
}

#[derive(Clone, Copy, Debug, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
enum EnsembleArg {
    Poisson,
    Regular,
}

impl From<EnsembleArg> for Ensemble {
    fn from(e: EnsembleArg) -> Self {
        match e {
            EnsembleArg::Poisson => Ensemble::Poisson,
            EnsembleArg::Regular => Ensemble::Regular,
        }
    }
}

#[derive(Args, Debug, Serialize)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "regular")]
    ensemble: EnsembleArg,
    /// Number of users K
    #[arg(long)]
    users: usize,
    /// Load beta = K/M
    #[arg(long)]
    load: f64,
    /// Entries per user C (mean for the Poissonian ensemble)
    #[arg(long, default_value_t = 3.0)]
    degree: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct TransmitArgs {
    #[arg(long)]
    code: PathBuf,
    /// "random" or a bits JSON file
    #[arg(long, default_value = "random")]
    bits: String,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Fraction of chips to erase
    #[arg(long, default_value_t = 0.0)]
    erase: f64,
    #[arg(long)]
    out: PathBuf,
    /// Where to save the transmitted bits (useful with random bits)
    #[arg(long)]
    bits_out: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct DecodeArgs {
    #[arg(long)]
    code: PathBuf,
    #[arg(long)]
    signal: PathBuf,
    /// Transmitted bits, for bit error rates
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Per-decimation trace CSV
    #[arg(long)]
    trace: Option<PathBuf>,
    /// Result JSON file (always printed to stdout)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum OracleCommand {
    /// Print z_l as exact fractions, closed form and enumeration
    Ztable(ZtableArgs),
    /// Check the decoder's forced decisions against exhaustive enumeration
    Verify(VerifyArgs),
}

#[derive(Args, Debug, Serialize)]
struct ZtableArgs {
    #[arg(long, default_value_t = 12)]
    max_l: usize,
}

#[derive(Args, Debug, Serialize)]
struct VerifyArgs {
    #[arg(long)]
    code: PathBuf,
    #[arg(long)]
    signal: PathBuf,
    #[arg(long)]
    truth: Option<PathBuf>,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug, Serialize)]
struct OdeArgs {
    #[arg(long, value_enum, default_value = "regular")]
    ensemble: EnsembleArg,
    #[arg(long, default_value_t = 3.0)]
    degree: f64,
    #[arg(long)]
    load: f64,
    /// Longest tracked chip; default max(ceil(L + 10 sqrt(L)), 30)
    #[arg(long)]
    lmax: Option<usize>,
    #[arg(long, default_value_t = 1e-4)]
    dx: f64,
    #[arg(long, default_value_t = 1e-10)]
    root_tol: f64,
    /// Trajectory CSV
    #[arg(long)]
    out: Option<PathBuf>,
    /// Result JSON file (always printed to stdout)
    #[arg(long)]
    result: Option<PathBuf>,
}

#[derive(Args, Debug, Serialize)]
struct SweepArgs {
    #[arg(long, value_enum, default_value = "regular")]
    ensemble: EnsembleArg,
    /// C as VALUE or START:STOP:STEP
    #[arg(long, default_value = "3")]
    degree: String,
    /// beta as VALUE or START:STOP:STEP
    #[arg(long, default_value = "0.5:3.0:0.05")]
    load: String,
    #[arg(long, default_value_t = 10000)]
    users: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    erase: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Serialize)]
struct CompareArgs {
    #[arg(long, default_value_t = 3.0)]
    degree: f64,
    /// beta as VALUE or START:STOP:STEP
    #[arg(long, default_value = "1.0:2.5:0.25")]
    load: String,
    #[arg(long, default_value_t = 10000)]
    users: usize,
    #[arg(long, default_value_t = 100)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

/// Provenance record written next to each output file.
#[derive(Serialize)]
struct RunManifest<'a> {
    subcommand: &'a str,
    argv: &'a [String],
    params: serde_json::Value,
    seed: Option<u64>,
    version: &'static str,
    inputs: BTreeMap<String, String>,
    outputs: BTreeMap<String, String>,
    duration_secs: f64,
}

/// Tracks files read and written during one invocation.
struct Session {
    subcommand: &'static str,
    argv: Vec<String>,
    params: serde_json::Value,
    seed: Option<u64>,
    started: Instant,
    inputs: BTreeMap<String, String>,
    outputs: Vec<(PathBuf, String)>,
}

fn digest(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn manifest_path(output: &Path) -> PathBuf {
    let mut name = output.as_os_str().to_owned();
    name.push(".manifest.json");
    PathBuf::from(name)
}

impl Session {
    fn read(&mut self, path: &Path) -> Result<Vec<u8>> {
        let bytes = std::fs::read(path).map_err(|source| Error::Input {
            path: path.to_path_buf(),
            source,
        })?;
        self.inputs.insert(path.display().to_string(), digest(&bytes));
        Ok(bytes)
    }

    fn write(&mut self, path: &Path, bytes: &[u8]) -> Result<()> {
        std::fs::write(path, bytes).map_err(|source| Error::Output {
            path: path.to_path_buf(),
            source,
        })?;
        self.outputs.push((path.to_path_buf(), digest(bytes)));
        Ok(())
    }

    /// Writes one manifest per output, each listing all outputs.
    fn finish(self) -> Result<()> {
        let outputs: BTreeMap<String, String> = self
            .outputs
            .iter()
            .map(|(p, d)| (p.display().to_string(), d.clone()))
            .collect();
        let manifest = RunManifest {
            subcommand: self.subcommand,
            argv: &self.argv,
            params: self.params,
            seed: self.seed,
            version: env!("CARGO_PKG_VERSION"),
            inputs: self.inputs,
            outputs,
            duration_secs: self.started.elapsed().as_secs_f64(),
        };
        let text = serde_json::to_string_pretty(&manifest).expect("manifest serializes");
        for (path, _) in &self.outputs {
            let m = manifest_path(path);
            std::fs::write(&m, &text).map_err(|source| Error::Output { path: m, source })?;
        }
        Ok(())
    }
}

fn format_error(path: &Path, message: String) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        message,
    }
}

fn read_code(s: &mut Session, path: &Path) -> Result<SparseCode> {
    let bytes = s.read(path)?;
    SparseCode::read_json(&bytes[..]).map_err(|m| format_error(path, m))
}

fn read_signal(s: &mut Session, path: &Path) -> Result<Signal> {
    let bytes = s.read(path)?;
    Signal::read_json(&bytes[..]).map_err(|m| format_error(path, m))
}

fn read_bits(s: &mut Session, path: &Path) -> Result<BitVector> {
    let bytes = s.read(path)?;
    BitVector::read_json(&bytes[..]).map_err(|m| format_error(path, m))
}

fn json_bytes(f: impl FnOnce(&mut Vec<u8>) -> serde_json::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("serializing to memory");
    buf
}

fn csv_bytes(f: impl FnOnce(&mut Vec<u8>) -> csv::Result<()>) -> Vec<u8> {
    let mut buf = Vec::new();
    f(&mut buf).expect("writing CSV to memory");
    buf
}

fn cmd_gen(s: &mut Session, a: &GenArgs) -> Result<()> {
    let code = ensemble::sample(a.ensemble.into(), a.users, a.load, a.degree, a.seed)?;
    s.write(&a.out, code.to_json_string().as_bytes())?;
    let stats = degree_stats(&code);
    out!(
        "{}",
        serde_json::json!({
            "K": code.num_users(),
            "M": code.num_chips(),
            "entries": stats.num_entries,
            "mean_chip_degree": stats.mean_chip_degree,
            "mean_user_degree": stats.mean_user_degree,
        })
    );
    Ok(())
}

fn cmd_transmit(s: &mut Session, a: &TransmitArgs) -> Result<()> {
    let code = read_code(s, &a.code)?;
    let mut seeds = ChaCha8Rng::seed_from_u64(a.seed);
    let bits_seed: u64 = seeds.random();
    let erase_seed: u64 = seeds.random();
    let bits = if a.bits == "random" {
        BitVector::random(code.num_users(), bits_seed)
    } else {
        read_bits(s, Path::new(&a.bits))?
    };
    let signal = transmit(&code, &bits)?;
    let (_, signal) = apply_erasure(&code, &signal, a.erase, erase_seed)?;
    s.write(&a.out, &json_bytes(|b| signal.write_json(b)))?;
    if let Some(p) = &a.bits_out {
        s.write(p, &json_bytes(|b| bits.write_json(b)))?;
    }
    Ok(())
}

fn cmd_decode(s: &mut Session, a: &DecodeArgs) -> Result<()> {
    let code = read_code(s, &a.code)?;
    let signal = read_signal(s, &a.signal)?;
    let truth = a.truth.as_deref().map(|p| read_bits(s, p)).transpose()?;
    let (code, signal) = observed_instance(&code, &signal)?;
    let options = UcpOptions {
        seed: a.seed,
        record_trace: a.trace.is_some(),
    };
    let result = ucp::run_ucp_with(&code, &signal, truth.as_ref(), options)?;
    let json = result.to_json();
    out!("{json}");
    if let Some(p) = &a.out {
        s.write(p, json.as_bytes())?;
    }
    if let (Some(p), Some(rows)) = (&a.trace, &result.trace) {
        s.write(p, &csv_bytes(|b| ucp::write_trace_csv(rows, b)))?;
    }
    Ok(())
}

fn cmd_ztable(a: &ZtableArgs) -> Result<()> {
    if !(2..=16).contains(&a.max_l) {
        return Err(Error::invalid(format!("--max-l must lie in 2..=16, got {}", a.max_l)));
    }
    out!("l,z_closed_form,z_enumerated");
    for l in 2..=a.max_l {
        let closed = asymptotics::z_factor_exact(l)?;
        let counted = oracle::z_factor_oracle(l)?;
        out!("{l},{closed},{counted}");
    }
    Ok(())
}

fn cmd_verify(s: &mut Session, a: &VerifyArgs) -> Result<bool> {
    let code = read_code(s, &a.code)?;
    let signal = read_signal(s, &a.signal)?;
    let truth = a.truth.as_deref().map(|p| read_bits(s, p)).transpose()?;
    let (code, signal) = observed_instance(&code, &signal)?;
    let report = oracle::verify_deterministic_phase(&code, &signal, a.seed, truth.as_ref())?;
    match &report.failure {
        None => out!(
            "PASS solutions={} forced_steps={} status={}",
            report.num_solutions, report.forced_steps, report.status
        ),
        Some((step, why)) => out!("FAIL step={step}: {why}"),
    }
    Ok(report.passed())
}

fn cmd_ode(s: &mut Session, a: &OdeArgs) -> Result<()> {
    let config = IntegrationConfig {
        dx: a.dx,
        root_tol: a.root_tol,
        record: a.out.is_some(),
        ..IntegrationConfig::default()
    };
    let t = asymptotics::solve(a.ensemble.into(), a.load, a.degree, a.lmax, config)?;
    let json = t.result_json();
    out!("{json}");
    if let Some(p) = &a.out {
        s.write(p, &csv_bytes(|b| t.write_csv(b)))?;
    }
    if let Some(p) = &a.result {
        s.write(p, json.as_bytes())?;
    }
    Ok(())
}

fn cmd_sweep(s: &mut Session, a: &SweepArgs) -> Result<()> {
    let config = BatchConfig {
        ensemble: a.ensemble.into(),
        users: a.users,
        loads: a.load.parse()?,
        degrees: a.degree.parse()?,
        erasure: a.erase,
        samples: a.samples,
        seed: a.seed,
    };
    let diagram = experiments::sweep_phase_diagram(&config)?;
    s.write(&a.out, &csv_bytes(|b| experiments::write_stats_csv(&diagram.rows, b)))?;
    for o in &diagram.onsets {
        out!("{}", serde_json::to_string(o).expect("plain data"));
    }
    Ok(())
}

fn cmd_compare(s: &mut Session, a: &CompareArgs) -> Result<bool> {
    let loads: GridRange = a.load.parse()?;
    let report = experiments::compare_asymptotic_empirical(a.degree, loads, a.users, a.samples, a.seed)?;
    s.write(&a.out, &csv_bytes(|b| report.write_csv(b)))?;
    for r in &report.rows {
        out!(
            "beta={} ode={:.6} median={:.6} q1={:.6} q3={:.6} gap={:.6}",
            r.stats.load, r.ode_x_d, r.stats.x_d.median, r.stats.x_d.q1, r.stats.x_d.q3, r.gap
        );
    }
    for (a, b) in &report.jumps {
        out!("jump between beta={a} and beta={b}");
    }
    out!("{}", if report.pass { "PASS" } else { "FAIL" });
    Ok(report.pass)
}

fn configure_threads() -> Result<()> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::invalid(format!("{THREADS_ENV} must be a positive integer, got '{value}'")))?;
    // a pool may already exist when called repeatedly in one process
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn dispatch(cli: Cli, argv: Vec<String>) -> Result<i32> {
    configure_threads()?;
    let (subcommand, params, seed) = match &cli.command {
        Command::Gen(a) => ("gen", serde_json::to_value(a), Some(a.seed)),
        Command::Transmit(a) => ("transmit", serde_json::to_value(a), Some(a.seed)),
        Command::Decode(a) => ("decode", serde_json::to_value(a), Some(a.seed)),
        Command::Oracle(OracleCommand::Ztable(a)) => ("oracle ztable", serde_json::to_value(a), None),
        Command::Oracle(OracleCommand::Verify(a)) => ("oracle verify", serde_json::to_value(a), Some(a.seed)),
        Command::Ode(a) => ("ode", serde_json::to_value(a), None),
        Command::Sweep(a) => ("sweep", serde_json::to_value(a), Some(a.seed)),
        Command::Compare(a) => ("compare", serde_json::to_value(a), Some(a.seed)),
    };
    let mut session = Session {
        subcommand,
        argv,
        params: params.expect("arguments serialize"),
        seed,
        started: Instant::now(),
        inputs: BTreeMap::new(),
        outputs: Vec::new(),
    };
    let mut code = 0;
    match &cli.command {
        Command::Gen(a) => cmd_gen(&mut session, a)?,
        Command::Transmit(a) => cmd_transmit(&mut session, a)?,
        Command::Decode(a) => cmd_decode(&mut session, a)?,
        Command::Oracle(OracleCommand::Ztable(a)) => cmd_ztable(a)?,
        Command::Oracle(OracleCommand::Verify(a)) => {
            if !cmd_verify(&mut session, a)? {
                code = 2;
            }
        }
        Command::Ode(a) => cmd_ode(&mut session, a)?,
        Command::Sweep(a) => cmd_sweep(&mut session, a)?,
        Command::Compare(a) => {
            if !cmd_compare(&mut session, a)? {
                code = 2;
            }
        }
    }
    session.finish()?;
    Ok(code)
}

/// Parses `args` (program name first), runs the subcommand and returns the
/// process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let args: Vec<OsString> = args.into_iter().map(Into::into).collect();
    let argv = args.iter().map(|a| a.to_string_lossy().into_owned()).collect();
    let cli = match Cli::try_parse_from(&args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli, argv) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            if e.is_validation() {
                1
            } else {
                2
            }
        }
    }
}
