use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use ecp_core::analysis::{sweep, to_csv, Grid, SweepSpec};
use ecp_core::dsl::{self, ExecOptions};
use ecp_core::optics::with_flipped_bs_sign;
use ecp_core::verify::{all_passed, render, verify, VerifyOptions};
use ecp_core::{
    run, vbs_schedule, Accounting, DetectorModel, Engine, EntanglementParams, Error, PolarizationParams,
    ProtocolReport, ProtocolSpec, RunConfig, VbsSchedule,
};

const SEED_ENV: &str = "ECP_SEED";
const DEFAULT_SEED: &str = "2024";

#[derive(Parser)]
#[command(name = "ecp", version, about = "Simulate heralded single-photon entanglement concentration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one protocol and write its report.
    Run(RunArgs),
    /// Sweep P_total over an |alpha|^2 grid and emit CSV.
    Sweep(SweepArgs),
    /// Check the engine against closed forms, the oracle and the circuit files.
    Verify(VerifyArgs),
    /// Execute a circuit file.
    Exec(ExecArgs),
    /// Print a circuit file in canonical form.
    Fmt(FmtArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum ProtocolArg {
    Ecp1,
    Ecp2,
}

#[derive(Clone, Copy, ValueEnum)]
enum AccountingArg {
    Branch,
    Joint,
}

impl From<AccountingArg> for Accounting {
    fn from(a: AccountingArg) -> Self {
        match a {
            AccountingArg::Branch => Accounting::PaperBranch,
            AccountingArg::Joint => Accounting::JointCoherent,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum EngineArg {
    Exact,
    Mc,
}

#[derive(Clone, Copy, ValueEnum)]
enum DetectorArg {
    Analytic,
    Bernoulli,
}

#[derive(Clone, Copy, ValueEnum)]
enum Fault {
    BsSign,
}

#[derive(Args)]
struct EngineOpts {
    #[arg(long, value_enum, default_value = "exact")]
    engine: EngineArg,
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, env = SEED_ENV, default_value = DEFAULT_SEED)]
    seed: u64,
}

impl EngineOpts {
    fn engine(&self) -> Engine {
        match self.engine {
            EngineArg::Exact => Engine::Exact,
            EngineArg::Mc => Engine::MonteCarlo {
                trials: self.trials,
                seed: self.seed,
            },
        }
    }
}

#[derive(Args)]
struct DetectorOpts {
    #[arg(long, default_value_t = 1.0)]
    eta: f64,
    #[arg(long, value_enum, default_value = "analytic")]
    detector: DetectorArg,
    /// Click exponent m for the analytic model; defaults to the accounting's herald count.
    #[arg(long)]
    clicks: Option<u32>,
}

impl DetectorOpts {
    fn model(&self, accounting: Accounting) -> DetectorModel {
        match self.detector {
            DetectorArg::Analytic => {
                DetectorModel::analytic(self.eta, self.clicks.unwrap_or_else(|| accounting.default_clicks()))
            }
            DetectorArg::Bernoulli => DetectorModel::bernoulli(self.eta),
        }
    }
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_enum)]
    protocol: ProtocolArg,
    #[arg(long)]
    alpha_sq: f64,
    /// Omit to run the polarization-free reference.
    #[arg(long)]
    gamma_sq: Option<f64>,
    #[arg(long, requires = "t2", conflicts_with = "rounds")]
    t1: Option<f64>,
    #[arg(long, requires = "t1", conflicts_with = "rounds")]
    t2: Option<f64>,
    #[arg(long)]
    rounds: Option<usize>,
    #[arg(long, value_enum, default_value = "branch")]
    accounting: AccountingArg,
    #[command(flatten)]
    engine: EngineOpts,
    #[command(flatten)]
    detector: DetectorOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SweepArgs {
    #[arg(long, default_value = "0.05:0.95:0.05")]
    grid: String,
    #[arg(long, default_value_t = 0.8)]
    eta: f64,
    #[arg(long, value_delimiter = ',', default_value = "1,3,5")]
    ks: Vec<usize>,
    #[command(flatten)]
    engine: EngineOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct VerifyArgs {
    #[arg(long, default_value_t = 1e-12)]
    tolerance: f64,
    /// Monte Carlo trials for the sweep check.
    #[arg(long, default_value_t = 100_000)]
    trials: u64,
    #[arg(long, env = SEED_ENV, default_value = DEFAULT_SEED)]
    seed: u64,
    #[arg(long, value_enum, hide = true)]
    inject_fault: Option<Fault>,
}

#[derive(Args)]
struct ExecArgs {
    file: PathBuf,
    /// Parameter binding, e.g. `--set alpha_sq=0.6`. Unbound t1/t2 default to alpha_sq.
    #[arg(long = "set", value_parser = parse_binding)]
    bindings: Vec<(String, f64)>,
    #[arg(long, default_value_t = 1)]
    rounds: usize,
    #[arg(long, value_enum, default_value = "branch")]
    accounting: AccountingArg,
    #[command(flatten)]
    engine: EngineOpts,
    #[command(flatten)]
    detector: DetectorOpts,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct FmtArgs {
    file: PathBuf,
    /// Rewrite the file in place.
    #[arg(long)]
    write: bool,
}

fn parse_binding(s: &str) -> Result<(String, f64), String> {
    let (k, v) = s.split_once('=').ok_or_else(|| format!("`{s}` is not name=value"))?;
    let v = v.trim().parse::<f64>().map_err(|e| format!("`{v}`: {e}"))?;
    Ok((k.trim().to_string(), v))
}

enum Failure {
    Verify,
    Parse(String),
    Args(String),
    Io(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Verify => 1,
            Failure::Parse(_) => 2,
            Failure::Args(_) => 3,
            Failure::Io(_) => 4,
        }
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Parse { .. } => Failure::Parse(e.to_string()),
            _ => Failure::Args(e.to_string()),
        }
    }
}

fn read(path: &Path) -> Result<String, Failure> {
    fs::read_to_string(path).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn write(path: &Path, text: &str) -> Result<(), Failure> {
    fs::write(path, text).map_err(|e| Failure::Io(format!("{}: {e}", path.display())))
}

fn emit(out: Option<&Path>, text: &str) -> Result<(), Failure> {
    match out {
        Some(p) => write(p, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn summarize(report: &ProtocolReport, out: Option<&Path>) -> Result<(), Failure> {
    match out {
        Some(path) => {
            write(path, &report.to_json())?;
            println!("p_total {}", report.p_total);
            if let Some(s) = report.stderr {
                println!("stderr {s}");
            }
            for (name, c) in &report.paper_comparison {
                println!(
                    "{name}: closed form {} simulated {} delta {}",
                    c.paper_value, c.simulated_value, c.delta
                );
            }
            Ok(())
        }
        None => emit(None, &report.to_json()),
    }
}

fn cmd_run(a: RunArgs) -> Result<(), Failure> {
    let e = EntanglementParams::from_alpha_sq(a.alpha_sq)?;
    let p = a.gamma_sq.map(PolarizationParams::from_gamma_sq).transpose()?;
    let protocol = match a.protocol {
        ProtocolArg::Ecp1 => {
            if a.rounds.is_some() {
                return Err(Failure::Args("--rounds applies to ecp2 only".into()));
            }
            ProtocolSpec::Ecp1 {
                t1: a.t1.unwrap_or(a.alpha_sq),
                t2: a.t2.unwrap_or(a.alpha_sq),
            }
        }
        ProtocolArg::Ecp2 => match (a.t1, a.t2) {
            (Some(t1), Some(t2)) => ProtocolSpec::Ecp2 {
                schedule: VbsSchedule::constant(t1, t2, 1)?,
                rounds: 1,
            },
            _ => {
                let rounds = a.rounds.unwrap_or(1);
                ProtocolSpec::Ecp2 {
                    schedule: vbs_schedule(&e, rounds)?,
                    rounds,
                }
            }
        },
    };
    let accounting = a.accounting.into();
    let config = RunConfig {
        protocol,
        accounting,
        model: a.detector.model(accounting),
        engine: a.engine.engine(),
    };
    let report = run(&e, p.as_ref(), &config)?;
    summarize(&report, a.out.as_deref())
}

fn cmd_sweep(a: SweepArgs) -> Result<(), Failure> {
    let grid: Grid = a.grid.parse()?;
    let rows = sweep(&SweepSpec {
        grid,
        eta_p: a.eta,
        ks: a.ks,
        engine: a.engine.engine(),
    })?;
    emit(a.out.as_deref(), &to_csv(&rows))
}

fn cmd_verify(a: VerifyArgs) -> Result<(), Failure> {
    if a.tolerance.is_nan() || a.tolerance < 0.0 {
        return Err(Failure::Args(format!("tolerance {} must be non-negative", a.tolerance)));
    }
    let opts = VerifyOptions {
        tolerance: a.tolerance,
        mc_trials: a.trials,
        seed: a.seed,
    };
    let lines = match a.inject_fault {
        Some(Fault::BsSign) => with_flipped_bs_sign(|| verify(&opts)),
        None => verify(&opts),
    };
    print!("{}", render(&lines));
    if all_passed(&lines) {
        Ok(())
    } else {
        Err(Failure::Verify)
    }
}

fn cmd_exec(a: ExecArgs) -> Result<(), Failure> {
    let doc = dsl::parse(&read(&a.file)?)?;
    let mut binds: BTreeMap<String, f64> = a.bindings.into_iter().collect();
    if let Some(&a2) = binds.get("alpha_sq") {
        for t in ["t1", "t2"] {
            if doc.params.iter().any(|p| p == t) {
                binds.entry(t.to_string()).or_insert(a2);
            }
        }
    }
    let accounting = a.accounting.into();
    let report = dsl::execute(
        &doc,
        &binds,
        &ExecOptions {
            accounting,
            model: a.detector.model(accounting),
            engine: a.engine.engine(),
            rounds: a.rounds,
        },
    )?;
    summarize(&report, a.out.as_deref())
}

fn cmd_fmt(a: FmtArgs) -> Result<(), Failure> {
    let doc = dsl::parse(&read(&a.file)?)?;
    let text = dsl::serialize(&doc);
    if a.write {
        write(&a.file, &text)
    } else {
        emit(None, &text)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(3) } else { ExitCode::SUCCESS };
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(a),
        Command::Sweep(a) => cmd_sweep(a),
        Command::Verify(a) => cmd_verify(a),
        Command::Exec(a) => cmd_exec(a),
        Command::Fmt(a) => cmd_fmt(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            match &f {
                Failure::Verify => eprintln!("verification failed"),
                Failure::Parse(m) | Failure::Args(m) | Failure::Io(m) => eprintln!("error: {m}"),
            }
            ExitCode::from(f.code())
        }
    }
}
