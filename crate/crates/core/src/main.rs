use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use entdecay::environment::{EnvironmentKind, PropagatorMethod};
use entdecay::harness::{
    cmd_concurrence, cmd_simulate, cmd_sweep, cmd_validate, exit_code, write_text, Command, RunSpec, StateChoice,
};
use entdecay::{Error, Result};

#[derive(Parser)]
#[command(name = "entdecay", version, about = "Multipartite concurrence of N-qubit states under local decoherence")]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Concurrence trajectory of one state in one environment (CSV + JSON sidecar).
    Simulate(Opts),
    /// Fitted decay rates over a range of sizes, states and environments.
    Sweep(Opts),
    /// Concurrence of a single built-in or file-provided state.
    Concurrence(Opts),
    /// Oracle self-checks.
    Validate(Opts),
}

#[derive(Clone, Copy, ValueEnum)]
enum StateArg {
    Ghz,
    W,
    File,
}

#[derive(Clone, Copy, ValueEnum)]
enum EnvArg {
    #[value(name = "zero-t")]
    ZeroT,
    #[value(name = "infinite-t")]
    InfiniteT,
    Dephasing,
}

#[derive(Clone, Copy, ValueEnum)]
enum MethodArg {
    Exact,
    Rk4,
}

#[derive(Args, Clone)]
struct Opts {
    /// Read the whole run specification from a JSON file (a sidecar works too).
    #[arg(long, conflicts_with_all = ["state", "n", "n_max", "env", "rate", "dt", "t_max", "method", "restarts", "seed"])]
    spec: Option<PathBuf>,
    /// Initial state; sweeps accept a comma-separated list.
    #[arg(long, value_enum, value_delimiter = ',')]
    state: Vec<StateArg>,
    /// Input file for `--state file`.
    #[arg(long)]
    state_file: Option<PathBuf>,
    /// Number of qubits (lower end of a sweep range).
    #[arg(long)]
    n: Option<usize>,
    /// Upper end of a sweep range.
    #[arg(long)]
    n_max: Option<usize>,
    /// Environment; sweeps accept a comma-separated list.
    #[arg(long, value_enum, value_delimiter = ',')]
    env: Vec<EnvArg>,
    /// Reservoir rate Γ.
    #[arg(long)]
    rate: Option<f64>,
    /// Integration step (default 0.01/Γ).
    #[arg(long)]
    dt: Option<f64>,
    /// Final time (default 5/Γ).
    #[arg(long)]
    t_max: Option<f64>,
    /// Evaluate the concurrence every this many steps.
    #[arg(long)]
    sample_every: Option<usize>,
    #[arg(long, value_enum)]
    method: Option<MethodArg>,
    /// Random starts of the roof estimator.
    #[arg(long)]
    restarts: Option<usize>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output file (stdout when absent).
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Opts {
    fn into_spec(self, command: Command) -> Result<RunSpec> {
        if let Some(path) = &self.spec {
            let mut spec = RunSpec::load(path)?;
            if spec.command != command {
                return Err(Error::Usage(format!(
                    "{} holds a {:?} run, not {:?}",
                    path.display(),
                    spec.command,
                    command
                )));
            }
            if self.out.is_some() {
                spec.out = self.out;
            }
            return Ok(spec);
        }
        let base = RunSpec { command, ..RunSpec::default() };
        let state = if self.state.is_empty() {
            base.state
        } else {
            self.state
                .iter()
                .map(|s| match s {
                    StateArg::Ghz => StateChoice::Ghz,
                    StateArg::W => StateChoice::W,
                    StateArg::File => StateChoice::File,
                })
                .collect()
        };
        let env = if self.env.is_empty() {
            base.env
        } else {
            self.env
                .iter()
                .map(|e| match e {
                    EnvArg::ZeroT => EnvironmentKind::ZeroTemperature,
                    EnvArg::InfiniteT => EnvironmentKind::InfiniteTemperature,
                    EnvArg::Dephasing => EnvironmentKind::Dephasing,
                })
                .collect()
        };
        Ok(RunSpec {
            state,
            state_file: self.state_file,
            n: self.n.unwrap_or(base.n),
            n_max: self.n_max,
            env,
            rate: self.rate.unwrap_or(base.rate),
            method: match self.method {
                Some(MethodArg::Rk4) => PropagatorMethod::RungeKutta4,
                Some(MethodArg::Exact) | None => PropagatorMethod::ExactChannel,
            },
            dt: self.dt,
            t_max: self.t_max,
            sample_every: self.sample_every.unwrap_or(base.sample_every),
            restarts: self.restarts,
            max_iters: self.max_iters.unwrap_or(base.max_iters),
            seed: self.seed.unwrap_or(base.seed),
            out: self.out,
            ..base
        })
    }
}

fn emit(spec: &RunSpec, text: &str) -> Result<()> {
    match &spec.out {
        Some(path) => write_text(path, text),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

/// `run.csv` → `run.json`; a `.json` output gets `.sidecar.json` instead.
fn sidecar_path(out: &std::path::Path) -> PathBuf {
    let candidate = out.with_extension("json");
    if candidate == out {
        out.with_extension("sidecar.json")
    } else {
        candidate
    }
}

/// Returns whether the command's own checks passed.
fn run(cli: Cli) -> Result<bool> {
    match cli.command {
        Cmd::Simulate(opts) => {
            let spec = opts.into_spec(Command::Simulate)?;
            let out = cmd_simulate(&spec)?;
            emit(&spec, &out.csv)?;
            if let Some(path) = &spec.out {
                write_text(&sidecar_path(path), &out.sidecar)?;
            }
            Ok(true)
        }
        Cmd::Sweep(opts) => {
            let spec = opts.into_spec(Command::Sweep)?;
            let (rows, csv) = cmd_sweep(&spec)?;
            emit(&spec, &csv)?;
            for r in rows.iter().filter(|r| r.flagged) {
                eprintln!("flagged: n={} {} {} (r² {:?})", r.n.get(), r.family, r.environment, r.r_squared);
            }
            Ok(rows.iter().all(|r| !r.flagged))
        }
        Cmd::Concurrence(opts) => {
            let spec = opts.into_spec(Command::Concurrence)?;
            let (_, json) = cmd_concurrence(&spec)?;
            emit(&spec, &json)?;
            Ok(true)
        }
        Cmd::Validate(opts) => {
            let spec = opts.into_spec(Command::Validate)?;
            let (report, ok) = cmd_validate(&spec)?;
            emit(&spec, &report)?;
            Ok(ok)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("entdecay: {e}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
