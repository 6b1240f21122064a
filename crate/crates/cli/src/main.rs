//! `maplsim` command-line front end.
//!
//!   maplsim run    --config sc1.json --seed 7 --set cgl.mu1=0.5
//!   maplsim sweep  --config sc1.json --grid grid.json --out runs/sweep
//!   maplsim verify

mod sweep;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use maplsim::config::parse_assignment;
use maplsim::output::{embedding_csv, write_run};
use maplsim::{run_experiment_with, MaplError, RunConfig};
use serde_json::Value;

#[derive(Parser)]
#[command(name = "maplsim", version, about = "Decentralized personalized learning simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its artifacts.
    Run(RunArgs),
    /// Run the base configuration at every point of a parameter grid.
    Sweep {
        #[command(flatten)]
        run: RunArgs,
        /// JSON object mapping dotted keys to lists of values.
        #[arg(long)]
        grid: Option<PathBuf>,
    },
    /// Run the built-in oracle checks.
    Verify,
}

#[derive(Args, Clone)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// mapl, mapl_no_cgl or local
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    clients: Option<usize>,
    #[arg(long)]
    rounds: Option<usize>,
    /// Output directory (MAPLSIM_OUT takes precedence).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Worker threads; 1 runs clients serially.
    #[arg(long)]
    parallel: Option<usize>,
    /// Dotted override, e.g. `--set cgl.mu1=0.5`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

enum Failure {
    Config(Vec<String>),
    Run(String),
}

impl From<MaplError> for Failure {
    fn from(e: MaplError) -> Self {
        match e {
            MaplError::InvalidConfig(v) => Failure::Config(v),
            MaplError::Parse(m) => Failure::Config(vec![m]),
            other => Failure::Run(other.to_string()),
        }
    }
}

impl RunArgs {
    /// Overrides in increasing precedence: `--set`, then the named flags.
    fn overrides(&self) -> Result<Vec<(String, String)>, Failure> {
        let mut out = Vec::new();
        for s in &self.set {
            out.push(parse_assignment(s).map_err(|e| Failure::Config(vec![e.to_string()]))?);
        }
        let mut named = |k: &str, v: Option<String>| {
            if let Some(v) = v {
                out.push((k.to_string(), v));
            }
        };
        named("seed", self.seed.map(|v| v.to_string()));
        named("method", self.method.as_ref().map(|m| format!("\"{m}\"")));
        named("scenario.clients", self.clients.map(|v| v.to_string()));
        named("rounds", self.rounds.map(|v| v.to_string()));
        named("exec.parallel", self.parallel.map(|v| v.to_string()));
        let out_dir = output_dir(std::env::var_os("MAPLSIM_OUT").map(PathBuf::from), self.out.clone());
        named("exec.out_dir", out_dir.map(|p| Value::String(p.display().to_string()).to_string()));
        Ok(out)
    }

    fn file(&self) -> Result<Option<Value>, Failure> {
        let Some(path) = &self.config else {
            return Ok(None);
        };
        let text = fs::read_to_string(path)
            .map_err(|e| Failure::Config(vec![format!("{}: {e}", path.display())]))?;
        let v = serde_json::from_str(&text)
            .map_err(|e| Failure::Config(vec![format!("{}: {e}", path.display())]))?;
        Ok(Some(v))
    }

    fn resolve(&self, extra: &[(String, String)]) -> Result<RunConfig, Failure> {
        let mut ov = extra.to_vec();
        ov.extend(self.overrides()?);
        let cfg = RunConfig::resolve(self.file()?.as_ref(), &ov).map_err(|e| match e {
            MaplError::InvalidConfig(v) => Failure::Config(v),
            other => Failure::Config(vec![other.to_string()]),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

/// MAPLSIM_OUT beats `--out`.
fn output_dir(env: Option<PathBuf>, flag: Option<PathBuf>) -> Option<PathBuf> {
    env.or(flag)
}

/// Runs `cfg` and writes everything into `dir`.
pub(crate) fn execute(cfg: &RunConfig, dir: &Path) -> Result<maplsim::RunResult, MaplError> {
    let mut embedding = None;
    let res = run_experiment_with(cfg, |st| {
        if st.round == cfg.rounds {
            embedding = Some(embedding_csv(st));
        }
    })?;
    write_run(dir, cfg, &res)?;
    if let Some(e) = embedding {
        fs::write(dir.join("embedding.csv"), e?)?;
    }
    Ok(res)
}

fn cmd_run(args: &RunArgs) -> Result<(), Failure> {
    let cfg = args.resolve(&[])?;
    let dir = PathBuf::from(&cfg.exec.out_dir);
    let res = execute(&cfg, &dir)?;
    println!(
        "{} seed {}: accuracy {:.4} ± {:.4}, recovery {:.4}, contacts {} -> {}",
        cfg.method.name(),
        cfg.seed,
        res.final_acc_mean,
        res.final_acc_std,
        res.graph_recovery,
        res.comm.contacts,
        dir.display()
    );
    Ok(())
}

fn cmd_verify() -> bool {
    let mut ok = true;
    for c in maplsim::verify::run_all() {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    ok
}

/// Exit status: 0 ok, 1 run failure, 2 invalid configuration.
fn dispatch(cli: &Cli) -> u8 {
    let result = match &cli.cmd {
        Command::Run(args) => cmd_run(args),
        Command::Sweep { run, grid } => sweep::cmd_sweep(run, grid.as_deref()),
        Command::Verify => return if cmd_verify() { 0 } else { 1 },
    };
    match result {
        Ok(()) => 0,
        Err(Failure::Config(v)) => {
            eprintln!("invalid configuration:");
            for line in v {
                eprintln!("  - {line}");
            }
            2
        }
        Err(Failure::Run(msg)) => {
            eprintln!("run aborted: {msg}");
            1
        }
    }
}

fn main() -> ExitCode {
    ExitCode::from(dispatch(&Cli::parse()))
}
