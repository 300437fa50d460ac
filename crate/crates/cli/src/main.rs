//! `restore`: run Restore samplers and built-in experiments from JSON configs.

mod config;
mod run;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::{Experiment, RunConfig};
use run::RunError;

#[derive(Parser)]
#[command(name = "restore", version = run::VERSION, about = "Restore process samplers and experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON config; optional for built-in experiments.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed (overrides the config).
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (overrides the config). Results do not depend on it.
    #[arg(long)]
    workers: Option<usize>,
    /// Output directory (overrides the config).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Jump-process Restore: discrete generator or random-walk Metropolis.
    RunJump(Common),
    /// Restore with diffusion or frozen local dynamics and truncated rate.
    RunDiffusion(Common),
    /// Exact draws by coupling from the past.
    Cftp(Common),
    /// Rejection sampling as frozen-dynamics CFTP.
    Rejection(Common),
    /// Truncation bias against the theoretical bounds.
    TruncateStudy(Common),
    /// Discrete invariance check against the full generator.
    OracleCheck(Common),
    /// Exact draws from a Cauchy-likelihood posterior.
    CauchyCftp(Common),
    /// Gaussian-mixture target with a Metropolis jump process.
    MixtureJump(Common),
}

impl Command {
    fn split(self) -> (Experiment, Common) {
        match self {
            Self::RunJump(c) => (Experiment::RunJump, c),
            Self::RunDiffusion(c) => (Experiment::RunDiffusion, c),
            Self::Cftp(c) => (Experiment::Cftp, c),
            Self::Rejection(c) => (Experiment::Rejection, c),
            Self::TruncateStudy(c) => (Experiment::TruncateStudy, c),
            Self::OracleCheck(c) => (Experiment::OracleCheck, c),
            Self::CauchyCftp(c) => (Experiment::CauchyCftp, c),
            Self::MixtureJump(c) => (Experiment::MixtureJump, c),
        }
    }
}

fn io_error(path: &Path, e: std::io::Error) -> RunError {
    RunError::Config(vec![format!("{}: {e}", path.display())])
}

fn execute(e: Experiment, args: Common) -> Result<(), RunError> {
    let cfg = match &args.config {
        Some(path) => {
            let text = fs::read_to_string(path).map_err(|err| io_error(path, err))?;
            config::parse(&text, e, run::builtin_defaults(e).as_ref())?
        }
        None if e.is_builtin() => RunConfig::default(),
        None => return Err(RunError::Config(vec![format!("`{}` needs --config", e.name())])),
    };
    let seed = args.seed.or(cfg.seed).unwrap_or(0);
    let workers = args
        .workers
        .or(cfg.workers)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()));
    if workers == 0 {
        return Err(RunError::Config(vec!["workers must be positive".into()]));
    }
    let out_dir = args.out.clone().or(cfg.out_dir.clone()).unwrap_or_else(|| PathBuf::from("out"));
    let mut cfg = cfg;
    cfg.experiment = Some(e);
    cfg.seed = Some(seed);
    let outcome = run::run(e, &cfg, seed, workers)?;
    fs::create_dir_all(&out_dir).map_err(|err| io_error(&out_dir, err))?;
    for (name, contents) in &outcome.files {
        let path = out_dir.join(name);
        fs::write(&path, contents).map_err(|err| io_error(&path, err))?;
    }
    let path = out_dir.join("summary.json");
    let mut text = serde_json::to_string_pretty(&outcome.summary).expect("summary serialises");
    text.push('\n');
    fs::write(&path, text).map_err(|err| io_error(&path, err))?;
    for line in outcome.stdout {
        println!("{line}");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (e, args) = cli.command.split();
    match execute(e, args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", serde_json::to_string(&err.to_json()).expect("error serialises"));
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
