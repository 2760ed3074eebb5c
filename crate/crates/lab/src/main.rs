use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::anyhow;
use clap::{Args, Parser, Subcommand, ValueEnum};
use regretlab::analyze::Analyses;
use regretlab::config::EnvConfig;
use regretlab::harness::{self, SweepOptions};
use regretlab::instance::{self, AmbientFile, InstanceFile};
use regretlab::report::ReportJson;
use regretlab::{ExperimentConfig, LabError};
use regretlab_core::analysis;

/// Regret-minimization experiments on average-reward tabular MDPs.
#[derive(Parser)]
#[command(name = "regretlab", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run every (algorithm, seed) pair of an experiment config.
    Run {
        config: PathBuf,
        /// Worker threads (default: all cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Classify an instance: degeneracy, interiority, confusing set.
    Check {
        instance: PathBuf,
        /// Ambient file, or one of `free`, `fixed-kernel`, `support`.
        #[arg(long, default_value = "free")]
        ambient: String,
        /// Tolerance on gain comparisons.
        #[arg(long, default_value_t = analysis::DEFAULT_TOL)]
        tol: f64,
    },
    /// Instance files.
    Env {
        #[command(subcommand)]
        command: EnvCommand,
    },
    /// Recompute analyses from the traces of a finished run directory.
    Analyze {
        run_dir: PathBuf,
        #[arg(long, requires = "proxy_window")]
        proxy_psi: Option<u64>,
        #[arg(long, requires = "proxy_psi")]
        proxy_window: Option<u64>,
        #[arg(long)]
        jobs: Option<usize>,
    },
}

#[derive(Subcommand)]
enum EnvCommand {
    /// Write an instance file.
    Gen(GenArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Figure2Left,
    Figure2Right,
    Figure7,
    Riverswim,
    RandomErgodic,
}

#[derive(Args)]
struct GenArgs {
    kind: Kind,
    /// Number of riverswim states.
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    states: Option<usize>,
    #[arg(long)]
    actions: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(short = 'o', long = "output")]
    output: PathBuf,
    /// Also write the instance's ambient set here.
    #[arg(long)]
    ambient_out: Option<PathBuf>,
}

/// Exit codes: 0 ok, 1 run failure, 2 bad input, 3 degenerate instance.
enum Failure {
    Input(anyhow::Error),
    Run(anyhow::Error),
    Degenerate(String),
}

impl From<LabError> for Failure {
    fn from(e: LabError) -> Self {
        if e.is_input_error() {
            Self::Input(e.into())
        } else {
            Self::Run(e.into())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run { config, jobs } => cmd_run(config, jobs),
        Command::Check { instance, ambient, tol } => cmd_check(instance, &ambient, tol),
        Command::Env {
            command: EnvCommand::Gen(args),
        } => cmd_env_gen(args),
        Command::Analyze {
            run_dir,
            proxy_psi,
            proxy_window,
            jobs,
        } => cmd_analyze(run_dir, proxy_psi.zip(proxy_window), jobs),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Run(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
        Err(Failure::Input(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Degenerate(why)) => {
            eprintln!("error: the confusing-set query needs a non-degenerate instance\n{why}");
            ExitCode::from(3)
        }
    }
}

fn cmd_run(config: PathBuf, jobs: Option<usize>) -> Result<(), Failure> {
    let cfg = ExperimentConfig::read(&config).map_err(|e| Failure::Input(anyhow!("invalid config: {e}")))?;
    let opts = SweepOptions { jobs, root: None };
    let (dir, manifest) = harness::run_experiment(&cfg, &opts)?;
    for note in &manifest.analyses {
        if let Some(n) = note.traces_without_exploration.filter(|&n| n > 0) {
            eprintln!(
                "warning: {}: {n} trace(s) have no exploration time after psi; they count as zero in the proxy",
                note.algorithm
            );
        }
    }
    println!("{} runs written to {}", manifest.runs.len(), dir.display());
    Ok(())
}

fn cmd_check(path: PathBuf, ambient: &str, tol: f64) -> Result<(), Failure> {
    // every failure before the analysis itself is a problem with the inputs
    let input = |e: LabError| Failure::Input(e.into());
    let m = InstanceFile::read(&path).and_then(|f| f.to_mdp()).map_err(input)?;
    let ambient = instance::load_ambient(ambient, &m).map_err(input)?;
    let report = analysis::classify(&m, &ambient, tol).map_err(|e| Failure::Run(e.into()))?;
    let json = serde_json::to_string_pretty(&ReportJson::from(&report)).expect("report serializes");
    println!("{json}");
    if !report.non_degenerate {
        return Err(Failure::Degenerate(report.degeneracy_report));
    }
    Ok(())
}

fn cmd_env_gen(args: GenArgs) -> Result<(), Failure> {
    let missing = |flag: &str| Failure::Input(anyhow!("this kind needs --{flag}"));
    let env = match args.kind {
        Kind::Figure2Left => EnvConfig::Figure2Left,
        Kind::Figure2Right => EnvConfig::Figure2Right,
        Kind::Figure7 => EnvConfig::Figure7Cycles,
        Kind::Riverswim => EnvConfig::Riverswim {
            n: args.n.ok_or_else(|| missing("n"))?,
        },
        Kind::RandomErgodic => EnvConfig::RandomErgodic {
            states: args.states.ok_or_else(|| missing("states"))?,
            actions: args.actions.ok_or_else(|| missing("actions"))?,
            seed: args.seed.ok_or_else(|| missing("seed"))?,
        },
    };
    let env = env.build()?;
    InstanceFile::from_mdp(&env.mdp).write(&args.output)?;
    if let Some(path) = args.ambient_out {
        AmbientFile::from_set(&env.ambient).write(&path)?;
    }
    Ok(())
}

fn cmd_analyze(dir: PathBuf, proxy: Option<(u64, u64)>, jobs: Option<usize>) -> Result<(), Failure> {
    let which = Analyses {
        regret: true,
        proxy,
        visit_regime: true,
        exploration_times: true,
    };
    let notes = harness::analyze_dir(&dir, &which, jobs)?;
    for note in &notes {
        println!("{}: {}", note.algorithm, note.files.join(", "));
    }
    Ok(())
}
