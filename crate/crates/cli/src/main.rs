use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use asterlab_cli::commands::{self, Baseline, PolicySource};
use asterlab_cli::{exit_code, InputError, Objective, RunConfig};
use asterlab_core::data::ResourceLevel;
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "asterlab", version, about = "Forecast-driven resource dispatch: train, evaluate, simulate")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run config file (flat key = value)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    trials: Option<usize>,
    #[arg(long, value_enum)]
    resource_level: Option<Level>,
}

#[derive(Args)]
struct PolicyArgs {
    /// Trained model checkpoint
    #[arg(long, conflicts_with_all = ["baseline", "scores"])]
    checkpoint: Option<PathBuf>,
    #[arg(long, value_enum, conflicts_with = "scores")]
    baseline: Option<BaselineArg>,
    /// External scores CSV (window_index,horizon_step,node_index,score)
    #[arg(long)]
    scores: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Level {
    Low,
    Medium,
    High,
}

#[derive(Clone, Copy, ValueEnum)]
enum BaselineArg {
    Ha,
    Random,
    Oracle,
}

#[derive(Subcommand)]
enum Command {
    /// Aggregate raw events onto nodes and write a dataset archive
    Ingest {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        events: PathBuf,
        #[arg(long)]
        coords: PathBuf,
    },
    /// Train the forecaster and dispatch agent
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from a training-state checkpoint
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a policy over the test split, weekly and overall
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Replay a policy and write the per-step trace
    Simulate {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        policy: PolicyArgs,
    },
    /// Recover the one-hot preference behind a hidden single-objective task
    InferPreference {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// accuracy, false_alarm, distance or time
        #[arg(long)]
        hidden_task: Option<Objective>,
    },
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::from_file(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = c.seed {
        cfg.seed = s;
    }
    if let Some(o) = &c.out {
        cfg.out = o.clone();
    }
    if let Some(t) = c.trials {
        cfg.trials = t;
    }
    if let Some(l) = c.resource_level {
        cfg.resource_level = match l {
            Level::Low => ResourceLevel::Low,
            Level::Medium => ResourceLevel::Medium,
            Level::High => ResourceLevel::High,
        };
        cfg.resources = None;
    }
    eprint!("# effective config\n{}", cfg.render());
    Ok(cfg)
}

fn policy_source(p: &PolicyArgs) -> Result<PolicySource> {
    match (&p.checkpoint, p.baseline, &p.scores) {
        (Some(c), _, _) => Ok(PolicySource::Checkpoint(c.clone())),
        (_, Some(b), _) => Ok(PolicySource::Baseline(match b {
            BaselineArg::Ha => Baseline::HistoricalAverage,
            BaselineArg::Random => Baseline::Random,
            BaselineArg::Oracle => Baseline::Oracle,
        })),
        (_, _, Some(s)) => Ok(PolicySource::Scores(s.clone())),
        _ => Err(InputError("one of --checkpoint, --baseline or --scores is required".into()).into()),
    }
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x}")).collect();
    format!("[{}]", parts.join(","))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { common, events, coords } => {
            let cfg = load_config(&common)?;
            let m = commands::ingest(&cfg, &events, &coords)?;
            println!(
                "{} steps x {} nodes; {} records, {} dropped",
                m.steps, m.nodes, m.records, m.dropped_records
            );
        }
        Command::Train { common, resume } => {
            let cfg = load_config(&common)?;
            let s = commands::train(&cfg, resume.as_deref())?;
            println!("{}", serde_json::to_string_pretty(&s)?);
        }
        Command::Evaluate { common, policy } => {
            let cfg = load_config(&common)?;
            let r = commands::evaluate(&cfg, &policy_source(&policy)?)?;
            println!("{}", serde_json::to_string_pretty(&r.mean)?);
        }
        Command::Simulate { common, policy } => {
            let cfg = load_config(&common)?;
            let r = commands::simulate(&cfg, &policy_source(&policy)?)?;
            println!("{} steps written to {}", r.trace.len(), cfg.out.join(commands::TRACE_FILE).display());
        }
        Command::InferPreference {
            common,
            checkpoint,
            hidden_task,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(t) = hidden_task {
                cfg.hidden_task = t;
            }
            let r = commands::infer(&cfg, &checkpoint, cfg.hidden_task)?;
            println!("inferred preference: {}", fmt_vec(&r.omega));
            println!("cumulative rewards: {}", fmt_vec(&r.totals));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("ASTERLAB_LOG", "info")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
