use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};
use mctsep_cli::{classify, commands, RunConfig};
use tracing_subscriber::EnvFilter;

/// Tree search, preference collection and SFT/DPO training over household tasks.
#[derive(Debug, Parser)]
#[command(name = "mctsep", version)]
struct Cli {
    /// TOML run configuration; defaults apply when omitted. Any field can
    /// be overridden with MCTSEP_<SECTION>__<FIELD>.
    #[arg(long, short, global = true)]
    config: Option<PathBuf>,
    /// Overrides run.output_dir.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Overrides run.workers.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Search one task and dump the tree.
    Search {
        /// Task seed; the family follows from the seed and suite.families.
        #[arg(long)]
        task_seed: u64,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Search the training suite and write success and preference buffers.
    Collect {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Supervised warm-up on expert trajectories (oracle solutions by default).
    Warmup {
        #[arg(long)]
        experts: Option<PathBuf>,
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// SFT on a success buffer.
    TrainSft {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        init: Option<PathBuf>,
    },
    /// DPO on a preference buffer.
    TrainDpo {
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        init: Option<PathBuf>,
        /// Frozen reference; the initial checkpoint when omitted.
        #[arg(long)]
        reference: Option<PathBuf>,
    },
    /// Warm-up plus the iterative search/SFT/DPO loop; resumable.
    Loop {
        #[arg(long)]
        init: Option<PathBuf>,
        /// Stop once this many iterations are complete.
        #[arg(long)]
        stop_after: Option<usize>,
    },
    /// Held-out evaluation.
    Eval {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Act with a fresh search at every step instead of greedily.
        #[arg(long)]
        search: bool,
    },
    /// Print the effective configuration.
    DumpConfig,
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), std::env::vars())?;
    if let Some(out) = cli.out {
        cfg.run.output_dir = out;
    }
    if let Some(w) = cli.workers {
        cfg.run.workers = w;
    }
    tracing::info!(config_hash = %cfg.hash(), command = ?cli.command, "starting");
    let summary = match cli.command {
        Command::Search { task_seed, checkpoint } => commands::search(&cfg, task_seed, checkpoint.as_deref())?,
        Command::Collect { checkpoint } => commands::collect(&cfg, checkpoint.as_deref())?,
        Command::Warmup { experts, init } => commands::warmup(&cfg, experts.as_deref(), init.as_deref())?,
        Command::TrainSft { data, init } => commands::train_sft(&cfg, data.as_deref(), init.as_deref())?,
        Command::TrainDpo { data, init, reference } => {
            commands::train_dpo(&cfg, data.as_deref(), init.as_deref(), reference.as_deref())?
        }
        Command::Loop { init, stop_after } => commands::run_loop(&cfg, init.as_deref(), stop_after)?,
        Command::Eval { checkpoint, search } => commands::eval(&cfg, checkpoint.as_deref(), search)?,
        Command::DumpConfig => {
            print!("{}", commands::dump_config(&cfg));
            return Ok(());
        }
    };
    println!("{summary}");
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .json()
        .with_writer(std::io::stderr)
        .with_env_filter(EnvFilter::try_from_env("MCTSEP_LOG").unwrap_or_else(|_| EnvFilter::new("info")))
        .init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() {
                mctsep_cli::ExitClass::Validation.code()
            } else {
                0
            };
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let class = classify(&e);
            tracing::error!(error = %format!("{e:#}"), class = ?class, "command failed");
            eprintln!("error: {e:#}");
            ExitCode::from(class.code() as u8)
        }
    }
}
