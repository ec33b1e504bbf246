mod backends;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use imageshare_core::pipeline::Profile;

use crate::backends::FatalBackend;
use crate::commands::{MissingRun, RunContext};
use crate::config::{load_config, BackendKind, ConfigError};

#[derive(Parser)]
#[command(name = "imageshare", version, about = "Decide, describe and retrieve images to share in dialogue")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Stage 1: decide whether to share an image and why.
    Decide(Shared),
    /// Stage 2: describe the image to share.
    Describe(Shared),
    /// Stage 3: rank candidate images against each description.
    Retrieve {
        #[command(flatten)]
        shared: Shared,
        /// Build the candidate index when none is cached.
        #[arg(long)]
        build_index: bool,
    },
    /// Score a run against the annotations.
    Evaluate(Shared),
    /// Find sharing moments in finished dialogues and attach images.
    Augment(Shared),
    /// Compare headline scores across evaluated runs.
    Report {
        #[arg(required = true)]
        run_dirs: Vec<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BackendArg {
    Openai,
    GoldEcho,
}

#[derive(Clone, Copy, ValueEnum)]
enum ProfileArg {
    Full,
    DescribeRetrieve,
}

#[derive(Args)]
struct Shared {
    /// TOML run configuration.
    #[arg(long, short)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    backend: Option<BackendArg>,
    #[arg(long, value_enum)]
    profile: Option<ProfileArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    cache_dir: Option<PathBuf>,
    #[arg(long)]
    out: Option<PathBuf>,
    /// Render prompts without calling any backend.
    #[arg(long)]
    dry_run: bool,
}

impl Shared {
    fn context(&self) -> anyhow::Result<RunContext> {
        let mut cfg = load_config(self.config.as_deref())?;
        if let Some(b) = self.backend {
            cfg.backend.kind = match b {
                BackendArg::Openai => BackendKind::Openai,
                BackendArg::GoldEcho => BackendKind::GoldEcho,
            };
        }
        if let Some(p) = self.profile {
            cfg.pipeline.profile = match p {
                ProfileArg::Full => Profile::Full,
                ProfileArg::DescribeRetrieve => Profile::DescribeRetrieve,
            };
        }
        if let Some(s) = self.seed {
            cfg.pipeline.seed = s;
        }
        if let Some(w) = self.workers {
            cfg.run.workers = w;
        }
        if let Some(c) = &self.cache_dir {
            cfg.run.cache_dir = Some(c.clone());
        }
        if let Some(o) = &self.out {
            cfg.run.out = o.clone();
        }
        RunContext::load(cfg, self.dry_run)
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Decide(s) => commands::decide(&s.context()?),
        Command::Describe(s) => commands::describe(&s.context()?),
        Command::Retrieve { shared, build_index } => commands::retrieve(&shared.context()?, build_index),
        Command::Evaluate(s) => commands::evaluate(&s.context()?),
        Command::Augment(s) => commands::augment(&s.context()?),
        Command::Report { run_dirs } => commands::report(&run_dirs, &mut std::io::stdout().lock()),
    }
}

fn exit_code(err: &anyhow::Error) -> u8 {
    if err.is::<ConfigError>() || err.is::<MissingRun>() {
        2
    } else if err.is::<FatalBackend>() {
        3
    } else {
        1
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}
