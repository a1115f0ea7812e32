use std::fmt::Display;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use csm_cli::commands::{self, RunTarget};
use csm_cli::pipeline::StageRun;
use csm_cli::CliError;
use csm_core::gateway::mock::PlantedCorpusSpec;

#[derive(Parser)]
#[command(name = "csm", version, about = "Content salience maps for summarization models")]
struct Cli {
    /// Directory holding `runs/` and the default cache.
    #[arg(long, global = true, default_value = ".")]
    root: PathBuf,

    /// Log progress (repeat for more detail).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Create a run directory from a config file.
    Init {
        #[arg(short, long)]
        config: PathBuf,
        /// Replace an existing run with the same id.
        #[arg(long)]
        force: bool,
    },
    /// Run one stage, or every stage up to the review gate and beyond.
    Run { run_id: String, stage: RunTarget },
    /// Load pre-existing summaries as the `ingested` backend.
    IngestSummaries {
        run_id: String,
        #[arg(short, long)]
        file: PathBuf,
        #[arg(long, default_value_t = 0.10)]
        tolerance: f64,
    },
    /// Attach a human ratings CSV to a run.
    IngestRatings {
        run_id: String,
        #[arg(short, long)]
        file: PathBuf,
    },
    /// Re-probe the summarizers at other temperatures.
    SweepTemp {
        run_id: String,
        #[arg(short, long, value_delimiter = ',', num_args = 0..)]
        temperatures: Vec<f64>,
    },
    /// Render the report bundle.
    Report { run_id: String },
    /// Show each stage's state.
    Status { run_id: String },
    /// Write a planted mock corpus and config for a dry run.
    Plant {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 10)]
        docs: usize,
        #[arg(long, default_value_t = 5)]
        categories: u32,
        #[arg(long, default_value_t = 3)]
        replicates: u32,
        #[arg(long, default_value_t = 7)]
        seed: u64,
    },
}

/// Print a line; a closed stdout is not an error.
fn say(line: impl Display) {
    let _ = writeln!(std::io::stdout().lock(), "{line}");
}

fn dispatch(cli: Cli) -> Result<(), CliError> {
    let root = &cli.root;
    match cli.command {
        Command::Init { config, force } => {
            let dir = commands::init(root, &config, force)?;
            say(format!("initialized {}", dir.path().display()));
        }
        Command::Run { run_id, stage } => {
            let out = commands::run(root, &run_id, stage)?;
            for m in out.messages {
                say(m);
            }
        }
        Command::IngestSummaries { run_id, file, tolerance } => {
            for m in commands::ingest(root, &run_id, &file, tolerance)? {
                say(m);
            }
        }
        Command::IngestRatings { run_id, file } => {
            let n = commands::ingest_ratings(root, &run_id, &file)?;
            say(format!("stored ratings ({n} rows checked against reviewed topics)"));
        }
        Command::SweepTemp { run_id, temperatures } => {
            let lines = commands::sweep_temperature(root, &run_id, &temperatures)?;
            say("backend\ttemperature\tmean_tlr\tlength_mad\tic");
            for l in lines {
                say(format!(
                    "{}\t{}\t{:.4}\t{:.4}\t{:.4}",
                    l.backend, l.row.temperature, l.row.mean_tlr, l.row.length_mad, l.row.ic
                ));
            }
        }
        Command::Report { run_id } => {
            let (status, dir) = commands::report(root, &run_id)?;
            match status {
                StageRun::UpToDate => say(format!("report: up to date ({})", dir.display())),
                StageRun::Ran => say(format!("report written to {}", dir.display())),
            }
        }
        Command::Status { run_id } => {
            for line in commands::status(root, &run_id)? {
                say(line);
            }
        }
        Command::Plant {
            out,
            docs,
            categories,
            replicates,
            seed,
        } => {
            let spec = PlantedCorpusSpec {
                documents: docs,
                categories,
                seed,
                ..PlantedCorpusSpec::default()
            };
            let path = commands::plant(&out, &spec, replicates)?;
            say(format!("wrote {}", path.display()));
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match dispatch(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
