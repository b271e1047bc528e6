use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use mosu::harness::{
    compare_ablations, format_ablation_table, metrics_from_log, parse_ablations, read_log,
    run_episode, write_log, EpisodeConfig, HarnessError,
};

#[derive(Parser)]
#[command(name = "mosu", about = "Long-range semantic navigation stack with a 2D simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one episode and write a JSON-lines log.
    Run {
        /// Episode config (TOML).
        #[arg(long)]
        config: PathBuf,
        /// Override the config's RNG seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Write camera overlays and prompts for each ranking cycle into this directory.
        #[arg(long, value_name = "DIR")]
        dump_overlays: Option<PathBuf>,
        /// Episode log path (default: episode.jsonl).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute metrics from a saved episode log.
    Metrics {
        #[arg(long)]
        log: PathBuf,
    },
    /// Run the same episode under several scoring-weight settings.
    Ablate {
        #[arg(long)]
        config: PathBuf,
        /// Ablations file: one `name beta1 beta2 beta3 beta4` per line.
        #[arg(long)]
        ablations: PathBuf,
    },
}

const EXIT_CONFIG_ERROR: u8 = 64;

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            match err {
                HarnessError::Config(_) | HarnessError::TooFewAblations(_) => {
                    ExitCode::from(EXIT_CONFIG_ERROR)
                }
                _ => ExitCode::FAILURE,
            }
        }
    }
}

fn run() -> Result<ExitCode, HarnessError> {
    let cli = Cli::parse();
    match cli.command {
        Command::Run {
            config,
            seed,
            dump_overlays,
            out,
        } => {
            let mut cfg = EpisodeConfig::load(&config)?;
            if let Some(seed) = seed {
                cfg.seed = seed;
            }
            if let Some(dir) = &dump_overlays {
                std::fs::create_dir_all(dir).map_err(|e| HarnessError::Io(e.to_string()))?;
            }
            let (log, report) = run_episode(&cfg, dump_overlays.as_deref())?;
            let out = out.unwrap_or_else(|| PathBuf::from("episode.jsonl"));
            write_log(&log, &out)?;
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            eprintln!(
                "status: {:?}, log: {}",
                log.terminal.status,
                out.display()
            );
            Ok(ExitCode::from(log.terminal.status.exit_code() as u8))
        }
        Command::Metrics { log } => {
            let log = read_log(&log)?;
            let report = metrics_from_log(&log);
            println!("{}", serde_json::to_string_pretty(&report).expect("report serializes"));
            Ok(ExitCode::SUCCESS)
        }
        Command::Ablate { config, ablations } => {
            let cfg = EpisodeConfig::load(&config)?;
            let text = std::fs::read_to_string(&ablations)
                .map_err(|e| HarnessError::Config(format!("cannot read ablations: {e}")))?;
            let abl = parse_ablations(&text)?;
            let rows = compare_ablations(&cfg, &abl)?;
            print!("{}", format_ablation_table(&rows));
            Ok(ExitCode::SUCCESS)
        }
    }
}
