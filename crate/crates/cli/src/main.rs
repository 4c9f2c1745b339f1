//! Command-line front end. Exit codes: 0 success, 1 usage, 2 data or
//! format problems, 3 checkpoint problems.

mod commands;
mod config;
mod dataset;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use stabr_core::Error;

use config::RunConfig;

#[derive(Parser)]
#[command(
    name = "stabr",
    version,
    about = "Attentive next-song recommendation: ingest listening logs, train SABR/STABR/RNN \
             models, evaluate HitRatio@k against POP and SSCF baselines"
)]
struct Cli {
    /// Config file with `key = value` lines; command-line flags override it
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,

    /// Listening log file (user, timestamp, artist, track; tab-separated)
    #[arg(long, global = true, value_name = "FILE")]
    logs: Option<String>,

    /// Tag file (artist, track, comma-separated tags; tab-separated)
    #[arg(long, global = true, value_name = "FILE")]
    tags: Option<String>,

    /// Directory for ingested dataset artifacts
    #[arg(long, global = true, value_name = "DIR")]
    dataset_dir: Option<String>,

    /// Checkpoint path to write (train) or read (evaluate, predict)
    #[arg(long, global = true, value_name = "FILE")]
    checkpoint: Option<String>,

    /// Report path prefix; evaluate writes <prefix>.txt and <prefix>.kv
    #[arg(long, global = true, value_name = "PATH")]
    report: Option<String>,

    /// Model: stabr, sabr, rnn, pop or sscf
    #[arg(long, global = true)]
    model: Option<String>,

    /// Idle gap in seconds that separates two sessions [default: 1800]
    #[arg(long, global = true)]
    gap_seconds: Option<String>,

    /// History window m: most recent songs fed to the model [default: 10]
    #[arg(long, global = true)]
    history: Option<String>,

    /// Song embedding length [default: 50]
    #[arg(long, global = true)]
    song_dim: Option<String>,

    /// Tag embedding length [default: 25]
    #[arg(long, global = true)]
    tag_dim: Option<String>,

    /// Song-side GRU hidden units per direction [default: 50]
    #[arg(long, global = true)]
    song_hidden: Option<String>,

    /// Tag-side GRU hidden units per direction [default: 25]
    #[arg(long, global = true)]
    tag_hidden: Option<String>,

    /// Hidden units of the RNN baseline [default: 100]
    #[arg(long, global = true)]
    rnn_hidden: Option<String>,

    /// Bottleneck layer width [default: 50]
    #[arg(long, global = true)]
    bottleneck: Option<String>,

    /// Dropout discard probability [default: 0.1]
    #[arg(long, global = true)]
    dropout: Option<String>,

    /// Learning rate [default: 0.05; 0.1 for the rnn baseline]
    #[arg(long, global = true)]
    learning_rate: Option<String>,

    /// Minibatch size [default: 32]
    #[arg(long, global = true)]
    batch_size: Option<String>,

    /// Training epochs [default: 10]
    #[arg(long, global = true)]
    epochs: Option<String>,

    /// Seed for initialization, shuffling and dropout [default: 42]
    #[arg(long, global = true)]
    seed: Option<String>,

    /// Global-norm gradient clip threshold, or 'none' [default: none]
    #[arg(long, global = true)]
    clip_norm: Option<String>,

    /// Comma-separated k values for HitRatio@k [default: 10,20,30,40,50]
    #[arg(long, global = true)]
    ks: Option<String>,

    /// Nearest sessions consulted by sscf [default: 100]
    #[arg(long, global = true)]
    sscf_neighbors: Option<String>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse logs, sessionize and print corpus statistics
    Stats,
    /// Sessionize, split 70/30 per user, build vocabularies and write
    /// dataset artifacts
    Ingest,
    /// Train the selected model and write a checkpoint plus loss trace
    Train,
    /// Evaluate HitRatio@k over the test sessions and write reports
    Evaluate,
    /// Rank the k most likely next songs for an ad-hoc listening prefix
    Predict {
        /// A prefix song as 'artist::track'; repeat in listening order
        #[arg(long = "song", value_name = "KEY")]
        songs: Vec<String>,
        /// How many songs to rank
        #[arg(short, long, default_value_t = 10)]
        k: usize,
    },
}

fn build_config(cli: &Cli) -> stabr_core::Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(path) = &cli.config {
        cfg.apply_file(path)?;
    }
    let overrides: [(&str, &Option<String>); 21] = [
        ("logs", &cli.logs),
        ("tags", &cli.tags),
        ("dataset_dir", &cli.dataset_dir),
        ("checkpoint", &cli.checkpoint),
        ("report", &cli.report),
        ("model", &cli.model),
        ("gap_seconds", &cli.gap_seconds),
        ("history", &cli.history),
        ("song_dim", &cli.song_dim),
        ("tag_dim", &cli.tag_dim),
        ("song_hidden", &cli.song_hidden),
        ("tag_hidden", &cli.tag_hidden),
        ("rnn_hidden", &cli.rnn_hidden),
        ("bottleneck", &cli.bottleneck),
        ("dropout", &cli.dropout),
        ("learning_rate", &cli.learning_rate),
        ("batch_size", &cli.batch_size),
        ("epochs", &cli.epochs),
        ("seed", &cli.seed),
        ("clip_norm", &cli.clip_norm),
        ("ks", &cli.ks),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            cfg.set(key, v)?;
        }
    }
    if let Some(v) = &cli.sscf_neighbors {
        cfg.set("sscf_neighbors", v)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Argument(_) => 1,
        Error::Io(_) | Error::Format(_) | Error::Dimension(_) | Error::Vocabulary(_) => 2,
        Error::Checkpoint(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            use clap::error::ErrorKind;
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };

    let result = build_config(&cli).and_then(|cfg| match &cli.command {
        Command::Stats => commands::cmd_stats(&cfg),
        Command::Ingest => commands::cmd_ingest(&cfg),
        Command::Train => commands::cmd_train(&cfg),
        Command::Evaluate => commands::cmd_evaluate(&cfg),
        Command::Predict { songs, k } => commands::cmd_predict(&cfg, songs, *k),
    });

    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
