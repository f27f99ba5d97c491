mod commands;
mod config;

use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Parser, Subcommand};
use serde_json::json;

use config::{ModelArgs, SimArgs};

#[derive(Parser, Debug)]
#[command(name = "tapdecode", version, about = "Layout-free touch typing decoder")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// TOML file with [benchmark], [benchmark.sim], [train] and [train.model]
    /// sections. Flags override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Print results as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    /// Structured run log; one JSON record is appended per invocation.
    #[arg(long, global = true, default_value = "tapdecode-runs.jsonl")]
    pub log: PathBuf,
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Simulate a multi-user touch dataset.
    Simulate {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train a decoder and write its best checkpoint.
    Train {
        #[command(flatten)]
        sim: SimArgs,
        #[command(flatten)]
        model: ModelArgs,
        /// Dataset to split by user (default: simulate the benchmark).
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Report CER, WER and decode time of a checkpoint.
    Eval {
        #[command(flatten)]
        sim: SimArgs,
        /// Expected model shape; the checkpoint must match it.
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Dataset to evaluate in full (default: the benchmark's test users).
        #[arg(long)]
        dataset: Option<PathBuf>,
    },
    /// Train and evaluate a grid of model cells and write a CSV table.
    Ablate {
        #[command(flatten)]
        sim: SimArgs,
        #[arg(long)]
        dataset: Option<PathBuf>,
        #[arg(long)]
        epochs: Option<usize>,
        /// Comma-separated cells such as dnd:s2u64au,bi-rnn:s3u32,gaussian-baseline.
        #[arg(long, default_value = commands::DEFAULT_CELLS)]
        cells: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Decode a file of touches, one "x,y" or "x y" pair per line.
    Decode {
        #[arg(long)]
        checkpoint: PathBuf,
        input: PathBuf,
    },
    /// Finite-difference check of every primitive and of a full model.
    Gradcheck {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1234)]
        seed: u64,
        /// Touches in the checked sequence.
        #[arg(long, default_value_t = 5)]
        length: usize,
    },
    /// Serve live decoding over WebSocket at /ws.
    Serve {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Simulate { .. } => "simulate",
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Ablate { .. } => "ablate",
            Command::Decode { .. } => "decode",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Serve { .. } => "serve",
        }
    }
}

fn append_log(cli: &Cli, record: serde_json::Value) {
    let line = format!("{record}\n");
    let res = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&cli.log)
        .and_then(|mut f| f.write_all(line.as_bytes()));
    if let Err(e) = res {
        eprintln!("warning: could not append to run log {}: {e}", cli.log.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    tracing_subscriber::fmt()
        .with_env_filter(tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| level.into()))
        .with_writer(std::io::stderr)
        .init();

    let start = Instant::now();
    let outcome = commands::run(&cli);
    let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
    let args: Vec<String> = std::env::args().collect();
    let (status, code) = match &outcome {
        Ok(o) if o.passed => ("ok", ExitCode::SUCCESS),
        Ok(_) => ("failed", ExitCode::FAILURE),
        Err(_) => ("error", ExitCode::FAILURE),
    };
    let (config, result, error) = match &outcome {
        Ok(o) => (o.config.clone(), o.result.clone(), None),
        Err(e) => (serde_json::Value::Null, serde_json::Value::Null, Some(format!("{e:#}"))),
    };
    append_log(
        &cli,
        json!({
            "unix_time": unix,
            "command": cli.command.name(),
            "args": args,
            "status": status,
            "seconds": start.elapsed().as_secs_f64(),
            "config": config,
            "result": result,
            "error": error,
        }),
    );
    match outcome {
        Ok(o) => {
            if let Some(reason) = o.failure {
                eprintln!("error: {reason}");
            }
            code
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            code
        }
    }
}
