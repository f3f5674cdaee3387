use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use tide_cli::{cmd_analyze, cmd_evaluate, cmd_grid, cmd_prepare, cmd_synth, cmd_train, RunConfig};

#[derive(Parser)]
#[command(name = "tide", version, about = "Separate item quality from conformity in popularity-biased recommendation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// JSON run config; flags below override its fields.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed for splitting, synthesis and training.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// mf, mf-ips, pd, pda, tide, tide-noq, tide-noc or tide-fixq.
    #[arg(long, global = true)]
    method: Option<String>,
    /// Inference mode to evaluate (repeatable): full, int, e, noq, noc, fixq=<v>, pd, pda.
    #[arg(long = "mode", global = true)]
    modes: Vec<String>,
    /// Cut-off for click prediction.
    #[arg(long, global = true)]
    k: Option<usize>,
    #[arg(long, global = true)]
    outdir: Option<PathBuf>,
    #[arg(long, global = true)]
    run_id: Option<String>,
    /// Interaction file (user, item, rating, timestamp; tab separated by default).
    #[arg(long, global = true)]
    input: Option<PathBuf>,
    /// Split directory written by `prepare`.
    #[arg(long, global = true)]
    split_dir: Option<PathBuf>,
    #[arg(long, global = true)]
    checkpoint: Option<PathBuf>,
    #[arg(long, global = true)]
    epochs: Option<usize>,
    /// Worker threads for evaluation (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Load, n-core filter and split a log; persist the split.
    Prepare,
    /// Generate a synthetic log with planted quality and conformity.
    Synth,
    /// Train a method and write a checkpoint and training history.
    Train,
    /// Evaluate a checkpoint under each requested inference mode.
    Evaluate,
    /// Popularity/rating diagnostics, plus learned-quality ones for a tide checkpoint.
    Analyze,
    /// Grid search over the config's `grid` section by validation CP-Rec.
    Grid,
}

impl Cli {
    fn run_config(&self) -> Result<RunConfig> {
        let mut c = match &self.config {
            Some(path) => RunConfig::from_file(path)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            c.seed = v;
        }
        if let Some(v) = &self.method {
            c.method = v.clone();
        }
        if !self.modes.is_empty() {
            c.modes = self.modes.clone();
        }
        if let Some(v) = self.k {
            c.k = v;
        }
        if let Some(v) = &self.outdir {
            c.outdir = v.clone();
        }
        if let Some(v) = &self.run_id {
            c.run_id = Some(v.clone());
        }
        if let Some(v) = &self.input {
            c.input = Some(v.clone());
            c.synth = None;
        }
        if let Some(v) = &self.split_dir {
            c.split_dir = Some(v.clone());
        }
        if let Some(v) = &self.checkpoint {
            c.checkpoint = Some(v.clone());
        }
        if let Some(v) = self.epochs {
            c.train.epochs = v;
        }
        c.resolve()
    }
}

fn run(cli: &Cli, config: &RunConfig) -> Result<()> {
    match cli.command {
        Command::Prepare => {
            cmd_prepare(config)?;
        }
        Command::Synth => {
            let path = cmd_synth(config)?;
            println!("{}", path.display());
        }
        Command::Train => {
            let r = cmd_train(config)?;
            println!("best epoch {:?}, validation CP-Rec@{} {:?}", r.best_epoch, config.train.eval_k, r.best_val);
        }
        Command::Evaluate => {
            for r in cmd_evaluate(config)? {
                println!("{}", r.csv_row());
            }
        }
        Command::Analyze => {
            let a = cmd_analyze(config)?;
            println!("{}", serde_json::to_string_pretty(&a.summary)?);
        }
        Command::Grid => {
            let board = cmd_grid(config)?;
            if let Some(best) = board.first() {
                println!("best {:?}: {:?}", best.point, best.val_cp_rec);
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    let result = cli.run_config().and_then(|config| {
        if let Some(n) = cli.threads {
            rayon::ThreadPoolBuilder::new().num_threads(n).build_global().context("configuring thread pool")?;
        }
        let marker = config.run_dir().join("FAILED");
        let outcome = run(&cli, &config);
        match &outcome {
            // leave a marker so partial outputs are never mistaken for a finished run
            Err(e) if config.run_dir().exists() => {
                let _ = std::fs::write(&marker, format!("{e:#}\n"));
            }
            Ok(()) if marker.exists() => {
                let _ = std::fs::remove_file(&marker);
            }
            _ => {}
        }
        outcome
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
