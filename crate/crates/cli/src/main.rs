//! `adadec`: synthesize or load a corpus, retrieve exemplars, train, decode
//! and score. Every stage reads and writes inside `--out`.

mod config;
mod stages;
mod stamp;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use config::RunConfig;
use stages::Run;

#[derive(Parser)]
#[command(name = "adadec", version, about = "Exemplar-conditioned adaptive decoding pipeline")]
struct Cli {
    /// JSON config file merged over the defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Dotted override such as `train.batch_size=16`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    set: Vec<String>,
    /// Seed for training and corpus synthesis.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Run directory.
    #[arg(long, global = true, default_value = "run")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a synthetic train/dev/test corpus.
    SynthData,
    /// Build the vocabulary and binarize every split.
    Preprocess,
    /// Assign each instance its most similar training instance.
    Retrieve,
    /// Train the configured variant and save the best checkpoint.
    Train,
    /// Decode the evaluation split.
    Generate {
        /// Greedy decoding instead of beam search.
        #[arg(long)]
        greedy: bool,
    },
    /// Score predictions against references.
    Evaluate,
    /// Compare analytic and numeric gradients on a small random model.
    Gradcheck,
}

fn run(cli: Cli) -> Result<bool> {
    let config = RunConfig::load(cli.config.as_deref(), &cli.set, cli.seed)?;
    let run = Run::new(config, cli.out)?;
    let msg = match cli.command {
        Command::SynthData => run.synth_data()?,
        Command::Preprocess => run.preprocess()?,
        Command::Retrieve => run.retrieve()?,
        Command::Train => run.train()?,
        Command::Generate { greedy } => run.generate(greedy)?,
        Command::Evaluate => run.evaluate()?.0,
        Command::Gradcheck => {
            let r = run.gradcheck()?;
            let verdict = if r.passed() { "passed" } else { "FAILED" };
            println!(
                "gradient check {verdict}: {} coordinates, max relative error {:.3e} (tolerance {:.0e})",
                r.checked, r.max_rel_error, r.tolerance
            );
            if let Some(w) = &r.worst {
                println!("worst: {}[{}] analytic {:.6e} numeric {:.6e}", w.param, w.index, w.analytic, w.numeric);
            }
            return Ok(r.passed());
        }
    };
    println!("{msg}");
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
