use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use serde_json::Value;

use wavegate::cli;
use wavegate::datasets::SyntheticSpec;
use wavegate::error::Result;

#[derive(Parser)]
#[command(name = "wavegate", version, about = "EEG encoder training, retrieval and semantic scoring")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train an encoder from a JSON config.
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        run_dir: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Embed a dataset split with a trained checkpoint.
    Encode {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: String,
        #[arg(long)]
        subject: Option<String>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 256)]
        batch_size: usize,
    },
    /// Zero-shot top-k accuracy of embeddings against a gallery.
    Classify {
        #[arg(long)]
        embeddings: PathBuf,
        #[arg(long)]
        gallery: PathBuf,
        /// One gallery index per line, one line per query row.
        #[arg(long)]
        truth: PathBuf,
        #[arg(long = "k", default_values_t = [1, 5])]
        k: Vec<usize>,
    },
    /// Semantic scores of classifier outputs against a taxonomy.
    Score {
        #[arg(long)]
        taxonomy: PathBuf,
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the built-in property suite.
    Check {
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Generate a synthetic dataset.
    Synth {
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 8)]
        classes: usize,
        #[arg(long, default_value_t = 16)]
        per_class: usize,
        #[arg(long, default_value_t = 4)]
        test_per_class: usize,
        #[arg(long, default_value_t = 64)]
        channels: usize,
        #[arg(long, default_value_t = 100)]
        time: usize,
        #[arg(long, default_value_t = 64)]
        dim: usize,
        #[arg(long, default_value_t = 5.0)]
        snr: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
}

fn run(cmd: Command) -> Result<(bool, Value)> {
    let ok = |v| Ok((true, v));
    match cmd {
        Command::Train { config, run_dir, seed } => ok(cli::cmd_train(&config, &run_dir, seed)?),
        Command::Encode {
            checkpoint,
            manifest,
            split,
            subject,
            out,
            batch_size,
        } => ok(cli::cmd_encode(&checkpoint, &manifest, &split, subject.as_deref(), &out, batch_size)?),
        Command::Classify {
            embeddings,
            gallery,
            truth,
            k,
        } => ok(cli::cmd_classify(&embeddings, &gallery, &truth, &k)?),
        Command::Score {
            taxonomy,
            predictions,
            out,
        } => ok(cli::cmd_score(&taxonomy, &predictions, &out)?),
        Command::Check { seed } => cli::cmd_check(seed),
        Command::Synth {
            out_dir,
            classes,
            per_class,
            test_per_class,
            channels,
            time,
            dim,
            snr,
            seed,
        } => {
            let spec = SyntheticSpec {
                n_classes: classes,
                samples_per_class: per_class,
                channels,
                time,
                embedding_dim: dim,
                signal_to_noise: snr,
                seed,
            };
            ok(cli::cmd_synth(&out_dir, &spec, test_per_class)?)
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let args = Cli::parse();
    match run(args.command) {
        Ok((passed, out)) => {
            println!("{}", serde_json::to_string_pretty(&out).expect("json output"));
            if passed {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_usage() { 2 } else { 1 })
        }
    }
}
