//! `iformer`: describe, run, check and train Inception Transformer models.

mod commands;

use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use iformer::Error;

#[derive(Parser)]
#[command(name = "iformer", version, about = "Inception Transformer backbones: costs, forward passes, spectra, gradient checks and a toy task")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
#[group(multiple = false)]
pub struct ModelArgs {
    /// Built-in configuration: iformer-s, iformer-b, iformer-l or iformer-micro.
    #[arg(long)]
    pub preset: Option<String>,
    /// TOML configuration file (a preset name is also accepted).
    #[arg(long)]
    pub config: Option<String>,
}

#[derive(Args, Clone)]
pub struct WeightArgs {
    /// Seed for fresh initialization; falls back to the config file's seed, then 0.
    #[arg(long, conflicts_with = "weights")]
    pub seed: Option<u64>,
    /// Weight container to load instead of initializing.
    #[arg(long)]
    pub weights: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Per-stage architecture, frequency ramp and parameter/FLOP totals.
    Describe {
        #[command(flatten)]
        model: ModelArgs,
        /// Resolution for FLOP counting; defaults to the config's input size.
        #[arg(long)]
        input_size: Option<usize>,
        /// Also write the per-layer cost breakdown to this CSV file.
        #[arg(long)]
        csv: Option<String>,
    },
    /// Inference forward pass printing per-stage shapes and checksums.
    Forward {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        weights: WeightArgs,
        /// Binary PPM (P6, maxval 255) input image.
        #[arg(long, conflicts_with = "random")]
        image: Option<String>,
        /// Standard normal input image at the config's input size.
        #[arg(long)]
        random: bool,
        /// Seed of the --random input.
        #[arg(long, default_value_t = 0)]
        input_seed: u64,
        /// Write stage K's output (1-4) as a weight container to --out.
        #[arg(long, requires = "out")]
        dump_stage: Option<usize>,
        #[arg(long)]
        out: Option<String>,
    },
    /// Radial amplitude spectrum of one mixer branch or block activation.
    Spectrum {
        #[command(flatten)]
        model: ModelArgs,
        #[command(flatten)]
        weights: WeightArgs,
        /// Stage, 1-based.
        #[arg(long)]
        stage: usize,
        /// Block within the stage, 0-based.
        #[arg(long, default_value_t = 0)]
        block: usize,
        /// input, attention, maxpool, dwconv or output.
        #[arg(long)]
        branch: String,
        /// Second branch of the same block to compare against.
        #[arg(long)]
        compare: Option<String>,
        /// Synthetic input when no --image is given: noise or constant.
        #[arg(long, default_value = "noise")]
        input: String,
        /// Binary PPM input image; implies --feed image.
        #[arg(long)]
        image: Option<String>,
        /// image: run the trunk on an image; block: feed the input straight into the block.
        #[arg(long, default_value = "image")]
        feed: String,
        #[arg(long, default_value_t = 0)]
        input_seed: u64,
        /// Batch size of synthetic inputs.
        #[arg(long, default_value_t = 2)]
        batch: usize,
        #[arg(long, default_value_t = iformer::analysis::DEFAULT_BINS)]
        bins: usize,
        /// Write the report to this CSV file.
        #[arg(long)]
        out: Option<String>,
    },
    /// Compare every gradient against central finite differences in 64-bit.
    Gradcheck {
        #[command(flatten)]
        model: ModelArgs,
        #[arg(long, default_value_t = 1e-5)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2)]
        batch: usize,
        /// Elements sampled per parameter group.
        #[arg(long, default_value_t = 3)]
        samples: usize,
        /// Perturb one group's analytic gradient to test the checker.
        #[arg(long)]
        sabotage: Option<String>,
    },
    /// Train iformer-micro on the frequency-band task.
    TrainToy {
        #[arg(long, default_value_t = 500)]
        steps: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 1e-3)]
        lr: f64,
        /// Output directory for loss.csv, accuracy.csv, weights.ifw and config.toml.
        #[arg(long)]
        out: String,
    },
    /// Train mixer and ramp variants at equal budget and tabulate accuracy.
    Ablate {
        /// Comma-separated variants; default all.
        #[arg(long, value_delimiter = ',')]
        variants: Vec<String>,
        /// Comma-separated seeds.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 500)]
        steps: usize,
        /// Accuracy table CSV.
        #[arg(long)]
        out: String,
    },
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Usage(_) | Error::Config(_) | Error::Io(_) => 2,
        Error::Dimension(_) | Error::Partition(_) | Error::Format(_) | Error::Corruption(_) | Error::Mismatch(_) => 3,
        Error::Numeric(_) => 4,
    }
}

fn run(cli: Cli) -> iformer::Result<u8> {
    commands::threads()?;
    match cli.command {
        Command::Describe { model, input_size, csv } => commands::describe(&model, input_size, csv.as_deref()),
        Command::Forward { model, weights, image, random, input_seed, dump_stage, out } => {
            commands::forward(&model, &weights, image.as_deref(), random, input_seed, dump_stage, out.as_deref())
        }
        Command::Spectrum { model, weights, stage, block, branch, compare, input, image, feed, input_seed, batch, bins, out } => {
            commands::spectrum(commands::SpectrumArgs {
                model: &model,
                weights: &weights,
                stage,
                block,
                branch: &branch,
                compare: compare.as_deref(),
                input: &input,
                image: image.as_deref(),
                feed: &feed,
                input_seed,
                batch,
                bins,
                out: out.as_deref(),
            })
        }
        Command::Gradcheck { model, tolerance, seed, batch, samples, sabotage } => {
            commands::gradcheck(&model, tolerance, seed, batch, samples, sabotage)
        }
        Command::TrainToy { steps, seed, lr, out } => commands::train_toy(steps, seed, lr, &out),
        Command::Ablate { variants, seeds, steps, out } => commands::ablate(&variants, &seeds, steps, &out),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => ExitCode::from(code),
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(exit_code(&err))
        }
    }
}
