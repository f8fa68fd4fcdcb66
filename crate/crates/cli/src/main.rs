mod commands;
mod dataset;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use btc_core::chord::VocabKind;
use clap::{Args, Parser, Subcommand};

/// Chord recognition with a bi-directional Transformer.
#[derive(Debug, Parser)]
#[command(name = "btc", version)]
struct Cli {
    /// Seed for data generation, initialization, shuffling and dropout.
    #[arg(long, global = true, env = "BTC_SEED", default_value_t = 0)]
    seed: u64,
    /// File of `key=value` lines overriding defaults; flags override the file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate synthetic songs as BTCF features plus `.lab` annotations.
    SynthData(SynthArgs),
    /// Train a model on a directory of songs.
    Train(TrainArgs),
    /// Predict a `.lab` file from BTCF features.
    Infer(InferArgs),
    /// Score estimated `.lab` files against references.
    Eval(EvalArgs),
    /// Dump attention maps of the first segment of a song.
    ExportAttention(ExportArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long)]
    pub songs: Option<usize>,
    #[arg(long)]
    pub vocab: Option<VocabKind>,
    /// Standard deviation of the additive Gaussian noise.
    #[arg(long)]
    pub noise: Option<f64>,
    /// Frames per song.
    #[arg(long)]
    pub frames: Option<usize>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Directory of `<id>.btcf` / `<id>.lab` pairs.
    #[arg(long)]
    pub data: PathBuf,
    /// Fraction of songs held out for validation.
    #[arg(long)]
    pub val_split: Option<f64>,
    /// `majmin` (25 labels) or `large` (170 labels); default majmin.
    #[arg(long)]
    pub vocab: Option<VocabKind>,
    /// Checkpoint path; the stats file and log are written beside it.
    #[arg(long)]
    pub out: PathBuf,
    /// Bi-directional layers N; default 8.
    #[arg(long)]
    pub layers: Option<usize>,
    /// Attention heads per block; default 4.
    #[arg(long)]
    pub heads: Option<usize>,
    /// Model width d; default 128.
    #[arg(long)]
    pub dim: Option<usize>,
    /// Convolutions per block; default 2.
    #[arg(long)]
    pub conv_repeats: Option<usize>,
    /// Odd convolution width; default 3.
    #[arg(long)]
    pub kernel: Option<usize>,
    /// Dropout rate; default 0.2.
    #[arg(long)]
    pub dropout: Option<f64>,
    /// Adam learning rate; default 1e-4.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Learning-rate factor after each non-improving epoch; default 0.95.
    #[arg(long)]
    pub decay: Option<f64>,
    /// Non-improving epochs before stopping; default 10.
    #[arg(long)]
    pub patience: Option<usize>,
    /// Segments per batch; default 16.
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Default 100.
    #[arg(long)]
    pub max_epochs: Option<usize>,
    /// Stop once validation accuracy reaches this value.
    #[arg(long)]
    pub target_accuracy: Option<f64>,
    /// Random pitch shifts of -5..=6 semitones during training.
    #[arg(long)]
    pub augment: bool,
}

#[derive(Debug, Args)]
pub struct InferArgs {
    #[arg(long)]
    pub model: PathBuf,
    /// A BTCF file, or a directory of them.
    #[arg(long)]
    pub features: PathBuf,
    /// A `.lab` file, or a directory when `--features` is one.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Directory of reference `.lab` files.
    #[arg(long = "ref")]
    pub reference: PathBuf,
    /// Directory of estimated `.lab` files with matching names.
    #[arg(long)]
    pub est: PathBuf,
    #[arg(long, default_value = "majmin")]
    pub vocab: VocabKind,
    /// Also write the CSV report here.
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub features: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// 1-based layers to export, e.g. `1,3,5,8`; all layers by default.
    #[arg(long, value_delimiter = ',')]
    pub layers: Option<Vec<usize>>,
    /// Also write 8-bit graymaps.
    #[arg(long)]
    pub pgm: bool,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let settings = match commands::Settings::load(cli.seed, cli.config.as_deref()) {
        Ok(s) => s,
        Err(e) => return fail(&e),
    };
    let result = match &cli.command {
        Command::SynthData(a) => commands::synth_data(a, &settings),
        Command::Train(a) => commands::train(a, &settings),
        Command::Infer(a) => commands::infer(a, &settings),
        Command::Eval(a) => commands::eval(a, &settings),
        Command::ExportAttention(a) => commands::export_attention(a, &settings),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => fail(&e),
    }
}

fn fail(e: &error::CliError) -> ExitCode {
    let message = e.to_string().replace('\n', " ");
    eprintln!("error[{}]: {message}", e.code());
    ExitCode::FAILURE
}
