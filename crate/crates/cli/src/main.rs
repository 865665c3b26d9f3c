use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use wcse_core::checkpoint::Checkpoint;
use wcse_core::pipeline::ablate::{ablate, Sweep};
use wcse_core::pipeline::data::{anisotropic_embeddings, generate_synthetic, Dataset, TrainingData};
use wcse_core::pipeline::train::{dev_pairs, evaluate, train_with_progress};
use wcse_core::pipeline::whiten::{whiten_file, PostWhitening};
use wcse_core::pipeline::TrainConfig;
use wcse_core::{Error, Result};

#[derive(Parser)]
#[command(name = "wcse", version, about = "Shuffled group whitening and multi-positive contrastive training on toy data")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic clustered dataset
    Gen(GenArgs),
    /// Whiten an embedding file and report uniformity before and after
    Whiten(WhitenArgs),
    /// Train the encoder and write the best checkpoint
    Train(TrainArgs),
    /// Evaluate a checkpoint on the development split
    Eval(EvalArgs),
    /// Train once per value of a swept setting
    Ablate(AblateArgs),
}

/// Every training configuration key as an optional override.
#[derive(Args, Default)]
struct ConfigArgs {
    /// Configuration file (`key = value` lines)
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    temperature: Option<String>,
    #[arg(long)]
    lambda_m: Option<String>,
    #[arg(long)]
    num_positives: Option<String>,
    #[arg(long)]
    group_size: Option<String>,
    #[arg(long)]
    shuffled: Option<String>,
    #[arg(long)]
    momentum: Option<String>,
    #[arg(long)]
    ridge: Option<String>,
    #[arg(long)]
    learning_rate: Option<String>,
    #[arg(long)]
    sgd_momentum: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    steps: Option<String>,
    #[arg(long)]
    eval_every: Option<String>,
    #[arg(long)]
    loss_kind: Option<String>,
    #[arg(long)]
    aug_kind: Option<String>,
    #[arg(long)]
    eval_whitening: Option<String>,
    #[arg(long)]
    input_dim: Option<String>,
    #[arg(long)]
    hidden_dim: Option<String>,
    #[arg(long)]
    embed_dim: Option<String>,
    #[arg(long)]
    dropout: Option<String>,
    #[arg(long)]
    num_clusters: Option<String>,
    #[arg(long)]
    per_cluster: Option<String>,
    #[arg(long)]
    dev_per_cluster: Option<String>,
    #[arg(long)]
    noise_scale: Option<String>,
    #[arg(long)]
    eval_pairs: Option<String>,
    #[arg(long)]
    data_seed: Option<String>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<TrainConfig> {
        let mut config = match &self.config {
            Some(path) => TrainConfig::load(path)?,
            None => TrainConfig::default(),
        };
        let overrides = [
            ("seed", &self.seed),
            ("temperature", &self.temperature),
            ("lambda_m", &self.lambda_m),
            ("num_positives", &self.num_positives),
            ("group_size", &self.group_size),
            ("shuffled", &self.shuffled),
            ("momentum", &self.momentum),
            ("ridge", &self.ridge),
            ("learning_rate", &self.learning_rate),
            ("sgd_momentum", &self.sgd_momentum),
            ("batch_size", &self.batch_size),
            ("steps", &self.steps),
            ("eval_every", &self.eval_every),
            ("loss_kind", &self.loss_kind),
            ("aug_kind", &self.aug_kind),
            ("eval_whitening", &self.eval_whitening),
            ("input_dim", &self.input_dim),
            ("hidden_dim", &self.hidden_dim),
            ("embed_dim", &self.embed_dim),
            ("dropout", &self.dropout),
            ("num_clusters", &self.num_clusters),
            ("per_cluster", &self.per_cluster),
            ("dev_per_cluster", &self.dev_per_cluster),
            ("noise_scale", &self.noise_scale),
            ("eval_pairs", &self.eval_pairs),
            ("data_seed", &self.data_seed),
        ];
        for (key, value) in overrides {
            if let Some(v) = value {
                config.set(key, v)?;
            }
        }
        config.validate()?;
        Ok(config)
    }
}

#[derive(Args)]
struct GenArgs {
    /// Output embedding file; labels and centers go to `<out>.labels` and `<out>.centers`
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 8)]
    num_clusters: usize,
    #[arg(long, default_value_t = 64)]
    per_cluster: usize,
    #[arg(long, default_value_t = 32)]
    dim: usize,
    #[arg(long, default_value_t = 0.3)]
    noise_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Push the samples into an anisotropic cone
    #[arg(long)]
    anisotropic: bool,
}

#[derive(Args)]
struct WhitenArgs {
    /// Input embedding file
    #[arg(long)]
    input: PathBuf,
    /// Output embedding file
    #[arg(long)]
    out: PathBuf,
    /// pca, zca, group or sgw
    #[arg(long, default_value = "zca")]
    kind: String,
    #[arg(long, default_value_t = 8)]
    group_size: usize,
    /// Ridge relative to the mean variance of each whitened block
    #[arg(long, default_value_t = 1e-5)]
    ridge: f64,
    /// Seed of the channel shuffle for `sgw`
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Dataset written by `gen`; synthetic data from the configuration when absent
    #[arg(long)]
    data: Option<PathBuf>,
    /// Checkpoint path for the best evaluation
    #[arg(long)]
    out: PathBuf,
    /// Report path (records are also printed)
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Report path (the metrics line is also printed)
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct AblateArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: Option<PathBuf>,
    /// Setting to sweep, e.g. `group_size=2,4,8` or `aug_kind=dropout_only,sgw`
    #[arg(long)]
    sweep: String,
    /// Comparison table path (rows are also printed)
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_data(path: Option<&Path>, config: &TrainConfig) -> Result<TrainingData> {
    match path {
        Some(p) => TrainingData::from_dataset(&Dataset::load(p)?),
        None => TrainingData::synthetic(config),
    }
}

/// Writes to stdout and, when given, to a file, flushing after every line.
struct Sink {
    file: Option<BufWriter<File>>,
}

impl Sink {
    fn open(path: Option<&Path>) -> Result<Self> {
        Ok(Self {
            file: path.map(File::create).transpose()?.map(BufWriter::new),
        })
    }

    fn line(&mut self, line: &str) -> Result<()> {
        println!("{line}");
        if let Some(f) = &mut self.file {
            writeln!(f, "{line}")?;
            f.flush()?;
        }
        Ok(())
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Gen(args) => {
            let ds = if args.anisotropic {
                anisotropic_embeddings(args.num_clusters, args.per_cluster, args.dim, args.noise_scale, args.seed)?
            } else {
                generate_synthetic(args.num_clusters, args.per_cluster, args.dim, args.noise_scale, args.seed)?
            };
            ds.save(&args.out)?;
            println!("rows={},dim={},clusters={}", ds.samples.rows(), ds.samples.cols(), ds.centers.rows());
        }
        Command::Whiten(args) => {
            let kind: PostWhitening = args.kind.parse()?;
            let outcome = whiten_file(&args.input, &args.out, kind, args.group_size, args.ridge, args.seed)?;
            println!("{}", outcome.to_line());
        }
        Command::Train(args) => {
            let config = args.config.resolve()?;
            let data = load_data(args.data.as_deref(), &config)?;
            let mut sink = Sink::open(args.report.as_deref())?;
            let mut sink_error = None;
            let outcome = train_with_progress(&config, &data, |record| {
                if let Err(e) = sink.line(&record.to_line()) {
                    sink_error.get_or_insert(e);
                }
            })?;
            if let Some(e) = sink_error {
                return Err(e);
            }
            sink.line(&outcome.report.summary_line())?;
            outcome.best.save(&args.out)?;
        }
        Command::Eval(args) => {
            let config = args.config.resolve()?;
            let checkpoint = Checkpoint::load(&args.checkpoint)?;
            if checkpoint.encoder.input_dim() != config.input_dim {
                return Err(Error::Config(format!(
                    "checkpoint expects {} input features, configuration says {}",
                    checkpoint.encoder.input_dim(),
                    config.input_dim
                )));
            }
            let data = load_data(args.data.as_deref(), &config)?;
            let pairs = dev_pairs(&data, &config)?;
            let metrics = evaluate(&checkpoint, &data, &pairs, config.ridge)?;
            Sink::open(args.out.as_deref())?.line(&metrics.to_line())?;
        }
        Command::Ablate(args) => {
            let config = args.config.resolve()?;
            let sweep: Sweep = args.sweep.parse()?;
            let data = load_data(args.data.as_deref(), &config)?;
            let mut sink = Sink::open(args.out.as_deref())?;
            ablate(&config, &data, &sweep, |line| sink.line(line))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(if e.is_numeric() { 2 } else { 1 })
        }
    }
}
