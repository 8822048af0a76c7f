//! `adafnio`: synthetic data, training, inference, evaluation and the
//! resolution-transfer experiment.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use adafnio_core::data::Motion;
use adafnio_core::train::LossKind;
use anyhow::Result;
use clap::{Args, Parser, Subcommand, ValueEnum};

use config::RunConfig;

#[derive(Parser, Debug)]
#[command(
    name = "adafnio",
    version,
    about = "Video frame interpolation with a Fourier neural operator and adaptive warping"
)]
struct Cli {
    /// TOML run configuration; flags override its values.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seeds model initialization, data order and synthetic data.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for evaluation.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Writes a synthetic triplet dataset and its manifest.
    GenData(GenDataArgs),
    /// Trains a model, writing checkpoints and a per-epoch JSON log.
    Train(TrainArgs),
    /// Predicts the middle frame of two frames.
    Infer(InferArgs),
    /// Scores a checkpoint on triplets, drop schedules and resolutions.
    Eval(EvalArgs),
    /// Scores a checkpoint at multiples of its training resolution.
    Restest(RestestArgs),
}

#[derive(Args, Debug)]
struct GenDataArgs {
    #[arg(long)]
    count: Option<usize>,
    #[arg(long)]
    resolution: Option<usize>,
    #[arg(long)]
    channels: Option<usize>,
    #[arg(long)]
    max_displacement: Option<f64>,
    #[arg(long)]
    band_limit: Option<f64>,
    #[arg(long)]
    components: Option<usize>,
    #[arg(long, value_enum)]
    motion: Option<MotionArg>,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum MotionArg {
    Translate,
    RotatePhase,
}

#[derive(Clone, Copy, Debug, ValueEnum)]
enum LossArg {
    L1,
    L2,
}

#[derive(Args, Debug)]
struct TrainArgs {
    /// Triplet dataset directory; synthetic data is generated when absent.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long, value_enum)]
    loss: Option<LossArg>,
    /// Save every this many epochs; 0 saves only at the end.
    #[arg(long)]
    checkpoint_every: Option<usize>,
    /// Continue from a checkpoint written by an earlier run.
    #[arg(long)]
    resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct InferArgs {
    checkpoint: PathBuf,
    frame0: PathBuf,
    frame1: PathBuf,
    /// Output image; `.pgm`/`.ppm` select NetPBM, anything else PNG.
    output: PathBuf,
}

#[derive(Args, Debug)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Triplet dataset for drop 1; synthetic sequences are used otherwise.
    #[arg(long)]
    data: Option<PathBuf>,
    /// Drop setting (power of two); repeatable.
    #[arg(long = "drop")]
    drops: Vec<usize>,
    /// Grid side for a synthetic resolution row; repeatable.
    #[arg(long = "resolution")]
    resolutions: Vec<usize>,
}

#[derive(Args, Debug)]
struct RestestArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Comma-separated multiples of the training resolution.
    #[arg(long, value_delimiter = ',')]
    scales: Vec<f64>,
}

impl Cli {
    /// Defaults, then the config file, then flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut c = RunConfig::load(self.config.as_deref())?;
        if let Some(seed) = self.seed {
            c.seed = seed;
            c.data.synthetic.seed = seed;
        }
        if let Some(t) = self.threads {
            c.training.threads = t;
        }
        match &self.command {
            Command::GenData(a) => {
                let s = &mut c.data.synthetic;
                set(&mut s.count, a.count);
                set(&mut s.resolution, a.resolution);
                set(&mut s.channels, a.channels);
                set(&mut s.max_displacement, a.max_displacement);
                set(&mut s.band_limit, a.band_limit);
                set(&mut s.components, a.components);
                set(
                    &mut s.motion,
                    a.motion.map(|m| match m {
                        MotionArg::Translate => Motion::Translate,
                        MotionArg::RotatePhase => Motion::RotatePhase,
                    }),
                );
            }
            Command::Train(a) => {
                if a.data.is_some() {
                    c.data.dataset = a.data.clone();
                }
                let t = &mut c.training;
                set(&mut t.epochs, a.epochs);
                set(&mut t.batch_size, a.batch_size);
                set(&mut t.optimizer.lr, a.lr);
                set(&mut t.checkpoint_every, a.checkpoint_every);
                set(
                    &mut t.loss,
                    a.loss.map(|l| match l {
                        LossArg::L1 => LossKind::L1,
                        LossArg::L2 => LossKind::L2,
                    }),
                );
            }
            Command::Eval(a) => {
                if a.data.is_some() {
                    c.data.dataset = a.data.clone();
                }
                if !a.drops.is_empty() || !a.resolutions.is_empty() {
                    c.evaluation.drop = a.drops.clone();
                    c.evaluation.resolutions = a.resolutions.clone();
                }
            }
            Command::Restest(a) => {
                if !a.scales.is_empty() {
                    c.evaluation.scales = a.scales.clone();
                }
            }
            Command::Infer(_) => {}
        }
        c.validate()?;
        Ok(c)
    }
}

fn set<T>(slot: &mut T, value: Option<T>) {
    if let Some(v) = value {
        *slot = v;
    }
}

fn run(cli: &Cli) -> Result<()> {
    let config = cli.resolve()?;
    let out = cli.out.as_deref();
    match &cli.command {
        Command::GenData(_) => commands::gen_data(&config, out),
        Command::Train(a) => commands::train(&config, out, a.resume.as_deref()),
        Command::Infer(a) => commands::infer(&a.checkpoint, &a.frame0, &a.frame1, &a.output),
        Command::Eval(a) => commands::eval(config, out, &a.checkpoint),
        Command::Restest(a) => commands::restest(config, out, &a.checkpoint),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
