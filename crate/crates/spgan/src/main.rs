use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Context;
use clap::{Args, Parser, Subcommand, ValueEnum};
use spgan::commands::{self, EvalSource, TokenInput};
use spgan::config::RunConfig;
use spgan_core::pose::Channels;

#[derive(Parser)]
#[command(name = "spgan", version, about = "Adversarial sign pose production on a synthetic corpus")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Clone, Copy, ValueEnum)]
enum ChannelArg {
    Manual,
    Nonmanual,
    Both,
}

impl From<ChannelArg> for Channels {
    fn from(c: ChannelArg) -> Self {
        match c {
            ChannelArg::Manual => Channels::ManualOnly,
            ChannelArg::Nonmanual => Channels::NonmanualOnly,
            ChannelArg::Both => Channels::Both,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Writes the synthetic corpus, vocabulary and primitive bank.
    Synth {
        #[command(flatten)]
        common: Common,
        /// Output directory, overriding `paths.data_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains on the train split; writes train.csv and checkpoints.
    Train {
        #[command(flatten)]
        common: Common,
        /// Run directory, overriding `paths.run_dir`.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        lambda_gan: Option<f64>,
        #[arg(long, value_enum)]
        channels: Option<ChannelArg>,
        /// Regression-only training.
        #[arg(long)]
        no_discriminator: bool,
    },
    /// Generates one pose sequence and an SVG strip of it.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Space-separated source words.
        #[arg(long, conflicts_with = "tokens_file", required_unless_present = "tokens_file")]
        tokens: Option<String>,
        /// File holding the source words.
        #[arg(long)]
        tokens_file: Option<PathBuf>,
        /// Pose rows are written here, the SVG next to it.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum)]
        channels: Option<ChannelArg>,
    },
    /// Back-translation metrics on one split.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long, required_unless_present = "ground_truth")]
        checkpoint: Option<PathBuf>,
        /// Score the corpus poses themselves instead of a model.
        #[arg(long, conflicts_with = "checkpoint")]
        ground_truth: bool,
        /// train, dev or test; overrides `eval.split`.
        #[arg(long)]
        split: Option<String>,
        /// Directory for the metric files, default the run directory.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, value_enum)]
        channels: Option<ChannelArg>,
    },
}

fn load(common: &Common, channels: Option<ChannelArg>) -> anyhow::Result<RunConfig> {
    let mut cfg = RunConfig::load(&common.config)?;
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(c) = channels {
        cfg.train.channels = c.into();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Synth { common, out } => {
            let mut cfg = load(&common, None)?;
            if let Some(o) = out {
                cfg.paths.data_dir = o;
            }
            let limits = commands::cmd_synth(&cfg)?;
            println!("U_max {} T_max {}", limits.u_max, limits.t_max);
        }
        Command::Train {
            common,
            out,
            lambda_gan,
            channels,
            no_discriminator,
        } => {
            let mut cfg = load(&common, channels)?;
            if let Some(o) = out {
                cfg.paths.run_dir = o;
            }
            if let Some(l) = lambda_gan {
                cfg.train.lambda_gan = l;
            }
            if no_discriminator {
                cfg.discriminator.enabled = false;
            }
            let report = commands::cmd_train(&cfg).context("training failed")?;
            if let Some(last) = report.epochs.last() {
                println!("epoch {} l_reg {} l_adv {} l_d {}", last.epoch, last.l_reg, last.l_adv, last.l_d);
            }
        }
        Command::Generate {
            common,
            checkpoint,
            tokens,
            tokens_file,
            out,
            channels,
        } => {
            let cfg = load(&common, channels)?;
            let input = match (tokens, tokens_file) {
                (Some(t), _) => TokenInput::Words(t),
                (None, Some(f)) => TokenInput::File(f),
                (None, None) => unreachable!("clap requires one token source"),
            };
            let g = commands::cmd_generate(&cfg, &checkpoint, &input, &out)?;
            println!("{} frames{}", g.sequence.len(), if g.truncated { " (truncated)" } else { "" });
        }
        Command::Eval {
            common,
            checkpoint,
            ground_truth,
            split,
            out,
            channels,
        } => {
            let mut cfg = load(&common, channels)?;
            if let Some(s) = split {
                cfg.eval.split = s;
            }
            let source = match checkpoint {
                Some(p) if !ground_truth => EvalSource::Checkpoint(p),
                _ => EvalSource::GroundTruth,
            };
            let dir = out.unwrap_or_else(|| cfg.paths.run_dir.clone());
            let r = commands::cmd_eval(&cfg, &source, &dir)?;
            println!("BLEU-4 {}", r.bleu_4);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("SPGAN_LOG", "warn"))
        .format_timestamp(None)
        .init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
