//! Run configuration read from a TOML file.
//!
//! A single top-level `seed` drives everything: corpus synthesis and the
//! train/dev/test split use it directly, generator initialization and the
//! training streams use it directly, and the discriminator is initialized
//! from `seed + 1`.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use spgan_core::discriminator::DiscriminatorConfig;
use spgan_core::generator::GeneratorConfig;
use spgan_core::pose::{ChannelLayout, Channels, CorpusLimits};
use spgan_core::synth::SynthConfig;
use spgan_core::training::{GanMode, TrainConfig};

use crate::error::{io_err, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    pub vocab_size: usize,
    pub motif_len: usize,
    pub manual_joints: usize,
    pub face_landmarks: usize,
    pub n_examples: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub noise_std: f64,
    pub variants: usize,
    pub variant_spread: f64,
    pub manual_groups: Option<usize>,
    pub face_groups: Option<usize>,
}

impl Default for SynthSettings {
    fn default() -> Self {
        let c = SynthConfig::default();
        SynthSettings {
            vocab_size: c.vocab_size,
            motif_len: c.motif_len,
            manual_joints: c.layout.manual_joints,
            face_landmarks: c.layout.face_landmarks,
            n_examples: c.n_examples,
            min_tokens: c.min_tokens,
            max_tokens: c.max_tokens,
            noise_std: c.noise_std,
            variants: c.variants,
            variant_spread: c.variant_spread,
            manual_groups: c.manual_groups,
            face_groups: c.face_groups,
        }
    }
}

impl SynthSettings {
    pub fn to_core(&self, seed: u64) -> SynthConfig {
        SynthConfig {
            vocab_size: self.vocab_size,
            motif_len: self.motif_len,
            layout: ChannelLayout {
                manual_joints: self.manual_joints,
                face_landmarks: self.face_landmarks,
            },
            n_examples: self.n_examples,
            seed,
            min_tokens: self.min_tokens,
            max_tokens: self.max_tokens,
            noise_std: self.noise_std,
            variants: self.variants,
            variant_spread: self.variant_spread,
            manual_groups: self.manual_groups,
            face_groups: self.face_groups,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GeneratorSettings {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    pub dropout: f64,
    pub stop_threshold: f64,
}

impl Default for GeneratorSettings {
    fn default() -> Self {
        let c = GeneratorConfig::desk(2, ChannelLayout { manual_joints: 1, face_landmarks: 0 });
        GeneratorSettings {
            layers: c.layers,
            heads: c.heads,
            embed_dim: c.embed_dim,
            ff_dim: c.ff_dim,
            dropout: c.dropout,
            stop_threshold: c.stop_threshold,
        }
    }
}

impl GeneratorSettings {
    pub fn to_core(&self, vocab_size: usize, layout: ChannelLayout) -> GeneratorConfig {
        GeneratorConfig {
            layers: self.layers,
            heads: self.heads,
            embed_dim: self.embed_dim,
            ff_dim: self.ff_dim,
            layout,
            vocab_size,
            dropout: self.dropout,
            stop_threshold: self.stop_threshold,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DiscriminatorSettings {
    /// Without a discriminator training is regression-only.
    pub enabled: bool,
    pub conv_layers: usize,
    pub conv_features: usize,
    pub filter_width: usize,
    pub leaky_slope: f64,
    pub hidden_dim: usize,
}

impl Default for DiscriminatorSettings {
    fn default() -> Self {
        let c = DiscriminatorConfig::desk(2, 1, CorpusLimits { u_max: 1, t_max: 1 });
        DiscriminatorSettings {
            enabled: true,
            conv_layers: c.conv_layers,
            conv_features: c.conv_features,
            filter_width: c.filter_width,
            leaky_slope: c.leaky_slope,
            hidden_dim: c.hidden_dim,
        }
    }
}

impl DiscriminatorSettings {
    pub fn to_core(&self, vocab_size: usize, pose_dim: usize, limits: CorpusLimits) -> DiscriminatorConfig {
        DiscriminatorConfig {
            conv_layers: self.conv_layers,
            conv_features: self.conv_features,
            filter_width: self.filter_width,
            leaky_slope: self.leaky_slope,
            hidden_dim: self.hidden_dim,
            pose_dim,
            vocab_size,
            limits,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSettings {
    pub lambda_reg: f64,
    pub lambda_gan: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub gan_mode: GanMode,
    pub channels: Channels,
    /// Write an intermediate checkpoint every this many epochs; 0 disables.
    pub checkpoint_every: usize,
}

impl Default for TrainSettings {
    fn default() -> Self {
        let c = TrainConfig::default();
        TrainSettings {
            lambda_reg: c.lambda_reg,
            lambda_gan: c.lambda_gan,
            batch_size: 1,
            epochs: c.epochs,
            lr: c.lr,
            gan_mode: c.gan_mode,
            channels: c.channels,
            checkpoint_every: 0,
        }
    }
}

impl TrainSettings {
    pub fn to_core(&self, seed: u64) -> TrainConfig {
        TrainConfig {
            lambda_reg: self.lambda_reg,
            lambda_gan: self.lambda_gan,
            batch_size: self.batch_size,
            epochs: self.epochs,
            lr: self.lr,
            seed,
            gan_mode: self.gan_mode,
            channels: self.channels,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    /// `train`, `dev` or `test`.
    pub split: String,
    /// Frame budget for free-running generation.
    pub max_frames: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            split: "test".into(),
            max_frames: 60,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Corpus, vocabulary and primitive-bank files.
    pub data_dir: PathBuf,
    /// Training report, checkpoints and metric reports.
    pub run_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Paths {
            data_dir: "data".into(),
            run_dir: "run".into(),
        }
    }
}

impl Paths {
    pub fn corpus(&self) -> PathBuf {
        self.data_dir.join("corpus.txt")
    }

    pub fn vocabulary(&self) -> PathBuf {
        self.data_dir.join("vocab.txt")
    }

    pub fn bank(&self) -> PathBuf {
        self.data_dir.join("primitives.txt")
    }

    pub fn train_report(&self) -> PathBuf {
        self.run_dir.join("train.csv")
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.run_dir.join("final.ckpt")
    }

    pub fn epoch_checkpoint(&self, epoch: usize) -> PathBuf {
        self.run_dir.join(format!("epoch_{epoch:04}.ckpt"))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub paths: Paths,
    pub synth: SynthSettings,
    pub generator: GeneratorSettings,
    pub discriminator: DiscriminatorSettings,
    pub train: TrainSettings,
    pub eval: EvalSettings,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 1,
            paths: Paths::default(),
            synth: SynthSettings::default(),
            generator: GeneratorSettings::default(),
            discriminator: DiscriminatorSettings::default(),
            train: TrainSettings::default(),
            eval: EvalSettings::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml(path: &Path, text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|e| Error::Config {
            path: path.to_path_buf(),
            msg: e.to_string(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("run config serializes")
    }

    /// Reads a config file; relative paths inside it are taken relative to
    /// the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = std::fs::read_to_string(path).map_err(io_err(path))?;
        let mut c = RunConfig::from_toml(path, &text)?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [&mut c.paths.data_dir, &mut c.paths.run_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(c)
    }

    pub fn discriminator_seed(&self) -> u64 {
        self.seed.wrapping_add(1)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(Path::new("x"), &c.to_toml()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn edited_config_round_trips() {
        let mut c = RunConfig::default();
        c.seed = 9;
        c.synth.manual_groups = Some(3);
        c.train.gan_mode = GanMode::MinimaxLiteral;
        c.train.channels = Channels::NonmanualOnly;
        c.discriminator.enabled = false;
        c.eval.split = "dev".into();
        let text = c.to_toml();
        assert!(text.contains("channels = \"nonmanual_only\""), "{text}");
        assert_eq!(RunConfig::from_toml(Path::new("x"), &text).unwrap(), c);
    }

    #[test]
    fn partial_file_takes_defaults_and_typos_are_rejected() {
        let c = RunConfig::from_toml(Path::new("x"), "seed = 4\n[train]\nepochs = 2\n").unwrap();
        assert_eq!((c.seed, c.train.epochs), (4, 2));
        assert_eq!(c.synth, SynthSettings::default());
        let err = RunConfig::from_toml(Path::new("r.toml"), "[train]\nepochs_ = 2\n").unwrap_err();
        assert!(err.to_string().contains("r.toml"), "{err}");
    }

    #[test]
    fn settings_match_core_defaults() {
        let c = RunConfig::default();
        assert_eq!(c.synth.to_core(1), SynthConfig::default());
        let layout = ChannelLayout::new(4, 3).unwrap();
        assert_eq!(c.generator.to_core(21, layout), GeneratorConfig::desk(21, layout));
    }
}
