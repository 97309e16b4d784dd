//! Seeded synthetic corpus: every token owns a smooth motion primitive of
//! `motif_len` frames, and an utterance is the concatenation of its tokens'
//! primitives plus Gaussian noise.
//!
//! Two knobs make the corpus useful for ablations:
//! * `variants > 1` gives each token several amplitude-scaled versions of its
//!   primitive, chosen per occurrence. A pure regression model can only learn
//!   their average, which under-articulates the motion.
//! * `manual_groups` / `face_groups` let several tokens share the same manual
//!   (or facial) motion, so that only the other channel disambiguates them.

use alloc::format;
use alloc::vec::Vec;
use core::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::pose::{
    ChannelLayout, Channels, Corpus, CorpusExample, CorpusLimits, PoseSequence, TokenSequence,
    Vocabulary,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthConfig {
    pub vocab_size: usize,
    pub motif_len: usize,
    pub layout: ChannelLayout,
    pub n_examples: usize,
    pub seed: u64,
    pub min_tokens: usize,
    pub max_tokens: usize,
    pub noise_std: f64,
    /// Amplitude variants per token (1 = unambiguous).
    pub variants: usize,
    /// Variant `v` scales the dynamic part of the primitive by `1 ± spread`.
    pub variant_spread: f64,
    /// Number of distinct manual motions; tokens share them round-robin.
    pub manual_groups: Option<usize>,
    /// Number of distinct facial motions; tokens share them round-robin.
    pub face_groups: Option<usize>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            vocab_size: 20,
            motif_len: 10,
            layout: ChannelLayout {
                manual_joints: 4,
                face_landmarks: 3,
            },
            n_examples: 300,
            seed: 1,
            min_tokens: 4,
            max_tokens: 6,
            noise_std: 0.01,
            variants: 1,
            variant_spread: 0.5,
            manual_groups: None,
            face_groups: None,
        }
    }
}

/// One token's motion for one variant: `motif_len` rows of `pose_dim` values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Primitive {
    pub token: usize,
    pub variant: usize,
    pub frames: Vec<Vec<f64>>,
}

/// Every primitive of a synthetic corpus, used by the back-translation oracle.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrimitiveBank {
    pub layout: ChannelLayout,
    pub motif_len: usize,
    pub primitives: Vec<Primitive>,
}

impl PrimitiveBank {
    pub fn get(&self, token: usize, variant: usize) -> Option<&Primitive> {
        self.primitives
            .iter()
            .find(|p| p.token == token && p.variant == variant)
    }

    pub fn select_channels(&self, channels: Channels) -> Result<PrimitiveBank> {
        let cols = self.layout.columns(channels);
        Ok(PrimitiveBank {
            layout: self.layout.select(channels)?,
            motif_len: self.motif_len,
            primitives: self
                .primitives
                .iter()
                .map(|p| Primitive {
                    token: p.token,
                    variant: p.variant,
                    frames: p.frames.iter().map(|r| r[cols.clone()].to_vec()).collect(),
                })
                .collect(),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub corpus: Corpus,
    pub vocabulary: Vocabulary,
    pub bank: PrimitiveBank,
    pub limits: CorpusLimits,
}

/// Per-column sinusoid mixture parameters.
struct Wave {
    offset: f64,
    amp: f64,
    freq: f64,
    phase: f64,
    amp2: f64,
    phase2: f64,
}

impl Wave {
    fn sample(rng: &mut impl Rng) -> Wave {
        Wave {
            offset: rng.random_range(-0.5..0.5),
            amp: rng.random_range(0.4..1.0),
            freq: if rng.random_bool(0.5) { 0.5 } else { 1.0 },
            phase: rng.random_range(0.0..2.0 * PI),
            amp2: rng.random_range(0.0..0.3),
            phase2: rng.random_range(0.0..2.0 * PI),
        }
    }

    fn eval(&self, t: f64, scale: f64) -> f64 {
        let s = self.amp * libm::sin(2.0 * PI * self.freq * t + self.phase)
            + self.amp2 * libm::sin(4.0 * PI * self.freq * t + self.phase2);
        self.offset + scale * s
    }
}

fn block_waves(seed: u64, block: u64, key: usize, width: usize) -> Vec<Wave> {
    let mix = seed
        .wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(block.wrapping_mul(0xD1B5_4A32_D192_ED03))
        .wrapping_add(key as u64);
    let mut rng = ChaCha8Rng::seed_from_u64(mix);
    (0..width).map(|_| Wave::sample(&mut rng)).collect()
}

fn variant_scale(variant: usize, variants: usize, spread: f64) -> f64 {
    if variants <= 1 {
        return 1.0;
    }
    // evenly spaced in [1 - spread, 1 + spread]
    1.0 - spread + 2.0 * spread * variant as f64 / (variants - 1) as f64
}

/// Builds the primitive bank for `config` without sampling any utterances.
pub fn primitive_bank(config: &SynthConfig) -> Result<PrimitiveBank> {
    validate(config)?;
    let layout = config.layout;
    let (mw, fw) = (layout.manual_width(), layout.face_width());
    let mut primitives = Vec::new();
    for token in 1..=config.vocab_size {
        let mkey = config.manual_groups.map_or(token, |g| (token - 1) % g);
        let fkey = config.face_groups.map_or(token, |g| (token - 1) % g);
        let manual = block_waves(config.seed, 1, mkey, mw);
        let face = block_waves(config.seed, 2, fkey, fw);
        for variant in 0..config.variants {
            let scale = variant_scale(variant, config.variants, config.variant_spread);
            let frames = (0..config.motif_len)
                .map(|f| {
                    let t = f as f64 / config.motif_len as f64;
                    manual
                        .iter()
                        .chain(face.iter())
                        .map(|w| w.eval(t, scale))
                        .collect()
                })
                .collect();
            primitives.push(Primitive {
                token,
                variant,
                frames,
            });
        }
    }
    Ok(PrimitiveBank {
        layout,
        motif_len: config.motif_len,
        primitives,
    })
}

fn validate(config: &SynthConfig) -> Result<()> {
    if config.vocab_size < 2 || config.motif_len < 2 {
        return Err(Error::contract("synthetic corpus needs vocab_size >= 2 and motif_len >= 2"));
    }
    if config.min_tokens == 0 || config.min_tokens > config.max_tokens {
        return Err(Error::contract("token count range must satisfy 1 <= min <= max"));
    }
    if config.variants == 0 || config.manual_groups == Some(0) || config.face_groups == Some(0) {
        return Err(Error::contract("variants and channel groups must be positive"));
    }
    ChannelLayout::new(config.layout.manual_joints, config.layout.face_landmarks)?;
    Ok(())
}

/// Synthetic vocabulary `w1 .. wV`.
pub fn synth_vocabulary(vocab_size: usize) -> Result<Vocabulary> {
    Vocabulary::from_words((1..=vocab_size).map(|k| format!("w{k}")))
}

/// Generates a deterministic corpus from `config`.
pub fn synth_corpus(config: &SynthConfig) -> Result<SynthCorpus> {
    let bank = primitive_bank(config)?;
    let vocabulary = synth_vocabulary(config.vocab_size)?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5EED));
    let noise = Normal::new(0.0, config.noise_std.max(0.0))
        .map_err(|_| Error::contract("invalid noise standard deviation"))?;
    let mut examples = Vec::with_capacity(config.n_examples);
    for i in 0..config.n_examples {
        let n_tok = rng.random_range(config.min_tokens..=config.max_tokens);
        let tokens: Vec<usize> = (0..n_tok)
            .map(|_| rng.random_range(1..=config.vocab_size))
            .collect();
        let mut rows = Vec::with_capacity(n_tok * config.motif_len);
        for &tok in &tokens {
            let variant = rng.random_range(0..config.variants);
            let prim = bank.get(tok, variant).expect("bank covers every token");
            for frame in &prim.frames {
                rows.push(
                    frame
                        .iter()
                        .map(|v| v + noise.sample(&mut rng))
                        .collect::<Vec<f64>>(),
                );
            }
        }
        examples.push(CorpusExample {
            id: format!("syn{i:05}"),
            source: TokenSequence(tokens),
            target: PoseSequence::from_rows(config.layout, rows)?,
        });
    }
    let corpus = Corpus::new(config.layout, examples)?;
    let limits = if corpus.is_empty() {
        CorpusLimits { u_max: 0, t_max: 0 }
    } else {
        corpus.limits()?
    };
    Ok(SynthCorpus {
        corpus,
        vocabulary,
        bank,
        limits,
    })
}

/// Mean squared distance between two equally sized frame blocks.
pub fn block_mse(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (ra, rb) in a.iter().zip(b) {
        for (x, y) in ra.iter().zip(rb) {
            s += (x - y) * (x - y);
            n += 1;
        }
    }
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> SynthConfig {
        SynthConfig {
            vocab_size: 12,
            n_examples: 20,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn deterministic() {
        assert_eq!(synth_corpus(&small()).unwrap(), synth_corpus(&small()).unwrap());
        let other = SynthConfig {
            seed: 2,
            ..small()
        };
        assert_ne!(synth_corpus(&small()).unwrap().corpus, synth_corpus(&other).unwrap().corpus);
    }

    #[test]
    fn length_is_tokens_times_motif() {
        let cfg = SynthConfig {
            min_tokens: 3,
            max_tokens: 3,
            ..small()
        };
        let s = synth_corpus(&cfg).unwrap();
        for e in &s.corpus.examples {
            assert_eq!(e.target.len(), 30);
            assert_eq!(*e.target.counters().last().unwrap(), 1.0);
        }
        assert_eq!(s.limits, CorpusLimits { u_max: 30, t_max: 3 });
    }

    #[test]
    fn primitives_are_separated() {
        let cfg = small();
        let bank = primitive_bank(&cfg).unwrap();
        let sigma2 = cfg.noise_std * cfg.noise_std;
        let mut min = f64::INFINITY;
        for a in &bank.primitives {
            for b in &bank.primitives {
                if a.token != b.token {
                    min = min.min(block_mse(&a.frames, &b.frames));
                }
            }
        }
        assert!(min > 10.0 * sigma2, "min separation {min}");
    }

    #[test]
    fn limits_dominate_examples() {
        let s = synth_corpus(&small()).unwrap();
        assert!(s.corpus.examples.iter().all(|e| s.limits.admits(e)));
    }

    #[test]
    fn shared_groups_share_channel_motion() {
        let cfg = SynthConfig {
            manual_groups: Some(6),
            face_groups: Some(4),
            ..small()
        };
        let bank = primitive_bank(&cfg).unwrap();
        let mw = cfg.layout.manual_width();
        let (a, b) = (bank.get(1, 0).unwrap(), bank.get(7, 0).unwrap());
        assert_eq!(a.frames[3][..mw], b.frames[3][..mw]);
        assert_ne!(a.frames[3][mw..], b.frames[3][mw..]);
        let c = bank.get(5, 0).unwrap();
        assert_eq!(a.frames[3][mw..], c.frames[3][mw..]);
    }

    #[test]
    fn variants_average_to_base_motion() {
        let cfg = SynthConfig {
            variants: 2,
            ..small()
        };
        let with = primitive_bank(&cfg).unwrap();
        let base = primitive_bank(&small()).unwrap();
        let (v0, v1) = (with.get(3, 0).unwrap(), with.get(3, 1).unwrap());
        let b = base.get(3, 0).unwrap();
        for ((r0, r1), rb) in v0.frames.iter().zip(&v1.frames).zip(&b.frames) {
            for ((x, y), z) in r0.iter().zip(r1).zip(rb) {
                assert!(((x + y) / 2.0 - z).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn rejects_degenerate_config() {
        let bad = SynthConfig {
            vocab_size: 1,
            ..small()
        };
        assert!(synth_corpus(&bad).is_err());
    }
}
