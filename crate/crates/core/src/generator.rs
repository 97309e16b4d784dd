//! Progressive transformer: a symbolic encoder over source tokens and a
//! continuous auto-regressive decoder that emits a pose vector and a progress
//! counter per step.
//!
//! Decoder inputs are `D_y + 1` wide (pose followed by counter). The first
//! input is a fixed begin-of-sequence row of zeros with counter 0; training
//! feeds the ground-truth frames shifted right by one, generation feeds back
//! its own predictions until the counter crosses the stop threshold.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::{
    mask_bias, positional_encoding, FeedForward, LayerNorm, Linear, Mode, MultiHeadAttention,
};
use crate::params::{xavier_with, Bound, ParamId, ParameterStore};
use crate::pose::{ChannelLayout, CorpusExample, PoseFrame, PoseSequence, TokenSequence, PAD};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorConfig {
    pub layers: usize,
    pub heads: usize,
    pub embed_dim: usize,
    pub ff_dim: usize,
    /// Output frame layout; its width is the pose dimension `D_y`.
    pub layout: ChannelLayout,
    /// Source vocabulary size including padding.
    pub vocab_size: usize,
    pub dropout: f64,
    /// Generation halts after the first frame whose counter reaches this value.
    pub stop_threshold: f64,
}

impl GeneratorConfig {
    /// 2 layers, 4 heads, 512-wide embeddings.
    pub fn full(vocab_size: usize, layout: ChannelLayout) -> Self {
        GeneratorConfig {
            layers: 2,
            heads: 4,
            embed_dim: 512,
            ff_dim: 2048,
            layout,
            vocab_size,
            dropout: 0.1,
            stop_threshold: 0.98,
        }
    }

    /// Small profile for single-core experiments. Dropout is off: at this
    /// width it prevents the motif boundaries from being learned.
    pub fn desk(vocab_size: usize, layout: ChannelLayout) -> Self {
        GeneratorConfig {
            layers: 2,
            heads: 2,
            embed_dim: 32,
            ff_dim: 128,
            dropout: 0.0,
            ..GeneratorConfig::full(vocab_size, layout)
        }
    }

    pub fn pose_dim(&self) -> usize {
        self.layout.pose_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.heads == 0 || self.embed_dim % self.heads != 0 {
            return Err(Error::contract(format!(
                "embed_dim {} is not divisible by {} heads",
                self.embed_dim, self.heads
            )));
        }
        if self.layers == 0 || self.pose_dim() == 0 || self.vocab_size < 2 || self.ff_dim == 0 {
            return Err(Error::contract("generator sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::contract("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
struct EncoderLayer {
    attn: MultiHeadAttention,
    norm1: LayerNorm,
    ff: FeedForward,
    norm2: LayerNorm,
}

#[derive(Debug, Clone)]
struct DecoderLayer {
    self_attn: MultiHeadAttention,
    norm1: LayerNorm,
    cross_attn: MultiHeadAttention,
    norm2: LayerNorm,
    ff: FeedForward,
    norm3: LayerNorm,
}

#[derive(Debug, Clone)]
struct Layout {
    src_embed: ParamId,
    encoder: Vec<EncoderLayer>,
    input_proj: Linear,
    decoder: Vec<DecoderLayer>,
    head: Linear,
}

/// Encoder output kept on a graph.
#[derive(Debug, Clone)]
pub struct EncodedVar {
    pub memory: Var,
    pub source_mask: Vec<bool>,
}

/// Encoder output detached from any graph.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedSource {
    pub memory: Tensor,
    /// True exactly on non-padding positions.
    pub source_mask: Vec<bool>,
}

/// Result of free-running generation.
#[derive(Debug, Clone, PartialEq)]
pub struct Generation {
    /// Frames with counters made monotone (running maximum) so the sequence is valid.
    pub sequence: PoseSequence,
    /// Counters exactly as predicted.
    pub raw_counters: Vec<f64>,
    /// Set when `max_frames` was reached before the counter crossed the threshold.
    pub truncated: bool,
}

#[derive(Debug, Clone)]
pub struct Generator {
    config: GeneratorConfig,
    store: ParameterStore,
    layout: Layout,
}

impl Generator {
    pub fn new(config: GeneratorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        let (d, ff) = (config.embed_dim, config.ff_dim);
        let src_embed = s.add("gen.src_embed", xavier_with(&[config.vocab_size, d], &mut rng));
        let encoder = (0..config.layers)
            .map(|l| EncoderLayer {
                attn: MultiHeadAttention::new(&mut s, &format!("gen.enc{l}.attn"), d, config.heads, &mut rng),
                norm1: LayerNorm::new(&mut s, &format!("gen.enc{l}.norm1"), d),
                ff: FeedForward::new(&mut s, &format!("gen.enc{l}.ff"), d, ff, &mut rng),
                norm2: LayerNorm::new(&mut s, &format!("gen.enc{l}.norm2"), d),
            })
            .collect();
        let input_proj = Linear::new(&mut s, "gen.input_proj", config.pose_dim() + 1, d, &mut rng);
        let decoder = (0..config.layers)
            .map(|l| DecoderLayer {
                self_attn: MultiHeadAttention::new(&mut s, &format!("gen.dec{l}.self"), d, config.heads, &mut rng),
                norm1: LayerNorm::new(&mut s, &format!("gen.dec{l}.norm1"), d),
                cross_attn: MultiHeadAttention::new(&mut s, &format!("gen.dec{l}.cross"), d, config.heads, &mut rng),
                norm2: LayerNorm::new(&mut s, &format!("gen.dec{l}.norm2"), d),
                ff: FeedForward::new(&mut s, &format!("gen.dec{l}.ff"), d, ff, &mut rng),
                norm3: LayerNorm::new(&mut s, &format!("gen.dec{l}.norm3"), d),
            })
            .collect();
        let head = Linear::new(&mut s, "gen.head", d, config.pose_dim() + 1, &mut rng);
        Ok(Generator {
            config,
            store: s,
            layout: Layout {
                src_embed,
                encoder,
                input_proj,
                decoder,
                head,
            },
        })
    }

    pub fn config(&self) -> &GeneratorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    /// Encoder pass on `g`. Padding tokens are masked out of attention.
    pub fn encode_on(
        &self,
        g: &mut Graph,
        p: &Bound,
        tokens: &TokenSequence,
        mode: &mut Mode<'_>,
    ) -> Result<EncodedVar> {
        if tokens.is_empty() || tokens.content_len() == 0 {
            return Err(Error::contract("cannot encode an empty token sequence"));
        }
        let t = tokens.len();
        let d = self.config.embed_dim;
        let mask: Vec<bool> = tokens.ids().iter().map(|&id| id != PAD).collect();
        let bias = mask_bias(t, t, |_, j| mask[j]);
        let x = g.gather_rows(p.var(self.layout.src_embed), tokens.ids())?;
        let x = g.scale(x, libm::sqrt(d as f64));
        let x = g.add_const(x, &positional_encoding(t, d))?;
        let mut x = mode.dropout(g, x)?;
        for layer in &self.layout.encoder {
            let a = layer.attn.forward(g, p, x, x, &bias)?;
            let a = mode.dropout(g, a)?;
            let r = g.add(x, a)?;
            x = layer.norm1.forward(g, p, r)?;
            let f = layer.ff.forward(g, p, x)?;
            let f = mode.dropout(g, f)?;
            let r = g.add(x, f)?;
            x = layer.norm2.forward(g, p, r)?;
        }
        Ok(EncodedVar {
            memory: x,
            source_mask: mask,
        })
    }

    /// Decoder pass over `inputs: n × (D_y + 1)` with causal masking.
    /// Returns `(pose n×D_y, counter n×1)`; row `i` predicts frame `i + 1`.
    pub fn decode_on(
        &self,
        g: &mut Graph,
        p: &Bound,
        enc: &EncodedVar,
        inputs: Var,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Var)> {
        let dy = self.config.pose_dim();
        let width = g.value(inputs).cols();
        if width != dy + 1 {
            return Err(Error::contract(format!(
                "decoder input width {width} differs from pose_dim + 1 = {}",
                dy + 1
            )));
        }
        let n = g.value(inputs).rows();
        let t = enc.source_mask.len();
        let causal = mask_bias(n, n, |i, j| j <= i);
        let cross = mask_bias(n, t, |_, j| enc.source_mask[j]);
        let x = self.layout.input_proj.forward(g, p, inputs)?;
        let x = g.add_const(x, &positional_encoding(n, self.config.embed_dim))?;
        let mut x = mode.dropout(g, x)?;
        for layer in &self.layout.decoder {
            let a = layer.self_attn.forward(g, p, x, x, &causal)?;
            let a = mode.dropout(g, a)?;
            let r = g.add(x, a)?;
            x = layer.norm1.forward(g, p, r)?;
            let c = layer.cross_attn.forward(g, p, x, enc.memory, &cross)?;
            let c = mode.dropout(g, c)?;
            let r = g.add(x, c)?;
            x = layer.norm2.forward(g, p, r)?;
            let f = layer.ff.forward(g, p, x)?;
            let f = mode.dropout(g, f)?;
            let r = g.add(x, f)?;
            x = layer.norm3.forward(g, p, r)?;
        }
        let out = self.layout.head.forward(g, p, x)?;
        let pose = g.slice_cols(out, 0, dy)?;
        let logit = g.slice_cols(out, dy, dy + 1)?;
        let counter = g.sigmoid(logit);
        Ok((pose, counter))
    }

    /// Begin-of-sequence row followed by the first `U − 1` ground-truth frames.
    pub fn teacher_inputs(&self, target: &PoseSequence) -> Result<Tensor> {
        let dy = self.config.pose_dim();
        if target.layout().pose_dim() != dy {
            return Err(Error::contract(format!(
                "target width {} differs from generator pose_dim {dy}",
                target.layout().pose_dim()
            )));
        }
        let u = target.len();
        let mut data = vec![0.0; u * (dy + 1)];
        for (i, f) in target.frames()[..u - 1].iter().enumerate() {
            let row = &mut data[(i + 1) * (dy + 1)..(i + 2) * (dy + 1)];
            row[..dy].copy_from_slice(&f.values);
            row[dy] = f.counter;
        }
        Tensor::matrix(u, dy + 1, data)
    }

    /// Teacher-forced pass on `g`; all `U` steps in one causally masked decode.
    pub fn forward_on(
        &self,
        g: &mut Graph,
        p: &Bound,
        example: &CorpusExample,
        mode: &mut Mode<'_>,
    ) -> Result<(Var, Var)> {
        let enc = self.encode_on(g, p, &example.source, mode)?;
        let inputs = g.constant(self.teacher_inputs(&example.target)?);
        self.decode_on(g, p, &enc, inputs, mode)
    }

    /// Predicted `U × D_y` poses and `U` counters under teacher forcing (no dropout).
    pub fn forward_teacher_forced(&self, example: &CorpusExample) -> Result<(Tensor, Vec<f64>)> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let (pose, counter) = self.forward_on(&mut g, &p, example, &mut Mode::Eval)?;
        Ok((g.value(pose).clone(), g.value(counter).data().to_vec()))
    }

    pub fn encode_source(&self, tokens: &TokenSequence) -> Result<EncodedSource> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let enc = self.encode_on(&mut g, &p, tokens, &mut Mode::Eval)?;
        Ok(EncodedSource {
            memory: g.value(enc.memory).clone(),
            source_mask: enc.source_mask,
        })
    }

    /// Predicts frame `u` from the `u − 1` previous `[pose, counter]` rows.
    pub fn decode_step(&self, prev: &[Vec<f64>], memory: &EncodedSource) -> Result<(Vec<f64>, f64)> {
        let dy = self.config.pose_dim();
        let mut data = vec![0.0; dy + 1];
        for (i, row) in prev.iter().enumerate() {
            if row.len() != dy + 1 {
                return Err(Error::contract(format!(
                    "previous frame {i} has width {} but the decoder expects {}",
                    row.len(),
                    dy + 1
                )));
            }
            data.extend_from_slice(row);
        }
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let inputs = g.constant(Tensor::matrix(prev.len() + 1, dy + 1, data)?);
        let enc = EncodedVar {
            memory: g.constant(memory.memory.clone()),
            source_mask: memory.source_mask.clone(),
        };
        let (pose, counter) = self.decode_on(&mut g, &p, &enc, inputs, &mut Mode::Eval)?;
        let last = prev.len();
        Ok((g.value(pose).row(last).to_vec(), g.value(counter).data()[last]))
    }

    /// Free-running generation with counter-based stopping.
    pub fn generate(&self, tokens: &TokenSequence, max_frames: usize) -> Result<Generation> {
        if max_frames == 0 {
            return Err(Error::contract("max_frames must be at least 1"));
        }
        let memory = self.encode_source(tokens)?;
        let mut rows: Vec<Vec<f64>> = Vec::new();
        let mut raw = Vec::new();
        let mut truncated = true;
        while rows.len() < max_frames {
            let (pose, counter) = self.decode_step(&rows, &memory)?;
            let mut row = pose;
            row.push(counter);
            rows.push(row);
            raw.push(counter);
            if counter >= self.config.stop_threshold {
                truncated = false;
                break;
            }
        }
        let layout = self.config.layout;
        let mut running = 0.0f64;
        let frames = rows
            .into_iter()
            .map(|mut r| {
                let c = r.pop().unwrap_or(0.0);
                running = running.max(c).clamp(0.0, 1.0);
                PoseFrame {
                    values: r,
                    counter: running,
                }
            })
            .collect();
        Ok(Generation {
            sequence: PoseSequence::new(layout, frames)?,
            raw_counters: raw,
            truncated,
        })
    }
}
