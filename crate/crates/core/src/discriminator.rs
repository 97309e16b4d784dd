//! Source-conditioned sequence discriminator.
//!
//! The padded pose sequence is projected to width `D_h`, the source tokens are
//! embedded to the same width and padded, and the two blocks are stacked along
//! time (pose rows first). A stack of valid 1D convolutions with leaky ReLU,
//! a temporal mean-pool, a linear layer and a sigmoid produce the realism
//! probability `d_p`.

use alloc::format;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, Var};
use crate::nn::Linear;
use crate::params::{xavier_with, Bound, ParamId, ParameterStore};
use crate::pose::{embed_and_pad_source_var, pad_rows, CorpusLimits, TokenSequence};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiscriminatorConfig {
    pub conv_layers: usize,
    pub conv_features: usize,
    pub filter_width: usize,
    pub leaky_slope: f64,
    /// Common width `D_h` of projected pose rows and source embeddings.
    pub hidden_dim: usize,
    pub pose_dim: usize,
    /// Source vocabulary size including padding.
    pub vocab_size: usize,
    pub limits: CorpusLimits,
}

impl DiscriminatorConfig {
    /// 3 convolution layers, 64 features, filter width 10.
    pub fn full(vocab_size: usize, pose_dim: usize, limits: CorpusLimits) -> Self {
        DiscriminatorConfig {
            conv_layers: 3,
            conv_features: 64,
            filter_width: 10,
            leaky_slope: 0.2,
            hidden_dim: 64,
            pose_dim,
            vocab_size,
            limits,
        }
    }

    /// Narrower profile for single-core experiments; depth and filter width unchanged.
    pub fn desk(vocab_size: usize, pose_dim: usize, limits: CorpusLimits) -> Self {
        DiscriminatorConfig {
            conv_features: 16,
            hidden_dim: 16,
            ..DiscriminatorConfig::full(vocab_size, pose_dim, limits)
        }
    }

    /// Rows of the conditioned feature matrix, `U_max + T_max`.
    pub fn feature_rows(&self) -> usize {
        self.limits.u_max + self.limits.t_max
    }

    pub fn validate(&self) -> Result<()> {
        if self.conv_layers == 0 || self.conv_features == 0 || self.hidden_dim == 0 {
            return Err(Error::contract("discriminator sizes must be positive"));
        }
        if self.filter_width == 0 || self.pose_dim == 0 || self.vocab_size < 2 {
            return Err(Error::contract("discriminator sizes must be positive"));
        }
        if !(self.leaky_slope > 0.0 && self.leaky_slope < 1.0) {
            return Err(Error::contract("leaky slope must lie in (0, 1)"));
        }
        let shrink = self.conv_layers * (self.filter_width - 1);
        if self.feature_rows() <= shrink {
            return Err(Error::contract(format!(
                "U_max + T_max = {} is too short for {} convolutions of width {}",
                self.feature_rows(),
                self.conv_layers,
                self.filter_width
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy)]
struct Conv {
    kernels: ParamId,
    bias: ParamId,
}

#[derive(Debug, Clone)]
pub struct Discriminator {
    config: DiscriminatorConfig,
    store: ParameterStore,
    src_weight: ParamId,
    src_bias: ParamId,
    pose_proj: Linear,
    convs: Vec<Conv>,
    head: Linear,
}

impl Discriminator {
    pub fn new(config: DiscriminatorConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut s = ParameterStore::new();
        let h = config.hidden_dim;
        let src_weight = s.add("disc.src_embed.w", xavier_with(&[config.vocab_size, h], &mut rng));
        let src_bias = s.add("disc.src_embed.b", Tensor::zeros(&[h]));
        let pose_proj = Linear::new(&mut s, "disc.pose_proj", config.pose_dim, h, &mut rng);
        let mut in_ch = h;
        let mut convs = Vec::with_capacity(config.conv_layers);
        for l in 0..config.conv_layers {
            let shape = [config.conv_features, config.filter_width, in_ch];
            convs.push(Conv {
                kernels: s.add(format!("disc.conv{l}.kernels"), xavier_with(&shape, &mut rng)),
                bias: s.add(format!("disc.conv{l}.bias"), Tensor::zeros(&[config.conv_features])),
            });
            in_ch = config.conv_features;
        }
        let head = Linear::new(&mut s, "disc.head", config.conv_features, 1, &mut rng);
        Ok(Discriminator {
            config,
            store: s,
            src_weight,
            src_bias,
            pose_proj,
            convs,
            head,
        })
    }

    pub fn config(&self) -> &DiscriminatorConfig {
        &self.config
    }

    pub fn store(&self) -> &ParameterStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParameterStore {
        &mut self.store
    }

    /// `H = [project(Y_pad) ; X_pad]`, a `(U_max + T_max) × D_h` matrix.
    pub fn conditioned_features_on(
        &self,
        g: &mut Graph,
        p: &Bound,
        tokens: &TokenSequence,
        poses: Var,
    ) -> Result<Var> {
        let lim = self.config.limits;
        let pv = g.value(poses);
        if pv.cols() != self.config.pose_dim {
            return Err(Error::contract(format!(
                "pose width {} differs from discriminator pose_dim {}",
                pv.cols(),
                self.config.pose_dim
            )));
        }
        if pv.rows() > lim.u_max {
            return Err(Error::contract(format!(
                "{} frames exceed U_max {}",
                pv.rows(),
                lim.u_max
            )));
        }
        let y_pad = pad_rows(g, poses, lim.u_max)?;
        let y_proj = self.pose_proj.forward(g, p, y_pad)?;
        let x_pad = embed_and_pad_source_var(
            g,
            tokens,
            p.var(self.src_weight),
            p.var(self.src_bias),
            lim.t_max,
        )?;
        g.concat_rows(&[y_proj, x_pad])
    }

    /// Realism probability `d_p ∈ (0, 1)` as a `1×1` node.
    pub fn discriminate_on(
        &self,
        g: &mut Graph,
        p: &Bound,
        tokens: &TokenSequence,
        poses: Var,
    ) -> Result<Var> {
        let mut x = self.conditioned_features_on(g, p, tokens, poses)?;
        for c in &self.convs {
            let y = g.conv1d(x, p.var(c.kernels), 1)?;
            let y = g.add_row(y, p.var(c.bias))?;
            x = g.leaky_relu(y, self.config.leaky_slope);
        }
        let pooled = g.mean_rows(x)?;
        let logit = self.head.forward(g, p, pooled)?;
        Ok(g.sigmoid(logit))
    }

    pub fn build_conditioned_features(&self, tokens: &TokenSequence, poses: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let y = g.constant(poses.clone());
        let h = self.conditioned_features_on(&mut g, &p, tokens, y)?;
        Ok(g.value(h).clone())
    }

    pub fn discriminate(&self, tokens: &TokenSequence, poses: &Tensor) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.store.bind(&mut g, false);
        let y = g.constant(poses.clone());
        let d = self.discriminate_on(&mut g, &p, tokens, y)?;
        Ok(g.value(d).item())
    }
}
