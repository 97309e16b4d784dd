//! Joint training of generator and discriminator.
//!
//! Per batch the generator runs teacher-forced, the discriminator scores the
//! real pair and the generated pair, and both take one Adam step on the same
//! batch. The generator loss is `λ_reg · L_reg + λ_gan · L_adv` with the
//! adversarial gradient flowing through a frozen copy of the discriminator;
//! the discriminator sees the generated poses detached.

use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::discriminator::Discriminator;
use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::graph::{Graph, Var};
use crate::nn::Mode;
use crate::params::AdamState;
use crate::pose::{Channels, Corpus, CorpusExample, PoseSequence, TokenSequence};
use crate::tensor::Tensor;

/// Discriminator probabilities are clamped into `[DP_CLAMP, 1 − DP_CLAMP]` before logs.
pub const DP_CLAMP: f64 = 1e-7;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum GanMode {
    /// Generator minimises `log(1 − d_p)` on its samples.
    MinimaxLiteral,
    /// Generator minimises `−log d_p` on its samples.
    #[default]
    NonSaturating,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub lambda_reg: f64,
    pub lambda_gan: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub lr: f64,
    pub seed: u64,
    pub gan_mode: GanMode,
    pub channels: Channels,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda_reg: 100.0,
            lambda_gan: 0.001,
            batch_size: 8,
            epochs: 200,
            lr: 1e-3,
            seed: 1,
            gan_mode: GanMode::NonSaturating,
            channels: Channels::Both,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_reg >= 0.0 && self.lambda_gan >= 0.0) {
            return Err(Error::contract("loss weights must be non-negative"));
        }
        if self.batch_size == 0 || !(self.lr > 0.0) {
            return Err(Error::contract("batch size and learning rate must be positive"));
        }
        Ok(())
    }
}

/// Means over one epoch. Discriminator columns are zero when training without one.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub l_reg: f64,
    pub l_adv: f64,
    pub l_d: f64,
    pub dp_real: f64,
    pub dp_fake: f64,
    /// Filled in by the caller's observer; the core has no clock.
    pub wall_clock_secs: f64,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainReport {
    pub epochs: Vec<EpochRecord>,
}

/// `L_reg`: mean squared error over every pose value and counter of the sequence.
pub fn regression_loss(
    pred: &Tensor,
    target: &Tensor,
    pred_counter: &[f64],
    target_counter: &[f64],
) -> Result<f64> {
    if pred.shape() != target.shape() {
        return Err(Error::Shape {
            op: "regression_loss",
            left: pred.shape().to_vec(),
            right: target.shape().to_vec(),
        });
    }
    if pred_counter.len() != target_counter.len() || pred_counter.len() != pred.rows() {
        return Err(Error::contract("counter lengths must match the frame count"));
    }
    let mut s = 0.0;
    for (a, b) in pred.data().iter().zip(target.data()) {
        s += (a - b) * (a - b);
    }
    for (a, b) in pred_counter.iter().zip(target_counter) {
        s += (a - b) * (a - b);
    }
    Ok(s / (pred.len() + pred_counter.len()) as f64)
}

fn clamp_dp(d: f64) -> f64 {
    d.clamp(DP_CLAMP, 1.0 - DP_CLAMP)
}

/// Adversarial term of the generator loss for a generated-sample score.
pub fn adversarial_loss(d_p_fake: f64, mode: GanMode) -> f64 {
    let d = clamp_dp(d_p_fake);
    match mode {
        GanMode::NonSaturating => -libm::log(d),
        GanMode::MinimaxLiteral => libm::log(1.0 - d),
    }
}

/// `λ_reg · L_reg + λ_gan · L_adv`.
pub fn generator_loss(l_reg: f64, d_p_fake: f64, config: &TrainConfig) -> f64 {
    config.lambda_reg * l_reg + config.lambda_gan * adversarial_loss(d_p_fake, config.gan_mode)
}

/// `−[log d_real + log(1 − d_fake)]`.
pub fn discriminator_loss(d_p_real: f64, d_p_fake: f64) -> f64 {
    -(libm::log(clamp_dp(d_p_real)) + libm::log(1.0 - clamp_dp(d_p_fake)))
}

fn sequence_target(target: &PoseSequence) -> Result<Tensor> {
    let d = target.layout().pose_dim();
    let mut data = Vec::with_capacity(target.len() * (d + 1));
    for f in target.frames() {
        data.extend_from_slice(&f.values);
        data.push(f.counter);
    }
    Tensor::matrix(target.len(), d + 1, data)
}

/// Graph form of [`regression_loss`].
pub fn regression_loss_on(g: &mut Graph, pose: Var, counter: Var, target: &PoseSequence) -> Result<Var> {
    let pred = g.concat_cols(&[pose, counter])?;
    let t = g.constant(sequence_target(target)?);
    g.mse(pred, t)
}

/// Graph form of [`adversarial_loss`]; averages when given several scores.
pub fn adversarial_loss_on(g: &mut Graph, d_fake: Var, mode: GanMode) -> Var {
    let d = g.clamp(d_fake, DP_CLAMP, 1.0 - DP_CLAMP);
    let l = match mode {
        GanMode::NonSaturating => {
            let l = g.log(d);
            g.scale(l, -1.0)
        }
        GanMode::MinimaxLiteral => {
            let neg = g.scale(d, -1.0);
            let one_minus = g.add_scalar(neg, 1.0);
            g.log(one_minus)
        }
    };
    g.mean(l)
}

/// Graph form of [`discriminator_loss`]; averages when given several score pairs.
pub fn discriminator_loss_on(g: &mut Graph, d_real: Var, d_fake: Var) -> Result<Var> {
    let r = g.clamp(d_real, DP_CLAMP, 1.0 - DP_CLAMP);
    let f = g.clamp(d_fake, DP_CLAMP, 1.0 - DP_CLAMP);
    let lr = g.log(r);
    let nf = g.scale(f, -1.0);
    let one_minus = g.add_scalar(nf, 1.0);
    let lf = g.log(one_minus);
    let s = g.add(lr, lf)?;
    let s = g.mean(s);
    Ok(g.scale(s, -1.0))
}

#[derive(Debug, Clone, Copy, Default)]
struct Sums {
    l_reg: f64,
    l_adv: f64,
    l_d: f64,
    dp_real: f64,
    dp_fake: f64,
    n: usize,
}

/// Owns optimiser state and RNG streams across epochs.
pub struct Trainer<'a> {
    config: TrainConfig,
    generator: &'a mut Generator,
    discriminator: Option<&'a mut Discriminator>,
    gen_opt: AdamState,
    disc_opt: Option<AdamState>,
    shuffle_rng: ChaCha8Rng,
    dropout_rng: ChaCha8Rng,
    epoch: usize,
}

impl<'a> Trainer<'a> {
    pub fn new(
        generator: &'a mut Generator,
        discriminator: Option<&'a mut Discriminator>,
        config: TrainConfig,
    ) -> Result<Self> {
        config.validate()?;
        let gen_opt = AdamState::new(generator.store(), config.lr);
        let disc_opt = discriminator
            .as_ref()
            .map(|d| AdamState::new(d.store(), config.lr));
        Ok(Trainer {
            shuffle_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x00A1_1CE5),
            dropout_rng: ChaCha8Rng::seed_from_u64(config.seed ^ 0x0D50_0B00),
            config,
            generator,
            discriminator,
            gen_opt,
            disc_opt,
            epoch: 0,
        })
    }

    pub fn epochs_done(&self) -> usize {
        self.epoch
    }

    pub fn generator(&self) -> &Generator {
        self.generator
    }

    pub fn discriminator(&self) -> Option<&Discriminator> {
        self.discriminator.as_deref()
    }

    /// Runs one pass over `corpus` (already channel-selected) in seeded random order.
    pub fn train_epoch(&mut self, corpus: &Corpus) -> Result<EpochRecord> {
        if corpus.is_empty() {
            return Err(Error::contract("cannot train on an empty corpus"));
        }
        if corpus.layout != self.generator.config().layout {
            return Err(Error::contract("corpus layout differs from the generator layout"));
        }
        let mut order: Vec<usize> = (0..corpus.len()).collect();
        order.shuffle(&mut self.shuffle_rng);
        let mut sums = Sums::default();
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch: Vec<&CorpusExample> = chunk.iter().map(|&i| &corpus.examples[i]).collect();
            self.step_batch(&batch, b, &mut sums)?;
        }
        self.epoch += 1;
        let n = sums.n as f64;
        Ok(EpochRecord {
            epoch: self.epoch,
            l_reg: sums.l_reg / n,
            l_adv: sums.l_adv / n,
            l_d: sums.l_d / n,
            dp_real: sums.dp_real / n,
            dp_fake: sums.dp_fake / n,
            wall_clock_secs: 0.0,
        })
    }

    fn step_batch(&mut self, batch: &[&CorpusExample], batch_idx: usize, sums: &mut Sums) -> Result<()> {
        let scale = 1.0 / batch.len() as f64;
        let cfg = self.config.clone();
        let dropout = self.generator.config().dropout;
        let non_finite = |what| Error::NonFinite {
            epoch: self.epoch + 1,
            batch: batch_idx,
            what,
        };
        for ex in batch {
            // generator update: discriminator parameters enter as constants
            let mut g = Graph::new();
            let gp = self.generator.store().bind(&mut g, true);
            let mut mode = Mode::Train {
                dropout,
                rng: &mut self.dropout_rng,
            };
            let (pose, counter) = self.generator.forward_on(&mut g, &gp, ex, &mut mode)?;
            let l_reg = regression_loss_on(&mut g, pose, counter, &ex.target)?;
            let weighted_reg = g.scale(l_reg, cfg.lambda_reg);
            let mut l_adv_value = 0.0;
            let loss = match self.discriminator.as_deref() {
                Some(disc) => {
                    let dp = disc.store().bind(&mut g, false);
                    let d_fake = disc.discriminate_on(&mut g, &dp, &ex.source, pose)?;
                    let l_adv = adversarial_loss_on(&mut g, d_fake, cfg.gan_mode);
                    l_adv_value = g.value(l_adv).item();
                    let weighted_adv = g.scale(l_adv, cfg.lambda_gan);
                    g.add(weighted_reg, weighted_adv)?
                }
                None => weighted_reg,
            };
            if !g.value(loss).is_finite() {
                return Err(non_finite("generator loss"));
            }
            let grads = g.backward(loss)?;
            self.generator.store_mut().accumulate(&gp, &grads, scale);
            sums.l_reg += g.value(l_reg).item();
            sums.l_adv += l_adv_value;
            sums.n += 1;
            let fake = g.value(pose).clone();
            drop(g);

            // discriminator update on the detached sample
            if let Some(disc) = self.discriminator.as_deref_mut() {
                debug_assert!(disc.store().grads_are_zero() || batch.len() > 1);
                let mut g = Graph::new();
                let dp = disc.store().bind(&mut g, true);
                let real = g.constant(ex.target.to_matrix());
                let fake = g.constant(fake);
                let d_real = disc.discriminate_on(&mut g, &dp, &ex.source, real)?;
                let d_fake = disc.discriminate_on(&mut g, &dp, &ex.source, fake)?;
                let l_d = discriminator_loss_on(&mut g, d_real, d_fake)?;
                if !g.value(l_d).is_finite() {
                    return Err(non_finite("discriminator loss"));
                }
                let grads = g.backward(l_d)?;
                disc.store_mut().accumulate(&dp, &grads, scale);
                sums.l_d += g.value(l_d).item();
                sums.dp_real += g.value(d_real).item();
                sums.dp_fake += g.value(d_fake).item();
            }
        }
        self.gen_opt.step(self.generator.store_mut())?;
        if let (Some(disc), Some(opt)) = (self.discriminator.as_deref_mut(), self.disc_opt.as_mut()) {
            opt.step(disc.store_mut())?;
        }
        Ok(())
    }
}

/// Trains for `config.epochs` epochs. `observer` sees each epoch record and may
/// fill in timing; returning an error from it aborts training.
pub fn train(
    corpus: &Corpus,
    generator: &mut Generator,
    discriminator: Option<&mut Discriminator>,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&mut EpochRecord) -> Result<()>,
) -> Result<TrainReport> {
    let selected = corpus.select_channels(config.channels)?;
    let mut trainer = Trainer::new(generator, discriminator, config.clone())?;
    let mut report = TrainReport::default();
    for _ in 0..config.epochs {
        let mut rec = trainer.train_epoch(&selected)?;
        observer(&mut rec)?;
        report.epochs.push(rec);
    }
    Ok(report)
}

/// A labelled (source, pose matrix) pair for discriminator-only training.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoredPair {
    pub source: TokenSequence,
    pub poses: Tensor,
}

/// Fits the discriminator alone on fixed real and fake pairs. Returns the mean
/// `(d_p(real), d_p(fake))` seen during each epoch.
pub fn train_discriminator(
    disc: &mut Discriminator,
    real: &[ScoredPair],
    fake: &[ScoredPair],
    epochs: usize,
    batch_size: usize,
    lr: f64,
    seed: u64,
) -> Result<Vec<(f64, f64)>> {
    if real.is_empty() || fake.is_empty() || batch_size == 0 {
        return Err(Error::contract("discriminator training needs real and fake pairs"));
    }
    let mut opt = AdamState::new(disc.store(), lr);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = real.len().max(fake.len());
    let mut history = Vec::with_capacity(epochs);
    for epoch in 0..epochs {
        let mut order: Vec<usize> = (0..n).collect();
        order.shuffle(&mut rng);
        let (mut sr, mut sf) = (0.0, 0.0);
        for (b, chunk) in order.chunks(batch_size).enumerate() {
            let scale = 1.0 / chunk.len() as f64;
            for &i in chunk {
                let (r, f) = (&real[i % real.len()], &fake[i % fake.len()]);
                let mut g = Graph::new();
                let dp = disc.store().bind(&mut g, true);
                let rv = g.constant(r.poses.clone());
                let fv = g.constant(f.poses.clone());
                let d_real = disc.discriminate_on(&mut g, &dp, &r.source, rv)?;
                let d_fake = disc.discriminate_on(&mut g, &dp, &f.source, fv)?;
                let l = discriminator_loss_on(&mut g, d_real, d_fake)?;
                if !g.value(l).is_finite() {
                    return Err(Error::NonFinite {
                        epoch: epoch + 1,
                        batch: b,
                        what: "discriminator loss",
                    });
                }
                let grads = g.backward(l)?;
                disc.store_mut().accumulate(&dp, &grads, scale);
                sr += g.value(d_real).item();
                sf += g.value(d_fake).item();
            }
            opt.step(disc.store_mut())?;
        }
        history.push((sr / n as f64, sf / n as f64));
    }
    Ok(history)
}
