//! The `synth`, `train`, `generate` and `eval` commands as library calls.

use std::path::{Path, PathBuf};
use std::time::Instant;

use spgan_core::discriminator::Discriminator;
use spgan_core::evaluation::{evaluate_model, MetricReport, PoseSource};
use spgan_core::generator::{Generation, Generator};
use spgan_core::pose::{Corpus, CorpusLimits, Vocabulary};
use spgan_core::synth::{synth_corpus, PrimitiveBank};
use spgan_core::tensor::Tensor;
use spgan_core::training::{TrainReport, Trainer};

use crate::checkpoint;
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::formats::{self, write_text};
use crate::render::render_svg;
use crate::report;

/// Panels in the SVG strip written by `generate`.
pub const RENDER_PANELS: usize = 8;

pub fn cmd_synth(cfg: &RunConfig) -> Result<CorpusLimits> {
    let s = synth_corpus(&cfg.synth.to_core(cfg.seed))?;
    formats::save_corpus(&cfg.paths.corpus(), &s.corpus)?;
    formats::save_vocabulary(&cfg.paths.vocabulary(), &s.vocabulary)?;
    formats::save_bank(&cfg.paths.bank(), &s.bank)?;
    Ok(s.limits)
}

/// Corpus files as written by `synth`, with channels already selected.
pub struct Data {
    pub corpus: Corpus,
    pub vocabulary: Vocabulary,
    pub bank: PrimitiveBank,
    /// Limits of the whole corpus; they size the discriminator.
    pub limits: CorpusLimits,
}

pub fn load_data(cfg: &RunConfig) -> Result<Data> {
    let corpus_path = cfg.paths.corpus();
    if !corpus_path.exists() {
        return Err(Error::Io {
            path: corpus_path,
            source: std::io::Error::new(std::io::ErrorKind::NotFound, "corpus not found; run `spgan synth` first"),
        });
    }
    let full = formats::load_corpus(&corpus_path)?;
    let vocabulary = formats::load_vocabulary(&cfg.paths.vocabulary())?;
    let bank = formats::load_bank(&cfg.paths.bank())?;
    let channels = cfg.train.channels;
    Ok(Data {
        limits: full.limits()?,
        corpus: full.select_channels(channels)?,
        bank: bank.select_channels(channels)?,
        vocabulary,
    })
}

pub fn build_generator(cfg: &RunConfig, data: &Data) -> Result<Generator> {
    let gc = cfg.generator.to_core(data.vocabulary.len(), data.corpus.layout);
    Ok(Generator::new(gc, cfg.seed)?)
}

pub fn build_discriminator(cfg: &RunConfig, data: &Data) -> Result<Option<Discriminator>> {
    if !cfg.discriminator.enabled {
        return Ok(None);
    }
    let dc = cfg
        .discriminator
        .to_core(data.vocabulary.len(), data.corpus.layout.pose_dim(), data.limits);
    Ok(Some(Discriminator::new(dc, cfg.discriminator_seed())?))
}

fn model_tensors(g: &Generator, d: Option<&Discriminator>) -> Vec<(String, Tensor)> {
    let mut t = g.store().named();
    if let Some(d) = d {
        t.extend(d.store().named());
    }
    t
}

/// Trains on the train split and writes the report CSV plus checkpoints.
/// The CSV is rewritten after every epoch, so an aborted run keeps its history.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainReport> {
    let data = load_data(cfg)?;
    let train = data.corpus.split(cfg.seed).train;
    let mut gen = build_generator(cfg, &data)?;
    let mut disc = build_discriminator(cfg, &data)?;
    // channels were selected when loading
    let mut tc = cfg.train.to_core(cfg.seed);
    tc.channels = Default::default();
    let mut trainer = Trainer::new(&mut gen, disc.as_mut(), tc)?;
    let mut report = TrainReport::default();
    let paths = &cfg.paths;
    log::info!(
        "training on {} examples for {} epochs (λ_GAN {}, discriminator {})",
        train.len(),
        cfg.train.epochs,
        cfg.train.lambda_gan,
        if cfg.discriminator.enabled { "on" } else { "off" }
    );
    let start = Instant::now();
    for _ in 0..cfg.train.epochs {
        let mut rec = trainer.train_epoch(&train)?;
        rec.wall_clock_secs = start.elapsed().as_secs_f64();
        log::info!(
            "epoch {} l_reg {:.5} l_adv {:.4} l_d {:.4} d_p real {:.3} fake {:.3} ({:.1}s)",
            rec.epoch,
            rec.l_reg,
            rec.l_adv,
            rec.l_d,
            rec.dp_real,
            rec.dp_fake,
            rec.wall_clock_secs
        );
        report.epochs.push(rec);
        report::write_train_csv(&paths.train_report(), &report.epochs)?;
        let e = trainer.epochs_done();
        if cfg.train.checkpoint_every > 0 && e % cfg.train.checkpoint_every == 0 {
            let t = model_tensors(trainer.generator(), trainer.discriminator());
            checkpoint::save(&paths.epoch_checkpoint(e), &t)?;
        }
    }
    drop(trainer);
    report::write_train_csv(&paths.train_report(), &report.epochs)?;
    checkpoint::save(&paths.final_checkpoint(), &model_tensors(&gen, disc.as_ref()))?;
    Ok(report)
}

pub fn load_generator(cfg: &RunConfig, data: &Data, ckpt: &Path) -> Result<Generator> {
    let mut gen = build_generator(cfg, data)?;
    let tensors = checkpoint::load(ckpt)?;
    gen.store_mut().load_named(&tensors).map_err(|e| Error::Checkpoint {
        origin: ckpt.display().to_string(),
        msg: format!("does not match the configured generator: {e}"),
    })?;
    Ok(gen)
}

/// Where `generate` reads its source sentence from.
pub enum TokenInput {
    Words(String),
    File(PathBuf),
}

/// Generates poses for one sentence, writing `out` (pose rows) and `out`
/// with an `.svg` extension.
pub fn cmd_generate(cfg: &RunConfig, ckpt: &Path, input: &TokenInput, out: &Path) -> Result<Generation> {
    let data = load_data(cfg)?;
    let text = match input {
        TokenInput::Words(w) => w.clone(),
        TokenInput::File(p) => formats::read_text(p)?,
    };
    let words: Vec<&str> = text.split_whitespace().collect();
    let tokens = data.vocabulary.encode(&words)?;
    let gen = load_generator(cfg, &data, ckpt)?;
    let g = gen.generate(&tokens, cfg.eval.max_frames)?;
    if g.truncated {
        log::warn!("generation hit the {}-frame budget before the counter stopped", cfg.eval.max_frames);
    }
    let mut rows = String::new();
    formats::format_sequence_rows(&mut rows, &g.sequence);
    write_text(out, &rows)?;
    write_text(&out.with_extension("svg"), &render_svg(&g.sequence, RENDER_PANELS))?;
    Ok(g)
}

pub enum EvalSource {
    Checkpoint(PathBuf),
    GroundTruth,
}

/// Scores one split and writes `metrics_<split>.csv` / `.txt` into `out_dir`.
pub fn cmd_eval(cfg: &RunConfig, source: &EvalSource, out_dir: &Path) -> Result<MetricReport> {
    let data = load_data(cfg)?;
    let splits = data.corpus.split(cfg.seed);
    let name = cfg.eval.split.as_str();
    let split = splits.get(name).ok_or_else(|| Error::Config {
        path: PathBuf::from("[eval] split"),
        msg: format!("unknown split `{name}` (expected train, dev or test)"),
    })?;
    if split.is_empty() {
        return Err(Error::EmptyCorpus {
            origin: format!("{name} split"),
        });
    }
    let gen;
    let pose_source = match source {
        EvalSource::GroundTruth => PoseSource::GroundTruth,
        EvalSource::Checkpoint(p) => {
            gen = load_generator(cfg, &data, p)?;
            PoseSource::Model(&gen)
        }
    };
    let r = evaluate_model(pose_source, split, &data.bank, cfg.eval.max_frames)?;
    report::write_metrics(out_dir, name, &r)?;
    Ok(r)
}
