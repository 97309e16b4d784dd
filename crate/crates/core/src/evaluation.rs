//! Back-translation evaluation against a primitive-matching oracle.
//!
//! The oracle cuts a pose sequence into consecutive `motif_len` windows and
//! labels each with the token whose primitive (any variant) is nearest in
//! mean squared distance. Decoded token strings are scored against the
//! source with corpus BLEU-1..4 and mean ROUGE-L.

use alloc::format;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::generator::Generator;
use crate::metrics::{corpus_bleu, rouge_l};
use crate::pose::{Corpus, PoseSequence, TokenSequence, PAD};
use crate::synth::{block_mse, PrimitiveBank};
use crate::tensor::Tensor;

/// Decodes a pose sequence to tokens. A trailing window shorter than half a
/// motif is dropped; longer partial windows are matched against primitive
/// prefixes. Equal distances resolve to the lower token id.
pub fn back_translate_oracle(poses: &PoseSequence, bank: &PrimitiveBank) -> Result<TokenSequence> {
    if poses.is_empty() {
        return Ok(TokenSequence(Vec::new()));
    }
    if poses.layout() != bank.layout {
        return Err(Error::contract("pose layout differs from the primitive bank layout"));
    }
    if bank.primitives.is_empty() || bank.motif_len == 0 {
        return Err(Error::contract("primitive bank is empty"));
    }
    let rows: Vec<&[f64]> = poses.frames().iter().map(|f| f.values.as_slice()).collect();
    let m = bank.motif_len;
    let mut tokens = Vec::with_capacity(rows.len() / m + 1);
    for window in rows.chunks(m) {
        if window.len() < m && 2 * window.len() < m {
            break;
        }
        let mut best: Option<(f64, usize)> = None;
        for p in &bank.primitives {
            let d = window_mse(window, &p.frames[..window.len()]);
            let better = match best {
                None => true,
                Some((bd, bt)) => d < bd || (d == bd && p.token < bt),
            };
            if better {
                best = Some((d, p.token));
            }
        }
        tokens.push(best.map(|b| b.1).unwrap_or(PAD));
    }
    Ok(TokenSequence(tokens))
}

fn window_mse(window: &[&[f64]], prim: &[Vec<f64>]) -> f64 {
    let w: Vec<Vec<f64>> = window.iter().map(|r| r.to_vec()).collect();
    block_mse(&w, prim)
}

/// Mean over columns of each column's variance across frames.
pub fn temporal_variance(poses: &Tensor) -> f64 {
    let (n, d) = (poses.rows(), poses.cols());
    if n == 0 || d == 0 {
        return 0.0;
    }
    let mut total = 0.0;
    for c in 0..d {
        let mean = (0..n).map(|r| poses.get2(r, c)).sum::<f64>() / n as f64;
        total += (0..n)
            .map(|r| {
                let e = poses.get2(r, c) - mean;
                e * e
            })
            .sum::<f64>()
            / n as f64;
    }
    total / d as f64
}

/// Where evaluated poses come from.
#[derive(Debug, Clone, Copy)]
pub enum PoseSource<'a> {
    /// Free-running generation from the source tokens.
    Model(&'a Generator),
    /// The corpus targets themselves; gives the oracle ceiling.
    GroundTruth,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub bleu_1: f64,
    pub bleu_2: f64,
    pub bleu_3: f64,
    pub bleu_4: f64,
    pub rouge_l_f1: f64,
    /// Fraction of source positions decoded to the right token, per example.
    pub token_recovery: Vec<f64>,
    /// Mean temporal variance of the evaluated pose sequences.
    pub temporal_variance: f64,
    /// Examples whose generation hit the frame budget before stopping.
    pub truncated: usize,
}

impl MetricReport {
    pub fn mean_token_recovery(&self) -> f64 {
        if self.token_recovery.is_empty() {
            0.0
        } else {
            self.token_recovery.iter().sum::<f64>() / self.token_recovery.len() as f64
        }
    }

    /// BLEU-4, BLEU-3, BLEU-2, BLEU-1, ROUGE in table order.
    pub fn table_row(&self) -> [f64; 5] {
        [self.bleu_4, self.bleu_3, self.bleu_2, self.bleu_1, self.rouge_l_f1]
    }
}

/// Table column headers matching [`MetricReport::table_row`].
pub const TABLE_COLUMNS: [&str; 5] = ["BLEU-4", "BLEU-3", "BLEU-2", "BLEU-1", "ROUGE"];

/// Generates (or passes through) poses for every example, back-translates
/// them and scores the decoded tokens against the sources.
pub fn evaluate_model(
    source: PoseSource<'_>,
    corpus: &Corpus,
    bank: &PrimitiveBank,
    max_frames: usize,
) -> Result<MetricReport> {
    if corpus.layout != bank.layout {
        return Err(Error::contract("corpus layout differs from the primitive bank layout"));
    }
    let mut hyps = Vec::with_capacity(corpus.len());
    let mut refs = Vec::with_capacity(corpus.len());
    let mut variance = 0.0;
    let mut truncated = 0;
    for ex in &corpus.examples {
        let poses = match source {
            PoseSource::GroundTruth => ex.target.clone(),
            PoseSource::Model(g) => {
                if g.config().layout != corpus.layout {
                    return Err(Error::contract(format!(
                        "generator layout differs from corpus layout for {}",
                        ex.id
                    )));
                }
                let out = g.generate(&ex.source, max_frames)?;
                truncated += out.truncated as usize;
                out.sequence
            }
        };
        variance += temporal_variance(&poses.to_matrix());
        hyps.push(back_translate_oracle(&poses, bank)?.0);
        refs.push(ex.source.ids().iter().copied().filter(|&t| t != PAD).collect::<Vec<_>>());
    }
    let pairs: Vec<(&[usize], Vec<&[usize]>)> = hyps
        .iter()
        .zip(&refs)
        .map(|(h, r)| (h.as_slice(), alloc::vec![r.as_slice()]))
        .collect();
    let b = corpus_bleu(&pairs, 4)?;
    let n = corpus.len().max(1) as f64;
    let rouge = hyps.iter().zip(&refs).map(|(h, r)| rouge_l(h, r)).sum::<f64>() / n;
    let token_recovery = hyps
        .iter()
        .zip(&refs)
        .map(|(h, r)| {
            let hit = h.iter().zip(r).filter(|(a, b)| a == b).count();
            if r.is_empty() {
                0.0
            } else {
                hit as f64 / r.len() as f64
            }
        })
        .collect();
    Ok(MetricReport {
        bleu_1: b[0],
        bleu_2: b[1],
        bleu_3: b[2],
        bleu_4: b[3],
        rouge_l_f1: rouge,
        token_recovery,
        temporal_variance: variance / n,
        truncated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generator::GeneratorConfig;
    use crate::pose::{Channels, PoseFrame};
    use crate::synth::{synth_corpus, SynthConfig};
    use alloc::vec;

    fn cfg(noise: f64) -> SynthConfig {
        SynthConfig {
            n_examples: 60,
            noise_std: noise,
            ..SynthConfig::default()
        }
    }

    #[test]
    fn noiseless_ground_truth_round_trips() {
        let s = synth_corpus(&cfg(0.0)).unwrap();
        for ex in &s.corpus.examples {
            assert_eq!(back_translate_oracle(&ex.target, &s.bank).unwrap(), ex.source);
        }
    }

    #[test]
    fn noisy_ground_truth_round_trips() {
        let s = synth_corpus(&cfg(0.01)).unwrap();
        for ex in &s.corpus.examples {
            assert_eq!(back_translate_oracle(&ex.target, &s.bank).unwrap(), ex.source);
        }
    }

    #[test]
    fn partial_trailing_windows() {
        let s = synth_corpus(&cfg(0.0)).unwrap();
        let ex = &s.corpus.examples[0];
        let frames = ex.target.frames();
        let cut = |n: usize| PoseSequence::new(ex.target.layout(), frames[..n].to_vec()).unwrap();
        let k = ex.source.len();
        // four leftover frames of ten are dropped, five are kept
        assert_eq!(back_translate_oracle(&cut(10 * (k - 1) + 4), &s.bank).unwrap().len(), k - 1);
        let five = back_translate_oracle(&cut(10 * (k - 1) + 5), &s.bank).unwrap();
        assert_eq!(five, ex.source);
    }

    #[test]
    fn zero_sequence_decodes_deterministically() {
        let s = synth_corpus(&cfg(0.0)).unwrap();
        let layout = s.corpus.layout;
        let zero: Vec<PoseFrame> = (0..20)
            .map(|i| PoseFrame {
                values: vec![0.0; layout.pose_dim()],
                counter: (i + 1) as f64 / 20.0,
            })
            .collect();
        let seq = PoseSequence::new(layout, zero).unwrap();
        let a = back_translate_oracle(&seq, &s.bank).unwrap();
        assert_eq!(a.len(), 2);
        assert_eq!(a, back_translate_oracle(&seq, &s.bank).unwrap());
    }

    #[test]
    fn tie_goes_to_lower_token() {
        let s = synth_corpus(&cfg(0.0)).unwrap();
        let mut bank = s.bank.clone();
        let copy = bank.primitives[3].frames.clone();
        bank.primitives[7].frames = copy.clone();
        let layout = bank.layout;
        let seq = PoseSequence::from_rows(layout, copy).unwrap();
        let want = bank.primitives[3].token.min(bank.primitives[7].token);
        assert_eq!(back_translate_oracle(&seq, &bank).unwrap().0, vec![want]);
    }

    #[test]
    fn ground_truth_passthrough_is_the_ceiling() {
        let s = synth_corpus(&cfg(0.01)).unwrap();
        let r = evaluate_model(PoseSource::GroundTruth, &s.corpus, &s.bank, 100).unwrap();
        assert_eq!(r.bleu_4, 1.0);
        assert_eq!(r.rouge_l_f1, 1.0);
        assert_eq!(r.mean_token_recovery(), 1.0);
    }

    #[test]
    fn channel_selected_passthrough_is_scored_with_selected_bank() {
        let s = synth_corpus(&cfg(0.01)).unwrap();
        let c = s.corpus.select_channels(Channels::ManualOnly).unwrap();
        let b = s.bank.select_channels(Channels::ManualOnly).unwrap();
        let r = evaluate_model(PoseSource::GroundTruth, &c, &b, 100).unwrap();
        assert_eq!(r.bleu_4, 1.0);
        assert!(evaluate_model(PoseSource::GroundTruth, &c, &s.bank, 100).is_err());
    }

    #[test]
    fn untrained_generator_is_near_chance_and_deterministic() {
        let s = synth_corpus(&cfg(0.01)).unwrap();
        let g = Generator::new(GeneratorConfig::desk(s.vocabulary.len(), s.corpus.layout), 3).unwrap();
        let split = s.corpus.split(1);
        let r = evaluate_model(PoseSource::Model(&g), &split.dev, &s.bank, 60).unwrap();
        assert!(r.bleu_4 <= 0.05, "untrained BLEU-4 {}", r.bleu_4);
        for v in r.table_row() {
            assert!((0.0..=1.0).contains(&v));
        }
        assert_eq!(r, evaluate_model(PoseSource::Model(&g), &split.dev, &s.bank, 60).unwrap());
    }

    #[test]
    fn temporal_variance_hand_case() {
        let t = Tensor::matrix(2, 2, vec![0.0, 1.0, 2.0, 1.0]).unwrap();
        assert_eq!(temporal_variance(&t), 0.5);
    }
}
