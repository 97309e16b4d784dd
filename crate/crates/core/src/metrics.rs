//! Corpus BLEU and ROUGE-L over token sequences.

use alloc::collections::BTreeMap;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

/// Clipped n-gram matches and hypothesis n-gram totals for orders `1..=max_n`,
/// plus hypothesis and effective reference lengths.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NgramStats {
    pub matches: Vec<u64>,
    pub totals: Vec<u64>,
    pub hyp_len: u64,
    pub ref_len: u64,
}

impl NgramStats {
    pub fn new(max_n: usize) -> Self {
        NgramStats {
            matches: vec![0; max_n],
            totals: vec![0; max_n],
            hyp_len: 0,
            ref_len: 0,
        }
    }

    fn absorb(&mut self, other: &NgramStats) {
        for (a, b) in self.matches.iter_mut().zip(&other.matches) {
            *a += b;
        }
        for (a, b) in self.totals.iter_mut().zip(&other.totals) {
            *a += b;
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
    }

    /// BLEU-1 .. BLEU-max_n from accumulated counts.
    pub fn scores(&self) -> Vec<f64> {
        let max_n = self.matches.len();
        if self.hyp_len == 0 {
            return vec![0.0; max_n];
        }
        let bp = if self.hyp_len < self.ref_len {
            libm::exp(1.0 - self.ref_len as f64 / self.hyp_len as f64)
        } else {
            1.0
        };
        let mut out = Vec::with_capacity(max_n);
        let mut log_sum = 0.0;
        let mut zero = false;
        for n in 0..max_n {
            if self.matches[n] == 0 || self.totals[n] == 0 {
                zero = true;
            } else {
                log_sum += libm::log(self.matches[n] as f64 / self.totals[n] as f64);
            }
            out.push(if zero {
                0.0
            } else {
                bp * libm::exp(log_sum / (n + 1) as f64)
            });
        }
        out
    }
}

fn ngram_counts<T: Ord>(seq: &[T], n: usize) -> BTreeMap<&[T], u64> {
    let mut m = BTreeMap::new();
    if seq.len() >= n {
        for w in seq.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

/// Clipped n-gram statistics of one hypothesis against its references.
/// The effective reference length is the closest one (shorter wins ties).
pub fn ngram_stats<T: Ord>(hypothesis: &[T], references: &[&[T]], max_n: usize) -> Result<NgramStats> {
    if max_n == 0 {
        return Err(Error::contract("BLEU needs max_n >= 1"));
    }
    if references.is_empty() {
        return Err(Error::contract("BLEU needs at least one reference"));
    }
    let mut s = NgramStats::new(max_n);
    s.hyp_len = hypothesis.len() as u64;
    let c = hypothesis.len() as i64;
    s.ref_len = references
        .iter()
        .map(|r| r.len() as i64)
        .min_by_key(|&r| ((r - c).abs(), r))
        .unwrap_or(0) as u64;
    for n in 1..=max_n {
        let hyp = ngram_counts(hypothesis, n);
        let refs: Vec<_> = references.iter().map(|r| ngram_counts(r, n)).collect();
        for (gram, &count) in &hyp {
            let max_ref = refs.iter().map(|m| m.get(gram).copied().unwrap_or(0)).max().unwrap_or(0);
            s.matches[n - 1] += count.min(max_ref);
            s.totals[n - 1] += count;
        }
    }
    Ok(s)
}

/// Sentence BLEU-1 .. BLEU-max_n.
pub fn bleu<T: Ord>(hypothesis: &[T], references: &[&[T]], max_n: usize) -> Result<Vec<f64>> {
    Ok(ngram_stats(hypothesis, references, max_n)?.scores())
}

/// Corpus BLEU: clipped counts and lengths are summed over all pairs before
/// precisions and the brevity penalty are formed.
pub fn corpus_bleu<T: Ord>(pairs: &[(&[T], Vec<&[T]>)], max_n: usize) -> Result<Vec<f64>> {
    if max_n == 0 {
        return Err(Error::contract("BLEU needs max_n >= 1"));
    }
    let mut total = NgramStats::new(max_n);
    for (hyp, refs) in pairs {
        total.absorb(&ngram_stats(hyp, refs, max_n)?);
    }
    Ok(total.scores())
}

/// Length of the longest common subsequence.
pub fn lcs_len<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y {
                prev[j] + 1
            } else {
                cur[j].max(prev[j + 1])
            };
        }
        core::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

/// ROUGE-L F1 (β = 1). Zero when either side is empty.
pub fn rouge_l<T: PartialEq>(hypothesis: &[T], reference: &[T]) -> f64 {
    let l = lcs_len(hypothesis, reference);
    if l == 0 {
        return 0.0;
    }
    let p = l as f64 / hypothesis.len() as f64;
    let r = l as f64 / reference.len() as f64;
    2.0 * p * r / (p + r)
}
