//! Corpus-level BLEU: clipped n-gram precisions for n = 1..4, geometric mean,
//! brevity penalty, single reference, no smoothing.

use std::collections::HashMap;
use std::hash::Hash;
use std::ops::AddAssign;

use crate::error::{Error, Result};

pub const MAX_ORDER: usize = 4;

/// Sufficient statistics for corpus BLEU; additive across sentences.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BleuStats {
    pub matches: [u64; MAX_ORDER],
    pub totals: [u64; MAX_ORDER],
    pub hyp_len: u64,
    pub ref_len: u64,
    pub sentences: u64,
}

fn ngram_counts<T: Hash + Eq>(tokens: &[T], n: usize) -> HashMap<&[T], u64> {
    let mut counts = HashMap::new();
    for gram in tokens.windows(n) {
        *counts.entry(gram).or_default() += 1;
    }
    counts
}

impl BleuStats {
    pub fn for_pair<T: Hash + Eq>(hyp: &[T], reference: &[T]) -> Self {
        let mut stats = BleuStats::default();
        stats.accumulate(hyp, reference);
        stats
    }

    /// Adds one hypothesis/reference pair.
    pub fn accumulate<T: Hash + Eq>(&mut self, hyp: &[T], reference: &[T]) {
        for n in 1..=MAX_ORDER {
            let ref_counts = ngram_counts(reference, n);
            let hyp_counts = ngram_counts(hyp, n);
            self.matches[n - 1] += hyp_counts
                .iter()
                .map(|(g, &c)| c.min(ref_counts.get(g).copied().unwrap_or(0)))
                .sum::<u64>();
            self.totals[n - 1] += hyp.len().saturating_sub(n - 1) as u64;
        }
        self.hyp_len += hyp.len() as u64;
        self.ref_len += reference.len() as u64;
        self.sentences += 1;
    }

    pub fn precision(&self, order: usize) -> f64 {
        let (m, t) = (self.matches[order - 1], self.totals[order - 1]);
        if t == 0 {
            0.0
        } else {
            m as f64 / t as f64
        }
    }

    pub fn brevity_penalty(&self) -> f64 {
        if self.hyp_len == 0 {
            0.0
        } else if self.hyp_len >= self.ref_len {
            1.0
        } else {
            (1.0 - self.ref_len as f64 / self.hyp_len as f64).exp()
        }
    }

    /// BLEU in [0, 100]; zero whenever some order has no match.
    pub fn bleu(&self) -> Result<f64> {
        if self.sentences == 0 {
            return Err(Error::EmptyCorpus);
        }
        if self.matches.contains(&0) {
            return Ok(0.0);
        }
        let log_mean: f64 =
            (1..=MAX_ORDER).map(|n| self.precision(n).ln()).sum::<f64>() / MAX_ORDER as f64;
        Ok(100.0 * self.brevity_penalty() * log_mean.exp())
    }
}

impl AddAssign for BleuStats {
    fn add_assign(&mut self, other: Self) {
        for n in 0..MAX_ORDER {
            self.matches[n] += other.matches[n];
            self.totals[n] += other.totals[n];
        }
        self.hyp_len += other.hyp_len;
        self.ref_len += other.ref_len;
        self.sentences += other.sentences;
    }
}

/// BLEU of aligned hypothesis and reference corpora.
pub fn corpus_bleu<T: Hash + Eq, H: AsRef<[T]>, R: AsRef<[T]>>(
    hyps: &[H],
    refs: &[R],
) -> Result<f64> {
    if hyps.len() != refs.len() {
        return Err(Error::invalid(format!(
            "{} hypotheses but {} references",
            hyps.len(),
            refs.len()
        )));
    }
    let mut stats = BleuStats::default();
    for (h, r) in hyps.iter().zip(refs) {
        stats.accumulate(h.as_ref(), r.as_ref());
    }
    stats.bleu()
}
