//! Randomly parameterized toy models for tests, oracle comparisons and
//! benchmarks. Every model is a pure function of its seed.

use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::scorers::{DirectScorer, Direction, LexiconTable, NGramTable};
use crate::vocab::{TokenId, BOS, NULL, UNK};

/// A direct model whose next-token distribution is an arbitrary random
/// function of (source, prefix). Unlike IBM-1 it is order sensitive, which
/// makes it a harder test subject for beam search.
#[derive(Clone, Debug)]
pub struct HashedDirect {
    vocab_size: usize,
    seed: u64,
    /// Logit scale; larger values give peakier distributions.
    sharpness: f64,
}

impl HashedDirect {
    pub fn new(vocab_size: usize, seed: u64, sharpness: f64) -> Result<Self> {
        if vocab_size < 3 {
            return Err(Error::invalid(
                "vocabulary must contain the reserved symbols",
            ));
        }
        if !(sharpness.is_finite() && sharpness >= 0.0) {
            return Err(Error::invalid("sharpness must be finite and non-negative"));
        }
        Ok(HashedDirect {
            vocab_size,
            seed,
            sharpness,
        })
    }
}

impl DirectScorer for HashedDirect {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>> {
        let mut h = DefaultHasher::new();
        (self.seed, source, prefix).hash(&mut h);
        let mut rng = ChaCha8Rng::seed_from_u64(h.finish());
        let logits: Vec<f64> = (0..self.vocab_size)
            .map(|id| {
                if id as TokenId == BOS {
                    f64::NEG_INFINITY
                } else {
                    self.sharpness * rng.gen::<f64>()
                }
            })
            .collect();
        let norm = crate::scorers::log_sum_exp(&logits);
        Ok(logits.into_iter().map(|l| l - norm).collect())
    }
}

/// A random probability vector (flat Dirichlet draw).
fn random_simplex(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    let draws: Vec<f64> = (0..n).map(|_| -(1.0 - rng.gen::<f64>()).ln()).collect();
    let total: f64 = draws.iter().sum();
    draws.into_iter().map(|d| d / total).collect()
}

/// A lexicon table with random translation rows for NULL and every content
/// conditioning id. Reserved emissions keep probability zero.
pub fn random_lexicon(
    direction: Direction,
    cond_size: usize,
    emit_size: usize,
    length_ratio: f64,
    rng: &mut impl Rng,
) -> Result<LexiconTable> {
    let mut table = LexiconTable::uniform(direction, cond_size, emit_size, length_ratio)?;
    for cond in 0..cond_size as TokenId {
        if cond != NULL && cond < UNK {
            continue;
        }
        let mut row = vec![0.0; UNK as usize];
        row.extend(random_simplex(rng, emit_size - UNK as usize));
        table.set_row(cond, &row)?;
    }
    Ok(table)
}

/// An n-gram table filled with `events` random counts over random contexts.
pub fn random_ngram(
    order: usize,
    vocab_size: usize,
    alpha: f64,
    events: usize,
    rng: &mut impl Rng,
) -> Result<NGramTable> {
    let mut table = NGramTable::new(order, alpha, vocab_size)?;
    for _ in 0..events {
        let k = rng.gen_range(0..order);
        let context: Vec<TokenId> = (0..k)
            .map(|_| rng.gen_range(BOS..vocab_size as TokenId))
            .collect();
        let word = rng.gen_range(1..vocab_size as TokenId);
        table.add_count(&context, word, rng.gen_range(1..5));
    }
    Ok(table)
}
