//! Scorer contracts for the three model roles and the toy reference models
//! that implement them.
//!
//! All scores are natural-log probabilities. A direct scorer proposes next
//! tokens, a channel scorer scores the whole source given a (possibly
//! incomplete) target prefix, and a language model scores target prefixes.

mod ensemble;
mod lexicon;
mod ngram;
mod reversed;

use std::sync::Arc;

pub use ensemble::{make_ensemble, Ensemble};
pub use lexicon::{
    expand_prefix_pairs, next_distribution, reverse_pairs, train_lexicon_em, train_prefix_channel,
    ChannelModel, DirectModel, Direction, EmTrace, LexiconTable, SentencePair, TrainOptions,
    PROB_FLOOR,
};
pub use ngram::{NGramTable, INTERPOLATION};
pub use reversed::{make_reversed_direct, ReversedDirect};

use crate::error::{Error, Result};
use crate::vocab::{TokenId, EOS};

/// Proposes next-token distributions for p(y|x).
pub trait DirectScorer: Send + Sync {
    /// Size of the target vocabulary; every distribution has this length.
    fn vocab_size(&self) -> usize;

    /// Log-probabilities of every target id following `prefix` given `source`.
    /// Impossible tokens are `-inf`.
    fn next_logprobs(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>>;

    fn next_logprobs_batch(
        &self,
        source: &[TokenId],
        prefixes: &[Vec<TokenId>],
    ) -> Result<Vec<Vec<f64>>> {
        prefixes
            .iter()
            .map(|p| self.next_logprobs(source, p))
            .collect()
    }

    /// The `k` most likely next tokens, best first; ties go to the smaller id.
    fn top_k(
        &self,
        source: &[TokenId],
        prefix: &[TokenId],
        k: usize,
    ) -> Result<Vec<(TokenId, f64)>> {
        Ok(top_k_of(&self.next_logprobs(source, prefix)?, k))
    }
}

/// Scores the entire source given a target prefix, log p(x | y_1..y_t).
pub trait ChannelScorer: Send + Sync {
    fn channel_score(&self, source: &[TokenId], target_prefix: &[TokenId]) -> Result<f64>;

    fn channel_scores(&self, source: &[TokenId], prefixes: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        prefixes
            .iter()
            .map(|p| self.channel_score(source, p))
            .collect()
    }
}

/// Target-side language model p(y).
pub trait LanguageModel: Send + Sync {
    fn vocab_size(&self) -> usize;

    /// Chain-rule log-probability of `tokens`. A trailing EOS is scored as the
    /// end of the sentence, so `prefix_logprob(y ++ [EOS])` is log p(y).
    fn prefix_logprob(&self, tokens: &[TokenId]) -> Result<f64>;

    fn prefix_logprobs(&self, sequences: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        sequences.iter().map(|s| self.prefix_logprob(s)).collect()
    }
}

impl<T: DirectScorer + ?Sized> DirectScorer for Arc<T> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn next_logprobs(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>> {
        (**self).next_logprobs(source, prefix)
    }
    fn next_logprobs_batch(
        &self,
        source: &[TokenId],
        prefixes: &[Vec<TokenId>],
    ) -> Result<Vec<Vec<f64>>> {
        (**self).next_logprobs_batch(source, prefixes)
    }
    fn top_k(
        &self,
        source: &[TokenId],
        prefix: &[TokenId],
        k: usize,
    ) -> Result<Vec<(TokenId, f64)>> {
        (**self).top_k(source, prefix, k)
    }
}

impl<T: ChannelScorer + ?Sized> ChannelScorer for Arc<T> {
    fn channel_score(&self, source: &[TokenId], target_prefix: &[TokenId]) -> Result<f64> {
        (**self).channel_score(source, target_prefix)
    }
    fn channel_scores(&self, source: &[TokenId], prefixes: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        (**self).channel_scores(source, prefixes)
    }
}

impl<T: LanguageModel + ?Sized> LanguageModel for Arc<T> {
    fn vocab_size(&self) -> usize {
        (**self).vocab_size()
    }
    fn prefix_logprob(&self, tokens: &[TokenId]) -> Result<f64> {
        (**self).prefix_logprob(tokens)
    }
    fn prefix_logprobs(&self, sequences: &[Vec<TokenId>]) -> Result<Vec<f64>> {
        (**self).prefix_logprobs(sequences)
    }
}

/// Sorts the finite entries of a distribution, best first, ties by id.
pub fn top_k_of(logprobs: &[f64], k: usize) -> Vec<(TokenId, f64)> {
    let mut ranked: Vec<(TokenId, f64)> = logprobs
        .iter()
        .enumerate()
        .filter(|(_, lp)| lp.is_finite())
        .map(|(i, &lp)| (i as TokenId, lp))
        .collect();
    ranked.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
    ranked.truncate(k);
    ranked
}

/// Sum of stepwise direct log-probabilities of `prefix` (no sentence end).
pub fn direct_prefix_logprob(
    direct: &dyn DirectScorer,
    source: &[TokenId],
    prefix: &[TokenId],
) -> Result<f64> {
    let mut total = 0.0;
    for j in 0..prefix.len() {
        total += token_logprob(&direct.next_logprobs(source, &prefix[..j])?, prefix[j])?;
    }
    Ok(total)
}

/// Full-sentence direct score: every target token plus the closing EOS.
pub fn direct_sequence_logprob(
    direct: &dyn DirectScorer,
    source: &[TokenId],
    target: &[TokenId],
) -> Result<f64> {
    let body = direct_prefix_logprob(direct, source, target)?;
    Ok(body + token_logprob(&direct.next_logprobs(source, target)?, EOS)?)
}

/// log p(y) including the end-of-sentence event.
pub fn lm_sequence_logprob(lm: &dyn LanguageModel, target: &[TokenId]) -> Result<f64> {
    lm.prefix_logprob(&with_eos(target))
}

pub fn with_eos(tokens: &[TokenId]) -> Vec<TokenId> {
    let mut v = Vec::with_capacity(tokens.len() + 1);
    v.extend_from_slice(tokens);
    v.push(EOS);
    v
}

fn token_logprob(dist: &[f64], token: TokenId) -> Result<f64> {
    dist.get(token as usize).copied().ok_or_else(|| {
        Error::VocabMismatch(format!(
            "token id {token} outside distribution of size {}",
            dist.len()
        ))
    })
}

/// log Σ exp(v), used by the normalization checks.
pub fn log_sum_exp(values: &[f64]) -> f64 {
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn top_k_orders_by_score_then_id() {
        let lp = [f64::NEG_INFINITY, -1.0, -0.5, -1.0, -3.0];
        assert_eq!(top_k_of(&lp, 3), vec![(2, -0.5), (1, -1.0), (3, -1.0)]);
        assert_eq!(top_k_of(&lp, 10).len(), 4);
    }

    #[test]
    fn log_sum_exp_of_distribution_is_zero() {
        let lp: Vec<f64> = [0.2f64, 0.3, 0.5].iter().map(|p| p.ln()).collect();
        assert!(log_sum_exp(&lp).abs() < 1e-12);
    }
}
