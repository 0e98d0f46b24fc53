//! Direct beam search and the two-step noisy-channel beam search.
//!
//! Both searches share one loop. Each step extends every live hypothesis,
//! ranks the candidates and keeps the best `k1`; candidates ending in EOS
//! move to the finished pool. The noisy-channel search first keeps only the
//! `k2` best extensions of each beam under the direct part of the objective,
//! then scores that pool with the channel model and the language model in
//! one batched call each and ranks it by [`combine`].
//!
//! Ties are broken by the higher direct score, then by the lexicographically
//! smaller token sequence (a finished hypothesis carries a trailing EOS).

use std::cmp::Ordering;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::nbest::{NBestEntry, CHANNEL, DIRECT, LM};
use crate::scorers::{with_eos, ChannelScorer, DirectScorer, LanguageModel, ReversedDirect};
use crate::vocab::{TokenId, BOS, EOS};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecoderConfig {
    /// Beam size.
    pub k1: usize,
    /// Direct-model extensions kept per beam before channel rescoring.
    pub k2: usize,
    /// Weight of channel + LM against the direct model.
    pub lambda1: f64,
    /// Additive bonus per target token; negative values penalize length.
    pub word_reward: f64,
    /// Normalize the direct score by target length and channel + LM by
    /// source length.
    pub per_word: bool,
    pub max_len_ratio: f64,
    pub max_len_slack: usize,
}

impl Default for DecoderConfig {
    fn default() -> Self {
        DecoderConfig {
            k1: 5,
            k2: 10,
            lambda1: 1.0,
            word_reward: 0.0,
            per_word: true,
            max_len_ratio: 2.0,
            max_len_slack: 5,
        }
    }
}

impl DecoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.k1 == 0 || self.k2 == 0 {
            return Err(Error::invalid("k1 and k2 must be at least 1"));
        }
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::invalid("lambda1 must be finite and non-negative"));
        }
        if !self.word_reward.is_finite() {
            return Err(Error::invalid("word reward must be finite"));
        }
        if !(self.max_len_ratio >= 0.0 && self.max_len_ratio.is_finite()) {
            return Err(Error::invalid(
                "max length ratio must be finite and non-negative",
            ));
        }
        if self.max_target_len(1) == 0 {
            return Err(Error::invalid("maximum target length must be at least 1"));
        }
        Ok(())
    }

    /// Longest target allowed for a source of `source_len` tokens.
    pub fn max_target_len(&self, source_len: usize) -> usize {
        (self.max_len_ratio * source_len as f64).floor() as usize + self.max_len_slack
    }
}

/// The decoding objective for a prefix of `t` content tokens and a source of
/// `s` tokens.
///
/// With `per_word`: `direct/t + (lambda1/s) (channel + lm) + reward t`;
/// without: `direct + lambda1 (channel + lm) + reward t`.
pub fn combine(
    direct_sum: f64,
    channel_sum: f64,
    lm_sum: f64,
    t: usize,
    s: usize,
    cfg: &DecoderConfig,
) -> Result<f64> {
    if t == 0 || s == 0 {
        return Err(Error::EmptyPrefixOrSource);
    }
    let (t_f, s_f) = (t as f64, s as f64);
    let score = if cfg.per_word {
        direct_sum / t_f + (cfg.lambda1 / s_f) * (channel_sum + lm_sum)
    } else {
        direct_sum + cfg.lambda1 * (channel_sum + lm_sum)
    };
    Ok(score + cfg.word_reward * t_f)
}

/// A target prefix with cumulative log scores.
#[derive(Clone, Debug, PartialEq)]
pub struct Hypothesis {
    /// Content tokens only; EOS is implied by `finished`.
    pub target: Vec<TokenId>,
    pub direct_sum: f64,
    pub channel_sum: f64,
    pub lm_sum: f64,
    pub finished: bool,
    pub combined: f64,
}

impl Hypothesis {
    fn root() -> Self {
        Hypothesis {
            target: Vec::new(),
            direct_sum: 0.0,
            channel_sum: 0.0,
            lm_sum: 0.0,
            finished: false,
            combined: 0.0,
        }
    }

    /// Recomputes the objective from the stored sums.
    pub fn rescore(&self, source_len: usize, cfg: &DecoderConfig) -> Result<f64> {
        combine(
            self.direct_sum,
            self.channel_sum,
            self.lm_sum,
            self.target.len(),
            source_len,
            cfg,
        )
    }

    fn token_key(&self) -> impl Iterator<Item = TokenId> + '_ {
        self.target
            .iter()
            .copied()
            .chain(self.finished.then_some(EOS))
    }
}

/// Best first: higher objective, then higher direct score, then smaller tokens.
pub fn rank_order(a: &Hypothesis, b: &Hypothesis) -> Ordering {
    b.combined
        .total_cmp(&a.combined)
        .then_with(|| b.direct_sum.total_cmp(&a.direct_sum))
        .then_with(|| a.token_key().cmp(b.token_key()))
}

/// The model roles available to a search or a feature extractor.
#[derive(Clone, Copy)]
pub struct Scorers<'a> {
    pub direct: &'a dyn DirectScorer,
    pub channel: Option<&'a dyn ChannelScorer>,
    pub lm: Option<&'a dyn LanguageModel>,
    pub reverse: Option<&'a ReversedDirect>,
}

impl<'a> Scorers<'a> {
    pub fn direct(direct: &'a dyn DirectScorer) -> Self {
        Scorers {
            direct,
            channel: None,
            lm: None,
            reverse: None,
        }
    }

    pub fn noisy_channel(
        direct: &'a dyn DirectScorer,
        channel: &'a dyn ChannelScorer,
        lm: &'a dyn LanguageModel,
    ) -> Self {
        Scorers {
            direct,
            channel: Some(channel),
            lm: Some(lm),
            reverse: None,
        }
    }

    pub fn with_reverse(mut self, reverse: &'a ReversedDirect) -> Self {
        self.reverse = Some(reverse);
        self
    }
}

/// Standard beam search over `direct/t + reward t` (or the unnormalized
/// variant), keeping `cfg.k1` hypotheses per step.
pub fn beam_search_direct(
    source: &[TokenId],
    direct: &dyn DirectScorer,
    cfg: &DecoderConfig,
) -> Result<Vec<Hypothesis>> {
    search(source, direct, None, cfg)
}

/// Two-step beam search: the direct model pre-prunes each beam to `k2`
/// extensions, channel and LM rescore the pooled `k1 x k2` candidates, and
/// the pool is pruned back to `k1`.
pub fn noisy_channel_beam_search(
    source: &[TokenId],
    scorers: &Scorers,
    cfg: &DecoderConfig,
) -> Result<Vec<Hypothesis>> {
    let (Some(channel), Some(lm)) = (scorers.channel, scorers.lm) else {
        return Err(Error::invalid(
            "noisy-channel search needs channel and language model scorers",
        ));
    };
    search(source, scorers.direct, Some((channel, lm)), cfg)
}

fn search(
    source: &[TokenId],
    direct: &dyn DirectScorer,
    rescorers: Option<(&dyn ChannelScorer, &dyn LanguageModel)>,
    cfg: &DecoderConfig,
) -> Result<Vec<Hypothesis>> {
    cfg.validate()?;
    if source.is_empty() {
        return Err(Error::EmptyPrefixOrSource);
    }
    let s = source.len();
    let max_len = cfg.max_target_len(s);
    let vocab = direct.vocab_size();
    let mut live = vec![Hypothesis::root()];
    let mut finished: Vec<Hypothesis> = Vec::new();

    while !live.is_empty() {
        let prefixes: Vec<Vec<TokenId>> = live.iter().map(|h| h.target.clone()).collect();
        let dists = direct.next_logprobs_batch(source, &prefixes)?;
        if dists.len() != live.len() {
            return Err(Error::VocabMismatch(
                "direct scorer returned the wrong batch size".into(),
            ));
        }

        let mut pool = Vec::new();
        for (parent, dist) in live.iter().zip(&dists) {
            if dist.len() != vocab {
                return Err(Error::VocabMismatch(format!(
                    "direct scorer returned {} log-probs for a vocabulary of {vocab}",
                    dist.len()
                )));
            }
            let mut extensions = extend(parent, dist, s, max_len, cfg)?;
            if rescorers.is_some() {
                extensions.sort_by(rank_order);
                extensions.truncate(cfg.k2);
            }
            pool.extend(extensions);
        }

        if let Some((channel, lm)) = rescorers {
            rescore_pool(&mut pool, source, channel, lm, cfg)?;
        }
        pool.sort_by(rank_order);
        pool.truncate(cfg.k1);

        live.clear();
        for h in pool {
            if h.finished {
                finished.push(h);
            } else {
                live.push(h);
            }
        }

        if finished.len() >= cfg.k1 {
            finished.sort_by(rank_order);
            let threshold = finished[cfg.k1 - 1].combined;
            if live.iter().all(|h| h.combined <= threshold) {
                break;
            }
        }
    }

    finished.sort_by(rank_order);
    finished.truncate(cfg.k1);
    Ok(finished)
}

/// Every admissible one-token extension, scored by the direct part of the
/// objective only (channel and LM sums are zero until rescoring).
fn extend(
    parent: &Hypothesis,
    dist: &[f64],
    s: usize,
    max_len: usize,
    cfg: &DecoderConfig,
) -> Result<Vec<Hypothesis>> {
    let t0 = parent.target.len();
    let mut out = Vec::new();
    for (tok, &lp) in dist.iter().enumerate() {
        let tok = tok as TokenId;
        if tok == BOS || lp == f64::NEG_INFINITY {
            continue;
        }
        if !lp.is_finite() {
            return Err(Error::NonFinite { scorer: "direct" });
        }
        let is_eos = tok == EOS;
        if (is_eos && t0 == 0) || (!is_eos && t0 >= max_len) {
            continue;
        }
        let mut target = parent.target.clone();
        if !is_eos {
            target.push(tok);
        }
        let direct_sum = parent.direct_sum + lp;
        let combined = combine(direct_sum, 0.0, 0.0, target.len(), s, cfg)?;
        out.push(Hypothesis {
            target,
            direct_sum,
            channel_sum: 0.0,
            lm_sum: 0.0,
            finished: is_eos,
            combined,
        });
    }
    Ok(out)
}

fn rescore_pool(
    pool: &mut [Hypothesis],
    source: &[TokenId],
    channel: &dyn ChannelScorer,
    lm: &dyn LanguageModel,
    cfg: &DecoderConfig,
) -> Result<()> {
    if pool.is_empty() {
        return Ok(());
    }
    let prefixes: Vec<Vec<TokenId>> = pool.iter().map(|h| h.target.clone()).collect();
    let lm_inputs: Vec<Vec<TokenId>> = pool
        .iter()
        .map(|h| {
            if h.finished {
                with_eos(&h.target)
            } else {
                h.target.clone()
            }
        })
        .collect();
    let channel_scores = channel.channel_scores(source, &prefixes)?;
    let lm_scores = lm.prefix_logprobs(&lm_inputs)?;
    if channel_scores.len() != pool.len() || lm_scores.len() != pool.len() {
        return Err(Error::invalid("scorer returned the wrong batch size"));
    }
    for ((h, ch), lm) in pool.iter_mut().zip(channel_scores).zip(lm_scores) {
        if !ch.is_finite() {
            return Err(Error::NonFinite { scorer: "channel" });
        }
        if !lm.is_finite() {
            return Err(Error::NonFinite { scorer: "lm" });
        }
        h.channel_sum = ch;
        h.lm_sum = lm;
        h.combined = combine(h.direct_sum, ch, lm, h.target.len(), source.len(), cfg)?;
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SearchMode {
    Direct,
    NoisyChannel,
}

/// Decodes every source sentence, in parallel across sentences when a rayon
/// pool is active. Output order is input order.
pub fn decode_corpus(
    sources: &[Vec<TokenId>],
    scorers: &Scorers,
    mode: SearchMode,
    cfg: &DecoderConfig,
) -> Result<Vec<Vec<Hypothesis>>> {
    sources
        .par_iter()
        .map(|x| match mode {
            SearchMode::Direct => beam_search_direct(x, scorers.direct, cfg),
            SearchMode::NoisyChannel => noisy_channel_beam_search(x, scorers, cfg),
        })
        .collect()
}

/// Converts finished hypotheses into n-best entries with their model sums as
/// features and the decoder objective as the total.
pub fn to_nbest(sentence_id: usize, hyps: &[Hypothesis], mode: SearchMode) -> Vec<NBestEntry> {
    hyps.iter()
        .map(|h| {
            let mut e =
                NBestEntry::new(sentence_id, h.target.clone()).with_feature(DIRECT, h.direct_sum);
            if mode == SearchMode::NoisyChannel {
                e = e
                    .with_feature(CHANNEL, h.channel_sum)
                    .with_feature(LM, h.lm_sum);
            }
            e.total = h.combined;
            e
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(per_word: bool) -> DecoderConfig {
        DecoderConfig {
            lambda1: 0.5,
            per_word,
            ..DecoderConfig::default()
        }
    }

    #[test]
    fn combine_per_word() {
        let v = combine(-2.0, -3.0, -1.0, 2, 3, &cfg(true)).unwrap();
        assert!((v - (-5.0 / 3.0)).abs() < 1e-12);
    }

    #[test]
    fn combine_without_channel_weight_is_direct_average() {
        let c = DecoderConfig {
            lambda1: 0.0,
            ..cfg(true)
        };
        assert_eq!(combine(-2.0, -3.0, -1.0, 2, 3, &c).unwrap(), -1.0);
    }

    #[test]
    fn combine_without_per_word_scores() {
        assert_eq!(combine(-2.0, -3.0, -1.0, 2, 3, &cfg(false)).unwrap(), -4.0);
    }

    #[test]
    fn combine_rejects_empty_lengths() {
        let err = combine(-1.0, -1.0, -1.0, 0, 3, &cfg(true)).unwrap_err();
        assert_eq!(err.to_string(), "empty prefix/source");
        assert!(combine(-1.0, -1.0, -1.0, 2, 0, &cfg(true)).is_err());
    }

    #[test]
    fn combine_adds_word_reward() {
        let c = DecoderConfig {
            word_reward: 0.25,
            ..cfg(false)
        };
        assert_eq!(combine(-2.0, -3.0, -1.0, 2, 3, &c).unwrap(), -3.5);
    }

    #[test]
    fn config_validation() {
        assert!(DecoderConfig {
            k1: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DecoderConfig {
            k2: 0,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(DecoderConfig {
            lambda1: -1.0,
            ..Default::default()
        }
        .validate()
        .is_err());
        let zero = DecoderConfig {
            max_len_ratio: 0.0,
            max_len_slack: 0,
            ..Default::default()
        };
        assert!(zero.validate().is_err());
        assert_eq!(DecoderConfig::default().max_target_len(4), 13);
    }

    #[test]
    fn rank_order_tie_rule() {
        let h = |target: Vec<TokenId>, direct_sum: f64, finished: bool| Hypothesis {
            target,
            direct_sum,
            channel_sum: 0.0,
            lm_sum: 0.0,
            finished,
            combined: -1.0,
        };
        let mut v = [h(vec![4], -2.0, false),
            h(vec![3], -2.0, false),
            h(vec![5], -1.0, false),
            h(vec![3], -2.0, true)];
        v.sort_by(rank_order);
        assert_eq!(v[0].target, vec![5]);
        assert!(v[1].target == vec![3] && !v[1].finished);
        assert!(v[2].target == vec![3] && v[2].finished);
        assert_eq!(v[3].target, vec![4]);
    }
}
