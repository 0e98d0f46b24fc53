//! Exact decoding and reranking by full enumeration, for tiny instances.

use crate::decoder::{combine, rank_order, DecoderConfig, Hypothesis, Scorers};
use crate::error::{Error, Result};
use crate::nbest::{group_by_sentence, NBestEntry, ScoreWeights};
use crate::reranker::{entry_order, linear_score, Selection};
use crate::scorers::{direct_sequence_logprob, lm_sequence_logprob};
use crate::vocab::{TokenId, EOS, UNK};

pub const MAX_LEN: usize = 6;
pub const MAX_CONTENT_TOKENS: usize = 6;
pub const MAX_SPACE: usize = 50_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct OracleConfig {
    pub max_len: usize,
}

impl OracleConfig {
    fn check(&self, content_tokens: usize) -> Result<()> {
        if self.max_len == 0 || self.max_len > MAX_LEN {
            return Err(Error::OracleBounds(format!(
                "max_len {} outside 1..={MAX_LEN}",
                self.max_len
            )));
        }
        if content_tokens > MAX_CONTENT_TOKENS {
            return Err(Error::OracleBounds(format!(
                "{content_tokens} content tokens exceed the cap of {MAX_CONTENT_TOKENS}"
            )));
        }
        let space = (content_tokens as u64).saturating_pow(self.max_len as u32);
        if space > MAX_SPACE as u64 {
            return Err(Error::OracleBounds(format!(
                "search space {space} exceeds {MAX_SPACE}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct OracleResult {
    pub best: Hypothesis,
    /// Every scorable target sequence, best first.
    pub ranked: Vec<Hypothesis>,
}

/// Scores every target of length `1..=max_len` with the full-sentence
/// objective and returns the exact argmax under the decoder tie rule.
///
/// Channel and LM terms are used when present in `scorers`; otherwise they
/// are zero and the objective is the direct model alone.
pub fn exhaustive_decode(
    source: &[TokenId],
    scorers: &Scorers,
    cfg: &DecoderConfig,
    ocfg: &OracleConfig,
) -> Result<OracleResult> {
    if source.is_empty() {
        return Err(Error::EmptyPrefixOrSource);
    }
    let vocab = scorers.direct.vocab_size();
    let content: Vec<TokenId> = (UNK..vocab as TokenId).collect();
    ocfg.check(content.len())?;

    let mut ranked = Vec::new();
    let mut target = Vec::with_capacity(ocfg.max_len);
    for len in 1..=ocfg.max_len {
        enumerate(&content, len, &mut target, &mut |y| {
            if let Some(h) = score_full(source, y, scorers, cfg)? {
                ranked.push(h);
            }
            Ok(())
        })?;
    }
    ranked.sort_by(rank_order);
    let best = ranked
        .first()
        .cloned()
        .ok_or_else(|| Error::OracleBounds("no target sequence has finite probability".into()))?;
    Ok(OracleResult { best, ranked })
}

fn enumerate(
    content: &[TokenId],
    remaining: usize,
    prefix: &mut Vec<TokenId>,
    visit: &mut dyn FnMut(&[TokenId]) -> Result<()>,
) -> Result<()> {
    if remaining == 0 {
        return visit(prefix);
    }
    for &tok in content {
        prefix.push(tok);
        enumerate(content, remaining - 1, prefix, visit)?;
        prefix.pop();
    }
    Ok(())
}

fn score_full(
    source: &[TokenId],
    y: &[TokenId],
    scorers: &Scorers,
    cfg: &DecoderConfig,
) -> Result<Option<Hypothesis>> {
    let direct_sum = direct_sequence_logprob(scorers.direct, source, y)?;
    if direct_sum == f64::NEG_INFINITY {
        return Ok(None);
    }
    let channel_sum = match scorers.channel {
        Some(ch) => ch.channel_score(source, y)?,
        None => 0.0,
    };
    let lm_sum = match scorers.lm {
        Some(lm) => lm_sequence_logprob(lm, y)?,
        None => 0.0,
    };
    debug_assert_ne!(y.last(), Some(&EOS));
    let combined = combine(direct_sum, channel_sum, lm_sum, y.len(), source.len(), cfg)?;
    Ok(Some(Hypothesis {
        target: y.to_vec(),
        direct_sum,
        channel_sum,
        lm_sum,
        finished: true,
        combined,
    }))
}

/// Fully sorts every sentence's list under the reranking objective and takes
/// the head.
pub fn exhaustive_rerank(entries: &[NBestEntry], weights: &ScoreWeights) -> Result<Vec<Selection>> {
    if entries.is_empty() {
        return Err(Error::invalid("empty n-best list"));
    }
    group_by_sentence(entries)
        .into_iter()
        .map(|(sentence_id, members)| {
            let mut scored: Vec<(f64, usize)> = members
                .iter()
                .map(|&i| Ok((linear_score(&entries[i], weights)?, i)))
                .collect::<Result<_>>()?;
            scored.sort_by(|a, b| entry_order(a.0, &entries[a.1], b.0, &entries[b.1]));
            Ok(Selection {
                sentence_id,
                index: scored[0].1,
                score: scored[0].0,
            })
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nbest::DIRECT;
    use crate::scorers::{DirectModel, Direction, LexiconTable};

    fn single_token_direct() -> DirectModel {
        // Target vocabulary: BOS, EOS, UNK only.
        DirectModel::new(LexiconTable::uniform(Direction::SourceToTarget, 4, 3, 1.0).unwrap())
            .unwrap()
    }

    #[test]
    fn singleton_space() {
        let direct = single_token_direct();
        let r = exhaustive_decode(
            &[3],
            &Scorers::direct(&direct),
            &DecoderConfig::default(),
            &OracleConfig { max_len: 1 },
        )
        .unwrap();
        assert_eq!(r.ranked.len(), 1);
        assert_eq!(r.best.target, vec![UNK]);
    }

    #[test]
    fn bounds_are_enforced() {
        let direct =
            DirectModel::new(LexiconTable::uniform(Direction::SourceToTarget, 4, 10, 1.0).unwrap())
                .unwrap();
        let err = exhaustive_decode(
            &[3],
            &Scorers::direct(&direct),
            &DecoderConfig::default(),
            &OracleConfig { max_len: 3 },
        )
        .unwrap_err();
        assert!(err.to_string().starts_with("oracle bounds"));
        let direct = single_token_direct();
        assert!(exhaustive_decode(
            &[3],
            &Scorers::direct(&direct),
            &DecoderConfig::default(),
            &OracleConfig { max_len: 7 }
        )
        .is_err());
    }

    #[test]
    fn rerank_one_entry_and_zero_weights() {
        let one = vec![NBestEntry::new(0, vec![3]).with_feature(DIRECT, -1.0)];
        assert_eq!(
            exhaustive_rerank(&one, &ScoreWeights::direct_only()).unwrap()[0].index,
            0
        );

        let list = vec![
            NBestEntry::new(0, vec![4]).with_feature(DIRECT, -2.0),
            NBestEntry::new(0, vec![5]).with_feature(DIRECT, -1.0),
            NBestEntry::new(0, vec![3]).with_feature(DIRECT, -1.0),
        ];
        let zero = ScoreWeights::new(0.0, 0.0, 0.0, 0.0, 0.0);
        // All scores tie at zero: the higher direct feature wins, then smaller tokens.
        assert_eq!(exhaustive_rerank(&list, &zero).unwrap()[0].index, 2);
        assert!(exhaustive_rerank(&[], &zero).is_err());
    }
}
