//! N-best reranking with linear feature weights.
//!
//! The reranking objective is
//! `w_direct direct + w_channel channel + w_lm lm + w_reverse reverse + reward |y|`
//! over full-sentence, unnormalized log scores. Ties go to the higher direct
//! feature, then to the lexicographically smaller target.

mod features;
mod prefix;
mod tune;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

pub use features::{extract_features, score_target};
pub use prefix::{prefix_rerank, truncated_entries, PrefixOutcome, PrefixSpec, TargetPrefix};
pub use tune::{tune, tune_on, TuneConfig, TuneResult};

use crate::error::{Error, Result};
use crate::eval::BleuStats;
use crate::nbest::{group_by_sentence, NBestEntry, ScoreWeights, CHANNEL, DIRECT, LM, REVERSE};
use crate::vocab::TokenId;

/// The entry chosen for one sentence.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Selection {
    pub sentence_id: usize,
    /// Index into the entry slice that was reranked.
    pub index: usize,
    pub score: f64,
}

/// Which features take part in a reranking configuration.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct FeatureSet {
    pub direct: bool,
    pub channel: bool,
    pub lm: bool,
    pub reverse: bool,
}

impl FeatureSet {
    pub const DIR: FeatureSet = FeatureSet::new(true, false, false, false);
    pub const CH: FeatureSet = FeatureSet::new(false, true, false, false);
    pub const CH_DIR: FeatureSet = FeatureSet::new(true, true, false, false);
    pub const DIR_LM: FeatureSet = FeatureSet::new(true, false, true, false);
    pub const DIR_RL: FeatureSet = FeatureSet::new(true, false, false, true);
    pub const DIR_RL_LM: FeatureSet = FeatureSet::new(true, false, true, true);
    pub const CH_DIR_LM: FeatureSet = FeatureSet::new(true, true, true, false);

    pub const fn new(direct: bool, channel: bool, lm: bool, reverse: bool) -> Self {
        FeatureSet {
            direct,
            channel,
            lm,
            reverse,
        }
    }

    pub fn contains(&self, feature: &str) -> bool {
        match feature {
            DIRECT => self.direct,
            CHANNEL => self.channel,
            LM => self.lm,
            REVERSE => self.reverse,
            _ => false,
        }
    }

    /// Zeroes the weights of features outside the set.
    pub fn mask(&self, w: ScoreWeights) -> ScoreWeights {
        ScoreWeights::new(
            if self.direct { w.direct } else { 0.0 },
            if self.channel { w.channel } else { 0.0 },
            if self.lm { w.lm } else { 0.0 },
            if self.reverse { w.reverse } else { 0.0 },
            w.word_reward,
        )
    }
}

impl fmt::Display for FeatureSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut parts = Vec::new();
        if self.channel {
            parts.push("ch");
        }
        if self.direct {
            parts.push("dir");
        }
        if self.reverse {
            parts.push("rl");
        }
        if self.lm {
            parts.push("lm");
        }
        write!(f, "{}", parts.join("+"))
    }
}

impl FromStr for FeatureSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let mut set = FeatureSet::new(false, false, false, false);
        for part in s.to_ascii_lowercase().split('+') {
            match part.trim() {
                "dir" => set.direct = true,
                "ch" => set.channel = true,
                "lm" => set.lm = true,
                "rl" => set.reverse = true,
                other => {
                    return Err(Error::invalid(format!(
                        "unknown feature `{other}` in `{s}`"
                    )))
                }
            }
        }
        Ok(set)
    }
}

/// Weighted sum of the entry's features plus the word reward. Features with
/// zero weight need not be present.
pub fn linear_score(entry: &NBestEntry, weights: &ScoreWeights) -> Result<f64> {
    let mut score = 0.0;
    for (name, w) in weights.feature_weights() {
        if w != 0.0 {
            let value = entry
                .feature(name)
                .ok_or_else(|| Error::MissingFeature(name.to_string()))?;
            score += w * value;
        }
    }
    Ok(score + weights.word_reward * entry.target.len() as f64)
}

/// Best first under the reranking tie rule.
pub fn entry_order(score_a: f64, a: &NBestEntry, score_b: f64, b: &NBestEntry) -> Ordering {
    let direct = |e: &NBestEntry| e.feature(DIRECT).unwrap_or(f64::NEG_INFINITY);
    score_b
        .total_cmp(&score_a)
        .then_with(|| direct(b).total_cmp(&direct(a)))
        .then_with(|| a.target.cmp(&b.target))
}

/// Picks the highest-scoring entry of every sentence in one pass.
pub fn rerank(entries: &[NBestEntry], weights: &ScoreWeights) -> Result<Vec<Selection>> {
    if entries.is_empty() {
        return Err(Error::invalid("empty n-best list"));
    }
    weights.validate()?;
    group_by_sentence(entries)
        .into_iter()
        .map(|(sentence_id, members)| {
            let mut best: Option<(f64, usize)> = None;
            for i in members {
                let score = linear_score(&entries[i], weights)?;
                let better = match best {
                    None => true,
                    Some((bs, bi)) => {
                        entry_order(score, &entries[i], bs, &entries[bi]) == Ordering::Less
                    }
                };
                if better {
                    best = Some((score, i));
                }
            }
            let (score, index) = best.expect("groups are non-empty");
            Ok(Selection {
                sentence_id,
                index,
                score,
            })
        })
        .collect()
}

/// Corpus statistics of the selected entries against per-sentence references
/// (indexed by sentence id).
pub fn selection_stats(
    entries: &[NBestEntry],
    selections: &[Selection],
    references: &[Vec<TokenId>],
) -> Result<BleuStats> {
    let mut stats = BleuStats::default();
    for sel in selections {
        let reference = references.get(sel.sentence_id).ok_or_else(|| {
            Error::invalid(format!("no reference for sentence {}", sel.sentence_id))
        })?;
        stats.accumulate(&entries[sel.index].target, reference);
    }
    Ok(stats)
}

pub fn selection_bleu(
    entries: &[NBestEntry],
    selections: &[Selection],
    references: &[Vec<TokenId>],
) -> Result<f64> {
    selection_stats(entries, selections, references)?.bleu()
}

/// The entry with the best sentence-level BLEU for each sentence (first on ties).
pub fn oracle_selection(
    entries: &[NBestEntry],
    references: &[Vec<TokenId>],
) -> Result<Vec<(Selection, f64)>> {
    group_by_sentence(entries)
        .into_iter()
        .map(|(sentence_id, members)| {
            let reference = references.get(sentence_id).ok_or_else(|| {
                Error::invalid(format!("no reference for sentence {sentence_id}"))
            })?;
            let mut best = (members[0], f64::NEG_INFINITY);
            for i in members {
                let b = BleuStats::for_pair(&entries[i].target, reference).bleu()?;
                if b > best.1 {
                    best = (i, b);
                }
            }
            Ok((
                Selection {
                    sentence_id,
                    index: best.0,
                    score: best.1,
                },
                best.1,
            ))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle::exhaustive_rerank;
    use proptest::prelude::*;

    fn entry(id: usize, target: Vec<TokenId>, d: f64, c: f64, l: f64) -> NBestEntry {
        NBestEntry::new(id, target)
            .with_feature(DIRECT, d)
            .with_feature(CHANNEL, c)
            .with_feature(LM, l)
    }

    #[test]
    fn direct_weights_pick_best_direct_score() {
        let list = vec![
            entry(0, vec![3], -3.0, -1.0, -1.0),
            entry(0, vec![4], -1.0, -9.0, -9.0),
            entry(0, vec![5], -2.0, -1.0, -1.0),
        ];
        let sel = rerank(&list, &ScoreWeights::direct_only()).unwrap();
        assert_eq!(sel[0].index, 1);
        let sel = rerank(&list, &ScoreWeights::new(1.0, 1.0, 1.0, 0.0, 0.0)).unwrap();
        assert_eq!(sel[0].index, 2);
    }

    #[test]
    fn missing_feature_is_named() {
        let list = vec![NBestEntry::new(0, vec![3]).with_feature(DIRECT, -1.0)];
        let err = rerank(&list, &ScoreWeights::new(1.0, 0.0, 0.5, 0.0, 0.0)).unwrap_err();
        assert_eq!(err.to_string(), "missing feature `lm`");
        assert!(rerank(&list, &ScoreWeights::new(1.0, 0.0, 0.0, 0.0, 0.3)).is_ok());
    }

    #[test]
    fn word_reward_prefers_longer_targets() {
        let list = vec![
            entry(0, vec![3], -1.0, 0.0, 0.0),
            entry(0, vec![3, 4, 5], -2.0, 0.0, 0.0),
        ];
        assert_eq!(
            rerank(&list, &ScoreWeights::direct_only()).unwrap()[0].index,
            0
        );
        assert_eq!(
            rerank(&list, &ScoreWeights::new(1.0, 0.0, 0.0, 0.0, 1.0)).unwrap()[0].index,
            1
        );
    }

    #[test]
    fn feature_set_names() {
        for name in [
            "dir",
            "ch+dir",
            "dir+lm",
            "dir+rl",
            "dir+rl+lm",
            "ch+dir+lm",
        ] {
            let set: FeatureSet = name.parse().unwrap();
            assert_eq!(set.to_string(), name);
        }
        assert_eq!(
            "CH+DIR+LM".parse::<FeatureSet>().unwrap(),
            FeatureSet::CH_DIR_LM
        );
        assert!("dir+xx".parse::<FeatureSet>().is_err());
    }

    #[test]
    fn larger_lists_never_lower_oracle_bleu() {
        let refs = vec![vec![3, 4, 5, 6, 7]];
        let list = [entry(0, vec![3, 4, 9, 9, 9], -1.0, 0.0, 0.0),
            entry(0, vec![3, 4, 5, 6, 9], -2.0, 0.0, 0.0),
            entry(0, vec![3, 4, 5, 6, 7], -3.0, 0.0, 0.0)];
        let mut prev = f64::NEG_INFINITY;
        for k in 1..=list.len() {
            let best = oracle_selection(&list[..k], &refs).unwrap()[0].1;
            assert!(best >= prev);
            prev = best;
        }
        assert_eq!(prev, 100.0);
    }

    fn arb_list() -> impl Strategy<Value = Vec<NBestEntry>> {
        proptest::collection::vec(
            (
                0usize..4,
                proptest::collection::vec(2u32..6, 1..5),
                -20.0f64..0.0,
                -20.0f64..0.0,
                -20.0f64..0.0,
            )
                .prop_map(|(id, t, d, c, l)| entry(id, t, d, c, l)),
            1..30,
        )
    }

    fn arb_weights() -> impl Strategy<Value = ScoreWeights> {
        (0.0f64..3.0, 0.0f64..3.0, 0.0f64..3.0, -1.0f64..1.0)
            .prop_map(|(d, c, l, r)| ScoreWeights::new(d, c, l, 0.0, r))
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(300))]

        #[test]
        fn single_pass_agrees_with_full_sort(list in arb_list(), w in arb_weights()) {
            prop_assert_eq!(rerank(&list, &w).unwrap(), exhaustive_rerank(&list, &w).unwrap());
        }

        #[test]
        fn positive_scaling_keeps_selection(list in arb_list(), w in arb_weights(), c in 0.01f64..100.0) {
            let a: Vec<usize> = rerank(&list, &w).unwrap().iter().map(|s| s.index).collect();
            let b: Vec<usize> = rerank(&list, &w.scaled(c)).unwrap().iter().map(|s| s.index).collect();
            prop_assert_eq!(a, b);
        }
    }
}
