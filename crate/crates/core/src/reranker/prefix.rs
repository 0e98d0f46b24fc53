//! Reranking with only a fraction of each candidate and of the source.
//!
//! Features are recomputed on the truncated target and the truncated source,
//! the list is reranked on those, and BLEU is measured on the full selected
//! candidates. A target prefix that covers the whole candidate is scored as a
//! complete sentence, so full fractions reproduce plain reranking exactly.

use rayon::prelude::*;

use super::features::score_with_sources;
use super::{rerank, selection_bleu, Selection};
use crate::decoder::Scorers;
use crate::error::{Error, Result};
use crate::nbest::{NBestEntry, ScoreWeights};
use crate::vocab::TokenId;

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum TargetPrefix {
    /// Keep the first `k` target tokens.
    Length(usize),
    /// Keep `max(1, round(f |y|))` target tokens.
    Fraction(f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PrefixSpec {
    pub target: TargetPrefix,
    /// Keep the first `ceil(f |x|)` source tokens.
    pub source_fraction: f64,
    /// Score the direct feature on the full source instead of the truncated one.
    pub direct_full_source: bool,
}

impl PrefixSpec {
    pub fn full() -> Self {
        PrefixSpec {
            target: TargetPrefix::Fraction(1.0),
            source_fraction: 1.0,
            direct_full_source: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = |f: f64| f > 0.0 && f <= 1.0;
        match self.target {
            TargetPrefix::Length(0) => {
                return Err(Error::invalid("target prefix length must be at least 1"))
            }
            TargetPrefix::Fraction(f) if !ok(f) => {
                return Err(Error::invalid("target fraction must be in (0, 1]"))
            }
            _ => {}
        }
        if !ok(self.source_fraction) {
            return Err(Error::invalid("source fraction must be in (0, 1]"));
        }
        Ok(())
    }

    pub fn target_len(&self, len: usize) -> usize {
        match self.target {
            TargetPrefix::Length(k) => k.min(len),
            TargetPrefix::Fraction(f) => ((f * len as f64).round() as usize).max(1).min(len),
        }
    }

    pub fn source_len(&self, len: usize) -> usize {
        ((self.source_fraction * len as f64).ceil() as usize).min(len)
    }
}

#[derive(Clone, Debug)]
pub struct PrefixOutcome {
    pub selections: Vec<Selection>,
    pub bleu: f64,
}

/// Copies of `entries` whose target is the truncated prefix and whose
/// features are rescored on the truncated target and source.
pub fn truncated_entries(
    entries: &[NBestEntry],
    sources: &[Vec<TokenId>],
    scorers: &Scorers,
    spec: &PrefixSpec,
) -> Result<Vec<NBestEntry>> {
    spec.validate()?;
    entries
        .par_iter()
        .map(|e| {
            let source = sources
                .get(e.sentence_id)
                .ok_or(Error::MissingSource(e.sentence_id))?;
            let kept = spec.target_len(e.target.len());
            let target = &e.target[..kept];
            let src = &source[..spec.source_len(source.len())];
            let direct_src = if spec.direct_full_source {
                source.as_slice()
            } else {
                src
            };
            let complete = kept == e.target.len();
            let mut out = NBestEntry::new(e.sentence_id, target.to_vec());
            for (name, value) in score_with_sources(direct_src, src, target, complete, scorers)? {
                out.features.insert(name.to_string(), value);
            }
            out.total = e.total;
            Ok(out)
        })
        .collect()
}

/// Reranks on truncated features and reports BLEU of the full selections.
pub fn prefix_rerank(
    entries: &[NBestEntry],
    sources: &[Vec<TokenId>],
    references: &[Vec<TokenId>],
    scorers: &Scorers,
    spec: &PrefixSpec,
    weights: &ScoreWeights,
) -> Result<PrefixOutcome> {
    let truncated = truncated_entries(entries, sources, scorers, spec)?;
    let selections = rerank(&truncated, weights)?;
    let bleu = selection_bleu(entries, &selections, references)?;
    Ok(PrefixOutcome { selections, bleu })
}
