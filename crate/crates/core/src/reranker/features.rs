use rayon::prelude::*;

use crate::decoder::Scorers;
use crate::error::{Error, Result};
use crate::nbest::{NBestEntry, CHANNEL, DIRECT, LM, REVERSE};
use crate::scorers::{direct_prefix_logprob, direct_sequence_logprob, with_eos};
use crate::vocab::TokenId;

/// Feature values of one target against one source.
///
/// A `complete` target is scored as a whole sentence, sentence end included.
/// Otherwise it is scored as a prefix: no EOS event for the direct model or
/// the LM, while the channel still scores the entire given source.
pub fn score_target(
    source: &[TokenId],
    target: &[TokenId],
    complete: bool,
    scorers: &Scorers,
) -> Result<Vec<(&'static str, f64)>> {
    score_with_sources(source, source, target, complete, scorers)
}

pub(crate) fn score_with_sources(
    direct_source: &[TokenId],
    source: &[TokenId],
    target: &[TokenId],
    complete: bool,
    scorers: &Scorers,
) -> Result<Vec<(&'static str, f64)>> {
    let mut out = Vec::with_capacity(4);
    let direct = if complete {
        direct_sequence_logprob(scorers.direct, direct_source, target)?
    } else {
        direct_prefix_logprob(scorers.direct, direct_source, target)?
    };
    out.push((DIRECT, direct));
    if let Some(channel) = scorers.channel {
        out.push((CHANNEL, channel.channel_score(source, target)?));
    }
    if let Some(lm) = scorers.lm {
        let value = if complete {
            lm.prefix_logprob(&with_eos(target))?
        } else {
            lm.prefix_logprob(target)?
        };
        out.push((LM, value));
    }
    if let Some(reverse) = scorers.reverse {
        let value = if complete {
            reverse.score(direct_source, target)?
        } else {
            let reversed: Vec<TokenId> = target.iter().rev().copied().collect();
            direct_prefix_logprob(reverse.inner().as_ref(), direct_source, &reversed)?
        };
        out.push((REVERSE, value));
    }
    for &(name, value) in &out {
        if !value.is_finite() {
            return Err(Error::NonFinite { scorer: name });
        }
    }
    Ok(out)
}

/// Fills full-sentence features of every entry from the available scorers.
/// `sources` is indexed by sentence id.
pub fn extract_features(
    entries: &mut [NBestEntry],
    sources: &[Vec<TokenId>],
    scorers: &Scorers,
) -> Result<()> {
    entries.par_iter_mut().try_for_each(|entry| {
        let source = sources
            .get(entry.sentence_id)
            .ok_or(Error::MissingSource(entry.sentence_id))?;
        for (name, value) in score_target(source, &entry.target, true, scorers)? {
            entry.features.insert(name.to_string(), value);
        }
        Ok(())
    })
}
