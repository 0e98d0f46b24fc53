use std::sync::Arc;

use super::{direct_sequence_logprob, DirectScorer};
use crate::error::Result;
use crate::vocab::TokenId;

/// Right-to-left reranking feature: a direct model trained on reversed
/// pairs scores `reverse(y)` given `reverse(x)`. Reversing the source only
/// matters to a model with an alignment prior.
#[derive(Clone)]
pub struct ReversedDirect {
    inner: Arc<dyn DirectScorer>,
}

pub fn make_reversed_direct(inner: Arc<dyn DirectScorer>) -> ReversedDirect {
    ReversedDirect { inner }
}

impl ReversedDirect {
    pub fn score(&self, source: &[TokenId], target: &[TokenId]) -> Result<f64> {
        let source: Vec<TokenId> = source.iter().rev().copied().collect();
        let target: Vec<TokenId> = target.iter().rev().copied().collect();
        direct_sequence_logprob(self.inner.as_ref(), &source, &target)
    }

    pub fn inner(&self) -> &Arc<dyn DirectScorer> {
        &self.inner
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scorers::{
        reverse_pairs, train_lexicon_em, DirectModel, Direction, SentencePair, TrainOptions,
    };

    fn opts() -> TrainOptions {
        TrainOptions {
            source_vocab: 6,
            target_vocab: 6,
            iterations: 5,
            seed: 1,
            tension: 0.0,
        }
    }

    #[test]
    fn feature_is_direct_score_of_reversed_target() {
        let corpus = vec![
            SentencePair::new(vec![3, 4], vec![3, 5]),
            SentencePair::new(vec![4, 5], vec![5, 4, 3]),
        ];
        let (t, _) =
            train_lexicon_em(&reverse_pairs(&corpus), Direction::SourceToTarget, &opts()).unwrap();
        let model: Arc<dyn DirectScorer> = Arc::new(DirectModel::new(t).unwrap());
        let rl = make_reversed_direct(model.clone());
        let expected = direct_sequence_logprob(model.as_ref(), &[4, 3], &[5, 4, 3]).unwrap();
        assert_eq!(rl.score(&[3, 4], &[3, 4, 5]).unwrap(), expected);
        assert_eq!(
            rl.score(&[3, 4], &[3, 4, 5]).unwrap(),
            rl.score(&[3, 4], &[3, 4, 5]).unwrap()
        );
    }

    #[test]
    fn palindromic_corpus_makes_both_directions_agree() {
        let corpus = vec![
            SentencePair::new(vec![3, 4], vec![3, 4, 3]),
            SentencePair::new(vec![5], vec![5, 5]),
        ];
        let (fwd, _) = train_lexicon_em(&corpus, Direction::SourceToTarget, &opts()).unwrap();
        let (bwd, _) =
            train_lexicon_em(&reverse_pairs(&corpus), Direction::SourceToTarget, &opts()).unwrap();
        let fwd = DirectModel::new(fwd).unwrap();
        let rl = make_reversed_direct(Arc::new(DirectModel::new(bwd).unwrap()));
        let y = [4, 3, 4];
        let a = direct_sequence_logprob(&fwd, &[3, 4], &y).unwrap();
        assert!((rl.score(&[3, 4], &y).unwrap() - a).abs() < 1e-12);
    }
}
