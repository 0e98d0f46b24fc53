use std::sync::Arc;

use super::DirectScorer;
use crate::error::{Error, Result};
use crate::vocab::TokenId;

/// Direct scorer averaging member probabilities token by token.
#[derive(Clone)]
pub struct Ensemble {
    members: Vec<Arc<dyn DirectScorer>>,
    vocab_size: usize,
}

pub fn make_ensemble(members: Vec<Arc<dyn DirectScorer>>) -> Result<Ensemble> {
    if members.len() < 2 {
        return Err(Error::invalid("an ensemble needs at least two members"));
    }
    let vocab_size = members[0].vocab_size();
    if let Some(m) = members.iter().find(|m| m.vocab_size() != vocab_size) {
        return Err(Error::VocabMismatch(format!(
            "ensemble members disagree on vocabulary size ({} vs {})",
            vocab_size,
            m.vocab_size()
        )));
    }
    Ok(Ensemble {
        members,
        vocab_size,
    })
}

impl Ensemble {
    pub fn members(&self) -> usize {
        self.members.len()
    }
}

impl DirectScorer for Ensemble {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn next_logprobs(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>> {
        let mut mean = vec![0.0; self.vocab_size];
        for m in &self.members {
            let lp = m.next_logprobs(source, prefix)?;
            if lp.len() != self.vocab_size {
                return Err(Error::VocabMismatch(
                    "ensemble member returned a mis-sized distribution".into(),
                ));
            }
            for (acc, l) in mean.iter_mut().zip(lp) {
                *acc += l.exp();
            }
        }
        let total: f64 = mean.iter().sum();
        Ok(mean.into_iter().map(|p| (p / total).ln()).collect())
    }
}
