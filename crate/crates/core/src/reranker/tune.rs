//! Reranking weight tuning: seeded random search followed by coordinate
//! refinement with halving step sizes. Derivative-free and reproducible.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{rerank, selection_stats, FeatureSet};
use crate::error::{Error, Result};
use crate::eval::BleuStats;
use crate::nbest::{NBestEntry, ScoreWeights};
use crate::vocab::TokenId;

/// Cap on coordinate sweeps per refinement round.
const MAX_PASSES: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TuneConfig {
    pub trials: usize,
    pub seed: u64,
    pub weight_range: (f64, f64),
    pub reward_range: (f64, f64),
    pub refinement_rounds: usize,
    pub features: FeatureSet,
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            trials: 200,
            seed: 0,
            weight_range: (0.0, 3.0),
            reward_range: (-1.0, 1.0),
            refinement_rounds: 3,
            features: FeatureSet::CH_DIR_LM,
        }
    }
}

impl TuneConfig {
    fn validate(&self) -> Result<()> {
        if self.trials == 0 {
            return Err(Error::invalid("tuning needs at least one trial"));
        }
        for (lo, hi) in [self.weight_range, self.reward_range] {
            if !(lo.is_finite() && hi.is_finite() && lo < hi) {
                return Err(Error::invalid(
                    "tuning ranges must be finite and non-degenerate",
                ));
            }
        }
        Ok(())
    }

    /// Indices into `ScoreWeights::as_array` that the search may move.
    fn free_dims(&self) -> Vec<usize> {
        let f = self.features;
        [f.direct, f.channel, f.lm, f.reverse, true]
            .iter()
            .enumerate()
            .filter_map(|(i, &on)| on.then_some(i))
            .collect()
    }

    fn range(&self, dim: usize) -> (f64, f64) {
        if dim == 4 {
            self.reward_range
        } else {
            self.weight_range
        }
    }
}

#[derive(Clone, Debug)]
pub struct TuneResult {
    pub weights: ScoreWeights,
    pub bleu: f64,
    /// Every evaluated weight vector with its BLEU, in evaluation order.
    pub visited: Vec<(ScoreWeights, f64)>,
}

/// Searches reranking weights maximizing corpus BLEU of the selections.
/// `references` is indexed by sentence id.
pub fn tune(
    entries: &[NBestEntry],
    references: &[Vec<TokenId>],
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    tune_on(entries, entries, references, cfg)
}

/// Like [`tune`], but selections are made on `scoring` (for instance
/// truncated candidates) while BLEU is measured on the parallel `judged`
/// entries (the full candidates).
pub fn tune_on(
    scoring: &[NBestEntry],
    judged: &[NBestEntry],
    references: &[Vec<TokenId>],
    cfg: &TuneConfig,
) -> Result<TuneResult> {
    cfg.validate()?;
    if scoring.is_empty() {
        return Err(Error::invalid("empty dev set"));
    }
    if scoring.len() != judged.len()
        || scoring
            .iter()
            .zip(judged)
            .any(|(a, b)| a.sentence_id != b.sentence_id)
    {
        return Err(Error::invalid(
            "scoring and judged entries are not parallel",
        ));
    }
    let evaluate = |w: &ScoreWeights| -> Result<f64> {
        let selections = rerank(scoring, w)?;
        let stats: BleuStats = selection_stats(judged, &selections, references)?;
        stats.bleu()
    };

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let dims = cfg.free_dims();
    let mut candidates = Vec::with_capacity(cfg.trials);
    let mut baseline = ScoreWeights::new(0.0, 0.0, 0.0, 0.0, 0.0).as_array();
    for &d in dims.iter().filter(|&&d| d < 4) {
        baseline[d] = 1.0;
    }
    if cfg.features.direct {
        baseline = ScoreWeights::direct_only().as_array();
    }
    candidates.push(ScoreWeights::from_array(baseline));
    while candidates.len() < cfg.trials {
        let mut w = [0.0; 5];
        for &d in &dims {
            let (lo, hi) = cfg.range(d);
            w[d] = rng.gen_range(lo..hi);
        }
        candidates.push(ScoreWeights::from_array(w));
    }

    let scores: Vec<f64> = candidates.par_iter().map(evaluate).collect::<Result<_>>()?;
    let mut visited: Vec<(ScoreWeights, f64)> = candidates.into_iter().zip(scores).collect();
    let (mut best, mut best_bleu) = visited
        .iter()
        .enumerate()
        .max_by(|(i, a), (j, b)| a.1.total_cmp(&b.1).then(j.cmp(i)))
        .map(|(_, &(w, b))| (w, b))
        .expect("at least one trial");

    let mut steps: Vec<f64> = dims
        .iter()
        .map(|&d| {
            let (lo, hi) = cfg.range(d);
            (hi - lo) / 4.0
        })
        .collect();
    for _ in 0..cfg.refinement_rounds {
        // Sweep the coordinates until a full pass brings no improvement.
        for _ in 0..MAX_PASSES {
            let mut improved = false;
            for (k, &d) in dims.iter().enumerate() {
                let (lo, hi) = cfg.range(d);
                for sign in [1.0, -1.0] {
                    let mut w = best.as_array();
                    w[d] = (w[d] + sign * steps[k]).clamp(lo, hi);
                    let w = ScoreWeights::from_array(w);
                    if w == best {
                        continue;
                    }
                    let b = evaluate(&w)?;
                    visited.push((w, b));
                    if b > best_bleu {
                        best = w;
                        best_bleu = b;
                        improved = true;
                    }
                }
            }
            if !improved {
                break;
            }
        }
        steps.iter_mut().for_each(|s| *s /= 2.0);
    }

    Ok(TuneResult {
        weights: best,
        bleu: best_bleu,
        visited,
    })
}
