//! End-to-end experiment plumbing: train the toy models on a parallel
//! corpus, generate direct-model n-best lists, tune and evaluate reranking
//! feature sets, and run the prefix-truncation analyses.

use std::sync::Arc;

use rayon::prelude::*;

use crate::decoder::{beam_search_direct, to_nbest, DecoderConfig, Scorers, SearchMode};
use crate::error::{Error, Result};
use crate::eval::corpus_bleu;
use crate::nbest::{NBestEntry, ScoreWeights};
use crate::reranker::{
    extract_features, rerank, selection_bleu, truncated_entries, tune, tune_on, FeatureSet,
    PrefixSpec, TargetPrefix, TuneConfig,
};
use crate::scorers::{
    make_reversed_direct, reverse_pairs, train_lexicon_em, train_prefix_channel, ChannelModel,
    DirectModel, DirectScorer, Direction, EmTrace, NGramTable, ReversedDirect, SentencePair,
    TrainOptions,
};
use crate::synthetic::{Corpus, Split};
use crate::vocab::{build_vocabulary, TokenId, Vocabulary};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub em_iterations: usize,
    pub lm_order: usize,
    pub lm_alpha: f64,
    /// Diagonal alignment tension for the lexical models.
    pub tension: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            em_iterations: 10,
            lm_order: 2,
            lm_alpha: 0.1,
            tension: 0.0,
            seed: 1,
        }
    }
}

/// A source sentence list and its references, already mapped to ids.
#[derive(Clone, Debug, Default)]
pub struct EncodedSplit {
    pub sources: Vec<Vec<TokenId>>,
    pub references: Vec<Vec<TokenId>>,
}

impl EncodedSplit {
    pub fn len(&self) -> usize {
        self.sources.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sources.is_empty()
    }

    pub fn pairs(&self) -> Vec<SentencePair> {
        self.sources
            .iter()
            .zip(&self.references)
            .map(|(x, y)| SentencePair::new(x.clone(), y.clone()))
            .collect()
    }
}

/// Vocabularies built from the training split plus every split encoded.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub source_vocab: Vocabulary,
    pub target_vocab: Vocabulary,
    pub train: EncodedSplit,
    pub dev: EncodedSplit,
    pub test: EncodedSplit,
}

fn encode_all(vocab: &Vocabulary, corpus: &Corpus) -> Vec<Vec<TokenId>> {
    corpus.iter().map(|s| vocab.encode(s)).collect()
}

impl Dataset {
    pub fn new(train: &Split, dev: &Split, test: &Split) -> Result<Self> {
        for s in [train, dev, test] {
            if s.source.len() != s.target.len() {
                return Err(Error::invalid("source and target sides differ in length"));
            }
        }
        let source_vocab = build_vocabulary(&train.source, 1)?;
        let target_vocab = build_vocabulary(&train.target, 1)?;
        let enc = |s: &Split| EncodedSplit {
            sources: encode_all(&source_vocab, &s.source),
            references: encode_all(&target_vocab, &s.target),
        };
        Ok(Dataset {
            train: enc(train),
            dev: enc(dev),
            test: enc(test),
            source_vocab,
            target_vocab,
        })
    }
}

/// The toy model zoo trained on one corpus.
pub struct ToyModels {
    pub direct: Arc<DirectModel>,
    pub channel: Arc<ChannelModel>,
    /// Channel trained on every target prefix paired with the full source.
    pub prefix_channel: Arc<ChannelModel>,
    /// Direct model trained on reversed pairs.
    pub reverse_direct: Arc<DirectModel>,
    /// `reverse_direct` used right to left.
    pub reverse: ReversedDirect,
    pub lm: Arc<NGramTable>,
    pub traces: Vec<(&'static str, EmTrace)>,
}

impl ToyModels {
    pub fn train(
        train: &[SentencePair],
        source_vocab: usize,
        target_vocab: usize,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        if train.is_empty() {
            return Err(Error::EmptyCorpus);
        }
        let opts = TrainOptions {
            source_vocab,
            target_vocab,
            iterations: cfg.em_iterations,
            seed: cfg.seed,
            tension: cfg.tension,
        };
        let reversed = reverse_pairs(train);
        let ((direct, channel), (prefix, reverse)) = rayon::join(
            || {
                rayon::join(
                    || train_lexicon_em(train, Direction::SourceToTarget, &opts),
                    || train_lexicon_em(train, Direction::TargetToSource, &opts),
                )
            },
            || {
                rayon::join(
                    || train_prefix_channel(train, &opts),
                    || train_lexicon_em(&reversed, Direction::SourceToTarget, &opts),
                )
            },
        );
        let (direct, direct_trace) = direct?;
        let (channel, channel_trace) = channel?;
        let (prefix, prefix_trace) = prefix?;
        let (reverse, reverse_trace) = reverse?;
        let targets: Vec<Vec<TokenId>> = train.iter().map(|p| p.target.clone()).collect();
        let lm = NGramTable::train(&targets, cfg.lm_order, cfg.lm_alpha, target_vocab)?;
        let reverse_direct = Arc::new(DirectModel::new(reverse)?);
        let reverse_inner: Arc<dyn DirectScorer> = reverse_direct.clone();
        Ok(ToyModels {
            direct: Arc::new(DirectModel::new(direct)?),
            channel: Arc::new(ChannelModel::new(channel)?),
            prefix_channel: Arc::new(ChannelModel::new(prefix)?),
            reverse_direct,
            reverse: make_reversed_direct(reverse_inner),
            lm: Arc::new(lm),
            traces: vec![
                ("direct", direct_trace),
                ("channel", channel_trace),
                ("prefix-channel", prefix_trace),
                ("reverse", reverse_trace),
            ],
        })
    }

    /// Direct, full-sentence channel, LM and right-to-left scorers.
    pub fn scorers(&self) -> Scorers<'_> {
        Scorers::noisy_channel(
            self.direct.as_ref(),
            self.channel.as_ref(),
            self.lm.as_ref(),
        )
        .with_reverse(&self.reverse)
    }

    /// Same as [`scorers`](Self::scorers) with the prefix-trained channel.
    pub fn prefix_scorers(&self) -> Scorers<'_> {
        Scorers::noisy_channel(
            self.direct.as_ref(),
            self.prefix_channel.as_ref(),
            self.lm.as_ref(),
        )
        .with_reverse(&self.reverse)
    }
}

/// Beam-decodes every source with the direct model alone and returns the
/// flattened n-best lists with all features of `scorers` filled in.
pub fn direct_nbest(
    sources: &[Vec<TokenId>],
    scorers: &Scorers,
    cfg: &DecoderConfig,
) -> Result<Vec<NBestEntry>> {
    let lists: Vec<Vec<NBestEntry>> = sources
        .par_iter()
        .enumerate()
        .map(|(i, x)| {
            Ok(to_nbest(
                i,
                &beam_search_direct(x, scorers.direct, cfg)?,
                SearchMode::Direct,
            ))
        })
        .collect::<Result<_>>()?;
    let mut entries: Vec<NBestEntry> = lists.into_iter().flatten().collect();
    extract_features(&mut entries, sources, scorers)?;
    Ok(entries)
}

/// Picks the decoder word reward whose direct-beam top hypotheses score the
/// highest BLEU on `split`; ties go to the earlier grid value.
pub fn calibrate_word_reward(
    split: &EncodedSplit,
    direct: &dyn DirectScorer,
    base: &DecoderConfig,
    grid: &[f64],
) -> Result<(f64, f64)> {
    if grid.is_empty() {
        return Err(Error::invalid("empty word reward grid"));
    }
    let mut best: Option<(f64, f64)> = None;
    for &reward in grid {
        let cfg = DecoderConfig {
            word_reward: reward,
            ..*base
        };
        let tops: Vec<Vec<TokenId>> = split
            .sources
            .par_iter()
            .map(|x| {
                let hyps = beam_search_direct(x, direct, &cfg)?;
                Ok(hyps.first().map(|h| h.target.clone()).unwrap_or_default())
            })
            .collect::<Result<_>>()?;
        let bleu = corpus_bleu(&tops, &split.references)?;
        if best.is_none_or(|(_, b)| bleu > b) {
            best = Some((reward, bleu));
        }
    }
    Ok(best.expect("non-empty grid"))
}

#[derive(Clone, Debug)]
pub struct SetResult {
    pub features: FeatureSet,
    pub weights: ScoreWeights,
    pub dev_bleu: f64,
    pub test_bleu: f64,
}

/// Tunes each feature set on dev and applies the weights to test.
pub fn tune_and_evaluate(
    dev: (&[NBestEntry], &[Vec<TokenId>]),
    test: (&[NBestEntry], &[Vec<TokenId>]),
    sets: &[FeatureSet],
    base: &TuneConfig,
) -> Result<Vec<SetResult>> {
    sets.iter()
        .map(|&features| {
            let cfg = TuneConfig { features, ..*base };
            let tuned = tune(dev.0, dev.1, &cfg)?;
            let test_bleu = selection_bleu(test.0, &rerank(test.0, &tuned.weights)?, test.1)?;
            Ok(SetResult {
                features,
                weights: tuned.weights,
                dev_bleu: tuned.bleu,
                test_bleu,
            })
        })
        .collect()
}

/// One cell of a prefix analysis table.
#[derive(Clone, Debug, PartialEq)]
pub struct PrefixRow {
    pub target: TargetPrefix,
    pub source_fraction: f64,
    pub features: FeatureSet,
    pub weights: ScoreWeights,
    pub bleu: f64,
}

impl PrefixRow {
    /// `prefix_len  source_frac  feature_set  bleu`, tab separated.
    pub fn to_tsv(&self) -> String {
        let prefix = match self.target {
            TargetPrefix::Length(k) => k.to_string(),
            TargetPrefix::Fraction(f) => format!("{f:?}"),
        };
        format!(
            "{prefix}\t{:?}\t{}\t{:.2}",
            self.source_fraction, self.features, self.bleu
        )
    }
}

pub const PREFIX_TSV_HEADER: &str = "prefix_len\tsource_frac\tfeature_set\tbleu";

/// Reranks `entries` at every (target prefix, source fraction, feature set)
/// cell. With `tuning` the weights of each cell are tuned on the truncated
/// features; otherwise `fixed` weights are masked to each feature set.
#[allow(clippy::too_many_arguments)]
pub fn prefix_grid(
    entries: &[NBestEntry],
    split: &EncodedSplit,
    scorers: &Scorers,
    targets: &[TargetPrefix],
    source_fractions: &[f64],
    sets: &[FeatureSet],
    tuning: Option<&TuneConfig>,
    fixed: &ScoreWeights,
) -> Result<Vec<PrefixRow>> {
    let mut rows = Vec::new();
    for &target in targets {
        for &source_fraction in source_fractions {
            let spec = PrefixSpec {
                target,
                source_fraction,
                direct_full_source: false,
            };
            let truncated = truncated_entries(entries, &split.sources, scorers, &spec)?;
            for &features in sets {
                let (weights, bleu) = match tuning {
                    Some(base) => {
                        let r = tune_on(
                            &truncated,
                            entries,
                            &split.references,
                            &TuneConfig { features, ..*base },
                        )?;
                        (r.weights, r.bleu)
                    }
                    None => {
                        let w = features.mask(*fixed);
                        let sel = rerank(&truncated, &w)?;
                        (w, selection_bleu(entries, &sel, &split.references)?)
                    }
                };
                rows.push(PrefixRow {
                    target,
                    source_fraction,
                    features,
                    weights,
                    bleu,
                });
            }
        }
    }
    Ok(rows)
}
