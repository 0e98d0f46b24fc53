//! IBM Model 1 lexical translation tables trained with EM, plus the direct
//! and channel scorers built on them.
//!
//! A table holds `t(e|c)` for a conditioning token `c` (or NULL) and an
//! emitted token `e`, and a geometric length model
//! `p_len(m|n) = q (1-q)^(m-1)` with `q = 1 / (r n)` where `r` is the
//! emitted/conditioning length ratio of the training corpus. Each emitted
//! token is drawn from a mixture over NULL and every conditioning token.
//!
//! With the default tension of zero the mixture is uniform, which is Model 1
//! proper. A positive tension adds a diagonal alignment prior: NULL keeps
//! weight `1/(n+1)` and the rest is shared among positions in proportion to
//! `exp(-tension |(i+½)/m - (j+½)/n|)` for emitted position `i` of `m` and
//! conditioning position `j` of `n`. When `m` is not known yet (incremental
//! direct scoring) the expected length `r n` stands in for it.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{ChannelScorer, DirectScorer};
use crate::error::{Error, Result};
use crate::vocab::{TokenId, BOS, EOS, NULL, UNK};

/// Added to every lexical probability after EM, before renormalizing.
pub const PROB_FLOOR: f64 = 1e-6;

/// Keeps the geometric parameter strictly inside (0, 1).
const Q_CLAMP: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SentencePair {
    pub source: Vec<TokenId>,
    pub target: Vec<TokenId>,
}

impl SentencePair {
    pub fn new(source: Vec<TokenId>, target: Vec<TokenId>) -> Self {
        SentencePair { source, target }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Direction {
    /// Conditions on the source and emits the target: p(y|x).
    SourceToTarget,
    /// Conditions on the target and emits the source: p(x|y).
    TargetToSource,
}

impl Direction {
    fn tag(self) -> &'static str {
        match self {
            Direction::SourceToTarget => "src2tgt",
            Direction::TargetToSource => "tgt2src",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LexiconTable {
    direction: Direction,
    cond_size: usize,
    emit_size: usize,
    /// Row-major `cond_size x emit_size`; BOS and EOS columns are zero.
    probs: Vec<f64>,
    length_ratio: f64,
    tension: f64,
}

/// Data log-likelihood before the first and after every EM iteration.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct EmTrace {
    pub log_likelihoods: Vec<f64>,
}

#[derive(Clone, Copy, Debug)]
pub struct TrainOptions {
    pub source_vocab: usize,
    pub target_vocab: usize,
    pub iterations: usize,
    pub seed: u64,
    /// Diagonal alignment tension; zero trains plain Model 1.
    pub tension: f64,
}

impl LexiconTable {
    /// Table with uniform lexical rows over the emittable ids.
    pub fn uniform(
        direction: Direction,
        cond_size: usize,
        emit_size: usize,
        length_ratio: f64,
    ) -> Result<Self> {
        if cond_size < 3 || emit_size < 3 {
            return Err(Error::invalid(
                "vocabularies must contain the reserved symbols",
            ));
        }
        if !(length_ratio > 0.0 && length_ratio.is_finite()) {
            return Err(Error::invalid("length ratio must be positive"));
        }
        let u = 1.0 / (emit_size - 2) as f64;
        let mut probs = vec![0.0; cond_size * emit_size];
        for row in probs.chunks_mut(emit_size) {
            row[UNK as usize..].fill(u);
        }
        Ok(LexiconTable {
            direction,
            cond_size,
            emit_size,
            probs,
            length_ratio,
            tension: 0.0,
        })
    }

    /// Sets the diagonal alignment tension (zero for Model 1).
    pub fn with_tension(mut self, tension: f64) -> Result<Self> {
        if !(tension >= 0.0 && tension.is_finite()) {
            return Err(Error::invalid(
                "alignment tension must be finite and non-negative",
            ));
        }
        self.tension = tension;
        Ok(self)
    }

    pub fn tension(&self) -> f64 {
        self.tension
    }

    /// Prior weights of NULL (index 0) and each of `cond_len` conditioning
    /// positions for emitted position `position` of `emit_len`. Sums to one.
    pub fn alignment(&self, cond_len: usize, position: usize, emit_len: f64) -> Vec<f64> {
        let uniform = 1.0 / (cond_len + 1) as f64;
        let mut w = vec![uniform; cond_len + 1];
        if self.tension == 0.0 || cond_len == 0 {
            return w;
        }
        let at = (position as f64 + 0.5) / emit_len.max(1.0);
        let mut total = 0.0;
        for (j, wj) in w[1..].iter_mut().enumerate() {
            *wj = (-self.tension * (at - (j as f64 + 0.5) / cond_len as f64).abs()).exp();
            total += *wj;
        }
        let scale = (1.0 - uniform) / total;
        w[1..].iter_mut().for_each(|wj| *wj *= scale);
        w
    }

    /// Emitted length assumed by the alignment prior before it is known.
    pub fn expected_emit_len(&self, cond_len: usize) -> f64 {
        self.length_ratio * cond_len.max(1) as f64
    }

    /// Replaces one conditioning row. The row must be a distribution over the
    /// emittable ids (BOS and EOS zero).
    pub fn set_row(&mut self, cond: TokenId, row: &[f64]) -> Result<()> {
        if row.len() != self.emit_size || cond as usize >= self.cond_size {
            return Err(Error::invalid("row does not match table shape"));
        }
        if row[BOS as usize] != 0.0 || row[EOS as usize] != 0.0 {
            return Err(Error::invalid("BOS and EOS cannot be emitted"));
        }
        let sum: f64 = row.iter().sum();
        if (sum - 1.0).abs() > 1e-9 || row.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::invalid("row is not a probability distribution"));
        }
        let start = cond as usize * self.emit_size;
        self.probs[start..start + self.emit_size].copy_from_slice(row);
        Ok(())
    }

    pub fn direction(&self) -> Direction {
        self.direction
    }

    pub fn cond_size(&self) -> usize {
        self.cond_size
    }

    pub fn emit_size(&self) -> usize {
        self.emit_size
    }

    pub fn length_ratio(&self) -> f64 {
        self.length_ratio
    }

    pub fn prob(&self, cond: TokenId, emit: TokenId) -> f64 {
        self.probs[cond as usize * self.emit_size + emit as usize]
    }

    fn row(&self, cond: TokenId) -> &[f64] {
        let start = cond as usize * self.emit_size;
        &self.probs[start..start + self.emit_size]
    }

    fn check_ids(&self, cond: &[TokenId], emit: &[TokenId]) -> Result<()> {
        if let Some(&c) = cond.iter().find(|&&c| c as usize >= self.cond_size) {
            return Err(Error::VocabMismatch(format!(
                "conditioning id {c} outside table"
            )));
        }
        if let Some(&e) = emit.iter().find(|&&e| e as usize >= self.emit_size) {
            return Err(Error::VocabMismatch(format!(
                "emitted id {e} outside table"
            )));
        }
        Ok(())
    }

    /// `Σ_{j ∈ NULL, cond} a_j t(e | c_j)` for emitted position `position` of
    /// `emit_len`; with zero tension `a_j = 1/(n+1)`.
    pub fn mixture(&self, cond: &[TokenId], emit: TokenId, position: usize, emit_len: f64) -> f64 {
        if self.tension == 0.0 {
            let sum = self.prob(NULL, emit) + cond.iter().map(|&c| self.prob(c, emit)).sum::<f64>();
            return sum / (cond.len() + 1) as f64;
        }
        let a = self.alignment(cond.len(), position, emit_len);
        a[0] * self.prob(NULL, emit)
            + cond
                .iter()
                .zip(&a[1..])
                .map(|(&c, w)| w * self.prob(c, emit))
                .sum::<f64>()
    }

    /// Mixture probability of every emittable id at once.
    pub fn mixture_row(&self, cond: &[TokenId], position: usize, emit_len: f64) -> Vec<f64> {
        if self.tension == 0.0 {
            let mut acc = self.row(NULL).to_vec();
            for &c in cond {
                for (a, p) in acc.iter_mut().zip(self.row(c)) {
                    *a += p;
                }
            }
            let norm = (cond.len() + 1) as f64;
            acc.iter_mut().for_each(|a| *a /= norm);
            return acc;
        }
        let a = self.alignment(cond.len(), position, emit_len);
        let mut acc: Vec<f64> = self.row(NULL).iter().map(|p| a[0] * p).collect();
        for (&c, w) in cond.iter().zip(&a[1..]) {
            for (acc, p) in acc.iter_mut().zip(self.row(c)) {
                *acc += w * p;
            }
        }
        acc
    }

    /// Geometric stopping probability for outputs conditioned on `cond_len` tokens.
    pub fn stop_prob(&self, cond_len: usize) -> f64 {
        let q = 1.0 / (self.length_ratio * cond_len.max(1) as f64);
        q.clamp(Q_CLAMP, 1.0 - Q_CLAMP)
    }

    /// log p_len(m | n).
    pub fn length_logprob(&self, emit_len: usize, cond_len: usize) -> f64 {
        if emit_len == 0 {
            return f64::NEG_INFINITY;
        }
        let q = self.stop_prob(cond_len);
        q.ln() + (emit_len - 1) as f64 * (1.0 - q).ln()
    }

    /// Probability of emitting another token after `emitted` tokens.
    pub fn continue_prob(&self, cond_len: usize, emitted: usize) -> f64 {
        if emitted == 0 {
            1.0
        } else {
            1.0 - self.stop_prob(cond_len)
        }
    }

    /// Next emitted-token log-probabilities after `emitted` tokens.
    pub fn next_logprobs(&self, cond: &[TokenId], emitted: usize) -> Vec<f64> {
        let mix = self.mixture_row(cond, emitted, self.expected_emit_len(cond.len()));
        let dist = next_distribution(self.continue_prob(cond.len(), emitted), &mix);
        dist.into_iter().map(f64::ln).collect()
    }

    /// Closed-form full score: `Σ_j log mixture(e_j) + log p_len(|emit| | |cond|)`.
    /// The alignment prior sees the true emitted length, so with a positive
    /// tension this differs from summing [`next_logprobs`](Self::next_logprobs).
    pub fn sequence_logprob(&self, cond: &[TokenId], emit: &[TokenId]) -> f64 {
        let m = emit.len() as f64;
        let lexical: f64 = emit
            .iter()
            .enumerate()
            .map(|(i, &e)| self.mixture(cond, e, i, m).ln())
            .sum();
        lexical + self.length_logprob(emit.len(), cond.len())
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#lexicon v1\ndirection={} cond={} emit={} ratio={} tension={}\n",
            self.direction.tag(),
            self.cond_size,
            self.emit_size,
            self.length_ratio,
            self.tension
        );
        for c in 0..self.cond_size {
            for e in UNK as usize..self.emit_size {
                out.push_str(&format!("{c} {e} {}\n", self.probs[c * self.emit_size + e]));
            }
        }
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("#lexicon v1") {
            return Err(Error::format("missing `#lexicon v1` header"));
        }
        let params = lines
            .next()
            .ok_or_else(|| Error::format("missing lexicon parameters"))?;
        let (mut direction, mut cond, mut emit, mut ratio, mut tension) =
            (None, None, None, None, Some(0.0));
        for kv in params.split_whitespace() {
            match kv.split_once('=') {
                Some(("direction", "src2tgt")) => direction = Some(Direction::SourceToTarget),
                Some(("direction", "tgt2src")) => direction = Some(Direction::TargetToSource),
                Some(("cond", v)) => cond = v.parse().ok(),
                Some(("emit", v)) => emit = v.parse().ok(),
                Some(("ratio", v)) => ratio = v.parse().ok(),
                Some(("tension", v)) => tension = v.parse().ok(),
                _ => return Err(Error::format(format!("unknown lexicon parameter `{kv}`"))),
            }
        }
        let (Some(direction), Some(cond), Some(emit), Some(ratio), Some(tension)) =
            (direction, cond, emit, ratio, tension)
        else {
            return Err(Error::format(
                "lexicon parameters need direction, cond, emit and ratio",
            ));
        };
        let mut table =
            LexiconTable::uniform(direction, cond, emit, ratio)?.with_tension(tension)?;
        table.probs.fill(0.0);
        for line in lines.filter(|l| !l.trim().is_empty()) {
            let bad = || Error::format(format!("bad lexicon row `{line}`"));
            let mut f = line.split_whitespace();
            let c: usize = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let e: usize = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            let p: f64 = f.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
            if f.next().is_some()
                || c >= cond
                || e >= emit
                || e < UNK as usize
                || !(p > 0.0 && p <= 1.0)
            {
                return Err(bad());
            }
            table.probs[c * emit + e] = p;
        }
        for c in 0..cond {
            let sum: f64 = table.row(c as TokenId).iter().sum();
            if (sum - 1.0).abs() > 1e-9 {
                return Err(Error::format(format!("lexicon row {c} sums to {sum}")));
            }
        }
        Ok(table)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut f = fs::File::create(path)?;
        f.write_all(self.to_text().as_bytes())?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Splits probability mass between continuing (`p_cont` times the lexical
/// mixture) and stopping (`1 - p_cont` on EOS).
pub fn next_distribution(p_cont: f64, mixture: &[f64]) -> Vec<f64> {
    let mut dist: Vec<f64> = mixture.iter().map(|m| p_cont * m).collect();
    dist[BOS as usize] = 0.0;
    dist[EOS as usize] = 1.0 - p_cont;
    dist
}

/// Trains a lexical table with IBM Model 1 EM from a uniform start.
///
/// The seed only shuffles the corpus, which changes nothing but floating
/// point summation order. Per-iteration log-likelihoods are recorded before
/// the probability floor is applied.
pub fn train_lexicon_em(
    corpus: &[SentencePair],
    direction: Direction,
    opts: &TrainOptions,
) -> Result<(LexiconTable, EmTrace)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if opts.iterations == 0 {
        return Err(Error::invalid("EM needs at least one iteration"));
    }
    let (cond_size, emit_size) = match direction {
        Direction::SourceToTarget => (opts.source_vocab, opts.target_vocab),
        Direction::TargetToSource => (opts.target_vocab, opts.source_vocab),
    };
    let mut pairs: Vec<(&[TokenId], &[TokenId])> = corpus
        .iter()
        .map(|p| match direction {
            Direction::SourceToTarget => (p.source.as_slice(), p.target.as_slice()),
            Direction::TargetToSource => (p.target.as_slice(), p.source.as_slice()),
        })
        .collect();
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(opts.seed));

    let (mut cond_total, mut emit_total) = (0usize, 0usize);
    for (cond, emit) in &pairs {
        if cond.iter().any(|&c| c as usize >= cond_size || c < UNK)
            || emit.iter().any(|&e| e as usize >= emit_size || e < UNK)
        {
            return Err(Error::VocabMismatch(
                "training pair contains ids outside the vocabulary".into(),
            ));
        }
        cond_total += cond.len();
        emit_total += emit.len();
    }
    let ratio = if cond_total == 0 || emit_total == 0 {
        1.0
    } else {
        emit_total as f64 / cond_total as f64
    };

    let mut table = LexiconTable::uniform(direction, cond_size, emit_size, ratio)?
        .with_tension(opts.tension)?;
    let mut trace = EmTrace::default();
    let mut counts = vec![0.0; cond_size * emit_size];
    for iteration in 0..=opts.iterations {
        counts.fill(0.0);
        let mut ll = 0.0;
        for (cond, emit) in &pairs {
            let m = emit.len() as f64;
            for (i, &e) in emit.iter().enumerate() {
                let a = table.alignment(cond.len(), i, m);
                let joint = |k: usize, c: TokenId| a[k] * table.prob(c, e);
                let denom = joint(0, NULL)
                    + cond
                        .iter()
                        .enumerate()
                        .map(|(j, &c)| joint(j + 1, c))
                        .sum::<f64>();
                ll += denom.ln();
                for (k, &c) in std::iter::once(&NULL).chain(cond.iter()).enumerate() {
                    counts[c as usize * emit_size + e as usize] += joint(k, c) / denom;
                }
            }
        }
        trace.log_likelihoods.push(ll);
        if iteration == opts.iterations {
            break;
        }
        for (row, row_counts) in table
            .probs
            .chunks_mut(emit_size)
            .zip(counts.chunks(emit_size))
        {
            let total: f64 = row_counts.iter().sum();
            if total > 0.0 {
                for (p, n) in row.iter_mut().zip(row_counts) {
                    *p = n / total;
                }
            }
        }
    }

    let emittable = (emit_size - 2) as f64;
    for row in table.probs.chunks_mut(emit_size) {
        for p in &mut row[UNK as usize..] {
            *p = (*p + PROB_FLOOR) / (1.0 + PROB_FLOOR * emittable);
        }
    }
    Ok((table, trace))
}

/// Every pair `(x, y)` becomes `(x, y[..k])` for `k = 1..=|y|`.
pub fn expand_prefix_pairs(corpus: &[SentencePair]) -> Vec<SentencePair> {
    corpus
        .iter()
        .flat_map(|p| {
            (1..=p.target.len())
                .map(move |k| SentencePair::new(p.source.clone(), p.target[..k].to_vec()))
        })
        .collect()
}

/// Channel table trained to explain the full source from every target prefix.
pub fn train_prefix_channel(
    corpus: &[SentencePair],
    opts: &TrainOptions,
) -> Result<(LexiconTable, EmTrace)> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    train_lexicon_em(
        &expand_prefix_pairs(corpus),
        Direction::TargetToSource,
        opts,
    )
}

/// Reverses both sides of every pair, the training data of the
/// right-to-left direct model.
pub fn reverse_pairs(corpus: &[SentencePair]) -> Vec<SentencePair> {
    corpus
        .iter()
        .map(|p| {
            SentencePair::new(
                p.source.iter().rev().copied().collect(),
                p.target.iter().rev().copied().collect(),
            )
        })
        .collect()
}

/// p(y|x) from a source-to-target table.
#[derive(Clone, Debug)]
pub struct DirectModel {
    table: LexiconTable,
}

impl DirectModel {
    pub fn new(table: LexiconTable) -> Result<Self> {
        if table.direction != Direction::SourceToTarget {
            return Err(Error::invalid(
                "direct model needs a source-to-target table",
            ));
        }
        Ok(DirectModel { table })
    }

    pub fn table(&self) -> &LexiconTable {
        &self.table
    }
}

impl DirectScorer for DirectModel {
    fn vocab_size(&self) -> usize {
        self.table.emit_size
    }

    fn next_logprobs(&self, source: &[TokenId], prefix: &[TokenId]) -> Result<Vec<f64>> {
        self.table.check_ids(source, prefix)?;
        Ok(self.table.next_logprobs(source, prefix.len()))
    }
}

/// p(x|y) from a target-to-source table; always scores the entire source.
#[derive(Clone, Debug)]
pub struct ChannelModel {
    table: LexiconTable,
}

impl ChannelModel {
    pub fn new(table: LexiconTable) -> Result<Self> {
        if table.direction != Direction::TargetToSource {
            return Err(Error::invalid(
                "channel model needs a target-to-source table",
            ));
        }
        Ok(ChannelModel { table })
    }

    pub fn table(&self) -> &LexiconTable {
        &self.table
    }
}

impl ChannelScorer for ChannelModel {
    fn channel_score(&self, source: &[TokenId], target_prefix: &[TokenId]) -> Result<f64> {
        self.table.check_ids(target_prefix, source)?;
        Ok(self.table.sequence_logprob(target_prefix, source))
    }
}
