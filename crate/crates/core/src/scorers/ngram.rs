//! Add-α smoothed n-gram language model with fixed linear interpolation.
//!
//! Each order mixes its own smoothed estimate with the next lower order:
//! `p_k(w|c) = 0.7 * (n(c,w) + α) / (n(c) + α|V|) + 0.3 * p_{k-1}(w|c')`,
//! bottoming out at the smoothed unigram. A context never seen in training
//! contributes nothing and the distribution falls back to the lower order.
//! `|V|` counts every predictable id, i.e. the whole vocabulary except BOS.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::LanguageModel;
use crate::error::{Error, Result};
use crate::vocab::{TokenId, BOS, EOS};

/// Weight of the higher-order estimate at every interpolation level.
pub const INTERPOLATION: f64 = 0.7;

#[derive(Clone, Debug, Default, PartialEq)]
struct ContextCounts {
    total: u64,
    next: HashMap<TokenId, u64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NGramTable {
    order: usize,
    alpha: f64,
    vocab_size: usize,
    /// `levels[k]` holds contexts of exactly `k` tokens.
    levels: Vec<HashMap<Vec<TokenId>, ContextCounts>>,
}

impl NGramTable {
    pub fn new(order: usize, alpha: f64, vocab_size: usize) -> Result<Self> {
        if order == 0 {
            return Err(Error::invalid("n-gram order must be at least 1"));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("smoothing constant must be positive"));
        }
        if vocab_size < 3 {
            return Err(Error::invalid(
                "vocabulary must contain the reserved symbols",
            ));
        }
        Ok(NGramTable {
            order,
            alpha,
            vocab_size,
            levels: vec![HashMap::new(); order],
        })
    }

    /// Counts every n-gram of every order in `corpus`; each sentence ends with EOS.
    pub fn train(
        corpus: &[Vec<TokenId>],
        order: usize,
        alpha: f64,
        vocab_size: usize,
    ) -> Result<Self> {
        let mut table = NGramTable::new(order, alpha, vocab_size)?;
        for sentence in corpus {
            if let Some(&bad) = sentence
                .iter()
                .find(|&&t| t as usize >= vocab_size || t == BOS || t == EOS)
            {
                return Err(Error::VocabMismatch(format!(
                    "token id {bad} cannot appear inside a sentence"
                )));
            }
            let mut history = vec![BOS; order - 1];
            history.extend_from_slice(sentence);
            history.push(EOS);
            for pos in order - 1..history.len() {
                let word = history[pos];
                for k in 0..order {
                    table.add_count(&history[pos - k..pos], word, 1);
                }
            }
        }
        Ok(table)
    }

    /// Adds `count` observations of `word` after `context` (context length < order).
    pub fn add_count(&mut self, context: &[TokenId], word: TokenId, count: u64) {
        let entry = self.levels[context.len()]
            .entry(context.to_vec())
            .or_default();
        entry.total += count;
        *entry.next.entry(word).or_default() += count;
    }

    pub fn order(&self) -> usize {
        self.order
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    /// Number of predictable ids (everything except BOS).
    pub fn predictable(&self) -> usize {
        self.vocab_size - 1
    }

    /// Next-token distribution (probabilities) after `history`, which holds
    /// content tokens only; BOS padding is implicit.
    pub fn next_probs(&self, history: &[TokenId]) -> Vec<f64> {
        let v = self.predictable() as f64;
        let mut padded = vec![BOS; (self.order - 1).saturating_sub(history.len())];
        let keep = history.len().min(self.order - 1);
        padded.extend_from_slice(&history[history.len() - keep..]);

        let mut probs = vec![0.0; self.vocab_size];
        let unigram = self.levels[0].get(&[][..]);
        let total = unigram.map_or(0, |c| c.total) as f64;
        for (w, p) in probs.iter_mut().enumerate().skip(1) {
            let n = unigram
                .and_then(|c| c.next.get(&(w as TokenId)))
                .copied()
                .unwrap_or(0) as f64;
            *p = (n + self.alpha) / (total + self.alpha * v);
        }
        for k in 1..self.order {
            let context = &padded[padded.len() - k..];
            let Some(counts) = self.levels[k].get(context).filter(|c| c.total > 0) else {
                continue;
            };
            let denom = counts.total as f64 + self.alpha * v;
            for (w, p) in probs.iter_mut().enumerate().skip(1) {
                let n = counts.next.get(&(w as TokenId)).copied().unwrap_or(0) as f64;
                *p = INTERPOLATION * (n + self.alpha) / denom + (1.0 - INTERPOLATION) * *p;
            }
        }
        probs
    }

    /// Natural-log version of [`next_probs`](Self::next_probs); BOS is `-inf`.
    pub fn next_logprobs(&self, history: &[TokenId]) -> Vec<f64> {
        self.next_probs(history).into_iter().map(f64::ln).collect()
    }

    pub fn sequence_logprob(&self, target: &[TokenId]) -> f64 {
        self.prefix_score(&super::with_eos(target))
    }

    fn prefix_score(&self, tokens: &[TokenId]) -> f64 {
        (0..tokens.len())
            .map(|j| self.next_probs(&tokens[..j])[tokens[j] as usize].ln())
            .sum()
    }

    pub fn to_text(&self) -> String {
        let mut out = format!(
            "#ngram v1\norder={} alpha={} vocab={}\n",
            self.order, self.alpha, self.vocab_size
        );
        for (k, level) in self.levels.iter().enumerate() {
            out.push_str(&format!("\\{}-grams:\n", k + 1));
            let mut rows: Vec<(Vec<TokenId>, u64)> = level
                .iter()
                .flat_map(|(ctx, c)| {
                    c.next.iter().map(move |(&w, &n)| {
                        let mut key = ctx.clone();
                        key.push(w);
                        (key, n)
                    })
                })
                .collect();
            rows.sort();
            for (key, n) in rows {
                let ids: Vec<String> = key.iter().map(|t| t.to_string()).collect();
                out.push_str(&format!("{n} {}\n", ids.join(" ")));
            }
        }
        out.push_str("\\end\\\n");
        out
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        if lines.next() != Some("#ngram v1") {
            return Err(Error::format("missing `#ngram v1` header"));
        }
        let params = lines
            .next()
            .ok_or_else(|| Error::format("missing n-gram parameters"))?;
        let (mut order, mut alpha, mut vocab) = (None, None, None);
        for kv in params.split_whitespace() {
            match kv.split_once('=') {
                Some(("order", v)) => order = v.parse().ok(),
                Some(("alpha", v)) => alpha = v.parse().ok(),
                Some(("vocab", v)) => vocab = v.parse().ok(),
                _ => return Err(Error::format(format!("unknown n-gram parameter `{kv}`"))),
            }
        }
        let (Some(order), Some(alpha), Some(vocab)) = (order, alpha, vocab) else {
            return Err(Error::format(
                "n-gram parameters need order, alpha and vocab",
            ));
        };
        let mut table = NGramTable::new(order, alpha, vocab)?;
        let mut level = None;
        for line in lines {
            if line == "\\end\\" {
                return Ok(table);
            }
            if let Some(n) = line
                .strip_prefix('\\')
                .and_then(|l| l.strip_suffix("-grams:"))
            {
                let n: usize = n
                    .parse()
                    .map_err(|_| Error::format(format!("bad block header `{line}`")))?;
                if n == 0 || n > order {
                    return Err(Error::format(format!("block `{line}` outside model order")));
                }
                level = Some(n);
                continue;
            }
            let n = level.ok_or_else(|| Error::format("n-gram row before any block header"))?;
            let fields: Vec<u64> = line
                .split_whitespace()
                .map(|f| {
                    f.parse()
                        .map_err(|_| Error::format(format!("bad n-gram row `{line}`")))
                })
                .collect::<Result<_>>()?;
            if fields.len() != n + 1 || fields[1..].iter().any(|&id| id as usize >= vocab) {
                return Err(Error::format(format!("bad n-gram row `{line}`")));
            }
            let ids: Vec<TokenId> = fields[1..].iter().map(|&id| id as TokenId).collect();
            table.add_count(&ids[..n - 1], ids[n - 1], fields[0]);
        }
        Err(Error::format("missing `\\end\\` marker"))
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

impl LanguageModel for NGramTable {
    fn vocab_size(&self) -> usize {
        self.vocab_size
    }

    fn prefix_logprob(&self, tokens: &[TokenId]) -> Result<f64> {
        if let Some(&bad) = tokens
            .iter()
            .find(|&&t| t as usize >= self.vocab_size || t == BOS)
        {
            return Err(Error::VocabMismatch(format!(
                "language model cannot score token id {bad}"
            )));
        }
        Ok(self.prefix_score(tokens))
    }
}
