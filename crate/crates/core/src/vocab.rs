//! Token vocabularies with reserved sentence-boundary and unknown symbols.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};

pub type TokenId = u32;

/// Beginning of sentence. Lexical tables reuse this slot as the NULL word.
pub const BOS: TokenId = 0;
pub const EOS: TokenId = 1;
pub const UNK: TokenId = 2;
/// Conditioning slot holding the NULL word in lexicon tables.
pub const NULL: TokenId = BOS;

pub const BOS_TOKEN: &str = "<s>";
pub const EOS_TOKEN: &str = "</s>";
pub const UNK_TOKEN: &str = "<unk>";

const RESERVED: [&str; 3] = [BOS_TOKEN, EOS_TOKEN, UNK_TOKEN];

/// Bidirectional token/id map. Ids are dense and the first three are reserved.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Vocabulary {
    /// Builds a vocabulary from content tokens in the given order. Reserved
    /// symbols and duplicates in `content` are skipped.
    pub fn from_tokens<I, S>(content: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let mut vocab = Vocabulary {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for tok in RESERVED {
            vocab.push(tok.to_string());
        }
        for tok in content {
            let tok = tok.into();
            if !vocab.index.contains_key(&tok) {
                vocab.push(tok);
            }
        }
        vocab
    }

    fn push(&mut self, tok: String) {
        let id = self.tokens.len() as TokenId;
        self.index.insert(tok.clone(), id);
        self.tokens.push(tok);
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Ids of every token a model may emit inside a sentence (UNK and content).
    pub fn content_ids(&self) -> impl Iterator<Item = TokenId> {
        UNK..self.tokens.len() as TokenId
    }

    /// Maps a corpus token to its id. Reserved strings and unseen tokens map to UNK.
    pub fn id(&self, token: &str) -> TokenId {
        match self.index.get(token) {
            Some(&id) if id >= UNK && token != UNK_TOKEN => id,
            _ => UNK,
        }
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn encode<S: AsRef<str>>(&self, tokens: &[S]) -> Vec<TokenId> {
        tokens.iter().map(|t| self.id(t.as_ref())).collect()
    }

    pub fn decode(&self, ids: &[TokenId]) -> Vec<String> {
        ids.iter()
            .map(|&id| self.token(id).unwrap_or(UNK_TOKEN).to_string())
            .collect()
    }

    pub fn contains_id(&self, id: TokenId) -> bool {
        (id as usize) < self.tokens.len()
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for tok in &self.tokens {
            writeln!(out, "{tok}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let lines: Vec<&str> = text.lines().collect();
        if lines.len() < RESERVED.len() || lines[..3] != RESERVED {
            return Err(Error::format(
                "vocabulary file must start with <s>, </s>, <unk>",
            ));
        }
        let vocab = Vocabulary::from_tokens(lines[3..].iter().copied());
        if vocab.len() != lines.len() {
            return Err(Error::format("vocabulary file contains duplicate tokens"));
        }
        Ok(vocab)
    }
}

/// Collects every token occurring at least `min_count` times. Ids after the
/// reserved block follow descending count, ties broken lexicographically.
pub fn build_vocabulary<S: AsRef<str>>(corpus: &[Vec<S>], min_count: usize) -> Result<Vocabulary> {
    if corpus.is_empty() {
        return Err(Error::EmptyCorpus);
    }
    if min_count == 0 {
        return Err(Error::invalid("min_count must be at least 1"));
    }
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for sentence in corpus {
        for tok in sentence {
            let tok = tok.as_ref();
            if !RESERVED.contains(&tok) {
                *counts.entry(tok).or_default() += 1;
            }
        }
    }
    let mut ranked: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|&(_, c)| c >= min_count)
        .collect();
    ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
    Ok(Vocabulary::from_tokens(ranked.into_iter().map(|(t, _)| t)))
}

/// Splits a line of whitespace-separated tokens.
pub fn tokenize(line: &str) -> Vec<String> {
    line.split_whitespace().map(str::to_string).collect()
}

/// Reads a corpus file: one tokenized sentence per line.
pub fn read_corpus(path: impl AsRef<Path>) -> Result<Vec<Vec<String>>> {
    let text = fs::read_to_string(path)?;
    Ok(text.lines().map(tokenize).collect())
}

pub fn write_corpus<S: AsRef<str>>(path: impl AsRef<Path>, corpus: &[Vec<S>]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for sentence in corpus {
        let line: Vec<&str> = sentence.iter().map(AsRef::as_ref).collect();
        writeln!(out, "{}", line.join(" "))?;
    }
    out.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn corpus(lines: &[&[&str]]) -> Vec<Vec<String>> {
        lines
            .iter()
            .map(|l| l.iter().map(|s| s.to_string()).collect())
            .collect()
    }

    #[test]
    fn ordering_by_count_then_token() {
        let v = build_vocabulary(&corpus(&[&["a", "b"], &["a"]]), 1).unwrap();
        assert_eq!(v.len(), 5);
        assert_eq!(v.id("a"), 3);
        assert_eq!(v.id("b"), 4);
        let v = build_vocabulary(&corpus(&[&["z", "y"], &["x"]]), 1).unwrap();
        assert_eq!(v.decode(&[3, 4, 5]), vec!["x", "y", "z"]);
    }

    #[test]
    fn min_count_threshold() {
        let v = build_vocabulary(&corpus(&[&["a", "b"], &["a"]]), 2).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(v.id("b"), UNK);
    }

    #[test]
    fn empty_corpus_is_rejected() {
        let empty: Vec<Vec<String>> = Vec::new();
        let err = build_vocabulary(&empty, 1).unwrap_err();
        assert_eq!(err.to_string(), "empty corpus");
    }

    #[test]
    fn reserved_strings_encode_to_unk() {
        let v = build_vocabulary(&corpus(&[&["<s>", "a", "</s>", "<unk>"]]), 1).unwrap();
        assert_eq!(v.len(), 4);
        assert_eq!(
            v.encode(&["<s>", "a", "</s>", "<unk>"]),
            vec![UNK, 3, UNK, UNK]
        );
    }

    #[test]
    fn ids_round_trip() {
        let v = build_vocabulary(&corpus(&[&["c", "b", "a", "a"]]), 1).unwrap();
        for id in 0..v.len() as TokenId {
            let tok = v.token(id).unwrap();
            if id >= UNK {
                assert_eq!(v.id(tok), id);
            }
        }
    }

    #[test]
    fn file_round_trip_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let c = corpus(&[&["q", "r", "r"], &["s", "q"]]);
        let a = build_vocabulary(&c, 1).unwrap();
        let b = build_vocabulary(&c, 1).unwrap();
        a.write(dir.path().join("a.vocab")).unwrap();
        b.write(dir.path().join("b.vocab")).unwrap();
        let bytes_a = fs::read(dir.path().join("a.vocab")).unwrap();
        assert_eq!(bytes_a, fs::read(dir.path().join("b.vocab")).unwrap());
        assert_eq!(Vocabulary::read(dir.path().join("a.vocab")).unwrap(), a);
    }
}
