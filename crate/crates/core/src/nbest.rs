//! N-best lists, reranking weights and their text formats.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::vocab::{TokenId, Vocabulary};

pub const DIRECT: &str = "direct";
pub const CHANNEL: &str = "channel";
pub const LM: &str = "lm";
pub const REVERSE: &str = "reverse";

/// A complete candidate for one source sentence with named log-score features.
#[derive(Clone, Debug, PartialEq)]
pub struct NBestEntry {
    pub sentence_id: usize,
    pub target: Vec<TokenId>,
    pub features: BTreeMap<String, f64>,
    /// Score assigned by whatever produced the entry (the decoder objective).
    pub total: f64,
}

impl NBestEntry {
    pub fn new(sentence_id: usize, target: Vec<TokenId>) -> Self {
        NBestEntry {
            sentence_id,
            target,
            features: BTreeMap::new(),
            total: 0.0,
        }
    }

    pub fn with_feature(mut self, name: &str, value: f64) -> Self {
        self.features.insert(name.to_string(), value);
        self
    }

    pub fn feature(&self, name: &str) -> Option<f64> {
        self.features.get(name).copied()
    }
}

/// Formats a float with 9 significant digits, `%.9g` style.
pub fn format_float(x: f64) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() {
            "-0".into()
        } else {
            "0".into()
        };
    }
    if !x.is_finite() {
        return format!("{x}");
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("exponent digits");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        trim_zeros(&format!("{:.*}", decimals, x))
    } else {
        format!("{}e{}", trim_zeros(mantissa), exp)
    }
}

fn trim_zeros(s: &str) -> String {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s.to_string()
    }
}

/// Rounds to the value obtained by a write/read cycle.
pub fn round_to_text(x: f64) -> f64 {
    format_float(x).parse().unwrap_or(x)
}

pub fn format_entry(entry: &NBestEntry, vocab: &Vocabulary) -> String {
    let tokens = vocab.decode(&entry.target).join(" ");
    let feats: Vec<String> = entry
        .features
        .iter()
        .map(|(k, v)| format!("{k}={}", format_float(*v)))
        .collect();
    format!(
        "{} ||| {} ||| {} ||| {}",
        entry.sentence_id,
        tokens,
        feats.join(" "),
        format_float(entry.total)
    )
}

/// Parses one n-best line; `line_no` is 1-based and only used for errors.
pub fn parse_entry(line: &str, line_no: usize, vocab: &Vocabulary) -> Result<NBestEntry> {
    let bad = || Error::MalformedNBest { line: line_no };
    let fields: Vec<&str> = line.split("|||").map(str::trim).collect();
    if fields.len() != 4 {
        return Err(bad());
    }
    let sentence_id: usize = fields[0].parse().map_err(|_| bad())?;
    let tokens: Vec<&str> = fields[1].split_whitespace().collect();
    let mut features = BTreeMap::new();
    for item in fields[2].split_whitespace() {
        let (name, value) = item.split_once('=').ok_or_else(bad)?;
        let value: f64 = value.parse().map_err(|_| bad())?;
        if name.is_empty()
            || !value.is_finite()
            || features.insert(name.to_string(), value).is_some()
        {
            return Err(bad());
        }
    }
    let total: f64 = fields[3].parse().map_err(|_| bad())?;
    Ok(NBestEntry {
        sentence_id,
        target: vocab.encode(&tokens),
        features,
        total,
    })
}

pub fn write_nbest(
    entries: &[NBestEntry],
    vocab: &Vocabulary,
    path: impl AsRef<Path>,
) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for entry in entries {
        writeln!(out, "{}", format_entry(entry, vocab))?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_nbest(path: impl AsRef<Path>, vocab: &Vocabulary) -> Result<Vec<NBestEntry>> {
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| parse_entry(l, i + 1, vocab))
        .collect()
}

/// Indices of entries grouped by sentence id, in ascending id order.
pub fn group_by_sentence(entries: &[NBestEntry]) -> Vec<(usize, Vec<usize>)> {
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (i, e) in entries.iter().enumerate() {
        groups.entry(e.sentence_id).or_default().push(i);
    }
    groups.into_iter().collect()
}

/// Linear reranking weights.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreWeights {
    pub direct: f64,
    pub channel: f64,
    pub lm: f64,
    pub reverse: f64,
    pub word_reward: f64,
}

impl Default for ScoreWeights {
    fn default() -> Self {
        ScoreWeights::direct_only()
    }
}

impl ScoreWeights {
    pub const NAMES: [&'static str; 5] = [DIRECT, CHANNEL, LM, REVERSE, "word_reward"];

    pub fn new(direct: f64, channel: f64, lm: f64, reverse: f64, word_reward: f64) -> Self {
        ScoreWeights {
            direct,
            channel,
            lm,
            reverse,
            word_reward,
        }
    }

    pub fn direct_only() -> Self {
        ScoreWeights::new(1.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn as_array(&self) -> [f64; 5] {
        [
            self.direct,
            self.channel,
            self.lm,
            self.reverse,
            self.word_reward,
        ]
    }

    pub fn from_array(a: [f64; 5]) -> Self {
        ScoreWeights::new(a[0], a[1], a[2], a[3], a[4])
    }

    pub fn scaled(&self, c: f64) -> Self {
        ScoreWeights::from_array(self.as_array().map(|w| w * c))
    }

    /// Feature weights paired with their feature names (word reward excluded).
    pub fn feature_weights(&self) -> [(&'static str, f64); 4] {
        [
            (DIRECT, self.direct),
            (CHANNEL, self.channel),
            (LM, self.lm),
            (REVERSE, self.reverse),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.as_array().iter().all(|w| w.is_finite()) {
            Ok(())
        } else {
            Err(Error::invalid("weights must be finite"))
        }
    }

    pub fn to_text(&self) -> String {
        Self::NAMES
            .iter()
            .zip(self.as_array())
            .map(|(n, v)| format!("{n}={v}\n"))
            .collect()
    }

    /// Parses `name=value` lines; `#` starts a comment. Missing names keep
    /// their direct-only defaults.
    pub fn parse(text: &str) -> Result<Self> {
        let mut values = ScoreWeights::direct_only().as_array();
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (name, value) = line.split_once('=').ok_or_else(|| {
                Error::format(format!("weights line {}: expected name=value", i + 1))
            })?;
            let slot = Self::NAMES
                .iter()
                .position(|n| *n == name.trim())
                .ok_or_else(|| {
                    Error::format(format!(
                        "weights line {}: unknown weight `{}`",
                        i + 1,
                        name.trim()
                    ))
                })?;
            values[slot] = value
                .trim()
                .parse()
                .map_err(|_| Error::format(format!("weights line {}: bad number", i + 1)))?;
        }
        let w = ScoreWeights::from_array(values);
        w.validate()?;
        Ok(w)
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, self.to_text())?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn vocab() -> Vocabulary {
        Vocabulary::from_tokens(["a", "b", "c"])
    }

    #[test]
    fn parses_reference_line() {
        let e = parse_entry("0 ||| a b ||| direct=-1.5 lm=-2 ||| -3.5", 1, &vocab()).unwrap();
        assert_eq!(e.sentence_id, 0);
        assert_eq!(e.target, vec![3, 4]);
        assert_eq!(e.features.len(), 2);
        assert_eq!(e.feature("lm"), Some(-2.0));
        assert_eq!(e.total, -3.5);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = parse_entry("0 ||| a b", 1, &vocab()).unwrap_err();
        assert_eq!(err.to_string(), "malformed n-best line 1");
    }

    #[test]
    fn unknown_features_are_preserved() {
        let e = parse_entry("3 ||| c ||| fancy=0.25 ||| 0", 1, &vocab()).unwrap();
        assert_eq!(e.feature("fancy"), Some(0.25));
        assert!(format_entry(&e, &vocab()).contains("fancy=0.25"));
    }

    #[test]
    fn duplicate_or_non_finite_features_are_rejected() {
        assert!(parse_entry("0 ||| a ||| x=1 x=2 ||| 0", 4, &vocab()).is_err());
        assert!(parse_entry("0 ||| a ||| x=inf ||| 0", 4, &vocab()).is_err());
    }

    #[test]
    fn simple_entry_round_trips_exactly() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("n.best");
        let e = NBestEntry::new(0, vec![3, 4]).with_feature(DIRECT, -1.5);
        write_nbest(std::slice::from_ref(&e), &vocab(), &path).unwrap();
        assert_eq!(read_nbest(&path, &vocab()).unwrap(), vec![e]);
        let line = fs::read_to_string(&path).unwrap();
        assert_eq!(line, "0 ||| a b ||| direct=-1.5 ||| 0\n");
    }

    #[test]
    fn float_format_matches_printf_g() {
        assert_eq!(format_float(-1.5), "-1.5");
        assert_eq!(format_float(-2.0), "-2");
        assert_eq!(format_float(1.0 / 3.0), "0.333333333");
        assert_eq!(format_float(-123456.789012), "-123456.789");
        assert_eq!(format_float(1.5e-7), "1.5e-7");
        assert_eq!(format_float(2.0e12), "2e12");
        assert_eq!(format_float(0.0001), "0.0001");
    }

    #[test]
    fn weights_text_round_trip() {
        let w = ScoreWeights::new(1.0, 0.25, 0.5, 0.0, -0.125);
        assert_eq!(ScoreWeights::parse(&w.to_text()).unwrap(), w);
        assert!(ScoreWeights::parse("bogus=1").is_err());
        let partial = ScoreWeights::parse("# tuned\nlm = 0.5\n").unwrap();
        assert_eq!(partial, ScoreWeights::new(1.0, 0.0, 0.5, 0.0, 0.0));
    }

    fn arb_entry() -> impl Strategy<Value = NBestEntry> {
        (
            0usize..50,
            proptest::collection::vec(2u32..6, 0..6),
            proptest::collection::btree_map("[a-z]{1,6}", -1.0e4f64..0.0, 0..4),
            -1.0e4f64..1.0e4,
        )
            .prop_map(|(sentence_id, target, features, total)| NBestEntry {
                sentence_id,
                target,
                features,
                total,
            })
    }

    proptest! {
        #[test]
        fn write_then_read_is_identity_at_nine_digits(entries in proptest::collection::vec(arb_entry(), 0..8)) {
            let dir = tempfile::tempdir().unwrap();
            let path = dir.path().join("n.best");
            write_nbest(&entries, &vocab(), &path).unwrap();
            let back = read_nbest(&path, &vocab()).unwrap();
            let expected: Vec<NBestEntry> = entries
                .into_iter()
                .map(|mut e| {
                    e.total = round_to_text(e.total);
                    e.features.values_mut().for_each(|v| *v = round_to_text(*v));
                    e
                })
                .collect();
            prop_assert_eq!(back, expected);
        }
    }
}
