//! Character-bigram likelihood model over the screen-name alphabet.
//!
//! Screen names use 63 symbols (`A-Z`, `a-z`, `0-9`, `_`), giving a 63×63
//! table of 3,969 bigram probabilities. Counts are smoothed additively so every
//! cell is strictly positive. A name's likelihood is the geometric mean of the
//! probabilities of its consecutive bigrams.

use std::io::{Read, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model_file::{self, VersionError};
use crate::user_model::ScreenName;

pub const ALPHABET: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyz0123456789_";
pub const ALPHABET_SIZE: usize = 63;
pub const N_BIGRAMS: usize = ALPHABET_SIZE * ALPHABET_SIZE;

pub const DEFAULT_SMOOTHING: f64 = 1.0;

const FORMAT: &str = "botstream-bigrams";
const VERSION: &str = "1.0";

const INVALID: u8 = u8::MAX;

// ASCII byte -> alphabet index.
const SYMBOL_INDEX: [u8; 128] = {
    let mut table = [INVALID; 128];
    let bytes = ALPHABET.as_bytes();
    let mut i = 0;
    while i < bytes.len() {
        table[bytes[i] as usize] = i as u8;
        i += 1;
    }
    table
};

#[derive(Debug, Error)]
pub enum BigramError {
    #[error("cannot build a bigram model from an empty corpus")]
    EmptyCorpus,
    #[error("smoothing constant must be positive and finite, got {0}")]
    InvalidSmoothing(f64),
    #[error("character {ch:?} in {name:?} is outside the screen-name alphabet")]
    InvalidCharacter { name: String, ch: char },
    #[error("malformed model file: {0}")]
    Malformed(String),
    #[error(transparent)]
    Version(#[from] VersionError),
    #[error("model file I/O: {0}")]
    Io(#[from] std::io::Error),
    #[error("model file JSON: {0}")]
    Json(#[from] serde_json::Error),
}

fn symbol_index(c: char) -> Option<usize> {
    let code = c as u32;
    if code < 128 {
        let idx = SYMBOL_INDEX[code as usize];
        (idx != INVALID).then_some(idx as usize)
    } else {
        None
    }
}

fn bigram_indices<'a>(
    name: &'a str,
) -> impl Iterator<Item = Result<usize, BigramError>> + 'a {
    let symbols = name.chars().map(move |c| {
        symbol_index(c).ok_or_else(|| BigramError::InvalidCharacter {
            name: name.to_owned(),
            ch: c,
        })
    });
    let mut prev: Option<usize> = None;
    symbols.filter_map(move |sym| match sym {
        Err(e) => Some(Err(e)),
        Ok(cur) => {
            let out = prev.map(|p| Ok(p * ALPHABET_SIZE + cur));
            prev = Some(cur);
            out
        }
    })
}

/// Smoothed 63×63 bigram probability table.
#[derive(Debug, Clone, PartialEq)]
pub struct BigramModel {
    probs: Vec<f64>,
    log_probs: Vec<f64>,
    smoothing: f64,
    corpus_size: usize,
}

impl BigramModel {
    /// Counts bigrams over `names` and applies additive smoothing:
    /// `P(b) = (count(b) + s) / (total + s * 3969)`.
    pub fn build<I, S>(names: I, smoothing: f64) -> Result<Self, BigramError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<str>,
    {
        if !(smoothing > 0.0 && smoothing.is_finite()) {
            return Err(BigramError::InvalidSmoothing(smoothing));
        }
        let mut counts = vec![0u64; N_BIGRAMS];
        let mut corpus_size = 0usize;
        let mut total = 0u64;
        for name in names {
            corpus_size += 1;
            for idx in bigram_indices(name.as_ref()) {
                counts[idx?] += 1;
                total += 1;
            }
        }
        if corpus_size == 0 {
            return Err(BigramError::EmptyCorpus);
        }
        let denom = total as f64 + smoothing * N_BIGRAMS as f64;
        let probs = counts
            .iter()
            .map(|&c| (c as f64 + smoothing) / denom)
            .collect();
        Ok(Self::from_parts(probs, smoothing, corpus_size))
    }

    /// The all-equal model: every bigram has probability 1/3969.
    pub fn uniform() -> Self {
        Self::from_parts(vec![1.0 / N_BIGRAMS as f64; N_BIGRAMS], f64::INFINITY, 0)
    }

    fn from_parts(probs: Vec<f64>, smoothing: f64, corpus_size: usize) -> Self {
        let log_probs = probs.iter().map(|p| p.ln()).collect();
        BigramModel {
            probs,
            log_probs,
            smoothing,
            corpus_size,
        }
    }

    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn smoothing(&self) -> f64 {
        self.smoothing
    }

    pub fn corpus_size(&self) -> usize {
        self.corpus_size
    }

    /// Probability of the bigram `first` followed by `second`.
    pub fn prob(&self, first: char, second: char) -> Option<f64> {
        let a = symbol_index(first)?;
        let b = symbol_index(second)?;
        Some(self.probs[a * ALPHABET_SIZE + b])
    }

    /// Geometric-mean bigram probability of a validated screen name.
    pub fn likelihood(&self, name: &ScreenName) -> f64 {
        self.likelihood_str(name.as_str())
            .expect("ScreenName only holds alphabet characters")
    }

    /// Geometric-mean bigram probability of `name`, computed in log space.
    /// Names shorter than two characters have no bigrams and score 1/3969.
    pub fn likelihood_str(&self, name: &str) -> Result<f64, BigramError> {
        let mut sum = 0.0;
        let mut n = 0usize;
        for idx in bigram_indices(name) {
            sum += self.log_probs[idx?];
            n += 1;
        }
        if n == 0 {
            return Ok(1.0 / N_BIGRAMS as f64);
        }
        Ok((sum / n as f64).exp().min(1.0))
    }

    pub fn write_json<W: Write>(&self, writer: W) -> Result<(), BigramError> {
        let file = BigramFile {
            format: FORMAT.into(),
            version: VERSION.into(),
            alphabet: ALPHABET.into(),
            smoothing: self.smoothing,
            corpus_size: self.corpus_size,
            probs: self.probs.clone(),
        };
        serde_json::to_writer(writer, &file)?;
        Ok(())
    }

    pub fn read_json<R: Read>(reader: R) -> Result<Self, BigramError> {
        let file: BigramFile = serde_json::from_reader(reader)?;
        model_file::check(FORMAT, VERSION, &file.format, &file.version)?;
        if file.alphabet != ALPHABET {
            return Err(BigramError::Malformed(format!(
                "unexpected alphabet {:?}",
                file.alphabet
            )));
        }
        if file.probs.len() != N_BIGRAMS {
            return Err(BigramError::Malformed(format!(
                "expected {N_BIGRAMS} probabilities, found {}",
                file.probs.len()
            )));
        }
        if file.probs.iter().any(|p| !(p.is_finite() && *p > 0.0 && *p <= 1.0)) {
            return Err(BigramError::Malformed(
                "probabilities must lie in (0, 1]".into(),
            ));
        }
        Ok(Self::from_parts(file.probs, file.smoothing, file.corpus_size))
    }
}

#[derive(Serialize, Deserialize)]
struct BigramFile {
    format: String,
    version: String,
    alphabet: String,
    // JSON has no infinity; the uniform model serializes smoothing as null.
    #[serde(with = "finite_or_null")]
    smoothing: f64,
    corpus_size: usize,
    probs: Vec<f64>,
}

mod finite_or_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn idx(a: char, b: char) -> usize {
        symbol_index(a).unwrap() * ALPHABET_SIZE + symbol_index(b).unwrap()
    }

    #[test]
    fn alphabet_has_63_symbols() {
        assert_eq!(ALPHABET.len(), ALPHABET_SIZE);
        assert_eq!(N_BIGRAMS, 3969);
        for (i, c) in ALPHABET.chars().enumerate() {
            assert_eq!(symbol_index(c), Some(i));
        }
        assert_eq!(symbol_index('-'), None);
        assert_eq!(symbol_index('é'), None);
    }

    #[test]
    fn hand_counted_corpus() {
        // "ab" twice, "ac" once: 3 bigrams total.
        let model = BigramModel::build(["ab", "ab", "ac"], 1.0).unwrap();
        let denom = 3.0 + 3969.0;
        assert_eq!(model.probs()[idx('a', 'b')], 3.0 / denom);
        assert_eq!(model.probs()[idx('a', 'c')], 2.0 / denom);
        assert_eq!(model.probs()[idx('b', 'a')], 1.0 / denom);
        assert_eq!(model.corpus_size(), 3);
        let l = model.likelihood_str("ab").unwrap();
        assert!((l / (3.0 / 3972.0) - 1.0).abs() < 1e-12);
        let sum: f64 = model.probs().iter().sum();
        assert!((sum - 1.0).abs() < 1e-9);
    }

    #[test]
    fn single_char_corpus_is_uniform() {
        let model = BigramModel::build(["a"], 1.0).unwrap();
        assert!(model.probs().iter().all(|&p| p == 1.0 / 3969.0));
        assert_eq!(model.corpus_size(), 1);
    }

    #[test]
    fn heavy_smoothing_approaches_uniform() {
        let model = BigramModel::build(["abc", "abd", "zzz"], 1e12).unwrap();
        for p in model.probs() {
            assert!((p - 1.0 / 3969.0).abs() < 1e-15);
        }
    }

    #[test]
    fn uniform_model_scores() {
        let model = BigramModel::uniform();
        assert!((model.likelihood_str("hello_world").unwrap() - 1.0 / 3969.0).abs() < 1e-18);
        assert_eq!(model.likelihood_str("x").unwrap(), 1.0 / 3969.0);
        assert_eq!(model.likelihood_str("").unwrap(), 1.0 / 3969.0);
    }

    #[test]
    fn errors() {
        assert!(matches!(
            BigramModel::build(Vec::<String>::new(), 1.0),
            Err(BigramError::EmptyCorpus)
        ));
        assert!(matches!(
            BigramModel::build(["ab"], 0.0),
            Err(BigramError::InvalidSmoothing(_))
        ));
        assert!(matches!(
            BigramModel::build(["a-b"], 1.0),
            Err(BigramError::InvalidCharacter { ch: '-', .. })
        ));
        let model = BigramModel::build(["ab"], 1.0).unwrap();
        assert!(model.likelihood_str("a b").is_err());
    }

    #[test]
    fn file_round_trip() {
        let model = BigramModel::build(["alice", "bob_99", "Carol"], 0.5).unwrap();
        let mut buf = Vec::new();
        model.write_json(&mut buf).unwrap();
        let back = BigramModel::read_json(buf.as_slice()).unwrap();
        assert_eq!(back, model);

        let mut buf = Vec::new();
        BigramModel::uniform().write_json(&mut buf).unwrap();
        assert_eq!(BigramModel::read_json(buf.as_slice()).unwrap(), BigramModel::uniform());
    }

    #[test]
    fn major_version_mismatch_rejected() {
        let model = BigramModel::build(["ab"], 1.0).unwrap();
        let mut buf = Vec::new();
        model.write_json(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap().replace("\"1.0\"", "\"2.0\"");
        assert!(matches!(
            BigramModel::read_json(text.as_bytes()),
            Err(BigramError::Version(_))
        ));
    }
}
