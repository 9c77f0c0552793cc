//! Source and target vocabularies.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grammar::Dataset;

pub const SOS: &str = "<sos>";
pub const EOS: &str = "<eos>";
pub const SOS_INDEX: usize = 0;
pub const EOS_INDEX: usize = 1;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum EncodingError {
    #[error("token `{0}` is not in the vocabulary")]
    OutOfVocabulary(String),
    #[error("index {index} is out of range for a vocabulary of {size}")]
    IndexOutOfRange { index: usize, size: usize },
    #[error("malformed vocabulary: {0}")]
    Malformed(String),
}

/// Ordered token inventory: `<sos>`, `<eos>`, then the sorted tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    lookup: HashMap<String, usize>,
}

impl Vocab {
    pub fn new<I, S>(tokens: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        let set: BTreeSet<String> = tokens
            .into_iter()
            .map(Into::into)
            .filter(|t| t != SOS && t != EOS)
            .collect();
        let tokens: Vec<String> = [SOS.to_string(), EOS.to_string()].into_iter().chain(set).collect();
        let lookup = tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        Vocab { tokens, lookup }
    }

    /// Rebuilds a vocabulary from its canonical token list.
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self, EncodingError> {
        if tokens.len() < 2 || tokens[SOS_INDEX] != SOS || tokens[EOS_INDEX] != EOS {
            return Err(EncodingError::Malformed("reserved tokens must come first".into()));
        }
        let v = Vocab::new(tokens.iter().cloned());
        if v.tokens != tokens {
            return Err(EncodingError::Malformed("tokens are not distinct and sorted".into()));
        }
        Ok(v)
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn index(&self, token: &str) -> Result<usize, EncodingError> {
        self.lookup
            .get(token)
            .copied()
            .ok_or_else(|| EncodingError::OutOfVocabulary(token.to_string()))
    }

    pub fn token(&self, index: usize) -> Result<&str, EncodingError> {
        self.tokens
            .get(index)
            .map(String::as_str)
            .ok_or(EncodingError::IndexOutOfRange { index, size: self.tokens.len() })
    }

    /// Indices of `tokens` followed by `<eos>`; with `prepend_sos` the
    /// sequence also starts with `<sos>` (decoder input form).
    pub fn encode<S: AsRef<str>>(&self, tokens: &[S], prepend_sos: bool) -> Result<Vec<usize>, EncodingError> {
        let mut out = Vec::with_capacity(tokens.len() + 2);
        if prepend_sos {
            out.push(SOS_INDEX);
        }
        for t in tokens {
            out.push(self.index(t.as_ref())?);
        }
        out.push(EOS_INDEX);
        Ok(out)
    }

    /// Inverse of [`Vocab::encode`]: skips a leading `<sos>`, stops at the
    /// first `<eos>`, never returns reserved tokens.
    pub fn decode(&self, indices: &[usize]) -> Result<Vec<String>, EncodingError> {
        let mut out = Vec::new();
        for &i in indices {
            let tok = self.token(i)?;
            match i {
                EOS_INDEX => break,
                SOS_INDEX => continue,
                _ => out.push(tok.to_string()),
            }
        }
        Ok(out)
    }

    /// Canonical JSON array form.
    pub fn to_json(&self) -> String {
        serde_json::to_string(&self.tokens).expect("vocab serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, EncodingError> {
        let tokens: Vec<String> =
            serde_json::from_str(text).map_err(|e| EncodingError::Malformed(e.to_string()))?;
        Vocab::from_tokens(tokens)
    }
}

impl Serialize for Vocab {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        self.tokens.serialize(s)
    }
}

impl<'de> Deserialize<'de> for Vocab {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let tokens = Vec::<String>::deserialize(d)?;
        Vocab::from_tokens(tokens).map_err(serde::de::Error::custom)
    }
}

/// Source and target vocabularies over the full dataset, so withheld
/// words and symbols are representable even when absent from training.
pub fn build_vocabs(dataset: &Dataset) -> (Vocab, Vocab) {
    let source = Vocab::new(dataset.examples.iter().flat_map(|e| e.source.iter().cloned()));
    let target = Vocab::new(dataset.examples.iter().flat_map(|e| e.target.iter().cloned()));
    (source, target)
}
