//! Text encoders: the vocabulary and token-sequence types the search works
//! in, a deterministic toy encoder, image-fixture loading, and a client for
//! out-of-process encoders speaking newline-delimited JSON.

mod fixtures;
pub mod remote;
mod toy;

use std::collections::HashMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use fixtures::{load_embeddings, load_image_fixtures, write_embeddings};
pub use remote::{RemoteEncoder, RemoteItem, RemoteOptions};
pub use toy::ToyEncoder;

use crate::embedding::Embedding;
use crate::error::{Error, Result};

/// Ordered list of distinct token strings; the id of a token is its index.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocabulary {
    pub fn new(tokens: Vec<String>) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::InvalidVocabulary("no tokens".into()));
        }
        if tokens.len() > u32::MAX as usize {
            return Err(Error::InvalidVocabulary("too many tokens".into()));
        }
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if t.is_empty() || t.chars().any(char::is_whitespace) {
                return Err(Error::InvalidVocabulary(format!(
                    "token {i} ({t:?}) is empty or contains whitespace"
                )));
            }
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::InvalidVocabulary(format!("duplicate token {t:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    /// One token per line; blank lines are skipped.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::new(
            text.lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_owned)
                .collect(),
        )
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

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(String::as_str)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    /// Whitespace tokenisation against this vocabulary.
    pub fn tokenize(&self, text: &str) -> Result<TokenSequence> {
        let ids = text
            .split_whitespace()
            .map(|tok| {
                self.id(tok).ok_or_else(|| Error::Tokenization {
                    token: tok.to_owned(),
                    text: text.to_owned(),
                })
            })
            .collect::<Result<Vec<_>>>()?;
        TokenSequence::new(ids)
    }

    /// Surface text: tokens joined by single spaces.
    pub fn render(&self, seq: &TokenSequence) -> String {
        let mut out = String::new();
        for (i, &id) in seq.ids().iter().enumerate() {
            if i > 0 {
                out.push(' ');
            }
            out.push_str(self.token(id).unwrap_or("<unk>"));
        }
        out
    }

    pub fn check(&self, seq: &TokenSequence) -> Result<()> {
        match seq.ids().iter().find(|&&id| id as usize >= self.len()) {
            Some(&id) => Err(Error::TokenOutOfRange {
                id,
                size: self.len(),
            }),
            None => Ok(()),
        }
    }
}

/// Non-empty sequence of vocabulary ids.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(try_from = "Vec<u32>", into = "Vec<u32>")]
pub struct TokenSequence(Vec<u32>);

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::EmptySequence);
        }
        Ok(Self(ids))
    }

    pub fn ids(&self) -> &[u32] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Copy of `self` with the token at `position` replaced by `token`.
    pub fn substitute(&self, position: usize, token: u32) -> TokenSequence {
        let mut ids = self.0.clone();
        ids[position] = token;
        TokenSequence(ids)
    }
}

impl TryFrom<Vec<u32>> for TokenSequence {
    type Error = Error;

    fn try_from(ids: Vec<u32>) -> Result<Self> {
        TokenSequence::new(ids)
    }
}

impl From<TokenSequence> for Vec<u32> {
    fn from(s: TokenSequence) -> Self {
        s.0
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EncoderKind {
    ToyHash,
    Remote,
}

/// Serializable description of an encoder, recorded in run metadata.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderDescriptor {
    pub kind: EncoderKind,
    pub dim: usize,
    pub vocab_size: Option<usize>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub endpoint: Option<String>,
}

/// The text side of a cross-modal encoder.
pub trait TextEncoder: Send + Sync {
    fn dim(&self) -> usize;

    /// Token space the search operates in, if the encoder exposes one.
    fn vocab(&self) -> Option<&Vocabulary>;

    fn encode_sequences(&self, seqs: &[TokenSequence]) -> Result<Vec<Embedding>>;

    /// Encodes raw strings. The default tokenises against [`Self::vocab`].
    fn encode_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        let vocab = self
            .vocab()
            .ok_or_else(|| Error::InvalidArgument("encoder has no vocabulary".into()))?;
        let seqs = texts
            .iter()
            .map(|t| vocab.tokenize(t))
            .collect::<Result<Vec<_>>>()?;
        self.encode_sequences(&seqs)
    }

    fn descriptor(&self) -> EncoderDescriptor;
}

impl<T: TextEncoder + ?Sized> TextEncoder for std::sync::Arc<T> {
    fn dim(&self) -> usize {
        (**self).dim()
    }

    fn vocab(&self) -> Option<&Vocabulary> {
        (**self).vocab()
    }

    fn encode_sequences(&self, seqs: &[TokenSequence]) -> Result<Vec<Embedding>> {
        (**self).encode_sequences(seqs)
    }

    fn encode_texts(&self, texts: &[String]) -> Result<Vec<Embedding>> {
        (**self).encode_texts(texts)
    }

    fn descriptor(&self) -> EncoderDescriptor {
        (**self).descriptor()
    }
}

pub(crate) fn require_vocab(enc: &dyn TextEncoder) -> Result<&Vocabulary> {
    enc.vocab()
        .ok_or_else(|| Error::InvalidArgument("encoder does not expose a vocabulary".into()))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vocab() -> Vocabulary {
        Vocabulary::new(
            ["a", "photo", "of", "cat"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn tokenize_and_render_roundtrip() {
        let v = vocab();
        let seq = v.tokenize("a  photo of\ta cat").unwrap();
        assert_eq!(seq.ids(), &[0, 1, 2, 0, 3]);
        assert_eq!(v.render(&seq), "a photo of a cat");
    }

    #[test]
    fn unknown_token_is_an_error() {
        assert!(matches!(
            vocab().tokenize("a dog"),
            Err(Error::Tokenization { .. })
        ));
        assert!(matches!(vocab().tokenize("   "), Err(Error::EmptySequence)));
    }

    #[test]
    fn vocabulary_rejects_duplicates_and_whitespace() {
        assert!(Vocabulary::new(vec!["a".into(), "a".into()]).is_err());
        assert!(Vocabulary::new(vec!["a b".into()]).is_err());
        assert!(Vocabulary::new(vec![]).is_err());
    }

    #[test]
    fn check_flags_out_of_range() {
        let seq = TokenSequence::new(vec![0, 9]).unwrap();
        assert!(matches!(
            vocab().check(&seq),
            Err(Error::TokenOutOfRange { id: 9, size: 4 })
        ));
    }

    #[test]
    fn substitute_replaces_one_position() {
        let seq = TokenSequence::new(vec![0, 1, 2]).unwrap();
        assert_eq!(seq.substitute(1, 3).ids(), &[0, 3, 2]);
        assert_eq!(seq.ids(), &[0, 1, 2]);
    }
}
