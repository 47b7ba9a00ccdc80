//! Deterministic tokenization schemes.
//!
//! Two schemes are provided. `byte` maps every byte to its own id and is an
//! exact inverse pair with [`Tokenizer::detokenize_bytes`]. `whitespace`
//! splits on runs of Unicode whitespace and looks words up in a
//! corpus-built [`Vocabulary`]; detokenization joins with single spaces, so
//! the original whitespace layout is not recovered.

use std::collections::HashMap;
use std::fmt;
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};

pub type TokenId = u32;

/// Reserved id for words missing from the vocabulary.
pub const UNK: TokenId = 0;
const UNK_STRING: &str = "<unk>";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Scheme {
    #[default]
    Whitespace,
    Byte,
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scheme::Whitespace => f.write_str("whitespace"),
            Scheme::Byte => f.write_str("byte"),
        }
    }
}

impl FromStr for Scheme {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "whitespace" => Ok(Scheme::Whitespace),
            "byte" => Ok(Scheme::Byte),
            other => Err(Error::Config(format!("unknown tokenizer scheme `{other}`"))),
        }
    }
}

/// Bijective word <-> id map. Id 0 is always `<unk>`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    words: Vec<String>,
    ids: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        Self::new()
    }
}

impl Vocabulary {
    pub fn new() -> Self {
        Vocabulary {
            words: vec![UNK_STRING.to_string()],
            ids: HashMap::new(),
        }
    }

    /// Assigns ids in first-occurrence order, starting at 1.
    pub fn build<I>(docs: I) -> Result<Self>
    where
        I: IntoIterator<Item = Result<Document>>,
    {
        let mut vocab = Vocabulary::new();
        for doc in docs {
            vocab.extend_from_text(&doc?.text);
        }
        Ok(vocab)
    }

    pub fn extend_from_text(&mut self, text: &str) {
        for word in text.split_whitespace() {
            self.intern(word);
        }
    }

    fn intern(&mut self, word: &str) -> TokenId {
        if let Some(&id) = self.ids.get(word) {
            return id;
        }
        let id = self.words.len() as TokenId;
        self.words.push(word.to_string());
        self.ids.insert(word.to_string(), id);
        id
    }

    /// Number of ids, including `<unk>`.
    pub fn len(&self) -> usize {
        self.words.len()
    }

    pub fn is_empty(&self) -> bool {
        self.words.len() == 1
    }

    pub fn id(&self, word: &str) -> Option<TokenId> {
        self.ids.get(word).copied()
    }

    pub fn word(&self, id: TokenId) -> Option<&str> {
        self.words.get(id as usize).map(String::as_str)
    }

    /// One word per line; line `i` (1-based) holds id `i`. `<unk>` is implicit.
    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = BufWriter::new(File::create(path)?);
        for word in &self.words[1..] {
            writeln!(out, "{word}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let reader = BufReader::new(File::open(path)?);
        let mut vocab = Vocabulary::new();
        for (i, line) in reader.lines().enumerate() {
            let line = line?;
            if line.is_empty() || line.chars().any(char::is_whitespace) {
                return Err(Error::Record {
                    line: i + 1,
                    message: "vocabulary entries must be non-empty and whitespace-free".into(),
                });
            }
            if vocab.ids.contains_key(&line) {
                return Err(Error::Record {
                    line: i + 1,
                    message: format!("duplicate vocabulary entry `{line}`"),
                });
            }
            vocab.intern(&line);
        }
        Ok(vocab)
    }
}

/// A concrete tokenizer: the scheme plus whatever state it needs.
#[derive(Debug, Clone)]
pub enum Tokenizer {
    Whitespace(Vocabulary),
    Byte,
}

impl Tokenizer {
    pub fn scheme(&self) -> Scheme {
        match self {
            Tokenizer::Whitespace(_) => Scheme::Whitespace,
            Tokenizer::Byte => Scheme::Byte,
        }
    }

    pub fn vocab_size(&self) -> usize {
        match self {
            Tokenizer::Whitespace(v) => v.len(),
            Tokenizer::Byte => 256,
        }
    }

    pub fn vocabulary(&self) -> Option<&Vocabulary> {
        match self {
            Tokenizer::Whitespace(v) => Some(v),
            Tokenizer::Byte => None,
        }
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        match self {
            Tokenizer::Whitespace(vocab) => text
                .split_whitespace()
                .map(|w| vocab.id(w).unwrap_or(UNK))
                .collect(),
            Tokenizer::Byte => text.bytes().map(TokenId::from).collect(),
        }
    }

    /// Joins words with single spaces (whitespace) or decodes bytes, replacing
    /// invalid UTF-8 with U+FFFD (byte). Use [`detokenize_bytes`](Self::detokenize_bytes)
    /// for the exact byte inverse.
    pub fn detokenize(&self, tokens: &[TokenId]) -> Result<String> {
        match self {
            Tokenizer::Whitespace(vocab) => {
                let mut out = String::new();
                for (i, &t) in tokens.iter().enumerate() {
                    let word = vocab.word(t).ok_or(Error::InvalidToken(t))?;
                    if i > 0 {
                        out.push(' ');
                    }
                    out.push_str(word);
                }
                Ok(out)
            }
            Tokenizer::Byte => {
                let bytes = self.detokenize_bytes(tokens)?;
                Ok(String::from_utf8_lossy(&bytes).into_owned())
            }
        }
    }

    pub fn detokenize_bytes(&self, tokens: &[TokenId]) -> Result<Vec<u8>> {
        match self {
            Tokenizer::Byte => tokens
                .iter()
                .map(|&t| u8::try_from(t).map_err(|_| Error::InvalidToken(t)))
                .collect(),
            Tokenizer::Whitespace(_) => Ok(self.detokenize(tokens)?.into_bytes()),
        }
    }
}

pub fn tokenize_bytes(bytes: &[u8]) -> Vec<TokenId> {
    bytes.iter().map(|&b| TokenId::from(b)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn docs(texts: &[&str]) -> Vec<Result<Document>> {
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Ok(Document::new(i.to_string(), *t)))
            .collect()
    }

    fn ab_vocab() -> Vocabulary {
        Vocabulary::build(docs(&["a b"])).unwrap()
    }

    #[test]
    fn whitespace_lookup() {
        let tok = Tokenizer::Whitespace(ab_vocab());
        assert_eq!(tok.tokenize("a b a"), vec![1, 2, 1]);
        assert_eq!(tok.tokenize(""), Vec::<TokenId>::new());
        assert_eq!(tok.tokenize("a zzz"), vec![1, UNK]);
        assert_eq!(tok.detokenize(&[1, 2]).unwrap(), "a b");
        assert_eq!(tok.detokenize(&[]).unwrap(), "");
    }

    #[test]
    fn byte_scheme() {
        let tok = Tokenizer::Byte;
        assert_eq!(tok.tokenize("hi"), vec![104, 105]);
        assert_eq!(tok.detokenize(&[104, 105]).unwrap(), "hi");
        assert!(matches!(tok.detokenize(&[300]), Err(Error::InvalidToken(300))));
    }

    #[test]
    fn unknown_id_is_rejected() {
        let tok = Tokenizer::Whitespace(ab_vocab());
        assert!(matches!(tok.detokenize(&[1, 9]), Err(Error::InvalidToken(9))));
    }

    #[test]
    fn vocabulary_first_occurrence_order() {
        let v = Vocabulary::build(docs(&["b a", "a"])).unwrap();
        assert_eq!(v.len(), 3);
        assert_eq!(v.id("b"), Some(1));
        assert_eq!(v.id("a"), Some(2));

        let empty = Vocabulary::build(docs(&[])).unwrap();
        assert_eq!(empty.len(), 1);
        assert_eq!(empty.word(UNK), Some("<unk>"));

        let dup = Vocabulary::build(docs(&["x x x"])).unwrap();
        assert_eq!(dup.len(), 2);
        assert_eq!(dup.id("x"), Some(1));
    }

    #[test]
    fn vocabulary_file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        let v = Vocabulary::build(docs(&["the cat sat", "on the mat"])).unwrap();
        v.save(&path).unwrap();
        assert_eq!(std::fs::read_to_string(&path).unwrap(), "the\ncat\nsat\non\nmat\n");
        assert_eq!(Vocabulary::load(&path).unwrap(), v);
    }

    #[test]
    fn vocabulary_load_rejects_duplicates() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        std::fs::write(&path, "a\nb\na\n").unwrap();
        assert!(matches!(Vocabulary::load(&path), Err(Error::Record { line: 3, .. })));
    }

    proptest! {
        #[test]
        fn byte_round_trip(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let tokens = tokenize_bytes(&bytes);
            prop_assert_eq!(Tokenizer::Byte.detokenize_bytes(&tokens).unwrap(), bytes);
        }

        #[test]
        fn corpus_words_never_unk(texts in proptest::collection::vec("[a-d ]{0,20}", 1..5)) {
            let refs: Vec<&str> = texts.iter().map(String::as_str).collect();
            let tok = Tokenizer::Whitespace(Vocabulary::build(docs(&refs)).unwrap());
            for t in &texts {
                let a = tok.tokenize(t);
                prop_assert!(!a.contains(&UNK));
                prop_assert_eq!(a, tok.tokenize(t));
            }
        }
    }
}
