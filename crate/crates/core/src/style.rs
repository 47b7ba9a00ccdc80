//! Plain-text prompt perturbations.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum StyleKind {
    #[default]
    Original,
    /// Every U+0020 doubled. Tabs and newlines are left alone.
    Spaces,
    Lower,
    Caps,
}

impl StyleKind {
    pub const ALL: [StyleKind; 4] = [
        StyleKind::Original,
        StyleKind::Spaces,
        StyleKind::Lower,
        StyleKind::Caps,
    ];
}

impl fmt::Display for StyleKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            StyleKind::Original => "original",
            StyleKind::Spaces => "spaces",
            StyleKind::Lower => "lower",
            StyleKind::Caps => "caps",
        })
    }
}

impl FromStr for StyleKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self, Error> {
        match s {
            "original" => Ok(StyleKind::Original),
            "spaces" => Ok(StyleKind::Spaces),
            "lower" => Ok(StyleKind::Lower),
            "caps" | "upper" => Ok(StyleKind::Caps),
            other => Err(Error::Config(format!("unknown style `{other}`"))),
        }
    }
}

/// One-to-one case mapping: characters whose full mapping expands to more
/// than one character are kept as they are.
fn simple_map<I: Iterator<Item = char> + ExactSizeIterator>(c: char, mapped: I) -> char {
    let mut mapped = mapped;
    if mapped.len() == 1 {
        mapped.next().unwrap()
    } else {
        c
    }
}

pub fn to_lower(text: &str) -> String {
    text.chars().map(|c| simple_map(c, c.to_lowercase())).collect()
}

pub fn to_caps(text: &str) -> String {
    text.chars().map(|c| simple_map(c, c.to_uppercase())).collect()
}

pub fn apply(text: &str, kind: StyleKind) -> String {
    match kind {
        StyleKind::Original => text.to_string(),
        StyleKind::Spaces => text.replace(' ', "  "),
        StyleKind::Lower => to_lower(text),
        StyleKind::Caps => to_caps(text),
    }
}

/// Prefix of `text` ending at the last character of its `n`-th
/// whitespace-delimited word, with the original spacing kept. The flag is
/// true when the text has fewer than `n` words (the whole text is returned).
pub fn first_n_words(text: &str, n: usize) -> (&str, bool) {
    assert!(n >= 1, "word count must be at least 1");
    let mut seen = 0;
    let mut in_word = false;
    for (i, c) in text.char_indices() {
        if c.is_whitespace() {
            if in_word {
                seen += 1;
                in_word = false;
                if seen == n {
                    return (&text[..i], false);
                }
            }
        } else {
            in_word = true;
        }
    }
    if in_word {
        seen += 1;
    }
    (text, seen < n)
}
