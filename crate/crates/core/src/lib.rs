//! Frequency-thresholded n-gram Bloom filters, MemFree constrained decoding
//! and an evaluation harness for approximate memorization.
//!
//! The usual flow: count n-grams over a corpus ([`ngram`]), store the
//! frequent ones in an [`bloom::NGramFilter`], then decode with
//! [`decoding::memfree_generate`] so no stored n-gram is ever emitted, and
//! score the result with [`similarity`].

pub mod bloom;
pub mod corpus;
pub mod decoding;
pub mod error;
pub mod harness;
pub mod ngram;
pub mod similarity;
pub mod style;
pub mod tokenizer;
pub mod toy_lm;

pub use error::{Error, FormatError, Result};
