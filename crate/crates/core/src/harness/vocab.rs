//! Fixed toy vocabulary for templated captions.

use crate::error::{Error, Result};

pub const COLORS: [&str; 6] = ["red", "green", "blue", "yellow", "magenta", "cyan"];
pub const SHAPES: [&str; 6] = ["circle", "square", "triangle", "cross", "ring", "diamond"];

/// RGB of each palette color.
pub const PALETTE: [[f64; 3]; 6] = [
    [0.90, 0.15, 0.15],
    [0.15, 0.80, 0.20],
    [0.15, 0.30, 0.95],
    [0.95, 0.85, 0.10],
    [0.85, 0.15, 0.85],
    [0.10, 0.85, 0.90],
];

/// Token strings; the index is the token id. Id 0 is padding.
pub const VOCAB: [&str; 14] = [
    "<pad>", "a", "red", "green", "blue", "yellow", "magenta", "cyan", "circle", "square", "triangle", "cross",
    "ring", "diamond",
];

pub fn token_id(word: &str) -> Option<u32> {
    VOCAB.iter().position(|w| *w == word).map(|i| i as u32)
}

/// Whitespace tokenizer over [`VOCAB`].
pub fn tokenize(text: &str) -> Result<Vec<u32>> {
    text.split_whitespace()
        .map(|w| token_id(w).ok_or_else(|| Error::ConfigInvalid(format!("word `{w}` is not in the vocabulary"))))
        .collect()
}

pub fn detokenize(tokens: &[u32]) -> String {
    tokens
        .iter()
        .map(|&t| VOCAB.get(t as usize).copied().unwrap_or("<unk>"))
        .collect::<Vec<_>>()
        .join(" ")
}
