// SPDX-License-Identifier: MIT OR Apache-2.0

//! Word-level tokenizer over a fixed vocabulary.
//!
//! Words are whitespace separated; `:`, `,` and `.` are split off as their
//! own tokens unless they are part of a number such as `0.35`. Decoding
//! re-attaches punctuation to the preceding word, so canonical text survives
//! an encode/decode round trip unchanged.

use std::collections::HashMap;
use std::path::Path;

use crate::error::{Error, Result};
use crate::task::{Piece, PROMPT_LEN, TEMPLATE};

pub const PAD: &str = "<pad>";
pub const UNK: &str = "<unk>";

const PUNCT: [char; 3] = [':', ',', '.'];

fn is_punct(token: &str) -> bool {
    token.len() == 1 && token.starts_with(PUNCT)
}

/// Splits text into word and punctuation tokens.
pub fn split_words(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for raw in text.split_whitespace() {
        let mut word = raw;
        let mut trailing = Vec::new();
        while word.len() > 1 && word.ends_with(PUNCT) {
            trailing.push(&word[word.len() - 1..]);
            word = &word[..word.len() - 1];
        }
        out.push(word.to_string());
        out.extend(trailing.into_iter().rev().map(str::to_string));
    }
    out
}

/// Inverse of [`split_words`] on canonical text.
pub fn join_tokens<'a>(tokens: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    for tok in tokens {
        if !out.is_empty() && !is_punct(tok) {
            out.push(' ');
        }
        out.push_str(tok);
    }
    out
}

/// Every two-decimal number from `0.00` to `1.00`.
pub fn number_tokens() -> impl Iterator<Item = String> {
    (0..=100u32).map(|h| format!("{}.{:02}", h / 100, h % 100))
}

/// Bidirectional token ↔ id map with dense ids.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocab {
    tokens: Vec<String>,
    ids: HashMap<String, usize>,
}

impl Vocab {
    /// Ids are assigned in order: specials, template words (first
    /// appearance), the 101 number tokens, then `extra_words`. Duplicates are
    /// skipped.
    pub fn build<'a>(extra_words: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Vocab {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        v.insert(PAD);
        v.insert(UNK);
        for piece in TEMPLATE {
            if let Piece::Word(w) = piece {
                v.insert(w);
            }
        }
        for ctx in ["motion", "color"] {
            v.insert(ctx);
        }
        for n in number_tokens() {
            v.insert(&n);
        }
        for w in extra_words {
            v.insert(w);
        }
        v
    }

    /// Template words plus the toy pretraining corpus vocabulary.
    pub fn standard() -> Self {
        Self::build(crate::corpus::FILLER_WORDS.iter().copied())
    }

    fn insert(&mut self, tok: &str) {
        if !self.ids.contains_key(tok) {
            self.ids.insert(tok.to_string(), self.tokens.len());
            self.tokens.push(tok.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> Option<usize> {
        self.ids.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn pad_id(&self) -> usize {
        0
    }

    pub fn unk_id(&self) -> usize {
        1
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    /// Out-of-vocabulary words map to `<unk>`.
    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_words(text)
            .iter()
            .map(|w| self.id(w).unwrap_or(self.unk_id()))
            .collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        join_tokens(ids.iter().map(|&i| self.token(i).unwrap_or(UNK)))
    }

    /// Encodes a rendered task prompt, which must have the template length.
    pub fn encode_prompt(&self, prompt: &str) -> Result<Vec<usize>> {
        let ids = self.encode(prompt);
        if ids.len() != PROMPT_LEN {
            return Err(Error::Data(format!(
                "prompt encodes to {} tokens, expected {PROMPT_LEN}",
                ids.len()
            )));
        }
        if ids.contains(&self.unk_id()) {
            return Err(Error::Data(format!("prompt has out-of-vocabulary words: {prompt:?}")));
        }
        Ok(ids)
    }

    /// One token per line; line number is the id.
    pub fn to_text(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut v = Vocab {
            tokens: Vec::new(),
            ids: HashMap::new(),
        };
        for (i, line) in text.lines().enumerate() {
            if line.is_empty() || v.ids.contains_key(line) {
                return Err(Error::Data(format!("vocab line {}: empty or duplicate token", i + 1)));
            }
            v.insert(line);
        }
        if v.token(0) != Some(PAD) || v.token(1) != Some(UNK) {
            return Err(Error::Data("vocab must start with <pad> and <unk>".into()));
        }
        Ok(v)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_text(&text)
    }
}
