// SPDX-License-Identifier: MIT OR Apache-2.0

//! Grammar-generated pretraining text over the shared vocabulary.
//!
//! The corpus gives a model generic structure to start from before it ever
//! sees a decision trial: word order in short declaratives, the magnitude of
//! number tokens, within-pair comparisons, side words for each color,
//! looking up the number named by a cue, and recalling a cue word across a
//! delay. It never contains a task prompt or a
//! task answer; `choose` does not occur at all.

use rand::seq::IndexedRandom;
use rand::Rng;

use crate::task::trial_rng;
use crate::tokenizer::join_tokens;

/// Corpus words that are not already part of the task template.
pub const FILLER_WORDS: &[&str] = &[
    "the", "a", "cat", "dog", "bird", "child", "teacher", "farmer", "ball", "tree", "house", "river", "road", "sees",
    "finds", "likes", "follows", "watches", "moves", "value", "of", "high", "low", "signal", "stronger", "weaker",
    "than", "and", "means", "was", "points", "to", "side", "then", "again",
];

const SUBJECTS: &[&str] = &["cat", "dog", "bird", "child", "teacher", "farmer"];
const OBJECTS: &[&str] = &["ball", "tree", "house", "river", "road", "cat", "dog", "bird"];
const VERBS: &[&str] = &["sees", "finds", "likes", "follows", "watches"];

fn number(h: u32) -> String {
    format!("{}.{:02}", h / 100, h % 100)
}

fn narrative<R: Rng>(rng: &mut R, out: &mut Vec<String>) {
    let det = if rng.random_bool(0.5) { "The" } else { "A" };
    out.push(det.into());
    out.push(SUBJECTS.choose(rng).unwrap().to_string());
    out.push(VERBS.choose(rng).unwrap().to_string());
    out.push("the".into());
    out.push(OBJECTS.choose(rng).unwrap().to_string());
    out.push(".".into());
}

fn magnitude<R: Rng>(rng: &mut R, out: &mut Vec<String>) {
    let h = loop {
        let h = rng.random_range(0..=100u32);
        if h != 50 {
            break h;
        }
    };
    out.extend(
        [
            "A",
            "value",
            "of",
            &number(h),
            "is",
            if h > 50 { "high" } else { "low" },
            ".",
        ]
        .map(String::from),
    );
}

fn comparison<R: Rng>(rng: &mut R, out: &mut Vec<String>) {
    let (dim, lo_word, hi_word) = if rng.random_bool(0.5) {
        ("motion", "left", "right")
    } else {
        ("color", "green", "red")
    };
    let hi = loop {
        let h = rng.random_range(0..=100u32);
        if h != 50 {
            break h;
        }
    };
    let lo = 100 - hi;
    let winner = if hi > 50 { hi_word } else { lo_word };
    let relation = if rng.random_bool(0.5) { "stronger" } else { "weaker" };
    let named = if relation == "stronger" {
        winner
    } else if winner == hi_word {
        lo_word
    } else {
        hi_word
    };
    out.extend(
        [
            dim,
            lo_word,
            &number(lo),
            ",",
            dim,
            hi_word,
            &number(hi),
            ".",
            "The",
            dim,
            "signal",
            "is",
            relation,
            "to",
            "the",
            named,
            "side",
            ".",
        ]
        .map(String::from),
    );
}

fn side_mapping<R: Rng>(rng: &mut R, out: &mut Vec<String>) {
    let (color, side) = if rng.random_bool(0.5) {
        ("green", "left")
    } else {
        ("red", "right")
    };
    out.extend(["The", color, "signal", "points", "to", "the", side, "side", "."].map(String::from));
}

fn cued_lookup<R: Rng>(rng: &mut R, out: &mut Vec<String>) {
    let (m, c) = (rng.random_range(0..=100u32), rng.random_range(0..=100u32));
    let cue = if rng.random_bool(0.5) { "motion" } else { "color" };
    let value = if cue == "motion" { m } else { c };
    out.extend(
        [
            "The",
            "cue",
            "is",
            cue,
            ".",
            "motion",
            &number(m),
            ",",
            "color",
            &number(c),
            ".",
            "The",
            "cue",
            "value",
            "is",
            &number(value),
            ".",
        ]
        .map(String::from),
    );
}

fn cue_recall<R: Rng>(rng: &mut R, out: &mut Vec<String>) {
    let cue = if rng.random_bool(0.5) { "motion" } else { "color" };
    out.extend(["The", "cue", "is", cue, ".", "A", "delay", "occurs", "."].map(String::from));
    if rng.random_bool(0.5) {
        out.extend(["Now", "the", "cue", "was", cue, "again", "."].map(String::from));
    } else {
        out.extend(["The", "cue", "was", cue, "."].map(String::from));
    }
}

/// One sentence group; group `index` depends only on `(seed, index)`.
pub fn sentence(seed: u64, index: u64) -> Vec<String> {
    let mut rng = trial_rng(seed, index);
    let mut out = Vec::new();
    match rng.random_range(0..6u32) {
        0 => narrative(&mut rng, &mut out),
        1 => magnitude(&mut rng, &mut out),
        2 => comparison(&mut rng, &mut out),
        3 => side_mapping(&mut rng, &mut out),
        4 => cued_lookup(&mut rng, &mut out),
        _ => cue_recall(&mut rng, &mut out),
    }
    out
}

/// `n` sentence groups as canonical text, one per entry.
pub fn generate_corpus(n: usize, seed: u64) -> Vec<String> {
    (0..n as u64)
        .map(|i| join_tokens(sentence(seed, i).iter().map(String::as_str)))
        .collect()
}
