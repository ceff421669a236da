// SPDX-License-Identifier: MIT OR Apache-2.0

//! Context-dependent decision trials: sampling, ground truth, text rendering
//! and JSONL datasets.
//!
//! Coherences live on a 0.02 grid (stored as integer hundredths) so that the
//! evidence values `(1 ± coh) / 2` land exactly on the 0.01 grid and print as
//! two-decimal numbers that each map to a single vocabulary token.

use std::fmt;
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tokenizer::{join_tokens, split_words};

/// Smallest admissible magnitude of the context-relevant coherence.
pub const TIE_EPSILON: f64 = 0.02;

const GRID_HUNDREDTHS: i32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Context {
    Motion,
    Color,
}

impl Context {
    pub fn as_str(self) -> &'static str {
        match self {
            Context::Motion => "motion",
            Context::Color => "color",
        }
    }
}

impl FromStr for Context {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "motion" => Ok(Context::Motion),
            "color" => Ok(Context::Color),
            other => Err(Error::Data(format!("unknown context {other:?}"))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Choice {
    Left,
    Right,
}

impl Choice {
    pub fn as_str(self) -> &'static str {
        match self {
            Choice::Left => "left",
            Choice::Right => "right",
        }
    }
}

impl FromStr for Choice {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Choice::Left),
            "right" => Ok(Choice::Right),
            other => Err(Error::Data(format!("unknown answer {other:?}"))),
        }
    }
}

/// Signed coherence in `[-1, 1]`, held as integer hundredths on the 0.02 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Coherence(i32);

impl Coherence {
    pub fn from_hundredths(h: i32) -> Result<Self> {
        if !(-100..=100).contains(&h) {
            return Err(Error::Domain(format!("coherence {h}/100 outside [-1, 1]")));
        }
        if h % GRID_HUNDREDTHS != 0 {
            return Err(Error::Domain(format!("coherence {h}/100 is not on the 0.02 grid")));
        }
        Ok(Coherence(h))
    }

    pub fn from_f64(x: f64) -> Result<Self> {
        if !x.is_finite() {
            return Err(Error::Domain(format!("coherence {x}")));
        }
        let h = (x * 100.0).round();
        if (h - x * 100.0).abs() > 1e-6 || h.abs() > 100.0 {
            return Err(Error::Domain(format!(
                "coherence {x} must be a two-decimal value in [-1, 1]"
            )));
        }
        Self::from_hundredths(h as i32)
    }

    pub fn hundredths(self) -> i32 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 100.0
    }

    pub fn is_positive(self) -> bool {
        self.0 > 0
    }
}

impl fmt::Display for Coherence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2}", self.value())
    }
}

/// One evidence magnitude in `[0, 1]` on the 0.01 grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Level(u8);

impl Level {
    pub fn from_hundredths(h: u8) -> Result<Self> {
        if h > 100 {
            return Err(Error::Domain(format!("evidence level {h}/100 above 1")));
        }
        Ok(Level(h))
    }

    pub fn hundredths(self) -> u8 {
        self.0
    }

    pub fn value(self) -> f64 {
        f64::from(self.0) / 100.0
    }

    /// Exact two-decimal text, e.g. `0.05`.
    pub fn text(self) -> String {
        format!("{}.{:02}", self.0 / 100, self.0 % 100)
    }

    pub fn parse(s: &str) -> Result<Self> {
        let bad = || Error::Data(format!("malformed evidence value {s:?}"));
        let (int, frac) = s.split_once('.').ok_or_else(bad)?;
        if int.len() != 1 || frac.len() != 2 || !s.bytes().all(|b| b.is_ascii_digit() || b == b'.') {
            return Err(bad());
        }
        let h = int.parse::<u32>().map_err(|_| bad())? * 100 + frac.parse::<u32>().map_err(|_| bad())?;
        u8::try_from(h).map_err(|_| bad()).and_then(Level::from_hundredths)
    }
}

/// The four evidence inputs shown in a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Evidence {
    pub motion_left: Level,
    pub motion_right: Level,
    pub color_green: Level,
    pub color_red: Level,
}

/// `v_left = (1 − coh_m)/2`, `v_right = (1 + coh_m)/2`, and likewise for
/// green/red with `coh_c`.
pub fn evidence_from_coherences(coh_m: Coherence, coh_c: Coherence) -> Evidence {
    let split = |c: Coherence| {
        let lo = (100 - c.0) / 2;
        let hi = (100 + c.0) / 2;
        (Level(lo as u8), Level(hi as u8))
    };
    let (motion_left, motion_right) = split(coh_m);
    let (color_green, color_red) = split(coh_c);
    Evidence {
        motion_left,
        motion_right,
        color_green,
        color_red,
    }
}

impl Evidence {
    /// Inverse of [`evidence_from_coherences`].
    pub fn coherences(&self) -> Result<(Coherence, Coherence)> {
        let back = |lo: Level, hi: Level| {
            if u16::from(lo.0) + u16::from(hi.0) != 100 {
                return Err(Error::Data(format!(
                    "evidence pair {} / {} does not sum to 1",
                    lo.text(),
                    hi.text()
                )));
            }
            Coherence::from_hundredths(i32::from(hi.0) - i32::from(lo.0))
        };
        Ok((
            back(self.motion_left, self.motion_right)?,
            back(self.color_green, self.color_red)?,
        ))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TrialParams {
    pub context: Context,
    pub coh_m: Coherence,
    pub coh_c: Coherence,
}

impl TrialParams {
    pub fn relevant_coherence(&self) -> Coherence {
        match self.context {
            Context::Motion => self.coh_m,
            Context::Color => self.coh_c,
        }
    }
}

/// Positive coherence is evidence for the right target, negative for the left.
pub fn correct_choice(trial: &TrialParams) -> Result<Choice> {
    let coh = trial.relevant_coherence();
    match coh.0.signum() {
        1 => Ok(Choice::Right),
        -1 => Ok(Choice::Left),
        _ => Err(Error::Contract(format!(
            "{} coherence is exactly zero; the trial has no correct answer",
            trial.context.as_str()
        ))),
    }
}

fn check_bound(bound: f64) -> Result<i32> {
    if !(bound > 0.0 && bound <= 1.0) {
        return Err(Error::Config(format!("bound {bound} must lie in (0, 1]")));
    }
    let steps = (bound * 100.0 / f64::from(GRID_HUNDREDTHS) + 1e-9).floor() as i32;
    if steps == 0 {
        return Err(Error::Config(format!(
            "bound {bound} is below the tie threshold {TIE_EPSILON}"
        )));
    }
    Ok(steps)
}

/// Draws a trial: uniform context, coherences uniform on `[-bound, bound]`
/// snapped to the 0.02 grid, redrawn while the relevant one is a tie.
pub fn sample_trial<R: Rng + ?Sized>(bound: f64, rng: &mut R) -> Result<TrialParams> {
    let max_steps = check_bound(bound)?;
    let draw = |rng: &mut R| {
        let u: f64 = rng.random_range(-bound..=bound);
        let steps = (u * 100.0 / f64::from(GRID_HUNDREDTHS)).round() as i32;
        Coherence(steps.clamp(-max_steps, max_steps) * GRID_HUNDREDTHS)
    };
    loop {
        let context = if rng.random_bool(0.5) {
            Context::Motion
        } else {
            Context::Color
        };
        let coh_m = draw(rng);
        let coh_c = draw(rng);
        let trial = TrialParams { context, coh_m, coh_c };
        if f64::from(trial.relevant_coherence().0.abs()) / 100.0 >= TIE_EPSILON - 1e-12 {
            return Ok(trial);
        }
    }
}

/// RNG stream for record `index` of a dataset generated from `seed`.
pub fn trial_rng(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng
}

/// Variable parts of the prompt template.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Slot {
    Context,
    MotionLeft,
    MotionRight,
    ColorGreen,
    ColorRed,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Piece {
    Word(&'static str),
    Slot(Slot),
}

use Piece::{Slot as S, Word as W};

/// Token-level prompt template, ending at the word that precedes the answer.
pub const TEMPLATE: &[Piece] = &[
    W("Context"),
    W("cue"),
    W("is"),
    W("presented"),
    W(":"),
    S(Slot::Context),
    W("context"),
    W("."),
    W("A"),
    W("delay"),
    W("occurs"),
    W("."),
    W("Now"),
    W("sensory"),
    W("evidence"),
    W("is"),
    W("presented"),
    W(":"),
    W("motion"),
    W("left"),
    S(Slot::MotionLeft),
    W(","),
    W("motion"),
    W("right"),
    S(Slot::MotionRight),
    W(","),
    W("color"),
    W("green"),
    S(Slot::ColorGreen),
    W(","),
    W("color"),
    W("red"),
    S(Slot::ColorRed),
    W("."),
    W("The"),
    W("decision"),
    W("is"),
    W(":"),
    W("choose"),
];

/// Number of tokens in every rendered prompt.
pub const PROMPT_LEN: usize = TEMPLATE.len();

const fn slot_position(slot: Slot) -> usize {
    let mut i = 0;
    while i < TEMPLATE.len() {
        if let Piece::Slot(s) = TEMPLATE[i] {
            if s as u8 == slot as u8 {
                return i;
            }
        }
        i += 1;
    }
    panic!("slot missing from template");
}

/// Fixed token indices of the semantically meaningful prompt positions.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PromptPositions {
    pub ctx_word: usize,
    pub num_ml: usize,
    pub num_mr: usize,
    pub num_cg: usize,
    pub num_cr: usize,
    pub choose: usize,
    pub answer: usize,
}

pub const POSITIONS: PromptPositions = PromptPositions {
    ctx_word: slot_position(Slot::Context),
    num_ml: slot_position(Slot::MotionLeft),
    num_mr: slot_position(Slot::MotionRight),
    num_cg: slot_position(Slot::ColorGreen),
    num_cr: slot_position(Slot::ColorRed),
    choose: PROMPT_LEN - 1,
    answer: PROMPT_LEN,
};

impl PromptPositions {
    pub fn numbers(&self) -> [usize; 4] {
        [self.num_ml, self.num_mr, self.num_cg, self.num_cr]
    }
}

/// A trial together with its prompt text and expected answer.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct RenderedTrial {
    pub prompt: String,
    pub answer: Choice,
    pub trial: TrialParams,
    pub evidence: Evidence,
}

impl RenderedTrial {
    /// Prompt followed by the answer word, as it appears in training text.
    pub fn full_text(&self) -> String {
        format!("{} {}", self.prompt, self.answer.as_str())
    }
}

fn prompt_words(context: Context, ev: &Evidence) -> Vec<String> {
    TEMPLATE
        .iter()
        .map(|p| match *p {
            Piece::Word(w) => w.to_string(),
            Piece::Slot(Slot::Context) => context.as_str().to_string(),
            Piece::Slot(Slot::MotionLeft) => ev.motion_left.text(),
            Piece::Slot(Slot::MotionRight) => ev.motion_right.text(),
            Piece::Slot(Slot::ColorGreen) => ev.color_green.text(),
            Piece::Slot(Slot::ColorRed) => ev.color_red.text(),
        })
        .collect()
}

pub fn render_prompt(trial: &TrialParams) -> Result<RenderedTrial> {
    let answer = correct_choice(trial)?;
    let evidence = evidence_from_coherences(trial.coh_m, trial.coh_c);
    let words = prompt_words(trial.context, &evidence);
    Ok(RenderedTrial {
        prompt: join_tokens(words.iter().map(String::as_str)),
        answer,
        trial: *trial,
        evidence,
    })
}

/// Recovers the context and evidence from a rendered prompt.
pub fn parse_prompt(prompt: &str) -> Result<(Context, Evidence)> {
    let words = split_words(prompt);
    if words.len() != PROMPT_LEN {
        return Err(Error::Data(format!(
            "prompt has {} tokens, template has {PROMPT_LEN}",
            words.len()
        )));
    }
    let mut context = None;
    let mut levels = [Level(0); 4];
    for (piece, word) in TEMPLATE.iter().zip(&words) {
        match *piece {
            Piece::Word(w) if w == word => {}
            Piece::Word(w) => {
                return Err(Error::Data(format!("expected {w:?}, found {word:?}")));
            }
            Piece::Slot(Slot::Context) => context = Some(word.parse::<Context>()?),
            Piece::Slot(s) => {
                let i = match s {
                    Slot::MotionLeft => 0,
                    Slot::MotionRight => 1,
                    Slot::ColorGreen => 2,
                    _ => 3,
                };
                levels[i] = Level::parse(word)?;
            }
        }
    }
    let context = context.ok_or_else(|| Error::Data("prompt lacks a context word".into()))?;
    Ok((
        context,
        Evidence {
            motion_left: levels[0],
            motion_right: levels[1],
            color_green: levels[2],
            color_red: levels[3],
        },
    ))
}

/// JSONL record layout; field order is the on-disk order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Record {
    pub context: Context,
    pub coh_m: f64,
    pub coh_c: f64,
    pub prompt: String,
    pub answer: Choice,
}

impl From<&RenderedTrial> for Record {
    fn from(t: &RenderedTrial) -> Self {
        Record {
            context: t.trial.context,
            coh_m: t.trial.coh_m.value(),
            coh_c: t.trial.coh_c.value(),
            prompt: t.prompt.clone(),
            answer: t.answer,
        }
    }
}

impl TryFrom<Record> for RenderedTrial {
    type Error = Error;
    fn try_from(r: Record) -> Result<Self> {
        let trial = TrialParams {
            context: r.context,
            coh_m: Coherence::from_f64(r.coh_m)?,
            coh_c: Coherence::from_f64(r.coh_c)?,
        };
        let rendered = render_prompt(&trial)?;
        if rendered.prompt != r.prompt || rendered.answer != r.answer {
            return Err(Error::Data(format!(
                "record text disagrees with its parameters: {:?}",
                r.prompt
            )));
        }
        Ok(rendered)
    }
}

/// A generated set of trials plus the parameters that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub bound: f64,
    pub seed: u64,
    pub trials: Vec<RenderedTrial>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }

    pub fn to_jsonl(&self) -> String {
        trials_to_jsonl(&self.trials)
    }

    /// CRC32 of the JSONL serialization.
    pub fn fingerprint(&self) -> u32 {
        crc32fast::hash(self.to_jsonl().as_bytes())
    }

    pub fn write_jsonl(&self, path: &Path) -> Result<()> {
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(self.to_jsonl().as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn trials_to_jsonl(trials: &[RenderedTrial]) -> String {
    let mut out = String::new();
    for t in trials {
        out.push_str(&serde_json::to_string(&Record::from(t)).expect("record serializes"));
        out.push('\n');
    }
    out
}

/// Reads and validates a JSONL dataset. Bound and seed are unknown from the
/// file alone, so the bound is reported as the largest coherence present.
pub fn read_jsonl(path: &Path) -> Result<Dataset> {
    let f = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut trials = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: Record =
            serde_json::from_str(&line).map_err(|e| Error::Data(format!("{}:{}: {e}", path.display(), i + 1)))?;
        trials.push(RenderedTrial::try_from(rec)?);
    }
    if trials.is_empty() {
        return Err(Error::Data(format!("{} holds no records", path.display())));
    }
    let bound = trials
        .iter()
        .map(|t| t.trial.coh_m.hundredths().abs().max(t.trial.coh_c.hundredths().abs()))
        .max()
        .map_or(0.0, |h| f64::from(h) / 100.0);
    Ok(Dataset { bound, seed: 0, trials })
}

/// `n` trials; record `i` depends only on `(seed, i)`.
pub fn generate_dataset(n: usize, bound: f64, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::Config("dataset size must be positive".into()));
    }
    check_bound(bound)?;
    let trials = (0..n as u64)
        .map(|i| sample_trial(bound, &mut trial_rng(seed, i)).and_then(|t| render_prompt(&t)))
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset { bound, seed, trials })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn coh(x: f64) -> Coherence {
        Coherence::from_f64(x).unwrap()
    }

    #[test]
    fn evidence_formulas() {
        let e = evidence_from_coherences(coh(0.0), coh(0.0));
        assert_eq!(
            (e.motion_left.text(), e.motion_right.text()),
            ("0.50".into(), "0.50".into())
        );
        let e = evidence_from_coherences(coh(0.9), coh(-0.4));
        assert_eq!(e.motion_left.text(), "0.05");
        assert_eq!(e.motion_right.text(), "0.95");
        assert_eq!(e.color_green.text(), "0.70");
        assert_eq!(e.color_red.text(), "0.30");
    }

    #[test]
    fn coherence_domain() {
        assert!(matches!(Coherence::from_f64(1.2), Err(Error::Domain(_))));
        assert!(matches!(Coherence::from_f64(0.37), Err(Error::Domain(_))));
        assert!(matches!(Coherence::from_f64(f64::NAN), Err(Error::Domain(_))));
        assert_eq!(coh(-1.0).hundredths(), -100);
    }

    #[test]
    fn choice_rule() {
        let t = |context, m, c| TrialParams {
            context,
            coh_m: coh(m),
            coh_c: coh(c),
        };
        assert_eq!(correct_choice(&t(Context::Motion, 0.6, -0.8)).unwrap(), Choice::Right);
        assert_eq!(correct_choice(&t(Context::Color, 0.6, -0.8)).unwrap(), Choice::Left);
        assert_eq!(correct_choice(&t(Context::Color, 0.0, 0.02)).unwrap(), Choice::Right);
        assert!(matches!(
            correct_choice(&t(Context::Motion, 0.0, 0.5)),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn renders_reference_prompt() {
        let t = TrialParams {
            context: Context::Motion,
            coh_m: coh(0.9),
            coh_c: coh(-0.4),
        };
        let r = render_prompt(&t).unwrap();
        assert_eq!(
            r.prompt,
            "Context cue is presented: motion context. A delay occurs. Now sensory evidence is \
             presented: motion left 0.05, motion right 0.95, color green 0.70, color red 0.30. \
             The decision is: choose"
        );
        assert_eq!(r.answer, Choice::Right);
        assert_eq!(parse_prompt(&r.prompt).unwrap(), (Context::Motion, r.evidence));
    }

    #[test]
    fn rejects_bad_bounds() {
        let mut rng = trial_rng(1, 0);
        for b in [0.0, -0.3, 1.5, 0.01, f64::NAN] {
            assert!(matches!(sample_trial(b, &mut rng), Err(Error::Config(_))), "bound {b}");
        }
        assert!(generate_dataset(0, 0.5, 1).is_err());
    }

    #[test]
    fn sampled_trials_respect_bound_and_ties() {
        for bound in [0.9, 0.7] {
            let mut rng = trial_rng(7, 3);
            for _ in 0..5000 {
                let t = sample_trial(bound, &mut rng).unwrap();
                assert!(t.coh_m.value().abs() <= bound + 1e-12);
                assert!(t.coh_c.value().abs() <= bound + 1e-12);
                assert!(t.relevant_coherence().value().abs() >= TIE_EPSILON - 1e-12);
            }
        }
    }

    #[test]
    fn coherence_mean_is_centered() {
        // The grid-snapped uniform is symmetric, so its mean is 0 and its
        // variance stays within a hair of bound²/3.
        let bound = 0.9;
        let n = 100_000;
        let mut rng = trial_rng(2024, 0);
        let mut sum = 0.0;
        for _ in 0..n {
            sum += sample_trial(bound, &mut rng).unwrap().coh_c.value();
        }
        let mean = sum / n as f64;
        let sigma = (bound * bound / 3.0 / n as f64).sqrt();
        assert!(mean.abs() < 3.0 * sigma, "mean {mean}, 3σ {}", 3.0 * sigma);
    }

    #[test]
    fn irrelevant_coherence_never_matters() {
        let mut rng = trial_rng(11, 0);
        for _ in 0..1000 {
            let t = sample_trial(0.8, &mut rng).unwrap();
            let mut flipped = t;
            match t.context {
                Context::Motion => flipped.coh_c = Coherence(-t.coh_c.0),
                Context::Color => flipped.coh_m = Coherence(-t.coh_m.0),
            }
            assert_eq!(correct_choice(&t).unwrap(), correct_choice(&flipped).unwrap());
        }
    }

    #[test]
    fn dataset_is_deterministic_and_balanced() {
        let a = generate_dataset(2000, 0.9, 2024).unwrap();
        let b = generate_dataset(2000, 0.9, 2024).unwrap();
        assert_eq!(a.to_jsonl(), b.to_jsonl());
        assert_eq!(a.to_jsonl().lines().count(), 2000);
        let right = a.trials.iter().filter(|t| t.answer == Choice::Right).count() as f64 / 2000.0;
        assert!((0.45..=0.55).contains(&right), "right fraction {right}");
        // Records are keyed by index, not by generation order.
        let short = generate_dataset(10, 0.9, 2024).unwrap();
        assert_eq!(short.trials[..], a.trials[..10]);
    }

    #[test]
    fn jsonl_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.jsonl");
        let d = generate_dataset(50, 0.7, 5).unwrap();
        d.write_jsonl(&path).unwrap();
        let back = read_jsonl(&path).unwrap();
        assert_eq!(back.trials, d.trials);
        let first = d.to_jsonl().lines().next().unwrap().to_string();
        let v: serde_json::Value = serde_json::from_str(&first).unwrap();
        let keys: Vec<_> = v.as_object().unwrap().keys().cloned().collect();
        assert_eq!(keys.len(), 5);
        for k in ["context", "coh_m", "coh_c", "prompt", "answer"] {
            assert!(v.get(k).is_some(), "missing {k}");
        }
    }

    #[test]
    fn positions_match_template() {
        assert_eq!(PROMPT_LEN, 39);
        assert_eq!(POSITIONS.ctx_word, 5);
        assert_eq!(POSITIONS.numbers(), [20, 24, 28, 32]);
        assert_eq!(POSITIONS.choose, 38);
    }
}
