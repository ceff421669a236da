// SPDX-License-Identifier: MIT OR Apache-2.0

//! Acceptance runner: trains the desk-scale models and checks every
//! acceptance criterion, printing one PASS/FAIL line per criterion.
//!
//! Takes roughly half an hour on one core. The desk-scratch test accuracy
//! is recorded in `tests/acceptance_reference.json` on the first run and
//! must be reproduced bit for bit afterwards; delete the file to re-record.

#[path = "../../core/tests/common/mod.rs"]
mod common;

use std::path::PathBuf;
use std::time::{Duration, Instant};

use cddm_lab::interp::{
    ablation_sweep, collect_hidden_states, probe_variable, FitOptions, ProbeResult, Unit, Variable,
};
use cddm_lab::model::{AblationSpec, Checkpoint, ForwardOptions};
use cddm_lab::task::{generate_dataset, Dataset, POSITIONS, PROMPT_LEN};
use cddm_lab::tokenizer::Vocab;
use cddm_lab::training::{evaluate, generalization_sweep, pretrain_toy_corpus, train, Preset, TrainMode, TrainOutcome};
use serde::{Deserialize, Serialize};

type Verdict = std::result::Result<String, String>;

const TEST_SEED: u64 = 31_337;
const TEST_PROMPTS: usize = 2000;
const TARGET: f64 = 0.9;

fn ensure(ok: bool, msg: String) -> Verdict {
    if ok {
        Ok(msg)
    } else {
        Err(msg)
    }
}

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

fn gradients() -> Verdict {
    let start = Instant::now();
    let mut worst: f64 = 0.0;
    let mut instances = 0;
    for seed in 0..20 {
        for (_, e) in common::op_gradient_errors(seed).map_err(err)? {
            worst = worst.max(e);
            instances += 1;
        }
        worst = worst.max(common::model_gradient_error(seed).map_err(err)?);
        instances += 1;
    }
    let took = start.elapsed();
    ensure(
        worst < common::FD_TOLERANCE && took < Duration::from_secs(60),
        format!(
            "{instances} instances, max relative error {worst:.2e}, {:.1}s",
            took.as_secs_f64()
        ),
    )
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
struct Reference {
    /// `f64::to_bits` of the test accuracy, as hex.
    accuracy_bits: String,
    accuracy: f64,
    checkpoint_crc32: u32,
}

fn reference_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/acceptance_reference.json")
}

fn desk_scratch(vocab: &Vocab, test: &Dataset, out: &TrainOutcome, took: Duration) -> Verdict {
    let acc = evaluate(&out.last, test, vocab, None).map_err(err)?.accuracy;
    let now = Reference {
        accuracy_bits: format!("{:016x}", acc.to_bits()),
        accuracy: acc,
        checkpoint_crc32: crc32fast::hash(&out.last.to_bytes().map_err(err)?),
    };
    let path = reference_path();
    let repro = if path.exists() {
        let text = std::fs::read_to_string(&path).map_err(err)?;
        let stored: Reference = serde_json::from_str(&text).map_err(err)?;
        if stored != now {
            return Err(format!("accuracy {acc:.4} does not reproduce the reference {stored:?}"));
        }
        "reproduces the recorded reference"
    } else {
        std::fs::write(&path, serde_json::to_string_pretty(&now).map_err(err)? + "\n").map_err(err)?;
        "reference recorded"
    };
    ensure(
        acc >= TARGET && took <= Duration::from_secs(3600),
        format!(
            "{:.4} on {} held-out prompts after {} samples in {:.1} min; {repro}",
            acc,
            test.len(),
            out.metrics.samples_seen,
            took.as_secs_f64() / 60.0
        ),
    )
}

fn finetune_efficiency(vocab: &Vocab, scratch: &TrainOutcome) -> (Verdict, Option<Checkpoint<f32>>) {
    let start = Instant::now();
    let pre = Preset::DeskPretrain
        .pretrain_config(vocab.len())
        .expect("pretraining preset");
    let cfg = Preset::DeskFinetune.train_config(vocab.len()).expect("task preset");
    let run = pretrain_toy_corpus(&pre, vocab, None)
        .and_then(|(base, pm)| Ok((train(&cfg, TrainMode::FineTune(base), vocab, None)?, pm)));
    let (ft, pm) = match run {
        Ok(r) => r,
        Err(e) => return (Err(e.to_string()), None),
    };
    let perplexity = pm.epochs.last().map_or(f64::NAN, |e| e.heldout_perplexity);
    let s = scratch.metrics.samples_to_reach(TARGET);
    let f = ft.metrics.samples_to_reach(TARGET);
    let detail = format!(
        "samples to {TARGET}: fine-tune {f:?}, scratch {s:?} (pretrained held-out perplexity {perplexity:.3}, {:.1} min)",
        start.elapsed().as_secs_f64() / 60.0
    );
    let verdict = match (f, s) {
        (Some(f), Some(s)) => ensure(2 * f <= s, detail),
        _ => Err(detail),
    };
    (verdict, Some(ft.last))
}

fn bound_accuracies(vocab: &Vocab, model: &Checkpoint<f32>, bounds: &[f64]) -> cddm_lab::Result<Vec<f64>> {
    let r = generalization_sweep(model, vocab, bounds, TEST_PROMPTS, TEST_SEED)?;
    Ok(r.per_bound.iter().map(|b| b.accuracy).collect())
}

/// Scores the scratch model; the fine-tuned model's numbers are reported
/// alongside for comparison only.
fn bound_generalization(
    vocab: &Vocab,
    model: &Checkpoint<f32>,
    finetuned: Option<&Checkpoint<f32>>,
    train_bound: f64,
) -> Verdict {
    let bounds = [train_bound, 0.3, 0.5, 0.9, 1.0];
    let listing = |acc: &[f64]| -> String {
        bounds
            .iter()
            .zip(acc)
            .map(|(b, a)| format!("{b}:{a:.3}"))
            .collect::<Vec<_>>()
            .join(" ")
    };
    let acc = bound_accuracies(vocab, model, &bounds).map_err(err)?;
    let worst = acc[1..].iter().map(|a| (a - acc[0]).abs()).fold(0.0, f64::max);
    let mut msg = format!("{} ; largest gap {worst:.3}", listing(&acc));
    if let Some(ft) = finetuned {
        let ft_acc = bound_accuracies(vocab, ft, &bounds).map_err(err)?;
        msg.push_str(&format!(" (fine-tuned model, not scored: {})", listing(&ft_acc)));
    }
    ensure(worst <= 0.10, msg)
}

fn ablation(vocab: &Vocab, model: &Checkpoint<f32>, test: &Dataset) -> Verdict {
    let start = Instant::now();
    let grid = ablation_sweep(model, test, vocab).map_err(err)?;
    let took = start.elapsed();
    let plain = evaluate(model, test, vocab, None).map_err(err)?.accuracy;
    let (l, h, drop) = grid.largest_drop();

    let prompts: Vec<Vec<usize>> = test.trials[..50]
        .iter()
        .map(|t| vocab.encode_prompt(&t.prompt))
        .collect::<cddm_lab::Result<_>>()
        .map_err(err)?;
    let mut zeroed = model.clone();
    zeroed.zero_head_projection(l, h).map_err(err)?;
    let spec = AblationSpec::single(l, h);
    let mut bit_exact = true;
    for p in &prompts {
        let a = zeroed.forward(p, &ForwardOptions::default()).map_err(err)?.logits;
        let b = zeroed
            .forward(
                p,
                &ForwardOptions {
                    capture: false,
                    ablation: Some(&spec),
                },
            )
            .map_err(err)?
            .logits;
        bit_exact &= a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
    }

    let wide: Checkpoint<f64> = model.cast();
    let all = AblationSpec::all(wide.config());
    let mut oracle_err: f64 = 0.0;
    for p in &prompts {
        let got = wide
            .forward(
                p,
                &ForwardOptions {
                    capture: false,
                    ablation: Some(&all),
                },
            )
            .map_err(err)?
            .logits;
        let want = common::attention_free_logits(&wide, p);
        oracle_err = got
            .data()
            .iter()
            .zip(&want)
            .map(|(a, b)| (a - b).abs())
            .fold(oracle_err, f64::max);
    }
    ensure(
        grid.baseline == plain && bit_exact && oracle_err <= 1e-10 && took <= Duration::from_secs(600),
        format!(
            "baseline {:.4} vs evaluate {plain:.4}; zeroed head ({l},{h}) bit-exact {bit_exact}; \
             all-ablated oracle error {oracle_err:.1e}; sweep {:.1}s; largest drop {drop:.3} at ({l},{h})",
            grid.baseline,
            took.as_secs_f64()
        ),
    )
}

/// `TEST_PROMPTS` trials with equal counts of every context × choice cell.
fn balanced_probe_set() -> cddm_lab::Result<Dataset> {
    let pool = generate_dataset(4 * TEST_PROMPTS, 0.7, TEST_SEED + 1)?;
    let quota = TEST_PROMPTS / 4;
    let mut counts = std::collections::HashMap::new();
    let trials: Vec<_> = pool
        .trials
        .into_iter()
        .filter(|t| {
            let c = counts.entry((t.trial.context, t.answer)).or_insert(0);
            *c += 1;
            *c <= quota
        })
        .collect();
    if trials.len() != TEST_PROMPTS {
        return Err(cddm_lab::Error::Domain(format!(
            "only {} balanced trials in the pool",
            trials.len()
        )));
    }
    Ok(Dataset { trials, ..pool })
}

fn probes(vocab: &Vocab, model: &Checkpoint<f32>) -> Verdict {
    let test = &balanced_probe_set().map_err(err)?;
    let layer = model.config().n_layers - 1;
    let acts = collect_hidden_states(model, test, vocab, layer).map_err(err)?;
    let opts = FitOptions::default();
    let key = u64::from(test.fingerprint());
    let probe = |token: usize, v: Variable| probe_variable(&acts[token], v, Unit::Population, key, &opts);

    let mut results: Vec<ProbeResult> = Vec::new();
    let mut weakest_context = (0, f64::INFINITY);
    for token in POSITIONS.ctx_word..PROMPT_LEN {
        let r = probe(token, Variable::Context).map_err(err)?;
        if r.scores.mean < weakest_context.1 {
            weakest_context = (token, r.scores.mean);
        }
        results.push(r);
    }
    let last = PROMPT_LEN - 1;
    let choice_first = probe(0, Variable::Choice).map_err(err)?;
    let choice_last = probe(last, Variable::Choice).map_err(err)?;
    let (first_mean, last_mean) = (choice_first.scores.mean, choice_last.scores.mean);
    results.extend([choice_first, choice_last]);
    results.push(probe(0, Variable::Context).map_err(err)?);
    for v in [Variable::CohMotionSign, Variable::CohColorSign] {
        results.push(probe(last, v).map_err(err)?);
    }
    let baselines: Vec<f64> = results.iter().map(|r| r.baseline.mean).collect();
    let lo = baselines.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = baselines.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    ensure(
        (0.44..=0.56).contains(&lo)
            && (0.44..=0.56).contains(&hi)
            && weakest_context.1 >= 0.95
            && last_mean >= first_mean,
        format!(
            "shuffled baselines in [{lo:.3}, {hi:.3}] over {} probes; context probe min {:.3} at token {}; \
             choice probe {first_mean:.3} at token 0, {last_mean:.3} at token {last}",
            results.len(),
            weakest_context.1,
            weakest_context.0
        ),
    )
}

fn structure(vocab: &Vocab, model: &Checkpoint<f32>, test: &Dataset) -> Verdict {
    let wide: Checkpoint<f64> = model.cast();
    let causal = common::causal_violation(&wide, 100, 5).map_err(err)?;
    let prompts: Vec<Vec<usize>> = test.trials[..100]
        .iter()
        .map(|t| vocab.encode_prompt(&t.prompt))
        .collect::<cddm_lab::Result<_>>()
        .map_err(err)?;
    let rows = common::attention_row_sum_error(&wide, &prompts).map_err(err)?;

    let dir = tempfile::tempdir().map_err(err)?;
    let path = dir.path().join("model.ckpt");
    model.save(&path).map_err(err)?;
    let bytes = std::fs::read(&path).map_err(err)?;
    let back = Checkpoint::<f32>::load(&path).map_err(err)?;
    let round_trip = back == *model && back.to_bytes().map_err(err)? == bytes;

    let a = generate_dataset(TEST_PROMPTS, 0.7, 123).map_err(err)?.to_jsonl();
    let b = generate_dataset(TEST_PROMPTS, 0.7, 123).map_err(err)?.to_jsonl();
    let c = generate_dataset(TEST_PROMPTS, 0.7, 124).map_err(err)?.to_jsonl();
    let data_ok = a == b && a != c;
    ensure(
        causal == 0.0 && rows <= 1e-6 && round_trip && data_ok,
        format!(
            "causal max change {causal:e} over 100 trials; attention row error {rows:.1e}; \
             checkpoint round-trip {round_trip}; dataset bytes reproducible {data_ok}"
        ),
    )
}

fn pca() -> Verdict {
    let mut r = common::rng(8);
    let mut cases = 0;
    for i in 0..50 {
        let (n, d) = (3 + i % 40, 1 + i % 9);
        common::pca_violation(&common::random_matrix(&mut r, n, d))?;
        common::pca_rank_one_violation(&mut r, n, d.max(2))?;
        cases += 2;
    }
    Ok(format!("{cases} randomized matrices"))
}

fn report(n: usize, name: &str, v: &Verdict, failures: &mut usize) {
    match v {
        Ok(msg) => println!("PASS {n} {name}: {msg}"),
        Err(msg) => {
            *failures += 1;
            println!("FAIL {n} {name}: {msg}");
        }
    }
}

fn main() {
    let vocab = Vocab::standard();
    let mut failures = 0;
    report(1, "gradient checks", &gradients(), &mut failures);
    report(8, "pca", &pca(), &mut failures);

    let cfg = Preset::DeskScratch.train_config(vocab.len()).expect("task preset");
    let start = Instant::now();
    let scratch = train(&cfg, TrainMode::FromScratch, &vocab, None);
    let took = start.elapsed();
    let test = generate_dataset(TEST_PROMPTS, cfg.bound, TEST_SEED).expect("test set");
    match scratch {
        Ok(scratch) => {
            let model = &scratch.last;
            report(
                2,
                "desk-scratch accuracy",
                &desk_scratch(&vocab, &test, &scratch, took),
                &mut failures,
            );
            let (ft_verdict, finetuned) = finetune_efficiency(&vocab, &scratch);
            report(3, "fine-tune efficiency", &ft_verdict, &mut failures);
            let gen = bound_generalization(&vocab, model, finetuned.as_ref(), cfg.bound);
            report(4, "bound generalization", &gen, &mut failures);
            report(5, "ablation", &ablation(&vocab, model, &test), &mut failures);
            report(6, "probes", &probes(&vocab, model), &mut failures);
            report(7, "structure", &structure(&vocab, model, &test), &mut failures);
        }
        Err(e) => {
            for (n, name) in [
                (2, "desk-scratch accuracy"),
                (3, "fine-tune efficiency"),
                (4, "bound generalization"),
                (5, "ablation"),
                (6, "probes"),
                (7, "structure"),
            ] {
                report(n, name, &Err(format!("scratch training failed: {e}")), &mut failures);
            }
        }
    }
    println!("{} of 8 criteria passed", 8 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
