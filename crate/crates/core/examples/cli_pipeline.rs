// SPDX-License-Identifier: MIT OR Apache-2.0

//! Drive the command-line runner in-process: generate data, train a tiny
//! model from a TOML config, then evaluate and ablate it.

use cddm_lab::cli::{run, Cli};
use clap::Parser;

const CONFIG: &str = r#"
[train]
epochs = 1
batch_size = 8
lr = 0.003
bound = 0.7
seed = 1
n_train_samples = 800
context_window = 40
eval_samples = 100
eval_seed = 2

[train.model]
n_layers = 1
n_heads = 2
d_model = 16
vocab_size = 161
max_positions = 64
seed = 1
"#;

fn step(args: &[&str]) -> cddm_lab::Result<()> {
    let cli = Cli::try_parse_from(std::iter::once("cddm-lab").chain(args.iter().copied())).expect("valid args");
    println!("{}", run(&cli)?);
    Ok(())
}

fn main() -> cddm_lab::Result<()> {
    let dir = tempfile::tempdir().expect("temp dir");
    let p = |name: &str| dir.path().join(name).to_string_lossy().into_owned();
    std::fs::write(p("exp.toml"), CONFIG).expect("write config");

    step(&[
        "gen",
        "--n",
        "200",
        "--bound",
        "0.7",
        "--seed",
        "9001",
        "--out",
        &p("eval.jsonl"),
    ])?;
    step(&["train", "--config", &p("exp.toml"), "--out", &p("run")])?;
    let ckpt = p("run/checkpoints/final.ckpt");
    step(&[
        "eval",
        "--ckpt",
        &ckpt,
        "--data",
        &p("eval.jsonl"),
        "--bounds",
        "0.3,0.9",
        "--n",
        "100",
        "--out",
        &p("run"),
    ])?;
    step(&[
        "ablate",
        "--ckpt",
        &ckpt,
        "--data",
        &p("eval.jsonl"),
        "--out",
        &p("run"),
    ])?;
    for entry in walk(dir.path(), &dir.path().join("run")) {
        println!("  {}", entry);
    }
    Ok(())
}

fn walk(base: &std::path::Path, root: &std::path::Path) -> Vec<String> {
    let mut out = Vec::new();
    for e in std::fs::read_dir(root).expect("list").flatten() {
        let path = e.path();
        if path.is_dir() {
            out.extend(walk(base, &path));
        } else {
            out.push(path.strip_prefix(base).expect("inside base").display().to_string());
        }
    }
    out.sort();
    out
}
