// SPDX-License-Identifier: MIT OR Apache-2.0

//! Command-line experiment runner.
//!
//! Every command writes into `--out` with a fixed layout: `config.echo`
//! (the resolved settings as TOML), `checkpoints/`, `metrics/`,
//! `analysis/`, and `run.log`, the only file that carries timestamps.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::interp::{
    ablation_sweep, avg_attention, collect_hidden_states, probe_variable, probes_csv, project_hidden_states, svg,
    svm_response_decoder, FitOptions, Unit, Variable,
};
use crate::model::Checkpoint;
use crate::task::{generate_dataset, read_jsonl, Dataset};
use crate::tokenizer::Vocab;
use crate::training::{
    evaluate, generalization_sweep, pretrain_toy_corpus, train, Preset, PretrainConfig, RunDirs, TrainConfig, TrainMode,
};

#[derive(Debug, Parser)]
#[command(
    name = "cddm-lab",
    version,
    about = "Train and dissect transformers on a context-dependent decision task"
)]
pub struct Cli {
    /// Worker threads for batch and evaluation parallelism.
    #[arg(long, global = true, env = "CDDM_LAB_THREADS")]
    pub threads: Option<usize>,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a JSONL dataset of rendered trials.
    Gen(GenArgs),
    /// Pretrain on the toy corpus, or train/fine-tune on the task.
    Train(TrainArgs),
    /// Accuracy on a dataset and across coherence bounds.
    Eval(EvalArgs),
    /// Zero-ablate every attention head in turn.
    Ablate(AnalysisArgs),
    /// Logistic probes of behavioral variables from hidden states.
    Probe(ProbeArgs),
    /// Decode the response type from each head's outputs.
    Svm(SvmArgs),
    /// Two-component PCA of hidden-state trajectories.
    Project(ProjectArgs),
    /// Attention map of one head averaged over prompts.
    Attention(AttentionArgs),
}

#[derive(Debug, Args, Serialize)]
pub struct GenArgs {
    #[arg(long)]
    pub n: usize,
    #[arg(long)]
    pub bound: f64,
    #[arg(long)]
    pub seed: u64,
    /// Output JSONL file.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Scratch,
    Pretrain,
    Finetune,
}

#[derive(Debug, Args, Serialize)]
pub struct TrainArgs {
    /// TOML experiment file.
    #[arg(long, conflicts_with = "preset", required_unless_present = "preset")]
    pub config: Option<PathBuf>,
    /// table1-finetune, table1-scratch, desk-scratch, desk-pretrain or desk-finetune.
    #[arg(long)]
    pub preset: Option<String>,
    #[arg(long, value_enum)]
    pub mode: Option<Mode>,
    /// Base checkpoint for fine-tuning.
    #[arg(long)]
    pub base: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct EvalArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Dataset to score; omitted means only the bound sweep runs.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Coherence bounds for freshly generated test sets.
    #[arg(long, value_delimiter = ',')]
    pub bounds: Vec<f64>,
    /// Prompts per generated test set.
    #[arg(long, default_value_t = 2000)]
    pub n: usize,
    #[arg(long, default_value_t = 9001)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args, Serialize)]
pub struct AnalysisArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Also write an SVG next to the CSV.
    #[arg(long)]
    pub svg: bool,
}

#[derive(Debug, Args, Serialize)]
pub struct ProbeArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: AnalysisArgs,
    /// context, coh_m, coh_c, choice or all.
    #[arg(long, default_value = "all")]
    pub variable: String,
    /// "population" or a residual-stream index.
    #[arg(long, default_value = "population")]
    pub unit: String,
    /// Prompt position or "all".
    #[arg(long, default_value = "all")]
    pub token: String,
    /// Block index; defaults to the last.
    #[arg(long)]
    pub layer: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct SvmArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: AnalysisArgs,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args, Serialize)]
pub struct ProjectArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: AnalysisArgs,
    /// Block index; defaults to the last.
    #[arg(long)]
    pub layer: Option<usize>,
}

#[derive(Debug, Args, Serialize)]
pub struct AttentionArgs {
    #[command(flatten)]
    #[serde(flatten)]
    pub common: AnalysisArgs,
    #[arg(long)]
    pub layer: usize,
    #[arg(long)]
    pub head: usize,
}

/// Settings file for `train --config`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub train: Option<TrainConfig>,
    #[serde(default)]
    pub pretrain: Option<PretrainConfig>,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if cfg.train.is_some() == cfg.pretrain.is_some() {
            return Err(Error::Config("exactly one of [train] or [pretrain] is required".into()));
        }
        Ok(cfg)
    }
}

fn to_toml<T: Serialize>(value: &T) -> Result<String> {
    toml::to_string(value).map_err(|e| Error::Config(e.to_string()))
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

fn log_line(out: &Path, command: &str, status: &str) -> Result<()> {
    use std::io::Write as _;
    std::fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let path = out.join("run.log");
    let secs = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs());
    let mut f = std::fs::OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "unix_time={secs} command={command} {status}").map_err(|e| Error::io(&path, e))
}

fn echo<T: Serialize>(out: &Path, settings: &T) -> Result<()> {
    write(&out.join("config.echo"), to_toml(settings)?)
}

fn load_model(path: &Path, vocab: &Vocab) -> Result<Checkpoint<f32>> {
    let ckpt = Checkpoint::<f32>::load(path)?;
    if ckpt.config().vocab_size != vocab.len() {
        return Err(Error::dim(
            "checkpoint",
            format!(
                "vocabulary of {} tokens, tokenizer has {}",
                ckpt.config().vocab_size,
                vocab.len()
            ),
        ));
    }
    Ok(ckpt)
}

#[derive(Serialize)]
struct ResolvedTrain<'a> {
    mode: Mode,
    preset: Option<&'a str>,
    base: Option<&'a Path>,
    train: Option<&'a TrainConfig>,
    pretrain: Option<&'a PretrainConfig>,
}

fn cmd_gen(a: &GenArgs) -> Result<String> {
    let ds = generate_dataset(a.n, a.bound, a.seed)?;
    ds.write_jsonl(&a.out)?;
    Ok(format!("wrote {} records to {}", ds.len(), a.out.display()))
}

fn cmd_train(a: &TrainArgs, vocab: &Vocab) -> Result<String> {
    let (train_cfg, pretrain_cfg, preset) = match (&a.config, &a.preset) {
        (Some(path), None) => {
            let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
            let cfg = ExperimentConfig::from_toml(&text)?;
            (cfg.train, cfg.pretrain, None)
        }
        (None, Some(name)) => {
            let p: Preset = name.parse()?;
            (p.train_config(vocab.len()), p.pretrain_config(vocab.len()), Some(p))
        }
        _ => return Err(Error::Config("give exactly one of --config or --preset".into())),
    };
    let implied = if pretrain_cfg.is_some() {
        Mode::Pretrain
    } else if preset.is_some_and(Preset::needs_base) {
        Mode::Finetune
    } else {
        Mode::Scratch
    };
    let mode = a.mode.unwrap_or(implied);
    match (mode, &pretrain_cfg) {
        (Mode::Pretrain, None) => return Err(Error::Config("--mode pretrain needs a pretraining config".into())),
        (Mode::Scratch | Mode::Finetune, Some(_)) => {
            return Err(Error::Config(
                "a pretraining config only runs with --mode pretrain".into(),
            ))
        }
        _ => {}
    }
    if mode == Mode::Finetune && a.base.is_none() {
        return Err(Error::Config("--mode finetune requires --base <checkpoint>".into()));
    }
    if mode != Mode::Finetune && a.base.is_some() {
        return Err(Error::Config("--base is only used with --mode finetune".into()));
    }
    echo(
        &a.out,
        &ResolvedTrain {
            mode,
            preset: preset.map(Preset::name),
            base: a.base.as_deref(),
            train: train_cfg.as_ref(),
            pretrain: pretrain_cfg.as_ref(),
        },
    )?;
    let dirs = RunDirs::under(&a.out);
    if let Some(cfg) = pretrain_cfg {
        let (ckpt, m) = pretrain_toy_corpus(&cfg, vocab, Some(&dirs))?;
        ckpt.save(&dirs.checkpoints.join("final.ckpt"))?;
        let last = m.epochs.last().map_or(f64::NAN, |e| e.heldout_perplexity);
        return Ok(format!(
            "held-out perplexity {:.3} -> {last:.3}",
            m.initial_heldout_perplexity
        ));
    }
    let cfg = train_cfg.expect("checked above");
    let train_mode = match &a.base {
        Some(p) => TrainMode::FineTune(Checkpoint::<f32>::load_expecting(p, &cfg.model)?),
        None => TrainMode::FromScratch,
    };
    let out = train(&cfg, train_mode, vocab, Some(&dirs))?;
    out.last.save(&dirs.checkpoints.join("final.ckpt"))?;
    let mut msg = format!(
        "best accuracy {:.4} at epoch {} after {} samples",
        out.metrics.best_accuracy, out.metrics.best_epoch, out.metrics.samples_seen
    );
    if let Some(s) = out.metrics.samples_to_reach(0.9) {
        let _ = write!(msg, "; 90% first reached after {s} samples");
    }
    Ok(msg)
}

fn cmd_eval(a: &EvalArgs, vocab: &Vocab) -> Result<String> {
    if a.data.is_none() && a.bounds.is_empty() {
        return Err(Error::Config("give --data, --bounds, or both".into()));
    }
    echo(&a.out, a)?;
    let ckpt = load_model(&a.ckpt, vocab)?;
    let mut csv = String::from("dataset,bound,n,accuracy,invalid\n");
    let mut msg = String::new();
    if let Some(path) = &a.data {
        let ds = read_jsonl(path)?;
        let r = evaluate(&ckpt, &ds, vocab, None)?;
        let _ = writeln!(
            csv,
            "{},{},{},{:.4},{}",
            path.display(),
            ds.bound,
            r.n,
            r.accuracy,
            r.invalid
        );
        let _ = write!(msg, "accuracy {:.4} on {}", r.accuracy, path.display());
        write(
            &a.out.join("metrics/eval_summary.json"),
            serde_json::to_string_pretty(&r)?,
        )?;
    }
    if !a.bounds.is_empty() {
        let g = generalization_sweep(&ckpt, vocab, &a.bounds, a.n, a.seed)?;
        for b in &g.per_bound {
            let _ = writeln!(csv, "generated,{},{},{:.4},{}", b.bound, a.n, b.accuracy, b.invalid);
        }
        write(
            &a.out.join("metrics/generalization.json"),
            serde_json::to_string_pretty(&g)?,
        )?;
        if !msg.is_empty() {
            msg.push_str("; ");
        }
        let _ = write!(msg, "mean accuracy across bounds {:.4} (std {:.4})", g.mean, g.std);
    }
    write(&a.out.join("metrics/eval.csv"), csv)?;
    Ok(msg)
}

fn analysis_inputs(a: &AnalysisArgs, vocab: &Vocab) -> Result<(Checkpoint<f32>, Dataset)> {
    Ok((load_model(&a.ckpt, vocab)?, read_jsonl(&a.data)?))
}

fn cmd_ablate(a: &AnalysisArgs, vocab: &Vocab) -> Result<String> {
    echo(&a.out, a)?;
    let (ckpt, ds) = analysis_inputs(a, vocab)?;
    let grid = ablation_sweep(&ckpt, &ds, vocab)?;
    write(&a.out.join("analysis/ablation.csv"), grid.to_csv())?;
    if a.svg {
        let title = format!("accuracy with one head ablated (baseline {:.3})", grid.baseline);
        write(
            &a.out.join("analysis/ablation.svg"),
            svg::heatmap(&title, &grid.rows(), 0.0, 1.0),
        )?;
    }
    let (l, h, drop) = grid.largest_drop();
    Ok(format!(
        "baseline {:.4}; largest drop {:.4} at layer {l} head {h}",
        grid.baseline, drop
    ))
}

fn resolve_layer(layer: Option<usize>, ckpt: &Checkpoint<f32>) -> usize {
    layer.unwrap_or(ckpt.config().n_layers - 1)
}

fn cmd_probe(a: &ProbeArgs, vocab: &Vocab) -> Result<String> {
    let variables = if a.variable == "all" {
        Variable::ALL.to_vec()
    } else {
        vec![a.variable.parse()?]
    };
    let unit: Unit = a.unit.parse()?;
    let token = match a.token.as_str() {
        "all" => None,
        t => Some(
            t.parse::<usize>()
                .map_err(|_| Error::Config(format!("token must be 'all' or a position, got {t:?}")))?,
        ),
    };
    echo(&a.common.out, a)?;
    let (ckpt, ds) = analysis_inputs(&a.common, vocab)?;
    let layer = resolve_layer(a.layer, &ckpt);
    let acts = collect_hidden_states(&ckpt, &ds, vocab, layer)?;
    if let Some(t) = token.filter(|&t| t >= acts.len()) {
        return Err(Error::Index(format!("token {t} of a {}-token prompt", acts.len())));
    }
    let opts = FitOptions {
        seed: a.seed,
        ..FitOptions::default()
    };
    let key = ds.fingerprint() as u64;
    let mut results = Vec::new();
    for &v in &variables {
        for m in acts.iter().filter(|m| token.is_none_or(|t| m.token == t)) {
            results.push(probe_variable(m, v, unit, key, &opts)?);
        }
    }
    write(&a.common.out.join("analysis/probes.csv"), probes_csv(&results))?;
    if a.common.svg {
        let rows: Vec<Vec<f64>> = variables
            .iter()
            .map(|v| {
                results
                    .iter()
                    .filter(|r| r.variable == v.name())
                    .map(|r| r.scores.mean)
                    .collect()
            })
            .collect();
        let title = format!(
            "probe accuracy by token, layer {layer}, rows: {}",
            variables.iter().map(|v| v.name()).collect::<Vec<_>>().join(", ")
        );
        write(
            &a.common.out.join("analysis/probes.svg"),
            svg::heatmap(&title, &rows, 0.5, 1.0),
        )?;
    }
    Ok(format!("{} probe rows at layer {layer}", results.len()))
}

fn cmd_svm(a: &SvmArgs, vocab: &Vocab) -> Result<String> {
    echo(&a.common.out, a)?;
    let (ckpt, ds) = analysis_inputs(&a.common, vocab)?;
    let opts = FitOptions {
        seed: a.seed,
        ..FitOptions::default()
    };
    let grid = svm_response_decoder(&ckpt, &ds, vocab, &opts)?;
    write(&a.common.out.join("analysis/svm.csv"), grid.to_csv())?;
    if a.common.svg {
        let h = ckpt.config().n_heads;
        let rows: Vec<Vec<f64>> = grid
            .cells
            .chunks(h)
            .map(|c| c.iter().map(|x| x.scores.mean).collect())
            .collect();
        let chance = 1.0 / grid.classes.len() as f64;
        write(
            &a.common.out.join("analysis/svm.svg"),
            svg::heatmap("response-type decoding by head", &rows, chance, 1.0),
        )?;
    }
    let classes: Vec<&str> = grid.classes.iter().map(|r| r.as_str()).collect();
    Ok(format!("decoded classes {}", classes.join("/")))
}

fn cmd_project(a: &ProjectArgs, vocab: &Vocab) -> Result<String> {
    echo(&a.common.out, a)?;
    let (ckpt, ds) = analysis_inputs(&a.common, vocab)?;
    let layer = resolve_layer(a.layer, &ckpt);
    let acts = collect_hidden_states(&ckpt, &ds, vocab, layer)?;
    let p = project_hidden_states(&acts)?;
    write(&a.common.out.join("analysis/projection.csv"), p.to_csv())?;
    if a.common.svg {
        let pts: Vec<(f64, f64, f64)> = p.rows.iter().map(|r| (r.pc1, r.pc2, r.token_pos as f64)).collect();
        write(
            &a.common.out.join("analysis/projection.svg"),
            svg::scatter(&format!("layer {layer} hidden states, shaded by token position"), &pts),
        )?;
    }
    Ok(format!("{} projected points", p.rows.len()))
}

fn cmd_attention(a: &AttentionArgs, vocab: &Vocab) -> Result<String> {
    echo(&a.common.out, a)?;
    let (ckpt, ds) = analysis_inputs(&a.common, vocab)?;
    let prompts = ds
        .trials
        .iter()
        .map(|t| vocab.encode_prompt(&t.prompt))
        .collect::<Result<Vec<_>>>()?;
    let map = avg_attention(&ckpt, &prompts, a.layer, a.head)?;
    let (t, _) = map.dims2()?;
    let mut csv = String::from("destination,source,weight\n");
    for i in 0..t {
        for j in 0..t {
            let _ = writeln!(csv, "{i},{j},{:.6}", map.at2(i, j));
        }
    }
    let stem = format!("attention_l{}_h{}", a.layer, a.head);
    write(&a.common.out.join(format!("analysis/{stem}.csv")), csv)?;
    if a.common.svg {
        let rows: Vec<Vec<f64>> = (0..t).map(|i| map.row(i).to_vec()).collect();
        let title = format!("layer {} head {} mean attention (row: destination)", a.layer, a.head);
        write(
            &a.common.out.join(format!("analysis/{stem}.svg")),
            svg::heatmap(&title, &rows, 0.0, 1.0),
        )?;
    }
    Ok(format!("averaged {} prompts", prompts.len()))
}

fn out_dir(cmd: &Command) -> Option<&Path> {
    match cmd {
        Command::Gen(_) => None,
        Command::Train(a) => Some(&a.out),
        Command::Eval(a) => Some(&a.out),
        Command::Ablate(a) => Some(&a.out),
        Command::Probe(a) => Some(&a.common.out),
        Command::Svm(a) => Some(&a.common.out),
        Command::Project(a) => Some(&a.common.out),
        Command::Attention(a) => Some(&a.common.out),
    }
}

fn command_name(cmd: &Command) -> &'static str {
    match cmd {
        Command::Gen(_) => "gen",
        Command::Train(_) => "train",
        Command::Eval(_) => "eval",
        Command::Ablate(_) => "ablate",
        Command::Probe(_) => "probe",
        Command::Svm(_) => "svm",
        Command::Project(_) => "project",
        Command::Attention(_) => "attention",
    }
}

/// Runs one parsed command and returns its one-line summary.
pub fn run(cli: &Cli) -> Result<String> {
    if let Some(n) = cli.threads {
        if n == 0 {
            return Err(Error::Config("--threads must be positive".into()));
        }
        // Fails only if a pool already exists, in which case it is kept.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let vocab = Vocab::standard();
    let name = command_name(&cli.command);
    let result = match &cli.command {
        Command::Gen(a) => cmd_gen(a),
        Command::Train(a) => cmd_train(a, &vocab),
        Command::Eval(a) => cmd_eval(a, &vocab),
        Command::Ablate(a) => cmd_ablate(a, &vocab),
        Command::Probe(a) => cmd_probe(a, &vocab),
        Command::Svm(a) => cmd_svm(a, &vocab),
        Command::Project(a) => cmd_project(a, &vocab),
        Command::Attention(a) => cmd_attention(a, &vocab),
    };
    if let Some(out) = out_dir(&cli.command) {
        let status = match &result {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("error={e}"),
        };
        log_line(out, name, &status)?;
    }
    result
}

/// Parses the process arguments, runs, and returns the exit code.
pub fn main() -> i32 {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(msg) => {
            println!("{msg}");
            0
        }
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}
