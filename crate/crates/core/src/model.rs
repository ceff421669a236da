// SPDX-License-Identifier: MIT OR Apache-2.0

//! Decoder-only transformer with GPT-2 block ordering, activation capture and
//! per-head zero-ablation.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::task::PROMPT_LEN;
use crate::tensor::{Gradients, ParamId, ParamStore, Scalar, Tape, Tensor, Var};
use crate::tokenizer::Vocab;

pub const INIT_STD: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_model: usize,
    pub vocab_size: usize,
    pub max_positions: usize,
    pub seed: u64,
}

impl ModelConfig {
    /// Four layers of four heads over a 128-wide residual stream.
    pub fn desk(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 4,
            n_heads: 4,
            d_model: 128,
            vocab_size,
            max_positions: 256,
            seed: 0,
        }
    }

    /// GPT-2 small geometry.
    pub fn gpt2_small(vocab_size: usize) -> Self {
        ModelConfig {
            n_layers: 12,
            n_heads: 12,
            d_model: 768,
            vocab_size,
            max_positions: 1024,
            seed: 0,
        }
    }

    pub fn d_head(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn d_ff(&self) -> usize {
        4 * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_layers == 0 || self.n_heads == 0 || self.d_model == 0 || self.vocab_size == 0 {
            return Err(Error::Config(format!("degenerate model config {self:?}")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::Config(format!(
                "d_model {} is not divisible by {} heads",
                self.d_model, self.n_heads
            )));
        }
        if self.max_positions < PROMPT_LEN + 2 {
            return Err(Error::Config(format!(
                "max_positions {} is shorter than a prompt plus answer",
                self.max_positions
            )));
        }
        Ok(())
    }
}

/// Set of `(layer, head)` pairs whose attention weights are zeroed.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct AblationSpec {
    heads: BTreeSet<(usize, usize)>,
}

impl AblationSpec {
    pub fn none() -> Self {
        Self::default()
    }

    pub fn single(layer: usize, head: usize) -> Self {
        Self::from_heads([(layer, head)])
    }

    pub fn from_heads(heads: impl IntoIterator<Item = (usize, usize)>) -> Self {
        AblationSpec {
            heads: heads.into_iter().collect(),
        }
    }

    pub fn all(config: &ModelConfig) -> Self {
        Self::from_heads((0..config.n_layers).flat_map(|l| (0..config.n_heads).map(move |h| (l, h))))
    }

    pub fn union(&self, other: &AblationSpec) -> Self {
        Self::from_heads(self.heads.union(&other.heads).copied())
    }

    pub fn is_empty(&self) -> bool {
        self.heads.is_empty()
    }

    pub fn contains(&self, layer: usize, head: usize) -> bool {
        self.heads.contains(&(layer, head))
    }

    pub fn heads(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.heads.iter().copied()
    }

    pub fn validate(&self, config: &ModelConfig) -> Result<()> {
        match self
            .heads
            .iter()
            .find(|(l, h)| *l >= config.n_layers || *h >= config.n_heads)
        {
            Some((l, h)) => Err(Error::Index(format!(
                "head L{l}H{h} outside a {}×{} model",
                config.n_layers, config.n_heads
            ))),
            None => Ok(()),
        }
    }

    fn keep_mask(&self, layer: usize, n_heads: usize) -> Option<Vec<bool>> {
        let keep: Vec<bool> = (0..n_heads).map(|h| !self.contains(layer, h)).collect();
        keep.iter().any(|k| !k).then_some(keep)
    }
}

/// Greedy next-token outcome after a prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    Left,
    Right,
    Invalid,
}

impl Response {
    pub fn as_str(self) -> &'static str {
        match self {
            Response::Left => "left",
            Response::Right => "right",
            Response::Invalid => "invalid",
        }
    }

    pub fn class_index(self) -> usize {
        self as usize
    }
}

/// Vocabulary ids of the two valid answers.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AnswerTokens {
    pub left: usize,
    pub right: usize,
}

impl AnswerTokens {
    pub fn from_vocab(vocab: &Vocab) -> Self {
        AnswerTokens {
            left: vocab.id("left").expect("vocab has 'left'"),
            right: vocab.id("right").expect("vocab has 'right'"),
        }
    }

    pub fn classify(&self, token: usize) -> Response {
        if token == self.left {
            Response::Left
        } else if token == self.right {
            Response::Right
        } else {
            Response::Invalid
        }
    }
}

/// Activations recorded during one forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct CaptureRecord<F> {
    /// Residual stream after each block, `[T × d_model]`.
    pub hidden_states: Vec<Tensor<F>>,
    /// `[layer][head]` post-softmax weights, `[T × T]`, zero for ablated heads.
    pub attn_weights: Vec<Vec<Tensor<F>>>,
    /// `[layer][head]` weighted value mix before concatenation, `[T × d_head]`.
    pub attn_outputs: Vec<Vec<Tensor<F>>>,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions<'a> {
    pub capture: bool,
    pub ablation: Option<&'a AblationSpec>,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput<F> {
    /// `[T × V]`.
    pub logits: Tensor<F>,
    pub capture: Option<CaptureRecord<F>>,
}

/// Provenance stored next to the weights.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingMeta {
    pub epochs_seen: u32,
    pub samples_seen: u64,
    pub dataset_fingerprint: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct LayerIds {
    pub ln1_g: ParamId,
    pub ln1_b: ParamId,
    pub attn_w: ParamId,
    pub attn_b: ParamId,
    pub proj_w: ParamId,
    pub proj_b: ParamId,
    pub ln2_g: ParamId,
    pub ln2_b: ParamId,
    pub fc_w: ParamId,
    pub fc_b: ParamId,
    pub out_w: ParamId,
    pub out_b: ParamId,
}

#[derive(Debug, Clone, PartialEq)]
pub(crate) struct ModelIds {
    pub wte: ParamId,
    pub wpe: ParamId,
    pub layers: Vec<LayerIds>,
    pub lnf_g: ParamId,
    pub lnf_b: ParamId,
    pub lm_bias: ParamId,
}

/// Expected `(name, shape)` of every parameter, in storage order.
pub fn parameter_layout(c: &ModelConfig) -> Vec<(String, Vec<usize>)> {
    let (d, v, p, ff) = (c.d_model, c.vocab_size, c.max_positions, c.d_ff());
    let mut out = vec![("wte".to_string(), vec![v, d]), ("wpe".to_string(), vec![p, d])];
    for l in 0..c.n_layers {
        let n = |s: &str| format!("h.{l}.{s}");
        out.extend([
            (n("ln_1.g"), vec![d]),
            (n("ln_1.b"), vec![d]),
            (n("attn.c_attn.w"), vec![d, 3 * d]),
            (n("attn.c_attn.b"), vec![3 * d]),
            (n("attn.c_proj.w"), vec![d, d]),
            (n("attn.c_proj.b"), vec![d]),
            (n("ln_2.g"), vec![d]),
            (n("ln_2.b"), vec![d]),
            (n("mlp.c_fc.w"), vec![d, ff]),
            (n("mlp.c_fc.b"), vec![ff]),
            (n("mlp.c_proj.w"), vec![ff, d]),
            (n("mlp.c_proj.b"), vec![d]),
        ]);
    }
    out.extend([
        ("ln_f.g".to_string(), vec![d]),
        ("ln_f.b".to_string(), vec![d]),
        ("lm_bias".to_string(), vec![v]),
    ]);
    out
}

fn resolve_ids<F: Scalar>(c: &ModelConfig, params: &ParamStore<F>) -> Result<ModelIds> {
    let layout = parameter_layout(c);
    if params.len() != layout.len() {
        return Err(Error::dim(
            "checkpoint",
            format!("{} tensors for a config needing {}", params.len(), layout.len()),
        ));
    }
    for (name, shape) in &layout {
        let id = params
            .find(name)
            .ok_or_else(|| Error::Checkpoint(format!("missing tensor {name}")))?;
        if params.get(id).shape() != shape.as_slice() {
            return Err(Error::dim(
                "checkpoint",
                format!("{name} is {:?}, config needs {shape:?}", params.get(id).shape()),
            ));
        }
    }
    let id = |n: &str| params.find(n).expect("checked above");
    Ok(ModelIds {
        wte: id("wte"),
        wpe: id("wpe"),
        layers: (0..c.n_layers)
            .map(|l| {
                let n = |s: &str| id(&format!("h.{l}.{s}"));
                LayerIds {
                    ln1_g: n("ln_1.g"),
                    ln1_b: n("ln_1.b"),
                    attn_w: n("attn.c_attn.w"),
                    attn_b: n("attn.c_attn.b"),
                    proj_w: n("attn.c_proj.w"),
                    proj_b: n("attn.c_proj.b"),
                    ln2_g: n("ln_2.g"),
                    ln2_b: n("ln_2.b"),
                    fc_w: n("mlp.c_fc.w"),
                    fc_b: n("mlp.c_fc.b"),
                    out_w: n("mlp.c_proj.w"),
                    out_b: n("mlp.c_proj.b"),
                }
            })
            .collect(),
        lnf_g: id("ln_f.g"),
        lnf_b: id("ln_f.b"),
        lm_bias: id("lm_bias"),
    })
}

/// Tape handles produced while building one forward graph.
pub(crate) struct Graph {
    pub logits: Var,
    pub hidden: Vec<Var>,
    pub weights: Vec<Var>,
    pub head_out: Vec<Var>,
}

/// Model configuration, learned parameters and provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<F = f32> {
    config: ModelConfig,
    params: ParamStore<F>,
    ids: ModelIds,
    pub meta: TrainingMeta,
}

impl<F: Scalar> Checkpoint<F> {
    /// Weights ~ N(0, 0.02²), biases 0, layernorm gains 1.
    pub fn init(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        let mut params = ParamStore::new();
        for (name, shape) in parameter_layout(&config) {
            let numel: usize = shape.iter().product();
            let t = if name.ends_with(".g") {
                Tensor::ones(shape)
            } else if shape.len() == 2 {
                let data = (0..numel).map(|_| F::lit(normal.sample(&mut rng))).collect();
                Tensor::new(shape, data)?
            } else {
                Tensor::zeros(shape)
            };
            params.push(name, t);
        }
        Self::from_parts(config, params, TrainingMeta::default())
    }

    pub fn from_parts(config: ModelConfig, params: ParamStore<F>, meta: TrainingMeta) -> Result<Self> {
        config.validate()?;
        let ids = resolve_ids(&config, &params)?;
        Ok(Checkpoint {
            config,
            params,
            ids,
            meta,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<F> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<F> {
        &mut self.params
    }

    pub fn param(&self, name: &str) -> Option<&Tensor<F>> {
        self.params.find(name).map(|id| self.params.get(id))
    }

    pub fn param_mut(&mut self, name: &str) -> Option<&mut Tensor<F>> {
        self.params.find(name).map(|id| self.params.get_mut(id))
    }

    pub fn cast<G: Scalar>(&self) -> Checkpoint<G> {
        Checkpoint {
            config: self.config,
            params: self.params.cast(),
            ids: self.ids.clone(),
            meta: self.meta,
        }
    }

    /// Zeroes the output-projection weights that read head `head` of
    /// `layer`, which removes the head's contribution without ablation.
    pub fn zero_head_projection(&mut self, layer: usize, head: usize) -> Result<()> {
        AblationSpec::single(layer, head).validate(&self.config)?;
        let (d, dh) = (self.config.d_model, self.config.d_head());
        let w = self.params.get_mut(self.ids.layers[layer].proj_w).data_mut();
        for r in head * dh..(head + 1) * dh {
            w[r * d..(r + 1) * d].fill(F::zero());
        }
        Ok(())
    }

    fn check_tokens(&self, tokens: &[usize]) -> Result<()> {
        if tokens.is_empty() {
            return Err(Error::Contract("empty token sequence".into()));
        }
        if tokens.len() > self.config.max_positions {
            return Err(Error::Contract(format!(
                "sequence of {} tokens exceeds {} positions",
                tokens.len(),
                self.config.max_positions
            )));
        }
        if let Some(&bad) = tokens.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        Ok(())
    }

    pub(crate) fn build<'p>(
        &'p self,
        tape: &mut Tape<'p, F>,
        tokens: &[usize],
        ablation: Option<&AblationSpec>,
    ) -> Result<Graph> {
        self.check_tokens(tokens)?;
        let c = &self.config;
        if let Some(a) = ablation {
            a.validate(c)?;
        }
        let (h, d, dh) = (c.n_heads, c.d_model, c.d_head());
        let t = tokens.len();
        let positions: Vec<usize> = (0..t).collect();
        let inv_sqrt = F::lit(1.0 / (dh as f64).sqrt());

        let wte = tape.param(self.ids.wte);
        let wpe = tape.param(self.ids.wpe);
        let tok = tape.gather(wte, tokens)?;
        let pos = tape.gather(wpe, &positions)?;
        let mut x = tape.add(tok, pos)?;

        let mut hidden = Vec::with_capacity(c.n_layers);
        let mut weights = Vec::with_capacity(c.n_layers);
        let mut head_out = Vec::with_capacity(c.n_layers);
        for (l, ids) in self.ids.layers.iter().enumerate() {
            let (g1, b1) = (tape.param(ids.ln1_g), tape.param(ids.ln1_b));
            let normed = tape.layernorm(x, g1, b1)?;
            let (wa, ba) = (tape.param(ids.attn_w), tape.param(ids.attn_b));
            let qkv = tape.matmul(normed, wa)?;
            let qkv = tape.add_bias(qkv, ba)?;
            let q = tape.split_heads(qkv, 0, h, dh)?;
            let k = tape.split_heads(qkv, d, h, dh)?;
            let v = tape.split_heads(qkv, 2 * d, h, dh)?;
            let scores = tape.bmm_nt(q, k)?;
            let scores = tape.scale(scores, inv_sqrt)?;
            let mut w = tape.causal_softmax(scores)?;
            if let Some(keep) = ablation.and_then(|a| a.keep_mask(l, h)) {
                w = tape.mask_heads(w, &keep)?;
            }
            let mixed = tape.bmm(w, v)?;
            weights.push(w);
            head_out.push(mixed);
            let merged = tape.merge_heads(mixed)?;
            let (wp, bp) = (tape.param(ids.proj_w), tape.param(ids.proj_b));
            let attn = tape.matmul(merged, wp)?;
            let attn = tape.add_bias(attn, bp)?;
            x = tape.add(x, attn)?;

            let (g2, b2) = (tape.param(ids.ln2_g), tape.param(ids.ln2_b));
            let normed = tape.layernorm(x, g2, b2)?;
            let (wf, bf) = (tape.param(ids.fc_w), tape.param(ids.fc_b));
            let up = tape.matmul(normed, wf)?;
            let up = tape.add_bias(up, bf)?;
            let act = tape.gelu(up)?;
            let (wo, bo) = (tape.param(ids.out_w), tape.param(ids.out_b));
            let down = tape.matmul(act, wo)?;
            let down = tape.add_bias(down, bo)?;
            x = tape.add(x, down)?;
            hidden.push(x);
        }
        let (gf, bf) = (tape.param(self.ids.lnf_g), tape.param(self.ids.lnf_b));
        let normed = tape.layernorm(x, gf, bf)?;
        let logits = tape.matmul_nt(normed, wte)?;
        let lm_bias = tape.param(self.ids.lm_bias);
        let logits = tape.add_bias(logits, lm_bias)?;
        Ok(Graph {
            logits,
            hidden,
            weights,
            head_out,
        })
    }

    pub fn forward(&self, tokens: &[usize], opts: &ForwardOptions<'_>) -> Result<ForwardOutput<F>> {
        let mut tape = Tape::new(&self.params);
        let g = self.build(&mut tape, tokens, opts.ablation)?;
        let capture = opts.capture.then(|| {
            let split = |v: Var| -> Vec<Tensor<F>> {
                let t = tape.value(v);
                let (heads, rows, cols) = t.dims3().expect("rank-3 head tensor");
                t.data()
                    .chunks_exact(rows * cols)
                    .take(heads)
                    .map(|c| Tensor::from_parts(vec![rows, cols], c.to_vec()))
                    .collect()
            };
            CaptureRecord {
                hidden_states: g.hidden.iter().map(|&v| tape.value(v).clone()).collect(),
                attn_weights: g.weights.iter().map(|&v| split(v)).collect(),
                attn_outputs: g.head_out.iter().map(|&v| split(v)).collect(),
            }
        });
        Ok(ForwardOutput {
            logits: tape.value(g.logits).clone(),
            capture,
        })
    }

    /// Mean next-token loss over non-ignored targets and its gradient.
    pub fn loss_and_grads(&self, tokens: &[usize], targets: &[Option<usize>]) -> Result<(f64, Gradients<F>)> {
        let mut tape = Tape::new(&self.params);
        let g = self.build(&mut tape, tokens, None)?;
        let loss = tape.cross_entropy(g.logits, targets)?;
        let value = tape.value(loss).data()[0].f64();
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("training loss {value}")));
        }
        Ok((value, tape.backward(loss)?))
    }

    pub fn loss(&self, tokens: &[usize], targets: &[Option<usize>]) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let g = self.build(&mut tape, tokens, None)?;
        let loss = tape.cross_entropy(g.logits, targets)?;
        Ok(tape.value(loss).data()[0].f64())
    }

    /// Greedy next token after `prompt`, classified as left/right/invalid.
    pub fn generate_choice(
        &self,
        prompt: &[usize],
        answers: &AnswerTokens,
        ablation: Option<&AblationSpec>,
    ) -> Result<Response> {
        let out = self.forward(
            prompt,
            &ForwardOptions {
                capture: false,
                ablation,
            },
        )?;
        Ok(answers.classify(argmax(out.logits.row(prompt.len() - 1))))
    }
}

/// Index of the first maximum.
pub fn argmax<F: Scalar>(xs: &[F]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate() {
        if x > xs[best] {
            best = i;
        }
    }
    best
}
