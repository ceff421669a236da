// SPDX-License-Identifier: MIT OR Apache-2.0

//! Oracles shared by the integration tests and the acceptance runner.

#![allow(dead_code)]

use cddm_lab::model::{Checkpoint, ModelConfig};
use cddm_lab::tensor::{ParamStore, Tape, Tensor, Var};
use cddm_lab::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const FD_STEP: f64 = 1e-5;
pub const FD_TOLERANCE: f64 = 1e-4;
/// Below this magnitude gradients are compared absolutely.
const REL_FLOOR: f64 = 1e-6;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let n = shape.iter().product();
    Tensor::new(
        shape.to_vec(),
        (0..n).map(|_| rng.random_range(-scale..scale)).collect(),
    )
    .unwrap()
}

/// Reduces any tensor to a scalar through a fixed random projection and a
/// cross-entropy, so every input element gets a distinct gradient.
pub fn scalarize(tape: &mut Tape<'_, f64>, y: Var, rng: &mut ChaCha8Rng) -> Result<Var> {
    let mut y = y;
    if tape.value(y).numel() == 1 {
        return Ok(y);
    }
    if tape.value(y).rank() == 3 {
        y = tape.merge_heads(y)?;
    }
    let (rows, cols) = tape.value(y).dims2()?;
    let classes = 3;
    let proj = tape.constant(random_tensor(rng, &[cols, classes], 1.0));
    let z = tape.matmul(y, proj)?;
    let targets: Vec<Option<usize>> = (0..rows).map(|_| Some(rng.random_range(0..classes))).collect();
    tape.cross_entropy(z, &targets)
}

/// Largest relative error between the tape gradient and a central
/// difference, over every element of every parameter (or at most
/// `max_per_tensor` random elements each).
pub fn gradient_error<G>(params: &ParamStore<f64>, max_per_tensor: usize, seed: u64, graph: G) -> Result<f64>
where
    G: Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>,
{
    let eval = |store: &ParamStore<f64>| -> Result<(f64, Option<cddm_lab::tensor::Gradients<f64>>)> {
        let mut tape = Tape::new(store).with_finite_checks(true);
        let vars: Vec<Var> = store.ids().map(|id| tape.param(id)).collect();
        let loss = graph(&mut tape, &vars)?;
        Ok((tape.value(loss).data()[0], Some(tape.backward(loss)?)))
    };
    let (_, grads) = eval(params)?;
    let grads = grads.unwrap();
    let mut pick = rng(seed ^ 0xfd);
    let mut worst: f64 = 0.0;
    let mut work = params.clone();
    for id in params.ids() {
        let n = params.get(id).numel();
        let idx: Vec<usize> = if n <= max_per_tensor {
            (0..n).collect()
        } else {
            (0..max_per_tensor).map(|_| pick.random_range(0..n)).collect()
        };
        let analytic = grads.get_or_zeros(id, params.get(id));
        for i in idx {
            let orig = params.get(id).data()[i];
            work.get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = eval(&work)?.0;
            work.get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = eval(&work)?.0;
            work.get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR);
            worst = worst.max(err);
        }
    }
    Ok(worst)
}

type OpGraph<'g> = &'g dyn Fn(&mut Tape<'_, f64>, &[Var]) -> Result<Var>;

/// One randomized instance per op; returns `(op name, max relative error)`.
pub fn op_gradient_errors(seed: u64) -> Result<Vec<(&'static str, f64)>> {
    let mut r = rng(seed);
    let m = r.random_range(2..5);
    let k = r.random_range(2..5);
    let n = r.random_range(2..5);
    let b = r.random_range(1..4);
    let t = r.random_range(2..5);
    let proj_seed = r.random::<u64>();
    let mut out = Vec::new();

    let mut case = |name: &'static str, shapes: &[&[usize]], graph: OpGraph<'_>| -> Result<()> {
        let mut store = ParamStore::new();
        for (i, s) in shapes.iter().enumerate() {
            store.push(format!("p{i}"), random_tensor(&mut r, s, 1.0));
        }
        let err = gradient_error(&store, usize::MAX, seed, |tape, v| {
            let y = graph(tape, v)?;
            scalarize(tape, y, &mut rng(proj_seed))
        })?;
        out.push((name, err));
        Ok(())
    };

    case("matmul", &[&[m, k], &[k, n]], &|tp, v| tp.matmul(v[0], v[1]))?;
    case("matmul_nt", &[&[m, k], &[n, k]], &|tp, v| tp.matmul_nt(v[0], v[1]))?;
    case("bmm", &[&[b, m, k], &[b, k, n]], &|tp, v| tp.bmm(v[0], v[1]))?;
    case("bmm_nt", &[&[b, m, k], &[b, n, k]], &|tp, v| tp.bmm_nt(v[0], v[1]))?;
    case("add", &[&[m, n], &[m, n]], &|tp, v| tp.add(v[0], v[1]))?;
    case("add_bias", &[&[m, n], &[n]], &|tp, v| tp.add_bias(v[0], v[1]))?;
    case("scale", &[&[m, n]], &|tp, v| tp.scale(v[0], -1.7))?;
    case("sum", &[&[m, n]], &|tp, v| {
        let g = tp.gelu(v[0])?;
        tp.sum(g)
    })?;
    case("gelu", &[&[m, n]], &|tp, v| tp.gelu(v[0]))?;
    case("layernorm", &[&[m, n + 1], &[n + 1], &[n + 1]], &|tp, v| {
        tp.layernorm(v[0], v[1], v[2])
    })?;
    case("causal_softmax", &[&[b, t, t]], &|tp, v| tp.causal_softmax(v[0]))?;
    case("mask_heads", &[&[b + 1, t, t]], &|tp, v| {
        let keep: Vec<bool> = (0..=b).map(|h| h % 2 == 0).collect();
        tp.mask_heads(v[0], &keep)
    })?;
    case("split_heads", &[&[t, 3 * k]], &|tp, v| {
        tp.split_heads(v[0], k, 2, k / 2 + 1)
    })?;
    case("merge_heads", &[&[b, t, k]], &|tp, v| tp.merge_heads(v[0]))?;
    case("gather", &[&[n + 2, k]], &|tp, v| tp.gather(v[0], &[0, n + 1, 1, 0]))?;
    case("cross_entropy", &[&[m, n]], &|tp, v| {
        let targets: Vec<Option<usize>> = (0..m).map(|i| (i != 1).then_some(i % n)).collect();
        tp.cross_entropy(v[0], &targets)
    })?;
    Ok(out)
}

pub fn tiny_config(vocab_size: usize, seed: u64) -> ModelConfig {
    ModelConfig {
        n_layers: 2,
        n_heads: 2,
        d_model: 8,
        vocab_size,
        max_positions: 48,
        seed,
    }
}

/// Two-layer transformer with every parameter jittered away from its
/// initialization so that layernorm gains and biases matter.
pub fn jittered_model(seed: u64) -> Checkpoint<f64> {
    let mut ckpt = Checkpoint::<f64>::init(tiny_config(11, seed)).unwrap();
    let mut r = rng(seed ^ 0x51);
    let ids: Vec<_> = ckpt.params().ids().collect();
    for id in ids {
        for x in ckpt.params_mut().get_mut(id).data_mut() {
            *x += r.random_range(-0.3..0.3);
        }
    }
    ckpt
}

/// Max relative error of the full model loss gradient on a random sequence.
pub fn model_gradient_error(seed: u64) -> Result<f64> {
    let ckpt = jittered_model(seed);
    let mut r = rng(seed ^ 0x77);
    let len = r.random_range(3..=12);
    let tokens: Vec<usize> = (0..len).map(|_| r.random_range(0..11)).collect();
    let targets: Vec<Option<usize>> = (0..len).map(|i| (i % 3 != 2).then(|| r.random_range(0..11))).collect();
    let (_, grads) = ckpt.loss_and_grads(&tokens, &targets)?;
    let mut worst: f64 = 0.0;
    let mut work = ckpt.clone();
    let ids: Vec<_> = ckpt.params().ids().collect();
    for id in ids {
        let n = ckpt.params().get(id).numel();
        let analytic = grads.get_or_zeros(id, ckpt.params().get(id));
        for _ in 0..4 {
            let i = r.random_range(0..n);
            let orig = ckpt.params().get(id).data()[i];
            work.params_mut().get_mut(id).data_mut()[i] = orig + FD_STEP;
            let up = work.loss(&tokens, &targets)?;
            work.params_mut().get_mut(id).data_mut()[i] = orig - FD_STEP;
            let down = work.loss(&tokens, &targets)?;
            work.params_mut().get_mut(id).data_mut()[i] = orig;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let a = analytic.data()[i];
            worst = worst.max((a - numeric).abs() / a.abs().max(numeric.abs()).max(REL_FLOOR));
        }
    }
    Ok(worst)
}

fn layernorm_rows(x: &[f64], d: usize, g: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(d) {
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + cddm_lab::tensor::LAYERNORM_EPS).sqrt();
        out.extend(row.iter().enumerate().map(|(j, v)| (v - mean) * rs * g[j] + b[j]));
    }
    out
}

/// `x[r×k] · w[k×n] + bias`, row-major.
fn affine(x: &[f64], k: usize, w: &[f64], n: usize, bias: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(x.len() / k * n);
    for row in x.chunks_exact(k) {
        for j in 0..n {
            out.push(bias[j] + (0..k).map(|i| row[i] * w[i * n + j]).sum::<f64>());
        }
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + ((2.0 / std::f64::consts::PI).sqrt() * (x + 0.044_715 * x.powi(3))).tanh())
}

/// Logits `[T × V]` of a model in which no attention head contributes, so
/// each block adds only its output-projection bias before the MLP.
pub fn attention_free_logits(ckpt: &Checkpoint<f64>, tokens: &[usize]) -> Vec<f64> {
    let c = ckpt.config();
    let (d, v, ff) = (c.d_model, c.vocab_size, c.d_ff());
    let p = |name: &str| ckpt.param(name).unwrap_or_else(|| panic!("missing {name}")).data();
    let (wte, wpe) = (p("wte"), p("wpe"));
    let mut x: Vec<f64> = tokens
        .iter()
        .enumerate()
        .flat_map(|(t, &tok)| (0..d).map(move |j| wte[tok * d + j] + wpe[t * d + j]))
        .collect();
    for l in 0..c.n_layers {
        let n = |s: &str| format!("h.{l}.{s}");
        let bias = p(&n("attn.c_proj.b"));
        for (i, xi) in x.iter_mut().enumerate() {
            *xi += bias[i % d];
        }
        let h = layernorm_rows(&x, d, p(&n("ln_2.g")), p(&n("ln_2.b")));
        let up: Vec<f64> = affine(&h, d, p(&n("mlp.c_fc.w")), ff, p(&n("mlp.c_fc.b")))
            .into_iter()
            .map(gelu)
            .collect();
        let down = affine(&up, ff, p(&n("mlp.c_proj.w")), d, p(&n("mlp.c_proj.b")));
        for (xi, di) in x.iter_mut().zip(down) {
            *xi += di;
        }
    }
    let h = layernorm_rows(&x, d, p("ln_f.g"), p("ln_f.b"));
    let lm_bias = p("lm_bias");
    let mut logits = Vec::with_capacity(tokens.len() * v);
    for row in h.chunks_exact(d) {
        for tok in 0..v {
            logits.push(lm_bias[tok] + (0..d).map(|j| row[j] * wte[tok * d + j]).sum::<f64>());
        }
    }
    logits
}

/// Largest logit change at positions `..=p` when every token after `p` is
/// replaced, over `trials` random sequences.
pub fn causal_violation(ckpt: &Checkpoint<f64>, trials: usize, seed: u64) -> Result<f64> {
    let c = ckpt.config();
    let mut r = rng(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..trials {
        let len = r.random_range(2..=c.max_positions);
        let a: Vec<usize> = (0..len).map(|_| r.random_range(0..c.vocab_size)).collect();
        let p = r.random_range(0..len - 1);
        let mut b = a.clone();
        for t in &mut b[p + 1..] {
            *t = r.random_range(0..c.vocab_size);
        }
        let la = ckpt.forward(&a, &Default::default())?.logits;
        let lb = ckpt.forward(&b, &Default::default())?.logits;
        for row in 0..=p {
            for (x, y) in la.row(row).iter().zip(lb.row(row)) {
                worst = worst.max((x - y).abs());
            }
        }
    }
    Ok(worst)
}

/// Largest `|Σ_j w_ij − 1|` over every attention row of every head.
pub fn attention_row_sum_error(ckpt: &Checkpoint<f64>, prompts: &[Vec<usize>]) -> Result<f64> {
    let opts = cddm_lab::model::ForwardOptions {
        capture: true,
        ablation: None,
    };
    let mut worst: f64 = 0.0;
    for tokens in prompts {
        let cap = ckpt.forward(tokens, &opts)?.capture.expect("capture requested");
        for w in cap.attn_weights.iter().flatten() {
            for i in 0..tokens.len() {
                worst = worst.max((w.row(i).iter().sum::<f64>() - 1.0).abs());
            }
        }
    }
    Ok(worst)
}

pub fn random_matrix(r: &mut ChaCha8Rng, n: usize, d: usize) -> nalgebra::DMatrix<f64> {
    nalgebra::DMatrix::from_fn(n, d, |_, _| r.random_range(-3.0..3.0))
}

/// Checks one PCA fit against the definition: descending variances that
/// are eigenvalues of the sample covariance, orthonormal components, and
/// exact reconstruction from all of them.
pub fn pca_violation(x: &nalgebra::DMatrix<f64>) -> std::result::Result<(), String> {
    use cddm_lab::interp::Pca;
    let pca = Pca::fit(x).map_err(|e| e.to_string())?;
    let (n, d) = x.shape();
    let mut cov = nalgebra::DMatrix::zeros(d, d);
    for i in 0..d {
        for j in 0..d {
            let (mi, mj) = (x.column(i).mean(), x.column(j).mean());
            cov[(i, j)] = (0..n).map(|r| (x[(r, i)] - mi) * (x[(r, j)] - mj)).sum::<f64>() / (n as f64 - 1.0);
        }
    }
    let scale = cov.norm().max(1.0);
    for k in 0..d {
        if k > 0 && pca.variances[k] > pca.variances[k - 1] {
            return Err(format!("variance {k} exceeds variance {}", k - 1));
        }
        let v = pca.components.column(k);
        let residual = (&cov * v - v * pca.variances[k]).norm();
        if residual > 1e-9 * scale {
            return Err(format!("component {k} is not an eigenvector (residual {residual:e})"));
        }
    }
    let gram = pca.components.tr_mul(&pca.components) - nalgebra::DMatrix::identity(d, d);
    if gram.amax() > 1e-10 {
        return Err(format!("components not orthonormal ({:e})", gram.amax()));
    }
    let back = pca.inverse_transform(&pca.transform(x, d));
    let err = (back - x).amax();
    if err > 1e-8 {
        return Err(format!("full-rank reconstruction error {err:e}"));
    }
    Ok(())
}

/// Rows `mean + a_i·u` lie on a line: one component along `±u` carrying
/// all the variance, the rest zero.
pub fn pca_rank_one_violation(r: &mut ChaCha8Rng, n: usize, d: usize) -> std::result::Result<(), String> {
    use cddm_lab::interp::Pca;
    let u = nalgebra::DVector::from_fn(d, |_, _| r.random_range(-1.0..1.0)).normalize();
    let offset = nalgebra::DVector::from_fn(d, |_, _| r.random_range(-5.0..5.0));
    let a: Vec<f64> = (0..n).map(|_| r.random_range(-2.0..2.0)).collect();
    let x = nalgebra::DMatrix::from_fn(n, d, |i, j| offset[j] + a[i] * u[j]);
    let pca = Pca::fit(&x).map_err(|e| e.to_string())?;
    let mean_a = a.iter().sum::<f64>() / n as f64;
    let var_a = a.iter().map(|v| (v - mean_a).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    if (pca.variances[0] - var_a).abs() > 1e-9 * var_a.max(1.0) {
        return Err(format!("leading variance {} != {var_a}", pca.variances[0]));
    }
    if let Some(k) = (1..d).find(|&k| pca.variances[k] > 1e-9 * var_a.max(1.0)) {
        return Err(format!("variance {k} is {} on rank-1 data", pca.variances[k]));
    }
    let align = pca.components.column(0).dot(&u).abs();
    if (align - 1.0).abs() > 1e-9 {
        return Err(format!("first component misaligned (|cos| {align})"));
    }
    Ok(())
}
