//! The thirteen zero-cost proxies.
//!
//! Every proxy scores an untrained [`Network`] from at most one minibatch and
//! returns a [`ProxyResult`] carrying the wall-clock time of its own
//! evaluation. A proxy that is undefined for the task, or whose score is not
//! finite, is reported with `valid = false` and the sentinel score `0.0`.
//!
//! Where the original implementations leave freedom, the choices here are:
//!
//! - `grad_norm` is the global L2 norm of the loss gradient.
//! - `fisher` monitors the output of every conv and dense node and sums
//!   `0.5 · mean_batch (Σ_spatial a·∂L/∂a)²` over channels.
//! - `grasp` uses one exact Hessian-vector product `H·g`.
//! - `synflow` runs in 64-bit with `|θ|`, batch norm bypassed and an all-ones
//!   input of batch size one.
//! - `jacov` uses `-Σ (ln(λ + k) + 1/(λ + k))`, `k = 1e-5`, over the eigenvalues of
//!   the correlation matrix of per-sample input gradients.
//! - `nwot` uses the agreement kernel of binary ReLU codes (both-active plus
//!   both-inactive) and reports `ln |det K|`.
//! - `epe_nas` groups the same input gradients by label and sums
//!   `|Σ ln(|corr| + k)|` over classes with at least two samples.
//! - `zen` keeps the network's own initialization, perturbs Gaussian inputs
//!   by `ε = 0.01`, and adds `Σ_bn ln sqrt(mean batch variance)` over batch
//!   norms whose input is not identically zero.

use std::time::Instant;

use nalgebra::{DMatrix, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use zcgauge_tensor::{hvp, Executor, GradientTape, Graph, NodeId, Op, Targets, Tensor};

use crate::archspace::{graph_macs, Network, NetworkSpec};

pub const JACOV_K: f64 = 1e-5;
pub const ZEN_EPSILON: f64 = 0.01;
pub const INVALID_SENTINEL: f64 = 0.0;
pub const DEFAULT_BATCH_SIZE: usize = 32;
/// Floor applied to measured durations.
pub const CLOCK_RESOLUTION: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum ProxyError {
    #[error(transparent)]
    Engine(#[from] zcgauge_tensor::Error),
    #[error("invalid minibatch: {0}")]
    Batch(String),
    #[error("{0}")]
    Undefined(String),
}

type Result<T> = std::result::Result<T, ProxyError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    #[default]
    Classification,
    Regression,
}

/// Proxy catalog, in canonical order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Proxy {
    EpeNas,
    Fisher,
    Flops,
    GradNorm,
    Grasp,
    L2Norm,
    Jacov,
    Nwot,
    Params,
    Plain,
    Snip,
    Synflow,
    Zen,
}

impl Proxy {
    pub const ALL: [Proxy; 13] = [
        Proxy::EpeNas,
        Proxy::Fisher,
        Proxy::Flops,
        Proxy::GradNorm,
        Proxy::Grasp,
        Proxy::L2Norm,
        Proxy::Jacov,
        Proxy::Nwot,
        Proxy::Params,
        Proxy::Plain,
        Proxy::Snip,
        Proxy::Synflow,
        Proxy::Zen,
    ];

    pub fn id(self) -> &'static str {
        match self {
            Proxy::EpeNas => "epe_nas",
            Proxy::Fisher => "fisher",
            Proxy::Flops => "flops",
            Proxy::GradNorm => "grad_norm",
            Proxy::Grasp => "grasp",
            Proxy::L2Norm => "l2_norm",
            Proxy::Jacov => "jacov",
            Proxy::Nwot => "nwot",
            Proxy::Params => "params",
            Proxy::Plain => "plain",
            Proxy::Snip => "snip",
            Proxy::Synflow => "synflow",
            Proxy::Zen => "zen",
        }
    }

    /// Accepts canonical ids plus the spellings used by other tools.
    pub fn from_id(s: &str) -> Option<Proxy> {
        let norm = s.trim().to_ascii_lowercase().replace('-', "_");
        let alias = match norm.as_str() {
            "jacob_cov" | "jacobian_cov" => "jacov",
            "epe" | "epenas" => "epe_nas",
            "zen_score" | "zennas" => "zen",
            "gradnorm" => "grad_norm",
            "l2norm" => "l2_norm",
            "synflow_bn" => "synflow",
            other => other,
        };
        Proxy::ALL.into_iter().find(|p| p.id() == alias)
    }

    /// Whether the score reads the minibatch contents.
    pub fn data_dependent(self) -> bool {
        !matches!(self, Proxy::L2Norm | Proxy::Params | Proxy::Synflow | Proxy::Zen)
    }

    pub fn catalog_ids() -> Vec<String> {
        Proxy::ALL.iter().map(|p| p.id().to_string()).collect()
    }
}

/// One proxy evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProxyResult {
    #[serde(skip)]
    pub name: String,
    pub score: f64,
    pub seconds: f64,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

impl ProxyResult {
    pub fn valid(name: impl Into<String>, score: f64, seconds: f64) -> Self {
        Self {
            name: name.into(),
            score,
            seconds,
            valid: true,
            reason: None,
        }
    }

    pub fn invalid(name: impl Into<String>, seconds: f64, reason: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            score: INVALID_SENTINEL,
            seconds,
            valid: false,
            reason: Some(reason.into()),
        }
    }

    /// The score when valid.
    pub fn value(&self) -> Option<f64> {
        self.valid.then_some(self.score)
    }
}

/// Inputs `[B, C, H, W]` and class labels.
#[derive(Debug, Clone, PartialEq)]
pub struct Minibatch {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Minibatch {
    pub fn new(inputs: Tensor, labels: Vec<usize>, classes: usize) -> Result<Self> {
        let shape = inputs.shape();
        if shape.len() != 4 || shape[0] != labels.len() || labels.is_empty() {
            return Err(ProxyError::Batch(format!(
                "inputs {:?} with {} labels",
                shape,
                labels.len()
            )));
        }
        if let Some(l) = labels.iter().find(|&&l| l >= classes) {
            return Err(ProxyError::Batch(format!("label {l} outside [0, {classes})")));
        }
        Ok(Self {
            inputs,
            labels,
            classes,
        })
    }

    /// Seeded Gaussian images with uniform labels.
    pub fn synthetic(spec: &NetworkSpec, batch_size: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let shape = [batch_size, spec.input_channels, spec.resolution, spec.resolution];
        let n = shape.iter().product();
        let data = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let labels = (0..batch_size).map(|_| rng.random_range(0..spec.classes)).collect();
        Self {
            inputs: Tensor::new(shape.to_vec(), data).expect("consistent shape"),
            labels,
            classes: spec.classes,
        }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn targets(&self, task: TaskKind) -> Targets {
        match task {
            TaskKind::Classification => Targets::Classes(self.labels.clone()),
            TaskKind::Regression => {
                let denom = (self.classes.max(2) - 1) as f64;
                Targets::Values(self.labels.iter().map(|&l| l as f64 / denom).collect())
            }
        }
    }
}

fn timed(name: &str, f: impl FnOnce() -> Result<f64>) -> ProxyResult {
    let start = Instant::now();
    let out = f();
    let seconds = start.elapsed().as_secs_f64().max(CLOCK_RESOLUTION);
    match out {
        Ok(s) if s.is_finite() => ProxyResult::valid(name, s, seconds),
        Ok(s) => ProxyResult::invalid(name, seconds, format!("non-finite score {s}")),
        Err(e) => ProxyResult::invalid(name, seconds, e.to_string()),
    }
}

fn loss_graph(net: &Network, task: TaskKind) -> Graph {
    let mut b = net.graph.clone().extend();
    let loss = match task {
        TaskKind::Classification => b.cross_entropy(net.logits),
        TaskKind::Regression => b.mse(net.logits),
    };
    b.finish(loss).expect("loss head is well formed")
}

struct LossPass {
    graph: Graph,
    tape: GradientTape,
}

fn loss_pass(net: &Network, batch: &Minibatch, task: TaskKind, retain: bool) -> Result<(LossPass, Vec<Option<(Tensor, Tensor)>>)> {
    let graph = loss_graph(net, task);
    let targets = batch.targets(task);
    let mut ex = Executor::new(&graph);
    ex.forward(&batch.inputs, Some(&targets))?;
    let tape = ex.backward_with(Tensor::scalar(1.0), retain)?;
    let monitored = if retain {
        graph
            .ops()
            .iter()
            .enumerate()
            .map(|(i, op)| match op {
                Op::Conv2d { .. } | Op::Dense { .. } => {
                    let a = ex.value(NodeId(i)).cloned();
                    let g = tape.activation(NodeId(i)).cloned();
                    a.zip(g)
                }
                _ => None,
            })
            .collect()
    } else {
        Vec::new()
    };
    drop(ex);
    Ok((LossPass { graph, tape }, monitored))
}

fn weighted_sum(graph: &Graph, tape: &GradientTape, f: impl Fn(f64, f64) -> f64) -> f64 {
    graph
        .params()
        .iter()
        .zip(tape.params())
        .flat_map(|(p, g)| p.value.data().iter().zip(g.data()).map(|(&t, &d)| f(t, d)).collect::<Vec<_>>())
        .sum()
}

pub fn params(net: &Network) -> ProxyResult {
    timed(Proxy::Params.id(), || Ok(net.graph.num_params() as f64))
}

/// Multiply-accumulates per sample.
pub fn flops(net: &Network, batch: &Minibatch) -> ProxyResult {
    timed(Proxy::Flops.id(), || {
        let per_sample = &batch.inputs.shape()[1..];
        if per_sample != net.input_shape.as_slice() {
            return Err(ProxyError::Batch(format!(
                "sample shape {per_sample:?} does not match network input {:?}",
                net.input_shape
            )));
        }
        Ok(graph_macs(&net.graph, per_sample))
    })
}

pub fn l2_norm(net: &Network) -> ProxyResult {
    timed(Proxy::L2Norm.id(), || {
        Ok(net
            .graph
            .params()
            .iter()
            .flat_map(|p| p.value.data())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt())
    })
}

/// `Σ θ · ∂L/∂θ`
pub fn plain(net: &Network, batch: &Minibatch, task: TaskKind) -> ProxyResult {
    timed(Proxy::Plain.id(), || {
        let (pass, _) = loss_pass(net, batch, task, false)?;
        Ok(weighted_sum(&pass.graph, &pass.tape, |t, g| t * g))
    })
}

/// `‖∇θ L‖₂`
pub fn grad_norm(net: &Network, batch: &Minibatch, task: TaskKind) -> ProxyResult {
    timed(Proxy::GradNorm.id(), || {
        let (pass, _) = loss_pass(net, batch, task, false)?;
        Ok(weighted_sum(&pass.graph, &pass.tape, |_, g| g * g).sqrt())
    })
}

/// `Σ |θ ⊙ ∂L/∂θ|`
pub fn snip(net: &Network, batch: &Minibatch, task: TaskKind) -> ProxyResult {
    timed(Proxy::Snip.id(), || {
        let (pass, _) = loss_pass(net, batch, task, false)?;
        Ok(weighted_sum(&pass.graph, &pass.tape, |t, g| (t * g).abs()))
    })
}

/// `Σ -θ ⊙ (H g)` with `g = ∇θ L`.
pub fn grasp(net: &Network, batch: &Minibatch, task: TaskKind) -> ProxyResult {
    timed(Proxy::Grasp.id(), || {
        let (pass, _) = loss_pass(net, batch, task, false)?;
        let targets = batch.targets(task);
        let hg = hvp(&pass.graph, &batch.inputs, Some(&targets), &pass.tape)?;
        Ok(weighted_sum(&pass.graph, &hg, |t, h| -t * h))
    })
}

pub fn fisher(net: &Network, batch: &Minibatch, task: TaskKind) -> ProxyResult {
    timed(Proxy::Fisher.id(), || {
        let (_, monitored) = loss_pass(net, batch, task, true)?;
        let mut total = 0.0;
        for (a, g) in monitored.into_iter().flatten() {
            let (n, c) = (a.shape()[0], a.shape()[1]);
            let spatial = a.numel() / (n * c);
            for b in 0..n {
                for ch in 0..c {
                    let lo = (b * c + ch) * spatial;
                    let s: f64 = a.data()[lo..lo + spatial]
                        .iter()
                        .zip(&g.data()[lo..lo + spatial])
                        .map(|(x, y)| x * y)
                        .sum();
                    total += 0.5 * s * s / n as f64;
                }
            }
        }
        Ok(total)
    })
}

/// Synaptic-flow score of a graph whose output is treated as the network
/// output: `Σ |θ| ⊙ ∂R/∂|θ|` with `R` the sum of outputs on an all-ones input.
pub fn synflow_score(graph: &Graph, input_shape: &[usize]) -> Result<f64> {
    let abs: Vec<Tensor> = graph.params().iter().map(|p| p.value.map(f64::abs)).collect();
    let mut ex = Executor::with_params(graph, abs.clone())?.bypass_batchnorm(true);
    let out_shape = ex.forward(&Tensor::full(input_shape, 1.0), None)?.shape().to_vec();
    let tape = ex.backward_with(Tensor::full(&out_shape, 1.0), false)?;
    Ok(abs
        .iter()
        .zip(tape.params())
        .flat_map(|(t, g)| t.data().iter().zip(g.data()).map(|(a, b)| a * b))
        .sum())
}

pub fn synflow(net: &Network, task: TaskKind) -> ProxyResult {
    timed(Proxy::Synflow.id(), || {
        if task != TaskKind::Classification {
            return Err(ProxyError::Undefined("synflow is only defined for classification".into()));
        }
        let mut shape = vec![1];
        shape.extend(&net.input_shape);
        synflow_score(&net.graph, &shape)
    })
}

/// Per-sample gradients of the summed network output w.r.t. the input,
/// one row per sample.
pub fn input_jacobian(net: &Network, batch: &Minibatch) -> Result<Vec<Vec<f64>>> {
    let mut ex = Executor::new(&net.graph);
    let out_shape = ex.forward(&batch.inputs, None)?.shape().to_vec();
    let tape = ex.backward_with(Tensor::full(&out_shape, 1.0), true)?;
    let n = batch.size();
    let d = batch.inputs.numel() / n;
    Ok(match tape.activation(net.input) {
        Some(dx) => dx.data().chunks(d).map(|c| c.to_vec()).collect(),
        None => vec![vec![0.0; d]; n],
    })
}

/// Row-wise Pearson correlation matrix. Constant rows yield NaN entries.
pub fn correlation_matrix(rows: &[Vec<f64>]) -> DMatrix<f64> {
    let centered: Vec<Vec<f64>> = rows
        .iter()
        .map(|r| {
            let m = r.iter().sum::<f64>() / r.len() as f64;
            r.iter().map(|v| v - m).collect()
        })
        .collect();
    let norms: Vec<f64> = centered.iter().map(|r| r.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let n = rows.len();
    DMatrix::from_fn(n, n, |i, j| {
        let dot: f64 = centered[i].iter().zip(&centered[j]).map(|(a, b)| a * b).sum();
        dot / (norms[i] * norms[j])
    })
}

pub fn jacov_from_jacobian(rows: &[Vec<f64>]) -> f64 {
    let corr = correlation_matrix(rows);
    if corr.iter().any(|v| !v.is_finite()) {
        return f64::NAN;
    }
    let eig = SymmetricEigen::new(corr);
    -eig.eigenvalues
        .iter()
        .map(|&l| (l + JACOV_K).ln() + 1.0 / (l + JACOV_K))
        .sum::<f64>()
}

pub fn jacov(net: &Network, batch: &Minibatch) -> ProxyResult {
    timed(Proxy::Jacov.id(), || Ok(jacov_from_jacobian(&input_jacobian(net, batch)?)))
}

/// Binary activation codes (`1` where a ReLU output is positive), one row per
/// sample, concatenated over every ReLU node.
pub fn relu_codes(net: &Network, batch: &Minibatch) -> Result<Vec<Vec<bool>>> {
    let relus = net.graph.nodes_where(|op| matches!(op, Op::Relu(_)));
    let mut ex = Executor::new(&net.graph);
    ex.forward(&batch.inputs, None)?;
    let n = batch.size();
    let mut codes = vec![Vec::new(); n];
    for r in relus {
        let Some(v) = ex.value(r) else { continue };
        let per = v.numel() / n;
        for (b, chunk) in v.data().chunks(per).enumerate() {
            codes[b].extend(chunk.iter().map(|&x| x > 0.0));
        }
    }
    Ok(codes)
}

/// `K[i][j]` = number of units on which samples `i` and `j` agree.
pub fn agreement_kernel(codes: &[Vec<bool>]) -> DMatrix<f64> {
    let n = codes.len();
    DMatrix::from_fn(n, n, |i, j| {
        codes[i].iter().zip(&codes[j]).filter(|(a, b)| a == b).count() as f64
    })
}

/// `ln |det K|` via LU; `-∞` when singular.
pub fn log_abs_det(m: DMatrix<f64>) -> f64 {
    let lu = m.lu();
    lu.u().diagonal().iter().map(|d| d.abs().ln()).sum()
}

pub fn nwot(net: &Network, batch: &Minibatch) -> ProxyResult {
    timed(Proxy::Nwot.id(), || {
        let codes = relu_codes(net, batch)?;
        if codes.iter().all(|c| c.is_empty()) {
            return Err(ProxyError::Undefined("network has no ReLU units".into()));
        }
        Ok(log_abs_det(agreement_kernel(&codes)))
    })
}

pub fn epe_from_jacobian(rows: &[Vec<f64>], labels: &[usize]) -> f64 {
    let mut classes: Vec<usize> = labels.to_vec();
    classes.sort_unstable();
    classes.dedup();
    let mut score = 0.0;
    for c in classes {
        let members: Vec<Vec<f64>> = rows
            .iter()
            .zip(labels)
            .filter(|(_, &l)| l == c)
            .map(|(r, _)| r.clone())
            .collect();
        if members.len() < 2 {
            continue;
        }
        let corr = correlation_matrix(&members);
        let s: f64 = corr.iter().map(|v| (v.abs() + JACOV_K).ln()).sum();
        score += s.abs();
    }
    score
}

pub fn epe_nas(net: &Network, batch: &Minibatch, task: TaskKind) -> ProxyResult {
    timed(Proxy::EpeNas.id(), || {
        if task != TaskKind::Classification {
            return Err(ProxyError::Undefined("epe_nas is only defined for classification".into()));
        }
        Ok(epe_from_jacobian(&input_jacobian(net, batch)?, &batch.labels))
    })
}

/// Data-independent: draws its own Gaussian inputs of `batch_shape` from `seed`.
pub fn zen(net: &Network, batch_shape: &[usize], seed: u64) -> ProxyResult {
    timed(Proxy::Zen.id(), || {
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7a65_6e00);
        let n: usize = batch_shape.iter().product();
        let x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let mixed: Vec<f64> = x
            .iter()
            .map(|&v| v + ZEN_EPSILON * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let graph = net.graph.with_output(net.features)?;
        let mut ex = Executor::new(&graph);
        let fx = ex.forward(&Tensor::new(batch_shape.to_vec(), x)?, None)?.clone();
        let bn_term: f64 = graph
            .nodes_where(|op| matches!(op, Op::BatchNorm { .. }))
            .into_iter()
            .filter_map(|node| ex.batchnorm_variance(node))
            .map(|var| var.iter().sum::<f64>() / var.len() as f64)
            .filter(|&v| v > 0.0)
            .map(|v| v.sqrt().ln())
            .sum();
        let fm = ex.forward(&Tensor::new(batch_shape.to_vec(), mixed)?, None)?;
        let b = batch_shape[0];
        let diff: f64 = fx.data().iter().zip(fm.data()).map(|(a, c)| (a - c).abs()).sum::<f64>() / b as f64;
        Ok(diff.ln() + bn_term)
    })
}

pub fn evaluate(proxy: Proxy, net: &Network, batch: &Minibatch, task: TaskKind, seed: u64) -> ProxyResult {
    match proxy {
        Proxy::EpeNas => epe_nas(net, batch, task),
        Proxy::Fisher => fisher(net, batch, task),
        Proxy::Flops => flops(net, batch),
        Proxy::GradNorm => grad_norm(net, batch, task),
        Proxy::Grasp => grasp(net, batch, task),
        Proxy::L2Norm => l2_norm(net),
        Proxy::Jacov => jacov(net, batch),
        Proxy::Nwot => nwot(net, batch),
        Proxy::Params => params(net),
        Proxy::Plain => plain(net, batch, task),
        Proxy::Snip => snip(net, batch, task),
        Proxy::Synflow => synflow(net, task),
        Proxy::Zen => zen(net, batch.inputs.shape(), seed),
    }
}

/// All thirteen proxies in catalog order.
pub fn compute_all(net: &Network, batch: &Minibatch, task: TaskKind, seed: u64) -> Vec<ProxyResult> {
    Proxy::ALL
        .iter()
        .map(|&p| evaluate(p, net, batch, task, seed))
        .collect()
}
