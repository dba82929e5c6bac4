use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, Op, ParamId};
use crate::kernels::{self, BnCache};
use crate::scalar::{Dual, Scalar};
use crate::tensor::Tensor;

/// Supervision fed alongside the input for loss nodes.
#[derive(Debug, Clone, PartialEq)]
pub enum Targets {
    Classes(Vec<usize>),
    Values(Vec<f64>),
}

/// Gradients produced by one backward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientTape<S = f64> {
    params: Vec<Tensor<S>>,
    activations: Option<Vec<Option<Tensor<S>>>>,
}

impl<S: Scalar> GradientTape<S> {
    pub fn from_params(params: Vec<Tensor<S>>) -> Self {
        Self {
            params,
            activations: None,
        }
    }

    pub fn param(&self, id: ParamId) -> &Tensor<S> {
        &self.params[id.0]
    }

    pub fn params(&self) -> &[Tensor<S>] {
        &self.params
    }

    pub fn into_params(self) -> Vec<Tensor<S>> {
        self.params
    }

    /// Gradient w.r.t. a node's output. Only present when the backward pass
    /// was asked to retain activation gradients and the node is upstream of
    /// the differentiated output.
    pub fn activation(&self, node: NodeId) -> Option<&Tensor<S>> {
        self.activations.as_ref()?.get(node.0)?.as_ref()
    }
}

struct State<S> {
    values: Vec<Option<Tensor<S>>>,
    bn: Vec<Option<BnCache<S>>>,
    targets: Option<Targets>,
}

/// Runs a [`Graph`] forward and backward with a private copy of its
/// parameters. One executor per worker; the graph itself is only borrowed.
pub struct Executor<'g, S: Scalar = f64> {
    graph: &'g Graph,
    params: Vec<Tensor<S>>,
    bypass_batchnorm: bool,
    state: Option<State<S>>,
}

impl<'g> Executor<'g, f64> {
    pub fn new(graph: &'g Graph) -> Self {
        Self {
            graph,
            params: graph.params().iter().map(|p| p.value.clone()).collect(),
            bypass_batchnorm: false,
            state: None,
        }
    }
}

impl<'g, S: Scalar> Executor<'g, S> {
    /// Executor with substituted parameter values (e.g. `|θ|` or dual numbers).
    pub fn with_params(graph: &'g Graph, params: Vec<Tensor<S>>) -> Result<Self> {
        if params.len() != graph.params().len() {
            return Err(Error::ParamMismatch(format!(
                "expected {} tensors, got {}",
                graph.params().len(),
                params.len()
            )));
        }
        for (p, t) in graph.params().iter().zip(&params) {
            if p.value.shape() != t.shape() {
                return Err(Error::ParamMismatch(format!(
                    "{}: expected shape {:?}, got {:?}",
                    p.name,
                    p.value.shape(),
                    t.shape()
                )));
            }
        }
        Ok(Self {
            graph,
            params,
            bypass_batchnorm: false,
            state: None,
        })
    }

    /// Treat every batch-norm node as the identity.
    pub fn bypass_batchnorm(mut self, yes: bool) -> Self {
        self.bypass_batchnorm = yes;
        self
    }

    pub fn graph(&self) -> &Graph {
        self.graph
    }

    /// Cached output of `node` from the last forward pass.
    pub fn value(&self, node: NodeId) -> Option<&Tensor<S>> {
        self.state.as_ref()?.values.get(node.0)?.as_ref()
    }

    /// Per-channel batch variance seen by a batch-norm node in the last pass.
    pub fn batchnorm_variance(&self, node: NodeId) -> Option<&[f64]> {
        self.state
            .as_ref()?
            .bn
            .get(node.0)?
            .as_ref()
            .map(|c| c.var.as_slice())
    }

    fn needed(&self) -> Vec<bool> {
        let ops = self.graph.ops();
        let mut needed = vec![false; ops.len()];
        needed[self.graph.output().0] = true;
        for i in (0..ops.len()).rev() {
            if needed[i] {
                for n in ops[i].inputs() {
                    needed[n.0] = true;
                }
            }
        }
        needed
    }

    /// Evaluates every ancestor of the graph output and caches the
    /// activations for a later backward pass.
    pub fn forward(&mut self, input: &Tensor<S>, targets: Option<&Targets>) -> Result<&Tensor<S>> {
        self.state = None;
        let ops = self.graph.ops();
        let needed = self.needed();
        let mut values: Vec<Option<Tensor<S>>> = vec![None; ops.len()];
        let mut bn: Vec<Option<BnCache<S>>> = (0..ops.len()).map(|_| None).collect();
        for (i, op) in ops.iter().enumerate() {
            if !needed[i] {
                continue;
            }
            let get = |n: &NodeId| values[n.0].as_ref().expect("topological order");
            let mismatch = |detail: String| Error::ShapeMismatch {
                node: i,
                op: op.name(),
                detail,
            };
            let out = match op {
                Op::Input => {
                    if let Some(spec) = self.graph.input_spec() {
                        let ok = spec.len() == input.shape().len()
                            && spec
                                .iter()
                                .zip(input.shape())
                                .all(|(s, d)| s.is_none_or(|s| s == *d));
                        if !ok {
                            return Err(mismatch(format!(
                                "input shape {:?} does not match spec {:?}",
                                input.shape(),
                                spec
                            )));
                        }
                    }
                    input.clone()
                }
                Op::Param(p) => self.params[p.0].clone(),
                Op::Dense {
                    input: x,
                    weight,
                    bias,
                } => {
                    let x = get(x);
                    let w = &self.params[weight.0];
                    if w.shape().len() != 2 {
                        return Err(mismatch(format!("weight must be 2-d, got {:?}", w.shape())));
                    }
                    if x.shape().last() != Some(&w.shape()[1]) {
                        return Err(mismatch(format!(
                            "input {:?} incompatible with weight {:?}",
                            x.shape(),
                            w.shape()
                        )));
                    }
                    let b = bias.map(|b| &self.params[b.0]);
                    if let Some(b) = b {
                        if b.shape() != [w.shape()[0]] {
                            return Err(mismatch(format!("bias shape {:?}", b.shape())));
                        }
                    }
                    kernels::dense_fwd(x, w, b)
                }
                Op::Conv2d { input: x, weight } => {
                    let x = get(x);
                    let w = &self.params[weight.0];
                    let ws = w.shape();
                    if x.shape().len() != 4
                        || ws.len() != 4
                        || ws[1] != x.shape()[1]
                        || ws[2] != ws[3]
                        || !(ws[2] == 1 || ws[2] == 3)
                    {
                        return Err(mismatch(format!(
                            "input {:?} incompatible with weight {:?} (kernel 1 or 3 only)",
                            x.shape(),
                            ws
                        )));
                    }
                    kernels::conv_fwd(x, w)
                }
                Op::Relu(x) => kernels::relu_fwd(get(x)),
                Op::BatchNorm {
                    input: x,
                    gamma,
                    beta,
                } => {
                    let x = get(x);
                    let (g, b) = (&self.params[gamma.0], &self.params[beta.0]);
                    if x.shape().len() < 2 || g.shape() != [x.shape()[1]] || b.shape() != g.shape() {
                        return Err(mismatch(format!(
                            "input {:?} with scale {:?}",
                            x.shape(),
                            g.shape()
                        )));
                    }
                    if self.bypass_batchnorm {
                        x.clone()
                    } else {
                        let (y, cache) = kernels::bn_fwd(x, g, b);
                        bn[i] = Some(cache);
                        y
                    }
                }
                Op::AvgPool3x3(x) => {
                    let x = get(x);
                    if x.shape().len() != 4 {
                        return Err(mismatch(format!("expected 4-d input, got {:?}", x.shape())));
                    }
                    kernels::avgpool_fwd(x)
                }
                Op::Add(xs) => {
                    let mut acc = get(&xs[0]).clone();
                    for x in &xs[1..] {
                        let t = get(x);
                        if t.shape() != acc.shape() {
                            return Err(mismatch(format!("{:?} vs {:?}", acc.shape(), t.shape())));
                        }
                        acc.add_assign(t);
                    }
                    acc
                }
                Op::Mul(a, b) => {
                    let (a, b) = (get(a), get(b));
                    if a.shape() != b.shape() {
                        return Err(mismatch(format!("{:?} vs {:?}", a.shape(), b.shape())));
                    }
                    a.zip_map(b, |u, v| u * v)
                }
                Op::Scale(x, c) => {
                    let c = S::from_f64(*c);
                    get(x).map(|v| v * c)
                }
                Op::Sum(x) => Tensor::scalar(get(x).sum()),
                Op::Flatten(x) => {
                    let x = get(x);
                    if x.shape().is_empty() {
                        return Err(mismatch("cannot flatten a scalar".into()));
                    }
                    let n = x.shape()[0];
                    x.clone().reshape(vec![n, x.numel() / n.max(1)])?
                }
                Op::GlobalAvgPool(x) => {
                    let x = get(x);
                    if x.shape().len() < 3 {
                        return Err(mismatch(format!("expected [N, C, ...], got {:?}", x.shape())));
                    }
                    kernels::gap_fwd(x)
                }
                Op::Zero(x) => Tensor::zeros(get(x).shape()),
                Op::CrossEntropy(x) => {
                    let x = get(x);
                    let Some(Targets::Classes(labels)) = targets else {
                        return Err(Error::MissingTargets {
                            node: i,
                            op: op.name(),
                        });
                    };
                    if x.shape().len() != 2 || labels.len() != x.shape()[0] {
                        return Err(mismatch(format!(
                            "logits {:?} vs {} labels",
                            x.shape(),
                            labels.len()
                        )));
                    }
                    if let Some(bad) = labels.iter().find(|&&l| l >= x.shape()[1]) {
                        return Err(mismatch(format!("label {bad} out of range")));
                    }
                    Tensor::scalar(kernels::ce_fwd(x, labels))
                }
                Op::MeanSquaredError(x) => {
                    let x = get(x);
                    let Some(Targets::Values(t)) = targets else {
                        return Err(Error::MissingTargets {
                            node: i,
                            op: op.name(),
                        });
                    };
                    if x.shape().len() != 2 || t.len() != x.shape()[0] {
                        return Err(mismatch(format!(
                            "outputs {:?} vs {} targets",
                            x.shape(),
                            t.len()
                        )));
                    }
                    Tensor::scalar(kernels::mse_fwd(x, t))
                }
            };
            values[i] = Some(out);
        }
        self.state = Some(State {
            values,
            bn,
            targets: targets.cloned(),
        });
        Ok(self
            .value(self.graph.output())
            .expect("output was computed"))
    }

    /// Differentiates the (scalar) graph output.
    pub fn backward(&self) -> Result<GradientTape<S>> {
        let state = self.state.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let out = state.values[self.graph.output().0]
            .as_ref()
            .expect("output computed");
        if !out.is_scalar() {
            return Err(Error::NonScalarOutput(out.shape().to_vec()));
        }
        self.backward_with(Tensor::full(out.shape(), S::one()), false)
    }

    /// Vector-Jacobian product of the graph output with `seed`. With
    /// `retain_activations`, the tape also keeps the gradient of every
    /// upstream activation (including the input).
    pub fn backward_with(&self, seed: Tensor<S>, retain_activations: bool) -> Result<GradientTape<S>> {
        let state = self.state.as_ref().ok_or(Error::BackwardBeforeForward)?;
        let ops = self.graph.ops();
        let output = self.graph.output().0;
        let out_shape = state.values[output].as_ref().expect("output").shape();
        if seed.shape() != out_shape {
            return Err(Error::ShapeMismatch {
                node: output,
                op: ops[output].name(),
                detail: format!("seed {:?} vs output {:?}", seed.shape(), out_shape),
            });
        }
        let mut grads: Vec<Option<Tensor<S>>> = vec![None; ops.len()];
        let mut pgrads: Vec<Tensor<S>> = self
            .params
            .iter()
            .map(|p| Tensor::zeros(p.shape()))
            .collect();
        grads[output] = Some(seed);

        fn acc<S: Scalar>(slot: &mut Option<Tensor<S>>, g: Tensor<S>) {
            match slot {
                Some(t) => t.add_assign(&g),
                None => *slot = Some(g),
            }
        }

        for i in (0..=output).rev() {
            let Some(dy) = grads[i].clone() else { continue };
            let val = |n: &NodeId| state.values[n.0].as_ref().expect("cached activation");
            match &ops[i] {
                Op::Input => {}
                Op::Param(p) => pgrads[p.0].add_assign(&dy),
                Op::Dense {
                    input,
                    weight,
                    bias,
                } => {
                    let (dx, dw, db) = kernels::dense_bwd(val(input), &self.params[weight.0], &dy);
                    acc(&mut grads[input.0], dx);
                    pgrads[weight.0].add_assign(&dw);
                    if let Some(b) = bias {
                        pgrads[b.0].add_assign(&db);
                    }
                }
                Op::Conv2d { input, weight } => {
                    let (dx, dw) = kernels::conv_bwd(val(input), &self.params[weight.0], &dy);
                    acc(&mut grads[input.0], dx);
                    pgrads[weight.0].add_assign(&dw);
                }
                Op::Relu(x) => {
                    let dx = kernels::relu_bwd(val(x), &dy);
                    acc(&mut grads[x.0], dx);
                }
                Op::BatchNorm { input, gamma, beta } => {
                    if self.bypass_batchnorm {
                        acc(&mut grads[input.0], dy);
                    } else {
                        let cache = state.bn[i].as_ref().expect("bn cache");
                        let (dx, dg, db) = kernels::bn_bwd(cache, &self.params[gamma.0], &dy);
                        acc(&mut grads[input.0], dx);
                        pgrads[gamma.0].add_assign(&dg);
                        pgrads[beta.0].add_assign(&db);
                    }
                }
                Op::AvgPool3x3(x) => {
                    let dx = kernels::avgpool_bwd(&dy);
                    acc(&mut grads[x.0], dx);
                }
                Op::Add(xs) => {
                    for x in xs {
                        acc(&mut grads[x.0], dy.clone());
                    }
                }
                Op::Mul(a, b) => {
                    let da = dy.zip_map(val(b), |g, v| g * v);
                    let db = dy.zip_map(val(a), |g, v| g * v);
                    acc(&mut grads[a.0], da);
                    acc(&mut grads[b.0], db);
                }
                Op::Scale(x, c) => {
                    let c = S::from_f64(*c);
                    acc(&mut grads[x.0], dy.map(|g| g * c));
                }
                Op::Sum(x) => {
                    let g = dy.data()[0];
                    acc(&mut grads[x.0], Tensor::full(val(x).shape(), g));
                }
                Op::Flatten(x) => {
                    let shape = val(x).shape().to_vec();
                    acc(&mut grads[x.0], dy.reshape(shape)?);
                }
                Op::GlobalAvgPool(x) => {
                    let dx = kernels::gap_bwd(val(x).shape(), &dy);
                    acc(&mut grads[x.0], dx);
                }
                Op::Zero(_) => {}
                Op::CrossEntropy(x) => {
                    let Some(Targets::Classes(labels)) = &state.targets else {
                        unreachable!("forward checked targets")
                    };
                    let dx = kernels::ce_bwd(val(x), labels, dy.data()[0]);
                    acc(&mut grads[x.0], dx);
                }
                Op::MeanSquaredError(x) => {
                    let Some(Targets::Values(t)) = &state.targets else {
                        unreachable!("forward checked targets")
                    };
                    let dx = kernels::mse_bwd(val(x), t, dy.data()[0]);
                    acc(&mut grads[x.0], dx);
                }
            }
        }
        Ok(GradientTape {
            params: pgrads,
            activations: retain_activations.then_some(grads),
        })
    }
}

/// Hessian-vector product `H·v` of the graph's scalar output w.r.t. its
/// parameters, evaluated at the graph's current parameter values.
///
/// Computed forward-over-reverse: parameters become dual numbers with
/// tangent `v`, and the tangent part of the resulting gradient is `H·v`.
/// ReLU follows the real part, so the subgradient at 0 is 0.
pub fn hvp(
    graph: &Graph,
    input: &Tensor<f64>,
    targets: Option<&Targets>,
    vector: &GradientTape<f64>,
) -> Result<GradientTape<f64>> {
    if vector.params().len() != graph.params().len() {
        return Err(Error::ParamMismatch(format!(
            "vector has {} tensors, graph has {} params",
            vector.params().len(),
            graph.params().len()
        )));
    }
    let mut duals = Vec::with_capacity(graph.params().len());
    for (p, v) in graph.params().iter().zip(vector.params()) {
        if p.value.shape() != v.shape() {
            return Err(Error::ParamMismatch(format!(
                "{}: vector shape {:?} vs param {:?}",
                p.name,
                v.shape(),
                p.value.shape()
            )));
        }
        let data = p
            .value
            .data()
            .iter()
            .zip(v.data())
            .map(|(&re, &du)| Dual::new(re, du))
            .collect();
        duals.push(Tensor::new(p.value.shape().to_vec(), data)?);
    }
    let mut exec = Executor::with_params(graph, duals)?;
    exec.forward(&input.map(Dual::from_f64), targets)?;
    let tape = exec.backward()?;
    Ok(GradientTape::from_params(
        tape.into_params()
            .into_iter()
            .map(|t| t.map(|d| d.du))
            .collect(),
    ))
}
