use std::collections::HashSet;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// One node of the computation graph. Inputs always refer to earlier nodes,
/// so the node list is its own topological order.
#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Input,
    /// Emits a parameter tensor as an activation.
    Param(ParamId),
    /// `y[.., o] = Σ_i x[.., i]·W[o, i] + b[o]` with `W: [out, in]`.
    Dense {
        input: NodeId,
        weight: ParamId,
        bias: Option<ParamId>,
    },
    /// Stride 1, same padding, square kernel of size 1 or 3, no bias.
    /// `W: [out, in, k, k]`, activations `[N, C, H, W]`.
    Conv2d { input: NodeId, weight: ParamId },
    Relu(NodeId),
    /// Train-mode batch normalization over every axis except axis 1.
    BatchNorm {
        input: NodeId,
        gamma: ParamId,
        beta: ParamId,
    },
    /// 3×3 average pooling, stride 1, padding 1, padded cells excluded from
    /// the divisor.
    AvgPool3x3(NodeId),
    Add(Vec<NodeId>),
    Mul(NodeId, NodeId),
    Scale(NodeId, f64),
    /// Reduces to a scalar.
    Sum(NodeId),
    Flatten(NodeId),
    GlobalAvgPool(NodeId),
    /// Zeros shaped like its input; blocks gradient flow.
    Zero(NodeId),
    /// Mean softmax cross-entropy of `[N, K]` logits against class targets.
    CrossEntropy(NodeId),
    /// Mean squared error of column 0 of `[N, K]` outputs against value targets.
    MeanSquaredError(NodeId),
}

impl Op {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Input => "input",
            Op::Param(_) => "param",
            Op::Dense { .. } => "dense",
            Op::Conv2d { .. } => "conv2d",
            Op::Relu(_) => "relu",
            Op::BatchNorm { .. } => "batchnorm",
            Op::AvgPool3x3(_) => "avgpool3x3",
            Op::Add(_) => "add",
            Op::Mul(..) => "mul",
            Op::Scale(..) => "scale",
            Op::Sum(_) => "sum",
            Op::Flatten(_) => "flatten",
            Op::GlobalAvgPool(_) => "global_avg_pool",
            Op::Zero(_) => "zero",
            Op::CrossEntropy(_) => "cross_entropy",
            Op::MeanSquaredError(_) => "mse",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match self {
            Op::Input | Op::Param(_) => Vec::new(),
            Op::Dense { input, .. } | Op::Conv2d { input, .. } | Op::BatchNorm { input, .. } => {
                vec![*input]
            }
            Op::Relu(x)
            | Op::AvgPool3x3(x)
            | Op::Scale(x, _)
            | Op::Sum(x)
            | Op::Flatten(x)
            | Op::GlobalAvgPool(x)
            | Op::Zero(x)
            | Op::CrossEntropy(x)
            | Op::MeanSquaredError(x) => vec![*x],
            Op::Add(xs) => xs.clone(),
            Op::Mul(a, b) => vec![*a, *b],
        }
    }

    pub fn params(&self) -> Vec<ParamId> {
        match self {
            Op::Param(p) => vec![*p],
            Op::Dense { weight, bias, .. } => {
                let mut v = vec![*weight];
                v.extend(bias);
                v
            }
            Op::Conv2d { weight, .. } => vec![*weight],
            Op::BatchNorm { gamma, beta, .. } => vec![*gamma, *beta],
            _ => Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor<f64>,
}

/// Immutable computation graph. Parameters can be replaced through
/// [`Graph::set_param`], which keeps shapes fixed.
#[derive(Debug, Clone, PartialEq)]
pub struct Graph {
    ops: Vec<Op>,
    params: Vec<Param>,
    output: NodeId,
    input_spec: Option<Vec<Option<usize>>>,
}

impl Graph {
    pub fn ops(&self) -> &[Op] {
        &self.ops
    }

    pub fn op(&self, id: NodeId) -> &Op {
        &self.ops[id.0]
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn param(&self, id: ParamId) -> &Param {
        &self.params[id.0]
    }

    pub fn param_id(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn output(&self) -> NodeId {
        self.output
    }

    pub fn input_spec(&self) -> Option<&[Option<usize>]> {
        self.input_spec.as_deref()
    }

    /// Total number of scalar parameters.
    pub fn num_params(&self) -> usize {
        self.params.iter().map(|p| p.value.numel()).sum()
    }

    /// Same graph with a different output node.
    pub fn with_output(&self, output: NodeId) -> Result<Graph> {
        if output.0 >= self.ops.len() {
            return Err(Error::InvalidGraph(format!("unknown node {}", output.0)));
        }
        let mut g = self.clone();
        g.output = output;
        Ok(g)
    }

    pub fn set_param(&mut self, id: ParamId, value: Tensor<f64>) -> Result<()> {
        let p = self
            .params
            .get_mut(id.0)
            .ok_or_else(|| Error::ParamMismatch(format!("unknown param {}", id.0)))?;
        if p.value.shape() != value.shape() {
            return Err(Error::ParamMismatch(format!(
                "{}: expected shape {:?}, got {:?}",
                p.name,
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    /// Nodes of the given kind, in topological order.
    pub fn nodes_where(&self, pred: impl Fn(&Op) -> bool) -> Vec<NodeId> {
        self.ops
            .iter()
            .enumerate()
            .filter(|(_, op)| pred(op))
            .map(|(i, _)| NodeId(i))
            .collect()
    }

    /// Reopens the graph for appending nodes (e.g. a loss head).
    pub fn extend(self) -> GraphBuilder {
        GraphBuilder {
            ops: self.ops,
            params: self.params,
            input_spec: self.input_spec,
        }
    }
}

#[derive(Debug, Default)]
pub struct GraphBuilder {
    ops: Vec<Op>,
    params: Vec<Param>,
    input_spec: Option<Vec<Option<usize>>>,
}

impl GraphBuilder {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, op: Op) -> NodeId {
        self.ops.push(op);
        NodeId(self.ops.len() - 1)
    }

    /// Declares the graph input. `None` dims (typically the batch) accept
    /// any size.
    pub fn input(&mut self, spec: &[Option<usize>]) -> NodeId {
        self.input_spec = Some(spec.to_vec());
        self.push(Op::Input)
    }

    pub fn param(&mut self, name: impl Into<String>, value: Tensor<f64>) -> ParamId {
        self.params.push(Param {
            name: name.into(),
            value,
        });
        ParamId(self.params.len() - 1)
    }

    pub fn param_node(&mut self, p: ParamId) -> NodeId {
        self.push(Op::Param(p))
    }

    pub fn dense(&mut self, input: NodeId, weight: ParamId, bias: Option<ParamId>) -> NodeId {
        self.push(Op::Dense {
            input,
            weight,
            bias,
        })
    }

    pub fn conv2d(&mut self, input: NodeId, weight: ParamId) -> NodeId {
        self.push(Op::Conv2d { input, weight })
    }

    pub fn relu(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Relu(x))
    }

    pub fn batchnorm(&mut self, input: NodeId, gamma: ParamId, beta: ParamId) -> NodeId {
        self.push(Op::BatchNorm { input, gamma, beta })
    }

    pub fn avgpool3x3(&mut self, x: NodeId) -> NodeId {
        self.push(Op::AvgPool3x3(x))
    }

    pub fn add(&mut self, xs: Vec<NodeId>) -> NodeId {
        self.push(Op::Add(xs))
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> NodeId {
        self.push(Op::Mul(a, b))
    }

    pub fn scale(&mut self, x: NodeId, c: f64) -> NodeId {
        self.push(Op::Scale(x, c))
    }

    pub fn sum(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Sum(x))
    }

    pub fn flatten(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Flatten(x))
    }

    pub fn global_avg_pool(&mut self, x: NodeId) -> NodeId {
        self.push(Op::GlobalAvgPool(x))
    }

    pub fn zero(&mut self, x: NodeId) -> NodeId {
        self.push(Op::Zero(x))
    }

    pub fn cross_entropy(&mut self, logits: NodeId) -> NodeId {
        self.push(Op::CrossEntropy(logits))
    }

    pub fn mse(&mut self, outputs: NodeId) -> NodeId {
        self.push(Op::MeanSquaredError(outputs))
    }

    /// Validates references and the parameter invariants, then freezes the graph.
    pub fn finish(self, output: NodeId) -> Result<Graph> {
        if output.0 >= self.ops.len() {
            return Err(Error::InvalidGraph(format!(
                "output node {} does not exist",
                output.0
            )));
        }
        let mut used = HashSet::new();
        let mut inputs = 0;
        for (i, op) in self.ops.iter().enumerate() {
            if matches!(op, Op::Input) {
                inputs += 1;
            }
            if let Some(bad) = op.inputs().iter().find(|n| n.0 >= i) {
                return Err(Error::InvalidGraph(format!(
                    "node {i} ({}) references node {} out of topological order",
                    op.name(),
                    bad.0
                )));
            }
            if let Op::Add(xs) = op {
                if xs.is_empty() {
                    return Err(Error::InvalidGraph(format!("node {i}: empty add")));
                }
            }
            for p in op.params() {
                if p.0 >= self.params.len() {
                    return Err(Error::InvalidGraph(format!(
                        "node {i} ({}) references unknown param {}",
                        op.name(),
                        p.0
                    )));
                }
                used.insert(p);
            }
        }
        if inputs > 1 {
            return Err(Error::InvalidGraph("more than one input node".into()));
        }
        if let Some(unused) = (0..self.params.len()).find(|p| !used.contains(&ParamId(*p))) {
            return Err(Error::InvalidGraph(format!(
                "param {} is not referenced by any node",
                self.params[unused].name
            )));
        }
        Ok(Graph {
            ops: self.ops,
            params: self.params,
            output,
            input_spec: self.input_spec,
        })
    }
}
