//! NAS-Bench-201-style cell search space.
//!
//! A cell is a complete DAG over four nodes. Each of its six edges carries one
//! of five operations, giving `5^6 = 15625` cells. Isomorphic cells are not
//! merged. A [`Network`] stacks cells between a convolutional stem and a
//! classifier head at desk scale (see [`NetworkSpec`]).

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use zcgauge_tensor::{init, Graph, GraphBuilder, NodeId, Op, ParamId, Tensor};

pub const NUM_EDGES: usize = 6;
pub const NUM_OPS: usize = 5;
pub const SPACE_SIZE: usize = 15_625;

/// `(from, to)` node pairs in canonical edge order.
pub const EDGES: [(usize, usize); NUM_EDGES] = [(0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3)];

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ArchError {
    #[error("cannot parse cell encoding {input:?}: {reason}")]
    Parse { input: String, reason: String },
    #[error("invalid network spec: {0}")]
    Spec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CellOp {
    Zero,
    Skip,
    Conv1x1,
    Conv3x3,
    AvgPool3x3,
}

impl CellOp {
    pub const ALL: [CellOp; NUM_OPS] = [
        CellOp::Zero,
        CellOp::Skip,
        CellOp::Conv1x1,
        CellOp::Conv3x3,
        CellOp::AvgPool3x3,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    /// Short id used in CLI flags and docs.
    pub fn id(self) -> &'static str {
        match self {
            CellOp::Zero => "zero",
            CellOp::Skip => "skip",
            CellOp::Conv1x1 => "conv1x1",
            CellOp::Conv3x3 => "conv3x3",
            CellOp::AvgPool3x3 => "avgpool3x3",
        }
    }

    /// Name used in the NAS-Bench-201 architecture string.
    pub fn nb201_name(self) -> &'static str {
        match self {
            CellOp::Zero => "none",
            CellOp::Skip => "skip_connect",
            CellOp::Conv1x1 => "nor_conv_1x1",
            CellOp::Conv3x3 => "nor_conv_3x3",
            CellOp::AvgPool3x3 => "avg_pool_3x3",
        }
    }

    pub fn is_conv(self) -> bool {
        matches!(self, CellOp::Conv1x1 | CellOp::Conv3x3)
    }

    fn parse(s: &str) -> Option<CellOp> {
        CellOp::ALL
            .into_iter()
            .find(|op| op.id() == s || op.nb201_name() == s)
    }
}

/// One operation per edge of the cell, in [`EDGES`] order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct CellEncoding([CellOp; NUM_EDGES]);

impl CellEncoding {
    pub fn new(ops: [CellOp; NUM_EDGES]) -> Self {
        Self(ops)
    }

    pub fn ops(&self) -> &[CellOp; NUM_EDGES] {
        &self.0
    }

    /// Position in the lexicographic enumeration (edge 0 most significant).
    pub fn index(&self) -> usize {
        self.0.iter().fold(0, |acc, op| acc * NUM_OPS + op.index())
    }

    pub fn from_index(mut index: usize) -> Option<Self> {
        if index >= SPACE_SIZE {
            return None;
        }
        let mut ops = [CellOp::Zero; NUM_EDGES];
        for slot in ops.iter_mut().rev() {
            *slot = CellOp::ALL[index % NUM_OPS];
            index /= NUM_OPS;
        }
        Some(Self(ops))
    }

    pub fn count(&self, op: CellOp) -> usize {
        self.0.iter().filter(|&&o| o == op).count()
    }

    /// Number of non-`zero` edges.
    pub fn cell_size(&self) -> usize {
        NUM_EDGES - self.count(CellOp::Zero)
    }

    pub fn with_op(&self, edge: usize, op: CellOp) -> Self {
        let mut ops = self.0;
        ops[edge] = op;
        Self(ops)
    }
}

impl fmt::Display for CellEncoding {
    /// `|op~0|+|op~0|op~1|+|op~0|op~1|op~2|`
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let mut edge = 0;
        for to in 1..4 {
            if to > 1 {
                f.write_str("+")?;
            }
            f.write_str("|")?;
            for from in 0..to {
                write!(f, "{}~{}|", self.0[edge].nb201_name(), from)?;
                edge += 1;
            }
        }
        Ok(())
    }
}

impl FromStr for CellEncoding {
    type Err = ArchError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let err = |reason: String| ArchError::Parse {
            input: s.to_string(),
            reason,
        };
        let groups: Vec<&str> = s.split('+').collect();
        if groups.len() != 3 {
            return Err(err(format!("expected 3 node groups, found {}", groups.len())));
        }
        let mut ops = [CellOp::Zero; NUM_EDGES];
        let mut edge = 0;
        for (g, group) in groups.iter().enumerate() {
            let inner = group
                .strip_prefix('|')
                .and_then(|x| x.strip_suffix('|'))
                .ok_or_else(|| err(format!("group {g} is not delimited by '|'")))?;
            let parts: Vec<&str> = inner.split('|').collect();
            if parts.len() != g + 1 {
                return Err(err(format!("group {g} has {} edges, expected {}", parts.len(), g + 1)));
            }
            for (from, part) in parts.iter().enumerate() {
                let (name, src) = part
                    .split_once('~')
                    .ok_or_else(|| err(format!("edge {part:?} lacks '~'")))?;
                if src.parse::<usize>().ok() != Some(from) {
                    return Err(err(format!("edge {part:?} should come from node {from}")));
                }
                ops[edge] = CellOp::parse(name).ok_or_else(|| err(format!("unknown op {name:?}")))?;
                edge += 1;
            }
        }
        Ok(Self(ops))
    }
}

impl Serialize for CellEncoding {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for CellEncoding {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// All cells in lexicographic order, optionally truncated.
pub fn enumerate_space(limit: Option<usize>) -> impl Iterator<Item = CellEncoding> {
    (0..SPACE_SIZE.min(limit.unwrap_or(SPACE_SIZE))).map(|i| CellEncoding::from_index(i).expect("in range"))
}

/// Replaces the op on one uniformly chosen edge with one of the other four ops.
pub fn mutate<R: Rng + ?Sized>(enc: &CellEncoding, rng: &mut R) -> CellEncoding {
    let edge = rng.random_range(0..NUM_EDGES);
    let current = enc.0[edge].index();
    let mut pick = rng.random_range(0..NUM_OPS - 1);
    if pick >= current {
        pick += 1;
    }
    enc.with_op(edge, CellOp::ALL[pick])
}

/// Macro skeleton around the cell. Cells are stacked at constant width and
/// resolution (no reduction blocks).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    pub input_channels: usize,
    pub stem_channels: usize,
    pub cells: usize,
    pub classes: usize,
    pub resolution: usize,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        Self {
            input_channels: 3,
            stem_channels: 8,
            cells: 1,
            classes: 10,
            resolution: 8,
        }
    }
}

impl NetworkSpec {
    pub fn validate(&self) -> Result<(), ArchError> {
        let fields = [
            ("input_channels", self.input_channels),
            ("stem_channels", self.stem_channels),
            ("cells", self.cells),
            ("classes", self.classes),
            ("resolution", self.resolution),
        ];
        match fields.iter().find(|(_, v)| *v == 0) {
            Some((name, _)) => Err(ArchError::Spec(format!("{name} must be positive"))),
            None => Ok(()),
        }
    }

    /// Parameters outside the cells: stem conv+BN, final BN, dense head.
    pub fn skeleton_params(&self) -> usize {
        let c = self.stem_channels;
        self.input_channels * c * 9 + 2 * c + 2 * c + c * self.classes + self.classes
    }

    /// Parameters one edge op adds to one cell.
    pub fn edge_params(&self, op: CellOp) -> usize {
        let c = self.stem_channels;
        match op {
            CellOp::Conv1x1 => c * c + 2 * c,
            CellOp::Conv3x3 => c * c * 9 + 2 * c,
            _ => 0,
        }
    }

    /// Closed-form parameter count of `build_network(enc, self, _)`.
    pub fn param_count(&self, enc: &CellEncoding) -> usize {
        let per_cell: usize = enc.ops().iter().map(|&op| self.edge_params(op)).sum();
        self.skeleton_params() + self.cells * per_cell
    }
}

/// A built network: the graph outputs logits; `features` is the activation
/// right before global average pooling.
#[derive(Debug, Clone)]
pub struct Network {
    pub graph: Graph,
    pub input: NodeId,
    pub features: NodeId,
    pub logits: NodeId,
    pub input_shape: Vec<usize>,
    pub classes: usize,
}

struct NetBuilder<'a> {
    b: GraphBuilder,
    rng: &'a mut ChaCha8Rng,
    channels: usize,
}

impl NetBuilder<'_> {
    fn bn(&mut self, x: NodeId, name: &str) -> NodeId {
        let c = self.channels;
        let g = self.b.param(format!("{name}.bn.gamma"), Tensor::full(&[c], 1.0));
        let bt = self.b.param(format!("{name}.bn.beta"), Tensor::zeros(&[c]));
        self.b.batchnorm(x, g, bt)
    }

    /// ReLU → conv(k) → BN
    fn relu_conv_bn(&mut self, x: NodeId, k: usize, name: &str) -> NodeId {
        let c = self.channels;
        let r = self.b.relu(x);
        let w = self.b.param(format!("{name}.conv"), init::conv_weight(c, c, k, self.rng));
        let conv = self.b.conv2d(r, w);
        self.bn(conv, name)
    }

    fn cell(&mut self, x: NodeId, enc: &CellEncoding, cell: usize) -> NodeId {
        let mut nodes = vec![x];
        for to in 1..4 {
            let mut terms = Vec::new();
            for (e, &(from, t)) in EDGES.iter().enumerate() {
                if t != to {
                    continue;
                }
                let src = nodes[from];
                let name = format!("cell{cell}.edge{e}");
                match enc.ops()[e] {
                    CellOp::Zero => {}
                    CellOp::Skip => terms.push(src),
                    CellOp::Conv1x1 => terms.push(self.relu_conv_bn(src, 1, &name)),
                    CellOp::Conv3x3 => terms.push(self.relu_conv_bn(src, 3, &name)),
                    CellOp::AvgPool3x3 => terms.push(self.b.avgpool3x3(src)),
                }
            }
            let node = match terms.len() {
                0 => self.b.zero(x),
                1 => terms[0],
                _ => self.b.add(terms),
            };
            nodes.push(node);
        }
        nodes[3]
    }
}

/// Builds stem → cells → BN+ReLU → global average pool → dense head, with
/// Kaiming-uniform weights drawn from `seed`.
pub fn build_network(enc: &CellEncoding, spec: &NetworkSpec, seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let c = spec.stem_channels;
    let mut nb = NetBuilder {
        b: GraphBuilder::new(),
        rng: &mut rng,
        channels: c,
    };
    let input = nb
        .b
        .input(&[None, Some(spec.input_channels), Some(spec.resolution), Some(spec.resolution)]);
    let stem_w = nb
        .b
        .param("stem.conv", init::conv_weight(c, spec.input_channels, 3, nb.rng));
    let stem = nb.b.conv2d(input, stem_w);
    let mut x = nb.bn(stem, "stem");
    for cell in 0..spec.cells {
        x = nb.cell(x, enc, cell);
    }
    let last = nb.bn(x, "lastact");
    let features = nb.b.relu(last);
    let gap = nb.b.global_avg_pool(features);
    let hw = nb.b.param("head.weight", init::dense_weight(spec.classes, c, nb.rng));
    let hb = nb.b.param("head.bias", Tensor::zeros(&[spec.classes]));
    let logits = nb.b.dense(gap, hw, Some(hb));
    let graph = nb.b.finish(logits).expect("network graph is well formed");
    Network {
        graph,
        input,
        features,
        logits,
        input_shape: vec![spec.input_channels, spec.resolution, spec.resolution],
        classes: spec.classes,
    }
}

/// Structural properties used as bias metrics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArchFeatures {
    /// Convolution count minus pooling count.
    pub conv_pool_ratio: f64,
    pub cell_size: usize,
    pub num_skip: usize,
    pub num_params: usize,
}

fn op_features(enc: &CellEncoding, num_params: usize) -> ArchFeatures {
    let convs = enc.count(CellOp::Conv1x1) + enc.count(CellOp::Conv3x3);
    ArchFeatures {
        conv_pool_ratio: convs as f64 - enc.count(CellOp::AvgPool3x3) as f64,
        cell_size: enc.cell_size(),
        num_skip: enc.count(CellOp::Skip),
        num_params,
    }
}

/// Features of `enc`, with the parameter count read off the built graph.
pub fn features(enc: &CellEncoding, graph: &Graph) -> ArchFeatures {
    op_features(enc, graph.num_params())
}

/// Same as [`features`] without building the network.
pub fn features_analytic(enc: &CellEncoding, spec: &NetworkSpec) -> ArchFeatures {
    op_features(enc, spec.param_count(enc))
}

/// Per-sample shapes of every node, inferred statically from the input
/// shape (batch axis excluded). Every node is visited, including nodes the
/// output does not depend on.
pub fn infer_shapes(graph: &Graph, input_shape: &[usize]) -> Vec<Vec<usize>> {
    let mut shapes: Vec<Vec<usize>> = Vec::with_capacity(graph.ops().len());
    for op in graph.ops() {
        let of = |n: NodeId, shapes: &Vec<Vec<usize>>| shapes[n.0].clone();
        let shape = match op {
            Op::Input => input_shape.to_vec(),
            Op::Param(p) => graph.param(*p).value.shape().to_vec(),
            Op::Dense { input, weight, .. } => {
                let mut s = of(*input, &shapes);
                let out = graph.param(*weight).value.shape()[0];
                match s.last_mut() {
                    Some(last) => *last = out,
                    None => s.push(out),
                }
                s
            }
            Op::Conv2d { input, weight } => {
                let mut s = of(*input, &shapes);
                s[0] = graph.param(*weight).value.shape()[0];
                s
            }
            Op::Relu(x) | Op::AvgPool3x3(x) | Op::Scale(x, _) | Op::Zero(x) => of(*x, &shapes),
            Op::BatchNorm { input, .. } => of(*input, &shapes),
            Op::Mul(a, _) => of(*a, &shapes),
            Op::Add(xs) => of(xs[0], &shapes),
            Op::Flatten(x) => vec![shapes[x.0].iter().product()],
            Op::GlobalAvgPool(x) => vec![shapes[x.0][0]],
            Op::Sum(_) | Op::CrossEntropy(_) | Op::MeanSquaredError(_) => Vec::new(),
        };
        shapes.push(shape);
    }
    shapes
}

/// Multiply-accumulates of one forward pass per sample, counted over every
/// conv and dense node.
pub fn graph_macs(graph: &Graph, input_shape: &[usize]) -> f64 {
    let shapes = infer_shapes(graph, input_shape);
    let mut total = 0.0;
    for (op, out) in graph.ops().iter().zip(&shapes) {
        let outputs: usize = out.iter().product();
        match op {
            Op::Conv2d { weight, .. } | Op::Dense { weight, .. } => {
                let per_out: usize = graph.param(*weight).value.shape()[1..].iter().product();
                total += (outputs * per_out) as f64;
            }
            _ => {}
        }
    }
    total
}

/// Parameter ids of a graph, useful for brute-force counting.
pub fn param_ids(graph: &Graph) -> impl Iterator<Item = ParamId> + '_ {
    (0..graph.params().len()).map(ParamId)
}
