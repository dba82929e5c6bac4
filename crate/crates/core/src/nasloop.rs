//! Predictor-guided architecture search over score tables.
//!
//! Surrogates are gradient-boosted regression trees (squared loss, exact
//! greedy splits) over one-hot cell encodings, quantile-normalized proxy
//! scores, or both. Two search loops use them:
//!
//! - `bananas`: an ensemble of five bootstrap-fitted surrogates scores 100
//!   candidates obtained by mutating the ten best evaluated cells; the
//!   candidate maximizing `mean + κ·std` (`κ = 1`) is evaluated next.
//! - `npenas`: a tournament of five over the twenty most recent evaluations
//!   picks a parent; the surrogate picks one of 100 mutated children.
//!
//! Evaluation means reading `val_acc` from the table. Simulated wall-clock
//! time adds the stored training time of every evaluated cell and the stored
//! proxy time of every cell whose proxy scores the surrogate consumed.

use std::collections::{HashMap, HashSet};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::spearman;
use crate::archspace::{mutate, CellEncoding, NUM_EDGES, NUM_OPS};
use crate::scorestore::{Row, ScoreTable};

#[derive(Debug, Error)]
pub enum NasError {
    #[error("row {0:?} has no cell encoding")]
    MissingEncoding(String),
    #[error("surrogate used before fit")]
    NotFitted,
    #[error("need at least {need} rows, table has {got}")]
    InsufficientRows { need: usize, got: usize },
    #[error("invalid search config: {0}")]
    Config(String),
}

pub type Result<T> = std::result::Result<T, NasError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FeatureSet {
    Encoding,
    Zc,
    Both,
}

impl FeatureSet {
    pub fn from_id(s: &str) -> Option<Self> {
        match s {
            "encoding" => Some(FeatureSet::Encoding),
            "zc" => Some(FeatureSet::Zc),
            "both" => Some(FeatureSet::Both),
            _ => None,
        }
    }

    pub fn uses_encoding(self) -> bool {
        self != FeatureSet::Zc
    }

    pub fn uses_zc(self) -> bool {
        self != FeatureSet::Encoding
    }
}

pub const ONE_HOT_DIMS: usize = NUM_EDGES * NUM_OPS;

/// One-hot cell encoding; coordinate `edge·5 + op`.
pub fn one_hot(enc: &CellEncoding) -> Vec<f64> {
    let mut v = vec![0.0; ONE_HOT_DIMS];
    for (e, op) in enc.ops().iter().enumerate() {
        v[e * NUM_OPS + op.index()] = 1.0;
    }
    v
}

/// Per-feature empirical CDF fit on training rows. Invalid scores are
/// replaced by the training median before transforming.
#[derive(Debug, Clone, PartialEq)]
pub struct QuantileNormalizer {
    sorted: Vec<Vec<f64>>,
    medians: Vec<Option<f64>>,
}

impl QuantileNormalizer {
    pub fn fit(columns: &[Vec<Option<f64>>]) -> Self {
        let sorted: Vec<Vec<f64>> = columns
            .iter()
            .map(|c| {
                let mut v: Vec<f64> = c.iter().flatten().copied().filter(|x| x.is_finite()).collect();
                v.sort_by(f64::total_cmp);
                v
            })
            .collect();
        let medians = sorted
            .iter()
            .map(|v| match v.len() {
                0 => None,
                n if n % 2 == 1 => Some(v[n / 2]),
                n => Some(0.5 * (v[n / 2 - 1] + v[n / 2])),
            })
            .collect();
        Self { sorted, medians }
    }

    pub fn dims(&self) -> usize {
        self.sorted.len()
    }

    /// Mid-rank position of `x` among the training values, in `[0, 1]`.
    pub fn transform(&self, feature: usize, x: Option<f64>) -> f64 {
        let v = &self.sorted[feature];
        let Some(x) = x.filter(|x| x.is_finite()).or(self.medians[feature]) else {
            return 0.5;
        };
        let below = v.partition_point(|&t| t < x);
        let upto = v.partition_point(|&t| t <= x);
        (below as f64 + 0.5 * (upto - below) as f64) / v.len() as f64
    }
}

/// Regression-tree ensemble hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GbdtParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    pub min_samples_leaf: usize,
}

impl Default for GbdtParams {
    fn default() -> Self {
        Self {
            n_trees: 100,
            max_depth: 6,
            learning_rate: 0.1,
            min_samples_leaf: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq)]
struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    fn predict(&self, x: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                Node::Leaf(v) => return v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => i = if x[feature] <= threshold { left } else { right },
            }
        }
    }
}

struct TreeBuilder<'a> {
    x: &'a [Vec<f64>],
    r: &'a [f64],
    params: &'a GbdtParams,
    nodes: Vec<Node>,
}

impl TreeBuilder<'_> {
    fn build(&mut self, idx: &mut [usize], depth: usize) -> usize {
        let n = idx.len() as f64;
        let sum: f64 = idx.iter().map(|&i| self.r[i]).sum();
        let me = self.nodes.len();
        self.nodes.push(Node::Leaf(sum / n));
        if depth >= self.params.max_depth || idx.len() < 2 * self.params.min_samples_leaf.max(1) {
            return me;
        }
        let Some((feature, threshold)) = self.best_split(idx, sum) else {
            return me;
        };
        let split = partition(idx, |&i| self.x[i][feature] <= threshold);
        let (l, r) = idx.split_at_mut(split);
        let left = self.build(l, depth + 1);
        let right = self.build(r, depth + 1);
        self.nodes[me] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        me
    }

    /// Split maximizing the reduction in squared error; the first feature
    /// and lowest threshold win ties.
    fn best_split(&self, idx: &[usize], total: f64) -> Option<(usize, f64)> {
        let n = idx.len();
        let min_leaf = self.params.min_samples_leaf.max(1);
        let base = total * total / n as f64;
        let mut best: Option<(f64, usize, f64)> = None;
        let mut order = idx.to_vec();
        for f in 0..self.x[idx[0]].len() {
            order.sort_by(|&a, &b| self.x[a][f].total_cmp(&self.x[b][f]).then(a.cmp(&b)));
            let mut left_sum = 0.0;
            for k in 0..n - 1 {
                left_sum += self.r[order[k]];
                let (xa, xb) = (self.x[order[k]][f], self.x[order[k + 1]][f]);
                if xa == xb || k + 1 < min_leaf || n - k - 1 < min_leaf {
                    continue;
                }
                let (nl, nr) = ((k + 1) as f64, (n - k - 1) as f64);
                let right_sum = total - left_sum;
                let gain = left_sum * left_sum / nl + right_sum * right_sum / nr - base;
                if gain > 1e-12 && best.is_none_or(|(g, _, _)| gain > g) {
                    best = Some((gain, f, 0.5 * (xa + xb)));
                }
            }
        }
        best.map(|(_, f, t)| (f, t))
    }
}

fn partition(idx: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let mut left: Vec<usize> = idx.iter().copied().filter(|i| pred(i)).collect();
    let right: Vec<usize> = idx.iter().copied().filter(|i| !pred(i)).collect();
    let split = left.len();
    left.extend(right);
    idx.copy_from_slice(&left);
    split
}

/// Gradient-boosted regression trees with squared loss.
#[derive(Debug, Clone, PartialEq)]
pub struct Gbdt {
    base: f64,
    learning_rate: f64,
    trees: Vec<Tree>,
}

impl Gbdt {
    pub fn fit(x: &[Vec<f64>], y: &[f64], params: &GbdtParams) -> Result<Self> {
        if x.is_empty() || x.len() != y.len() {
            return Err(NasError::InsufficientRows { need: 1, got: x.len() });
        }
        let base = y.iter().sum::<f64>() / y.len() as f64;
        let mut pred = vec![base; y.len()];
        let mut trees = Vec::with_capacity(params.n_trees);
        for _ in 0..params.n_trees {
            let resid: Vec<f64> = y.iter().zip(&pred).map(|(a, b)| a - b).collect();
            let mut b = TreeBuilder {
                x,
                r: &resid,
                params,
                nodes: Vec::new(),
            };
            let mut idx: Vec<usize> = (0..x.len()).collect();
            b.build(&mut idx, 0);
            let tree = Tree { nodes: b.nodes };
            for (p, xi) in pred.iter_mut().zip(x) {
                *p += params.learning_rate * tree.predict(xi);
            }
            trees.push(tree);
        }
        Ok(Self {
            base,
            learning_rate: params.learning_rate,
            trees,
        })
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        self.base + self.learning_rate * self.trees.iter().map(|t| t.predict(x)).sum::<f64>()
    }
}

/// Feature extraction plus a fitted tree ensemble.
#[derive(Debug, Clone)]
pub struct Surrogate {
    fs: FeatureSet,
    params: GbdtParams,
    normalizer: Option<QuantileNormalizer>,
    model: Option<Gbdt>,
}

impl Surrogate {
    pub fn new(fs: FeatureSet, params: GbdtParams) -> Self {
        Self {
            fs,
            params,
            normalizer: None,
            model: None,
        }
    }

    pub fn feature_set(&self) -> FeatureSet {
        self.fs
    }

    /// Fits the normalizer and the trees on the given rows.
    pub fn fit(&mut self, rows: &[&Row]) -> Result<()> {
        if rows.len() < 2 {
            return Err(NasError::InsufficientRows { need: 2, got: rows.len() });
        }
        let n_proxies = rows[0].scores.len();
        let columns: Vec<Vec<Option<f64>>> = (0..n_proxies)
            .map(|p| rows.iter().map(|r| r.scores[p].value()).collect())
            .collect();
        self.normalizer = Some(QuantileNormalizer::fit(&columns));
        let x = rows.iter().map(|r| self.featurize(r)).collect::<Result<Vec<_>>>()?;
        let y: Vec<f64> = rows.iter().map(|r| r.val_acc).collect();
        self.model = Some(Gbdt::fit(&x, &y, &self.params)?);
        Ok(())
    }

    /// Feature vector of a row under this surrogate's feature set.
    pub fn featurize(&self, row: &Row) -> Result<Vec<f64>> {
        let norm = self.normalizer.as_ref().ok_or(NasError::NotFitted)?;
        featurize(row, self.fs, norm)
    }

    pub fn predict(&self, rows: &[&Row]) -> Result<Vec<f64>> {
        let model = self.model.as_ref().ok_or(NasError::NotFitted)?;
        rows.iter().map(|r| Ok(model.predict(&self.featurize(r)?))).collect()
    }
}

pub fn featurize(row: &Row, fs: FeatureSet, norm: &QuantileNormalizer) -> Result<Vec<f64>> {
    let mut v = Vec::new();
    if fs.uses_encoding() {
        let cell = row.cell().ok_or_else(|| NasError::MissingEncoding(row.id.clone()))?;
        v.extend(one_hot(cell));
    }
    if fs.uses_zc() {
        v.extend((0..norm.dims()).map(|p| norm.transform(p, row.scores.get(p).and_then(|s| s.value()))));
    }
    Ok(v)
}

fn mix(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub mean: f64,
    pub sd: f64,
    pub per_trial: Vec<f64>,
}

/// Held-out Spearman correlation of a surrogate over repeated disjoint
/// train/test samples.
pub fn standalone_eval(
    table: &ScoreTable,
    fs: FeatureSet,
    n_train: usize,
    n_test: usize,
    trials: usize,
    seed: u64,
) -> Result<EvalSummary> {
    let need = n_train + n_test;
    if table.len() < need || n_train < 2 || n_test < 2 {
        return Err(NasError::InsufficientRows { need, got: table.len() });
    }
    let per_trial = (0..trials)
        .into_par_iter()
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(mix(seed, t as u64));
            let idx = sample_indices(&mut rng, table.len(), need).into_vec();
            let rows: Vec<&Row> = idx.iter().map(|&i| &table.rows()[i]).collect();
            let (train, test) = rows.split_at(n_train);
            let mut s = Surrogate::new(fs, GbdtParams::default());
            s.fit(train)?;
            let pred = s.predict(test)?;
            let truth: Vec<f64> = test.iter().map(|r| r.val_acc).collect();
            Ok(spearman(&truth, &pred).unwrap_or(0.0))
        })
        .collect::<Result<Vec<f64>>>()?;
    let n = per_trial.len().max(1) as f64;
    let mean = per_trial.iter().sum::<f64>() / n;
    let sd = (per_trial.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt();
    Ok(EvalSummary { mean, sd, per_trial })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    Bananas,
    Npenas,
    Random,
}

impl Algorithm {
    pub fn from_id(s: &str) -> Option<Self> {
        match s {
            "bananas" => Some(Algorithm::Bananas),
            "npenas" => Some(Algorithm::Npenas),
            "random" => Some(Algorithm::Random),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchConfig {
    pub algorithm: Algorithm,
    pub features: FeatureSet,
    pub budget: usize,
    pub init: usize,
    pub candidates: usize,
    pub seed: u64,
    pub trials: usize,
    pub top_parents: usize,
    pub ensemble: usize,
    pub kappa: f64,
    pub population: usize,
    pub tournament: usize,
    pub gbdt: GbdtParams,
}

impl Default for SearchConfig {
    fn default() -> Self {
        Self {
            algorithm: Algorithm::Bananas,
            features: FeatureSet::Both,
            budget: 200,
            init: 10,
            candidates: 100,
            seed: 0,
            trials: 1,
            top_parents: 10,
            ensemble: 5,
            kappa: 1.0,
            population: 20,
            tournament: 5,
            gbdt: GbdtParams::default(),
        }
    }
}

impl SearchConfig {
    pub fn validate(&self, table: &ScoreTable) -> Result<()> {
        if self.budget < self.init {
            return Err(NasError::Config("budget must be at least init".into()));
        }
        if self.candidates == 0 || self.ensemble == 0 || self.tournament == 0 || self.population == 0 || self.top_parents == 0 {
            return Err(NasError::Config("candidates, ensemble, tournament, population and top_parents must be positive".into()));
        }
        if self.budget > table.len() {
            return Err(NasError::Config(format!("budget {} exceeds table size {}", self.budget, table.len())));
        }
        if self.algorithm != Algorithm::Random {
            if let Some(r) = table.rows().iter().find(|r| r.cell().is_none()) {
                return Err(NasError::MissingEncoding(r.id.clone()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub iteration: usize,
    pub arch_id: String,
    pub val_acc: f64,
    pub best_so_far: f64,
    pub simulated_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchTrace {
    pub trial: usize,
    pub steps: Vec<TraceStep>,
    /// Architectures whose proxy scores the surrogate read.
    pub zc_consumed: Vec<String>,
    /// Some evaluated row lacked a training time.
    pub train_time_missing: bool,
}

impl SearchTrace {
    pub fn best_at(&self, evaluations: usize) -> Option<f64> {
        self.steps.get(evaluations.min(self.steps.len()).checked_sub(1)?).map(|s| s.best_so_far)
    }

    pub fn found_within(&self, evaluations: usize, arch_id: &str) -> bool {
        self.steps.iter().take(evaluations).any(|s| s.arch_id == arch_id)
    }
}

pub const TRACE_CSV_HEADER: &str = "trial,iteration,arch_id,val_acc,best_so_far,simulated_seconds";

pub fn traces_to_csv(traces: &[SearchTrace]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(TRACE_CSV_HEADER.split(',')).expect("in-memory write");
    for t in traces {
        for s in &t.steps {
            w.write_record([
                t.trial.to_string(),
                s.iteration.to_string(),
                s.arch_id.clone(),
                s.val_acc.to_string(),
                s.best_so_far.to_string(),
                s.simulated_seconds.to_string(),
            ])
            .expect("in-memory write");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
}

/// Components of simulated wall-clock time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Runtime {
    pub seconds: f64,
    pub train_seconds: f64,
    pub proxy_seconds: f64,
    /// Training time was missing for some evaluated row, so `seconds` counts
    /// proxy time only for those rows.
    pub train_time_missing: bool,
}

fn proxy_seconds(row: &Row) -> f64 {
    row.scores.iter().map(|s| s.seconds).sum()
}

/// Stored training time of evaluated rows plus stored proxy time of every
/// row whose scores were consumed.
pub fn simulated_runtime(trace: &SearchTrace, table: &ScoreTable) -> Runtime {
    let mut train = 0.0;
    let mut missing = false;
    for s in &trace.steps {
        match table.row(&s.arch_id).ok().and_then(|r| r.train_time) {
            Some(t) => train += t,
            None => missing = true,
        }
    }
    let proxy: f64 = trace
        .zc_consumed
        .iter()
        .filter_map(|id| table.row(id).ok())
        .map(proxy_seconds)
        .sum();
    Runtime {
        seconds: train + proxy,
        train_seconds: train,
        proxy_seconds: proxy,
        train_time_missing: missing,
    }
}

/// Mutable state of one search trial.
struct Search<'t> {
    table: &'t ScoreTable,
    config: &'t SearchConfig,
    rng: ChaCha8Rng,
    evaluated: Vec<usize>,
    seen: HashSet<usize>,
    consumed: HashSet<usize>,
    consumed_order: Vec<usize>,
    trace: SearchTrace,
    clock: f64,
    best: f64,
}

impl<'t> Search<'t> {
    fn new(table: &'t ScoreTable, config: &'t SearchConfig, trial: usize) -> Self {
        Self {
            table,
            config,
            rng: ChaCha8Rng::seed_from_u64(mix(config.seed, trial as u64)),
            evaluated: Vec::new(),
            seen: HashSet::new(),
            consumed: HashSet::new(),
            consumed_order: Vec::new(),
            trace: SearchTrace {
                trial,
                steps: Vec::new(),
                zc_consumed: Vec::new(),
                train_time_missing: false,
            },
            clock: 0.0,
            best: f64::NEG_INFINITY,
        }
    }

    fn row(&self, i: usize) -> &'t Row {
        &self.table.rows()[i]
    }

    fn consume(&mut self, rows: &[usize]) {
        if !self.config.features.uses_zc() {
            return;
        }
        for &i in rows {
            if self.consumed.insert(i) {
                self.consumed_order.push(i);
                self.clock += proxy_seconds(self.row(i));
            }
        }
    }

    fn evaluate(&mut self, i: usize) {
        debug_assert!(!self.seen.contains(&i));
        self.seen.insert(i);
        self.evaluated.push(i);
        let row = self.row(i);
        match row.train_time {
            Some(t) => self.clock += t,
            None => self.trace.train_time_missing = true,
        }
        self.best = self.best.max(row.val_acc);
        self.trace.steps.push(TraceStep {
            iteration: self.trace.steps.len(),
            arch_id: row.id.clone(),
            val_acc: row.val_acc,
            best_so_far: self.best,
            simulated_seconds: self.clock,
        });
    }

    fn random_unseen(&mut self) -> usize {
        loop {
            let i = self.rng.random_range(0..self.table.len());
            if !self.seen.contains(&i) {
                return i;
            }
        }
    }

    fn initialize(&mut self) {
        let n = self.config.init.min(self.config.budget);
        for i in sample_indices(&mut self.rng, self.table.len(), n).into_vec() {
            self.evaluate(i);
        }
    }

    fn fit(&mut self, rows: &[usize]) -> Result<Surrogate> {
        let mut s = Surrogate::new(self.config.features, self.config.gbdt);
        let refs: Vec<&Row> = rows.iter().map(|&i| self.row(i)).collect();
        s.fit(&refs)?;
        Ok(s)
    }

    /// Distinct unseen table rows reached by mutating the given parents
    /// in turn.
    fn mutants(&mut self, parents: &[usize], count: usize) -> Vec<usize> {
        let mut out = Vec::with_capacity(count);
        let mut chosen = HashSet::new();
        let mut attempts = 0;
        while out.len() < count && attempts < count * 50 {
            let parent = self.row(parents[attempts % parents.len()]).cell().expect("validated encodings");
            attempts += 1;
            let child = mutate(parent, &mut self.rng);
            if let Some(j) = self.table.row_by_cell(&child) {
                if !self.seen.contains(&j) && chosen.insert(j) {
                    out.push(j);
                }
            }
        }
        if out.is_empty() {
            out.push(self.random_unseen());
        }
        out
    }

    fn top_evaluated(&self, k: usize) -> Vec<usize> {
        let mut ev = self.evaluated.clone();
        ev.sort_by(|&a, &b| self.row(b).val_acc.total_cmp(&self.row(a).val_acc).then(a.cmp(&b)));
        ev.truncate(k);
        ev
    }

    fn bananas_step(&mut self) -> Result<usize> {
        let parents = self.top_evaluated(self.config.top_parents);
        let cands = self.mutants(&parents, self.config.candidates);
        let mut preds = vec![Vec::with_capacity(self.config.ensemble); cands.len()];
        let n = self.evaluated.len();
        for _ in 0..self.config.ensemble {
            let boot: Vec<usize> = (0..n).map(|_| self.evaluated[self.rng.random_range(0..n)]).collect();
            let model = self.fit(&boot)?;
            let refs: Vec<&Row> = cands.iter().map(|&i| self.row(i)).collect();
            for (p, v) in preds.iter_mut().zip(model.predict(&refs)?) {
                p.push(v);
            }
        }
        self.consume(&cands);
        let kappa = self.config.kappa;
        let acq: Vec<f64> = preds
            .iter()
            .map(|p| {
                let m = p.iter().sum::<f64>() / p.len() as f64;
                let sd = (p.iter().map(|v| (v - m).powi(2)).sum::<f64>() / p.len() as f64).sqrt();
                m + kappa * sd
            })
            .collect();
        Ok(cands[argmax(&acq)])
    }

    fn npenas_step(&mut self) -> Result<usize> {
        let pop_start = self.evaluated.len().saturating_sub(self.config.population);
        let population = self.evaluated[pop_start..].to_vec();
        let k = self.config.tournament.min(population.len());
        let parent = sample_indices(&mut self.rng, population.len(), k)
            .into_iter()
            .map(|i| population[i])
            .max_by(|&a, &b| self.row(a).val_acc.total_cmp(&self.row(b).val_acc).then(b.cmp(&a)))
            .expect("non-empty population");
        let children = self.mutants(&[parent], self.config.candidates);
        let model = self.fit(&self.evaluated.clone())?;
        let refs: Vec<&Row> = children.iter().map(|&i| self.row(i)).collect();
        let pred = model.predict(&refs)?;
        self.consume(&children);
        Ok(children[argmax(&pred)])
    }

    fn run(mut self) -> Result<SearchTrace> {
        self.initialize();
        if self.config.features.uses_zc() && self.config.algorithm != Algorithm::Random {
            let init = self.evaluated.clone();
            self.consume(&init);
        }
        while self.evaluated.len() < self.config.budget {
            let next = match self.config.algorithm {
                _ if self.evaluated.len() < 2 => self.random_unseen(),
                Algorithm::Random => self.random_unseen(),
                Algorithm::Bananas => self.bananas_step()?,
                Algorithm::Npenas => self.npenas_step()?,
            };
            self.evaluate(next);
        }
        self.trace.zc_consumed = self.consumed_order.iter().map(|&i| self.row(i).id.clone()).collect();
        Ok(self.trace)
    }
}

/// Index of the largest value; the lowest index wins ties.
fn argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in xs.iter().enumerate() {
        if v > xs[best] {
            best = i;
        }
    }
    best
}

pub fn run_trial(table: &ScoreTable, config: &SearchConfig, trial: usize) -> Result<SearchTrace> {
    config.validate(table)?;
    let mut c = config.clone();
    if c.algorithm == Algorithm::Random {
        c.features = FeatureSet::Encoding;
    }
    Search::new(table, &c, trial).run()
}

pub fn run_bananas(table: &ScoreTable, config: &SearchConfig, trial: usize) -> Result<SearchTrace> {
    run_trial(table, &SearchConfig { algorithm: Algorithm::Bananas, ..config.clone() }, trial)
}

pub fn run_npenas(table: &ScoreTable, config: &SearchConfig, trial: usize) -> Result<SearchTrace> {
    run_trial(table, &SearchConfig { algorithm: Algorithm::Npenas, ..config.clone() }, trial)
}

pub fn run_random(table: &ScoreTable, config: &SearchConfig, trial: usize) -> Result<SearchTrace> {
    run_trial(table, &SearchConfig { algorithm: Algorithm::Random, ..config.clone() }, trial)
}

/// `config.trials` independent trials, in trial order.
pub fn run_trials(table: &ScoreTable, config: &SearchConfig) -> Result<Vec<SearchTrace>> {
    config.validate(table)?;
    (0..config.trials).into_par_iter().map(|t| run_trial(table, config, t)).collect()
}

/// Row id with the highest accuracy.
pub fn table_optimum(table: &ScoreTable) -> Option<&Row> {
    table.rows().iter().max_by(|a, b| a.val_acc.total_cmp(&b.val_acc))
}

/// Mean best-so-far after `evaluations` steps.
pub fn mean_best_at(traces: &[SearchTrace], evaluations: usize) -> f64 {
    let v: Vec<f64> = traces.iter().filter_map(|t| t.best_at(evaluations)).collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Rows keyed by id, for callers that need repeated lookups.
pub fn index_by_id(table: &ScoreTable) -> HashMap<&str, &Row> {
    table.rows().iter().map(|r| (r.id.as_str(), r)).collect()
}
