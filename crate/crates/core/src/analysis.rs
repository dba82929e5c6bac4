//! Correlation, ranking metrics, binned entropy and information gain, proxy
//! orderings, and cross-table summaries.
//!
//! Entropies are plug-in estimates in bits over equal-width histograms. For
//! a sample of size `N`, `N·H(y|S)` equals `Σ c log c` over the cell counts of
//! `S` minus the same sum over the joint cells of `(S, y)`. Every count is
//! factored into primes, so the estimate is held as an integer exponent per
//! prime and evaluated in a fixed order. Two subsets inducing the same
//! partition therefore give bit-identical entropies, information gains are
//! computed from exponent differences, and a gain is exactly `0.0` whenever
//! the new variable does not refine the partition.

use std::collections::HashMap;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use thiserror::Error;

use crate::scorestore::{ScoreTable, StoreError};

/// Upper bound on subsets visited by the exhaustive ordering.
pub const EXHAUSTIVE_CAP: u64 = 1_000_000;

#[derive(Debug, Error)]
pub enum AnalysisError {
    #[error("length mismatch: {0} vs {1}")]
    Length(usize, usize),
    #[error("need at least {need} samples, got {got}")]
    TooShort { need: usize, got: usize },
    #[error("correlation undefined: {0}")]
    Undefined(String),
    #[error("K = {k} outside [1, {m}]")]
    KOutOfRange { k: usize, m: usize },
    #[error("exhaustive search over {subsets} subsets exceeds the cap of {cap}; use k_max <= {suggestion}")]
    Budget { subsets: u64, cap: u64, suggestion: usize },
    #[error("no proxies in common")]
    NoCommonProxies,
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Store(#[from] StoreError),
}

pub type Result<T> = std::result::Result<T, AnalysisError>;

fn check_pair(a: &[f64], b: &[f64]) -> Result<()> {
    if a.len() != b.len() {
        return Err(AnalysisError::Length(a.len(), b.len()));
    }
    if a.len() < 2 {
        return Err(AnalysisError::TooShort { need: 2, got: a.len() });
    }
    Ok(())
}

/// 0-based ranks in ascending order; ties share their average rank.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0;
        for &k in &idx[i..=j] {
            ranks[k] = avg;
        }
        i = j + 1;
    }
    ranks
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y)?;
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(AnalysisError::Undefined("constant vector".into()));
    }
    if !(sxx.is_finite() && syy.is_finite() && sxy.is_finite()) {
        return Err(AnalysisError::Undefined("non-finite input".into()));
    }
    let denom = match (sxx * syy).sqrt() {
        d if d.is_finite() && d > 0.0 => d,
        _ => sxx.sqrt() * syy.sqrt(),
    };
    Ok((sxy / denom).clamp(-1.0, 1.0))
}

/// Pearson correlation of average ranks.
pub fn spearman(ground: &[f64], pred: &[f64]) -> Result<f64> {
    check_pair(ground, pred)?;
    pearson(&average_ranks(ground), &average_ranks(pred))
}

/// 0-based ranks with the largest value first; ties broken by position.
pub fn ordinal_ranks(xs: &[f64]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[b].total_cmp(&xs[a]).then(a.cmp(&b)));
    let mut ranks = vec![0; xs.len()];
    for (r, i) in idx.into_iter().enumerate() {
        ranks[i] = r;
    }
    ranks
}

/// Interpretation of the K argument of the top-K metrics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KMode {
    /// K counts architectures.
    #[default]
    Absolute,
    /// K is a fraction of M; the top set is every rank below `K·M`.
    Fraction,
}

/// Number of top architectures selected by `k` under `mode`.
pub fn resolve_k(k: f64, m: usize, mode: KMode) -> Result<usize> {
    let abs = match mode {
        KMode::Absolute if k.fract() == 0.0 && k >= 0.0 => k as usize,
        KMode::Absolute => return Err(AnalysisError::Invalid(format!("absolute K must be an integer, got {k}"))),
        KMode::Fraction if k > 0.0 && k <= 1.0 => (k * m as f64).ceil() as usize,
        KMode::Fraction => return Err(AnalysisError::Invalid(format!("fractional K must lie in (0, 1], got {k}"))),
    };
    check_k(abs, m)?;
    Ok(abs)
}

fn check_k(k: usize, m: usize) -> Result<()> {
    if k == 0 || k > m {
        return Err(AnalysisError::KOutOfRange { k, m });
    }
    Ok(())
}

/// Fraction of the true top-K also placed in the predicted top-K.
pub fn precision_at_k(ground: &[f64], pred: &[f64], k: usize) -> Result<f64> {
    check_pair(ground, pred)?;
    check_k(k, ground.len())?;
    let (rg, rp) = (ordinal_ranks(ground), ordinal_ranks(pred));
    let hits = rg.iter().zip(&rp).filter(|&(&g, &p)| g < k && p < k).count();
    Ok(hits as f64 / k as f64)
}

/// Best true rank among the predicted top-K, divided by M.
pub fn best_ranking_at_k(ground: &[f64], pred: &[f64], k: usize) -> Result<f64> {
    check_pair(ground, pred)?;
    check_k(k, ground.len())?;
    let (rg, rp) = (ordinal_ranks(ground), ordinal_ranks(pred));
    let best = rg
        .iter()
        .zip(&rp)
        .filter(|&(_, &p)| p < k)
        .map(|(&g, _)| g)
        .min()
        .expect("k >= 1");
    Ok(best as f64 / ground.len() as f64)
}

/// `round(1 + 3.322 · ln N)`.
pub fn sturges_bins(n: usize) -> Result<usize> {
    if n < 2 {
        return Err(AnalysisError::TooShort { need: 2, got: n });
    }
    Ok((1.0 + 3.322 * (n as f64).ln()).round() as usize)
}

/// Histogram resolution.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Bins {
    /// Sturges' rule on the sample size.
    #[default]
    Auto,
    Fixed(usize),
}

impl Bins {
    pub fn resolve(self, n: usize) -> Result<usize> {
        match self {
            Bins::Auto => sturges_bins(n),
            Bins::Fixed(0) => Err(AnalysisError::Invalid("bin count must be positive".into())),
            Bins::Fixed(b) => Ok(b),
        }
    }
}

impl std::str::FromStr for Bins {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "auto" => Ok(Bins::Auto),
            _ => s
                .parse::<usize>()
                .ok()
                .filter(|&b| b > 0)
                .map(Bins::Fixed)
                .ok_or_else(|| format!("expected \"auto\" or a positive integer, got {s:?}")),
        }
    }
}

/// Bin codes of one variable and the number of distinct codes it may take.
///
/// Valid values are split into `n_bins` equal-width bins over their observed
/// range, with the maximum placed in the last bin; a constant variable uses a
/// single bin. Missing or non-finite values share one extra bin.
pub fn discretize(xs: &[Option<f64>], n_bins: usize) -> (Vec<u32>, usize) {
    let valid = || xs.iter().flatten().copied().filter(|v| v.is_finite());
    let lo = valid().fold(f64::INFINITY, f64::min);
    let hi = valid().fold(f64::NEG_INFINITY, f64::max);
    let bins = if lo < hi { n_bins.max(1) } else { 1 };
    let width = (hi - lo) / bins as f64;
    let codes = xs
        .iter()
        .map(|v| match v {
            Some(v) if v.is_finite() => {
                if bins == 1 {
                    0
                } else {
                    (((v - lo) / width).floor() as usize).min(bins - 1) as u32
                }
            }
            _ => bins as u32,
        })
        .collect();
    (codes, bins + 1)
}

/// Smallest-prime-factor table.
fn spf_sieve(n: usize) -> Vec<u32> {
    let mut spf = vec![0u32; n + 1];
    for i in 2..=n {
        if spf[i] == 0 {
            for j in (i..=n).step_by(i) {
                if spf[j] == 0 {
                    spf[j] = i as u32;
                }
            }
        }
    }
    spf
}

/// `N·H` in bits as integer exponents over primes: the value is
/// `Σ_p exps[p] · log2 p / N`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExactEntropy {
    exps: Vec<i64>,
    n: usize,
}

impl ExactEntropy {
    fn value_of(exps: &[i64], n: usize) -> f64 {
        let n = n as f64;
        exps.iter()
            .enumerate()
            .filter(|&(_, &e)| e != 0)
            .map(|(p, &e)| (e as f64 / n) * (p as f64).log2())
            .sum::<f64>()
            + 0.0
    }

    pub fn value(&self) -> f64 {
        Self::value_of(&self.exps, self.n)
    }

    /// `self − other`, evaluated from exponent differences.
    pub fn minus(&self, other: &ExactEntropy) -> f64 {
        let diff: Vec<i64> = self.exps.iter().zip(&other.exps).map(|(a, b)| a - b).collect();
        if diff.iter().all(|&d| d == 0) {
            return 0.0;
        }
        Self::value_of(&diff, self.n)
    }
}

/// `log2 n` evaluated the same way as entropies, so bounds compare exactly.
pub fn exact_log2(n: usize) -> f64 {
    let spf = spf_sieve(n.max(2));
    let mut exps = vec![0i64; n.max(2) + 1];
    let mut m = n;
    while m > 1 {
        let p = spf[m] as usize;
        exps[p] += 1;
        m /= p;
    }
    ExactEntropy::value_of(&exps, 1)
}

/// Discretized target and candidate variables of one sample.
#[derive(Debug, Clone)]
pub struct EntropyEstimator {
    y: Vec<u32>,
    y_card: usize,
    zs: Vec<Vec<u32>>,
    n_bins: usize,
    spf: Vec<u32>,
}

/// Partition of the sample induced by a set of variables.
#[derive(Debug, Clone)]
struct Partition {
    codes: Vec<u32>,
    card: usize,
}

impl EntropyEstimator {
    pub fn new(y: &[f64], zs: &[Vec<Option<f64>>], bins: Bins) -> Result<Self> {
        let n = y.len();
        for z in zs {
            if z.len() != n {
                return Err(AnalysisError::Length(n, z.len()));
            }
        }
        if n < 2 {
            return Err(AnalysisError::TooShort { need: 2, got: n });
        }
        let n_bins = bins.resolve(n)?;
        let y_opt: Vec<Option<f64>> = y.iter().map(|&v| Some(v)).collect();
        let (y, y_card) = discretize(&y_opt, n_bins);
        let zs = zs.iter().map(|z| discretize(z, n_bins).0).collect();
        Ok(Self {
            y,
            y_card,
            zs,
            n_bins,
            spf: spf_sieve(n),
        })
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn num_vars(&self) -> usize {
        self.zs.len()
    }

    fn trivial(&self) -> Partition {
        Partition {
            codes: vec![0; self.n()],
            card: 1,
        }
    }

    fn refine(&self, part: &Partition, var: usize) -> Partition {
        let z = &self.zs[var];
        let mut map: HashMap<u64, u32> = HashMap::new();
        let codes = part
            .codes
            .iter()
            .zip(z)
            .map(|(&a, &b)| {
                let key = ((a as u64) << 32) | b as u64;
                let next = map.len() as u32;
                *map.entry(key).or_insert(next)
            })
            .collect();
        Partition { codes, card: map.len() }
    }

    fn partition(&self, subset: &[usize]) -> Partition {
        subset.iter().fold(self.trivial(), |p, &v| self.refine(&p, v))
    }

    fn add_clogc(&self, exps: &mut [i64], c: usize, sign: i64) {
        let mut m = c;
        while m > 1 {
            let p = self.spf[m] as usize;
            exps[p] += sign * c as i64;
            m /= p;
        }
    }

    fn exact(&self, part: &Partition) -> ExactEntropy {
        let mut cs = vec![0usize; part.card];
        let mut csy = vec![0usize; part.card * self.y_card];
        for (&s, &y) in part.codes.iter().zip(&self.y) {
            cs[s as usize] += 1;
            csy[s as usize * self.y_card + y as usize] += 1;
        }
        let mut exps = vec![0i64; self.n() + 1];
        for &c in cs.iter().filter(|&&c| c > 1) {
            self.add_clogc(&mut exps, c, 1);
        }
        for &c in csy.iter().filter(|&&c| c > 1) {
            self.add_clogc(&mut exps, c, -1);
        }
        ExactEntropy { exps, n: self.n() }
    }

    pub fn exact_conditional(&self, subset: &[usize]) -> ExactEntropy {
        self.exact(&self.partition(subset))
    }

    /// `H(y | z_subset)` in bits; the empty subset gives `H(y)`.
    pub fn conditional(&self, subset: &[usize]) -> f64 {
        self.exact_conditional(subset).value()
    }

    pub fn h_y(&self) -> f64 {
        self.conditional(&[])
    }

    /// `H(y | prefix) − H(y | prefix ∪ {new})`.
    pub fn information_gain(&self, prefix: &[usize], new: usize) -> f64 {
        let base = self.partition(prefix);
        let refined = self.refine(&base, new);
        self.exact(&base).minus(&self.exact(&refined))
    }

    /// Greedy ordering: repeatedly adds the variable with the largest gain,
    /// ties going to the lowest index.
    pub fn ordering_greedy(&self) -> Ordering {
        let mut chosen = Vec::new();
        let mut entropies = Vec::new();
        let mut part = self.trivial();
        let mut remaining: Vec<usize> = (0..self.num_vars()).collect();
        while !remaining.is_empty() {
            let (pos, best, h) = remaining
                .iter()
                .enumerate()
                .map(|(pos, &v)| {
                    let p = self.refine(&part, v);
                    let h = self.exact(&p);
                    (pos, p, h)
                })
                .min_by(|a, b| a.2.value().total_cmp(&b.2.value()).then(a.0.cmp(&b.0)))
                .expect("non-empty");
            chosen.push(remaining.remove(pos));
            entropies.push(h.value());
            part = best;
        }
        Ordering {
            order: chosen,
            entropies,
        }
    }

    /// Mean of `H(y | first k)` over random orderings, for each `k`.
    pub fn ordering_random(&self, trials: usize, seed: u64) -> Vec<f64> {
        let p = self.num_vars();
        if trials == 0 || p == 0 {
            return vec![];
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let perms: Vec<Vec<usize>> = (0..trials)
            .map(|_| {
                let mut perm: Vec<usize> = (0..p).collect();
                perm.shuffle(&mut rng);
                perm
            })
            .collect();
        let traces: Vec<Vec<f64>> = perms
            .par_iter()
            .map(|perm| {
                let mut part = self.trivial();
                perm.iter()
                    .map(|&v| {
                        part = self.refine(&part, v);
                        self.exact(&part).value()
                    })
                    .collect()
            })
            .collect();
        (0..p)
            .map(|k| {
                let x0 = traces[0][k];
                x0 + traces.iter().map(|t| t[k] - x0).sum::<f64>() / trials as f64
            })
            .collect()
    }

    /// Lowest `H(y | S)` over all subsets of each size `k ≤ k_max`, with the
    /// lexicographically smallest minimizing subset.
    pub fn ordering_exhaustive(&self, k_max: usize) -> Result<Vec<(f64, Vec<usize>)>> {
        let p = self.num_vars();
        let k_max = k_max.min(p);
        let total = subsets_up_to(p, k_max);
        if total > EXHAUSTIVE_CAP {
            let suggestion = (0..=k_max).rev().find(|&k| subsets_up_to(p, k) <= EXHAUSTIVE_CAP).unwrap_or(0);
            return Err(AnalysisError::Budget {
                subsets: total,
                cap: EXHAUSTIVE_CAP,
                suggestion,
            });
        }
        let per_root: Vec<Vec<Option<(f64, Vec<usize>)>>> = (0..p)
            .into_par_iter()
            .map(|first| {
                let mut best = vec![None; k_max + 1];
                let mut stack = vec![first];
                let part = self.refine(&self.trivial(), first);
                self.dfs(&part, &mut stack, k_max, &mut best);
                best
            })
            .collect();
        Ok((1..=k_max)
            .map(|k| {
                per_root
                    .iter()
                    .filter_map(|b| b[k].clone())
                    .min_by(|a: &(f64, Vec<usize>), b| a.0.total_cmp(&b.0).then_with(|| a.1.cmp(&b.1)))
                    .expect("at least one subset per size")
            })
            .collect())
    }

    fn dfs(&self, part: &Partition, stack: &mut Vec<usize>, k_max: usize, best: &mut [Option<(f64, Vec<usize>)>]) {
        let k = stack.len();
        let h = self.exact(part).value();
        let slot = &mut best[k];
        let better = match slot {
            None => true,
            Some((bh, bs)) => h < *bh || (h == *bh && stack.as_slice() < bs.as_slice()),
        };
        if better {
            *slot = Some((h, stack.clone()));
        }
        if k == k_max {
            return;
        }
        let last = *stack.last().expect("non-empty");
        for next in last + 1..self.num_vars() {
            let child = self.refine(part, next);
            stack.push(next);
            self.dfs(&child, stack, k_max, best);
            stack.pop();
        }
    }
}

fn binomial(n: usize, k: usize) -> u64 {
    if k > n {
        return 0;
    }
    (0..k).fold(1u64, |acc, i| acc * (n - i) as u64 / (i + 1) as u64)
}

/// Number of non-empty subsets of size at most `k` drawn from `p` items.
pub fn subsets_up_to(p: usize, k: usize) -> u64 {
    (1..=k.min(p)).map(|i| binomial(p, i)).sum()
}

/// Variables in selection order with `H(y | first k)` after each step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Ordering {
    pub order: Vec<usize>,
    pub entropies: Vec<f64>,
}

/// `H(y | zs)` in bits; an empty `zs` gives `H(y)`.
pub fn conditional_entropy(y: &[f64], zs: &[Vec<f64>], bins: Bins) -> Result<f64> {
    let zs: Vec<Vec<Option<f64>>> = zs.iter().map(|z| z.iter().map(|&v| Some(v)).collect()).collect();
    let est = EntropyEstimator::new(y, &zs, bins)?;
    Ok(est.conditional(&(0..zs.len()).collect::<Vec<_>>()))
}

/// `H(y | prefix) − H(y | prefix, z_new)` in bits.
pub fn information_gain(y: &[f64], prefix: &[Vec<f64>], z_new: &[f64], bins: Bins) -> Result<f64> {
    let mut zs: Vec<Vec<Option<f64>>> = prefix.iter().map(|z| z.iter().map(|&v| Some(v)).collect()).collect();
    zs.push(z_new.iter().map(|&v| Some(v)).collect());
    let est = EntropyEstimator::new(y, &zs, bins)?;
    let prefix: Vec<usize> = (0..prefix.len()).collect();
    Ok(est.information_gain(&prefix, prefix.len()))
}

/// Everything the entropy analysis reports for one table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntropyReport {
    pub sample_size: usize,
    pub n_bins: usize,
    pub proxies: Vec<String>,
    pub h_y: f64,
    /// `H(y | z_i)` per proxy.
    pub conditional: Vec<f64>,
    /// `ig[i][j] = H(y | z_i) − H(y | z_i, z_j)`; zero on the diagonal.
    pub pairwise_ig: Vec<Vec<f64>>,
    pub greedy: Ordering,
    pub random_mean: Vec<f64>,
    pub exhaustive: Vec<(f64, Vec<usize>)>,
}

/// Entropy estimator over a seeded sample of at most `sample` rows.
pub fn table_estimator(table: &ScoreTable, sample: Option<usize>, bins: Bins, seed: u64) -> Result<EntropyEstimator> {
    let idx = sample_rows(table.len(), sample, seed);
    let y: Vec<f64> = idx.iter().map(|&i| table.rows()[i].val_acc).collect();
    let zs: Vec<Vec<Option<f64>>> = (0..table.proxy_ids().len())
        .map(|p| idx.iter().map(|&i| table.rows()[i].scores[p].value()).collect())
        .collect();
    EntropyEstimator::new(&y, &zs, bins)
}

/// Sorted positions of a seeded sample of `min(limit, n)` rows.
pub fn sample_rows(n: usize, limit: Option<usize>, seed: u64) -> Vec<usize> {
    match limit {
        Some(m) if m < n => {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let mut idx = rand::seq::index::sample(&mut rng, n, m).into_vec();
            idx.sort_unstable();
            idx
        }
        _ => (0..n).collect(),
    }
}

pub fn entropy_report(
    table: &ScoreTable,
    sample: Option<usize>,
    bins: Bins,
    trials: usize,
    k_max: usize,
    seed: u64,
) -> Result<EntropyReport> {
    let est = table_estimator(table, sample, bins, seed)?;
    let p = est.num_vars();
    let conditional = (0..p).map(|i| est.conditional(&[i])).collect();
    let pairwise_ig = (0..p)
        .map(|i| (0..p).map(|j| est.information_gain(&[i], j)).collect())
        .collect();
    Ok(EntropyReport {
        sample_size: est.n(),
        n_bins: est.n_bins(),
        proxies: table.proxy_ids().to_vec(),
        h_y: est.h_y(),
        conditional,
        pairwise_ig,
        greedy: est.ordering_greedy(),
        random_mean: est.ordering_random(trials, seed),
        exhaustive: est.ordering_exhaustive(k_max)?,
    })
}

/// Labelled matrix; `None` marks a missing value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledMatrix {
    pub rows: Vec<String>,
    pub cols: Vec<String>,
    pub values: Vec<Vec<Option<f64>>>,
}

impl LabeledMatrix {
    pub fn get(&self, row: &str, col: &str) -> Option<f64> {
        let r = self.rows.iter().position(|x| x == row)?;
        let c = self.cols.iter().position(|x| x == col)?;
        self.values[r][c]
    }

    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        let header = std::iter::once("name").chain(self.cols.iter().map(String::as_str));
        w.write_record(header).expect("in-memory write");
        for (r, vals) in self.rows.iter().zip(&self.values) {
            let cells = std::iter::once(r.clone()).chain(vals.iter().map(|v| v.map(|v| v.to_string()).unwrap_or_default()));
            w.write_record(cells).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8")
    }
}

fn mean_present(vals: &[Option<f64>]) -> f64 {
    let present: Vec<f64> = vals.iter().flatten().copied().collect();
    if present.is_empty() {
        f64::NEG_INFINITY
    } else {
        present.iter().sum::<f64>() / present.len() as f64
    }
}

/// Spearman correlation of valid scores against `val_acc` over the given rows.
pub fn proxy_spearman(table: &ScoreTable, proxy: usize, rows: &[usize]) -> Option<f64> {
    let (g, p): (Vec<f64>, Vec<f64>) = rows
        .iter()
        .filter_map(|&i| {
            let r = &table.rows()[i];
            r.scores[proxy].value().map(|s| (r.val_acc, s))
        })
        .unzip();
    spearman(&g, &p).ok()
}

pub fn table_label(t: &ScoreTable) -> String {
    format!("{}/{}", t.benchmark(), t.task())
}

/// Spearman of each proxy with `val_acc` on each table, over a seeded sample
/// of at most 1000 rows. Rows are proxies sorted by mean, columns tables.
pub fn generalization_matrix(tables: &[ScoreTable], seed: u64) -> LabeledMatrix {
    let mut proxies: Vec<String> = Vec::new();
    for t in tables {
        for p in t.proxy_ids() {
            if !proxies.contains(p) {
                proxies.push(p.clone());
            }
        }
    }
    let samples: Vec<Vec<usize>> = tables.iter().map(|t| sample_rows(t.len(), Some(1000), seed)).collect();
    let mut rows: Vec<(String, Vec<Option<f64>>)> = proxies
        .into_iter()
        .map(|p| {
            let vals = tables
                .iter()
                .zip(&samples)
                .map(|(t, s)| t.proxy_index(&p).ok().and_then(|k| proxy_spearman(t, k, s)))
                .collect();
            (p, vals)
        })
        .collect();
    rows.sort_by(|a, b| mean_present(&b.1).total_cmp(&mean_present(&a.1)).then_with(|| a.0.cmp(&b.0)));
    LabeledMatrix {
        cols: tables.iter().map(table_label).collect(),
        rows: rows.iter().map(|r| r.0.clone()).collect(),
        values: rows.into_iter().map(|r| r.1).collect(),
    }
}

/// Minimum number of shared cells for aligning scores architecture by
/// architecture.
pub const MIN_ALIGNED: usize = 30;

fn common_proxies(a: &ScoreTable, b: &ScoreTable) -> Vec<String> {
    a.proxy_ids().iter().filter(|p| b.proxy_ids().contains(p)).cloned().collect()
}

/// Correlation between two tables: the mean over common proxies of the
/// Pearson correlation of scores on shared cells when at least
/// [`MIN_ALIGNED`] cells are shared, otherwise the Pearson correlation of the
/// per-proxy Spearman profiles.
pub fn table_correlation(a: &ScoreTable, b: &ScoreTable) -> Result<Option<f64>> {
    let common = common_proxies(a, b);
    if common.is_empty() {
        return Err(AnalysisError::NoCommonProxies);
    }
    let shared: Vec<(usize, usize)> = a
        .rows()
        .iter()
        .enumerate()
        .filter_map(|(i, r)| r.cell().and_then(|c| b.row_by_cell(c)).map(|j| (i, j)))
        .collect();
    if shared.len() >= MIN_ALIGNED {
        let corrs: Vec<f64> = common
            .iter()
            .filter_map(|p| {
                let (pa, pb) = (a.proxy_index(p).ok()?, b.proxy_index(p).ok()?);
                let (x, y): (Vec<f64>, Vec<f64>) = shared
                    .iter()
                    .filter_map(|&(i, j)| Some((a.rows()[i].scores[pa].value()?, b.rows()[j].scores[pb].value()?)))
                    .unzip();
                pearson(&x, &y).ok()
            })
            .collect();
        return Ok((!corrs.is_empty()).then(|| corrs.iter().sum::<f64>() / corrs.len() as f64));
    }
    let all_a: Vec<usize> = (0..a.len()).collect();
    let all_b: Vec<usize> = (0..b.len()).collect();
    let (x, y): (Vec<f64>, Vec<f64>) = common
        .iter()
        .filter_map(|p| {
            let sa = proxy_spearman(a, a.proxy_index(p).ok()?, &all_a)?;
            let sb = proxy_spearman(b, b.proxy_index(p).ok()?, &all_b)?;
            Some((sa, sb))
        })
        .unzip();
    Ok(pearson(&x, &y).ok())
}

/// Symmetric table-by-table correlation matrix, ordered by mean.
pub fn cross_benchmark_correlation(tables: &[ScoreTable]) -> Result<LabeledMatrix> {
    if tables.len() < 2 {
        return Err(AnalysisError::Invalid("need at least two tables".into()));
    }
    let n = tables.len();
    let mut values = vec![vec![None; n]; n];
    for i in 0..n {
        values[i][i] = Some(1.0);
        for j in i + 1..n {
            let c = table_correlation(&tables[i], &tables[j])?;
            values[i][j] = c;
            values[j][i] = c;
        }
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| mean_present(&values[b]).total_cmp(&mean_present(&values[a])).then(a.cmp(&b)));
    let labels: Vec<String> = order.iter().map(|&i| table_label(&tables[i])).collect();
    Ok(LabeledMatrix {
        rows: labels.clone(),
        cols: labels,
        values: order.iter().map(|&i| order.iter().map(|&j| values[i][j]).collect()).collect(),
    })
}

/// Two-sided Mann-Whitney rank-sum test with the tie-corrected normal
/// approximation. Returns the p-value.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(AnalysisError::TooShort { need: 1, got: 0 });
    }
    let all: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&all);
    let (n1, n2) = (a.len() as f64, b.len() as f64);
    let n = n1 + n2;
    let r1: f64 = ranks[..a.len()].iter().map(|r| r + 1.0).sum();
    let u = r1 - n1 * (n1 + 1.0) / 2.0;
    let mut sorted = all.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
        let t = j as f64;
        tie_term += t * t * t - t;
        i += j;
    }
    let var = n1 * n2 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)));
    if var <= 0.0 {
        return Ok(1.0);
    }
    let z = (u - n1 * n2 / 2.0) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("standard normal");
    Ok((2.0 * normal.cdf(-z.abs())).min(1.0))
}
