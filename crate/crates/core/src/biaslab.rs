//! Bias of proxies toward structural properties, and its mitigation by
//! rescaling `f'(a) = f(a) / (b(a) + C)` with `C` chosen by grid search.
//!
//! The candidate set always contains an infinite `C`, which stands for the
//! unmodified proxy. Because that candidate is evaluated on `f` itself, the
//! performance strategy never lowers the correlation with accuracy and the
//! minimize strategy never raises the absolute bias.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analysis::{pearson, AnalysisError, LabeledMatrix};
use crate::archspace::{features_analytic, ArchFeatures, NetworkSpec};
use crate::scorestore::{ScoreTable, StoreError};

/// Name under which the accuracy column can be used in place of a proxy.
pub const VAL_ACC: &str = "val_acc";
/// Candidates with any `|b(a) + C|` below this are skipped.
pub const POLE_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum BiasError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("metric {0} needs cell encodings on every row")]
    NoEncodings(&'static str),
    #[error("bias undefined: {0}")]
    Undefined(#[from] AnalysisError),
    #[error("every candidate C is singular or degenerate")]
    NoCandidate,
    #[error("{0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, BiasError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BiasMetric {
    ConvPool,
    CellSize,
    NumSkip,
    NumParams,
}

impl BiasMetric {
    pub const ALL: [BiasMetric; 4] = [BiasMetric::ConvPool, BiasMetric::CellSize, BiasMetric::NumSkip, BiasMetric::NumParams];

    pub fn id(self) -> &'static str {
        match self {
            BiasMetric::ConvPool => "conv_pool",
            BiasMetric::CellSize => "cell_size",
            BiasMetric::NumSkip => "num_skip",
            BiasMetric::NumParams => "num_params",
        }
    }

    pub fn from_id(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|m| m.id() == s)
    }

    pub fn value(self, f: &ArchFeatures) -> f64 {
        match self {
            BiasMetric::ConvPool => f.conv_pool_ratio,
            BiasMetric::CellSize => f.cell_size as f64,
            BiasMetric::NumSkip => f.num_skip as f64,
            BiasMetric::NumParams => f.num_params as f64,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Strategy {
    /// Smallest absolute bias.
    Minimize,
    /// Bias closest to the bias of the accuracy column.
    Equalize,
    /// Largest correlation with accuracy.
    Performance,
}

impl Strategy {
    pub fn from_id(s: &str) -> Option<Self> {
        match s {
            "minimize" => Some(Strategy::Minimize),
            "equalize" => Some(Strategy::Equalize),
            "performance" => Some(Strategy::Performance),
            _ => None,
        }
    }
}

/// Chosen constant; `Infinity` means the proxy is left unchanged. Serialized
/// as a number, or as the string `"inf"`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Constant {
    Value(f64),
    Infinity,
}

impl Serialize for Constant {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        match self {
            Constant::Value(c) => s.serialize_f64(*c),
            Constant::Infinity => s.serialize_str("inf"),
        }
    }
}

impl<'de> Deserialize<'de> for Constant {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        match serde_json::Value::deserialize(d)? {
            serde_json::Value::Number(n) => n.as_f64().map(Constant::Value).ok_or_else(|| serde::de::Error::custom("bad number")),
            serde_json::Value::String(s) if s == "inf" => Ok(Constant::Infinity),
            other => Err(serde::de::Error::custom(format!("expected a number or \"inf\", got {other}"))),
        }
    }
}

impl std::fmt::Display for Constant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Constant::Value(c) => write!(f, "{c}"),
            Constant::Infinity => f.write_str("inf"),
        }
    }
}

impl Constant {
    fn order_key(self) -> f64 {
        match self {
            Constant::Value(c) => c,
            Constant::Infinity => f64::INFINITY,
        }
    }
}

/// Uniform grid of `steps` intervals over `[lo, hi]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    pub lo: f64,
    pub hi: f64,
    pub steps: usize,
}

impl Default for Grid {
    fn default() -> Self {
        Self {
            lo: -10.0,
            hi: 1000.0,
            steps: 10_000,
        }
    }
}

impl Grid {
    pub fn candidates(&self) -> Vec<Constant> {
        let mut out: Vec<Constant> = (0..=self.steps)
            .map(|i| {
                let t = if self.steps == 0 { 0.0 } else { i as f64 / self.steps as f64 };
                Constant::Value(self.lo + t * (self.hi - self.lo))
            })
            .collect();
        out.push(Constant::Infinity);
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MitigationResult {
    pub proxy: String,
    pub metric: BiasMetric,
    pub strategy: Strategy,
    pub c: Constant,
    pub original_bias: f64,
    pub new_bias: f64,
    pub original_perf: f64,
    pub new_perf: f64,
}

/// Metric values per row, or `None` if some row has no cell encoding.
pub fn metric_values(table: &ScoreTable, metric: BiasMetric, spec: &NetworkSpec) -> Option<Vec<f64>> {
    table
        .rows()
        .iter()
        .map(|r| r.cell().map(|c| metric.value(&features_analytic(c, spec))))
        .collect()
}

/// Per-row scores of a proxy, or the accuracy column for [`VAL_ACC`].
pub fn proxy_values(table: &ScoreTable, proxy: &str) -> Result<Vec<Option<f64>>> {
    if proxy == VAL_ACC {
        return Ok(table.rows().iter().map(|r| Some(r.val_acc)).collect());
    }
    Ok(table.column(proxy)?)
}

/// Rows where the proxy is valid: (score, metric, accuracy).
fn aligned(table: &ScoreTable, proxy: &str, metric: BiasMetric, spec: &NetworkSpec) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
    let b = metric_values(table, metric, spec).ok_or(BiasError::NoEncodings(metric.id()))?;
    let f = proxy_values(table, proxy)?;
    let mut out = (Vec::new(), Vec::new(), Vec::new());
    for ((f, b), r) in f.iter().zip(&b).zip(table.rows()) {
        if let Some(f) = f {
            out.0.push(*f);
            out.1.push(*b);
            out.2.push(r.val_acc);
        }
    }
    Ok(out)
}

/// Pearson correlation between a proxy's scores and a structural metric.
pub fn bias(table: &ScoreTable, proxy: &str, metric: BiasMetric) -> Result<f64> {
    bias_with_spec(table, proxy, metric, &NetworkSpec::default())
}

pub fn bias_with_spec(table: &ScoreTable, proxy: &str, metric: BiasMetric, spec: &NetworkSpec) -> Result<f64> {
    let (f, b, _) = aligned(table, proxy, metric, spec)?;
    Ok(pearson(&f, &b)?)
}

/// Rescaled scores for one constant, or `None` at a pole.
pub fn rescale(f: &[f64], b: &[f64], c: Constant) -> Option<Vec<f64>> {
    match c {
        Constant::Infinity => Some(f.to_vec()),
        Constant::Value(c) => {
            if b.iter().any(|&b| (b + c).abs() < POLE_TOLERANCE) {
                return None;
            }
            Some(f.iter().zip(b).map(|(f, b)| f / (b + c)).collect())
        }
    }
}

/// Grid search over `C` on the rows where the proxy is valid.
pub fn mitigate(table: &ScoreTable, proxy: &str, metric: BiasMetric, strategy: Strategy, grid: &Grid) -> Result<MitigationResult> {
    let spec = NetworkSpec::default();
    let (f, b, y) = aligned(table, proxy, metric, &spec)?;
    let val_bias = match strategy {
        Strategy::Equalize => Some(bias_with_spec(table, VAL_ACC, metric, &spec)?),
        _ => None,
    };
    mitigate_vectors(proxy, metric, strategy, &f, &b, &y, val_bias, grid)
}

/// [`mitigate`] over explicit vectors: proxy scores `f`, metric `b`, accuracy `y`.
#[allow(clippy::too_many_arguments)]
pub fn mitigate_vectors(
    proxy: &str,
    metric: BiasMetric,
    strategy: Strategy,
    f: &[f64],
    b: &[f64],
    y: &[f64],
    val_bias: Option<f64>,
    grid: &Grid,
) -> Result<MitigationResult> {
    let original_bias = pearson(f, b)?;
    let original_perf = pearson(f, y)?;
    let target = val_bias.unwrap_or(0.0);
    let scored: Vec<Option<(Constant, f64, f64, f64)>> = grid
        .candidates()
        .into_par_iter()
        .map(|c| {
            let g = rescale(f, b, c)?;
            let nb = pearson(&g, b).ok()?;
            let np = pearson(&g, y).ok()?;
            let loss = match strategy {
                Strategy::Minimize => nb.abs(),
                Strategy::Equalize => (nb - target).abs(),
                Strategy::Performance => -np,
            };
            Some((c, loss, nb, np))
        })
        .collect();
    let best = scored
        .into_iter()
        .flatten()
        .reduce(|best, cand| {
            let better = cand.1 < best.1 || (cand.1 == best.1 && cand.0.order_key() > best.0.order_key());
            if better {
                cand
            } else {
                best
            }
        })
        .ok_or(BiasError::NoCandidate)?;
    Ok(MitigationResult {
        proxy: proxy.to_string(),
        metric,
        strategy,
        c: best.0,
        original_bias,
        new_bias: best.2,
        original_perf,
        new_perf: best.3,
    })
}

/// Bias of every proxy and of the accuracy column against every metric.
/// Missing where the table has no cell encodings or the correlation is
/// undefined.
pub fn bias_report(table: &ScoreTable) -> LabeledMatrix {
    let mut rows: Vec<String> = table.proxy_ids().to_vec();
    rows.push(VAL_ACC.to_string());
    let values = rows
        .iter()
        .map(|p| BiasMetric::ALL.iter().map(|&m| bias(table, p, m).ok()).collect())
        .collect();
    LabeledMatrix {
        rows,
        cols: BiasMetric::ALL.iter().map(|m| m.id().to_string()).collect(),
        values,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rescale_point_check() {
        assert_eq!(rescale(&[10.0], &[4.0], Constant::Value(1.0)).unwrap(), vec![2.0]);
        assert!(rescale(&[10.0], &[4.0], Constant::Value(-4.0)).is_none());
    }

    #[test]
    fn grid_has_sentinel_and_endpoints() {
        let c = Grid::default().candidates();
        assert_eq!(c.len(), 10_002);
        assert_eq!(c[0], Constant::Value(-10.0));
        assert_eq!(c[10_000], Constant::Value(1000.0));
        assert_eq!(c[10_001], Constant::Infinity);
    }

    #[test]
    fn constant_serializes_infinity_as_tag() {
        assert_eq!(serde_json::to_string(&Constant::Infinity).unwrap(), "\"inf\"");
        assert_eq!(serde_json::from_str::<Constant>("\"inf\"").unwrap(), Constant::Infinity);
        assert_eq!(serde_json::from_str::<Constant>("2.5").unwrap(), Constant::Value(2.5));
    }

    #[test]
    fn perfect_proxy_keeps_sentinel() {
        let y: Vec<f64> = (0..50).map(|i| (i as f64 * 0.37).sin() + i as f64 * 0.1).collect();
        let b: Vec<f64> = (0..50).map(|i| (i % 7) as f64).collect();
        let r = mitigate_vectors("p", BiasMetric::CellSize, Strategy::Performance, &y, &b, &y, None, &Grid::default()).unwrap();
        assert_eq!(r.c, Constant::Infinity);
        assert_eq!(r.new_perf, 1.0);
        assert_eq!(r.original_perf, 1.0);
    }

    #[test]
    fn singular_candidates_are_skipped() {
        let grid = Grid { lo: 2.0, hi: 2.0, steps: 0 };
        let f = [1.0, 2.0, 3.0];
        let b = [-2.0, 1.0, 0.0];
        let y = [1.0, 3.0, 2.0];
        let r = mitigate_vectors("p", BiasMetric::CellSize, Strategy::Minimize, &f, &b, &y, None, &grid).unwrap();
        assert_eq!(r.c, Constant::Infinity);
    }
}
