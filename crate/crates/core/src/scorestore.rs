//! Score tables: the canonical on-disk format, import adapters, a synthetic
//! benchmark generator, incremental computation, and constant-time queries.
//!
//! A table file is JSON with sorted keys, one row per line:
//!
//! ```text
//! {"benchmark":..,"proxy_ids":[..],"rows":[
//! {"encoding":..,"id":..,"scores":{"epe_nas":{"score":..,"seconds":..,"valid":true},..},"val_acc":..},
//! ...
//! ],"schema_version":1,"task":..,"task_kind":"classification"}
//! ```
//!
//! Floats are printed in shortest round-trip form, so save followed by load
//! reproduces every value bit for bit.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{self, File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::archspace::{build_network, features_analytic, ArchFeatures, CellEncoding, CellOp, NetworkSpec, SPACE_SIZE};
use crate::proxies::{compute_all, Minibatch, Proxy, ProxyResult, TaskKind};

pub const SCHEMA_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("malformed table: {0}")]
    Json(#[from] serde_json::Error),
    #[error("unsupported schema version {found} (expected {expected})")]
    Schema { found: u64, expected: u64 },
    #[error("duplicate architecture id {0:?}")]
    DuplicateId(String),
    #[error("unknown architecture id {0:?}")]
    UnknownArch(String),
    #[error("unknown proxy id {0:?}")]
    UnknownProxy(String),
    #[error("unknown import format {format:?}; registered adapters: {}", registered.join(", "))]
    UnknownFormat { format: String, registered: Vec<String> },
    #[error("ground truth required: row {0:?} has no validation accuracy")]
    MissingGroundTruth(String),
    #[error("invalid table: {0}")]
    Invalid(String),
}

pub type Result<T> = std::result::Result<T, StoreError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Architecture description carried by a row.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Encoding {
    Cell(CellEncoding),
    Opaque(Vec<f64>),
}

impl Encoding {
    pub fn cell(&self) -> Option<&CellEncoding> {
        match self {
            Encoding::Cell(c) => Some(c),
            Encoding::Opaque(_) => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub id: String,
    pub encoding: Option<Encoding>,
    pub val_acc: f64,
    pub train_time: Option<f64>,
    /// Aligned with the table's proxy ids.
    pub scores: Vec<ProxyResult>,
    pub extras: Option<Value>,
    /// Set when computing this row failed.
    pub error: Option<String>,
}

impl Row {
    pub fn cell(&self) -> Option<&CellEncoding> {
        self.encoding.as_ref().and_then(Encoding::cell)
    }
}

#[derive(Serialize, Deserialize)]
struct ScoreEntry {
    score: f64,
    seconds: f64,
    valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    reason: Option<String>,
}

#[derive(Serialize, Deserialize)]
struct RowFile {
    id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    encoding: Option<Encoding>,
    val_acc: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    train_time: Option<f64>,
    scores: BTreeMap<String, ScoreEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    extras: Option<Value>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    error: Option<String>,
}

#[derive(Deserialize)]
struct TableFile {
    benchmark: String,
    task: String,
    task_kind: TaskKind,
    proxy_ids: Vec<String>,
    rows: Vec<RowFile>,
}

fn row_to_file(row: &Row, proxy_ids: &[String]) -> RowFile {
    RowFile {
        id: row.id.clone(),
        encoding: row.encoding.clone(),
        val_acc: row.val_acc,
        train_time: row.train_time,
        scores: proxy_ids
            .iter()
            .zip(&row.scores)
            .map(|(p, r)| {
                (
                    p.clone(),
                    ScoreEntry {
                        score: r.score,
                        seconds: r.seconds,
                        valid: r.valid,
                        reason: r.reason.clone(),
                    },
                )
            })
            .collect(),
        extras: row.extras.clone(),
        error: row.error.clone(),
    }
}

fn row_from_file(mut f: RowFile, proxy_ids: &[String]) -> Result<Row> {
    let scores = proxy_ids
        .iter()
        .map(|p| {
            let e = f
                .scores
                .remove(p)
                .ok_or_else(|| StoreError::Invalid(format!("row {:?} lacks proxy {p:?}", f.id)))?;
            Ok(ProxyResult {
                name: p.clone(),
                score: e.score,
                seconds: e.seconds,
                valid: e.valid,
                reason: e.reason,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    if let Some(extra) = f.scores.keys().next() {
        return Err(StoreError::Invalid(format!("row {:?} has undeclared proxy {extra:?}", f.id)));
    }
    Ok(Row {
        id: f.id,
        encoding: f.encoding,
        val_acc: f.val_acc,
        train_time: f.train_time,
        scores,
        extras: f.extras,
        error: f.error,
    })
}

/// Immutable benchmark table with hashed lookups by architecture and proxy.
#[derive(Debug, Clone)]
pub struct ScoreTable {
    benchmark: String,
    task: String,
    task_kind: TaskKind,
    proxy_ids: Vec<String>,
    rows: Vec<Row>,
    by_id: HashMap<String, usize>,
    by_proxy: HashMap<String, usize>,
    by_encoding: HashMap<usize, usize>,
}

impl PartialEq for ScoreTable {
    fn eq(&self, other: &Self) -> bool {
        self.benchmark == other.benchmark
            && self.task == other.task
            && self.task_kind == other.task_kind
            && self.proxy_ids == other.proxy_ids
            && self.rows == other.rows
    }
}

impl ScoreTable {
    pub fn new(
        benchmark: impl Into<String>,
        task: impl Into<String>,
        task_kind: TaskKind,
        proxy_ids: Vec<String>,
        rows: Vec<Row>,
    ) -> Result<Self> {
        let by_proxy: HashMap<String, usize> = proxy_ids.iter().enumerate().map(|(i, p)| (p.clone(), i)).collect();
        if by_proxy.len() != proxy_ids.len() {
            return Err(StoreError::Invalid("repeated proxy id".into()));
        }
        let mut by_id = HashMap::with_capacity(rows.len());
        let mut by_encoding = HashMap::new();
        for (i, row) in rows.iter().enumerate() {
            if by_id.insert(row.id.clone(), i).is_some() {
                return Err(StoreError::DuplicateId(row.id.clone()));
            }
            if !row.val_acc.is_finite() {
                return Err(StoreError::Invalid(format!("row {:?} has non-finite val_acc", row.id)));
            }
            if row.scores.len() != proxy_ids.len() || row.scores.is_empty() {
                return Err(StoreError::Invalid(format!(
                    "row {:?} has {} scores for {} proxies",
                    row.id,
                    row.scores.len(),
                    proxy_ids.len()
                )));
            }
            if let Some(c) = row.cell() {
                by_encoding.insert(c.index(), i);
            }
        }
        Ok(Self {
            benchmark: benchmark.into(),
            task: task.into(),
            task_kind,
            proxy_ids,
            rows,
            by_id,
            by_proxy,
            by_encoding,
        })
    }

    pub fn benchmark(&self) -> &str {
        &self.benchmark
    }

    pub fn task(&self) -> &str {
        &self.task
    }

    pub fn task_kind(&self) -> TaskKind {
        self.task_kind
    }

    pub fn proxy_ids(&self) -> &[String] {
        &self.proxy_ids
    }

    pub fn rows(&self) -> &[Row] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    /// Number of stored (architecture, proxy) entries.
    pub fn entry_count(&self) -> usize {
        self.rows.len() * self.proxy_ids.len()
    }

    pub fn row(&self, arch_id: &str) -> Result<&Row> {
        self.by_id
            .get(arch_id)
            .map(|&i| &self.rows[i])
            .ok_or_else(|| StoreError::UnknownArch(arch_id.to_string()))
    }

    pub fn row_index(&self, arch_id: &str) -> Option<usize> {
        self.by_id.get(arch_id).copied()
    }

    /// Row holding the given cell, if any.
    pub fn row_by_cell(&self, enc: &CellEncoding) -> Option<usize> {
        self.by_encoding.get(&enc.index()).copied()
    }

    pub fn proxy_index(&self, proxy_id: &str) -> Result<usize> {
        self.by_proxy
            .get(proxy_id)
            .copied()
            .ok_or_else(|| StoreError::UnknownProxy(proxy_id.to_string()))
    }

    /// Stored result for one architecture and proxy.
    pub fn query(&self, arch_id: &str, proxy_id: &str) -> Result<&ProxyResult> {
        let p = self.proxy_index(proxy_id)?;
        Ok(&self.row(arch_id)?.scores[p])
    }

    /// Scores of one proxy over all rows; `None` where invalid.
    pub fn column(&self, proxy_id: &str) -> Result<Vec<Option<f64>>> {
        let p = self.proxy_index(proxy_id)?;
        Ok(self.rows.iter().map(|r| r.scores[p].value()).collect())
    }

    pub fn val_accs(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.val_acc).collect()
    }

    /// Copy restricted to the given row positions.
    pub fn subset(&self, indices: &[usize]) -> Result<ScoreTable> {
        let rows = indices.iter().map(|&i| self.rows[i].clone()).collect();
        ScoreTable::new(&*self.benchmark, &*self.task, self.task_kind, self.proxy_ids.clone(), rows)
    }

    pub fn to_json(&self) -> Result<String> {
        let mut out = String::new();
        let head = |v: &str| serde_json::to_string(v);
        out.push_str(&format!(
            "{{\"benchmark\":{},\"proxy_ids\":{},\"rows\":[",
            head(&self.benchmark)?,
            serde_json::to_string(&self.proxy_ids)?
        ));
        for (i, row) in self.rows.iter().enumerate() {
            out.push_str(if i == 0 { "\n" } else { ",\n" });
            out.push_str(&row_json(row, &self.proxy_ids)?);
        }
        if !self.rows.is_empty() {
            out.push('\n');
        }
        out.push_str(&format!(
            "],\"schema_version\":{},\"task\":{},\"task_kind\":{}}}\n",
            SCHEMA_VERSION,
            head(&self.task)?,
            serde_json::to_string(&self.task_kind)?
        ));
        Ok(out)
    }

    pub fn from_json(text: &str) -> Result<ScoreTable> {
        let value: Value = serde_json::from_str(text)?;
        let found = value
            .get("schema_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| StoreError::Invalid("missing schema_version".into()))?;
        if found != SCHEMA_VERSION {
            return Err(StoreError::Schema {
                found,
                expected: SCHEMA_VERSION,
            });
        }
        let file: TableFile = serde_json::from_value(value)?;
        let rows = file
            .rows
            .into_iter()
            .map(|r| row_from_file(r, &file.proxy_ids))
            .collect::<Result<Vec<_>>>()?;
        ScoreTable::new(file.benchmark, file.task, file.task_kind, file.proxy_ids, rows)
    }
}

/// One row as a single line of JSON with sorted keys.
fn row_json(row: &Row, proxy_ids: &[String]) -> Result<String> {
    let v = serde_json::to_value(row_to_file(row, proxy_ids))?;
    Ok(serde_json::to_string(&v)?)
}

pub fn save(table: &ScoreTable, path: &Path) -> Result<()> {
    let tmp = path.with_extension("tmp");
    fs::write(&tmp, table.to_json()?).map_err(io_err(&tmp))?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

pub fn load(path: &Path) -> Result<ScoreTable> {
    ScoreTable::from_json(&fs::read_to_string(path).map_err(io_err(path))?)
}

pub const IMPORT_FORMATS: [&str; 2] = ["canonical", "naslib-zc[:task]"];

/// Operation order of cell tuples in the NASLib files.
const NASLIB_OPS: [CellOp; 5] = [CellOp::Skip, CellOp::Zero, CellOp::Conv3x3, CellOp::Conv1x1, CellOp::AvgPool3x3];
/// Position in our edge order of each tuple entry; tuples list edges sorted
/// by source node, ours by target node.
const NASLIB_EDGE_ORDER: [usize; 6] = [0, 1, 3, 2, 4, 5];
const NON_CLASSIFICATION_TASKS: [&str; 5] = ["autoencoder", "normal", "room_layout", "segmentsemantic", "ninapro_regression"];

/// Loads a table written by another tool and normalizes it.
pub fn import_external(path: &Path, format: &str) -> Result<ScoreTable> {
    let (name, arg) = format.split_once(':').map_or((format, None), |(n, a)| (n, Some(a)));
    match name {
        "canonical" => load(path),
        "naslib-zc" => {
            let text = fs::read_to_string(path).map_err(io_err(path))?;
            import_naslib(&serde_json::from_str(&text)?, arg)
        }
        _ => Err(StoreError::UnknownFormat {
            format: format.to_string(),
            registered: IMPORT_FORMATS.iter().map(|s| s.to_string()).collect(),
        }),
    }
}

fn parse_naslib_key(key: &str) -> Option<Encoding> {
    if let Ok(c) = key.parse::<CellEncoding>() {
        return Some(Encoding::Cell(c));
    }
    let inner = key.trim().trim_start_matches(['(', '[']).trim_end_matches([')', ']']);
    let nums: Vec<f64> = inner
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .ok()?;
    let as_ops: Option<Vec<CellOp>> = nums
        .iter()
        .map(|&v| (v.fract() == 0.0 && (0.0..5.0).contains(&v)).then(|| NASLIB_OPS[v as usize]))
        .collect();
    match as_ops {
        Some(ops) if ops.len() == 6 => {
            let mut cell = [CellOp::Zero; 6];
            for (k, op) in ops.into_iter().enumerate() {
                cell[NASLIB_EDGE_ORDER[k]] = op;
            }
            Some(Encoding::Cell(CellEncoding::new(cell)))
        }
        _ => Some(Encoding::Opaque(nums)),
    }
}

fn import_naslib(root: &Value, task: Option<&str>) -> Result<ScoreTable> {
    let top = root.as_object().ok_or_else(|| StoreError::Invalid("expected a JSON object".into()))?;
    let (task_name, archs) = match task {
        Some(t) => (
            t.to_string(),
            top.get(t)
                .and_then(Value::as_object)
                .ok_or_else(|| StoreError::Invalid(format!("task {t:?} not found")))?,
        ),
        None if top.len() == 1 => {
            let (k, v) = top.iter().next().expect("one entry");
            (k.clone(), v.as_object().ok_or_else(|| StoreError::Invalid(format!("task {k:?} is not an object")))?)
        }
        None => {
            return Err(StoreError::Invalid(format!(
                "file holds several tasks; choose one of: {}",
                top.keys().cloned().collect::<Vec<_>>().join(", ")
            )))
        }
    };
    let mut present = HashSet::new();
    for entry in archs.values().filter_map(Value::as_object) {
        present.extend(entry.keys().filter_map(|k| Proxy::from_id(k)));
    }
    let proxies: Vec<Proxy> = Proxy::ALL.into_iter().filter(|p| present.contains(p)).collect();
    let proxy_ids: Vec<String> = proxies.iter().map(|p| p.id().to_string()).collect();
    let mut rows = Vec::with_capacity(archs.len());
    let mut all_cells = true;
    for (key, entry) in archs {
        let entry = entry
            .as_object()
            .ok_or_else(|| StoreError::Invalid(format!("entry {key:?} is not an object")))?;
        let encoding = parse_naslib_key(key);
        let cell = encoding.as_ref().and_then(Encoding::cell).copied();
        all_cells &= cell.is_some();
        let id = cell.map_or_else(|| key.clone(), |c| c.index().to_string());
        let mut val_acc = None;
        let mut train_time = None;
        let mut found: HashMap<Proxy, ProxyResult> = HashMap::new();
        let mut extras = serde_json::Map::new();
        for (field, v) in entry {
            match field.as_str() {
                "val_accuracy" | "val_acc" => val_acc = v.as_f64(),
                "train_time" | "training_time" => train_time = v.as_f64(),
                _ => match Proxy::from_id(field) {
                    Some(p) => {
                        let (score, secs) = match v {
                            Value::Object(o) => (
                                o.get("score").and_then(Value::as_f64),
                                o.get("time").or_else(|| o.get("seconds")).and_then(Value::as_f64),
                            ),
                            other => (other.as_f64(), None),
                        };
                        let secs = secs.unwrap_or(0.0);
                        let r = match score {
                            Some(s) if s.is_finite() => ProxyResult::valid(p.id(), s, secs),
                            _ => ProxyResult::invalid(p.id(), secs, "missing or non-finite score"),
                        };
                        found.insert(p, r);
                    }
                    None => {
                        extras.insert(field.clone(), v.clone());
                    }
                },
            }
        }
        let val_acc = val_acc.ok_or_else(|| StoreError::MissingGroundTruth(key.clone()))?;
        let scores = proxies
            .iter()
            .map(|p| found.remove(p).unwrap_or_else(|| ProxyResult::invalid(p.id(), 0.0, "not present in source")))
            .collect();
        rows.push(Row {
            id,
            encoding,
            val_acc,
            train_time,
            scores,
            extras: (!extras.is_empty()).then_some(Value::Object(extras)),
            error: None,
        });
    }
    let kind = if NON_CLASSIFICATION_TASKS.contains(&task_name.as_str()) {
        TaskKind::Regression
    } else {
        TaskKind::Classification
    };
    let benchmark = if all_cells && !rows.is_empty() { "nb201" } else { "external" };
    ScoreTable::new(benchmark, task_name, kind, proxy_ids, rows)
}

/// Planted weights of the structural features in the synthetic accuracy.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct FeatureWeights {
    pub conv_pool: f64,
    pub cell_size: f64,
    pub num_skip: f64,
    pub num_params: f64,
}

impl FeatureWeights {
    fn as_array(&self) -> [f64; 4] {
        [self.conv_pool, self.cell_size, self.num_skip, self.num_params]
    }
}

fn feature_array(f: &ArchFeatures) -> [f64; 4] {
    [f.conv_pool_ratio, f.cell_size as f64, f.num_skip as f64, f.num_params as f64]
}

/// How one synthetic proxy column is produced.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticProxy {
    /// `fidelity · z(val_acc) + (1 − |fidelity|) · noise + Σ bias · z(feature)`,
    /// then rank-standardized to `[0, 1]`.
    Planted { fidelity: f64, bias: FeatureWeights },
    /// The parameter count itself.
    ParamCount,
}

impl SyntheticProxy {
    pub fn planted(fidelity: f64) -> Self {
        SyntheticProxy::Planted {
            fidelity,
            bias: FeatureWeights::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub benchmark: String,
    pub task: String,
    pub task_kind: TaskKind,
    pub n_archs: usize,
    pub noise_sd: f64,
    pub weights: FeatureWeights,
    /// One entry per catalog proxy, in catalog order.
    pub proxies: Vec<SyntheticProxy>,
    pub network: NetworkSpec,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let planted = |f: f64, cell_size: f64| SyntheticProxy::Planted {
            fidelity: f,
            bias: FeatureWeights {
                cell_size,
                ..FeatureWeights::default()
            },
        };
        Self {
            benchmark: "synthetic".into(),
            task: "planted".into(),
            task_kind: TaskKind::Classification,
            n_archs: 1000,
            noise_sd: 0.5,
            weights: FeatureWeights {
                conv_pool: 0.5,
                cell_size: 0.3,
                num_skip: -0.3,
                num_params: 0.6,
            },
            proxies: vec![
                planted(0.35, 0.0),
                planted(0.35, 0.2),
                planted(0.6, 0.3),
                planted(0.4, 0.2),
                planted(0.3, 0.0),
                planted(0.55, 0.3),
                planted(0.6, 0.1),
                planted(0.75, 0.2),
                SyntheticProxy::ParamCount,
                planted(0.1, 0.0),
                planted(0.45, 0.2),
                planted(0.7, 0.5),
                planted(0.7, 0.3),
            ],
            network: NetworkSpec::default(),
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        if !(10..=SPACE_SIZE).contains(&self.n_archs) {
            return Err(StoreError::Invalid(format!("n_archs must lie in [10, {SPACE_SIZE}]")));
        }
        if self.proxies.len() != Proxy::ALL.len() {
            return Err(StoreError::Invalid(format!("expected {} proxy specs", Proxy::ALL.len())));
        }
        for p in &self.proxies {
            if let SyntheticProxy::Planted { fidelity, .. } = p {
                if !(-1.0..=1.0).contains(fidelity) {
                    return Err(StoreError::Invalid(format!("fidelity {fidelity} outside [-1, 1]")));
                }
            }
        }
        if !self.noise_sd.is_finite() || self.noise_sd < 0.0 {
            return Err(StoreError::Invalid("noise_sd must be finite and non-negative".into()));
        }
        self.network
            .validate()
            .map_err(|e| StoreError::Invalid(e.to_string()))
    }

    pub fn set_fidelity(&mut self, proxy: Proxy, fidelity: f64) {
        let i = Proxy::ALL.iter().position(|&p| p == proxy).expect("catalog proxy");
        self.proxies[i] = SyntheticProxy::planted(fidelity);
    }
}

/// Standardizes to mean 0 and unit variance; constant input maps to zeros.
pub fn zscore(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n).sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / sd).collect()
}

/// Average ranks scaled to `[0, 1]`.
fn rank_standardize(xs: &[f64]) -> Vec<f64> {
    let ranks = crate::analysis::average_ranks(xs);
    let top = (xs.len().max(2) - 1) as f64;
    ranks.into_iter().map(|r| r / top).collect()
}

fn sample_cells(n: usize, rng: &mut ChaCha8Rng) -> Vec<CellEncoding> {
    let mut idx = if n == SPACE_SIZE {
        (0..SPACE_SIZE).collect()
    } else {
        sample_indices(rng, SPACE_SIZE, n).into_vec()
    };
    idx.sort_unstable();
    idx.into_iter().map(|i| CellEncoding::from_index(i).expect("in range")).collect()
}

/// Builds a table with planted accuracy and proxy structure.
pub fn generate_synthetic(spec: &SyntheticSpec, seed: u64) -> Result<ScoreTable> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cells = sample_cells(spec.n_archs, &mut rng);
    let feats: Vec<[f64; 4]> = cells
        .iter()
        .map(|c| feature_array(&features_analytic(c, &spec.network)))
        .collect();
    let zfeat: Vec<Vec<f64>> = (0..4)
        .map(|j| zscore(&feats.iter().map(|f| f[j]).collect::<Vec<_>>()))
        .collect();
    let n = cells.len();
    let w = spec.weights.as_array();
    let val: Vec<f64> = (0..n)
        .map(|i| {
            let structural: f64 = (0..4).map(|j| w[j] * zfeat[j][i]).sum();
            structural + spec.noise_sd * rng.sample::<f64, _>(StandardNormal)
        })
        .collect();
    let zval = zscore(&val);
    let columns: Vec<Vec<f64>> = spec
        .proxies
        .iter()
        .map(|p| match *p {
            SyntheticProxy::ParamCount => feats.iter().map(|f| f[3]).collect(),
            SyntheticProxy::Planted { fidelity, bias } => {
                let b = bias.as_array();
                let raw: Vec<f64> = (0..n)
                    .map(|i| {
                        let noise: f64 = rng.sample(StandardNormal);
                        let planted: f64 = (0..4).map(|j| b[j] * zfeat[j][i]).sum();
                        fidelity * zval[i] + (1.0 - fidelity.abs()) * noise + planted
                    })
                    .collect();
                rank_standardize(&raw)
            }
        })
        .collect();
    let undefined = |p: Proxy| spec.task_kind == TaskKind::Regression && matches!(p, Proxy::EpeNas | Proxy::Synflow);
    let rows = (0..n)
        .map(|i| {
            let scores = Proxy::ALL
                .iter()
                .enumerate()
                .map(|(k, &p)| {
                    let seconds = rng.random_range(0.5..4.7);
                    if undefined(p) {
                        ProxyResult::invalid(p.id(), seconds, "undefined for this task")
                    } else {
                        ProxyResult::valid(p.id(), columns[k][i], seconds)
                    }
                })
                .collect();
            Row {
                id: cells[i].index().to_string(),
                encoding: Some(Encoding::Cell(cells[i])),
                val_acc: val[i],
                train_time: Some(rng.random_range(1000.0..5000.0)),
                scores,
                extras: None,
                error: None,
            }
        })
        .collect();
    ScoreTable::new(&*spec.benchmark, &*spec.task, spec.task_kind, Proxy::catalog_ids(), rows)
}

/// Ground truth for computed rows, keyed by architecture id.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Truth {
    pub val_acc: f64,
    pub train_time: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct ComputeOptions {
    pub benchmark: String,
    pub task: String,
    pub task_kind: TaskKind,
    pub batch_size: usize,
    pub seed: u64,
    /// Rows computed between log flushes.
    pub chunk_size: usize,
    pub truth: Option<HashMap<String, Truth>>,
}

impl Default for ComputeOptions {
    fn default() -> Self {
        Self {
            benchmark: "nb201".into(),
            task: "desk".into(),
            task_kind: TaskKind::Classification,
            batch_size: crate::proxies::DEFAULT_BATCH_SIZE,
            seed: 0,
            chunk_size: 64,
            truth: None,
        }
    }
}

fn mix(seed: u64, k: u64) -> u64 {
    let mut z = seed ^ k.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Deterministic stand-in accuracy for computed rows without ground truth:
/// a fixed structural function of the cell plus seeded noise.
pub fn planted_accuracy(enc: &CellEncoding, spec: &NetworkSpec, seed: u64) -> f64 {
    let f = features_analytic(enc, spec);
    let noise: f64 = ChaCha8Rng::seed_from_u64(mix(seed, enc.index() as u64 + 1)).sample(StandardNormal);
    50.0 + 3.0 * f.conv_pool_ratio + 2.0 * f.cell_size as f64 - 1.5 * f.num_skip as f64
        + 1e-3 * f.num_params as f64
        + noise
}

fn compute_row(enc: &CellEncoding, spec: &NetworkSpec, batch: &Minibatch, opts: &ComputeOptions) -> Row {
    let id = enc.index().to_string();
    let (val_acc, train_time) = match opts.truth.as_ref().and_then(|t| t.get(&id)) {
        Some(t) => (t.val_acc, t.train_time),
        None => (planted_accuracy(enc, spec, opts.seed), None),
    };
    let result = catch_unwind(AssertUnwindSafe(|| {
        let net = build_network(enc, spec, mix(opts.seed, enc.index() as u64));
        compute_all(&net, batch, opts.task_kind, opts.seed)
    }));
    let (scores, error) = match result {
        Ok(s) => (s, None),
        Err(panic) => {
            let msg = panic
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| panic.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "worker panicked".into());
            let s = Proxy::ALL.iter().map(|p| ProxyResult::invalid(p.id(), 0.0, msg.clone())).collect();
            (s, Some(msg))
        }
    };
    Row {
        id,
        encoding: Some(Encoding::Cell(*enc)),
        val_acc,
        train_time,
        scores,
        extras: None,
        error,
    }
}

fn log_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".log");
    PathBuf::from(s)
}

/// Rows already present in an append log; a torn final line is ignored.
fn read_log(path: &Path, proxy_ids: &[String]) -> Result<HashMap<String, Row>> {
    let mut done = HashMap::new();
    let Ok(file) = File::open(path) else {
        return Ok(done);
    };
    for line in BufReader::new(file).lines() {
        let line = line.map_err(io_err(path))?;
        let Ok(rf) = serde_json::from_str::<RowFile>(&line) else {
            continue;
        };
        if let Ok(row) = row_from_file(rf, proxy_ids) {
            done.insert(row.id.clone(), row);
        }
    }
    Ok(done)
}

/// Computes every proxy for every encoding, appending finished rows to
/// `<path>.log` and compacting into `path` at the end. A rerun after an
/// interruption resumes from the log.
pub fn compute_and_store(
    encodings: &[CellEncoding],
    spec: &NetworkSpec,
    opts: &ComputeOptions,
    path: &Path,
) -> Result<ScoreTable> {
    spec.validate().map_err(|e| StoreError::Invalid(e.to_string()))?;
    let proxy_ids = Proxy::catalog_ids();
    let log = log_path(path);
    let mut done = read_log(&log, &proxy_ids)?;
    let batch = Minibatch::synthetic(spec, opts.batch_size, opts.seed);
    let todo: Vec<CellEncoding> = {
        let mut seen = HashSet::new();
        encodings
            .iter()
            .filter(|e| seen.insert(e.index()) && !done.contains_key(&e.index().to_string()))
            .copied()
            .collect()
    };
    let mut writer = BufWriter::new(
        OpenOptions::new()
            .create(true)
            .append(true)
            .open(&log)
            .map_err(io_err(&log))?,
    );
    for chunk in todo.chunks(opts.chunk_size.max(1)) {
        let rows: Vec<Row> = chunk
            .par_iter()
            .map(|enc| compute_row(enc, spec, &batch, opts))
            .collect();
        for row in rows {
            writeln!(writer, "{}", row_json(&row, &proxy_ids)?).map_err(io_err(&log))?;
            done.insert(row.id.clone(), row);
        }
        writer.flush().map_err(io_err(&log))?;
    }
    drop(writer);
    let mut seen = HashSet::new();
    let rows: Vec<Row> = encodings
        .iter()
        .filter(|e| seen.insert(e.index()))
        .map(|e| done.remove(&e.index().to_string()).expect("row computed"))
        .collect();
    let table = ScoreTable::new(&*opts.benchmark, &*opts.task, opts.task_kind, proxy_ids, rows)?;
    save(&table, path)?;
    fs::remove_file(&log).map_err(io_err(&log))?;
    Ok(table)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_spec(n: usize) -> SyntheticSpec {
        SyntheticSpec {
            n_archs: n,
            ..SyntheticSpec::default()
        }
    }

    #[test]
    fn empty_table_round_trips() {
        let t = ScoreTable::new("b", "t", TaskKind::Classification, Proxy::catalog_ids(), vec![]).unwrap();
        let back = ScoreTable::from_json(&t.to_json().unwrap()).unwrap();
        assert_eq!(back.len(), 0);
        assert_eq!(back, t);
    }

    #[test]
    fn synthetic_round_trip_is_exact() {
        let t = generate_synthetic(&small_spec(10), 3).unwrap();
        let text = t.to_json().unwrap();
        let back = ScoreTable::from_json(&text).unwrap();
        assert_eq!(back, t);
        assert_eq!(back.to_json().unwrap(), text);
    }

    #[test]
    fn schema_mismatch_reports_versions() {
        let text = r#"{"schema_version":7,"benchmark":"b","task":"t","task_kind":"classification","proxy_ids":[],"rows":[]}"#;
        match ScoreTable::from_json(text) {
            Err(StoreError::Schema { found: 7, expected: 1 }) => {}
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_rejected() {
        let t = generate_synthetic(&small_spec(10), 3).unwrap();
        let mut rows = t.rows().to_vec();
        rows[1].id = rows[0].id.clone();
        assert!(matches!(
            ScoreTable::new("b", "t", TaskKind::Classification, Proxy::catalog_ids(), rows),
            Err(StoreError::DuplicateId(_))
        ));
    }

    #[test]
    fn query_errors_name_the_missing_key() {
        let t = generate_synthetic(&small_spec(10), 3).unwrap();
        let id = t.rows()[0].id.clone();
        assert!(matches!(t.query("nope", "snip"), Err(StoreError::UnknownArch(_))));
        assert!(matches!(t.query(&id, "nope"), Err(StoreError::UnknownProxy(_))));
        let a = t.query(&id, "snip").unwrap().clone();
        assert_eq!(&a, t.query(&id, "snip").unwrap());
    }

    #[test]
    fn synthetic_generation_is_seeded() {
        let a = generate_synthetic(&small_spec(50), 9).unwrap();
        let b = generate_synthetic(&small_spec(50), 9).unwrap();
        let c = generate_synthetic(&small_spec(50), 10).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
    }

    #[test]
    fn regression_synthetic_marks_undefined_proxies() {
        let spec = SyntheticSpec {
            task_kind: TaskKind::Regression,
            ..small_spec(20)
        };
        let t = generate_synthetic(&spec, 1).unwrap();
        for row in t.rows() {
            for (p, r) in t.proxy_ids().iter().zip(&row.scores) {
                assert_eq!(r.valid, p != "epe_nas" && p != "synflow");
            }
        }
    }

    #[test]
    fn spec_validation() {
        assert!(generate_synthetic(&small_spec(5), 0).is_err());
        let mut s = small_spec(20);
        s.proxies[0] = SyntheticProxy::planted(1.5);
        assert!(generate_synthetic(&s, 0).is_err());
    }

    #[test]
    fn naslib_keys_decode() {
        let Some(Encoding::Cell(c)) = parse_naslib_key("(2, 2, 2, 2, 2, 2)") else { panic!() };
        assert_eq!(c, CellEncoding::new([CellOp::Conv3x3; 6]));
        let Some(Encoding::Cell(c)) = parse_naslib_key("(0, 1, 3, 4, 1, 1)") else { panic!() };
        assert_eq!(
            c.ops(),
            &[CellOp::Skip, CellOp::Zero, CellOp::AvgPool3x3, CellOp::Conv1x1, CellOp::Zero, CellOp::Zero]
        );
        assert!(matches!(parse_naslib_key("(7, 1)"), Some(Encoding::Opaque(_))));
    }
}
