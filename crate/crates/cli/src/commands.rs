//! Subcommand implementations.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Deserialize;
use serde_json::{json, Value};
use zcgauge::analysis::{
    best_ranking_at_k, cross_benchmark_correlation, entropy_report, generalization_matrix, precision_at_k, resolve_k,
    table_estimator, table_label, Bins, KMode, LabeledMatrix,
};
use zcgauge::archspace::{enumerate_space, NetworkSpec};
use zcgauge::biaslab::{self, BiasMetric, Grid, Strategy};
use zcgauge::nasloop::{self, Algorithm, FeatureSet, SearchConfig};
use zcgauge::proxies::TaskKind;
use zcgauge::scorestore::{self, ComputeOptions, ScoreTable, SyntheticSpec, Truth};

use crate::args::*;
use crate::CliError;

type Result<T> = std::result::Result<T, CliError>;

/// Files a run read and wrote, plus a summary for stdout.
pub struct Outcome {
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub summary: Value,
}

pub fn run(command: &Command) -> Result<Outcome> {
    match command {
        Command::Compute(a) => compute(a),
        Command::Synth(a) => synth(a),
        Command::Import(a) => import(a),
        Command::Analyze(a) => analyze(a),
        Command::Bias(a) => bias(a),
        Command::Nas(a) => nas(a),
        Command::Replay(_) => Err(CliError::Usage("replay cannot be nested".into())),
    }
}

fn task_kind(k: TaskKindArg) -> TaskKind {
    match k {
        TaskKindArg::Classification => TaskKind::Classification,
        TaskKindArg::Regression => TaskKind::Regression,
    }
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| CliError::Data(format!("cannot write {}: {e}", path.display())))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Data(format!("cannot read {}: {e}", path.display())))?;
    serde_json::from_str(&text).map_err(|e| CliError::Data(format!("{}: {e}", path.display())))
}

fn table_summary(t: &ScoreTable) -> Value {
    json!({"rows": t.len(), "entries": t.entry_count(), "benchmark": t.benchmark(), "task": t.task()})
}

#[derive(Deserialize)]
struct TruthEntry {
    val_acc: f64,
    train_time: Option<f64>,
}

fn compute(a: &ComputeArgs) -> Result<Outcome> {
    let encodings: Vec<_> = match a.space {
        Space::Nb201 => enumerate_space(a.limit).collect(),
    };
    let mut inputs = Vec::new();
    let truth = match &a.truth {
        Some(p) => {
            inputs.push(p.clone());
            let raw: HashMap<String, TruthEntry> = read_json(p)?;
            Some(
                raw.into_iter()
                    .map(|(id, t)| (id, Truth { val_acc: t.val_acc, train_time: t.train_time }))
                    .collect(),
            )
        }
        None => None,
    };
    if a.batch == 0 || a.chunk == 0 {
        return Err(CliError::Usage("--batch and --chunk must be positive".into()));
    }
    let opts = ComputeOptions {
        benchmark: a.benchmark.clone(),
        task: a.task.clone(),
        task_kind: task_kind(a.task_kind),
        batch_size: a.batch,
        seed: a.seed,
        chunk_size: a.chunk,
        truth,
    };
    let table = scorestore::compute_and_store(&encodings, &NetworkSpec::default(), &opts, &a.out)?;
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone()],
        summary: table_summary(&table),
    })
}

fn synth(a: &SynthArgs) -> Result<Outcome> {
    let mut inputs = Vec::new();
    let spec = match &a.spec {
        Some(p) => {
            inputs.push(p.clone());
            read_json::<SyntheticSpec>(p)?
        }
        None => SyntheticSpec {
            benchmark: a.benchmark.clone(),
            task: a.task.clone(),
            task_kind: task_kind(a.task_kind),
            n_archs: a.n,
            noise_sd: a.noise_sd,
            ..SyntheticSpec::default()
        },
    };
    let table = scorestore::generate_synthetic(&spec, a.seed)?;
    scorestore::save(&table, &a.out)?;
    Ok(Outcome {
        inputs,
        outputs: vec![a.out.clone()],
        summary: table_summary(&table),
    })
}

fn import(a: &ImportArgs) -> Result<Outcome> {
    let table = scorestore::import_external(&a.input, &a.format)?;
    scorestore::save(&table, &a.out)?;
    Ok(Outcome {
        inputs: vec![a.input.clone()],
        outputs: vec![a.out.clone()],
        summary: table_summary(&table),
    })
}

fn is_csv(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("csv"))
}

/// Writes `json` or, for a `.csv` path, `csv`.
fn write_report(path: &Path, json: &Value, csv: impl FnOnce() -> String) -> Result<()> {
    if is_csv(path) {
        write(path, &csv())
    } else {
        let text = serde_json::to_string_pretty(json).map_err(|e| CliError::Internal(e.to_string()))?;
        write(path, &(text + "\n"))
    }
}

fn write_matrix(path: &Path, m: &LabeledMatrix) -> Result<()> {
    let v = serde_json::to_value(m).map_err(|e| CliError::Internal(e.to_string()))?;
    write_report(path, &v, || m.to_csv())
}

fn single<'a>(tables: &'a [ScoreTable], kind: &str) -> Result<&'a ScoreTable> {
    match tables {
        [t] => Ok(t),
        _ => Err(CliError::Usage(format!("analyze {kind} takes exactly one --table"))),
    }
}

fn union_proxies(tables: &[ScoreTable]) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for t in tables {
        for p in t.proxy_ids() {
            if !out.contains(p) {
                out.push(p.clone());
            }
        }
    }
    out
}

type TopK = fn(&[f64], &[f64], usize) -> zcgauge::analysis::Result<f64>;

/// One column per (table, K); invalid scores rank last.
fn top_k_matrix(tables: &[ScoreTable], ks: &[f64], mode: KMode, metric: TopK) -> Result<LabeledMatrix> {
    let rows = union_proxies(tables);
    let mut cols = Vec::new();
    let mut columns: Vec<Vec<Option<f64>>> = Vec::new();
    for t in tables {
        let ground = t.val_accs();
        for &k in ks {
            let kk = resolve_k(k, t.len(), mode)?;
            cols.push(format!("{}@{k}", table_label(t)));
            let col = rows
                .iter()
                .map(|p| -> Result<Option<f64>> {
                    let Ok(scores) = t.column(p) else {
                        return Ok(None);
                    };
                    let pred: Vec<f64> = scores.iter().map(|s| s.unwrap_or(f64::NEG_INFINITY)).collect();
                    Ok(Some(metric(&ground, &pred, kk)?))
                })
                .collect::<Result<Vec<_>>>()?;
            columns.push(col);
        }
    }
    let values = (0..rows.len()).map(|r| columns.iter().map(|c| c[r]).collect()).collect();
    Ok(LabeledMatrix { rows, cols, values })
}

fn analyze(a: &AnalyzeArgs) -> Result<Outcome> {
    let bins: Bins = a.bins.parse().map_err(CliError::Usage)?;
    let tables = a
        .table
        .iter()
        .map(|p| scorestore::load(p).map_err(CliError::from))
        .collect::<Result<Vec<_>>>()?;
    let mode = match a.k_mode {
        KModeArg::Absolute => KMode::Absolute,
        KModeArg::Fraction => KMode::Fraction,
    };
    let sample = Some(a.sample);
    let summary = match a.kind {
        AnalysisKind::Corr => {
            let m = generalization_matrix(&tables, a.seed);
            write_matrix(&a.out, &m)?;
            json!({"proxies": m.rows.len(), "tables": m.cols.len()})
        }
        AnalysisKind::Prec | AnalysisKind::Bestrank => {
            let metric: TopK = if a.kind == AnalysisKind::Prec { precision_at_k } else { best_ranking_at_k };
            let m = top_k_matrix(&tables, &a.k, mode, metric)?;
            write_matrix(&a.out, &m)?;
            json!({"proxies": m.rows.len(), "columns": m.cols})
        }
        AnalysisKind::Entropy => {
            let t = single(&tables, "entropy")?;
            let r = entropy_report(t, sample, bins, a.trials, a.k_max, a.seed)?;
            let v = serde_json::to_value(&r).map_err(|e| CliError::Internal(e.to_string()))?;
            write_report(&a.out, &v, || {
                let mut cols = vec!["conditional".to_string()];
                cols.extend(r.proxies.iter().cloned());
                let values = r
                    .conditional
                    .iter()
                    .zip(&r.pairwise_ig)
                    .map(|(c, ig)| std::iter::once(*c).chain(ig.iter().copied()).map(Some).collect())
                    .collect();
                LabeledMatrix { rows: r.proxies.clone(), cols, values }.to_csv()
            })?;
            json!({"n_bins": r.n_bins, "sample_size": r.sample_size, "h_y": r.h_y})
        }
        AnalysisKind::Ig => {
            let t = single(&tables, "ig")?;
            let est = table_estimator(t, sample, bins, a.seed)?;
            let p = est.num_vars();
            let m = LabeledMatrix {
                rows: t.proxy_ids().to_vec(),
                cols: t.proxy_ids().to_vec(),
                values: (0..p).map(|i| (0..p).map(|j| Some(est.information_gain(&[i], j))).collect()).collect(),
            };
            write_matrix(&a.out, &m)?;
            json!({"n_bins": est.n_bins(), "sample_size": est.n()})
        }
        AnalysisKind::Orderings => {
            let t = single(&tables, "orderings")?;
            let est = table_estimator(t, sample, bins, a.seed)?;
            let names = t.proxy_ids();
            let greedy = est.ordering_greedy();
            let random = est.ordering_random(a.trials, a.seed);
            let exhaustive = est.ordering_exhaustive(a.k_max)?;
            let v = json!({
                "n_bins": est.n_bins(),
                "sample_size": est.n(),
                "h_y": est.h_y(),
                "greedy": {
                    "order": greedy.order.iter().map(|&i| &names[i]).collect::<Vec<_>>(),
                    "entropies": greedy.entropies,
                },
                "random_mean": random,
                "exhaustive": exhaustive.iter().map(|(h, s)| json!({
                    "entropy": h,
                    "subset": s.iter().map(|&i| &names[i]).collect::<Vec<_>>(),
                })).collect::<Vec<_>>(),
            });
            write_report(&a.out, &v, || {
                let p = est.num_vars();
                let pad = |xs: Vec<f64>| (0..p).map(|k| xs.get(k).copied()).collect();
                LabeledMatrix {
                    rows: vec!["greedy".into(), "random".into(), "exhaustive".into()],
                    cols: (1..=p).map(|k| k.to_string()).collect(),
                    values: vec![
                        pad(greedy.entropies.clone()),
                        pad(random.clone()),
                        pad(exhaustive.iter().map(|e| e.0).collect()),
                    ],
                }
                .to_csv()
            })?;
            json!({"n_bins": est.n_bins(), "sample_size": est.n()})
        }
        AnalysisKind::Xbench => {
            let m = cross_benchmark_correlation(&tables)?;
            write_matrix(&a.out, &m)?;
            json!({"tables": m.rows.len()})
        }
    };
    Ok(Outcome {
        inputs: a.table.clone(),
        outputs: vec![a.out.clone()],
        summary,
    })
}

fn metric(m: MetricArg) -> BiasMetric {
    match m {
        MetricArg::ConvPool => BiasMetric::ConvPool,
        MetricArg::CellSize => BiasMetric::CellSize,
        MetricArg::NumSkip => BiasMetric::NumSkip,
        MetricArg::NumParams => BiasMetric::NumParams,
    }
}

fn bias(a: &BiasArgs) -> Result<Outcome> {
    let table = scorestore::load(&a.table)?;
    let summary = match (a.action, &a.proxy, a.metric) {
        (BiasAction::Measure, Some(p), Some(m)) => {
            let b = biaslab::bias(&table, p, metric(m))?;
            let v = json!({"proxy": p, "metric": metric(m), "bias": b});
            write_report(&a.out, &v, || {
                LabeledMatrix {
                    rows: vec![p.clone()],
                    cols: vec![metric(m).id().to_string()],
                    values: vec![vec![Some(b)]],
                }
                .to_csv()
            })?;
            v
        }
        (BiasAction::Measure, _, _) => {
            let m = biaslab::bias_report(&table);
            write_matrix(&a.out, &m)?;
            json!({"rows": m.rows.len()})
        }
        (BiasAction::Mitigate, Some(p), Some(m)) => {
            let strategy = match a.strategy {
                StrategyArg::Minimize => Strategy::Minimize,
                StrategyArg::Equalize => Strategy::Equalize,
                StrategyArg::Performance => Strategy::Performance,
            };
            let grid = Grid {
                lo: a.grid_lo,
                hi: a.grid_hi,
                steps: a.grid_steps,
            };
            if !(grid.lo.is_finite() && grid.hi.is_finite() && grid.lo <= grid.hi) {
                return Err(CliError::Usage("--grid-lo and --grid-hi must be finite with lo <= hi".into()));
            }
            let r = biaslab::mitigate(&table, p, metric(m), strategy, &grid)?;
            let v = serde_json::to_value(&r).map_err(|e| CliError::Internal(e.to_string()))?;
            write_report(&a.out, &v, || {
                let cols = ["c", "original_bias", "new_bias", "original_perf", "new_perf"];
                let c = match r.c {
                    biaslab::Constant::Value(c) => c,
                    biaslab::Constant::Infinity => f64::INFINITY,
                };
                LabeledMatrix {
                    rows: vec![r.proxy.clone()],
                    cols: cols.iter().map(|s| s.to_string()).collect(),
                    values: vec![[c, r.original_bias, r.new_bias, r.original_perf, r.new_perf].map(Some).to_vec()],
                }
                .to_csv()
            })?;
            v
        }
        (BiasAction::Mitigate, _, _) => return Err(CliError::Usage("bias mitigate requires --proxy and --metric".into())),
    };
    Ok(Outcome {
        inputs: vec![a.table.clone()],
        outputs: vec![a.out.clone()],
        summary,
    })
}

fn nas(a: &NasArgs) -> Result<Outcome> {
    let table = scorestore::load(&a.table)?;
    let config = SearchConfig {
        algorithm: match a.algo {
            AlgoArg::Bananas => Algorithm::Bananas,
            AlgoArg::Npenas => Algorithm::Npenas,
            AlgoArg::Random => Algorithm::Random,
        },
        features: match a.features {
            FeaturesArg::Encoding => FeatureSet::Encoding,
            FeaturesArg::Zc => FeatureSet::Zc,
            FeaturesArg::Both => FeatureSet::Both,
        },
        budget: a.budget,
        init: a.init,
        candidates: a.candidates,
        seed: a.seed,
        trials: a.trials,
        ..SearchConfig::default()
    };
    let traces = nasloop::run_trials(&table, &config)?;
    write(&a.out, &nasloop::traces_to_csv(&traces))?;
    let runtimes: Vec<f64> = traces.iter().map(|t| nasloop::simulated_runtime(t, &table).seconds).collect();
    Ok(Outcome {
        inputs: vec![a.table.clone()],
        outputs: vec![a.out.clone()],
        summary: json!({
            "trials": traces.len(),
            "mean_best": nasloop::mean_best_at(&traces, a.budget),
            "mean_simulated_seconds": runtimes.iter().sum::<f64>() / runtimes.len().max(1) as f64,
        }),
    })
}
