use std::collections::HashMap;
use std::path::Path;

use proptest::prelude::*;
use serde_json::{json, Value};
use zcgauge::archspace::{enumerate_space, CellEncoding, CellOp, NetworkSpec, SPACE_SIZE};
use zcgauge::proxies::{Proxy, ProxyResult, TaskKind};
use zcgauge::scorestore::{
    compute_and_store, generate_synthetic, import_external, load, save, ComputeOptions, Encoding, Row, ScoreTable,
    StoreError, SyntheticSpec, Truth,
};

fn score_strategy() -> impl Strategy<Value = ProxyResult> {
    prop_oneof![
        (any::<f64>().prop_filter("finite", |v| v.is_finite()), 0.0..100.0f64)
            .prop_map(|(s, t)| ProxyResult::valid("", s, t)),
        (0.0..10.0f64, "[a-z ]{0,12}").prop_map(|(t, r)| ProxyResult::invalid("", t, r)),
    ]
}

fn row_strategy(p: usize) -> impl Strategy<Value = (Option<usize>, f64, Option<f64>, Vec<ProxyResult>, bool)> {
    (
        prop::option::of(0..SPACE_SIZE),
        -1e6..1e6f64,
        prop::option::of(0.0..1e5f64),
        prop::collection::vec(score_strategy(), p),
        any::<bool>(),
    )
}

fn table_strategy() -> impl Strategy<Value = ScoreTable> {
    (1usize..6, 0usize..25).prop_flat_map(|(p, n)| {
        (Just(p), prop::collection::vec(row_strategy(p), n), "[a-z0-9_]{1,8}", any::<bool>())
    })
    .prop_map(|(p, rows, task, regression)| {
        let ids: Vec<String> = Proxy::catalog_ids().into_iter().take(p).collect();
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, (cell, val_acc, train_time, mut scores, extras))| {
                for (s, id) in scores.iter_mut().zip(&ids) {
                    s.name = id.clone();
                }
                Row {
                    id: format!("arch-{i}"),
                    encoding: cell.map(|c| Encoding::Cell(CellEncoding::from_index(c).unwrap())),
                    val_acc,
                    train_time,
                    scores,
                    extras: extras.then(|| json!({"note": i, "tag": "x"})),
                    error: None,
                }
            })
            .collect();
        let kind = if regression { TaskKind::Regression } else { TaskKind::Classification };
        ScoreTable::new("bench", task, kind, ids, rows).unwrap()
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(50))]

    #[test]
    fn tables_round_trip_exactly(table in table_strategy()) {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.json");
        save(&table, &path).unwrap();
        let back = load(&path).unwrap();
        prop_assert_eq!(&back, &table);
        prop_assert_eq!(back.to_json().unwrap(), table.to_json().unwrap());
        for row in table.rows() {
            for (p, r) in table.proxy_ids().iter().zip(&row.scores) {
                let q = back.query(&row.id, p).unwrap();
                prop_assert_eq!(q.score.to_bits(), r.score.to_bits());
                prop_assert_eq!(q.valid, r.valid);
            }
        }
    }
}

#[test]
fn query_errors_name_the_missing_key() {
    let t = generate_synthetic(&SyntheticSpec { n_archs: 20, ..SyntheticSpec::default() }, 1).unwrap();
    let id = t.rows()[0].id.clone();
    assert!(t.query(&id, "synflow").is_ok());
    assert!(matches!(t.query("no-such-arch", "synflow"), Err(StoreError::UnknownArch(_))));
    assert!(matches!(t.query(&id, "no-such-proxy"), Err(StoreError::UnknownProxy(_))));
}

fn naslib_key(cell: &CellEncoding) -> String {
    let naslib_code = |op: CellOp| match op {
        CellOp::Skip => 0,
        CellOp::Zero => 1,
        CellOp::Conv3x3 => 2,
        CellOp::Conv1x1 => 3,
        CellOp::AvgPool3x3 => 4,
    };
    let ops = cell.ops();
    let tuple_order = [0, 1, 3, 2, 4, 5];
    let codes: Vec<String> = tuple_order.iter().map(|&e| naslib_code(ops[e]).to_string()).collect();
    format!("({})", codes.join(", "))
}

#[test]
fn naslib_import_maps_cells_and_aliases() {
    let dir = tempfile::tempdir().unwrap();
    let cells: Vec<CellEncoding> = [0usize, 1, 777, 15624].iter().map(|&i| CellEncoding::from_index(i).unwrap()).collect();
    let mut archs = serde_json::Map::new();
    for (k, c) in cells.iter().enumerate() {
        archs.insert(
            naslib_key(c),
            json!({
                "val_accuracy": 50.0 + k as f64,
                "train_time": 100.0 * k as f64,
                "jacob_cov": {"score": -1.5 * k as f64, "time": 0.25},
                "synflow": {"score": 10.0 + k as f64, "time": 0.5},
                "grad-norm": {"score": 2.0, "time": 0.1},
                "flops": 3.0,
                "id": k,
            }),
        );
    }
    let path = dir.path().join("zc_nasbench201.json");
    std::fs::write(&path, serde_json::to_string(&json!({"cifar10": archs})).unwrap()).unwrap();
    let t = import_external(&path, "naslib-zc").unwrap();
    assert_eq!(t.task(), "cifar10");
    assert_eq!(t.benchmark(), "nb201");
    assert_eq!(t.task_kind(), TaskKind::Classification);
    assert_eq!(t.proxy_ids(), ["flops", "grad_norm", "jacov", "synflow"]);
    assert_eq!(t.len(), 4);
    for (k, c) in cells.iter().enumerate() {
        let id = c.index().to_string();
        let row = t.row(&id).unwrap();
        assert_eq!(row.cell(), Some(c));
        assert_eq!(row.val_acc, 50.0 + k as f64);
        assert_eq!(row.train_time, Some(100.0 * k as f64));
        assert_eq!(t.query(&id, "jacov").unwrap().score, -1.5 * k as f64);
        assert_eq!(t.query(&id, "jacov").unwrap().seconds, 0.25);
        assert_eq!(t.query(&id, "flops").unwrap().score, 3.0);
        assert_eq!(row.extras, Some(json!({"id": k})));
    }
    let canonical = dir.path().join("c.json");
    save(&t, &canonical).unwrap();
    assert_eq!(import_external(&canonical, "canonical").unwrap(), t);
}

#[test]
fn naslib_import_handles_tasks_and_errors() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("multi.json");
    let entry = |acc: Option<f64>| {
        let mut v = json!({"synflow": {"score": 1.0, "time": 0.1}, "nwot": {"score": "nan", "time": 0.1}});
        if let Some(a) = acc {
            v["val_accuracy"] = json!(a);
        }
        v
    };
    let file = json!({
        "cifar10": {"(0, 0, 0, 0, 0, 0)": entry(Some(10.0))},
        "autoencoder": {"(1, 1, 1, 1, 1, 1)": entry(Some(0.5))},
        "svhn": {"(2, 2, 2, 2, 2, 2)": entry(None)},
    });
    std::fs::write(&path, file.to_string()).unwrap();
    assert!(matches!(import_external(&path, "naslib-zc"), Err(StoreError::Invalid(_))));
    let ae = import_external(&path, "naslib-zc:autoencoder").unwrap();
    assert_eq!(ae.task_kind(), TaskKind::Regression);
    let row = &ae.rows()[0];
    assert!(!ae.query(&row.id, "nwot").unwrap().valid);
    assert!(ae.query(&row.id, "synflow").unwrap().valid);
    match import_external(&path, "naslib-zc:svhn") {
        Err(e @ StoreError::MissingGroundTruth(_)) => assert!(e.to_string().contains("ground truth required")),
        other => panic!("{other:?}"),
    }
    match import_external(&path, "csv") {
        Err(StoreError::UnknownFormat { registered, .. }) => assert!(registered.contains(&"canonical".to_string())),
        other => panic!("{other:?}"),
    }
}

fn log_of(path: &Path) -> std::path::PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".log");
    s.into()
}

#[test]
fn compute_stores_every_proxy_and_resumes() {
    let dir = tempfile::tempdir().unwrap();
    let encs: Vec<CellEncoding> = enumerate_space(Some(10)).collect();
    let spec = NetworkSpec::default();
    let opts = ComputeOptions::default();
    let path = dir.path().join("t.json");
    let table = compute_and_store(&encs, &spec, &opts, &path).unwrap();
    assert_eq!(table.entry_count(), 130);
    assert!(!log_of(&path).exists());
    assert_eq!(load(&path).unwrap(), table);

    let resumed_path = dir.path().join("r.json");
    let text = table.to_json().unwrap();
    let first_row: Value = serde_json::from_str(text.lines().nth(1).unwrap().trim_end_matches(',')).unwrap();
    let mut marked = first_row.clone();
    marked["val_acc"] = json!(123.0);
    let log = format!("{}\n{{\"id\": \"torn", marked);
    std::fs::write(log_of(&resumed_path), log).unwrap();
    let resumed = compute_and_store(&encs, &spec, &opts, &resumed_path).unwrap();
    assert_eq!(resumed.entry_count(), 130);
    let id = first_row["id"].as_str().unwrap();
    assert_eq!(resumed.row(id).unwrap().val_acc, 123.0);
    for (a, b) in resumed.rows().iter().zip(table.rows()).skip(1) {
        assert_eq!(a.id, b.id);
        assert_eq!(a.val_acc, b.val_acc);
        for (x, y) in a.scores.iter().zip(&b.scores) {
            assert_eq!(x.valid, y.valid);
            assert_eq!(x.score.to_bits(), y.score.to_bits(), "{}", x.name);
        }
    }
}

#[test]
fn compute_uses_supplied_ground_truth() {
    let dir = tempfile::tempdir().unwrap();
    let encs: Vec<CellEncoding> = enumerate_space(Some(3)).collect();
    let truth: HashMap<String, Truth> = encs
        .iter()
        .map(|e| (e.index().to_string(), Truth { val_acc: e.index() as f64, train_time: Some(7.0) }))
        .collect();
    let opts = ComputeOptions { truth: Some(truth), task_kind: TaskKind::Regression, ..ComputeOptions::default() };
    let t = compute_and_store(&encs, &NetworkSpec::default(), &opts, &dir.path().join("t.json")).unwrap();
    for (row, e) in t.rows().iter().zip(&encs) {
        assert_eq!(row.val_acc, e.index() as f64);
        assert_eq!(row.train_time, Some(7.0));
        assert!(!t.query(&row.id, "synflow").unwrap().valid);
        assert!(!t.query(&row.id, "epe_nas").unwrap().valid);
    }
}
