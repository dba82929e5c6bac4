//! Reference implementations shared by the proxy oracle tests and the
//! acceptance suite.
#![allow(dead_code)]

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use zcgauge::archspace::{CellEncoding, CellOp, Network};
use zcgauge::proxies::Minibatch;
use zcgauge_tensor::{init, Executor, GraphBuilder, Tensor};

pub fn cell(ops: [CellOp; 6]) -> CellEncoding {
    CellEncoding::new(ops)
}

// Stem conv 3->8 (216) + stem BN (16) + head BN (16) + dense 8->10 with bias (90).
pub const SKELETON_PARAMS: f64 = 338.0;
// Stem conv (64 positions * 8 * 27) + dense (80).
pub const SKELETON_MACS: f64 = 13_824.0 + 80.0;
pub const CONV3_PARAMS: f64 = 576.0 + 16.0;
pub const CONV1_PARAMS: f64 = 64.0 + 16.0;
pub const CONV3_MACS: f64 = 64.0 * 8.0 * 72.0;
pub const CONV1_MACS: f64 = 64.0 * 8.0 * 8.0;

/// Five fixed cells with their hand-derived parameter and MAC counts.
pub fn hand_count_cases() -> Vec<(CellEncoding, f64, f64)> {
    use CellOp::*;
    vec![
        (cell([Zero; 6]), SKELETON_PARAMS, SKELETON_MACS),
        (cell([Skip; 6]), SKELETON_PARAMS, SKELETON_MACS),
        (cell([Conv3x3; 6]), 3890.0, 235_088.0),
        (cell([Conv3x3, Conv1x1, AvgPool3x3, Skip, Zero, Zero]), 1010.0, 54_864.0),
        (cell([Conv1x1; 6]), 818.0, 38_480.0),
    ]
}


/// Multilinear monomial `Π w_i`; derivative w.r.t. `w_j` is the product of the others.
pub fn symbolic_synflow(weights: &[f64]) -> f64 {
    let abs: Vec<f64> = weights.iter().map(|w| w.abs()).collect();
    (0..abs.len())
        .map(|j| {
            let partial: f64 = abs.iter().enumerate().filter(|&(i, _)| i != j).map(|(_, w)| w).product();
            abs[j] * partial
        })
        .sum()
}

pub fn scalar_chain(weights: &[f64]) -> zcgauge_tensor::Graph {
    let mut b = GraphBuilder::new();
    let mut h = b.input(&[None, Some(1)]);
    for (i, &w) in weights.iter().enumerate() {
        let p = b.param(format!("w{i}"), Tensor::new(vec![1, 1], vec![w]).unwrap());
        h = b.dense(h, p, None);
    }
    b.finish(h).unwrap()
}

pub fn rel_close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * a.abs().max(b.abs()).max(1e-300)
}


/// Conv net without batch norm so per-sample passes equal the batched pass.
pub fn small_net(seed: u64) -> Network {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut b = GraphBuilder::new();
    let x = b.input(&[None, Some(2), Some(3), Some(3)]);
    let w1 = b.param("c1", init::conv_weight(4, 2, 1, &mut rng));
    let h = b.conv2d(x, w1);
    let h = b.relu(h);
    let w2 = b.param("c2", init::conv_weight(4, 4, 3, &mut rng));
    let h2 = b.conv2d(h, w2);
    let h2 = b.relu(h2);
    let h = b.add(vec![h, h2]);
    let feat = b.global_avg_pool(h);
    let wd = b.param("fc", init::dense_weight(3, 4, &mut rng));
    let bd = b.param("fc_b", Tensor::from_vec(vec![0.1, -0.2, 0.05]));
    let logits = b.dense(feat, wd, Some(bd));
    let net = Network {
        graph: b.finish(logits).unwrap(),
        input: x,
        features: feat,
        logits,
        input_shape: vec![2, 3, 3],
        classes: 3,
    };
    assert!(net.graph.num_params() <= 500);
    net
}

pub fn gaussian_batch(n: usize, seed: u64) -> Minibatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data: Vec<f64> = (0..n * 18).map(|_| rng.sample(rand_distr::StandardNormal)).collect();
    let labels = (0..n).map(|i| i % 3).collect();
    Minibatch::new(Tensor::new(vec![n, 2, 3, 3], data).unwrap(), labels, 3).unwrap()
}

pub fn sample(batch: &Minibatch, i: usize) -> Tensor {
    let d = 18;
    Tensor::new(vec![1, 2, 3, 3], batch.inputs.data()[i * d..(i + 1) * d].to_vec()).unwrap()
}

pub fn naive_jacobian(net: &Network, batch: &Minibatch) -> Vec<Vec<f64>> {
    (0..batch.size())
        .map(|i| {
            let mut ex = Executor::new(&net.graph);
            let out = ex.forward(&sample(batch, i), None).unwrap().shape().to_vec();
            let tape = ex.backward_with(Tensor::full(&out, 1.0), true).unwrap();
            tape.activation(net.input).unwrap().data().to_vec()
        })
        .collect()
}

pub fn naive_corr(rows: &[Vec<f64>]) -> Vec<Vec<f64>> {
    let n = rows.len();
    let d = rows[0].len() as f64;
    let mut c = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            let mi = rows[i].iter().sum::<f64>() / d;
            let mj = rows[j].iter().sum::<f64>() / d;
            let cov: f64 = rows[i].iter().zip(&rows[j]).map(|(a, b)| (a - mi) * (b - mj)).sum();
            let vi: f64 = rows[i].iter().map(|a| (a - mi).powi(2)).sum();
            let vj: f64 = rows[j].iter().map(|b| (b - mj).powi(2)).sum();
            c[i][j] = cov / (vi * vj).sqrt();
        }
    }
    c
}

/// Cyclic Jacobi rotations.
pub fn jacobi_eigenvalues(mut a: Vec<Vec<f64>>) -> Vec<f64> {
    let n = a.len();
    for _ in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j))).map(|(i, j)| a[i][j].powi(2)).sum();
        if off < 1e-30 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[i][i]).collect()
}

pub fn naive_jacov(net: &Network, batch: &Minibatch) -> f64 {
    let eig = jacobi_eigenvalues(naive_corr(&naive_jacobian(net, batch)));
    -eig.iter().map(|&l| (l + 1e-5).ln() + 1.0 / (l + 1e-5)).sum::<f64>()
}

pub fn naive_nwot(net: &Network, batch: &Minibatch) -> f64 {
    let relus = net.graph.nodes_where(|op| matches!(op, zcgauge_tensor::Op::Relu(_)));
    let codes: Vec<Vec<f64>> = (0..batch.size())
        .map(|i| {
            let mut ex = Executor::new(&net.graph);
            ex.forward(&sample(batch, i), None).unwrap();
            relus
                .iter()
                .flat_map(|&r| ex.value(r).unwrap().data().iter().map(|&v| if v > 0.0 { 1.0 } else { 0.0 }).collect::<Vec<_>>())
                .collect()
        })
        .collect();
    let n = codes.len();
    let mut k = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in 0..n {
            k[i][j] = codes[i].iter().zip(&codes[j]).map(|(a, b)| a * b + (1.0 - a) * (1.0 - b)).sum();
        }
    }
    // Gaussian elimination with partial pivoting.
    let mut logdet = 0.0;
    for col in 0..n {
        let piv = (col..n).max_by(|&a, &b| k[a][col].abs().total_cmp(&k[b][col].abs())).unwrap();
        k.swap(col, piv);
        let d = k[col][col];
        logdet += d.abs().ln();
        for r in col + 1..n {
            let f = k[r][col] / d;
            for c in col..n {
                k[r][c] -= f * k[col][c];
            }
        }
    }
    logdet
}

