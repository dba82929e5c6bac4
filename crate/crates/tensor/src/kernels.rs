//! Forward and vector-Jacobian kernels for every [`Op`](crate::Op).

use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub(crate) const BN_EPS: f64 = 1e-5;

fn tensor<S: Scalar>(shape: Vec<usize>, data: Vec<S>) -> Tensor<S> {
    Tensor::new(shape, data).expect("kernel produced consistent shape")
}

pub(crate) fn dense_fwd<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>, b: Option<&Tensor<S>>) -> Tensor<S> {
    let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / in_f;
    let (xd, wd) = (x.data(), w.data());
    let mut y = vec![S::zero(); rows * out_f];
    for r in 0..rows {
        let xr = &xd[r * in_f..(r + 1) * in_f];
        for o in 0..out_f {
            let wr = &wd[o * in_f..(o + 1) * in_f];
            let mut acc = match b {
                Some(b) => b.data()[o],
                None => S::zero(),
            };
            for (&a, &c) in xr.iter().zip(wr) {
                acc += a * c;
            }
            y[r * out_f + o] = acc;
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = out_f;
    tensor(shape, y)
}

pub(crate) fn dense_bwd<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (out_f, in_f) = (w.shape()[0], w.shape()[1]);
    let rows = x.numel() / in_f;
    let (xd, wd, dyd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![S::zero(); x.numel()];
    let mut dw = vec![S::zero(); w.numel()];
    let mut db = vec![S::zero(); out_f];
    for r in 0..rows {
        let xr = &xd[r * in_f..(r + 1) * in_f];
        for o in 0..out_f {
            let g = dyd[r * out_f + o];
            db[o] += g;
            let wr = &wd[o * in_f..(o + 1) * in_f];
            let dxr = &mut dx[r * in_f..(r + 1) * in_f];
            for i in 0..in_f {
                dxr[i] += g * wr[i];
            }
            let dwr = &mut dw[o * in_f..(o + 1) * in_f];
            for i in 0..in_f {
                dwr[i] += g * xr[i];
            }
        }
    }
    (
        tensor(x.shape().to_vec(), dx),
        tensor(w.shape().to_vec(), dw),
        tensor(vec![out_f], db),
    )
}

/// Valid output index range `[lo, hi)` for a kernel offset `d` (in `-p..=p`).
#[inline]
fn span(d: isize, len: usize) -> (usize, usize) {
    if d >= 0 {
        (0, len.saturating_sub(d as usize))
    } else {
        ((-d) as usize, len)
    }
}

pub(crate) fn conv_fwd<S: Scalar>(x: &Tensor<S>, w: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let p = (k / 2) as isize;
    let hw = h * wd;
    let (xd, wt) = (x.data(), w.data());
    let mut y = vec![S::zero(); n * o * hw];
    for b in 0..n {
        for oc in 0..o {
            let out = &mut y[(b * o + oc) * hw..(b * o + oc + 1) * hw];
            for ic in 0..c {
                let inp = &xd[(b * c + ic) * hw..(b * c + ic + 1) * hw];
                for kh in 0..k {
                    let dh = kh as isize - p;
                    let (h0, h1) = span(dh, h);
                    for kw in 0..k {
                        let dw = kw as isize - p;
                        let (w0, w1) = span(dw, wd);
                        let wv = wt[((oc * c + ic) * k + kh) * k + kw];
                        for yy in h0..h1 {
                            let src = ((yy as isize + dh) as usize) * wd;
                            let orow = &mut out[yy * wd + w0..yy * wd + w1];
                            let irow = &inp[(src as isize + w0 as isize + dw) as usize
                                ..(src as isize + w1 as isize + dw) as usize];
                            for (ov, &iv) in orow.iter_mut().zip(irow) {
                                *ov += wv * iv;
                            }
                        }
                    }
                }
            }
        }
    }
    tensor(vec![n, o, h, wd], y)
}

pub(crate) fn conv_bwd<S: Scalar>(
    x: &Tensor<S>,
    w: &Tensor<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>) {
    let [n, c, h, wd] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let (o, k) = (w.shape()[0], w.shape()[2]);
    let p = (k / 2) as isize;
    let hw = h * wd;
    let (xd, wt, dyd) = (x.data(), w.data(), dy.data());
    let mut dx = vec![S::zero(); x.numel()];
    let mut dw = vec![S::zero(); w.numel()];
    for b in 0..n {
        for oc in 0..o {
            let g = &dyd[(b * o + oc) * hw..(b * o + oc + 1) * hw];
            for ic in 0..c {
                let base = (b * c + ic) * hw;
                for kh in 0..k {
                    let dh = kh as isize - p;
                    let (h0, h1) = span(dh, h);
                    for kw in 0..k {
                        let dwo = kw as isize - p;
                        let (w0, w1) = span(dwo, wd);
                        let widx = ((oc * c + ic) * k + kh) * k + kw;
                        let wv = wt[widx];
                        let mut acc = S::zero();
                        for yy in h0..h1 {
                            let src = base + ((yy as isize + dh) as usize) * wd;
                            let lo = (src as isize + w0 as isize + dwo) as usize;
                            let hi = (src as isize + w1 as isize + dwo) as usize;
                            let grow = &g[yy * wd + w0..yy * wd + w1];
                            let irow = &xd[lo..hi];
                            for (&gv, &iv) in grow.iter().zip(irow) {
                                acc += gv * iv;
                            }
                            let drow = &mut dx[lo..hi];
                            for (dv, &gv) in drow.iter_mut().zip(grow) {
                                *dv += wv * gv;
                            }
                        }
                        dw[widx] += acc;
                    }
                }
            }
        }
    }
    (tensor(x.shape().to_vec(), dx), tensor(w.shape().to_vec(), dw))
}

pub(crate) fn relu_fwd<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    x.map(|v| if v.value() > 0.0 { v } else { S::zero() })
}

/// Subgradient at exactly 0 is 0.
pub(crate) fn relu_bwd<S: Scalar>(x: &Tensor<S>, dy: &Tensor<S>) -> Tensor<S> {
    x.zip_map(dy, |v, g| if v.value() > 0.0 { g } else { S::zero() })
}

pub(crate) struct BnCache<S> {
    pub xhat: Vec<S>,
    pub inv_std: Vec<S>,
    pub var: Vec<f64>,
}

fn bn_dims(shape: &[usize]) -> (usize, usize, usize) {
    let n = shape[0];
    let c = shape[1];
    let r: usize = shape[2..].iter().product();
    (n, c, r)
}

pub(crate) fn bn_fwd<S: Scalar>(
    x: &Tensor<S>,
    gamma: &Tensor<S>,
    beta: &Tensor<S>,
) -> (Tensor<S>, BnCache<S>) {
    let (n, c, r) = bn_dims(x.shape());
    let m = S::from_f64((n * r) as f64);
    let xd = x.data();
    let mut xhat = vec![S::zero(); x.numel()];
    let mut y = vec![S::zero(); x.numel()];
    let mut inv_std = Vec::with_capacity(c);
    let mut vars = Vec::with_capacity(c);
    for ch in 0..c {
        let mut mean = S::zero();
        for b in 0..n {
            for v in &xd[(b * c + ch) * r..(b * c + ch + 1) * r] {
                mean += *v;
            }
        }
        mean = mean / m;
        let mut var = S::zero();
        for b in 0..n {
            for v in &xd[(b * c + ch) * r..(b * c + ch + 1) * r] {
                let d = *v - mean;
                var += d * d;
            }
        }
        var = var / m;
        let is = S::one() / (var + S::from_f64(BN_EPS)).sqrt();
        let (g, bt) = (gamma.data()[ch], beta.data()[ch]);
        for b in 0..n {
            let lo = (b * c + ch) * r;
            for j in lo..lo + r {
                let xh = (xd[j] - mean) * is;
                xhat[j] = xh;
                y[j] = g * xh + bt;
            }
        }
        inv_std.push(is);
        vars.push(var.value());
    }
    (
        tensor(x.shape().to_vec(), y),
        BnCache {
            xhat,
            inv_std,
            var: vars,
        },
    )
}

pub(crate) fn bn_bwd<S: Scalar>(
    cache: &BnCache<S>,
    gamma: &Tensor<S>,
    dy: &Tensor<S>,
) -> (Tensor<S>, Tensor<S>, Tensor<S>) {
    let (n, c, r) = bn_dims(dy.shape());
    let m = S::from_f64((n * r) as f64);
    let dyd = dy.data();
    let mut dx = vec![S::zero(); dy.numel()];
    let mut dg = vec![S::zero(); c];
    let mut dbt = vec![S::zero(); c];
    for ch in 0..c {
        let mut sum_dy = S::zero();
        let mut sum_dy_xh = S::zero();
        for b in 0..n {
            let lo = (b * c + ch) * r;
            for j in lo..lo + r {
                sum_dy += dyd[j];
                sum_dy_xh += dyd[j] * cache.xhat[j];
            }
        }
        dg[ch] = sum_dy_xh;
        dbt[ch] = sum_dy;
        let k = gamma.data()[ch] * cache.inv_std[ch] / m;
        for b in 0..n {
            let lo = (b * c + ch) * r;
            for j in lo..lo + r {
                dx[j] = k * (m * dyd[j] - sum_dy - cache.xhat[j] * sum_dy_xh);
            }
        }
    }
    (
        tensor(dy.shape().to_vec(), dx),
        tensor(vec![c], dg),
        tensor(vec![c], dbt),
    )
}

fn pool_count(y: usize, x: usize, h: usize, w: usize) -> f64 {
    let rows = 1 + (y > 0) as usize + (y + 1 < h) as usize;
    let cols = 1 + (x > 0) as usize + (x + 1 < w) as usize;
    (rows * cols) as f64
}

pub(crate) fn avgpool_fwd<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = [x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]];
    let xd = x.data();
    let mut y = vec![S::zero(); x.numel()];
    for plane in 0..n * c {
        let base = plane * h * w;
        for yy in 0..h {
            for xx in 0..w {
                let mut acc = S::zero();
                for sy in yy.saturating_sub(1)..(yy + 2).min(h) {
                    for sx in xx.saturating_sub(1)..(xx + 2).min(w) {
                        acc += xd[base + sy * w + sx];
                    }
                }
                y[base + yy * w + xx] = acc / S::from_f64(pool_count(yy, xx, h, w));
            }
        }
    }
    tensor(x.shape().to_vec(), y)
}

pub(crate) fn avgpool_bwd<S: Scalar>(dy: &Tensor<S>) -> Tensor<S> {
    let [n, c, h, w] = [dy.shape()[0], dy.shape()[1], dy.shape()[2], dy.shape()[3]];
    let gd = dy.data();
    let mut dx = vec![S::zero(); dy.numel()];
    for plane in 0..n * c {
        let base = plane * h * w;
        for yy in 0..h {
            for xx in 0..w {
                let g = gd[base + yy * w + xx] / S::from_f64(pool_count(yy, xx, h, w));
                for sy in yy.saturating_sub(1)..(yy + 2).min(h) {
                    for sx in xx.saturating_sub(1)..(xx + 2).min(w) {
                        dx[base + sy * w + sx] += g;
                    }
                }
            }
        }
    }
    tensor(dy.shape().to_vec(), dx)
}

pub(crate) fn gap_fwd<S: Scalar>(x: &Tensor<S>) -> Tensor<S> {
    let (n, c) = (x.shape()[0], x.shape()[1]);
    let r: usize = x.shape()[2..].iter().product();
    let inv = S::from_f64(1.0 / r as f64);
    let y = x
        .data()
        .chunks(r)
        .map(|chunk| chunk.iter().fold(S::zero(), |a, &v| a + v) * inv)
        .collect();
    tensor(vec![n, c], y)
}

pub(crate) fn gap_bwd<S: Scalar>(in_shape: &[usize], dy: &Tensor<S>) -> Tensor<S> {
    let r: usize = in_shape[2..].iter().product();
    let inv = S::from_f64(1.0 / r as f64);
    let mut dx = Vec::with_capacity(dy.numel() * r);
    for &g in dy.data() {
        dx.extend(std::iter::repeat(g * inv).take(r));
    }
    tensor(in_shape.to_vec(), dx)
}

/// Softmax of one row, stabilised by the row maximum.
fn softmax_row<S: Scalar>(z: &[S]) -> (Vec<S>, S) {
    let m = z
        .iter()
        .map(|v| v.value())
        .fold(f64::NEG_INFINITY, f64::max);
    let m = S::from_f64(m);
    let e: Vec<S> = z.iter().map(|&v| (v - m).exp()).collect();
    let s = e.iter().fold(S::zero(), |a, &v| a + v);
    let lse = m + s.ln();
    (e.into_iter().map(|v| v / s).collect(), lse)
}

pub(crate) fn ce_fwd<S: Scalar>(logits: &Tensor<S>, labels: &[usize]) -> S {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let mut total = S::zero();
    for b in 0..n {
        let row = &logits.data()[b * k..(b + 1) * k];
        let (_, lse) = softmax_row(row);
        total += lse - row[labels[b]];
    }
    total / S::from_f64(n as f64)
}

pub(crate) fn ce_bwd<S: Scalar>(logits: &Tensor<S>, labels: &[usize], dl: S) -> Tensor<S> {
    let (n, k) = (logits.shape()[0], logits.shape()[1]);
    let scale = dl / S::from_f64(n as f64);
    let mut d = Vec::with_capacity(n * k);
    for b in 0..n {
        let (p, _) = softmax_row(&logits.data()[b * k..(b + 1) * k]);
        for (j, pj) in p.into_iter().enumerate() {
            let t = if j == labels[b] { S::one() } else { S::zero() };
            d.push((pj - t) * scale);
        }
    }
    tensor(logits.shape().to_vec(), d)
}

pub(crate) fn mse_fwd<S: Scalar>(out: &Tensor<S>, targets: &[f64]) -> S {
    let (n, k) = (out.shape()[0], out.shape()[1]);
    let mut total = S::zero();
    for b in 0..n {
        let d = out.data()[b * k] - S::from_f64(targets[b]);
        total += d * d;
    }
    total / S::from_f64(n as f64)
}

pub(crate) fn mse_bwd<S: Scalar>(out: &Tensor<S>, targets: &[f64], dl: S) -> Tensor<S> {
    let (n, k) = (out.shape()[0], out.shape()[1]);
    let scale = S::from_f64(2.0 / n as f64) * dl;
    let mut d = vec![S::zero(); out.numel()];
    for b in 0..n {
        d[b * k] = (out.data()[b * k] - S::from_f64(targets[b])) * scale;
    }
    tensor(out.shape().to_vec(), d)
}
