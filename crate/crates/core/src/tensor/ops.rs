//! Differentiable tensor operations.
//!
//! Each op computes its forward result, then (when the tape is recording and
//! an input requires gradients) registers a backward rule. Backward rules
//! read input data at backward time; callers must not mutate tensor data
//! between forward and backward, which the training loop guarantees by
//! stepping the optimizer only after `backward`.

use super::kernels;
use super::{GradTape, Tensor};
use crate::error::{Error, Result};

/// Additive mask value for disallowed attention positions. Finite so that
/// downstream softmax stays NaN-free even for fully masked query rows.
pub const ATTN_MASK_NEG: f32 = -1e9;

fn shape_err(op: &str, a: &[usize], b: &[usize]) -> Error {
    Error::Shape(format!("{op}: incompatible shapes {a:?} and {b:?}"))
}

fn dims2(t: &Tensor, op: &str) -> Result<(usize, usize)> {
    match t.shape() {
        [a, b] => Ok((*a, *b)),
        s => Err(Error::Shape(format!("{op} expects a matrix, got shape {s:?}"))),
    }
}

fn dims3(t: &Tensor, op: &str) -> Result<(usize, usize, usize)> {
    match t.shape() {
        [a, b, c] => Ok((*a, *b, *c)),
        s => Err(Error::Shape(format!("{op} expects rank 3, got shape {s:?}"))),
    }
}

/// Elementwise sum of two same-shape tensors.
pub fn add(tape: &GradTape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("add", a.shape(), b.shape()));
    }
    let data: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x + y).collect();
    let rg = tape.wants_grad(&[a, b]);
    let out = Tensor::op_output(a.shape().to_vec(), data, rg);
    if rg {
        tape.record(vec![a.clone(), b.clone()], out.clone(), Box::new(|g, inputs, _| {
            inputs
                .iter()
                .map(|t| t.requires_grad().then(|| g.to_vec()))
                .collect()
        }));
    }
    Ok(out)
}

/// x[r x c] + bias[c], broadcast over rows.
pub fn add_bias(tape: &GradTape, x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let c = *x.shape().last().ok_or_else(|| shape_err("add_bias", x.shape(), bias.shape()))?;
    if bias.shape() != [c] {
        return Err(shape_err("add_bias", x.shape(), bias.shape()));
    }
    let bd = bias.data();
    let xd = x.data();
    let mut data = Vec::with_capacity(xd.len());
    for row in xd.chunks_exact(c) {
        data.extend(row.iter().zip(bd.iter()).map(|(v, b)| v + b));
    }
    drop((bd, xd));
    let rg = tape.wants_grad(&[x, bias]);
    let out = Tensor::op_output(x.shape().to_vec(), data, rg);
    if rg {
        tape.record(vec![x.clone(), bias.clone()], out.clone(), Box::new(move |g, inputs, _| {
            let gx = inputs[0].requires_grad().then(|| g.to_vec());
            let gb = inputs[1].requires_grad().then(|| {
                let mut acc = vec![0.0f32; c];
                for row in g.chunks_exact(c) {
                    for (a, &v) in acc.iter_mut().zip(row) {
                        *a += v;
                    }
                }
                acc
            });
            vec![gx, gb]
        }));
    }
    Ok(out)
}

/// Elementwise product of two same-shape tensors.
pub fn mul(tape: &GradTape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.shape() != b.shape() {
        return Err(shape_err("mul", a.shape(), b.shape()));
    }
    let data: Vec<f32> = a.data().iter().zip(b.data().iter()).map(|(x, y)| x * y).collect();
    let rg = tape.wants_grad(&[a, b]);
    let out = Tensor::op_output(a.shape().to_vec(), data, rg);
    if rg {
        tape.record(vec![a.clone(), b.clone()], out.clone(), Box::new(|g, inputs, _| {
            let ga = inputs[0].requires_grad().then(|| {
                inputs[1].data().iter().zip(g).map(|(y, gv)| y * gv).collect()
            });
            let gb = inputs[1].requires_grad().then(|| {
                inputs[0].data().iter().zip(g).map(|(x, gv)| x * gv).collect()
            });
            vec![ga, gb]
        }));
    }
    Ok(out)
}

/// x * s for a fixed scalar.
pub fn mul_scalar(tape: &GradTape, x: &Tensor, s: f32) -> Tensor {
    let data: Vec<f32> = x.data().iter().map(|v| v * s).collect();
    let rg = tape.wants_grad(&[x]);
    let out = Tensor::op_output(x.shape().to_vec(), data, rg);
    if rg {
        tape.record(vec![x.clone()], out.clone(), Box::new(move |g, _, _| {
            vec![Some(g.iter().map(|v| v * s).collect())]
        }));
    }
    out
}

/// Sum of all elements, as a scalar tensor.
pub fn sum_all(tape: &GradTape, x: &Tensor) -> Tensor {
    let total: f64 = x.data().iter().map(|&v| v as f64).sum();
    let rg = tape.wants_grad(&[x]);
    let out = Tensor::op_output(vec![1], vec![total as f32], rg);
    if rg {
        let n = x.numel();
        tape.record(vec![x.clone()], out.clone(), Box::new(move |g, _, _| {
            vec![Some(vec![g[0]; n])]
        }));
    }
    out
}

/// Standard matrix product a[m x k] * b[k x n].
pub fn matmul(tape: &GradTape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a, "matmul")?;
    let (k2, n) = dims2(b, "matmul")?;
    if k != k2 {
        return Err(shape_err("matmul", a.shape(), b.shape()));
    }
    let data = kernels::mm(&a.data(), &b.data(), m, k, n);
    let rg = tape.wants_grad(&[a, b]);
    let out = Tensor::op_output(vec![m, n], data, rg);
    if rg {
        tape.record(vec![a.clone(), b.clone()], out.clone(), Box::new(move |g, inputs, _| {
            let ga = inputs[0]
                .requires_grad()
                .then(|| kernels::mm_nt(g, &inputs[1].data(), m, n, k));
            let gb = inputs[1]
                .requires_grad()
                .then(|| kernels::mm_tn(&inputs[0].data(), g, m, k, n));
            vec![ga, gb]
        }));
    }
    Ok(out)
}

/// a[m x k] * b[n x k]^T. Used for vocabulary projection against the tied
/// embedding table without materializing a transpose.
pub fn matmul_nt(tape: &GradTape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = dims2(a, "matmul_nt")?;
    let (n, k2) = dims2(b, "matmul_nt")?;
    if k != k2 {
        return Err(shape_err("matmul_nt", a.shape(), b.shape()));
    }
    let data = kernels::mm_nt(&a.data(), &b.data(), m, k, n);
    let rg = tape.wants_grad(&[a, b]);
    let out = Tensor::op_output(vec![m, n], data, rg);
    if rg {
        tape.record(vec![a.clone(), b.clone()], out.clone(), Box::new(move |g, inputs, _| {
            let ga = inputs[0]
                .requires_grad()
                .then(|| kernels::mm(g, &inputs[1].data(), m, n, k));
            let gb = inputs[1]
                .requires_grad()
                .then(|| kernels::mm_tn(g, &inputs[0].data(), m, n, k));
            vec![ga, gb]
        }));
    }
    Ok(out)
}

/// Batched matmul: a[B, m, k] * b[B, k, n].
pub fn bmm(tape: &GradTape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ba, m, k) = dims3(a, "bmm")?;
    let (bb, k2, n) = dims3(b, "bmm")?;
    if ba != bb || k != k2 {
        return Err(shape_err("bmm", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut data = vec![0.0f32; ba * m * n];
    for i in 0..ba {
        kernels::mm_acc(
            &ad[i * m * k..(i + 1) * m * k],
            &bd[i * k * n..(i + 1) * k * n],
            &mut data[i * m * n..(i + 1) * m * n],
            m,
            k,
            n,
        );
    }
    drop((ad, bd));
    let rg = tape.wants_grad(&[a, b]);
    let out = Tensor::op_output(vec![ba, m, n], data, rg);
    if rg {
        tape.record(vec![a.clone(), b.clone()], out.clone(), Box::new(move |g, inputs, _| {
            let ga = inputs[0].requires_grad().then(|| {
                let bd = inputs[1].data();
                let mut acc = vec![0.0f32; ba * m * k];
                for i in 0..ba {
                    acc[i * m * k..(i + 1) * m * k].copy_from_slice(&kernels::mm_nt(
                        &g[i * m * n..(i + 1) * m * n],
                        &bd[i * k * n..(i + 1) * k * n],
                        m,
                        n,
                        k,
                    ));
                }
                acc
            });
            let gb = inputs[1].requires_grad().then(|| {
                let ad = inputs[0].data();
                let mut acc = vec![0.0f32; ba * k * n];
                for i in 0..ba {
                    kernels::mm_tn_acc(
                        &ad[i * m * k..(i + 1) * m * k],
                        &g[i * m * n..(i + 1) * m * n],
                        &mut acc[i * k * n..(i + 1) * k * n],
                        m,
                        k,
                        n,
                    );
                }
                acc
            });
            vec![ga, gb]
        }));
    }
    Ok(out)
}

/// Batched a[B, m, k] * b[B, n, k]^T. Attention scores: queries against keys.
pub fn bmm_nt(tape: &GradTape, a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (ba, m, k) = dims3(a, "bmm_nt")?;
    let (bb, n, k2) = dims3(b, "bmm_nt")?;
    if ba != bb || k != k2 {
        return Err(shape_err("bmm_nt", a.shape(), b.shape()));
    }
    let (ad, bd) = (a.data(), b.data());
    let mut data = vec![0.0f32; ba * m * n];
    for i in 0..ba {
        data[i * m * n..(i + 1) * m * n].copy_from_slice(&kernels::mm_nt(
            &ad[i * m * k..(i + 1) * m * k],
            &bd[i * n * k..(i + 1) * n * k],
            m,
            k,
            n,
        ));
    }
    drop((ad, bd));
    let rg = tape.wants_grad(&[a, b]);
    let out = Tensor::op_output(vec![ba, m, n], data, rg);
    if rg {
        tape.record(vec![a.clone(), b.clone()], out.clone(), Box::new(move |g, inputs, _| {
            let ga = inputs[0].requires_grad().then(|| {
                let bd = inputs[1].data();
                let mut acc = vec![0.0f32; ba * m * k];
                for i in 0..ba {
                    kernels::mm_acc(
                        &g[i * m * n..(i + 1) * m * n],
                        &bd[i * n * k..(i + 1) * n * k],
                        &mut acc[i * m * k..(i + 1) * m * k],
                        m,
                        n,
                        k,
                    );
                }
                acc
            });
            let gb = inputs[1].requires_grad().then(|| {
                let ad = inputs[0].data();
                let mut acc = vec![0.0f32; ba * n * k];
                for i in 0..ba {
                    kernels::mm_tn_acc(
                        &g[i * m * n..(i + 1) * m * n],
                        &ad[i * m * k..(i + 1) * m * k],
                        &mut acc[i * n * k..(i + 1) * n * k],
                        m,
                        n,
                        k,
                    );
                }
                acc
            });
            vec![ga, gb]
        }));
    }
    Ok(out)
}

/// GELU activation (tanh approximation). Smooth, so finite-difference
/// verification is well-behaved everywhere.
pub fn gelu(tape: &GradTape, x: &Tensor) -> Tensor {
    const C: f32 = 0.797_884_6; // sqrt(2/pi)
    const A: f32 = 0.044_715;
    fn forward_one(v: f32) -> f32 {
        0.5 * v * (1.0 + (C * (v + A * v * v * v)).tanh())
    }
    let data: Vec<f32> = x.data().iter().map(|&v| forward_one(v)).collect();
    let rg = tape.wants_grad(&[x]);
    let out = Tensor::op_output(x.shape().to_vec(), data, rg);
    if rg {
        tape.record(vec![x.clone()], out.clone(), Box::new(|g, inputs, _| {
            let xd = inputs[0].data();
            let acc = g
                .iter()
                .zip(xd.iter())
                .map(|(&gv, &v)| {
                    let u = C * (v + A * v * v * v);
                    let t = u.tanh();
                    let sech2 = 1.0 - t * t;
                    let du = C * (1.0 + 3.0 * A * v * v);
                    gv * (0.5 * (1.0 + t) + 0.5 * v * sech2 * du)
                })
                .collect();
            vec![Some(acc)]
        }));
    }
    out
}

/// Row-wise layer normalization over the last axis with learned gain/offset.
pub fn layer_norm(
    tape: &GradTape,
    x: &Tensor,
    gamma: &Tensor,
    beta: &Tensor,
    eps: f32,
) -> Result<Tensor> {
    let c = *x.shape().last().ok_or_else(|| shape_err("layer_norm", x.shape(), gamma.shape()))?;
    if gamma.shape() != [c] || beta.shape() != [c] {
        return Err(shape_err("layer_norm", x.shape(), gamma.shape()));
    }
    let rows = x.numel() / c;
    let xd = x.data();
    let (gd, bd) = (gamma.data(), beta.data());
    let mut data = vec![0.0f32; rows * c];
    let mut xhat = vec![0.0f32; rows * c];
    let mut rstd = vec![0.0f32; rows];
    for r in 0..rows {
        let row = &xd[r * c..(r + 1) * c];
        let mean = (row.iter().map(|&v| v as f64).sum::<f64>() / c as f64) as f32;
        let var =
            (row.iter().map(|&v| ((v - mean) as f64).powi(2)).sum::<f64>() / c as f64) as f32;
        let rs = 1.0 / (var + eps).sqrt();
        rstd[r] = rs;
        for j in 0..c {
            let h = (row[j] - mean) * rs;
            xhat[r * c + j] = h;
            data[r * c + j] = gd[j] * h + bd[j];
        }
    }
    drop((xd, gd, bd));
    let rg = tape.wants_grad(&[x, gamma, beta]);
    let out = Tensor::op_output(x.shape().to_vec(), data, rg);
    if rg {
        tape.record(
            vec![x.clone(), gamma.clone(), beta.clone()],
            out.clone(),
            Box::new(move |g, inputs, _| {
                let gd = inputs[1].data();
                let gx = inputs[0].requires_grad().then(|| {
                    let mut acc = vec![0.0f32; rows * c];
                    for r in 0..rows {
                        let grow = &g[r * c..(r + 1) * c];
                        let hrow = &xhat[r * c..(r + 1) * c];
                        let mut sum_dh = 0.0f64;
                        let mut sum_dh_h = 0.0f64;
                        for j in 0..c {
                            let dh = (grow[j] * gd[j]) as f64;
                            sum_dh += dh;
                            sum_dh_h += dh * hrow[j] as f64;
                        }
                        let mean_dh = (sum_dh / c as f64) as f32;
                        let mean_dh_h = (sum_dh_h / c as f64) as f32;
                        for j in 0..c {
                            let dh = grow[j] * gd[j];
                            acc[r * c + j] = rstd[r] * (dh - mean_dh - hrow[j] * mean_dh_h);
                        }
                    }
                    acc
                });
                let ggamma = inputs[1].requires_grad().then(|| {
                    let mut acc = vec![0.0f32; c];
                    for r in 0..rows {
                        for j in 0..c {
                            acc[j] += g[r * c + j] * xhat[r * c + j];
                        }
                    }
                    acc
                });
                let gbeta = inputs[2].requires_grad().then(|| {
                    let mut acc = vec![0.0f32; c];
                    for r in 0..rows {
                        for j in 0..c {
                            acc[j] += g[r * c + j];
                        }
                    }
                    acc
                });
                vec![gx, ggamma, gbeta]
            }),
        );
    }
    Ok(out)
}

/// Softmax over the last axis of `logits / temperature`, max-stabilized.
/// Rows sum to 1 within float tolerance for any finite input.
pub fn softmax_with_temperature(tape: &GradTape, logits: &Tensor, temperature: f32) -> Result<Tensor> {
    if !(temperature > 0.0) {
        return Err(Error::Param(format!(
            "softmax temperature must be positive, got {temperature}"
        )));
    }
    let v = *logits
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("softmax on rank-0 tensor".into()))?;
    let rows = logits.numel() / v;
    let xd = logits.data();
    let mut data = vec![0.0f32; rows * v];
    for r in 0..rows {
        let row = &xd[r * v..(r + 1) * v];
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let mut denom = 0.0f64;
        for j in 0..v {
            let e = (((row[j] - max) / temperature) as f64).exp();
            data[r * v + j] = e as f32;
            denom += e;
        }
        let inv = (1.0 / denom) as f32;
        for j in 0..v {
            data[r * v + j] *= inv;
        }
    }
    drop(xd);
    let rg = tape.wants_grad(&[logits]);
    let out = Tensor::op_output(logits.shape().to_vec(), data, rg);
    if rg {
        tape.record(vec![logits.clone()], out.clone(), Box::new(move |g, _, output| {
            let y = output.data();
            let mut acc = vec![0.0f32; rows * v];
            for r in 0..rows {
                let yrow = &y[r * v..(r + 1) * v];
                let grow = &g[r * v..(r + 1) * v];
                let dot: f64 =
                    yrow.iter().zip(grow).map(|(&yv, &gv)| yv as f64 * gv as f64).sum();
                for j in 0..v {
                    acc[r * v + j] = yrow[j] * (grow[j] - dot as f32) / temperature;
                }
            }
            vec![Some(acc)]
        }));
    }
    Ok(out)
}

/// Select rows of x[r x d] by index; duplicates allowed. Backward
/// scatter-adds into the source, which makes this double as embedding lookup.
pub fn gather_rows(tape: &GradTape, x: &Tensor, idx: &[u32]) -> Result<Tensor> {
    let (r, d) = dims2(x, "gather_rows")?;
    if let Some(&bad) = idx.iter().find(|&&i| i as usize >= r) {
        return Err(Error::Shape(format!("gather_rows index {bad} out of range for {r} rows")));
    }
    let xd = x.data();
    let mut data = vec![0.0f32; idx.len() * d];
    for (o, &i) in idx.iter().enumerate() {
        data[o * d..(o + 1) * d].copy_from_slice(&xd[i as usize * d..(i as usize + 1) * d]);
    }
    drop(xd);
    let rg = tape.wants_grad(&[x]);
    let out = Tensor::op_output(vec![idx.len(), d], data, rg);
    if rg {
        let idx = idx.to_vec();
        tape.record(vec![x.clone()], out.clone(), Box::new(move |g, _, _| {
            let mut acc = vec![0.0f32; r * d];
            for (o, &i) in idx.iter().enumerate() {
                let src = &g[o * d..(o + 1) * d];
                let dst = &mut acc[i as usize * d..(i as usize + 1) * d];
                for (a, &b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
            vec![Some(acc)]
        }));
    }
    Ok(out)
}

/// [B*L, d] -> [B*H, L, d/H]: regroup per-position features into per-head
/// sequences for batched attention.
pub fn split_heads(tape: &GradTape, x: &Tensor, b: usize, l: usize, h: usize) -> Result<Tensor> {
    let (rows, d) = dims2(x, "split_heads")?;
    if rows != b * l || d % h != 0 {
        return Err(Error::Shape(format!(
            "split_heads: shape {:?} incompatible with b={b} l={l} h={h}",
            x.shape()
        )));
    }
    let dh = d / h;
    let xd = x.data();
    let mut data = vec![0.0f32; b * h * l * dh];
    for bi in 0..b {
        for t in 0..l {
            let src = &xd[(bi * l + t) * d..(bi * l + t + 1) * d];
            for hi in 0..h {
                let dst_base = ((bi * h + hi) * l + t) * dh;
                data[dst_base..dst_base + dh].copy_from_slice(&src[hi * dh..(hi + 1) * dh]);
            }
        }
    }
    drop(xd);
    let rg = tape.wants_grad(&[x]);
    let out = Tensor::op_output(vec![b * h, l, dh], data, rg);
    if rg {
        tape.record(vec![x.clone()], out.clone(), Box::new(move |g, _, _| {
            let mut acc = vec![0.0f32; b * l * d];
            for bi in 0..b {
                for t in 0..l {
                    let dst = &mut acc[(bi * l + t) * d..(bi * l + t + 1) * d];
                    for hi in 0..h {
                        let src_base = ((bi * h + hi) * l + t) * dh;
                        dst[hi * dh..(hi + 1) * dh].copy_from_slice(&g[src_base..src_base + dh]);
                    }
                }
            }
            vec![Some(acc)]
        }));
    }
    Ok(out)
}

/// [B*H, L, d/H] -> [B*L, d], inverse of [`split_heads`].
pub fn merge_heads(tape: &GradTape, x: &Tensor, b: usize, l: usize, h: usize) -> Result<Tensor> {
    let (bh, l2, dh) = dims3(x, "merge_heads")?;
    if bh != b * h || l2 != l {
        return Err(Error::Shape(format!(
            "merge_heads: shape {:?} incompatible with b={b} l={l} h={h}",
            x.shape()
        )));
    }
    let d = h * dh;
    let xd = x.data();
    let mut data = vec![0.0f32; b * l * d];
    for bi in 0..b {
        for t in 0..l {
            let dst = &mut data[(bi * l + t) * d..(bi * l + t + 1) * d];
            for hi in 0..h {
                let src_base = ((bi * h + hi) * l + t) * dh;
                dst[hi * dh..(hi + 1) * dh].copy_from_slice(&xd[src_base..src_base + dh]);
            }
        }
    }
    drop(xd);
    let rg = tape.wants_grad(&[x]);
    let out = Tensor::op_output(vec![b * l, d], data, rg);
    if rg {
        tape.record(vec![x.clone()], out.clone(), Box::new(move |g, _, _| {
            let mut acc = vec![0.0f32; b * h * l * dh];
            for bi in 0..b {
                for t in 0..l {
                    let src = &g[(bi * l + t) * d..(bi * l + t + 1) * d];
                    for hi in 0..h {
                        let dst_base = ((bi * h + hi) * l + t) * dh;
                        acc[dst_base..dst_base + dh].copy_from_slice(&src[hi * dh..(hi + 1) * dh]);
                    }
                }
            }
            vec![Some(acc)]
        }));
    }
    Ok(out)
}

/// scores[B*H, Lq, Lk] + mask[B, Lk] broadcast over heads and query
/// positions. The mask holds 0 for visible keys and [`ATTN_MASK_NEG`] for
/// padding; it never receives gradients.
pub fn add_key_mask(tape: &GradTape, scores: &Tensor, mask: &Tensor, h: usize) -> Result<Tensor> {
    let (bh, lq, lk) = dims3(scores, "add_key_mask")?;
    let (b, lk2) = dims2(mask, "add_key_mask")?;
    if bh != b * h || lk != lk2 {
        return Err(shape_err("add_key_mask", scores.shape(), mask.shape()));
    }
    let sd = scores.data();
    let md = mask.data();
    let mut data = vec![0.0f32; bh * lq * lk];
    for bi in 0..b {
        let mrow = &md[bi * lk..(bi + 1) * lk];
        for hi in 0..h {
            for i in 0..lq {
                let base = ((bi * h + hi) * lq + i) * lk;
                for j in 0..lk {
                    data[base + j] = sd[base + j] + mrow[j];
                }
            }
        }
    }
    drop((sd, md));
    let rg = tape.wants_grad(&[scores]);
    let out = Tensor::op_output(vec![bh, lq, lk], data, rg);
    if rg {
        tape.record(vec![scores.clone()], out.clone(), Box::new(|g, _, _| {
            vec![Some(g.to_vec())]
        }));
    }
    Ok(out)
}

/// scores[B*H, L, L] with positions j > i pushed to [`ATTN_MASK_NEG`],
/// enforcing autoregressive decoding.
pub fn add_causal_mask(tape: &GradTape, scores: &Tensor) -> Result<Tensor> {
    let (bh, lq, lk) = dims3(scores, "add_causal_mask")?;
    if lq != lk {
        return Err(Error::Shape(format!(
            "add_causal_mask expects square score matrices, got {:?}",
            scores.shape()
        )));
    }
    let sd = scores.data();
    let mut data = sd.clone();
    drop(sd);
    for bhi in 0..bh {
        for i in 0..lq {
            let base = (bhi * lq + i) * lk;
            for j in (i + 1)..lk {
                data[base + j] += ATTN_MASK_NEG;
            }
        }
    }
    let rg = tape.wants_grad(&[scores]);
    let out = Tensor::op_output(vec![bh, lq, lk], data, rg);
    if rg {
        tape.record(vec![scores.clone()], out.clone(), Box::new(|g, _, _| {
            vec![Some(g.to_vec())]
        }));
    }
    Ok(out)
}

/// Cross-entropy over token logits, averaged over unmasked positions.
pub struct CrossEntropyOut {
    pub loss: Tensor,
    /// Loss value before the f32 cast, for high-precision comparisons.
    pub loss_f64: f64,
    /// Number of positions that contributed.
    pub n_active: usize,
    /// Set when every position was masked out; the loss is then 0.
    pub all_masked: bool,
}

/// Mean negative log-softmax probability of `targets` over positions where
/// `mask` is true. With everything masked the loss is defined as 0 and
/// `all_masked` is flagged.
pub fn cross_entropy(
    tape: &GradTape,
    logits: &Tensor,
    targets: &[u32],
    mask: &[bool],
) -> Result<CrossEntropyOut> {
    let (n, v) = dims2(logits, "cross_entropy")?;
    if targets.len() != n || mask.len() != n {
        return Err(Error::Shape(format!(
            "cross_entropy: {n} rows vs {} targets / {} mask entries",
            targets.len(),
            mask.len()
        )));
    }
    if let Some(&bad) = targets.iter().zip(mask).filter(|(_, &m)| m).map(|(t, _)| t).find(|&&t| t as usize >= v) {
        return Err(Error::Shape(format!("cross_entropy: target id {bad} >= vocab size {v}")));
    }
    let n_active = mask.iter().filter(|&&m| m).count();
    if n_active == 0 {
        return Ok(CrossEntropyOut {
            loss: Tensor::scalar(0.0),
            loss_f64: 0.0,
            n_active: 0,
            all_masked: true,
        });
    }

    let xd = logits.data();
    let mut lse = vec![0.0f32; n];
    let mut total = 0.0f64;
    for r in 0..n {
        if !mask[r] {
            continue;
        }
        let row = &xd[r * v..(r + 1) * v];
        let max = row.iter().fold(f32::NEG_INFINITY, |a, &b| a.max(b));
        let sum: f64 = row.iter().map(|&x| ((x - max) as f64).exp()).sum();
        let l = max as f64 + sum.ln();
        lse[r] = l as f32;
        total += l - row[targets[r] as usize] as f64;
    }
    drop(xd);
    let loss_f64 = total / n_active as f64;
    let loss_val = loss_f64 as f32;
    let rg = tape.wants_grad(&[logits]);
    let loss = Tensor::op_output(vec![1], vec![loss_val], rg);
    if rg {
        let targets = targets.to_vec();
        let mask = mask.to_vec();
        tape.record(vec![logits.clone()], loss.clone(), Box::new(move |g, inputs, _| {
            let xd = inputs[0].data();
            let scale = g[0] / n_active as f32;
            let mut acc = vec![0.0f32; n * v];
            for r in 0..n {
                if !mask[r] {
                    continue;
                }
                let row = &xd[r * v..(r + 1) * v];
                let grow = &mut acc[r * v..(r + 1) * v];
                for j in 0..v {
                    grow[j] = (row[j] - lse[r]).exp() * scale;
                }
                grow[targets[r] as usize] -= scale;
            }
            vec![Some(acc)]
        }));
    }
    Ok(CrossEntropyOut { loss, loss_f64, n_active, all_masked: false })
}

/// Floor applied to probabilities inside KL to keep logs finite when a
/// distribution has (numerically) zero mass where the other does not.
pub const KL_FLOOR: f32 = 1e-9;

/// Mean over rows of sum_v p_v ln(p_v / q_v), with 0 ln(0/q) = 0 and q
/// floored at [`KL_FLOOR`]. Both arguments are probability distributions on
/// the last axis; gradients flow into either argument that requires them.
pub fn kl_divergence(tape: &GradTape, p: &Tensor, q: &Tensor) -> Result<Tensor> {
    if p.shape() != q.shape() {
        return Err(shape_err("kl_divergence", p.shape(), q.shape()));
    }
    let v = *p
        .shape()
        .last()
        .ok_or_else(|| Error::Shape("kl_divergence on rank-0 tensor".into()))?;
    let rows = p.numel() / v;
    let (pd, qd) = (p.data(), q.data());
    let mut total = 0.0f64;
    for r in 0..rows {
        for j in 0..v {
            let pv = pd[r * v + j];
            if pv > 0.0 {
                let qv = qd[r * v + j].max(KL_FLOOR);
                total += pv as f64 * (pv as f64 / qv as f64).ln();
            }
        }
    }
    drop((pd, qd));
    let loss_val = (total / rows as f64) as f32;
    let rg = tape.wants_grad(&[p, q]);
    let out = Tensor::op_output(vec![1], vec![loss_val], rg);
    if rg {
        tape.record(vec![p.clone(), q.clone()], out.clone(), Box::new(move |g, inputs, _| {
            let scale = g[0] / rows as f32;
            let (pd, qd) = (inputs[0].data(), inputs[1].data());
            let gp = inputs[0].requires_grad().then(|| {
                pd.iter()
                    .zip(qd.iter())
                    .map(|(&pv, &qv)| {
                        ((pv.max(KL_FLOOR) / qv.max(KL_FLOOR)).ln() + 1.0) * scale
                    })
                    .collect()
            });
            let gq = inputs[1].requires_grad().then(|| {
                pd.iter()
                    .zip(qd.iter())
                    .map(|(&pv, &qv)| -(pv / qv.max(KL_FLOOR)) * scale)
                    .collect()
            });
            vec![gp, gq]
        }));
    }
    Ok(out)
}
