//! Plain loops behind the tape primitives. All reductions run in index order
//! so repeated runs are bit-identical.

use super::Real;

/// `out[m×n] = a[m×k] · b[k×n]`
pub fn matmul<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in row.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

/// `out[m×n] = a[m×k] · b[n×k]ᵀ`
pub fn matmul_bt<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); m * n];
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            let brow = &b[j * k..(j + 1) * k];
            out[i * n + j] = dot(arow, brow);
        }
    }
    out
}

/// `out[k×n] = a[m×k]ᵀ · b[m×n]`
pub fn matmul_at<F: Real>(a: &[F], b: &[F], m: usize, k: usize, n: usize) -> Vec<F> {
    let mut out = vec![F::zero(); k * n];
    for i in 0..m {
        let brow = &b[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            let orow = &mut out[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o = *o + av * bv;
            }
        }
    }
    out
}

pub fn dot<F: Real>(a: &[F], b: &[F]) -> F {
    a.iter().zip(b).fold(F::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Max-subtracted softmax over one row.
pub fn softmax<F: Real>(x: &[F]) -> Vec<F> {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let exps: Vec<F> = x.iter().map(|&v| (v - max).exp()).collect();
    let total = exps.iter().copied().fold(F::zero(), |a, b| a + b);
    exps.into_iter().map(|e| e / total).collect()
}

pub fn log_softmax<F: Real>(x: &[F]) -> Vec<F> {
    let max = x.iter().copied().fold(F::neg_infinity(), F::max);
    let total = x.iter().fold(F::zero(), |a, &v| a + (v - max).exp());
    let lse = max + total.ln();
    x.iter().map(|&v| v - lse).collect()
}

/// Softmax backward for one row: `dx = y ⊙ (dy − ⟨dy, y⟩)`.
pub fn softmax_backward<F: Real>(y: &[F], dy: &[F]) -> Vec<F> {
    let inner = dot(y, dy);
    y.iter().zip(dy).map(|(&yi, &gi)| yi * (gi - inner)).collect()
}

pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `ln σ(x)` without overflow for large |x|.
pub fn log_sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn gelu_consts<F: Real>() -> (F, F) {
    (
        F::from_f64((2.0 / std::f64::consts::PI).sqrt()).unwrap(),
        F::from_f64(0.044715).unwrap(),
    )
}

/// Tanh approximation of GELU.
pub fn gelu<F: Real>(x: F) -> F {
    let (c, a) = gelu_consts::<F>();
    let half = F::from_f64(0.5).unwrap();
    half * x * (F::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad<F: Real>(x: F) -> F {
    let (c, a) = gelu_consts::<F>();
    let half = F::from_f64(0.5).unwrap();
    let three = F::from_f64(3.0).unwrap();
    let inner = c * (x + a * x * x * x);
    let t = inner.tanh();
    let sech2 = F::one() - t * t;
    half * (F::one() + t) + half * x * sech2 * c * (F::one() + three * a * x * x)
}

pub const LAYER_NORM_EPS: f64 = 1e-12;

/// Row-wise layer normalization; returns output, per-row mean and 1/σ.
pub fn layer_norm<F: Real>(
    x: &[F],
    gain: &[F],
    bias: &[F],
    rows: usize,
    cols: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let eps = F::from_f64(LAYER_NORM_EPS).unwrap();
    let n = F::from_usize(cols).unwrap();
    let mut out = vec![F::zero(); rows * cols];
    let mut means = Vec::with_capacity(rows);
    let mut rstds = Vec::with_capacity(rows);
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().copied().fold(F::zero(), |a, b| a + b) / n;
        let var = row.iter().fold(F::zero(), |a, &v| a + (v - mean) * (v - mean)) / n;
        let rstd = F::one() / (var + eps).sqrt();
        for c in 0..cols {
            out[r * cols + c] = (row[c] - mean) * rstd * gain[c] + bias[c];
        }
        means.push(mean);
        rstds.push(rstd);
    }
    (out, means, rstds)
}

/// Gradients of [`layer_norm`] with respect to input, gain and bias.
#[allow(clippy::too_many_arguments)]
pub fn layer_norm_backward<F: Real>(
    x: &[F],
    gain: &[F],
    means: &[F],
    rstds: &[F],
    dy: &[F],
    rows: usize,
    cols: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let n = F::from_usize(cols).unwrap();
    let mut dx = vec![F::zero(); rows * cols];
    let mut dgain = vec![F::zero(); cols];
    let mut dbias = vec![F::zero(); cols];
    let mut xhat = vec![F::zero(); cols];
    let mut dxhat = vec![F::zero(); cols];
    for r in 0..rows {
        let off = r * cols;
        for c in 0..cols {
            xhat[c] = (x[off + c] - means[r]) * rstds[r];
            dxhat[c] = dy[off + c] * gain[c];
            dgain[c] = dgain[c] + dy[off + c] * xhat[c];
            dbias[c] = dbias[c] + dy[off + c];
        }
        let sum_dxhat = dxhat.iter().copied().fold(F::zero(), |a, b| a + b);
        let sum_dxhat_xhat = dot(&dxhat, &xhat);
        for c in 0..cols {
            dx[off + c] = rstds[r] / n * (n * dxhat[c] - sum_dxhat - xhat[c] * sum_dxhat_xhat);
        }
    }
    (dx, dgain, dbias)
}

/// Multi-head scaled dot-product attention over `len` positions.
///
/// Returns the output `[len×dim]` and the attention probabilities laid out as
/// `[heads][len][len]`.
pub fn attention<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    len: usize,
    dim: usize,
    heads: usize,
) -> (Vec<F>, Vec<F>) {
    let hd = dim / heads;
    let scale = F::one() / F::from_usize(hd).unwrap().sqrt();
    let mut out = vec![F::zero(); len * dim];
    let mut probs = vec![F::zero(); heads * len * len];
    let mut scores = vec![F::zero(); len];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..len {
            let qi = &q[i * dim + off..i * dim + off + hd];
            for (j, s) in scores.iter_mut().enumerate() {
                *s = dot(qi, &k[j * dim + off..j * dim + off + hd]) * scale;
            }
            let p = softmax(&scores);
            for (j, &pj) in p.iter().enumerate() {
                probs[(h * len + i) * len + j] = pj;
                for c in 0..hd {
                    out[i * dim + off + c] = out[i * dim + off + c] + pj * v[j * dim + off + c];
                }
            }
        }
    }
    (out, probs)
}

/// Gradients of [`attention`] with respect to q, k and v.
#[allow(clippy::too_many_arguments)]
pub fn attention_backward<F: Real>(
    q: &[F],
    k: &[F],
    v: &[F],
    probs: &[F],
    dy: &[F],
    len: usize,
    dim: usize,
    heads: usize,
) -> (Vec<F>, Vec<F>, Vec<F>) {
    let hd = dim / heads;
    let scale = F::one() / F::from_usize(hd).unwrap().sqrt();
    let mut dq = vec![F::zero(); len * dim];
    let mut dk = vec![F::zero(); len * dim];
    let mut dv = vec![F::zero(); len * dim];
    let mut dp = vec![F::zero(); len];
    for h in 0..heads {
        let off = h * hd;
        for i in 0..len {
            let p = &probs[(h * len + i) * len..(h * len + i + 1) * len];
            let dyi = &dy[i * dim + off..i * dim + off + hd];
            for j in 0..len {
                let vj = &v[j * dim + off..j * dim + off + hd];
                dp[j] = dot(dyi, vj);
                for c in 0..hd {
                    dv[j * dim + off + c] = dv[j * dim + off + c] + p[j] * dyi[c];
                }
            }
            let ds = softmax_backward(p, &dp);
            for j in 0..len {
                let g = ds[j] * scale;
                for c in 0..hd {
                    dq[i * dim + off + c] = dq[i * dim + off + c] + g * k[j * dim + off + c];
                    dk[j * dim + off + c] = dk[j * dim + off + c] + g * q[i * dim + off + c];
                }
            }
        }
    }
    (dq, dk, dv)
}
