//! Slice-level forward and backward kernels. Every reduction runs left to right
//! in a fixed order so results are bit-reproducible.

use crate::tensor::Scalar;

pub const LAYER_NORM_EPS: f64 = 1e-5;

/// `out[m,n] += a[m,k] · b[k,n]`
pub fn matmul_acc<T: Scalar>(a: &[T], b: &[T], out: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let orow = &mut out[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &aip) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (o, &bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
}

/// `da[m,k] += g[m,n] · b[k,n]^T`
pub fn matmul_grad_a<T: Scalar>(g: &[T], b: &[T], da: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = T::zero();
            for (&x, &y) in grow.iter().zip(brow) {
                s += x * y;
            }
            da[i * k + p] += s;
        }
    }
}

/// `db[k,n] += a[m,k]^T · g[m,n]`
pub fn matmul_grad_b<T: Scalar>(a: &[T], g: &[T], db: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let grow = &g[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = a[i * k + p];
            let drow = &mut db[p * n..(p + 1) * n];
            for (d, &x) in drow.iter_mut().zip(grow) {
                *d += aip * x;
            }
        }
    }
}

pub fn softmax_rows<T: Scalar>(x: &[T], out: &mut [T], cols: usize) {
    for (xr, or) in x.chunks(cols).zip(out.chunks_mut(cols)) {
        let mx = xr.iter().copied().fold(T::neg_infinity(), T::max);
        let mut s = T::zero();
        for (o, &v) in or.iter_mut().zip(xr) {
            *o = (v - mx).exp();
            s += *o;
        }
        for o in or.iter_mut() {
            *o /= s;
        }
    }
}

pub fn softmax_rows_grad<T: Scalar>(y: &[T], g: &[T], dx: &mut [T], cols: usize) {
    for ((yr, gr), dr) in y.chunks(cols).zip(g.chunks(cols)).zip(dx.chunks_mut(cols)) {
        let mut dot = T::zero();
        for (&a, &b) in yr.iter().zip(gr) {
            dot += a * b;
        }
        for ((d, &a), &b) in dr.iter_mut().zip(yr).zip(gr) {
            *d += a * (b - dot);
        }
    }
}

/// Normalizes each row; returns (xhat, rstd).
pub fn layer_norm_rows<T: Scalar>(x: &[T], cols: usize) -> (Vec<T>, Vec<T>) {
    let eps = T::lit(LAYER_NORM_EPS);
    let n = T::lit(cols as f64);
    let rows = x.len() / cols;
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let xr = &x[r * cols..(r + 1) * cols];
        let mut mean = T::zero();
        for &v in xr {
            mean += v;
        }
        mean /= n;
        let mut var = T::zero();
        for &v in xr {
            let d = v - mean;
            var += d * d;
        }
        var /= n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for (h, &v) in xhat[r * cols..(r + 1) * cols].iter_mut().zip(xr) {
            *h = (v - mean) * rs;
        }
    }
    (xhat, rstd)
}

/// Gradient of the normalization w.r.t. its input given `dxhat`.
pub fn layer_norm_rows_grad<T: Scalar>(xhat: &[T], rstd: &[T], dxhat: &[T], dx: &mut [T], cols: usize) {
    let n = T::lit(cols as f64);
    for (r, &rs) in rstd.iter().enumerate() {
        let sl = r * cols..(r + 1) * cols;
        let xh = &xhat[sl.clone()];
        let dh = &dxhat[sl.clone()];
        let mut m1 = T::zero();
        let mut m2 = T::zero();
        for (&a, &b) in dh.iter().zip(xh) {
            m1 += a;
            m2 += a * b;
        }
        m1 /= n;
        m2 /= n;
        for ((d, &a), &b) in dx[sl].iter_mut().zip(dh).zip(xh) {
            *d += rs * (a - m1 - b * m2);
        }
    }
}

/// Multi-head scaled dot-product attention. `q` is `[tq, dim]`, `k` and `v` are
/// `[tk, dim]`; head `h` owns columns `h*dh..(h+1)*dh`. Returns the output and
/// the attention probabilities laid out `[heads, tq, tk]`.
#[allow(clippy::too_many_arguments)]
pub fn attention<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    tq: usize,
    tk: usize,
    dim: usize,
    heads: usize,
    mask: Option<&[bool]>,
) -> (Vec<T>, Vec<T>) {
    let dh = dim / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut out = vec![T::zero(); tq * dim];
    let mut probs = vec![T::zero(); heads * tq * tk];
    let mut scores = vec![T::zero(); tk];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..tq {
            let qi = &q[i * dim + c0..i * dim + c0 + dh];
            let mut mx = T::neg_infinity();
            for j in 0..tk {
                if mask.is_none_or(|m| m[j]) {
                    let kj = &k[j * dim + c0..j * dim + c0 + dh];
                    let mut s = T::zero();
                    for (&a, &b) in qi.iter().zip(kj) {
                        s += a * b;
                    }
                    s *= scale;
                    scores[j] = s;
                    mx = mx.max(s);
                } else {
                    scores[j] = T::neg_infinity();
                }
            }
            let prow = &mut probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
            if mx == T::neg_infinity() {
                continue;
            }
            let mut sum = T::zero();
            for (p, &s) in prow.iter_mut().zip(&scores) {
                *p = if s == T::neg_infinity() { T::zero() } else { (s - mx).exp() };
                sum += *p;
            }
            for p in prow.iter_mut() {
                *p /= sum;
            }
            let orow = &mut out[i * dim + c0..i * dim + c0 + dh];
            for (j, &p) in prow.iter().enumerate() {
                if p == T::zero() {
                    continue;
                }
                let vj = &v[j * dim + c0..j * dim + c0 + dh];
                for (o, &x) in orow.iter_mut().zip(vj) {
                    *o += p * x;
                }
            }
        }
    }
    (out, probs)
}

#[allow(clippy::too_many_arguments)]
pub fn attention_grad<T: Scalar>(
    q: &[T],
    k: &[T],
    v: &[T],
    probs: &[T],
    g: &[T],
    tq: usize,
    tk: usize,
    dim: usize,
    heads: usize,
    mut dq: Option<&mut [T]>,
    mut dk: Option<&mut [T]>,
    mut dv: Option<&mut [T]>,
) {
    let dh = dim / heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();
    let mut dp = vec![T::zero(); tk];
    for h in 0..heads {
        let c0 = h * dh;
        for i in 0..tq {
            let prow = &probs[(h * tq + i) * tk..(h * tq + i + 1) * tk];
            let gi = &g[i * dim + c0..i * dim + c0 + dh];
            let mut dot = T::zero();
            for j in 0..tk {
                let vj = &v[j * dim + c0..j * dim + c0 + dh];
                let mut s = T::zero();
                for (&a, &b) in gi.iter().zip(vj) {
                    s += a * b;
                }
                dp[j] = s;
                dot += prow[j] * s;
                if let Some(dv) = dv.as_deref_mut() {
                    let p = prow[j];
                    for (d, &x) in dv[j * dim + c0..j * dim + c0 + dh].iter_mut().zip(gi) {
                        *d += p * x;
                    }
                }
            }
            for j in 0..tk {
                let ds = prow[j] * (dp[j] - dot) * scale;
                if ds == T::zero() {
                    continue;
                }
                if let Some(dq) = dq.as_deref_mut() {
                    let kj = &k[j * dim + c0..j * dim + c0 + dh];
                    for (d, &x) in dq[i * dim + c0..i * dim + c0 + dh].iter_mut().zip(kj) {
                        *d += ds * x;
                    }
                }
                if let Some(dk) = dk.as_deref_mut() {
                    let qi = &q[i * dim + c0..i * dim + c0 + dh];
                    for (d, &x) in dk[j * dim + c0..j * dim + c0 + dh].iter_mut().zip(qi) {
                        *d += ds * x;
                    }
                }
            }
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)

#[inline]
pub fn gelu<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(0.044715);
    T::lit(0.5) * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

#[inline]
pub fn gelu_grad<T: Scalar>(x: T) -> T {
    let c = T::lit(GELU_C);
    let a = T::lit(0.044715);
    let u = c * (x + a * x * x * x);
    let th = u.tanh();
    let du = c * (T::one() + T::lit(3.0) * a * x * x);
    T::lit(0.5) * (T::one() + th) + T::lit(0.5) * x * (T::one() - th * th) * du
}

#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// Numerically stable `-[y ln σ(x) + (1-y) ln(1-σ(x))]`.
#[inline]
pub fn bce_with_logits<T: Scalar>(x: T, y: T) -> T {
    x.max(T::zero()) - x * y + (T::one() + (-x.abs()).exp()).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn softmax_uniform_on_equal_logits() {
        let x = [3.0f64; 5];
        let mut y = [0.0; 5];
        softmax_rows(&x, &mut y, 5);
        for v in y {
            assert!((v - 0.2).abs() < 1e-15);
        }
    }

    #[test]
    fn layer_norm_constant_row_is_zero() {
        let (xhat, _) = layer_norm_rows(&[2.5f64; 6], 6);
        assert!(xhat.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bce_matches_definition() {
        for &(x, y) in &[(0.3f64, 1.0), (-2.0, 0.0), (4.0, 1.0), (0.0, 1.0)] {
            let s = 1.0 / (1.0 + (-x).exp());
            let direct = -(y * s.ln() + (1.0 - y) * (1.0 - s).ln());
            assert!((bce_with_logits(x, y) - direct).abs() < 1e-12);
        }
        assert!((bce_with_logits(0.0f64, 1.0) - std::f64::consts::LN_2).abs() < 1e-15);
    }
}
