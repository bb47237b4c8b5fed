//! Raw slice kernels shared by the autodiff graph (f64) and the tape-free
//! inference engine (f32 or f64).
//!
//! Sequence tensors are laid out `[outer, len, channels]` row-major; pooling
//! and upsampling act on the `len` axis.

use std::fmt::Debug;

use num_traits::Float;

/// Value masked attention scores and logits are set to.
pub const MASK_VALUE: f64 = -1e9;

/// Floating element usable by the kernels.
pub trait Element: Float + Default + Debug + Send + Sync + 'static {
    /// `c <- alpha * a * b + beta * c` on strided matrices.
    #[allow(clippy::too_many_arguments)]
    fn gemm_strided(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    fn from_f64(v: f64) -> Self;
}

fn span(rows: usize, cols: usize, rs: isize, cs: isize) -> usize {
    if rows == 0 || cols == 0 {
        return 0;
    }
    (rows as isize - 1) as usize * rs as usize + (cols as isize - 1) as usize * cs as usize + 1
}

macro_rules! impl_element {
    ($t:ty, $gemm:path) => {
        impl Element for $t {
            fn gemm_strided(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                assert!(rsa >= 0 && csa >= 0 && rsb >= 0 && csb >= 0 && rsc >= 0 && csc >= 0);
                assert!(span(m, k, rsa, csa) <= a.len(), "gemm: lhs out of bounds");
                assert!(span(k, n, rsb, csb) <= b.len(), "gemm: rhs out of bounds");
                assert!(span(m, n, rsc, csc) <= c.len(), "gemm: output out of bounds");
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every addressed element was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }

            fn from_f64(v: f64) -> Self {
                v as $t
            }
        }
    };
}

impl_element!(f64, matrixmultiply::dgemm);
impl_element!(f32, matrixmultiply::sgemm);

/// Row-major `[m,k] x [k,n]`.
pub fn matmul<T: Element>(a: &[T], b: &[T], m: usize, k: usize, n: usize) -> Vec<T> {
    let mut c = vec![T::zero(); m * n];
    T::gemm_strided(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        n as isize,
        1,
        T::zero(),
        &mut c,
        n as isize,
        1,
    );
    c
}

/// `c += a * b^T` with `a: [m,k]`, `b: [n,k]`.
pub fn matmul_nt_acc<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm_strided(
        m,
        k,
        n,
        T::one(),
        a,
        k as isize,
        1,
        b,
        1,
        k as isize,
        T::one(),
        c,
        n as isize,
        1,
    );
}

/// `c += a^T * b` with `a: [k,m]`, `b: [k,n]`.
pub fn matmul_tn_acc<T: Element>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    T::gemm_strided(
        m,
        k,
        n,
        T::one(),
        a,
        1,
        m as isize,
        b,
        n as isize,
        1,
        T::one(),
        c,
        n as isize,
        1,
    );
}

/// Adds `bias` (length `cols`) to every row.
pub fn add_rows<T: Element>(x: &mut [T], bias: &[T]) {
    let cols = bias.len();
    for row in x.chunks_exact_mut(cols) {
        for (v, b) in row.iter_mut().zip(bias) {
            *v = *v + *b;
        }
    }
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044715;

/// Tanh-approximated GELU.
pub fn gelu<T: Element>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    half * x * (T::one() + (c * (x + a * x * x * x)).tanh())
}

pub fn gelu_grad(x: f64) -> f64 {
    let inner = GELU_C * (x + GELU_A * x * x * x);
    let t = inner.tanh();
    let dinner = GELU_C * (1.0 + 3.0 * GELU_A * x * x);
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dinner
}

/// Layer normalisation over rows of width `cols`.
/// Returns `(y, xhat, rstd)`.
pub fn layer_norm<T: Element>(
    x: &[T],
    gain: &[T],
    bias: &[T],
    cols: usize,
    eps: T,
) -> (Vec<T>, Vec<T>, Vec<T>) {
    let rows = x.len() / cols;
    let n = T::from_f64(cols as f64);
    let mut y = vec![T::zero(); x.len()];
    let mut xhat = vec![T::zero(); x.len()];
    let mut rstd = vec![T::zero(); rows];
    for r in 0..rows {
        let row = &x[r * cols..(r + 1) * cols];
        let mean = row.iter().fold(T::zero(), |s, &v| s + v) / n;
        let var = row
            .iter()
            .fold(T::zero(), |s, &v| s + (v - mean) * (v - mean))
            / n;
        let rs = T::one() / (var + eps).sqrt();
        rstd[r] = rs;
        for c in 0..cols {
            let h = (row[c] - mean) * rs;
            xhat[r * cols + c] = h;
            y[r * cols + c] = h * gain[c] + bias[c];
        }
    }
    (y, xhat, rstd)
}

/// Softmax over the middle axis of an `[outer, n, inner]` view.
pub fn softmax_axis<T: Element>(x: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let mut mx = T::neg_infinity();
            for j in 0..n {
                mx = mx.max(x[idx(j)]);
            }
            let mut s = T::zero();
            for j in 0..n {
                let e = (x[idx(j)] - mx).exp();
                y[idx(j)] = e;
                s = s + e;
            }
            for j in 0..n {
                y[idx(j)] = y[idx(j)] / s;
            }
        }
    }
    y
}

/// Numerically stable log-softmax over the middle axis of `[outer, n, inner]`.
pub fn log_softmax_axis<T: Element>(x: &[T], outer: usize, n: usize, inner: usize) -> Vec<T> {
    let mut y = vec![T::zero(); x.len()];
    for o in 0..outer {
        for i in 0..inner {
            let idx = |j: usize| (o * n + j) * inner + i;
            let mut mx = T::neg_infinity();
            for j in 0..n {
                mx = mx.max(x[idx(j)]);
            }
            let mut s = T::zero();
            for j in 0..n {
                s = s + (x[idx(j)] - mx).exp();
            }
            let lse = mx + s.ln();
            for j in 0..n {
                y[idx(j)] = x[idx(j)] - lse;
            }
        }
    }
    y
}

/// Zero-padded "same" im2col for a width-`k` kernel: `[outer*len, k*cin]`.
pub fn im2col<T: Element>(x: &[T], outer: usize, len: usize, cin: usize, k: usize) -> Vec<T> {
    let pad = (k - 1) / 2;
    let mut cols = vec![T::zero(); outer * len * k * cin];
    for o in 0..outer {
        for t in 0..len {
            let row = &mut cols[(o * len + t) * k * cin..(o * len + t + 1) * k * cin];
            for j in 0..k {
                let src = t as isize + j as isize - pad as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let s = (o * len + src as usize) * cin;
                row[j * cin..(j + 1) * cin].copy_from_slice(&x[s..s + cin]);
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`].
pub fn col2im(dcols: &[f64], outer: usize, len: usize, cin: usize, k: usize) -> Vec<f64> {
    let pad = (k - 1) / 2;
    let mut dx = vec![0.0; outer * len * cin];
    for o in 0..outer {
        for t in 0..len {
            let row = &dcols[(o * len + t) * k * cin..(o * len + t + 1) * k * cin];
            for j in 0..k {
                let src = t as isize + j as isize - pad as isize;
                if src < 0 || src >= len as isize {
                    continue;
                }
                let s = (o * len + src as usize) * cin;
                for c in 0..cin {
                    dx[s + c] += row[j * cin + c];
                }
            }
        }
    }
    dx
}

/// Same-padded 1-D convolution. `w` is `[k, cin, cout]`, `b` is `[cout]`.
pub fn conv1d<T: Element>(
    x: &[T],
    w: &[T],
    b: &[T],
    outer: usize,
    len: usize,
    cin: usize,
    k: usize,
) -> Vec<T> {
    let cout = b.len();
    let cols = im2col(x, outer, len, cin, k);
    let mut y = matmul(&cols, w, outer * len, k * cin, cout);
    add_rows(&mut y, b);
    y
}

/// Max pool over the length axis; returns values and flat argmax indices.
/// Ties resolve to the lowest index.
pub fn maxpool1d<T: Element>(
    x: &[T],
    outer: usize,
    len: usize,
    ch: usize,
    size: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>) {
    let out_len = (len - size) / stride + 1;
    let mut y = Vec::with_capacity(outer * out_len * ch);
    let mut arg = Vec::with_capacity(outer * out_len * ch);
    for o in 0..outer {
        for p in 0..out_len {
            for c in 0..ch {
                let mut best = (o * len + p * stride) * ch + c;
                for j in 1..size {
                    let idx = (o * len + p * stride + j) * ch + c;
                    if x[idx] > x[best] {
                        best = idx;
                    }
                }
                y.push(x[best]);
                arg.push(best);
            }
        }
    }
    (y, arg)
}

pub fn avgpool1d<T: Element>(
    x: &[T],
    outer: usize,
    len: usize,
    ch: usize,
    size: usize,
    stride: usize,
) -> Vec<T> {
    let out_len = (len - size) / stride + 1;
    let denom = T::from_f64(size as f64);
    let mut y = Vec::with_capacity(outer * out_len * ch);
    for o in 0..outer {
        for p in 0..out_len {
            for c in 0..ch {
                let mut s = T::zero();
                for j in 0..size {
                    s = s + x[(o * len + p * stride + j) * ch + c];
                }
                y.push(s / denom);
            }
        }
    }
    y
}

/// 2-D max pool over the last two axes of `[outer, rows, cols]`.
pub fn maxpool2d<T: Element>(
    x: &[T],
    outer: usize,
    rows: usize,
    cols: usize,
    size: usize,
    stride: usize,
) -> (Vec<T>, Vec<usize>) {
    let orows = (rows - size) / stride + 1;
    let ocols = (cols - size) / stride + 1;
    let mut y = Vec::with_capacity(outer * orows * ocols);
    let mut arg = Vec::with_capacity(outer * orows * ocols);
    for o in 0..outer {
        let base = o * rows * cols;
        for a in 0..orows {
            for b in 0..ocols {
                let mut best = base + (a * stride) * cols + b * stride;
                for kx in 0..size {
                    for ky in 0..size {
                        let idx = base + (a * stride + kx) * cols + b * stride + ky;
                        if x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                y.push(x[best]);
                arg.push(best);
            }
        }
    }
    (y, arg)
}

/// Nearest-neighbour repetition of every position `factor` times.
pub fn upsample1d<T: Element>(x: &[T], outer: usize, len: usize, ch: usize, factor: usize) -> Vec<T> {
    let mut y = Vec::with_capacity(x.len() * factor);
    for o in 0..outer {
        for t in 0..len {
            let row = &x[(o * len + t) * ch..(o * len + t + 1) * ch];
            for _ in 0..factor {
                y.extend_from_slice(row);
            }
        }
    }
    y
}

/// Scaled dot-product scores per head: `[batch, heads, lq, lk]`.
/// Keys whose mask entry is 0 are set to [`MASK_VALUE`].
#[allow(clippy::too_many_arguments)]
pub fn attention_scores<T: Element>(
    q: &[T],
    k: &[T],
    batch: usize,
    lq: usize,
    lk: usize,
    dim: usize,
    heads: usize,
    key_mask: Option<&[f64]>,
) -> Vec<T> {
    let dh = dim / heads;
    let alpha = T::from_f64(1.0 / (dh as f64).sqrt());
    let mut s = vec![T::zero(); batch * heads * lq * lk];
    for b in 0..batch {
        for h in 0..heads {
            let out = &mut s[(b * heads + h) * lq * lk..(b * heads + h + 1) * lq * lk];
            T::gemm_strided(
                lq,
                dh,
                lk,
                alpha,
                &q[b * lq * dim + h * dh..],
                dim as isize,
                1,
                &k[b * lk * dim + h * dh..],
                1,
                dim as isize,
                T::zero(),
                out,
                lk as isize,
                1,
            );
            if let Some(mask) = key_mask {
                let m = &mask[b * lk..(b + 1) * lk];
                for row in out.chunks_exact_mut(lk) {
                    for (v, &keep) in row.iter_mut().zip(m) {
                        if keep == 0.0 {
                            *v = T::from_f64(MASK_VALUE);
                        }
                    }
                }
            }
        }
    }
    s
}

/// Weighted sum of values: `probs [batch, heads, lq, lk] x v [batch, lk, dim]`.
pub fn attention_context<T: Element>(
    probs: &[T],
    v: &[T],
    batch: usize,
    lq: usize,
    lk: usize,
    dim: usize,
    heads: usize,
) -> Vec<T> {
    let dh = dim / heads;
    let mut out = vec![T::zero(); batch * lq * dim];
    for b in 0..batch {
        for h in 0..heads {
            T::gemm_strided(
                lq,
                lk,
                dh,
                T::one(),
                &probs[(b * heads + h) * lq * lk..],
                lk as isize,
                1,
                &v[b * lk * dim + h * dh..],
                dim as isize,
                1,
                T::zero(),
                &mut out[b * lq * dim + h * dh..],
                dim as isize,
                1,
            );
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gemm_transposed_variants_agree_with_loops() {
        let a: Vec<f64> = (0..6).map(|v| v as f64 * 0.5 - 1.0).collect(); // 2x3
        let b: Vec<f64> = (0..12).map(|v| (v as f64).sin()).collect(); // 3x4
        let c = matmul(&a, &b, 2, 3, 4);
        for i in 0..2 {
            for j in 0..4 {
                let want: f64 = (0..3).map(|t| a[i * 3 + t] * b[t * 4 + j]).sum();
                assert!((c[i * 4 + j] - want).abs() < 1e-14);
            }
        }
        // a^T * c where a: [2,3] viewed as k=2, m=3
        let mut d = vec![0.0; 3 * 4];
        matmul_tn_acc(&a, &c, &mut d, 3, 2, 4);
        for i in 0..3 {
            for j in 0..4 {
                let want: f64 = (0..2).map(|t| a[t * 3 + i] * c[t * 4 + j]).sum();
                assert!((d[i * 4 + j] - want).abs() < 1e-14);
            }
        }
        // c * b^T: [2,4] x [4,3]
        let mut e = vec![0.0; 2 * 3];
        matmul_nt_acc(&c, &b, &mut e, 2, 4, 3);
        for i in 0..2 {
            for j in 0..3 {
                let want: f64 = (0..4).map(|t| c[i * 4 + t] * b[j * 4 + t]).sum();
                assert!((e[i * 3 + j] - want).abs() < 1e-13);
            }
        }
    }

    #[test]
    fn gelu_derivative_matches_difference_quotient() {
        for &x in &[-3.0, -0.7, 0.0, 0.4, 2.5] {
            let h = 1e-6;
            let fd = (gelu(x + h) - gelu(x - h)) / (2.0 * h);
            assert!((fd - gelu_grad(x)).abs() < 1e-8);
        }
    }

    #[test]
    fn f32_kernels_track_f64() {
        let x: Vec<f64> = (0..24).map(|v| (v as f64 * 0.37).cos()).collect();
        let w: Vec<f64> = (0..3 * 4 * 2).map(|v| (v as f64 * 0.11).sin()).collect();
        let b = vec![0.1, -0.2];
        let y64 = conv1d(&x, &w, &b, 1, 6, 4, 3);
        let xf: Vec<f32> = x.iter().map(|&v| v as f32).collect();
        let wf: Vec<f32> = w.iter().map(|&v| v as f32).collect();
        let y32 = conv1d(&xf, &wf, &[0.1f32, -0.2], 1, 6, 4, 3);
        for (a, b) in y64.iter().zip(&y32) {
            assert!((a - *b as f64).abs() < 1e-5);
        }
    }
}
