//! Forward/backward kernels for the non-recurrent ops.

use alloc::vec;
use alloc::vec::Vec;

use super::real::{gemm, View};
use super::Real;

/// Lower clamp applied to probabilities before taking logs in BCE.
pub const BCE_CLAMP: f64 = 1e-7;

/// `x: [B, L, Cin]`, `k: [3, Cin, Cout]` → `[B, L, Cout]`, zero padded.
pub(crate) fn conv1d_forward<T: Real>(
    x: &[T],
    k: &[T],
    bias: &[T],
    b: usize,
    l: usize,
    cin: usize,
    cout: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(b * l * cout);
    for _ in 0..b * l {
        out.extend_from_slice(bias);
    }
    let tap = |t: usize| &k[t * cin * cout..(t + 1) * cin * cout];
    // centre tap over every row at once
    gemm(
        View::rows(x, b * l, cin, cin),
        View::rows(tap(1), cin, cout, cout),
        T::one(),
        &mut out,
        cout,
    );
    for bi in 0..b {
        let xb = &x[bi * l * cin..(bi + 1) * l * cin];
        let ob = &mut out[bi * l * cout..(bi + 1) * l * cout];
        // out[t] += x[t-1] k0
        gemm(
            View::rows(xb, l - 1, cin, cin),
            View::rows(tap(0), cin, cout, cout),
            T::one(),
            &mut ob[cout..],
            cout,
        );
        // out[t] += x[t+1] k2
        gemm(
            View::rows(&xb[cin..], l - 1, cin, cin),
            View::rows(tap(2), cin, cout, cout),
            T::one(),
            ob,
            cout,
        );
    }
    out
}

#[allow(clippy::too_many_arguments, clippy::type_complexity)]
pub(crate) fn conv1d_backward<T: Real>(
    x: &[T],
    k: &[T],
    g: &[T],
    b: usize,
    l: usize,
    cin: usize,
    cout: usize,
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let kk = cin * cout;
    let mut dk = vec![T::zero(); 3 * kk];
    gemm(
        View::rows(x, b * l, cin, cin).t(),
        View::rows(g, b * l, cout, cout),
        T::zero(),
        &mut dk[kk..2 * kk],
        cout,
    );
    for bi in 0..b {
        let xb = &x[bi * l * cin..(bi + 1) * l * cin];
        let gb = &g[bi * l * cout..(bi + 1) * l * cout];
        gemm(
            View::rows(xb, l - 1, cin, cin).t(),
            View::rows(&gb[cout..], l - 1, cout, cout),
            T::one(),
            &mut dk[..kk],
            cout,
        );
        gemm(
            View::rows(&xb[cin..], l - 1, cin, cin).t(),
            View::rows(gb, l - 1, cout, cout),
            T::one(),
            &mut dk[2 * kk..],
            cout,
        );
    }
    let db = col_sums(g, cout);
    let dx = want_dx.then(|| {
        let tap_t = |t: usize| View::rows(&k[t * kk..(t + 1) * kk], cin, cout, cout).t();
        let mut dx = vec![T::zero(); b * l * cin];
        gemm(View::rows(g, b * l, cout, cout), tap_t(1), T::zero(), &mut dx, cin);
        for bi in 0..b {
            let gb = &g[bi * l * cout..(bi + 1) * l * cout];
            let dxb = &mut dx[bi * l * cin..(bi + 1) * l * cin];
            // x[t-1] fed out[t] through k0
            gemm(View::rows(&gb[cout..], l - 1, cout, cout), tap_t(0), T::one(), dxb, cin);
            // x[t+1] fed out[t] through k2
            gemm(View::rows(gb, l - 1, cout, cout), tap_t(2), T::one(), &mut dxb[cin..], cin);
        }
        dx
    });
    (dx, dk, db)
}

pub(crate) fn dense_forward<T: Real>(
    x: &[T],
    w: &[T],
    bias: &[T],
    rows: usize,
    din: usize,
    dout: usize,
) -> Vec<T> {
    let mut out = Vec::with_capacity(rows * dout);
    for _ in 0..rows {
        out.extend_from_slice(bias);
    }
    gemm(
        View::rows(x, rows, din, din),
        View::rows(w, din, dout, dout),
        T::one(),
        &mut out,
        dout,
    );
    out
}

#[allow(clippy::type_complexity)]
pub(crate) fn dense_backward<T: Real>(
    x: &[T],
    w: &[T],
    g: &[T],
    rows: usize,
    din: usize,
    dout: usize,
    want_dx: bool,
) -> (Option<Vec<T>>, Vec<T>, Vec<T>) {
    let mut dw = vec![T::zero(); din * dout];
    gemm(
        View::rows(x, rows, din, din).t(),
        View::rows(g, rows, dout, dout),
        T::zero(),
        &mut dw,
        dout,
    );
    let db = col_sums(g, dout);
    let dx = want_dx.then(|| {
        let mut dx = vec![T::zero(); rows * din];
        gemm(
            View::rows(g, rows, dout, dout),
            View::rows(w, din, dout, dout).t(),
            T::zero(),
            &mut dx,
            din,
        );
        dx
    });
    (dx, dw, db)
}

pub(crate) fn col_sums<T: Real>(g: &[T], cols: usize) -> Vec<T> {
    let mut s = vec![T::zero(); cols];
    for row in g.chunks(cols) {
        for (a, &b) in s.iter_mut().zip(row) {
            *a += b;
        }
    }
    s
}

/// Per-feature mean and biased variance of `[n, f]` data.
pub(crate) fn moments<T: Real>(x: &[T], n: usize, f: usize) -> (Vec<T>, Vec<T>) {
    let nf = T::from_f64(n as f64);
    let mean: Vec<T> = col_sums(x, f).into_iter().map(|s| s / nf).collect();
    let mut var = vec![T::zero(); f];
    for row in x.chunks(f) {
        for ((v, &xi), &m) in var.iter_mut().zip(row).zip(&mean) {
            *v += (xi - m) * (xi - m);
        }
    }
    for v in &mut var {
        *v /= nf;
    }
    (mean, var)
}

pub(crate) fn norm2<T: Real>(v: &[T]) -> T {
    v.iter().map(|&a| a * a).sum::<T>().sqrt()
}

/// Entropy of `v` normalized to sum to one; zero entries contribute nothing.
pub(crate) fn entropy<T: Real>(v: &[T]) -> T {
    let s: T = v.iter().copied().sum();
    if s <= T::zero() {
        return T::zero();
    }
    -v.iter()
        .map(|&m| {
            let p = m / s;
            if p > T::zero() {
                p * p.ln()
            } else {
                T::zero()
            }
        })
        .sum::<T>()
}

/// Writes `scale * dH/dm_i = scale * (-ln p_i - H) / S` into `out`.
pub(crate) fn entropy_grad<T: Real>(v: &[T], scale: T, out: &mut [T]) {
    let s: T = v.iter().copied().sum();
    if s <= T::zero() {
        return;
    }
    let h = entropy(v);
    for (o, &m) in out.iter_mut().zip(v) {
        let p = (m / s).max(T::min_positive_value());
        *o = scale * (-p.ln() - h) / s;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn entropy_of_uniform_is_ln_n() {
        let v = [0.3f64; 7];
        assert!((entropy(&v) - 7f64.ln()).abs() < 1e-15);
        assert_eq!(entropy(&[0.0, 2.0, 0.0]), 0.0);
    }

    #[test]
    fn moments_of_two_columns() {
        let x = [1.0f64, 10.0, 3.0, 30.0];
        let (m, v) = moments(&x, 2, 2);
        assert_eq!(m, vec![2.0, 20.0]);
        assert_eq!(v, vec![1.0, 100.0]);
    }
}
