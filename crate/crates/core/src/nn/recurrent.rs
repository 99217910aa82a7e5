//! GRU and LSTM kernels with backpropagation through time.
//!
//! Gate layouts along the `gates * H` axis: GRU `[z, r, n]`, LSTM
//! `[i, f, g, o]`. The GRU update is `h = (1 - z) * h_prev + z * n` with the
//! reset gate applied to the previous state before the recurrent matmul.

use alloc::vec;
use alloc::vec::Vec;

use super::activation::sigmoid;
use super::ops::{col_sums, dense_forward};
use super::real::{gemm, View};
use super::Real;

/// Gradients below `sqrt(MIN_POSITIVE)` are flushed to zero during BPTT.
/// Signals fading through hundreds of steps otherwise decay into subnormal
/// floats, which are orders of magnitude slower to multiply and carry no
/// useful information.
#[inline]
fn flush<T: Real>(v: T) -> T {
    if v.abs() < T::min_positive_value().sqrt() {
        T::zero()
    } else {
        v
    }
}

pub(crate) struct GruCache<T> {
    /// `[B, L, 3H]` post-activation z, r, n.
    gates: Vec<T>,
    /// `[B, L, H]` r * h_prev.
    rh: Vec<T>,
}

pub(crate) struct LstmCache<T> {
    /// `[B, L, 4H]` post-activation i, f, g, o.
    gates: Vec<T>,
    /// `[B, L, H]` cell states.
    cells: Vec<T>,
}

pub(crate) struct RnnGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw_ih: Vec<T>,
    pub dw_hh: Vec<T>,
    pub db: Vec<T>,
}

#[inline]
fn step_pos(s: usize, l: usize, reverse: bool) -> usize {
    if reverse {
        l - 1 - s
    } else {
        s
    }
}

/// Copies each step's predecessor state from `seq` (`[B, L, H]`) into the
/// slot of the step that consumed it; the first processed step gets zeros.
fn shifted_prev<T: Real>(seq: &[T], b: usize, l: usize, h: usize, reverse: bool) -> Vec<T> {
    let mut prev = vec![T::zero(); b * l * h];
    for bi in 0..b {
        for s in 1..l {
            let t = step_pos(s, l, reverse);
            let tp = step_pos(s - 1, l, reverse);
            let (dst, src) = ((bi * l + t) * h, (bi * l + tp) * h);
            prev[dst..dst + h].copy_from_slice(&seq[src..src + h]);
        }
    }
    prev
}

pub(crate) fn gru_forward<T: Real>(
    x: &[T],
    w_ih: &[T],
    w_hh: &[T],
    bias: &[T],
    [b, l, c, h]: [usize; 4],
    reverse: bool,
) -> (Vec<T>, GruCache<T>) {
    let g3 = 3 * h;
    let xp = dense_forward(x, w_ih, bias, b * l, c, g3);
    let mut out = vec![T::zero(); b * l * h];
    let mut gates = vec![T::zero(); b * l * g3];
    let mut rh = vec![T::zero(); b * l * h];
    let mut hprev = vec![T::zero(); b * h];
    let mut rec = vec![T::zero(); b * 2 * h];
    let mut nrec = vec![T::zero(); b * h];
    for s in 0..l {
        let t = step_pos(s, l, reverse);
        if s > 0 {
            gemm(
                View::rows(&hprev, b, h, h),
                View::rows(w_hh, h, 2 * h, g3),
                T::zero(),
                &mut rec,
                2 * h,
            );
        }
        for bi in 0..b {
            let row = (bi * l + t) * g3;
            for j in 0..h {
                let z = sigmoid(xp[row + j] + rec[bi * 2 * h + j]);
                let r = sigmoid(xp[row + h + j] + rec[bi * 2 * h + h + j]);
                gates[row + j] = z;
                gates[row + h + j] = r;
                rh[(bi * l + t) * h + j] = r * hprev[bi * h + j];
            }
        }
        gemm(
            View::rows(&rh[t * h..], b, h, l * h),
            View::rows(&w_hh[2 * h..], h, h, g3),
            T::zero(),
            &mut nrec,
            h,
        );
        for bi in 0..b {
            let row = (bi * l + t) * g3;
            for j in 0..h {
                let n = (xp[row + 2 * h + j] + nrec[bi * h + j]).tanh();
                gates[row + 2 * h + j] = n;
                let z = gates[row + j];
                let hp = hprev[bi * h + j];
                let hn = (T::one() - z) * hp + z * n;
                out[(bi * l + t) * h + j] = hn;
                hprev[bi * h + j] = hn;
            }
        }
    }
    (out, GruCache { gates, rh })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn gru_backward<T: Real>(
    x: &[T],
    w_ih: &[T],
    w_hh: &[T],
    out: &[T],
    cache: &GruCache<T>,
    dout: &[T],
    [b, l, c, h]: [usize; 4],
    reverse: bool,
    want_dx: bool,
) -> RnnGrads<T> {
    let g3 = 3 * h;
    let gates = &cache.gates;
    let hprev_all = shifted_prev(out, b, l, h, reverse);
    let mut dxp = vec![T::zero(); b * l * g3];
    let mut dh_next = vec![T::zero(); b * h];
    let mut dhprev = vec![T::zero(); b * h];
    let mut drh = vec![T::zero(); b * h];
    for s in (0..l).rev() {
        let t = step_pos(s, l, reverse);
        for bi in 0..b {
            let idx = bi * l + t;
            for j in 0..h {
                let dh = flush(dout[idx * h + j] + dh_next[bi * h + j]);
                let z = gates[idx * g3 + j];
                let n = gates[idx * g3 + 2 * h + j];
                let hp = hprev_all[idx * h + j];
                dxp[idx * g3 + j] = flush(dh * (n - hp) * z * (T::one() - z));
                dxp[idx * g3 + 2 * h + j] = flush(dh * z * (T::one() - n * n));
                dhprev[bi * h + j] = dh * (T::one() - z);
            }
        }
        gemm(
            View::rows(&dxp[t * g3 + 2 * h..], b, h, l * g3),
            View::rows(&w_hh[2 * h..], h, h, g3).t(),
            T::zero(),
            &mut drh,
            h,
        );
        for bi in 0..b {
            let idx = bi * l + t;
            for j in 0..h {
                let r = gates[idx * g3 + h + j];
                let hp = hprev_all[idx * h + j];
                let d = drh[bi * h + j];
                dhprev[bi * h + j] += d * r;
                dxp[idx * g3 + h + j] = flush(d * hp * r * (T::one() - r));
            }
        }
        gemm(
            View::rows(&dxp[t * g3..], b, 2 * h, l * g3),
            View::rows(w_hh, h, 2 * h, g3).t(),
            T::one(),
            &mut dhprev,
            h,
        );
        core::mem::swap(&mut dh_next, &mut dhprev);
    }

    let bl = b * l;
    let mut dw_hh = vec![T::zero(); h * g3];
    gemm(
        View::rows(&hprev_all, bl, h, h).t(),
        View::rows(&dxp, bl, 2 * h, g3),
        T::zero(),
        &mut dw_hh,
        g3,
    );
    gemm(
        View::rows(&cache.rh, bl, h, h).t(),
        View::rows(&dxp[2 * h..], bl, h, g3),
        T::zero(),
        &mut dw_hh[2 * h..],
        g3,
    );
    input_grads(x, w_ih, dxp, dw_hh, bl, c, g3, want_dx)
}

#[allow(clippy::too_many_arguments)]
fn input_grads<T: Real>(
    x: &[T],
    w_ih: &[T],
    dxp: Vec<T>,
    dw_hh: Vec<T>,
    rows: usize,
    c: usize,
    g: usize,
    want_dx: bool,
) -> RnnGrads<T> {
    let mut dw_ih = vec![T::zero(); c * g];
    gemm(
        View::rows(x, rows, c, c).t(),
        View::rows(&dxp, rows, g, g),
        T::zero(),
        &mut dw_ih,
        g,
    );
    let db = col_sums(&dxp, g);
    let dx = want_dx.then(|| {
        let mut dx = vec![T::zero(); rows * c];
        gemm(
            View::rows(&dxp, rows, g, g),
            View::rows(w_ih, c, g, g).t(),
            T::zero(),
            &mut dx,
            c,
        );
        dx
    });
    RnnGrads {
        dx,
        dw_ih,
        dw_hh,
        db,
    }
}

pub(crate) fn lstm_forward<T: Real>(
    x: &[T],
    w_ih: &[T],
    w_hh: &[T],
    bias: &[T],
    [b, l, c, h]: [usize; 4],
    reverse: bool,
) -> (Vec<T>, LstmCache<T>) {
    let g4 = 4 * h;
    let xp = dense_forward(x, w_ih, bias, b * l, c, g4);
    let mut out = vec![T::zero(); b * l * h];
    let mut gates = vec![T::zero(); b * l * g4];
    let mut cells = vec![T::zero(); b * l * h];
    let mut hprev = vec![T::zero(); b * h];
    let mut cprev = vec![T::zero(); b * h];
    let mut rec = vec![T::zero(); b * g4];
    for s in 0..l {
        let t = step_pos(s, l, reverse);
        if s > 0 {
            gemm(
                View::rows(&hprev, b, h, h),
                View::rows(w_hh, h, g4, g4),
                T::zero(),
                &mut rec,
                g4,
            );
        }
        for bi in 0..b {
            let row = (bi * l + t) * g4;
            let rr = bi * g4;
            for j in 0..h {
                let i = sigmoid(xp[row + j] + rec[rr + j]);
                let f = sigmoid(xp[row + h + j] + rec[rr + h + j]);
                let g = (xp[row + 2 * h + j] + rec[rr + 2 * h + j]).tanh();
                let o = sigmoid(xp[row + 3 * h + j] + rec[rr + 3 * h + j]);
                gates[row + j] = i;
                gates[row + h + j] = f;
                gates[row + 2 * h + j] = g;
                gates[row + 3 * h + j] = o;
                let cn = f * cprev[bi * h + j] + i * g;
                let hn = o * cn.tanh();
                cells[(bi * l + t) * h + j] = cn;
                out[(bi * l + t) * h + j] = hn;
                cprev[bi * h + j] = cn;
                hprev[bi * h + j] = hn;
            }
        }
    }
    (out, LstmCache { gates, cells })
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn lstm_backward<T: Real>(
    x: &[T],
    w_ih: &[T],
    w_hh: &[T],
    out: &[T],
    cache: &LstmCache<T>,
    dout: &[T],
    [b, l, c, h]: [usize; 4],
    reverse: bool,
    want_dx: bool,
) -> RnnGrads<T> {
    let g4 = 4 * h;
    let gates = &cache.gates;
    let hprev_all = shifted_prev(out, b, l, h, reverse);
    let cprev_all = shifted_prev(&cache.cells, b, l, h, reverse);
    let mut dxp = vec![T::zero(); b * l * g4];
    let mut dh_next = vec![T::zero(); b * h];
    let mut dc_next = vec![T::zero(); b * h];
    for s in (0..l).rev() {
        let t = step_pos(s, l, reverse);
        for bi in 0..b {
            let idx = bi * l + t;
            let row = idx * g4;
            for j in 0..h {
                let dh = flush(dout[idx * h + j] + dh_next[bi * h + j]);
                let i = gates[row + j];
                let f = gates[row + h + j];
                let g = gates[row + 2 * h + j];
                let o = gates[row + 3 * h + j];
                let tc = cache.cells[idx * h + j].tanh();
                let dc = flush(dc_next[bi * h + j] + dh * o * (T::one() - tc * tc));
                dc_next[bi * h + j] = dc * f;
                dxp[row + j] = flush(dc * g * i * (T::one() - i));
                dxp[row + h + j] = flush(dc * cprev_all[idx * h + j] * f * (T::one() - f));
                dxp[row + 2 * h + j] = flush(dc * i * (T::one() - g * g));
                dxp[row + 3 * h + j] = flush(dh * tc * o * (T::one() - o));
            }
        }
        gemm(
            View::rows(&dxp[t * g4..], b, g4, l * g4),
            View::rows(w_hh, h, g4, g4).t(),
            T::zero(),
            &mut dh_next,
            h,
        );
    }
    let bl = b * l;
    let mut dw_hh = vec![T::zero(); h * g4];
    gemm(
        View::rows(&hprev_all, bl, h, h).t(),
        View::rows(&dxp, bl, g4, g4),
        T::zero(),
        &mut dw_hh,
        g4,
    );
    input_grads(x, w_ih, dxp, dw_hh, bl, c, g4, want_dx)
}
