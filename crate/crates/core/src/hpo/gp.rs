//! Gaussian-process surrogate: Matérn-5/2 kernel with per-dimension length
//! scales and a noise term, hyperparameters fit by Adam ascent on the log
//! marginal likelihood.

use alloc::vec;
use alloc::vec::Vec;

use num_traits::Float;

use crate::nn::real::{gemm, View};
use crate::{Error, Result};

const SQRT5: f64 = 2.236_067_977_499_79;
const JITTER: f64 = 1e-8;
const FIT_STEPS: usize = 200;
const FIT_LR: f64 = 0.05;
const LOG_LS: (f64, f64) = (-2.0 * core::f64::consts::LN_10, core::f64::consts::LN_10); // ln 0.01, ln 10
const LOG_SIGNAL: (f64, f64) = (-2.0 * core::f64::consts::LN_10, 2.0 * core::f64::consts::LN_10);
const LOG_NOISE: (f64, f64) = (-6.0 * core::f64::consts::LN_10, 0.0); // ln 1e-6, ln 1
/// Rows per block when scoring many candidates.
const CHUNK: usize = 4096;

/// Matérn-5/2 correlation as a function of the scaled distance `r`.
#[inline]
fn matern(r: f64) -> f64 {
    let s = SQRT5 * r;
    (1.0 + s + s * s / 3.0) * Float::exp(-s)
}

/// In-place lower Cholesky factor of the `n x n` row-major matrix `a`.
fn cholesky(a: &mut [f64], n: usize) -> Result<()> {
    for j in 0..n {
        let mut d = a[j * n + j];
        for k in 0..j {
            d -= a[j * n + k] * a[j * n + k];
        }
        if !(d > 0.0) {
            return Err(Error::LinAlg("kernel matrix is not positive definite"));
        }
        let d = libm::sqrt(d);
        a[j * n + j] = d;
        for i in j + 1..n {
            let mut s = a[i * n + j];
            for k in 0..j {
                s -= a[i * n + k] * a[j * n + k];
            }
            a[i * n + j] = s / d;
        }
        for i in 0..j {
            a[i * n + j] = 0.0;
        }
    }
    Ok(())
}

/// Solves `L L^T x = b` given the factor `l`.
fn cho_solve(l: &[f64], n: usize, b: &[f64]) -> Vec<f64> {
    let mut y = b.to_vec();
    for i in 0..n {
        let mut s = y[i];
        for k in 0..i {
            s -= l[i * n + k] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    for i in (0..n).rev() {
        let mut s = y[i];
        for k in i + 1..n {
            s -= l[k * n + i] * y[k];
        }
        y[i] = s / l[i * n + i];
    }
    y
}

/// Inverse of `L L^T` from its factor.
fn cho_inverse(l: &[f64], n: usize) -> Vec<f64> {
    let mut inv = vec![0.0; n * n];
    let mut e = vec![0.0; n];
    for j in 0..n {
        e.iter_mut().for_each(|v| *v = 0.0);
        e[j] = 1.0;
        let col = cho_solve(l, n, &e);
        for i in 0..n {
            inv[i * n + j] = col[i];
        }
    }
    inv
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpHyper {
    pub length_scales: Vec<f64>,
    pub signal_var: f64,
    pub noise_var: f64,
}

/// A fitted posterior over standardized targets.
#[derive(Debug, Clone)]
pub struct Gp {
    pub hyper: GpHyper,
    dim: usize,
    x: Vec<f64>,
    alpha: Vec<f64>,
    k_inv: Vec<f64>,
    y_mean: f64,
    y_std: f64,
}

struct Factored {
    l: Vec<f64>,
    alpha: Vec<f64>,
    lml: f64,
}

fn kernel_matrix(x: &[f64], n: usize, d: usize, h: &GpHyper) -> Vec<f64> {
    let mut k = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..=i {
            let r2: f64 = (0..d)
                .map(|c| {
                    let t = (x[i * d + c] - x[j * d + c]) / h.length_scales[c];
                    t * t
                })
                .sum();
            let v = h.signal_var * matern(libm::sqrt(r2));
            k[i * n + j] = v;
            k[j * n + i] = v;
        }
        k[i * n + i] += h.noise_var + JITTER;
    }
    k
}

fn factor(x: &[f64], y: &[f64], d: usize, h: &GpHyper) -> Result<Factored> {
    let n = y.len();
    let mut l = kernel_matrix(x, n, d, h);
    cholesky(&mut l, n)?;
    let alpha = cho_solve(&l, n, y);
    let fit: f64 = y.iter().zip(&alpha).map(|(a, b)| a * b).sum();
    let logdet: f64 = (0..n).map(|i| libm::log(l[i * n + i])).sum();
    let lml = -0.5 * fit - logdet - 0.5 * n as f64 * libm::log(2.0 * core::f64::consts::PI);
    Ok(Factored { l, alpha, lml })
}

/// Log marginal likelihood and its gradient with respect to
/// `[ln l_1..ln l_d, ln signal, ln noise]`.
pub(crate) fn lml_and_grad(x: &[f64], y: &[f64], d: usize, h: &GpHyper) -> Result<(f64, Vec<f64>)> {
    let n = y.len();
    let f = factor(x, y, d, h)?;
    let k_inv = cho_inverse(&f.l, n);
    // W = alpha alpha^T - K^{-1}; dL/dθ = ½ tr(W dK/dθ)
    let w = |i: usize, j: usize| f.alpha[i] * f.alpha[j] - k_inv[i * n + j];
    let mut grad = vec![0.0; d + 2];
    for i in 0..n {
        for j in 0..n {
            let wij = w(i, j);
            let mut r2 = 0.0;
            for c in 0..d {
                let t = (x[i * d + c] - x[j * d + c]) / h.length_scales[c];
                r2 += t * t;
            }
            let r = libm::sqrt(r2);
            let kij = h.signal_var * matern(r);
            // dk/d ln l_c = s² (5/3)(1 + √5 r) e^{-√5 r} Δ_c² / l_c²
            let common = h.signal_var * (5.0 / 3.0) * (1.0 + SQRT5 * r) * libm::exp(-SQRT5 * r);
            for c in 0..d {
                let t = (x[i * d + c] - x[j * d + c]) / h.length_scales[c];
                grad[c] += 0.5 * wij * common * t * t;
            }
            grad[d] += 0.5 * wij * kij;
            if i == j {
                grad[d + 1] += 0.5 * wij * h.noise_var;
            }
        }
    }
    Ok((f.lml, grad))
}

fn from_logs(theta: &[f64], d: usize) -> GpHyper {
    GpHyper {
        length_scales: theta[..d].iter().map(|&v| libm::exp(v)).collect(),
        signal_var: libm::exp(theta[d]),
        noise_var: libm::exp(theta[d + 1]),
    }
}

impl Gp {
    /// Fits to rows of `x` (`[n, d]` row-major, coordinates in `[0, 1]`) and
    /// targets `y`. Targets are standardized internally.
    pub fn fit(x: &[f64], y: &[f64], d: usize) -> Result<Self> {
        let n = y.len();
        if n == 0 || x.len() != n * d {
            return Err(Error::NoData("surrogate observations"));
        }
        let y_mean = y.iter().sum::<f64>() / n as f64;
        let var = y.iter().map(|v| (v - y_mean) * (v - y_mean)).sum::<f64>() / n as f64;
        let y_std = if var > 0.0 { libm::sqrt(var) } else { 1.0 };
        let ys: Vec<f64> = y.iter().map(|v| (v - y_mean) / y_std).collect();

        let mut theta = vec![libm::log(0.3); d];
        theta.push(0.0);
        theta.push(libm::log(1e-2));
        let bounds = |k: usize| {
            if k < d {
                LOG_LS
            } else if k == d {
                LOG_SIGNAL
            } else {
                LOG_NOISE
            }
        };
        let (b1, b2, eps) = (0.9, 0.999, 1e-8);
        let mut m = vec![0.0; d + 2];
        let mut v = vec![0.0; d + 2];
        let mut best = (f64::NEG_INFINITY, theta.clone());
        for step in 1..=FIT_STEPS {
            let Ok((lml, g)) = lml_and_grad(x, &ys, d, &from_logs(&theta, d)) else {
                break;
            };
            if lml > best.0 {
                best = (lml, theta.clone());
            }
            let c1 = 1.0 - libm::pow(b1, step as f64);
            let c2 = 1.0 - libm::pow(b2, step as f64);
            for k in 0..d + 2 {
                m[k] = b1 * m[k] + (1.0 - b1) * g[k];
                v[k] = b2 * v[k] + (1.0 - b2) * g[k] * g[k];
                // ascent
                theta[k] += FIT_LR * (m[k] / c1) / (libm::sqrt(v[k] / c2) + eps);
                let (lo, hi) = bounds(k);
                theta[k] = theta[k].clamp(lo, hi);
            }
        }
        let hyper = from_logs(&best.1, d);
        let f = factor(x, &ys, d, &hyper)?;
        let k_inv = cho_inverse(&f.l, n);
        Ok(Self {
            hyper,
            dim: d,
            x: x.to_vec(),
            alpha: f.alpha,
            k_inv,
            y_mean,
            y_std,
        })
    }

    fn n(&self) -> usize {
        self.alpha.len()
    }

    /// Posterior mean and latent variance, in standardized units, for the
    /// rows of `xs` (`[m, d]`).
    pub fn predict_std(&self, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (n, d) = (self.n(), self.dim);
        let m_total = xs.len() / d;
        let mut means = Vec::with_capacity(m_total);
        let mut vars = Vec::with_capacity(m_total);
        let mut ks = Vec::new();
        let mut proj = Vec::new();
        for chunk in xs.chunks(CHUNK * d) {
            let m = chunk.len() / d;
            ks.clear();
            ks.resize(m * n, 0.0);
            for i in 0..m {
                for j in 0..n {
                    let r2: f64 = (0..d)
                        .map(|c| {
                            let t = (chunk[i * d + c] - self.x[j * d + c]) / self.hyper.length_scales[c];
                            t * t
                        })
                        .sum();
                    ks[i * n + j] = self.hyper.signal_var * matern(Float::sqrt(r2));
                }
            }
            proj.clear();
            proj.resize(m * n, 0.0);
            gemm(View::rows(&ks, m, n, n), View::rows(&self.k_inv, n, n, n), 0.0, &mut proj, n);
            for i in 0..m {
                let row = &ks[i * n..(i + 1) * n];
                let mean: f64 = row.iter().zip(&self.alpha).map(|(a, b)| a * b).sum();
                let q: f64 = row.iter().zip(&proj[i * n..(i + 1) * n]).map(|(a, b)| a * b).sum();
                means.push(mean);
                vars.push((self.hyper.signal_var - q).max(0.0));
            }
        }
        (means, vars)
    }

    /// Posterior mean and standard deviation in the original target units.
    pub fn predict(&self, xs: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let (m, v) = self.predict_std(xs);
        (
            m.iter().map(|&u| u * self.y_std + self.y_mean).collect(),
            v.iter().map(|&s| libm::sqrt(s) * self.y_std).collect(),
        )
    }

    /// Expected improvement below `best` (original units) for each row of
    /// `xs`.
    pub fn expected_improvement(&self, xs: &[f64], best: f64) -> Vec<f64> {
        let (m, v) = self.predict_std(xs);
        let best = (best - self.y_mean) / self.y_std;
        m.iter()
            .zip(&v)
            .map(|(&mu, &var)| ei(mu, libm::sqrt(var), best) * self.y_std)
            .collect()
    }
}

fn normal_pdf(z: f64) -> f64 {
    libm::exp(-0.5 * z * z) / libm::sqrt(2.0 * core::f64::consts::PI)
}

fn normal_cdf(z: f64) -> f64 {
    0.5 * libm::erfc(-z / core::f64::consts::SQRT_2)
}

/// Expected improvement of a Gaussian `N(mu, sigma²)` below `best`.
pub fn ei(mu: f64, sigma: f64, best: f64) -> f64 {
    let gap = best - mu;
    if sigma < 1e-12 {
        return gap.max(0.0);
    }
    let z = gap / sigma;
    (gap * normal_cdf(z) + sigma * normal_pdf(z)).max(0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cholesky_inverse_round_trip() {
        let a = [4.0, 2.0, 0.6, 2.0, 5.0, 1.0, 0.6, 1.0, 3.0];
        let mut l = a.to_vec();
        cholesky(&mut l, 3).unwrap();
        let inv = cho_inverse(&l, 3);
        for i in 0..3 {
            for j in 0..3 {
                let s: f64 = (0..3).map(|k| a[i * 3 + k] * inv[k * 3 + j]).sum();
                assert!((s - if i == j { 1.0 } else { 0.0 }).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn lml_gradient_matches_finite_differences() {
        let x = [0.1, 0.2, 0.5, 0.9, 0.3, 0.4, 0.8, 0.1, 0.65, 0.55];
        let y = [0.3, -1.2, 0.8, 0.1, -0.4];
        let theta = [libm::log(0.4), libm::log(0.7), libm::log(1.3), libm::log(0.05)];
        let (_, g) = lml_and_grad(&x, &y, 2, &from_logs(&theta, 2)).unwrap();
        for k in 0..4 {
            let mut up = theta;
            up[k] += 1e-6;
            let mut dn = theta;
            dn[k] -= 1e-6;
            let fu = lml_and_grad(&x, &y, 2, &from_logs(&up, 2)).unwrap().0;
            let fd = lml_and_grad(&x, &y, 2, &from_logs(&dn, 2)).unwrap().0;
            let num = (fu - fd) / 2e-6;
            assert!((num - g[k]).abs() < 1e-6 * (1.0 + num.abs()), "{} {} {}", k, num, g[k]);
        }
    }

    #[test]
    fn ei_limits() {
        assert_eq!(ei(1.0, 0.0, 0.5), 0.0);
        assert_eq!(ei(0.0, 0.0, 0.5), 0.5);
        assert!((ei(0.0, 1.0, 0.0) - normal_pdf(0.0)).abs() < 1e-15);
    }
}
