#![allow(dead_code)]
//! Independent reference computations used by the integration suites.

use nalgebra::{DMatrix, DVector};
use pelcausal::glm::expit;
use pelcausal::weighting::SandwichSystem;
use pelcausal::Dataset;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Maximizes `sum_j c_j log p_j` subject to `A p = b` by infeasible-start
/// Newton on the KKT conditions, working on `p` directly.
pub fn primal_max(c: &[f64], a: &DMatrix<f64>, b: &DVector<f64>, start: &[f64]) -> Option<(Vec<f64>, f64)> {
    let (m, k) = (c.len(), a.nrows());
    let mut p = DVector::from_column_slice(start);
    let mut nu = DVector::<f64>::zeros(k);
    let resid = |p: &DVector<f64>, nu: &DVector<f64>| -> DVector<f64> {
        let mut r = DVector::zeros(m + k);
        let dual = a.transpose() * nu;
        for j in 0..m {
            r[j] = -c[j] / p[j] + dual[j];
        }
        let pri = a * p - b;
        for i in 0..k {
            r[m + i] = pri[i];
        }
        r
    };
    for _ in 0..20_000 {
        let r = resid(&p, &nu);
        let norm = r.norm();
        let scale = (0..m).map(|j| c[j] / p[j]).fold(1.0, f64::max);
        if norm < 1e-13 * scale {
            let obj = (0..m).map(|j| c[j] * p[j].ln()).sum();
            return Some((p.iter().copied().collect(), obj));
        }
        let mut kkt = DMatrix::zeros(m + k, m + k);
        for j in 0..m {
            kkt[(j, j)] = c[j] / (p[j] * p[j]);
        }
        for i in 0..k {
            for j in 0..m {
                kkt[(m + i, j)] = a[(i, j)];
                kkt[(j, m + i)] = a[(i, j)];
            }
        }
        let step = kkt.lu().solve(&(-&r))?;
        let dp = step.rows(0, m).into_owned();
        let dnu = step.rows(m, k).into_owned();
        let mut t = 1.0;
        loop {
            let cand = &p + &dp * t;
            if cand.iter().all(|&v| v > 0.0) {
                let cn = &nu + &dnu * t;
                if resid(&cand, &cn).norm() <= (1.0 - 0.01 * t) * norm {
                    p = cand;
                    nu = cn;
                    break;
                }
            }
            t *= 0.5;
            if t < 1e-14 {
                return None;
            }
        }
    }
    None
}

/// Weighted two-sample problem: coefficients `n w_i a_ij`, rows
/// `[1 0] = 1`, `[0 1] = 1`, then any extra rows.
pub struct TwoSample {
    pub n: usize,
    pub a1: Vec<f64>,
    pub a0: Vec<f64>,
}

impl TwoSample {
    pub fn coefficients(&self) -> Vec<f64> {
        let n = self.n as f64;
        self.a1.iter().chain(&self.a0).map(|a| 0.5 * n * a).collect()
    }

    pub fn rows(&self, extra: &[(Vec<f64>, f64)]) -> (DMatrix<f64>, DVector<f64>) {
        let (n1, n0) = (self.a1.len(), self.a0.len());
        let m = n1 + n0;
        let k = 2 + extra.len();
        let mut a = DMatrix::zeros(k, m);
        let mut b = DVector::zeros(k);
        for j in 0..n1 {
            a[(0, j)] = 1.0;
        }
        for j in 0..n0 {
            a[(1, n1 + j)] = 1.0;
        }
        b[0] = 1.0;
        b[1] = 1.0;
        for (i, (row, rhs)) in extra.iter().enumerate() {
            for j in 0..m {
                a[(2 + i, j)] = row[j];
            }
            b[2 + i] = *rhs;
        }
        (a, b)
    }

    pub fn solve(&self, extra: &[(Vec<f64>, f64)]) -> Option<(Vec<f64>, Vec<f64>, f64)> {
        let (a, b) = self.rows(extra);
        let n1 = self.a1.len();
        let start: Vec<f64> = (0..n1)
            .map(|_| 1.0 / n1 as f64)
            .chain((0..self.a0.len()).map(|_| 1.0 / self.a0.len() as f64))
            .collect();
        let (p, obj) = primal_max(&self.coefficients(), &a, &b, &start)?;
        Some((p[..n1].to_vec(), p[n1..].to_vec(), obj))
    }
}

/// Two treated and two control units under normalization and a fixed
/// contrast: one free coordinate, scanned densely and then refined by
/// golden section.
pub fn scan_two_by_two(n: usize, a1: [f64; 2], a0: [f64; 2], y1: [f64; 2], y0: [f64; 2], theta: f64) -> Option<(f64, f64, f64)> {
    let nf = n as f64;
    let eval = |s: f64| -> Option<(f64, f64)> {
        let u = (s * y1[0] + (1.0 - s) * y1[1] - theta - y0[1]) / (y0[0] - y0[1]);
        if !(s > 0.0 && s < 1.0 && u > 0.0 && u < 1.0) {
            return None;
        }
        let l = 0.5 * nf * (a1[0] * s.ln() + a1[1] * (1.0 - s).ln() + a0[0] * u.ln() + a0[1] * (1.0 - u).ln());
        Some((l, u))
    };
    let grid = 200_000;
    let mut best: Option<(f64, usize)> = None;
    for i in 1..grid {
        if let Some((l, _)) = eval(i as f64 / grid as f64) {
            if best.map_or(true, |(b, _)| l > b) {
                best = Some((l, i));
            }
        }
    }
    let (_, i) = best?;
    let (mut lo, mut hi) = ((i as f64 - 1.0) / grid as f64, (i as f64 + 1.0) / grid as f64);
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let f = |s: f64| eval(s).map_or(f64::NEG_INFINITY, |v| v.0);
    for _ in 0..200 {
        let x1 = hi - g * (hi - lo);
        let x2 = lo + g * (hi - lo);
        if f(x1) < f(x2) {
            lo = x1;
        } else {
            hi = x2;
        }
    }
    let s = 0.5 * (lo + hi);
    let (l, u) = eval(s)?;
    Some((s, u, l))
}

pub fn fd_jacobian(sys: &SandwichSystem, psi: &DVector<f64>) -> DMatrix<f64> {
    let q = sys.dim();
    let n = sys.n() as f64;
    let mut h = DMatrix::zeros(q, q);
    for k in 0..q {
        let step = 1e-6 * psi[k].abs().max(1.0);
        let mut pp = psi.clone();
        let mut pm = psi.clone();
        pp[k] += step;
        pm[k] -= step;
        let up = sys.equations(&pp);
        let um = sys.equations(&pm);
        for r in 0..q {
            h[(r, k)] = (up.column(r).sum() - um.column(r).sum()) / (2.0 * step * n);
        }
    }
    h
}

/// Logistic assignment and linear outcomes with uniform noise.
pub fn random_dataset(rng: &mut ChaCha8Rng, n: usize, d: usize) -> Option<Dataset> {
    let coef: Vec<f64> = (0..d).map(|_| rng.gen_range(-0.8..0.8)).collect();
    let slope: Vec<f64> = (0..d).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let effect = rng.gen_range(-1.0..3.0);
    let mut rows = Vec::with_capacity(n);
    let mut t = Vec::with_capacity(n);
    let mut y = Vec::with_capacity(n);
    for _ in 0..n {
        let x: Vec<f64> = (0..d).map(|_| rng.gen_range(-1.5..1.5)).collect();
        let eta: f64 = x.iter().zip(&coef).map(|(a, b)| a * b).sum();
        let tj = u8::from(rng.gen::<f64>() < expit(eta));
        let mu: f64 = x.iter().zip(&slope).map(|(a, b)| a * b).sum();
        y.push(mu + effect * f64::from(tj) + rng.gen_range(-1.0..1.0));
        t.push(tj);
        rows.push(x);
    }
    if t.iter().filter(|&&v| v == 1).count() < d + 3 || t.iter().filter(|&&v| v == 0).count() < d + 3 {
        return None;
    }
    Dataset::from_rows(&rows, t, y).ok()
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Normalized positive weights.
pub fn random_weights(rng: &mut ChaCha8Rng, k: usize) -> Vec<f64> {
    let w: Vec<f64> = (0..k).map(|_| rng.gen_range(0.2..1.0)).collect();
    let s: f64 = w.iter().sum();
    w.into_iter().map(|v| v / s).collect()
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}
