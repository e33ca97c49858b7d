//! Damped Newton on the convex dual `-sum_i w_i sum_j a_ij log(1 + lambda' g_ij)`.

use nalgebra::{DMatrix, DVector};

use super::PelConfig;
use crate::error::{PelError, Result};
use crate::linalg::{cholesky, cholesky_solve};

/// `|lambda' g|` beyond this means the multiplier is running off to infinity.
const DIVERGENCE: f64 = 1e12;

/// One sample's contribution: group weight, normalized design weights and
/// constraint rows (one row per unit).
#[derive(Debug, Clone, Copy)]
pub struct DualGroup<'a> {
    pub weight: f64,
    pub a: &'a [f64],
    pub g: &'a DMatrix<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DualSolution {
    pub lambda: DVector<f64>,
    pub iterations: usize,
    pub residual: f64,
    /// `sum_i w_i sum_j a_ij log(1 + lambda' g_ij)` at the solution.
    pub log_sum: f64,
}

struct Eval {
    obj: f64,
    grad: DVector<f64>,
    hess: DMatrix<f64>,
}

fn min_denominator(groups: &[DualGroup<'_>], lambda: &DVector<f64>) -> f64 {
    let mut m = f64::INFINITY;
    for grp in groups {
        for j in 0..grp.g.nrows() {
            let s: f64 = grp
                .g
                .row(j)
                .iter()
                .zip(lambda.iter())
                .map(|(g, l)| g * l)
                .sum();
            m = m.min(1.0 + s);
        }
    }
    m
}

fn objective(groups: &[DualGroup<'_>], lambda: &DVector<f64>) -> f64 {
    let mut obj = 0.0;
    for grp in groups {
        let mut s = 0.0;
        for j in 0..grp.g.nrows() {
            let z: f64 = grp
                .g
                .row(j)
                .iter()
                .zip(lambda.iter())
                .map(|(g, l)| g * l)
                .sum();
            s += grp.a[j] * z.ln_1p();
        }
        obj -= grp.weight * s;
    }
    obj
}

fn evaluate(groups: &[DualGroup<'_>], lambda: &DVector<f64>, k: usize) -> Eval {
    let mut obj = 0.0;
    let mut grad = DVector::zeros(k);
    let mut hess = DMatrix::zeros(k, k);
    for grp in groups {
        for j in 0..grp.g.nrows() {
            let row = grp.g.row(j);
            let z: f64 = row.iter().zip(lambda.iter()).map(|(g, l)| g * l).sum();
            let wa = grp.weight * grp.a[j];
            let inv = 1.0 / (1.0 + z);
            obj -= wa * z.ln_1p();
            for r in 0..k {
                let gr = row[r] * inv;
                grad[r] -= wa * gr;
                for c in 0..=r {
                    hess[(r, c)] += wa * gr * row[c] * inv;
                }
            }
        }
    }
    for r in 0..k {
        for c in 0..r {
            hess[(c, r)] = hess[(r, c)];
        }
    }
    Eval { obj, grad, hess }
}

/// Solves `sum_i w_i sum_j a_ij g_ij / (1 + lambda' g_ij) = 0`.
///
/// `init`, when given and strictly inside the domain, warm starts the
/// iteration; otherwise it starts at zero.
pub fn solve_lagrange(
    groups: &[DualGroup<'_>],
    init: Option<&DVector<f64>>,
    cfg: &PelConfig,
) -> Result<DualSolution> {
    let k = groups.first().map_or(0, |g| g.g.ncols());
    if groups
        .iter()
        .any(|g| g.g.ncols() != k || g.g.nrows() != g.a.len())
    {
        return Err(PelError::InvalidData(
            "constraint rows do not match weights".into(),
        ));
    }
    let mut lambda = match init {
        Some(l) if l.len() == k && min_denominator(groups, l) >= cfg.feasibility_margin => {
            l.clone()
        }
        _ => DVector::zeros(k),
    };
    let gmax = groups.iter().map(|g| g.g.amax()).fold(0.0, f64::max);

    for iter in 0..cfg.max_iter {
        let ev = evaluate(groups, &lambda, k);
        let residual = ev.grad.amax();
        if residual < cfg.lambda_tol {
            return finish(groups, lambda, ev.obj, iter, residual);
        }
        let step = newton_step(&ev)?;
        let slope = ev.grad.dot(&step);

        let mut t = 1.0;
        let mut next = None;
        for _ in 0..80 {
            let cand = &lambda + &step * t;
            if min_denominator(groups, &cand) >= cfg.feasibility_margin {
                let obj = objective(groups, &cand);
                if obj <= ev.obj + 1e-4 * t * slope + 1e-15 * ev.obj.abs() {
                    next = Some(cand);
                    break;
                }
            }
            t *= 0.5;
        }
        match next {
            Some(cand) => lambda = cand,
            // rounding floor: no descent possible although nearly stationary
            None if residual < 1e3 * cfg.lambda_tol => {
                return finish(groups, lambda, ev.obj, iter, residual)
            }
            None => {
                return Err(PelError::SolverFailed {
                    iterations: iter,
                    residual,
                })
            }
        }
        if lambda.amax() * gmax > DIVERGENCE {
            return Err(PelError::Infeasible(
                "zero lies outside the convex hull of the constraint rows".into(),
            ));
        }
    }
    let ev = evaluate(groups, &lambda, k);
    let residual = ev.grad.amax();
    if residual < 1e3 * cfg.lambda_tol {
        return finish(groups, lambda, ev.obj, cfg.max_iter, residual);
    }
    Err(PelError::SolverFailed {
        iterations: cfg.max_iter,
        residual,
    })
}

/// A vanishing gradient with escaping multipliers drains the probability
/// mass instead of meeting the constraints.
fn finish(
    groups: &[DualGroup<'_>],
    lambda: DVector<f64>,
    obj: f64,
    iterations: usize,
    residual: f64,
) -> Result<DualSolution> {
    let mut mass = 0.0;
    for grp in groups {
        for j in 0..grp.g.nrows() {
            let z: f64 = grp
                .g
                .row(j)
                .iter()
                .zip(lambda.iter())
                .map(|(g, l)| g * l)
                .sum();
            mass += grp.weight * grp.a[j] / (1.0 + z);
        }
    }
    if (mass - 1.0).abs() > 1e-6 {
        return Err(PelError::Infeasible(
            "zero lies outside the convex hull of the constraint rows".into(),
        ));
    }
    Ok(DualSolution {
        log_sum: -obj,
        lambda,
        iterations,
        residual,
    })
}

fn newton_step(ev: &Eval) -> Result<DVector<f64>> {
    let neg = -&ev.grad;
    if let Ok(l) = cholesky(&ev.hess, 1e-14, "dual hessian") {
        return Ok(cholesky_solve(&l, &neg));
    }
    // nearly flat direction: a small ridge keeps the step a descent direction
    let tr = ev.hess.trace().max(f64::MIN_POSITIVE);
    let mut ridge = 1e-12 * tr;
    for _ in 0..8 {
        let h = &ev.hess + DMatrix::identity(ev.hess.nrows(), ev.hess.nrows()) * ridge;
        if let Ok(l) = cholesky(&h, 1e-15, "dual hessian") {
            return Ok(cholesky_solve(&l, &neg));
        }
        ridge *= 100.0;
    }
    Err(PelError::SingularMatrix {
        name: "dual hessian".into(),
        condition: f64::INFINITY,
    })
}

/// One-dimensional calibration root of `sum_j a_j u_j / (1 + lambda u_j) = 0`
/// by safeguarded Newton inside `(-1/max u, -1/min u)`.
pub(crate) fn solve_calibration(a: &[f64], u: &[f64], tol: f64) -> Result<f64> {
    let umax = u.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let umin = u.iter().copied().fold(f64::INFINITY, f64::min);
    if !(umax > 0.0 && umin < 0.0) {
        return Err(PelError::Infeasible(
            "calibration target outside the range of fitted values".into(),
        ));
    }
    let f = |l: f64| -> (f64, f64) {
        let mut v = 0.0;
        let mut dv = 0.0;
        for (&aj, &uj) in a.iter().zip(u) {
            let inv = 1.0 / (1.0 + l * uj);
            v += aj * uj * inv;
            dv -= aj * uj * uj * inv * inv;
        }
        (v, dv)
    };
    let scale: f64 = a.iter().zip(u).map(|(aj, uj)| aj * uj.abs()).sum();
    let (mut lo, mut hi) = (-1.0 / umax, -1.0 / umin);
    let mut l = 0.0;
    for _ in 0..500 {
        let (v, dv) = f(l);
        if v.abs() <= tol * scale {
            return Ok(l);
        }
        // f is decreasing: positive values lie left of the root
        if v > 0.0 {
            lo = l;
        } else {
            hi = l;
        }
        let newton = l - v / dv;
        l = if newton > lo && newton < hi && dv < 0.0 {
            newton
        } else {
            0.5 * (lo + hi)
        };
        if hi - lo <= 4.0 * f64::EPSILON * l.abs().max(f64::MIN_POSITIVE) {
            return Ok(l);
        }
    }
    Err(PelError::SolverFailed {
        iterations: 500,
        residual: f(l).0.abs(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn zero_is_root_when_balanced() {
        let g = DMatrix::from_row_slice(2, 1, &[1.0, -1.0]);
        let a = [0.5, 0.5];
        let s = solve_lagrange(
            &[DualGroup {
                weight: 1.0,
                a: &a,
                g: &g,
            }],
            None,
            &PelConfig::default(),
        )
        .unwrap();
        assert_eq!(s.lambda[0], 0.0);
        assert_eq!(s.iterations, 0);
        assert_eq!(solve_calibration(&a, &[1.0, -1.0], 1e-14).unwrap(), 0.0);
    }

    #[test]
    fn one_dimensional_closed_form() {
        // a = (1/2, 1/2), u = (1, -2): root solves 1/(1+l) = 2/(1-2l)  =>  l = -1/4
        let a = [0.5, 0.5];
        let u = [1.0, -2.0];
        assert_abs_diff_eq!(
            solve_calibration(&a, &u, 1e-14).unwrap(),
            -0.25,
            epsilon = 1e-12
        );
        let g = DMatrix::from_row_slice(2, 1, &u);
        let s = solve_lagrange(
            &[DualGroup {
                weight: 1.0,
                a: &a,
                g: &g,
            }],
            None,
            &PelConfig::default(),
        )
        .unwrap();
        assert_abs_diff_eq!(s.lambda[0], -0.25, epsilon = 1e-10);
    }

    #[test]
    fn infeasible_is_distinct_from_failure() {
        let g = DMatrix::from_row_slice(3, 1, &[1.0, 2.0, 0.5]);
        let a = [0.2, 0.3, 0.5];
        let err = solve_lagrange(
            &[DualGroup {
                weight: 1.0,
                a: &a,
                g: &g,
            }],
            None,
            &PelConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, PelError::Infeasible(_)), "{err}");
        assert!(matches!(
            solve_calibration(&a, &[1.0, 2.0, 0.5], 1e-12),
            Err(PelError::Infeasible(_))
        ));
    }

    #[test]
    fn two_dimensional_residual_vanishes() {
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, -0.5, 1.2, 0.2, -1.0, -0.4, -0.1]);
        let a = [0.1, 0.2, 0.3, 0.4];
        let s = solve_lagrange(
            &[DualGroup {
                weight: 1.0,
                a: &a,
                g: &g,
            }],
            None,
            &PelConfig::default(),
        )
        .unwrap();
        let mut r = DVector::zeros(2);
        let mut total = 0.0;
        for j in 0..4 {
            let p = a[j] / (1.0 + g.row(j).dot(&s.lambda.transpose()));
            total += p;
            r += g.row(j).transpose() * p;
        }
        assert!(r.amax() < 1e-10);
        assert_abs_diff_eq!(total, 1.0, epsilon = 1e-10);
    }

    #[test]
    fn warm_start_reaches_same_root() {
        let g = DMatrix::from_row_slice(4, 2, &[1.0, 0.3, -0.5, 1.2, 0.2, -1.0, -0.4, -0.1]);
        let a = [0.1, 0.2, 0.3, 0.4];
        let grp = [DualGroup {
            weight: 1.0,
            a: &a,
            g: &g,
        }];
        let cold = solve_lagrange(&grp, None, &PelConfig::default()).unwrap();
        let warm =
            solve_lagrange(&grp, Some(&(&cold.lambda * 0.9)), &PelConfig::default()).unwrap();
        assert!((&cold.lambda - &warm.lambda).amax() < 1e-9);
    }
}
