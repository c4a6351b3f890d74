//! Box-constrained Gauss-Newton / Levenberg-Marquardt minimizer on
//! `[-1, 1]^n`, with a projected-Newton solve of each damped box QP.

use nalgebra::{DMatrix, DVector};

#[derive(Clone, Debug)]
pub(crate) struct InnerResult {
    pub x: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct InnerSettings {
    pub max_iter: usize,
    /// Projected-gradient tolerance, relative to `max(1, |f|)`.
    pub grad_tol: f64,
}

/// Local quadratic model: value, exact gradient, and a positive
/// semidefinite curvature matrix (row-major).
pub(crate) struct Quadratic {
    pub value: f64,
    pub grad: Vec<f64>,
    pub hess: Vec<f64>,
}

const LOWER: f64 = -1.0;
const UPPER: f64 = 1.0;

fn projected_gradient_norm(x: &[f64], g: &[f64]) -> f64 {
    x.iter()
        .zip(g)
        .map(|(xi, gi)| (xi - (xi - gi).clamp(LOWER, UPPER)).abs())
        .fold(0.0, f64::max)
}

/// `linearize(x)` returns the model at `x` (`None` if the point is not
/// evaluable); `value(x)` returns the objective alone, non-finite when
/// infeasible.
pub(crate) fn minimize_box<L, V>(mut linearize: L, mut value: V, x0: &[f64], settings: InnerSettings) -> InnerResult
where
    L: FnMut(&[f64]) -> Option<Quadratic>,
    V: FnMut(&[f64]) -> f64,
{
    let n = x0.len();
    let mut x: Vec<f64> = x0.iter().map(|v| v.clamp(LOWER, UPPER)).collect();
    let mut lambda = 1e-3;
    let mut trial = vec![0.0; n];
    for iter in 0..settings.max_iter {
        let Some(q) = linearize(&x) else {
            return InnerResult {
                x,
                iterations: iter,
                converged: false,
            };
        };
        let scale = q.value.abs().max(1.0);
        if projected_gradient_norm(&x, &q.grad) <= settings.grad_tol * scale {
            return InnerResult {
                x,
                iterations: iter,
                converged: true,
            };
        }
        let max_diag = (0..n).map(|i| q.hess[i * n + i]).fold(0.0f64, f64::max);
        let floor = 1e-9 * max_diag + 1e-12;
        let lo: Vec<f64> = x.iter().map(|v| LOWER - v).collect();
        let hi: Vec<f64> = x.iter().map(|v| UPPER - v).collect();
        let mut accepted = false;
        let mut converged = false;
        while lambda < 1e14 {
            let mut m = q.hess.clone();
            for i in 0..n {
                m[i * n + i] += lambda * q.hess[i * n + i].max(floor) + floor;
            }
            let d = box_qp(&m, &q.grad, &lo, &hi);
            let hd: Vec<f64> = (0..n).map(|i| (0..n).map(|j| q.hess[i * n + j] * d[j]).sum()).collect();
            let predicted = -(0..n).map(|i| q.grad[i] * d[i] + 0.5 * d[i] * hd[i]).sum::<f64>();
            if predicted <= 1e-15 * scale {
                converged = true;
                break;
            }
            for i in 0..n {
                trial[i] = (x[i] + d[i]).clamp(LOWER, UPPER);
            }
            let f_new = value(&trial);
            let actual = q.value - f_new;
            let ratio = actual / predicted;
            if f_new.is_finite() && ratio > 1e-4 {
                let t = 2.0 * ratio - 1.0;
                lambda = (lambda * (1.0 / 3.0f64).max(1.0 - t * t * t)).max(1e-12);
                std::mem::swap(&mut x, &mut trial);
                accepted = true;
                if actual <= 1e-13 * scale {
                    converged = true;
                }
                break;
            }
            lambda *= 8.0;
        }
        if converged || !accepted {
            return InnerResult {
                x,
                iterations: iter + 1,
                converged,
            };
        }
    }
    InnerResult {
        x,
        iterations: settings.max_iter,
        converged: false,
    }
}

/// Minimizes `g.d + d.M.d / 2` subject to `lo <= d <= hi` for positive
/// definite `M`, by projected Newton steps on the free variables.
pub(crate) fn box_qp(m: &[f64], g: &[f64], lo: &[f64], hi: &[f64]) -> Vec<f64> {
    let n = g.len();
    let mut d: Vec<f64> = (0..n).map(|i| 0.0f64.clamp(lo[i], hi[i])).collect();
    let objective = |d: &[f64]| -> f64 {
        (0..n)
            .map(|i| d[i] * (g[i] + 0.5 * (0..n).map(|j| m[i * n + j] * d[j]).sum::<f64>()))
            .sum()
    };
    let mut fd = objective(&d);
    let mut previous_free: Option<Vec<bool>> = None;
    for _ in 0..60 {
        let r: Vec<f64> = (0..n).map(|i| g[i] + (0..n).map(|j| m[i * n + j] * d[j]).sum::<f64>()).collect();
        let free: Vec<bool> = (0..n)
            .map(|i| !((d[i] <= lo[i] && r[i] > 0.0) || (d[i] >= hi[i] && r[i] < 0.0)))
            .collect();
        let idx: Vec<usize> = (0..n).filter(|&i| free[i]).collect();
        if idx.is_empty() {
            break;
        }
        let nf = idx.len();
        let sub = DMatrix::from_fn(nf, nf, |a, b| m[idx[a] * n + idx[b]]);
        let rhs = DVector::from_fn(nf, |a, _| -r[idx[a]]);
        let Some(chol) = sub.cholesky() else {
            break;
        };
        let step = chol.solve(&rhs);
        let mut p = vec![0.0; n];
        for (a, &i) in idx.iter().enumerate() {
            p[i] = step[a];
        }
        let mut alpha = 1.0;
        let mut moved = false;
        for _ in 0..40 {
            let cand: Vec<f64> = (0..n).map(|i| (d[i] + alpha * p[i]).clamp(lo[i], hi[i])).collect();
            let decrease: f64 = (0..n).map(|i| r[i] * (cand[i] - d[i])).sum();
            let fc = objective(&cand);
            if decrease < 0.0 && fc <= fd + 1e-4 * decrease {
                let full = alpha == 1.0;
                let same_set = previous_free.as_deref() == Some(&free[..]);
                d = cand;
                fd = fc;
                moved = true;
                if full && same_set {
                    return d;
                }
                break;
            }
            alpha *= 0.5;
        }
        if !moved {
            break;
        }
        previous_free = Some(free);
    }
    d
}
