use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Damped Newton iteration for `residual(x) = 0` with an analytic Jacobian.
///
/// `eval(x, r, j)` fills the residual and the row-major Jacobian. Steps are
/// halved until the residual norm decreases.
pub fn damped_newton<F>(mut eval: F, x0: Vec<f64>, tol: f64, max_iter: usize) -> Result<Vec<f64>>
where
    F: FnMut(&[f64], &mut [f64], &mut [f64]),
{
    let n = x0.len();
    let mut x = x0;
    let mut r = vec![0.0; n];
    let mut j = vec![0.0; n * n];
    let mut scratch_j = vec![0.0; n * n];
    let mut trial_r = vec![0.0; n];
    eval(&x, &mut r, &mut j);
    let mut norm = l2(&r);
    for _ in 0..max_iter {
        if norm < tol {
            return Ok(x);
        }
        let jac = DMatrix::from_row_slice(n, n, &j);
        let rhs = DVector::from_column_slice(&r);
        let step = jac
            .lu()
            .solve(&rhs)
            .ok_or_else(|| Error::Config("steady-state Jacobian is singular".into()))?;
        let mut damping = 1.0;
        loop {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, si)| xi - damping * si).collect();
            eval(&trial, &mut trial_r, &mut scratch_j);
            let trial_norm = l2(&trial_r);
            if trial_norm.is_finite() && trial_norm < norm {
                x = trial;
                std::mem::swap(&mut r, &mut trial_r);
                std::mem::swap(&mut j, &mut scratch_j);
                norm = trial_norm;
                break;
            }
            damping *= 0.5;
            if damping < 1e-12 {
                return if norm < tol * 1e3 {
                    Ok(x)
                } else {
                    Err(Error::Config(format!("steady-state solve stalled at residual {norm:e}")))
                };
            }
        }
    }
    if norm < tol {
        Ok(x)
    } else {
        Err(Error::Config(format!(
            "steady-state solve did not converge in {max_iter} iterations (residual {norm:e})"
        )))
    }
}

fn l2(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}
