//! Fixed-step classical Runge-Kutta integration and its adjoint.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Continuous-time dynamics `ds/dt = f(s, a, t)` with an analytic Jacobian.
pub trait OdeSystem {
    fn state_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn derivative(&self, s: &[f64], a: &[f64], t: f64, out: &mut [f64]);
    /// Row-major `df/ds` (`n x n`) and `df/da` (`n x k`).
    fn jacobian(&self, s: &[f64], a: &[f64], t: f64, ds: &mut [f64], da: &mut [f64]);
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OdeStepper {
    pub dt: f64,
    pub substeps: usize,
}

impl OdeStepper {
    pub fn new(dt: f64, substeps: usize) -> Result<Self> {
        if !(dt > 0.0) || substeps == 0 {
            return Err(Error::Config(format!(
                "integrator needs dt > 0 and substeps >= 1 (dt={dt}, substeps={substeps})"
            )));
        }
        Ok(Self { dt, substeps })
    }

    pub fn substep(&self) -> f64 {
        self.dt / self.substeps as f64
    }

    /// Advance `s` by `dt` holding the action constant. Any non-finite
    /// derivative aborts with the offending state.
    pub fn step_with<F>(&self, mut f: F, s: &[f64], a: &[f64], t: f64) -> Result<Vec<f64>>
    where
        F: FnMut(&[f64], &[f64], f64, &mut [f64]),
    {
        let n = s.len();
        let h = self.substep();
        let mut x = s.to_vec();
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut probe = vec![0.0; n];
        for sub in 0..self.substeps {
            let time = t + sub as f64 * h;
            for stage in 0..4 {
                let (coef, dt_stage) = match stage {
                    0 => (0.0, 0.0),
                    1 | 2 => (0.5 * h, 0.5 * h),
                    _ => (h, h),
                };
                for i in 0..n {
                    probe[i] = if stage == 0 { x[i] } else { x[i] + coef * k[stage - 1][i] };
                }
                f(&probe, a, time + dt_stage, &mut k[stage]);
                if k[stage].iter().any(|v| !v.is_finite()) {
                    return Err(Error::EnvironmentFault {
                        t: time + dt_stage,
                        state: probe.clone(),
                    });
                }
            }
            for i in 0..n {
                x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
        }
        Ok(x)
    }

    pub fn step<S: OdeSystem + ?Sized>(&self, sys: &S, s: &[f64], a: &[f64], t: f64) -> Result<Vec<f64>> {
        self.step_with(|x, u, tt, out| sys.derivative(x, u, tt, out), s, a, t)
    }

    /// Vector-Jacobian product through one full `dt` step.
    ///
    /// Given `lambda = dL/ds_next`, returns `(dL/ds, dL/da)`. The forward
    /// substeps are recomputed here so callers only keep node states.
    pub fn step_adjoint<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        s: &[f64],
        a: &[f64],
        t: f64,
        lambda: &[f64],
    ) -> (Vec<f64>, Vec<f64>) {
        let n = s.len();
        let m = a.len();
        let h = self.substep();

        // forward sweep, keeping the start of each substep
        let mut starts = Vec::with_capacity(self.substeps);
        let mut x = s.to_vec();
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut probe = vec![0.0; n];
        for i in 0..self.substeps {
            starts.push(x.clone());
            rk4_stages(sys, &x, a, t + i as f64 * h, h, &mut k, &mut probe);
            for j in 0..n {
                x[j] += h / 6.0 * (k[0][j] + 2.0 * k[1][j] + 2.0 * k[2][j] + k[3][j]);
            }
        }

        let mut js = vec![0.0; n * n];
        let mut ja = vec![0.0; n * m];
        let mut lam = lambda.to_vec();
        let mut grad_a = vec![0.0; m];
        let mut stage_points = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        for i in (0..self.substeps).rev() {
            let x0 = &starts[i];
            let t0 = t + i as f64 * h;
            // rebuild stage evaluation points
            stage_points[0].copy_from_slice(x0);
            sys.derivative(&stage_points[0], a, t0, &mut k[0]);
            for j in 0..n {
                stage_points[1][j] = x0[j] + 0.5 * h * k[0][j];
            }
            sys.derivative(&stage_points[1], a, t0 + 0.5 * h, &mut k[1]);
            for j in 0..n {
                stage_points[2][j] = x0[j] + 0.5 * h * k[1][j];
            }
            sys.derivative(&stage_points[2], a, t0 + 0.5 * h, &mut k[2]);
            for j in 0..n {
                stage_points[3][j] = x0[j] + h * k[2][j];
            }

            let mut k_bar = [
                lam.iter().map(|l| h / 6.0 * l).collect::<Vec<_>>(),
                lam.iter().map(|l| h / 3.0 * l).collect::<Vec<_>>(),
                lam.iter().map(|l| h / 3.0 * l).collect::<Vec<_>>(),
                lam.iter().map(|l| h / 6.0 * l).collect::<Vec<_>>(),
            ];
            let mut s_bar = lam.clone();
            let stage_dt = [0.0, 0.5 * h, 0.5 * h, h];
            let feed = [0.0, 0.5 * h, 0.5 * h, h];
            for stage in (0..4).rev() {
                sys.jacobian(&stage_points[stage], a, t0 + stage_dt[stage], &mut js, &mut ja);
                let mut x_bar = vec![0.0; n];
                for r in 0..n {
                    let kb = k_bar[stage][r];
                    if kb == 0.0 {
                        continue;
                    }
                    for c in 0..n {
                        x_bar[c] += js[r * n + c] * kb;
                    }
                    for c in 0..m {
                        grad_a[c] += ja[r * m + c] * kb;
                    }
                }
                for j in 0..n {
                    s_bar[j] += x_bar[j];
                }
                if stage > 0 {
                    for j in 0..n {
                        k_bar[stage - 1][j] += feed[stage] * x_bar[j];
                    }
                }
            }
            lam = s_bar;
        }
        (lam, grad_a)
    }

    /// One step together with its exact Jacobians, by forward tangent
    /// propagation through every RK4 stage.
    ///
    /// Returns `(next, ds_next/ds, ds_next/da)`, both row-major.
    pub fn step_jacobian<S: OdeSystem + ?Sized>(
        &self,
        sys: &S,
        s: &[f64],
        a: &[f64],
        t: f64,
    ) -> Result<(Vec<f64>, Vec<f64>, Vec<f64>)> {
        let n = s.len();
        let m = a.len();
        let w = n + m;
        let h = self.substep();
        let mut x = s.to_vec();
        // tangent columns: d x / d (s, a)
        let mut tan = vec![0.0; n * w];
        for i in 0..n {
            tan[i * w + i] = 1.0;
        }
        let mut js = vec![0.0; n * n];
        let mut ja = vec![0.0; n * m];
        let mut k = [vec![0.0; n], vec![0.0; n], vec![0.0; n], vec![0.0; n]];
        let mut dk = [vec![0.0; n * w], vec![0.0; n * w], vec![0.0; n * w], vec![0.0; n * w]];
        let mut probe = vec![0.0; n];
        let mut probe_tan = vec![0.0; n * w];
        let coef = [0.0, 0.5 * h, 0.5 * h, h];
        for sub in 0..self.substeps {
            let t0 = t + sub as f64 * h;
            for stage in 0..4 {
                if stage == 0 {
                    probe.copy_from_slice(&x);
                    probe_tan.copy_from_slice(&tan);
                } else {
                    for i in 0..n {
                        probe[i] = x[i] + coef[stage] * k[stage - 1][i];
                    }
                    for i in 0..n * w {
                        probe_tan[i] = tan[i] + coef[stage] * dk[stage - 1][i];
                    }
                }
                let ts = t0 + coef[stage];
                sys.derivative(&probe, a, ts, &mut k[stage]);
                if k[stage].iter().any(|v| !v.is_finite()) {
                    return Err(Error::EnvironmentFault {
                        t: ts,
                        state: probe.clone(),
                    });
                }
                sys.jacobian(&probe, a, ts, &mut js, &mut ja);
                let out = &mut dk[stage];
                out.fill(0.0);
                for r in 0..n {
                    let row = &mut out[r * w..(r + 1) * w];
                    for c in 0..n {
                        let j = js[r * n + c];
                        if j != 0.0 {
                            let src = &probe_tan[c * w..(c + 1) * w];
                            for (o, v) in row.iter_mut().zip(src) {
                                *o += j * v;
                            }
                        }
                    }
                    for c in 0..m {
                        row[n + c] += ja[r * m + c];
                    }
                }
            }
            for i in 0..n {
                x[i] += h / 6.0 * (k[0][i] + 2.0 * k[1][i] + 2.0 * k[2][i] + k[3][i]);
            }
            for i in 0..n * w {
                tan[i] += h / 6.0 * (dk[0][i] + 2.0 * dk[1][i] + 2.0 * dk[2][i] + dk[3][i]);
            }
        }
        let mut ds = vec![0.0; n * n];
        let mut da = vec![0.0; n * m];
        for r in 0..n {
            ds[r * n..(r + 1) * n].copy_from_slice(&tan[r * w..r * w + n]);
            da[r * m..(r + 1) * m].copy_from_slice(&tan[r * w + n..(r + 1) * w]);
        }
        Ok((x, ds, da))
    }
}

fn rk4_stages<S: OdeSystem + ?Sized>(
    sys: &S,
    x: &[f64],
    a: &[f64],
    t: f64,
    h: f64,
    k: &mut [Vec<f64>; 4],
    probe: &mut [f64],
) {
    let n = x.len();
    sys.derivative(x, a, t, &mut k[0]);
    for j in 0..n {
        probe[j] = x[j] + 0.5 * h * k[0][j];
    }
    sys.derivative(probe, a, t + 0.5 * h, &mut k[1]);
    for j in 0..n {
        probe[j] = x[j] + 0.5 * h * k[1][j];
    }
    sys.derivative(probe, a, t + 0.5 * h, &mut k[2]);
    for j in 0..n {
        probe[j] = x[j] + h * k[2][j];
    }
    sys.derivative(probe, a, t + h, &mut k[3]);
}
