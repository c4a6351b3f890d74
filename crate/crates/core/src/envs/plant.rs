//! Plant-level behavior dispatched over the parameter variants: dynamics,
//! rewards, safety bounds, observations, and the reset state.

use std::f64::consts::PI;

use super::params::PlantParams;
use super::steady::damped_newton;
use super::{biglucose, cartpole, cstr, glucose, magni};
use super::{PenaltyMode, SafetyBound, SafetySpec, Seam};
use crate::approx::OdeSystem;
use crate::error::Result;

const GLUCOSE_OBS: [&str; 3] = ["G", "G_dot", "t"];

/// Initial pole tilt, six degrees.
pub const CARTPOLE_INITIAL_TILT: f64 = 6.0 * PI / 180.0;
pub const CSTR_INITIAL_CB: f64 = 0.5;

/// The plant as an ODE system, with the seam treatment chosen by the caller.
#[derive(Clone, Copy, Debug)]
pub struct PlantModel<'a> {
    pub params: &'a PlantParams,
    pub seam: Seam,
}

impl OdeSystem for PlantModel<'_> {
    fn state_dim(&self) -> usize {
        self.params.state_dim()
    }

    fn action_dim(&self) -> usize {
        self.params.action_dim()
    }

    fn derivative(&self, s: &[f64], a: &[f64], t: f64, out: &mut [f64]) {
        match self.params {
            PlantParams::Glucose(p) => p.rhs(s, a, t, out),
            PlantParams::BiGlucose(p) => p.rhs(s, a, t, self.seam, out),
            PlantParams::Cstr(p) => p.rhs(s, a, out),
            PlantParams::CartPole(p) => p.rhs(s, a, out),
        }
    }

    fn jacobian(&self, s: &[f64], a: &[f64], _t: f64, ds: &mut [f64], da: &mut [f64]) {
        match self.params {
            PlantParams::Glucose(p) => p.rhs_jacobian(s, ds, da),
            PlantParams::BiGlucose(p) => p.rhs_jacobian(s, self.seam, ds, da),
            PlantParams::Cstr(p) => p.rhs_jacobian(s, a, ds, da),
            PlantParams::CartPole(p) => p.rhs_jacobian(s, a, ds, da),
        }
    }
}

impl PlantParams {
    pub fn state_names(&self) -> &'static [&'static str] {
        match self {
            PlantParams::Glucose(_) => &glucose::STATES,
            PlantParams::BiGlucose(_) => &biglucose::STATES,
            PlantParams::Cstr(_) => &cstr::STATES,
            PlantParams::CartPole(_) => &cartpole::STATES,
        }
    }

    pub fn action_names(&self) -> &'static [&'static str] {
        match self {
            PlantParams::Glucose(_) => &glucose::ACTIONS,
            PlantParams::BiGlucose(_) => &biglucose::ACTIONS,
            PlantParams::Cstr(_) => &cstr::ACTIONS,
            PlantParams::CartPole(_) => &cartpole::ACTIONS,
        }
    }

    pub fn observation_names(&self) -> &'static [&'static str] {
        match self {
            PlantParams::Glucose(_) | PlantParams::BiGlucose(_) => &GLUCOSE_OBS,
            PlantParams::Cstr(_) => &cstr::STATES,
            PlantParams::CartPole(_) => &cartpole::STATES,
        }
    }

    pub fn state_dim(&self) -> usize {
        self.state_names().len()
    }

    pub fn action_dim(&self) -> usize {
        self.action_names().len()
    }

    pub fn observation_dim(&self) -> usize {
        self.observation_names().len()
    }

    pub fn model(&self, seam: Seam) -> PlantModel<'_> {
        PlantModel { params: self, seam }
    }

    pub fn safety(&self) -> SafetySpec {
        let bound = |name, index, scale, lower, upper| SafetyBound {
            name,
            index,
            scale,
            lower,
            upper,
        };
        match self {
            PlantParams::Glucose(_) => SafetySpec {
                bounds: vec![bound("G", 0, 1.0, magni::SAFE_LOW, magni::SAFE_HIGH)],
                penalty: magni::PENALTY,
                mode: PenaltyMode::Replace,
            },
            PlantParams::BiGlucose(p) => SafetySpec {
                bounds: vec![bound("G", 0, 18.0 / p.v_g, magni::SAFE_LOW, magni::SAFE_HIGH)],
                penalty: magni::PENALTY,
                mode: PenaltyMode::Replace,
            },
            PlantParams::Cstr(_) => SafetySpec {
                bounds: vec![
                    bound("C_A", 0, 1.0, 0.1, 2.0),
                    bound("C_B", 1, 1.0, 0.1, 2.0),
                    bound("T_R", 2, 1.0, 50.0, 200.0),
                    bound("T_K", 3, 1.0, 50.0, 150.0),
                ],
                penalty: -1e4,
                mode: PenaltyMode::Add,
            },
            PlantParams::CartPole(_) => SafetySpec {
                bounds: vec![
                    bound("x", 0, 1.0, -2.4, 2.4),
                    bound("theta", 2, 1.0, -12.0 * PI / 360.0, 12.0 * PI / 360.0),
                ],
                penalty: -1e4,
                mode: PenaltyMode::Add,
            },
        }
    }

    /// Reward of a state with the safety branch ignored. Differentiable
    /// almost everywhere; the gradient with respect to the state is written
    /// into `grad`.
    pub fn shaped_reward(&self, x: &[f64], grad: &mut [f64]) -> f64 {
        grad.fill(0.0);
        match self {
            PlantParams::Glucose(_) => {
                let (v, d) = magni::in_band_with_slope(x[0]);
                grad[0] = d;
                v
            }
            PlantParams::BiGlucose(p) => {
                let (v, d) = magni::in_band_with_slope(p.glucose(x[0]));
                grad[0] = 10.0 * d * 18.0 / p.v_g;
                10.0 * v
            }
            PlantParams::Cstr(_) => {
                let e = x[1] - cstr::TARGET_CB;
                grad[1] = -200.0 * e;
                -100.0 * e * e
            }
            PlantParams::CartPole(_) => {
                let (pos, th) = (x[0], x[2]);
                grad[2] = -2000.0 * th;
                let over = pos.abs() - 0.25;
                if over > 0.0 {
                    grad[0] = -pos.signum();
                }
                -1000.0 * th * th - over.max(0.0)
            }
        }
    }

    /// Diagonal Gauss-Newton curvature of `-shaped_reward`: every shaped
    /// reward is a negative weighted square of one state component, plus
    /// (for the cart) a linear hinge that contributes no curvature.
    pub fn shaped_cost_curvature(&self, x: &[f64], diag: &mut [f64]) {
        diag.fill(0.0);
        match self {
            PlantParams::Glucose(_) => {
                let (_, du) = magni::risk_residual(x[0]);
                diag[0] = 2.0 * du * du;
            }
            PlantParams::BiGlucose(p) => {
                let (_, du) = magni::risk_residual(p.glucose(x[0]));
                let d = du * 18.0 / p.v_g;
                diag[0] = 20.0 * d * d;
            }
            PlantParams::Cstr(_) => diag[1] = 200.0,
            PlantParams::CartPole(_) => diag[2] = 2000.0,
        }
    }

    /// Environment reward for landing in state `x`, and whether the state
    /// violates the safety bounds.
    pub fn reward(&self, x: &[f64]) -> (f64, bool) {
        let spec = self.safety();
        if x.iter().any(|v| !v.is_finite()) {
            return (spec.penalty, true);
        }
        let failed = !spec.is_safe(x);
        let in_band = match self {
            PlantParams::Glucose(_) => magni::in_band(x[0]),
            PlantParams::BiGlucose(p) => 10.0 * magni::in_band(p.glucose(x[0])),
            _ => self.shaped_reward(x, &mut vec![0.0; x.len()]),
        };
        let r = match (failed, spec.mode) {
            (false, _) => in_band,
            (true, PenaltyMode::Replace) => spec.penalty,
            (true, PenaltyMode::Add) => in_band + spec.penalty,
        };
        (r, failed)
    }

    /// Steady state and the constant action holding it. Glucose plants rest
    /// at zero input; the reactor holds `C_B = 0.5` with no heat flow; the
    /// cart pole rests upright.
    pub fn equilibrium(&self) -> Result<(Vec<f64>, Vec<f64>)> {
        match self {
            PlantParams::Glucose(p) => Ok((p.equilibrium(), vec![0.0])),
            PlantParams::BiGlucose(p) => {
                let model = self.model(Seam::Hard);
                let zero = [0.0, 0.0];
                let mut da = vec![0.0; 24];
                let x = damped_newton(
                    |x, r, j| {
                        model.derivative(x, &zero, 0.0, r);
                        model.jacobian(x, &zero, 0.0, j, &mut da);
                    },
                    p.equilibrium_guess(),
                    1e-13,
                    100,
                )?;
                Ok((x, zero.to_vec()))
            }
            PlantParams::Cstr(p) => {
                let model = self.model(Seam::Hard);
                let mut js = [0.0; 16];
                let mut ja = [0.0; 8];
                // unknowns: C_A, T_R, T_K, a_F
                let z = damped_newton(
                    |z, r, j| {
                        let s = [z[0], CSTR_INITIAL_CB, z[1], z[2]];
                        let a = [z[3], 0.0];
                        model.derivative(&s, &a, 0.0, r);
                        model.jacobian(&s, &a, 0.0, &mut js, &mut ja);
                        for row in 0..4 {
                            j[row * 4] = js[row * 4];
                            j[row * 4 + 1] = js[row * 4 + 2];
                            j[row * 4 + 2] = js[row * 4 + 3];
                            j[row * 4 + 3] = ja[row * 2];
                        }
                    },
                    vec![0.8, 135.0, 130.0, 15.0],
                    1e-10,
                    100,
                )?;
                let _ = p;
                Ok((vec![z[0], CSTR_INITIAL_CB, z[1], z[2]], vec![z[3], 0.0]))
            }
            PlantParams::CartPole(_) => Ok((vec![0.0; 4], vec![0.0])),
        }
    }

    /// State at the start of every episode.
    pub fn initial_state(&self) -> Result<Vec<f64>> {
        match self {
            PlantParams::CartPole(_) => Ok(vec![0.0, 0.0, CARTPOLE_INITIAL_TILT, 0.0]),
            _ => Ok(self.equilibrium()?.0),
        }
    }

    /// Blood glucose in mg/dL for the glucose plants.
    pub fn glucose_reading(&self, x: &[f64]) -> Option<f64> {
        match self {
            PlantParams::Glucose(_) => Some(x[0]),
            PlantParams::BiGlucose(p) => Some(p.glucose(x[0])),
            _ => None,
        }
    }

    /// Agent-visible observation. `previous` is the prior glucose reading
    /// (equal to the current one at episode start).
    pub fn observe(&self, x: &[f64], t: f64, previous: Option<f64>) -> Vec<f64> {
        match self.glucose_reading(x) {
            Some(g) => vec![g, g - previous.unwrap_or(g), t],
            None => x.to_vec(),
        }
    }

    /// State components that an observation pins down exactly, as
    /// `(state index, value)` pairs under this parameter set.
    pub fn measured_components(&self, obs: &[f64]) -> Vec<(usize, f64)> {
        match self {
            PlantParams::Glucose(_) => vec![(0, obs[0])],
            PlantParams::BiGlucose(p) => vec![(0, obs[0] * p.v_g / 18.0)],
            PlantParams::Cstr(_) | PlantParams::CartPole(_) => obs.iter().copied().enumerate().collect(),
        }
    }
}
