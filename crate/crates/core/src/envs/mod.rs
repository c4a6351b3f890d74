//! Plant simulators: glucose (3-state and 12-state), a chemical reactor, and
//! a cart pole, each built from an estimated or actual parameter set.

mod biglucose;
mod cartpole;
mod cstr;
mod glucose;
pub mod magni;
mod params;
mod plant;
mod steady;

use serde::{Deserialize, Serialize};

pub use params::{
    perturb_params, BiGlucoseParams, CartPoleParams, CstrParams, GlucoseParams, ParamRole, PlantKind, PlantParams,
};
pub use plant::{PlantModel, CARTPOLE_INITIAL_TILT, CSTR_INITIAL_CB};
pub use steady::damped_newton;

use crate::approx::OdeStepper;
use crate::error::{Error, Result};

/// How piecewise terms of the dynamics are evaluated.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase", tag = "kind")]
pub enum Seam {
    Hard,
    /// Softplus corners of the given width (mg/dL), for gradient-based use.
    Smooth { width: f64 },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PenaltyMode {
    /// Penalty replaces the in-range reward.
    Replace,
    /// Penalty is added to the in-range reward.
    Add,
}

/// One linear bound `lower <= scale * x[index] <= upper`.
#[derive(Clone, Debug, PartialEq)]
pub struct SafetyBound {
    pub name: &'static str,
    pub index: usize,
    pub scale: f64,
    pub lower: f64,
    pub upper: f64,
}

impl SafetyBound {
    pub fn value(&self, x: &[f64]) -> f64 {
        self.scale * x[self.index]
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        let v = self.value(x);
        v >= self.lower && v <= self.upper
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SafetySpec {
    pub bounds: Vec<SafetyBound>,
    pub penalty: f64,
    pub mode: PenaltyMode,
}

impl SafetySpec {
    pub fn is_safe(&self, x: &[f64]) -> bool {
        x.iter().all(|v| v.is_finite()) && self.bounds.iter().all(|b| b.contains(x))
    }
}

/// Box of admissible actions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionSpace {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ActionSpace {
    pub fn new(low: Vec<f64>, high: Vec<f64>) -> Result<Self> {
        if low.len() != high.len() || low.is_empty() {
            return Err(Error::Config("action bounds must be non-empty and equal length".into()));
        }
        if low.iter().zip(&high).any(|(l, h)| !(l.is_finite() && h.is_finite() && l < h)) {
            return Err(Error::Config(format!("invalid action bounds {low:?} .. {high:?}")));
        }
        Ok(Self { low, high })
    }

    pub fn dim(&self) -> usize {
        self.low.len()
    }

    pub fn contains(&self, a: &[f64]) -> bool {
        a.len() == self.dim() && a.iter().zip(self.low.iter().zip(&self.high)).all(|(v, (l, h))| *v >= *l && *v <= *h)
    }

    pub fn clip(&self, a: &[f64]) -> Vec<f64> {
        a.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(v, (l, h))| v.clamp(*l, *h))
            .collect()
    }

    pub fn center(&self, i: usize) -> f64 {
        0.5 * (self.low[i] + self.high[i])
    }

    pub fn half_width(&self, i: usize) -> f64 {
        0.5 * (self.high[i] - self.low[i])
    }

    /// Physical action to `[-1, 1]^k`.
    pub fn normalize(&self, a: &[f64]) -> Vec<f64> {
        (0..self.dim()).map(|i| (a[i] - self.center(i)) / self.half_width(i)).collect()
    }

    /// `[-1, 1]^k` to physical action. Exact at the endpoints.
    pub fn denormalize(&self, u: &[f64]) -> Vec<f64> {
        (0..self.dim())
            .map(|i| {
                if u[i] <= -1.0 {
                    self.low[i]
                } else if u[i] >= 1.0 {
                    self.high[i]
                } else {
                    self.center(i) + self.half_width(i) * u[i]
                }
            })
            .collect()
    }
}

/// Fixed affine map of observations onto roughly `[-1, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObsScaling {
    pub low: Vec<f64>,
    pub high: Vec<f64>,
}

impl ObsScaling {
    pub fn apply(&self, obs: &[f64]) -> Vec<f64> {
        obs.iter()
            .zip(self.low.iter().zip(&self.high))
            .map(|(o, (l, h))| 2.0 * (o - l) / (h - l) - 1.0)
            .collect()
    }
}

/// Per-plant settings that the tables leave open.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnvConfig {
    pub actions: ActionSpace,
    pub obs_scaling: ObsScaling,
    pub max_steps: usize,
    pub substeps: usize,
    /// Softplus width for piecewise terms inside gradient-based planners.
    pub seam_width: f64,
}

impl EnvConfig {
    pub fn default_for(kind: PlantKind) -> Self {
        let (low, high, olow, ohigh, max_steps): (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>, usize) = match kind {
            PlantKind::Glucose => (vec![0.0], vec![100.0], vec![0.0, -50.0, 0.0], vec![400.0, 50.0, 1000.0], 100),
            PlantKind::BiGlucose => (
                vec![0.0, 0.0],
                vec![100.0, 100.0],
                vec![0.0, -100.0, 0.0],
                vec![800.0, 100.0, 1000.0],
                100,
            ),
            PlantKind::Cstr => (
                vec![5.0, -8500.0],
                vec![100.0, 0.0],
                vec![0.0, 0.0, 50.0, 50.0],
                vec![2.0, 2.0, 200.0, 150.0],
                100,
            ),
            PlantKind::CartPole => (
                vec![-1.0],
                vec![1.0],
                vec![-2.4, -3.0, -0.21, -3.0],
                vec![2.4, 3.0, 0.21, 3.0],
                400,
            ),
        };
        Self {
            actions: ActionSpace { low, high },
            obs_scaling: ObsScaling { low: olow, high: ohigh },
            max_steps,
            substeps: 10,
            seam_width: 1e-2,
        }
    }

    pub fn validate(&self, plant: &PlantParams) -> Result<()> {
        ActionSpace::new(self.actions.low.clone(), self.actions.high.clone())?;
        crate::error::check_dim("action bounds", plant.action_dim(), self.actions.dim())?;
        crate::error::check_dim("observation scaling", plant.observation_dim(), self.obs_scaling.low.len())?;
        crate::error::check_dim("observation scaling", plant.observation_dim(), self.obs_scaling.high.len())?;
        if self.obs_scaling.low.iter().zip(&self.obs_scaling.high).any(|(l, h)| !(l < h)) {
            return Err(Error::Config("observation scaling needs low < high".into()));
        }
        if self.max_steps == 0 || self.substeps == 0 || !(self.seam_width > 0.0) {
            return Err(Error::Config("max_steps, substeps and seam_width must be positive".into()));
        }
        Ok(())
    }

    pub fn smooth_seam(&self) -> Seam {
        Seam::Smooth { width: self.seam_width }
    }
}

/// Internal plant state plus elapsed time.
#[derive(Clone, Debug, PartialEq)]
pub struct EnvState {
    pub x: Vec<f64>,
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepOutcome {
    pub observation: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub failed: bool,
}

/// A running plant instance.
#[derive(Clone, Debug)]
pub struct Env {
    params: PlantParams,
    config: EnvConfig,
    stepper: OdeStepper,
    state: EnvState,
    previous_glucose: Option<f64>,
    steps: usize,
    finished: bool,
}

impl Env {
    pub fn new(params: PlantParams, config: EnvConfig) -> Result<Self> {
        params.validate()?;
        config.validate(&params)?;
        let stepper = OdeStepper::new(params.dt(), config.substeps)?;
        let n = params.state_dim();
        Ok(Self {
            params,
            config,
            stepper,
            state: EnvState { x: vec![0.0; n], t: 0.0 },
            previous_glucose: None,
            steps: 0,
            finished: true,
        })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn stepper(&self) -> &OdeStepper {
        &self.stepper
    }

    pub fn state(&self) -> &EnvState {
        &self.state
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    /// Places the plant in an arbitrary state mid-episode.
    pub fn set_state(&mut self, state: EnvState) {
        self.previous_glucose = self.params.glucose_reading(&state.x);
        self.state = state;
        self.finished = false;
    }

    pub fn reset(&mut self) -> Result<Vec<f64>> {
        self.state = EnvState {
            x: self.params.initial_state()?,
            t: 0.0,
        };
        self.previous_glucose = None;
        self.steps = 0;
        self.finished = false;
        let obs = self.params.observe(&self.state.x, 0.0, None);
        self.previous_glucose = self.params.glucose_reading(&self.state.x);
        Ok(obs)
    }

    pub fn step(&mut self, action: &[f64]) -> Result<StepOutcome> {
        if self.finished {
            return Err(Error::Config("step called on a finished episode; reset first".into()));
        }
        if !self.config.actions.contains(action) {
            return Err(Error::Config(format!("action {action:?} outside the admissible box")));
        }
        let model = self.params.model(Seam::Hard);
        let next = match self.stepper.step(&model, &self.state.x, action, self.state.t) {
            Ok(x) => x,
            Err(Error::EnvironmentFault { state, .. }) => vec![f64::NAN; state.len()],
            Err(e) => return Err(e),
        };
        self.state = EnvState {
            x: next,
            t: self.state.t + self.stepper.dt,
        };
        self.steps += 1;
        let (reward, failed) = self.params.reward(&self.state.x);
        let observation = self.params.observe(&self.state.x, self.state.t, self.previous_glucose);
        self.previous_glucose = self.params.glucose_reading(&self.state.x);
        let done = failed || self.steps >= self.config.max_steps;
        self.finished = done;
        Ok(StepOutcome {
            observation,
            reward,
            done,
            failed,
        })
    }
}

#[cfg(test)]
mod tests;
