//! Receding-horizon safety controller planning on the estimated plant.
//!
//! Single shooting over the normalized action sequence, an augmented
//! Lagrangian for the state bounds, and a damped Gauss-Newton inner solve
//! with box projection. Rollout derivatives come from tangent propagation
//! through the RK4 stages; a reverse sweep gives the same gradient.

mod solver;

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::approx::OdeStepper;
use crate::envs::{ActionSpace, EnvConfig, PlantKind, PlantParams, SafetySpec, Seam};
use crate::error::{check_dim, Error, Result};
use solver::{minimize_box, InnerSettings, Quadratic};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MpcConfig {
    pub horizon: usize,
    /// Constraint tightening as a fraction of each bound's width.
    pub margin: f64,
    /// Admissible constraint violation, in constraint units.
    pub tolerance: f64,
    pub max_outer: usize,
    pub max_inner: usize,
    pub inner_grad_tol: f64,
    pub penalty_init: f64,
    pub penalty_growth: f64,
    pub penalty_max: f64,
}

impl Default for MpcConfig {
    fn default() -> Self {
        Self {
            horizon: 20,
            margin: 0.02,
            tolerance: 1e-4,
            max_outer: 12,
            max_inner: 100,
            inner_grad_tol: 1e-8,
            penalty_init: 1.0,
            penalty_growth: 10.0,
            penalty_max: 1e8,
        }
    }
}

impl MpcConfig {
    pub fn default_for(kind: PlantKind) -> Self {
        let horizon = match kind {
            PlantKind::Glucose => 100,
            _ => 20,
        };
        Self {
            horizon,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 || self.max_outer == 0 || self.max_inner == 0 {
            return Err(Error::Config("MPC horizon and iteration limits must be positive".into()));
        }
        if !(0.0..0.5).contains(&self.margin) || !(self.tolerance > 0.0) {
            return Err(Error::Config("MPC margin must lie in [0, 0.5) and tolerance be positive".into()));
        }
        if !(self.penalty_init > 0.0 && self.penalty_growth > 1.0 && self.penalty_max >= self.penalty_init) {
            return Err(Error::Config("invalid augmented-Lagrangian penalty schedule".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MpcSolution {
    /// Physical actions, one per horizon step.
    pub actions: Vec<Vec<f64>>,
    /// Normalized decision vector, reusable as a warm start.
    pub normalized: Vec<f64>,
    pub objective: f64,
    /// Largest violation of the tightened state constraints.
    pub violation: f64,
    pub iterations: usize,
    pub converged: bool,
}

/// One instance of the finite-horizon problem family: dynamics, costs and
/// constraints built from a parameter set.
#[derive(Clone, Debug)]
pub struct MpcProblem {
    params: PlantParams,
    actions: ActionSpace,
    stepper: OdeStepper,
    seam: Seam,
    safety: SafetySpec,
    config: MpcConfig,
}

struct Evaluation {
    cost: f64,
    constraints: Vec<f64>,
}

impl MpcProblem {
    pub fn new(params: PlantParams, env: &EnvConfig, config: MpcConfig) -> Result<Self> {
        params.validate()?;
        env.validate(&params)?;
        config.validate()?;
        Ok(Self {
            stepper: OdeStepper::new(params.dt(), env.substeps)?,
            seam: env.smooth_seam(),
            safety: params.safety(),
            actions: env.actions.clone(),
            params,
            config,
        })
    }

    pub fn params(&self) -> &PlantParams {
        &self.params
    }

    pub fn config(&self) -> &MpcConfig {
        &self.config
    }

    pub fn action_space(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn horizon(&self) -> usize {
        self.config.horizon
    }

    fn k(&self) -> usize {
        self.actions.dim()
    }

    /// Decision-vector length.
    pub fn dim(&self) -> usize {
        self.config.horizon * self.k()
    }

    fn decode(&self, u: &[f64], step: usize) -> Vec<f64> {
        let k = self.k();
        self.actions.denormalize(&u[step * k..(step + 1) * k])
    }

    /// Cold-start guess: zero action where admissible, else the box midpoint.
    pub fn cold_start(&self) -> Vec<f64> {
        let k = self.k();
        let per_step: Vec<f64> = (0..k)
            .map(|i| {
                if self.actions.low[i] <= 0.0 && 0.0 <= self.actions.high[i] {
                    -self.actions.center(i) / self.actions.half_width(i)
                } else {
                    0.0
                }
            })
            .collect();
        per_step.iter().copied().cycle().take(self.dim()).collect()
    }

    /// Previous solution advanced one step, last action repeated.
    pub fn shift(&self, previous: &[f64]) -> Vec<f64> {
        let k = self.k();
        let mut u = previous[k..].to_vec();
        u.extend_from_slice(&previous[previous.len() - k..]);
        u
    }

    fn tightened(&self) -> Vec<(usize, f64, f64, f64)> {
        self.safety
            .bounds
            .iter()
            .map(|b| {
                let m = self.config.margin * (b.upper - b.lower);
                (b.index, b.scale, b.lower + m, b.upper - m)
            })
            .collect()
    }

    /// State trajectory `s_0 .. s_N` under a physical action sequence.
    pub fn rollout(&self, s0: &[f64], t0: f64, actions: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let model = self.params.model(self.seam);
        let mut traj = Vec::with_capacity(actions.len() + 1);
        traj.push(s0.to_vec());
        for (k, a) in actions.iter().enumerate() {
            let next = self
                .stepper
                .step(&model, &traj[k], a, t0 + k as f64 * self.stepper.dt)?;
            traj.push(next);
        }
        Ok(traj)
    }

    /// Planning cost `sum_k -r(s_k)` of a physical action sequence.
    pub fn objective(&self, s0: &[f64], t0: f64, actions: &[Vec<f64>]) -> Result<f64> {
        let traj = self.rollout(s0, t0, actions)?;
        let mut scratch = vec![0.0; s0.len()];
        Ok(traj[1..].iter().map(|s| -self.params.shaped_reward(s, &mut scratch)).sum())
    }

    fn trajectory(&self, s0: &[f64], t0: f64, u: &[f64]) -> Option<Vec<Vec<f64>>> {
        let actions: Vec<Vec<f64>> = (0..self.horizon()).map(|k| self.decode(u, k)).collect();
        self.rollout(s0, t0, &actions).ok()
    }

    fn evaluate(&self, traj: &[Vec<f64>]) -> Evaluation {
        let bounds = self.tightened();
        let mut scratch = vec![0.0; traj[0].len()];
        let mut cost = 0.0;
        let mut constraints = Vec::with_capacity(2 * bounds.len() * self.horizon());
        for s in &traj[1..] {
            cost -= self.params.shaped_reward(s, &mut scratch);
            for &(idx, scale, lo, hi) in &bounds {
                let v = scale * s[idx];
                constraints.push(v - lo);
                constraints.push(hi - v);
            }
        }
        Evaluation { cost, constraints }
    }

    /// Augmented-Lagrangian stage terms at one node: adds the state
    /// gradient into `grad` and the diagonal Gauss-Newton curvature into
    /// `curv`. Constraints `c >= 0` enter as `-mu c + rho c^2 / 2` when
    /// `c < mu / rho`, else as `-mu^2 / (2 rho)`.
    fn stage_terms(
        &self,
        bounds: &[(usize, f64, f64, f64)],
        s: &[f64],
        mu: &[f64],
        rho: f64,
        grad: &mut [f64],
        curv: Option<&mut [f64]>,
    ) -> f64 {
        let n = s.len();
        let mut rgrad = vec![0.0; n];
        let mut value = -self.params.shaped_reward(s, &mut rgrad);
        for j in 0..n {
            grad[j] -= rgrad[j];
        }
        let mut curv = curv;
        if let Some(c) = curv.as_deref_mut() {
            self.params.shaped_cost_curvature(s, &mut rgrad);
            for j in 0..n {
                c[j] += rgrad[j];
            }
        }
        let mut ci = 0;
        for &(idx, scale, lo, hi) in bounds {
            let v = scale * s[idx];
            for (c, sign) in [(v - lo, 1.0), (hi - v, -1.0)] {
                let m = mu[ci];
                ci += 1;
                if m - rho * c > 0.0 {
                    value += -m * c + 0.5 * rho * c * c;
                    grad[idx] += (-m + rho * c) * sign * scale;
                    if let Some(cv) = curv.as_deref_mut() {
                        cv[idx] += rho * scale * scale;
                    }
                } else {
                    value -= m * m / (2.0 * rho);
                }
            }
        }
        value
    }

    fn constraints_per_step(&self) -> usize {
        2 * self.safety.bounds.len()
    }

    /// Augmented Lagrangian of a normalized decision vector; infinite when
    /// the rollout leaves the domain of the model.
    pub fn augmented_value(&self, s0: &[f64], t0: f64, u: &[f64], mu: &[f64], rho: f64) -> f64 {
        let Some(traj) = self.trajectory(s0, t0, u) else {
            return f64::INFINITY;
        };
        let bounds = self.tightened();
        let per = self.constraints_per_step();
        let mut scratch = vec![0.0; s0.len()];
        let mut value = 0.0;
        for step in 1..=self.horizon() {
            let s = &traj[step];
            if s.iter().any(|v| !v.is_finite()) {
                return f64::INFINITY;
            }
            value += self.stage_terms(&bounds, s, &mu[(step - 1) * per..step * per], rho, &mut scratch, None);
        }
        value
    }

    /// Augmented Lagrangian with its gradient by a reverse sweep through
    /// the integrator.
    pub fn lagrangian(&self, s0: &[f64], t0: f64, u: &[f64], mu: &[f64], rho: f64, grad: &mut [f64]) -> f64 {
        let Some(traj) = self.trajectory(s0, t0, u) else {
            return f64::INFINITY;
        };
        if traj.iter().flatten().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let bounds = self.tightened();
        let per = self.constraints_per_step();
        let n = s0.len();
        let k = self.k();
        let horizon = self.horizon();
        let model = self.params.model(self.seam);

        let mut value = 0.0;
        let mut direct = vec![vec![0.0; n]; horizon + 1];
        for step in 1..=horizon {
            let mu_k = &mu[(step - 1) * per..step * per];
            value += self.stage_terms(&bounds, &traj[step], mu_k, rho, &mut direct[step], None);
        }

        let mut lambda = direct[horizon].clone();
        for step in (0..horizon).rev() {
            let a = self.decode(u, step);
            let t = t0 + step as f64 * self.stepper.dt;
            let (ds, da) = self.stepper.step_adjoint(&model, &traj[step], &a, t, &lambda);
            for i in 0..k {
                grad[step * k + i] = da[i] * self.actions.half_width(i);
            }
            for j in 0..n {
                lambda[j] = ds[j] + direct[step][j];
            }
        }
        value
    }

    /// Value, exact gradient and Gauss-Newton curvature of the augmented
    /// Lagrangian, from forward sensitivities of the rollout.
    pub(crate) fn linearize(&self, s0: &[f64], t0: f64, u: &[f64], mu: &[f64], rho: f64) -> Option<Quadratic> {
        let n = s0.len();
        let k = self.k();
        let horizon = self.horizon();
        let dim = self.dim();
        let bounds = self.tightened();
        let per = self.constraints_per_step();
        let model = self.params.model(self.seam);

        // sens[i * dim + c]: d s_step[i] / d u[c]; only columns < step * k are nonzero
        let mut sens = vec![0.0; n * dim];
        let mut next_sens = vec![0.0; n * dim];
        let mut s = s0.to_vec();
        let mut value = 0.0;
        let mut grad = vec![0.0; dim];
        let mut hess = vec![0.0; dim * dim];
        let mut sgrad = vec![0.0; n];
        let mut curv = vec![0.0; n];
        for step in 0..horizon {
            let a = self.decode(u, step);
            let t = t0 + step as f64 * self.stepper.dt;
            let (next, ds, da) = self.stepper.step_jacobian(&model, &s, &a, t).ok()?;
            if next.iter().any(|v| !v.is_finite()) {
                return None;
            }
            let cols = step * k;
            next_sens.fill(0.0);
            for r in 0..n {
                let row = &mut next_sens[r * dim..r * dim + cols];
                for c in 0..n {
                    let j = ds[r * n + c];
                    if j != 0.0 {
                        for (o, v) in row.iter_mut().zip(&sens[c * dim..c * dim + cols]) {
                            *o += j * v;
                        }
                    }
                }
                for i in 0..k {
                    next_sens[r * dim + cols + i] = da[r * k + i] * self.actions.half_width(i);
                }
            }
            std::mem::swap(&mut sens, &mut next_sens);
            s = next;

            let live = cols + k;
            sgrad.fill(0.0);
            curv.fill(0.0);
            value += self.stage_terms(
                &bounds,
                &s,
                &mu[step * per..(step + 1) * per],
                rho,
                &mut sgrad,
                Some(&mut curv),
            );
            for r in 0..n {
                let row = &sens[r * dim..r * dim + live];
                if sgrad[r] != 0.0 {
                    for (g, v) in grad.iter_mut().zip(row) {
                        *g += sgrad[r] * v;
                    }
                }
                if curv[r] != 0.0 {
                    for a in 0..live {
                        let w = curv[r] * row[a];
                        if w != 0.0 {
                            let hrow = &mut hess[a * dim..a * dim + live];
                            for (h, v) in hrow.iter_mut().zip(row) {
                                *h += w * v;
                            }
                        }
                    }
                }
            }
        }
        Some(Quadratic { value, grad, hess })
    }

    /// Solves the horizon problem from state `s0` at time `t0`.
    pub fn solve(&self, s0: &[f64], t0: f64, warm_start: Option<&[f64]>) -> Result<MpcSolution> {
        check_dim("MPC initial state", self.params.state_dim(), s0.len())?;
        if s0.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                context: "MPC initial state",
                detail: format!("{s0:?}"),
            });
        }
        let mut u = match warm_start {
            Some(w) => {
                check_dim("MPC warm start", self.dim(), w.len())?;
                w.iter().map(|v| v.clamp(-1.0, 1.0)).collect()
            }
            None => self.cold_start(),
        };
        let ncon = self.constraints_per_step() * self.horizon();
        let mut mu = vec![0.0; ncon];
        let mut rho = self.config.penalty_init;
        let settings = InnerSettings {
            max_iter: self.config.max_inner,
            grad_tol: self.config.inner_grad_tol,
        };

        let mut iterations = 0;
        let mut best: Option<(Vec<f64>, f64, f64)> = None;
        let mut prev_violation = f64::INFINITY;
        for _ in 0..self.config.max_outer {
            let inner = minimize_box(
                |x| self.linearize(s0, t0, x, &mu, rho),
                |x| self.augmented_value(s0, t0, x, &mu, rho),
                &u,
                settings,
            );
            iterations += inner.iterations.max(1);
            u = inner.x;
            let Some(traj) = self.trajectory(s0, t0, &u) else {
                break;
            };
            let eval = self.evaluate(&traj);
            let violation = eval.constraints.iter().fold(0.0f64, |m, c| m.max(-c));
            let better = match &best {
                None => true,
                Some((_, bv, bc)) => {
                    let tol = self.config.tolerance;
                    if violation <= tol && *bv <= tol {
                        eval.cost < *bc
                    } else {
                        violation < *bv
                    }
                }
            };
            if better && eval.cost.is_finite() {
                best = Some((u.clone(), violation, eval.cost));
            }
            if violation <= self.config.tolerance && inner.converged {
                break;
            }
            for (m, c) in mu.iter_mut().zip(&eval.constraints) {
                *m = (*m - rho * c).max(0.0);
            }
            if violation > 0.25 * prev_violation {
                rho = (rho * self.config.penalty_growth).min(self.config.penalty_max);
            }
            prev_violation = violation;
        }

        let (u, violation, objective) = best.ok_or_else(|| Error::NonFinite {
            context: "MPC rollout",
            detail: format!("no finite rollout from {s0:?}"),
        })?;
        let actions = (0..self.horizon()).map(|k| self.decode(&u, k)).collect();
        Ok(MpcSolution {
            actions,
            normalized: u,
            objective,
            violation,
            iterations,
            converged: violation <= self.config.tolerance,
        })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RegularizerStep {
    pub action: Vec<f64>,
    pub objective: f64,
    pub violation: f64,
    /// Solver iterations spent on this query; zero on a cache hit.
    pub iterations: usize,
    pub converged: bool,
    pub cache_hit: bool,
}

#[derive(Clone, Debug)]
struct CachedSolve {
    normalized: Vec<f64>,
    step: RegularizerStep,
}

/// Stateful wrapper used inside an episode: tracks the planning-model state
/// estimate, the warm start, and a memo of solved states.
#[derive(Clone, Debug)]
pub struct Regularizer {
    problem: MpcProblem,
    estimate: Vec<f64>,
    t: f64,
    warm: Option<Vec<f64>>,
    cache: HashMap<Vec<u64>, CachedSolve>,
    warm_start_enabled: bool,
}

impl Regularizer {
    pub fn new(problem: MpcProblem) -> Result<Self> {
        let estimate = problem.params.initial_state()?;
        Ok(Self {
            problem,
            estimate,
            t: 0.0,
            warm: None,
            cache: HashMap::new(),
            warm_start_enabled: true,
        })
    }

    pub fn problem(&self) -> &MpcProblem {
        &self.problem
    }

    pub fn set_warm_start(&mut self, enabled: bool) {
        self.warm_start_enabled = enabled;
        if !enabled {
            self.warm = None;
        }
    }

    pub fn estimate(&self) -> &[f64] {
        &self.estimate
    }

    pub fn cache_len(&self) -> usize {
        self.cache.len()
    }

    /// Starts a new episode from the first observation.
    pub fn reset(&mut self, obs: &[f64]) -> Result<()> {
        self.estimate = self.problem.params.initial_state()?;
        self.t = 0.0;
        self.warm = None;
        self.absorb(obs);
        Ok(())
    }

    fn absorb(&mut self, obs: &[f64]) {
        for (i, v) in self.problem.params.measured_components(obs) {
            self.estimate[i] = v;
        }
    }

    fn key(&self) -> Vec<u64> {
        self.estimate
            .iter()
            .chain(std::iter::once(&self.t))
            .map(|v| v.to_bits())
            .collect()
    }

    /// First action of the horizon plan from the current observation.
    pub fn act(&mut self, obs: &[f64]) -> Result<RegularizerStep> {
        check_dim("observation", self.problem.params.observation_dim(), obs.len())?;
        self.absorb(obs);
        let key = self.key();
        if let Some(hit) = self.cache.get(&key) {
            let mut step = hit.step.clone();
            step.iterations = 0;
            step.cache_hit = true;
            if self.warm_start_enabled {
                self.warm = Some(hit.normalized.clone());
            }
            return Ok(step);
        }
        let warm = self.warm.as_ref().map(|w| self.problem.shift(w));
        let solution = self.problem.solve(&self.estimate, self.t, warm.as_deref())?;
        if !solution.converged {
            log::debug!(
                "MPC not converged at t={}: violation {:.3e}, objective {:.4}",
                self.t,
                solution.violation,
                solution.objective
            );
        }
        let step = RegularizerStep {
            action: self.problem.actions.clip(&solution.actions[0]),
            objective: solution.objective,
            violation: solution.violation,
            iterations: solution.iterations,
            converged: solution.converged,
            cache_hit: false,
        };
        if self.warm_start_enabled {
            self.warm = Some(solution.normalized.clone());
        }
        self.cache.insert(
            key,
            CachedSolve {
                normalized: solution.normalized,
                step: step.clone(),
            },
        );
        Ok(step)
    }

    /// Propagates the estimate with the action actually applied to the plant.
    pub fn advance(&mut self, executed: &[f64]) -> Result<()> {
        let model = self.problem.params.model(Seam::Hard);
        self.estimate = match self.problem.stepper.step(&model, &self.estimate, executed, self.t) {
            Ok(x) => x,
            // keep planning from the last finite estimate; the next
            // measurement overwrites what it can
            Err(Error::EnvironmentFault { .. }) => self.estimate.clone(),
            Err(e) => return Err(e),
        };
        self.t += self.problem.stepper.dt;
        Ok(())
    }
}
