//! Small finite MDPs with a one-dimensional action box, solved exactly, for
//! certifying the focus-weight improvement step and the performance
//! difference identity by brute force.
//!
//! Transitions and rewards are tabulated on an action grid and linearly
//! interpolated in between, so blended actions that fall off the grid are
//! still well defined and every transition row stays a distribution.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};

pub const ACTION_GRID_POINTS: usize = 21;
pub const BETA_GRID_POINTS: usize = 101;

/// Per-state distribution over continuous actions, as `(action, probability)` pairs.
pub type Policy = Vec<Vec<(f64, f64)>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TabularMdp {
    pub gamma: f64,
    pub action_grid: Vec<f64>,
    /// `transitions[(s * grid + j) * n + s2]`.
    pub transitions: Vec<f64>,
    /// `rewards[s * grid + j]`.
    pub rewards: Vec<f64>,
    pub n_states: usize,
}

/// Evenly spaced points on `[low, high]`.
pub fn grid(low: f64, high: f64, points: usize) -> Vec<f64> {
    (0..points)
        .map(|i| {
            if i + 1 == points {
                high
            } else {
                low + (high - low) * i as f64 / (points - 1) as f64
            }
        })
        .collect()
}

impl TabularMdp {
    /// Dirichlet-like random rows (normalized exponentials) and uniform rewards.
    pub fn random<R: Rng + ?Sized>(n_states: usize, grid_points: usize, gamma: f64, rng: &mut R) -> Result<Self> {
        let action_grid = grid(-1.0, 1.0, grid_points);
        let mut transitions = Vec::with_capacity(n_states * grid_points * n_states);
        for _ in 0..n_states * grid_points {
            let row: Vec<f64> = (0..n_states).map(|_| -(rng.gen_range(1e-12..1.0f64)).ln()).collect();
            let total: f64 = row.iter().sum();
            transitions.extend(row.iter().map(|v| v / total));
        }
        let rewards = (0..n_states * grid_points).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let mdp = Self {
            gamma,
            action_grid,
            transitions,
            rewards,
            n_states,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    pub fn validate(&self) -> Result<()> {
        let (n, g) = (self.n_states, self.action_grid.len());
        if n == 0 || n > 20 || g < 2 {
            return Err(Error::Config(format!("tabular MDP needs 1..=20 states and a grid of >= 2 points, got {n} and {g}")));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("discount {} makes the Bellman system singular", self.gamma)));
        }
        if self.action_grid.windows(2).any(|w| !(w[0] < w[1])) {
            return Err(Error::Config("action grid must be strictly increasing".into()));
        }
        check_dim("transition tensor", n * g * n, self.transitions.len())?;
        check_dim("reward table", n * g, self.rewards.len())?;
        for row in self.transitions.chunks(n) {
            let total: f64 = row.iter().sum();
            if row.iter().any(|p| *p < 0.0) || (total - 1.0).abs() > 1e-12 {
                return Err(Error::Config(format!("transition row sums to {total}")));
            }
        }
        Ok(())
    }

    fn grid_len(&self) -> usize {
        self.action_grid.len()
    }

    /// Lower grid index and interpolation weight on the upper neighbour.
    fn locate(&self, a: f64) -> (usize, f64) {
        let g = &self.action_grid;
        let a = a.clamp(g[0], g[g.len() - 1]);
        let j = match g.iter().position(|x| *x > a) {
            Some(0) => 0,
            Some(j) => j - 1,
            None => g.len() - 2,
        };
        let w = (a - g[j]) / (g[j + 1] - g[j]);
        (j, w)
    }

    pub fn reward(&self, s: usize, a: f64) -> f64 {
        let (j, w) = self.locate(a);
        let base = s * self.grid_len();
        (1.0 - w) * self.rewards[base + j] + w * self.rewards[base + j + 1]
    }

    pub fn transition_row(&self, s: usize, a: f64) -> Vec<f64> {
        let n = self.n_states;
        let (j, w) = self.locate(a);
        let lo = (s * self.grid_len() + j) * n;
        let hi = lo + n;
        (0..n)
            .map(|s2| (1.0 - w) * self.transitions[lo + s2] + w * self.transitions[hi + s2])
            .collect()
    }

    /// State-to-state matrix and expected reward vector under `policy`.
    pub fn policy_system(&self, policy: &Policy) -> Result<(DMatrix<f64>, DVector<f64>)> {
        let n = self.n_states;
        check_dim("policy states", n, policy.len())?;
        let mut p = DMatrix::zeros(n, n);
        let mut r = DVector::zeros(n);
        for (s, dist) in policy.iter().enumerate() {
            let mass: f64 = dist.iter().map(|(_, q)| q).sum();
            if (mass - 1.0).abs() > 1e-12 || dist.iter().any(|(_, q)| *q < 0.0) {
                return Err(Error::Config(format!("policy at state {s} has mass {mass}")));
            }
            for &(a, q) in dist {
                r[s] += q * self.reward(s, a);
                for (s2, t) in self.transition_row(s, a).into_iter().enumerate() {
                    p[(s, s2)] += q * t;
                }
            }
        }
        Ok((p, r))
    }

    /// Solves `(I - gamma P_pi) v = r_pi`.
    pub fn exact_value(&self, policy: &Policy) -> Result<Vec<f64>> {
        let (p, r) = self.policy_system(policy)?;
        let n = self.n_states;
        let m = DMatrix::identity(n, n) - p * self.gamma;
        let v = m
            .lu()
            .solve(&r)
            .ok_or_else(|| Error::Config("singular Bellman system".into()))?;
        Ok(v.iter().copied().collect())
    }

    /// Iterative policy evaluation from zero.
    pub fn value_iteration(&self, policy: &Policy, sweeps: usize) -> Result<Vec<f64>> {
        let (p, r) = self.policy_system(policy)?;
        let mut v = DVector::zeros(self.n_states);
        for _ in 0..sweeps {
            v = &r + (&p * &v) * self.gamma;
        }
        Ok(v.iter().copied().collect())
    }

    pub fn q_value(&self, v: &[f64], s: usize, a: f64) -> f64 {
        let row = self.transition_row(s, a);
        self.reward(s, a) + self.gamma * row.iter().zip(v).map(|(p, x)| p * x).sum::<f64>()
    }

    /// Normalized discounted state occupancy from `start`:
    /// `(1 - gamma) e_start^T (I - gamma P_pi)^{-1}`.
    pub fn occupancy(&self, policy: &Policy, start: usize) -> Result<Vec<f64>> {
        let (p, _) = self.policy_system(policy)?;
        let n = self.n_states;
        let m = (DMatrix::identity(n, n) - p * self.gamma).transpose();
        let mut e = DVector::zeros(n);
        e[start] = 1.0 - self.gamma;
        let d = m
            .lu()
            .solve(&e)
            .ok_or_else(|| Error::Config("singular occupancy system".into()))?;
        Ok(d.iter().copied().collect())
    }

    /// Both sides of the performance difference identity at `start`:
    /// `V'(s) - V(s)` and `E_{d'}[A(s', pi')] / (1 - gamma)`.
    pub fn performance_difference(&self, pi: &Policy, pi_new: &Policy, start: usize) -> Result<(f64, f64)> {
        let v = self.exact_value(pi)?;
        let v_new = self.exact_value(pi_new)?;
        let d = self.occupancy(pi_new, start)?;
        let advantage: Vec<f64> = (0..self.n_states)
            .map(|s| pi_new[s].iter().map(|&(a, q)| q * self.q_value(&v, s, a)).sum::<f64>() - v[s])
            .collect();
        let rhs = d.iter().zip(&advantage).map(|(x, y)| x * y).sum::<f64>() / (1.0 - self.gamma);
        Ok((v_new[start] - v[start], rhs))
    }
}

/// Per-state blend of a deterministic regularizer action with a stochastic
/// learned policy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CombinedPolicy {
    pub a_reg: Vec<f64>,
    pub rl: Policy,
    pub beta: Vec<f64>,
}

impl CombinedPolicy {
    fn blended(&self, s: usize, beta: f64) -> Vec<(f64, f64)> {
        self.rl[s]
            .iter()
            .map(|&(a, q)| (beta * self.a_reg[s] + (1.0 - beta) * a, q))
            .collect()
    }

    pub fn policy(&self) -> Policy {
        (0..self.a_reg.len()).map(|s| self.blended(s, self.beta[s])).collect()
    }

    /// Random regularizer actions and learned policies on the MDP's grid,
    /// with weights drawn from `beta_grid`.
    pub fn random<R: Rng + ?Sized>(mdp: &TabularMdp, beta_grid: &[f64], rng: &mut R) -> Self {
        let g = &mdp.action_grid;
        let n = mdp.n_states;
        let a_reg = (0..n).map(|_| g[rng.gen_range(0..g.len())]).collect();
        let rl = (0..n)
            .map(|_| {
                let support = rng.gen_range(1..=4);
                let weights: Vec<f64> = (0..support).map(|_| rng.gen_range(0.05..1.0)).collect();
                let total: f64 = weights.iter().sum();
                weights
                    .iter()
                    .map(|w| (g[rng.gen_range(0..g.len())], w / total))
                    .collect()
            })
            .collect();
        let beta = (0..n).map(|_| beta_grid[rng.gen_range(0..beta_grid.len())]).collect();
        Self { a_reg, rl, beta }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Theorem2Verdict {
    pub state: usize,
    pub beta_before: f64,
    pub beta_after: f64,
    /// `min_s V_new(s) - V_old(s)`.
    pub min_gain: f64,
    pub max_gain: f64,
    pub updated: CombinedPolicy,
}

impl Theorem2Verdict {
    pub fn holds(&self, slack: f64) -> bool {
        self.min_gain >= -slack
    }
}

/// Replaces `beta(s_t)` by the grid point maximizing the expected exact
/// `Q^{pi_beta}(s_t, blend)`; the current weight wins ties. Returns the
/// value change at every state.
pub fn theorem2_check(mdp: &TabularMdp, combined: &CombinedPolicy, s_t: usize, beta_grid: &[f64]) -> Result<Theorem2Verdict> {
    mdp.validate()?;
    if s_t >= mdp.n_states {
        return Err(Error::Config(format!("state {s_t} out of range")));
    }
    let v = mdp.exact_value(&combined.policy())?;
    let score = |beta: f64| -> f64 {
        combined
            .blended(s_t, beta)
            .iter()
            .map(|&(a, q)| q * mdp.q_value(&v, s_t, a))
            .sum()
    };
    let mut best = combined.beta[s_t];
    let mut best_score = score(best);
    for &b in beta_grid {
        let sc = score(b);
        if sc > best_score {
            best = b;
            best_score = sc;
        }
    }
    let mut updated = combined.clone();
    updated.beta[s_t] = best;
    let v_new = mdp.exact_value(&updated.policy())?;
    let gains: Vec<f64> = v_new.iter().zip(&v).map(|(a, b)| a - b).collect();
    Ok(Theorem2Verdict {
        state: s_t,
        beta_before: combined.beta[s_t],
        beta_after: best,
        min_gain: gains.iter().cloned().fold(f64::INFINITY, f64::min),
        max_gain: gains.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        updated,
    })
}

/// An instance where the learned policy sits on the unique reward peak at
/// every state and transitions ignore the action, so the best weight is zero.
pub fn adversarial_instance(n_states: usize, gamma: f64) -> Result<(TabularMdp, CombinedPolicy)> {
    let action_grid = grid(-1.0, 1.0, ACTION_GRID_POINTS);
    let g = action_grid.len();
    let peak: Vec<f64> = (0..n_states).map(|s| action_grid[(3 + 5 * s) % g]).collect();
    let mut transitions = Vec::with_capacity(n_states * g * n_states);
    let mut rewards = Vec::with_capacity(n_states * g);
    for s in 0..n_states {
        for a in &action_grid {
            rewards.push(-(a - peak[s]).abs());
            for s2 in 0..n_states {
                transitions.push(if s2 == (s + 1) % n_states { 1.0 } else { 0.0 });
            }
        }
    }
    let mdp = TabularMdp {
        gamma,
        action_grid,
        transitions,
        rewards,
        n_states,
    };
    mdp.validate()?;
    let a_reg = peak.iter().map(|p| if *p > 0.0 { p - 0.8 } else { p + 0.8 }).collect();
    let combined = CombinedPolicy {
        a_reg,
        rl: peak.iter().map(|p| vec![(*p, 1.0)]).collect(),
        beta: vec![0.7; n_states],
    };
    Ok((mdp, combined))
}
