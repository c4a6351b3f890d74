//! Focus module: per-dimension blend weights `beta(s)` in (0, 1) between the
//! regularizer action and the learned action,
//! `a = beta * a_reg + (1 - beta) * a_rl`.

pub mod fixtures;
mod lemma;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::approx::{Activation, AdamState, DenseNet, Tape};
use crate::envs::ActionSpace;
use crate::error::{check_dim, Error, Result};
use crate::replay::Batch;
use crate::sac::SacAgent;

pub use lemma::{lemma1_check, regularized_minimizer, Lemma1Fixture, Lemma1Report};

pub const BETA_FLOOR: f64 = 1e-6;
pub const BETA_CEIL: f64 = 1.0 - 1e-6;

/// `(tanh(z) + 1) / 2`, clamped away from 0 and 1.
pub fn beta_of(z: f64) -> f64 {
    (0.5 * (z.tanh() + 1.0)).clamp(BETA_FLOOR, BETA_CEIL)
}

fn beta_slope(z: f64) -> f64 {
    let raw = 0.5 * (z.tanh() + 1.0);
    if raw <= BETA_FLOOR || raw >= BETA_CEIL {
        0.0
    } else {
        let t = z.tanh();
        0.5 * (1.0 - t * t)
    }
}

/// Componentwise convex combination, clipped into the box.
pub fn blend(beta: &[f64], a_reg: &[f64], a_rl: &[f64], space: &ActionSpace) -> Vec<f64> {
    let mixed: Vec<f64> = (0..beta.len())
        .map(|i| beta[i] * a_reg[i] + (1.0 - beta[i]) * a_rl[i])
        .collect();
    space.clip(&mixed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FocusConfig {
    pub hidden: Vec<usize>,
    pub lr: f64,
    /// Required minimum of beta over any state after pretraining.
    pub threshold: f64,
    /// Minimum demanded on the held-out draw during pretraining; above
    /// `threshold` so that unseen states clear it too.
    pub pretrain_target: f64,
    /// Weight whose logit the pretraining regression aims at.
    pub pretrain_goal: f64,
    pub pretrain_lr: f64,
    pub pretrain_batch: usize,
    pub pretrain_max_iters: usize,
    pub validation_samples: usize,
    pub check_every: usize,
    /// One state-independent weight shared by every action dimension.
    pub scalar: bool,
}

impl Default for FocusConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 32],
            lr: 5e-6,
            threshold: 0.999,
            pretrain_target: 0.9995,
            pretrain_goal: 0.9999,
            pretrain_lr: 1e-3,
            pretrain_batch: 256,
            pretrain_max_iters: 20_000,
            validation_samples: 10_000,
            check_every: 50,
            scalar: false,
        }
    }
}

impl FocusConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.scalar && (self.hidden.is_empty() || self.hidden.contains(&0)) {
            return Err(Error::Config("focus: hidden layers must be non-empty and positive".into()));
        }
        if !(self.lr > 0.0 && self.pretrain_lr > 0.0) {
            return Err(Error::Config("focus: learning rates must be positive".into()));
        }
        if !(self.threshold > 0.0 && self.threshold <= self.pretrain_target
            && self.pretrain_target < self.pretrain_goal
            && self.pretrain_goal < BETA_CEIL)
        {
            return Err(Error::Config(format!(
                "focus: need 0 < threshold <= pretrain_target < pretrain_goal < {BETA_CEIL}"
            )));
        }
        if self.pretrain_batch == 0 || self.validation_samples == 0 || self.check_every == 0 {
            return Err(Error::Config("focus: pretraining sizes must be positive".into()));
        }
        Ok(())
    }
}

/// The learnable map from normalized observation to pre-activation `z`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FocusNet {
    StateDependent { net: DenseNet },
    Scalar { z: f64, act_dim: usize },
}

impl FocusNet {
    pub fn params(&self) -> &[f64] {
        match self {
            FocusNet::StateDependent { net } => net.params(),
            FocusNet::Scalar { z, .. } => std::slice::from_ref(z),
        }
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        match self {
            FocusNet::StateDependent { net } => net.params_mut(),
            FocusNet::Scalar { z, .. } => std::slice::from_mut(z),
        }
    }

    pub fn act_dim(&self) -> usize {
        match self {
            FocusNet::StateDependent { net } => net.output_dim(),
            FocusNet::Scalar { act_dim, .. } => *act_dim,
        }
    }

    fn forward(&self, obs: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Option<Tape>)> {
        match self {
            FocusNet::StateDependent { net } => {
                let tape = net.forward_batch(obs)?;
                Ok((tape.output().clone(), Some(tape)))
            }
            FocusNet::Scalar { z, act_dim } => Ok((Array2::from_elem((obs.nrows(), *act_dim), *z), None)),
        }
    }

    /// Parameter gradient for an upstream gradient on `z`.
    fn backward(&self, tape: Option<&Tape>, dz: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        match (self, tape) {
            (FocusNet::StateDependent { net }, Some(tape)) => {
                let mut g = vec![0.0; net.params().len()];
                net.backward_batch(tape, dz, Some(&mut g))?;
                Ok(g)
            }
            (FocusNet::Scalar { .. }, _) => Ok(vec![dz.sum()]),
            (FocusNet::StateDependent { .. }, None) => unreachable!("state-dependent forward records a tape"),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainReport {
    pub iterations: usize,
    pub min_beta: f64,
}

#[derive(Clone, Debug)]
pub struct FocusObjective {
    /// Batch mean of `min(Q1, Q2)` at the blended action.
    pub objective: f64,
    pub grad: Vec<f64>,
    pub mean_beta: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FocusModule {
    config: FocusConfig,
    net: FocusNet,
    optimizer: AdamState,
}

impl FocusModule {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, config: FocusConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let net = if config.scalar {
            FocusNet::Scalar { z: 0.0, act_dim }
        } else {
            FocusNet::StateDependent {
                net: DenseNet::mlp(obs_dim, &config.hidden, act_dim, Activation::Relu, Activation::Identity, rng)?,
            }
        };
        Ok(Self::from_net(net, config))
    }

    pub fn from_net(net: FocusNet, config: FocusConfig) -> Self {
        let optimizer = AdamState::new(net.params().len(), config.lr);
        Self { config, net, optimizer }
    }

    pub fn config(&self) -> &FocusConfig {
        &self.config
    }

    pub fn net(&self) -> &FocusNet {
        &self.net
    }

    pub fn net_mut(&mut self) -> &mut FocusNet {
        &mut self.net
    }

    pub fn beta_batch(&self, obs: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.net.forward(obs)?.0.mapv(beta_of))
    }

    pub fn beta(&self, obs: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, obs.len()), obs).expect("row vector");
        Ok(self.beta_batch(view)?.row(0).to_vec())
    }

    /// Squared-error regression of the pre-activation toward the logit of
    /// `pretrain_goal`, on states drawn uniformly from `[-1, 1]^obs_dim`, until
    /// the minimum of `beta` over a held-out draw reaches `pretrain_target`.
    /// Regressing the logit rather than `beta` itself keeps the gradient
    /// alive near one and stops short of the clamp. Training state is reset
    /// afterwards.
    pub fn pretrain<R: Rng + ?Sized>(&mut self, obs_dim: usize, rng: &mut R) -> Result<PretrainReport> {
        let cfg = self.config.clone();
        let held_out = Array2::from_shape_fn((cfg.validation_samples, obs_dim), |_| rng.gen_range(-1.0..1.0));
        let min_beta = |m: &Self| -> Result<f64> { Ok(m.beta_batch(held_out.view())?.fold(f64::INFINITY, |a, b| a.min(*b))) };
        let mut opt = AdamState::new(self.net.params().len(), cfg.pretrain_lr);
        let k = self.net.act_dim();
        let goal = (2.0 * cfg.pretrain_goal - 1.0).atanh();
        for iter in 0..=cfg.pretrain_max_iters {
            if iter % cfg.check_every == 0 {
                let m = min_beta(self)?;
                if m >= cfg.pretrain_target {
                    self.optimizer = AdamState::new(self.net.params().len(), cfg.lr);
                    return Ok(PretrainReport {
                        iterations: iter,
                        min_beta: m,
                    });
                }
            }
            if iter == cfg.pretrain_max_iters {
                break;
            }
            let x = Array2::from_shape_fn((cfg.pretrain_batch, obs_dim), |_| rng.gen_range(-1.0..1.0));
            let (z, tape) = self.net.forward(x.view())?;
            let scale = 2.0 / (cfg.pretrain_batch * k) as f64;
            let dz = z.mapv(|v| scale * (v - goal));
            let grad = self.net.backward(tape.as_ref(), dz.view())?;
            opt.step(self.net.params_mut(), &grad, false)?;
        }
        Err(Error::Config(format!(
            "focus pretraining did not reach min beta {} within {} iterations (reached {:.6})",
            cfg.pretrain_target,
            cfg.pretrain_max_iters,
            min_beta(self)?
        )))
    }

    /// Mean of `min(Q1, Q2)(s, blend(beta(s), a_reg, a_rl))` with `a_rl`
    /// drawn from the current policy under fixed noise, and its gradient
    /// with respect to the focus parameters only.
    pub fn objective(
        &self,
        agent: &SacAgent,
        obs: ArrayView2<'_, f64>,
        reg_actions: ArrayView2<'_, f64>,
        eps: ArrayView2<'_, f64>,
    ) -> Result<FocusObjective> {
        let n = obs.nrows();
        let k = agent.act_dim();
        check_dim("focus action dim", k, self.net.act_dim())?;
        check_dim("regularizer actions", k, reg_actions.ncols())?;
        let space = agent.actions();
        let (z, tape) = self.net.forward(obs)?;
        let u_rl = agent.squashed_batch(obs, eps)?;
        let mut u_blend = Array2::zeros((n, k));
        let mut spread = Array2::zeros((n, k));
        let mut beta_sum = 0.0;
        for b in 0..n {
            let beta: Vec<f64> = (0..k).map(|i| beta_of(z[[b, i]])).collect();
            beta_sum += beta.iter().sum::<f64>();
            let a_rl = agent.to_physical(&u_rl.row(b).to_vec());
            let a_reg = reg_actions.row(b).to_vec();
            let a = blend(&beta, &a_reg, &a_rl, space);
            let unclipped_inside = (0..k).all(|i| {
                let m = beta[i] * a_reg[i] + (1.0 - beta[i]) * a_rl[i];
                m >= space.low[i] && m <= space.high[i]
            });
            for i in 0..k {
                u_blend[[b, i]] = (a[i] - space.center(i)) / space.half_width(i);
                if unclipped_inside {
                    spread[[b, i]] = (a_reg[i] - a_rl[i]) / space.half_width(i);
                }
            }
        }
        let (min_q, gq) = agent.min_q_action_grad(obs, u_blend.view())?;
        let objective = min_q.iter().sum::<f64>() / n as f64;
        if !objective.is_finite() {
            return Err(Error::NonFinite {
                context: "focus objective",
                detail: format!("{objective}"),
            });
        }
        let dz = Array2::from_shape_fn((n, k), |(b, i)| gq[[b, i]] * spread[[b, i]] * beta_slope(z[[b, i]]) / n as f64);
        let grad = self.net.backward(tape.as_ref(), dz.view())?;
        Ok(FocusObjective {
            objective,
            grad,
            mean_beta: beta_sum / (n * k) as f64,
        })
    }

    /// One ascent step on the focus objective with freshly drawn `a_rl`.
    pub fn update<R: Rng + ?Sized>(&mut self, agent: &SacAgent, batch: &Batch, rng: &mut R) -> Result<f64> {
        let eps = agent.noise(batch.len(), rng);
        let f = self.objective(agent, batch.obs.view(), batch.reg_actions.view(), eps.view())?;
        self.optimizer.step(self.net.params_mut(), &f.grad, true)?;
        Ok(f.objective)
    }
}
