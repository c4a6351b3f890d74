//! Soft actor-critic: a tanh-squashed Gaussian policy, twin critics with
//! clipped double-Q targets, polyak-tracked target critics and an entropy
//! coefficient tuned toward a target entropy.
//!
//! Everything inside the agent works in normalized action space `[-1, 1]^k`;
//! the affine map to the physical box only happens at the boundary. Log
//! probabilities are therefore densities over normalized actions.

use std::path::Path;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::approx::{Activation, AdamState, DenseNet, Tape};
use crate::envs::ActionSpace;
use crate::error::{check_dim, Error, Result};
use crate::replay::Batch;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_7;

/// Largest normalized magnitude handed to the physical action map, so that
/// sampled actions stay strictly inside the box.
const SQUASH_LIMIT: f64 = 1.0 - 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "lowercase", deny_unknown_fields)]
pub enum EntropyMode {
    Fixed { alpha: f64 },
    /// Tuned toward target entropy `-k`, starting from `initial`.
    Auto { initial: f64 },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub q_lr: f64,
    pub policy_lr: f64,
    pub alpha_lr: f64,
    pub batch_size: usize,
    pub learning_starts: usize,
    pub policy_frequency: usize,
    pub target_frequency: usize,
    pub hidden: Vec<usize>,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub entropy: EntropyMode,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            q_lr: 1e-3,
            policy_lr: 3e-4,
            alpha_lr: 1e-3,
            batch_size: 256,
            learning_starts: 256,
            policy_frequency: 2,
            target_frequency: 1,
            hidden: vec![256, 256],
            log_std_min: -5.0,
            log_std_max: 2.0,
            entropy: EntropyMode::Auto { initial: 1.0 },
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: &str| Err(Error::Config(format!("sac: {msg}")));
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if [self.q_lr, self.policy_lr, self.alpha_lr].iter().any(|v| !(*v > 0.0)) {
            return bad("learning rates must be positive");
        }
        if self.batch_size == 0 || self.policy_frequency == 0 || self.target_frequency == 0 {
            return bad("batch size and update frequencies must be positive");
        }
        if self.hidden.is_empty() || self.hidden.contains(&0) {
            return bad("hidden layers must be non-empty and positive");
        }
        if !(self.log_std_min < self.log_std_max) {
            return bad("log_std_min must be below log_std_max");
        }
        match self.entropy {
            EntropyMode::Fixed { alpha } if !(alpha >= 0.0 && alpha.is_finite()) => {
                bad("fixed entropy coefficient must be finite and non-negative")
            }
            EntropyMode::Auto { initial } if !(initial > 0.0 && initial.is_finite()) => {
                bad("initial entropy coefficient must be positive")
            }
            _ => Ok(()),
        }
    }
}

/// Online and target networks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacNets {
    pub q1: DenseNet,
    pub q2: DenseNet,
    pub q1_target: DenseNet,
    pub q2_target: DenseNet,
    /// Outputs the mean then the unconstrained log-std parameter per action dimension.
    pub policy: DenseNet,
}

impl SacNets {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, act_dim: usize, hidden: &[usize], rng: &mut R) -> Result<Self> {
        let q = |rng: &mut R| DenseNet::mlp(obs_dim + act_dim, hidden, 1, Activation::Relu, Activation::Identity, rng);
        let q1 = q(rng)?;
        let q2 = q(rng)?;
        let policy = DenseNet::mlp(obs_dim, hidden, 2 * act_dim, Activation::Relu, Activation::Identity, rng)?;
        Ok(Self {
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            q1,
            q2,
            policy,
        })
    }
}

/// Entropy coefficient, stored as `ln(alpha)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EntropyCoef {
    log_alpha: f64,
    auto: bool,
    target_entropy: f64,
    optimizer: AdamState,
}

impl EntropyCoef {
    pub fn new(mode: &EntropyMode, act_dim: usize, lr: f64) -> Self {
        let (alpha, auto) = match *mode {
            EntropyMode::Fixed { alpha } => (alpha, false),
            EntropyMode::Auto { initial } => (initial, true),
        };
        Self {
            log_alpha: alpha.ln(),
            auto,
            target_entropy: -(act_dim as f64),
            optimizer: AdamState::new(1, lr),
        }
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    pub fn is_auto(&self) -> bool {
        self.auto
    }

    pub fn target_entropy(&self) -> f64 {
        self.target_entropy
    }

    /// One descent step on `-ln(alpha) * (log_prob + target)`.
    fn update(&mut self, mean_log_prob: f64) -> Result<()> {
        if !self.auto {
            return Ok(());
        }
        let grad = -(mean_log_prob + self.target_entropy);
        let mut p = [self.log_alpha];
        self.optimizer.step(&mut p, &[grad], false)?;
        self.log_alpha = p[0];
        Ok(())
    }
}

/// One policy draw.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianAction {
    /// Pre-squash Gaussian sample.
    pub raw: Vec<f64>,
    pub normalized: Vec<f64>,
    /// Action in the physical box.
    pub action: Vec<f64>,
    /// Log density of `normalized` under the squashed policy.
    pub log_prob: f64,
}

/// Critic losses from one evaluation, with gradients of each loss.
#[derive(Clone, Debug)]
pub struct QLoss {
    pub losses: [f64; 2],
    pub grads: [Vec<f64>; 2],
    pub targets: Vec<f64>,
    /// Per-row target critic values at the sampled next action.
    pub target_q: [Vec<f64>; 2],
}

/// Policy objective `mean(min Q - alpha log pi)` and its parameter gradient.
#[derive(Clone, Debug)]
pub struct PolicyObjective {
    pub objective: f64,
    pub grad: Vec<f64>,
    pub mean_log_prob: f64,
    pub mean_log_std: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct UpdateStats {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_objective: Option<f64>,
    pub alpha: f64,
}

struct PolicyPass {
    tape: Tape,
    log_std_squash: Array2<f64>,
    std: Array2<f64>,
    u: Array2<f64>,
    log_prob: Vec<f64>,
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 - tanh(x)^2)`, stable for large `|x|`.
fn log_tanh_jacobian(x: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - x - softplus(-2.0 * x))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SacAgent {
    config: SacConfig,
    actions: ActionSpace,
    obs_dim: usize,
    nets: SacNets,
    q1_opt: AdamState,
    q2_opt: AdamState,
    policy_opt: AdamState,
    entropy: EntropyCoef,
    q_updates: u64,
}

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(obs_dim: usize, actions: ActionSpace, config: SacConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let nets = SacNets::new(obs_dim, actions.dim(), &config.hidden, rng)?;
        Self::from_nets(nets, actions, config)
    }

    pub fn from_nets(nets: SacNets, actions: ActionSpace, config: SacConfig) -> Result<Self> {
        config.validate()?;
        let k = actions.dim();
        let obs_dim = nets.policy.input_dim();
        check_dim("policy output", 2 * k, nets.policy.output_dim())?;
        for q in [&nets.q1, &nets.q2, &nets.q1_target, &nets.q2_target] {
            check_dim("critic input", obs_dim + k, q.input_dim())?;
            check_dim("critic output", 1, q.output_dim())?;
        }
        if !nets.q1.same_shape(&nets.q1_target) || !nets.q2.same_shape(&nets.q2_target) {
            return Err(Error::Config("target critics must match the online critics".into()));
        }
        Ok(Self {
            q1_opt: AdamState::new(nets.q1.params().len(), config.q_lr),
            q2_opt: AdamState::new(nets.q2.params().len(), config.q_lr),
            policy_opt: AdamState::new(nets.policy.params().len(), config.policy_lr),
            entropy: EntropyCoef::new(&config.entropy, k, config.alpha_lr),
            q_updates: 0,
            obs_dim,
            config,
            actions,
            nets,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.config
    }

    pub fn actions(&self) -> &ActionSpace {
        &self.actions
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.actions.dim()
    }

    pub fn nets(&self) -> &SacNets {
        &self.nets
    }

    pub fn nets_mut(&mut self) -> &mut SacNets {
        &mut self.nets
    }

    pub fn entropy(&self) -> &EntropyCoef {
        &self.entropy
    }

    pub fn alpha(&self) -> f64 {
        self.entropy.alpha()
    }

    pub fn q_updates(&self) -> u64 {
        self.q_updates
    }

    /// Standard normal noise, one row per sample, drawn row by row.
    pub fn noise<R: Rng + ?Sized>(&self, rows: usize, rng: &mut R) -> Array2<f64> {
        let k = self.act_dim();
        Array2::from_shape_fn((rows, k), |_| rng.sample(StandardNormal))
    }

    fn log_std(&self, r: f64) -> f64 {
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        lo + 0.5 * (hi - lo) * (r.tanh() + 1.0)
    }

    fn policy_pass(&self, obs: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>) -> Result<PolicyPass> {
        let k = self.act_dim();
        check_dim("policy noise", k, eps.ncols())?;
        check_dim("policy noise rows", obs.nrows(), eps.nrows())?;
        let tape = self.nets.policy.forward_batch(obs)?;
        let out = tape.output();
        let mean = out.slice(s![.., ..k]);
        let log_std_squash = out.slice(s![.., k..]).mapv(f64::tanh);
        let (lo, hi) = (self.config.log_std_min, self.config.log_std_max);
        let log_std = log_std_squash.mapv(|t| lo + 0.5 * (hi - lo) * (t + 1.0));
        let std = log_std.mapv(f64::exp);
        let raw = &mean + &(&std * &eps);
        let u = raw.mapv(f64::tanh);
        let log_prob = (0..obs.nrows())
            .map(|b| {
                (0..k)
                    .map(|i| {
                        let e = eps[[b, i]];
                        -0.5 * e * e - log_std[[b, i]] - HALF_LN_2PI - log_tanh_jacobian(raw[[b, i]])
                    })
                    .sum()
            })
            .collect();
        Ok(PolicyPass {
            tape,
            log_std_squash,
            std,
            u,
            log_prob,
        })
    }

    /// Samples one action. Deterministic mode returns the squashed mean and
    /// consumes no randomness.
    pub fn act<R: Rng + ?Sized>(&self, obs: &[f64], deterministic: bool, rng: &mut R) -> Result<GaussianAction> {
        check_dim("observation", self.obs_dim, obs.len())?;
        let k = self.act_dim();
        let eps = if deterministic {
            Array2::zeros((1, k))
        } else {
            self.noise(1, rng)
        };
        let obs = ArrayView2::from_shape((1, obs.len()), obs).expect("row vector");
        let pass = self.policy_pass(obs, eps.view())?;
        let out = pass.tape.output();
        let raw: Vec<f64> = (0..k).map(|i| out[[0, i]] + pass.std[[0, i]] * eps[[0, i]]).collect();
        let normalized = pass.u.row(0).to_vec();
        Ok(GaussianAction {
            raw,
            action: self.to_physical(&normalized),
            normalized,
            log_prob: pass.log_prob[0],
        })
    }

    /// Physical action for a normalized one, kept strictly inside the box.
    pub fn to_physical(&self, normalized: &[f64]) -> Vec<f64> {
        let clipped: Vec<f64> = normalized.iter().map(|u| u.clamp(-SQUASH_LIMIT, SQUASH_LIMIT)).collect();
        self.actions.denormalize(&clipped)
    }

    /// Mean and standard deviation of the pre-squash Gaussian.
    pub fn gaussian(&self, obs: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let out = self.nets.policy.forward(obs)?;
        let k = self.act_dim();
        Ok((out[..k].to_vec(), out[k..].iter().map(|r| self.log_std(*r).exp()).collect()))
    }

    /// Log density of a normalized action in `(-1, 1)^k`.
    pub fn log_prob(&self, obs: &[f64], normalized: &[f64]) -> Result<f64> {
        check_dim("normalized action", self.act_dim(), normalized.len())?;
        let (mean, std) = self.gaussian(obs)?;
        Ok(normalized
            .iter()
            .enumerate()
            .map(|(i, u)| {
                let raw = u.atanh();
                let e = (raw - mean[i]) / std[i];
                -0.5 * e * e - std[i].ln() - HALF_LN_2PI - log_tanh_jacobian(raw)
            })
            .sum())
    }

    /// Normalized squashed actions for a batch of observations and fixed noise.
    pub fn squashed_batch(&self, obs: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok(self.policy_pass(obs, eps)?.u)
    }

    fn critic_input(&self, obs: ArrayView2<'_, f64>, u: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        check_dim("critic observation", self.obs_dim, obs.ncols())?;
        check_dim("critic action", self.act_dim(), u.ncols())?;
        concatenate(Axis(1), &[obs.view(), u.view()]).map_err(|e| Error::Config(format!("critic input: {e}")))
    }

    fn normalize_rows(&self, actions: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut u = actions.to_owned();
        for mut row in u.rows_mut() {
            for (i, v) in row.iter_mut().enumerate() {
                *v = (*v - self.actions.center(i)) / self.actions.half_width(i);
            }
        }
        u
    }

    /// Online critic values at physical actions.
    pub fn q_values(&self, obs: &[f64], action: &[f64]) -> Result<(f64, f64)> {
        let u = self.actions.normalize(action);
        let mut x = obs.to_vec();
        x.extend_from_slice(&u);
        Ok((self.nets.q1.forward(&x)?[0], self.nets.q2.forward(&x)?[0]))
    }

    /// Per-row `min(Q1, Q2)` at normalized actions, and its gradient with
    /// respect to those actions.
    pub fn min_q_action_grad(
        &self,
        obs: ArrayView2<'_, f64>,
        u: ArrayView2<'_, f64>,
    ) -> Result<(Vec<f64>, Array2<f64>)> {
        let x = self.critic_input(obs, u)?;
        let t1 = self.nets.q1.forward_batch(x.view())?;
        let t2 = self.nets.q2.forward_batch(x.view())?;
        let n = x.nrows();
        let mut up1 = Array2::zeros((n, 1));
        let mut up2 = Array2::zeros((n, 1));
        let mut min_q = Vec::with_capacity(n);
        for b in 0..n {
            let (a, c) = (t1.output()[[b, 0]], t2.output()[[b, 0]]);
            if a <= c {
                up1[[b, 0]] = 1.0;
                min_q.push(a);
            } else {
                up2[[b, 0]] = 1.0;
                min_q.push(c);
            }
        }
        let g1 = self.nets.q1.backward_batch(&t1, up1.view(), None)?;
        let g2 = self.nets.q2.backward_batch(&t2, up2.view(), None)?;
        let grad = &g1.slice(s![.., self.obs_dim..]) + &g2.slice(s![.., self.obs_dim..]);
        Ok((min_q, grad))
    }

    /// Clipped double-Q regression targets and critic losses for fixed
    /// next-action noise.
    pub fn q_loss(&self, batch: &Batch, next_eps: ArrayView2<'_, f64>) -> Result<QLoss> {
        let n = batch.len();
        let alpha = self.alpha();
        let next = self.policy_pass(batch.next_obs.view(), next_eps)?;
        let next_x = self.critic_input(batch.next_obs.view(), next.u.view())?;
        let tq1 = self.nets.q1_target.predict_batch(next_x.view())?;
        let tq2 = self.nets.q2_target.predict_batch(next_x.view())?;
        let targets: Vec<f64> = (0..n)
            .map(|b| {
                let soft = tq1[[b, 0]].min(tq2[[b, 0]]) - alpha * next.log_prob[b];
                batch.rewards[b] + self.config.gamma * (1.0 - batch.dones[b]) * soft
            })
            .collect();
        let u = self.normalize_rows(batch.actions.view());
        let x = self.critic_input(batch.obs.view(), u.view())?;
        let mut losses = [0.0; 2];
        let mut grads = [Vec::new(), Vec::new()];
        for (i, net) in [&self.nets.q1, &self.nets.q2].into_iter().enumerate() {
            let tape = net.forward_batch(x.view())?;
            let q = tape.output();
            let mut up = Array2::zeros((n, 1));
            let mut loss = 0.0;
            for b in 0..n {
                let r = q[[b, 0]] - targets[b];
                loss += r * r;
                up[[b, 0]] = 2.0 * r / n as f64;
            }
            let mut g = vec![0.0; net.params().len()];
            net.backward_batch(&tape, up.view(), Some(&mut g))?;
            losses[i] = loss / n as f64;
            grads[i] = g;
        }
        if losses.iter().any(|l| !l.is_finite()) {
            return Err(Error::NonFinite {
                context: "critic loss",
                detail: format!("losses {losses:?}"),
            });
        }
        Ok(QLoss {
            losses,
            grads,
            targets,
            target_q: [tq1.column(0).to_vec(), tq2.column(0).to_vec()],
        })
    }

    /// Reparameterized policy objective for fixed noise.
    pub fn policy_objective(&self, obs: ArrayView2<'_, f64>, eps: ArrayView2<'_, f64>) -> Result<PolicyObjective> {
        let n = obs.nrows();
        let k = self.act_dim();
        let alpha = self.alpha();
        let pass = self.policy_pass(obs, eps)?;
        let (min_q, gq) = self.min_q_action_grad(obs, pass.u.view())?;
        let inv_n = 1.0 / n as f64;
        let objective = (0..n).map(|b| min_q[b] - alpha * pass.log_prob[b]).sum::<f64>() * inv_n;
        if !objective.is_finite() {
            return Err(Error::NonFinite {
                context: "policy objective",
                detail: format!("{objective}"),
            });
        }
        let half_span = 0.5 * (self.config.log_std_max - self.config.log_std_min);
        let mut up = Array2::zeros((n, 2 * k));
        let mut log_std_sum = 0.0;
        for b in 0..n {
            for i in 0..k {
                let u = pass.u[[b, i]];
                let d_raw = inv_n * (gq[[b, i]] * (1.0 - u * u) - alpha * 2.0 * u);
                let t = pass.log_std_squash[[b, i]];
                let d_log_std = d_raw * pass.std[[b, i]] * eps[[b, i]] + alpha * inv_n;
                up[[b, i]] = d_raw;
                up[[b, k + i]] = d_log_std * half_span * (1.0 - t * t);
                log_std_sum += self.config.log_std_min + half_span * (t + 1.0);
            }
        }
        let mut grad = vec![0.0; self.nets.policy.params().len()];
        self.nets.policy.backward_batch(&pass.tape, up.view(), Some(&mut grad))?;
        Ok(PolicyObjective {
            objective,
            grad,
            mean_log_prob: pass.log_prob.iter().sum::<f64>() * inv_n,
            mean_log_std: log_std_sum / (n * k) as f64,
        })
    }

    /// One critic step on both online critics. Returns the two losses.
    pub fn q_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<[f64; 2]> {
        let eps = self.noise(batch.len(), rng);
        let q = self.q_loss(batch, eps.view())?;
        self.q1_opt.step(self.nets.q1.params_mut(), &q.grads[0], false)?;
        self.q2_opt.step(self.nets.q2.params_mut(), &q.grads[1], false)?;
        Ok(q.losses)
    }

    /// One policy ascent step, followed by an entropy-coefficient step when tuned.
    pub fn policy_update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<f64> {
        let eps = self.noise(batch.len(), rng);
        let p = self.policy_objective(batch.obs.view(), eps.view())?;
        self.policy_opt.step(self.nets.policy.params_mut(), &p.grad, true)?;
        self.entropy.update(p.mean_log_prob)?;
        Ok(p.objective)
    }

    /// `target <- (1 - tau) target + tau online` for both critics.
    pub fn target_update(&mut self) -> Result<()> {
        let tau = self.config.tau;
        self.nets.q1_target.track(&self.nets.q1, tau)?;
        self.nets.q2_target.track(&self.nets.q2, tau)
    }

    /// Critic step, then a policy step every `policy_frequency` critic steps,
    /// then target tracking every `target_frequency` critic steps.
    pub fn update<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> Result<UpdateStats> {
        let [q1_loss, q2_loss] = self.q_update(batch, rng)?;
        self.q_updates += 1;
        let policy_objective = if self.q_updates % self.config.policy_frequency as u64 == 0 {
            Some(self.policy_update(batch, rng)?)
        } else {
            None
        };
        if self.q_updates % self.config.target_frequency as u64 == 0 {
            self.target_update()?;
        }
        Ok(UpdateStats {
            q1_loss,
            q2_loss,
            policy_objective,
            alpha: self.alpha(),
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let agent: Self = serde_json::from_str(s)?;
        Self::from_nets(agent.nets.clone(), agent.actions.clone(), agent.config.clone())
            .map_err(|e| Error::Checkpoint(e.to_string()))?;
        Ok(agent)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

#[cfg(test)]
mod tests;
