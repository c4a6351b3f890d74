//! Hand-built critics and policies with known optima, for exercising the
//! focus update where the right answer is known in closed form.

use crate::approx::{Activation, DenseNet};
use crate::envs::ActionSpace;
use crate::error::Result;
use crate::sac::{SacAgent, SacConfig, SacNets};

/// `Q(s, u) = -sum_i |u_i - peak_i|` over normalized actions, as a one-hidden-layer ReLU net.
pub fn peaked_critic(obs_dim: usize, peak: &[f64]) -> Result<DenseNet> {
    let k = peak.len();
    let sizes = vec![obs_dim + k, 2 * k, 1];
    let mut net = DenseNet::zeros(sizes, vec![Activation::Relu, Activation::Identity])?;
    let p = net.params_mut();
    let n_in = obs_dim + k;
    // hidden 2i: relu(u_i - peak_i), hidden 2i+1: relu(peak_i - u_i)
    for i in 0..k {
        p[(2 * i) * n_in + obs_dim + i] = 1.0;
        p[(2 * i + 1) * n_in + obs_dim + i] = -1.0;
    }
    let b = 2 * k * n_in;
    for i in 0..k {
        p[b + 2 * i] = -peak[i];
        p[b + 2 * i + 1] = peak[i];
    }
    let w2 = b + 2 * k;
    for j in 0..2 * k {
        p[w2 + j] = -1.0;
    }
    Ok(net)
}

/// A constant critic.
pub fn flat_critic(obs_dim: usize, k: usize, value: f64) -> Result<DenseNet> {
    let mut net = DenseNet::zeros(vec![obs_dim + k, 2 * k, 1], vec![Activation::Relu, Activation::Identity])?;
    let last = net.params().len() - 1;
    net.params_mut()[last] = value;
    Ok(net)
}

/// A policy with state-independent pre-squash mean `atanh(mean_u)` and
/// log-std parameter `log_std_param` (very negative pins the minimum).
pub fn constant_policy(obs_dim: usize, mean_u: &[f64], log_std_param: f64, hidden: usize) -> Result<DenseNet> {
    let k = mean_u.len();
    let mut net = DenseNet::zeros(
        vec![obs_dim, hidden, 2 * k],
        vec![Activation::Relu, Activation::Identity],
    )?;
    let total = net.params().len();
    let p = net.params_mut();
    for i in 0..k {
        p[total - 2 * k + i] = mean_u[i].atanh();
        p[total - k + i] = log_std_param;
    }
    Ok(net)
}

/// An agent whose two critics both equal `critic` and whose policy is `policy`.
pub fn agent_with(critic: DenseNet, policy: DenseNet, actions: ActionSpace) -> Result<SacAgent> {
    let nets = SacNets {
        q1: critic.clone(),
        q2: critic.clone(),
        q1_target: critic.clone(),
        q2_target: critic,
        policy,
    };
    SacAgent::from_nets(nets, actions, SacConfig::default())
}
