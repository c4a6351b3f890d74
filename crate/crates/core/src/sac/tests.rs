use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::replay::{Batch, Transition};

fn space(k: usize) -> ActionSpace {
    let low: Vec<f64> = (0..k).map(|i| -1.0 - i as f64).collect();
    let high: Vec<f64> = (0..k).map(|i| 3.0 + 2.0 * i as f64).collect();
    ActionSpace::new(low, high).unwrap()
}

fn small_config(alpha: f64) -> SacConfig {
    SacConfig {
        hidden: vec![6, 5],
        entropy: EntropyMode::Fixed { alpha },
        ..SacConfig::default()
    }
}

fn random_batch<R: Rng>(rng: &mut R, n: usize, obs_dim: usize, actions: &ActionSpace) -> Batch {
    let items: Vec<Transition> = (0..n)
        .map(|_| Transition {
            obs: (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            action: (0..actions.dim())
                .map(|i| rng.gen_range(actions.low[i]..actions.high[i]))
                .collect(),
            next_obs: (0..obs_dim).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            reward: rng.gen_range(-2.0..1.0),
            done: rng.gen_bool(0.3),
            reg_action: (0..actions.dim())
                .map(|i| rng.gen_range(actions.low[i]..actions.high[i]))
                .collect(),
        })
        .collect();
    let refs: Vec<&Transition> = items.iter().collect();
    Batch::from_transitions(&refs).unwrap()
}

/// Pushes every online critic away from its target so that target-side
/// quantities are distinguishable from online ones.
fn detune_targets<R: Rng>(agent: &mut SacAgent, rng: &mut R) {
    let nets = agent.nets_mut();
    for net in [&mut nets.q1_target, &mut nets.q2_target] {
        for p in net.params_mut() {
            *p += rng.gen_range(-0.1..0.1);
        }
    }
}

/// Central difference of `f` along every parameter of a network selected by `pick`.
fn check_fd<F, P>(agent: &SacAgent, pick: P, analytic: &[f64], f: F, label: &str)
where
    F: Fn(&SacAgent) -> f64,
    P: Fn(&mut SacAgent) -> &mut DenseNet,
{
    let h = 1e-6;
    let mut probe = agent.clone();
    for i in 0..analytic.len() {
        let base = pick(&mut probe).params()[i];
        pick(&mut probe).params_mut()[i] = base + h;
        let up = f(&probe);
        pick(&mut probe).params_mut()[i] = base - h;
        let down = f(&probe);
        pick(&mut probe).params_mut()[i] = base;
        let fd = (up - down) / (2.0 * h);
        let err = (fd - analytic[i]).abs() / analytic[i].abs().max(fd.abs()).max(1e-5);
        assert!(err < 1e-4, "{label} param {i}: analytic {} fd {fd}", analytic[i]);
    }
}

#[test]
fn targets_start_equal_to_online() {
    let agent = SacAgent::new(3, space(2), small_config(0.1), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(agent.nets().q1, agent.nets().q1_target);
    assert_eq!(agent.nets().q2, agent.nets().q2_target);
    assert_ne!(agent.nets().q1, agent.nets().q2);
}

#[test]
fn zero_mean_maps_to_box_center() {
    let mut agent = SacAgent::new(2, space(2), small_config(0.1), &mut ChaCha8Rng::seed_from_u64(1)).unwrap();
    agent.nets_mut().policy.params_mut().iter_mut().for_each(|p| *p = 0.0);
    let a = agent.act(&[0.3, -0.2], true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    assert_eq!(a.action, vec![space(2).center(0), space(2).center(1)]);
}

#[test]
fn sampled_actions_stay_inside_box() {
    let actions = space(2);
    let mut agent = SacAgent::new(2, actions.clone(), small_config(0.1), &mut ChaCha8Rng::seed_from_u64(3)).unwrap();
    // saturate the mean so that tanh rounds to one
    let n = agent.nets().policy.params().len();
    agent.nets_mut().policy.params_mut()[n - 4] = 40.0;
    agent.nets_mut().policy.params_mut()[n - 3] = -40.0;
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    for _ in 0..200 {
        let a = agent.act(&[0.5, 0.5], false, &mut rng).unwrap();
        assert!(a.log_prob.is_finite());
        for i in 0..2 {
            assert!(a.action[i] > actions.low[i] && a.action[i] < actions.high[i], "{:?}", a.action);
        }
    }
}

/// Sets the final layer so that the policy emits a constant mean and
/// log-std parameter regardless of the observation.
fn constant_policy(agent: &mut SacAgent, mean: &[f64], log_std_param: &[f64]) {
    let k = agent.act_dim();
    let sizes = agent.nets().policy.layer_sizes().to_vec();
    let n_in = sizes[sizes.len() - 2];
    let total = agent.nets().policy.params().len();
    let w_start = total - (n_in * 2 * k + 2 * k);
    let p = agent.nets_mut().policy.params_mut();
    p[w_start..total - 2 * k].iter_mut().for_each(|v| *v = 0.0);
    for i in 0..k {
        p[total - 2 * k + i] = mean[i];
        p[total - k + i] = log_std_param[i];
    }
}

#[test]
fn floor_variance_keeps_stochastic_near_deterministic() {
    let actions = space(1);
    let mut agent = SacAgent::new(2, actions.clone(), small_config(0.1), &mut ChaCha8Rng::seed_from_u64(5)).unwrap();
    constant_policy(&mut agent, &[0.4], &[-40.0]);
    let obs = [0.1, 0.2];
    let (_, std) = agent.gaussian(&obs).unwrap();
    assert_eq!(std[0], (-5.0f64).exp());
    let det = agent.act(&obs, true, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let bound = 3.0 * (-5.0f64).exp() * actions.half_width(0);
    let n = 20_000;
    let close = (0..n)
        .filter(|_| (agent.act(&obs, false, &mut rng).unwrap().action[0] - det.action[0]).abs() < bound)
        .count();
    let frac = close as f64 / n as f64;
    // P(|z| < 3) = 0.9973; allow four binomial standard errors
    assert!(frac > 0.9973 - 4.0 * (0.9973f64 * 0.0027 / n as f64).sqrt(), "{frac}");
}

/// `E[g(tanh(m + s z))]` for standard normal `z`, by composite Simpson on [-12, 12].
fn gaussian_expectation<G: Fn(f64) -> f64>(m: f64, s: f64, g: G) -> f64 {
    let n = 8000;
    let (a, b) = (-12.0, 12.0);
    let h = (b - a) / n as f64;
    let f = |z: f64| g((m + s * z).tanh()) * (-0.5 * z * z).exp() / (2.0 * std::f64::consts::PI).sqrt();
    let mut acc = f(a) + f(b);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(a + i as f64 * h);
    }
    acc * h / 3.0
}

#[test]
fn sample_moments_match_squashed_pushforward() {
    let actions = space(1);
    let mut agent = SacAgent::new(1, actions.clone(), small_config(0.1), &mut ChaCha8Rng::seed_from_u64(7)).unwrap();
    constant_policy(&mut agent, &[0.6], &[0.3]);
    let obs = [0.0];
    let (mean, std) = agent.gaussian(&obs).unwrap();
    let (m, s) = (mean[0], std[0]);
    let mu = gaussian_expectation(m, s, |u| u);
    let m2 = gaussian_expectation(m, s, |u| (u - mu).powi(2));
    let m4 = gaussian_expectation(m, s, |u| (u - mu).powi(4));
    let n = 100_000;
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let draws: Vec<f64> = (0..n).map(|_| agent.act(&obs, false, &mut rng).unwrap().normalized[0]).collect();
    let emp_mean = draws.iter().sum::<f64>() / n as f64;
    let emp_var = draws.iter().map(|u| (u - emp_mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    let se_mean = (m2 / n as f64).sqrt();
    let se_var = ((m4 - m2 * m2) / n as f64).sqrt();
    assert!((emp_mean - mu).abs() < 3.0 * se_mean, "mean {emp_mean} vs {mu}");
    assert!((emp_var - m2).abs() < 3.0 * se_var, "var {emp_var} vs {m2}");
    // the physical action is the same affine image
    let a = agent.act(&obs, false, &mut ChaCha8Rng::seed_from_u64(8)).unwrap();
    assert!((a.action[0] - actions.denormalize(&[draws[0]])[0]).abs() < 1e-12);
}

#[test]
fn density_integrates_to_one() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let agent = SacAgent::new(3, space(1), small_config(0.1), &mut rng).unwrap();
    for _ in 0..4 {
        let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let n = 400_000;
        let total: f64 = (0..n)
            .map(|_| {
                let u: f64 = rng.gen_range(-1.0..1.0);
                agent.log_prob(&obs, &[u]).unwrap().exp()
            })
            .sum();
        let integral = 2.0 * total / n as f64;
        assert!((integral - 1.0).abs() < 1e-2, "{integral}");
    }
}

#[test]
fn sampled_log_prob_matches_density() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let agent = SacAgent::new(3, space(2), small_config(0.1), &mut rng).unwrap();
    for _ in 0..20 {
        let obs: Vec<f64> = (0..3).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let a = agent.act(&obs, false, &mut rng).unwrap();
        let direct = agent.log_prob(&obs, &a.normalized).unwrap();
        assert!((a.log_prob - direct).abs() < 1e-8 * direct.abs().max(1.0), "{} {direct}", a.log_prob);
    }
}

#[test]
fn terminal_target_is_reward() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let actions = space(2);
    let mut agent = SacAgent::new(3, actions.clone(), small_config(0.2), &mut rng).unwrap();
    detune_targets(&mut agent, &mut rng);
    let mut batch = random_batch(&mut rng, 16, 3, &actions);
    batch.dones.iter_mut().for_each(|d| *d = 1.0);
    let eps = agent.noise(16, &mut rng);
    let q = agent.q_loss(&batch, eps.view()).unwrap();
    assert_eq!(q.targets, batch.rewards);

    let zero_gamma = SacConfig {
        gamma: 0.0,
        ..small_config(0.2)
    };
    let agent = SacAgent::from_nets(agent.nets().clone(), actions.clone(), zero_gamma).unwrap();
    let batch = random_batch(&mut rng, 16, 3, &actions);
    let q = agent.q_loss(&batch, eps.view()).unwrap();
    assert_eq!(q.targets, batch.rewards);
}

#[test]
fn clipped_target_never_exceeds_either_critic() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let actions = space(2);
    let mut agent = SacAgent::new(3, actions.clone(), small_config(0.3), &mut rng).unwrap();
    detune_targets(&mut agent, &mut rng);
    let batch = random_batch(&mut rng, 64, 3, &actions);
    let eps = agent.noise(64, &mut rng);
    let q = agent.q_loss(&batch, eps.view()).unwrap();
    let next_u = agent.squashed_batch(batch.next_obs.view(), eps.view()).unwrap();
    for b in 0..64 {
        let logp = agent
            .log_prob(&batch.next_obs.row(b).to_vec(), &next_u.row(b).to_vec())
            .unwrap();
        for tq in &q.target_q {
            let single = batch.rewards[b] + 0.99 * (1.0 - batch.dones[b]) * (tq[b] - 0.3 * logp);
            assert!(q.targets[b] <= single + 1e-9);
        }
    }
}

#[test]
fn critic_loss_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    for fixture in 0..100 {
        let k = 1 + fixture % 2;
        let actions = space(k);
        let mut agent = SacAgent::new(3, actions.clone(), small_config(0.2), &mut rng).unwrap();
        detune_targets(&mut agent, &mut rng);
        let n = if fixture % 4 == 0 { 1 } else { 8 };
        let batch = random_batch(&mut rng, n, 3, &actions);
        let eps = agent.noise(n, &mut rng);
        let q = agent.q_loss(&batch, eps.view()).unwrap();
        let (batch, eps) = (&batch, &eps);
        let loss = |i: usize| move |a: &SacAgent| a.q_loss(batch, eps.view()).unwrap().losses[i];
        check_fd(&agent, |a| &mut a.nets_mut().q1, &q.grads[0], loss(0), "q1");
        check_fd(&agent, |a| &mut a.nets_mut().q2, &q.grads[1], loss(1), "q2");
    }
}

#[test]
fn policy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for fixture in 0..100 {
        let k = 1 + fixture % 2;
        let actions = space(k);
        let alpha = rng.gen_range(0.0..0.5);
        let agent = SacAgent::new(3, actions.clone(), small_config(alpha), &mut rng).unwrap();
        let n = if fixture % 4 == 0 { 1 } else { 8 };
        let batch = random_batch(&mut rng, n, 3, &actions);
        let eps = agent.noise(n, &mut rng);
        let p = agent.policy_objective(batch.obs.view(), eps.view()).unwrap();
        check_fd(
            &agent,
            |a| &mut a.nets_mut().policy,
            &p.grad,
            |a| a.policy_objective(batch.obs.view(), eps.view()).unwrap().objective,
            "policy",
        );
    }
}

#[test]
fn flat_critics_without_entropy_give_zero_objective() {
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let actions = space(2);
    let mut agent = SacAgent::new(3, actions.clone(), small_config(0.0), &mut rng).unwrap();
    agent.nets_mut().q1.params_mut().iter_mut().for_each(|p| *p = 0.0);
    agent.nets_mut().q2.params_mut().iter_mut().for_each(|p| *p = 0.0);
    let batch = random_batch(&mut rng, 32, 3, &actions);
    let eps = agent.noise(32, &mut rng);
    let p = agent.policy_objective(batch.obs.view(), eps.view()).unwrap();
    assert_eq!(p.objective, 0.0);
    assert!(p.grad.iter().all(|g| *g == 0.0));
}

/// Entropy of `tanh(s z)` in nats up to the constant `ln(2 pi e) / 2`, as a
/// function of `ln s`.
fn squashed_entropy(log_s: f64) -> f64 {
    log_s + gaussian_expectation(0.0, log_s.exp(), |u| (1.0 - u * u).max(1e-300).ln())
}

#[test]
fn large_alpha_maximizes_squashed_entropy() {
    // golden-section search for the entropy-maximizing log-std
    let (mut a, mut b) = (-5.0f64, 2.0f64);
    let g = 0.5 * (5.0f64.sqrt() - 1.0);
    for _ in 0..80 {
        let c = b - g * (b - a);
        let d = a + g * (b - a);
        if squashed_entropy(c) > squashed_entropy(d) {
            b = d;
        } else {
            a = c;
        }
    }
    let best = 0.5 * (a + b);
    assert!(best < 0.0 && squashed_entropy(best) > squashed_entropy(2.0) + 1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let actions = space(1);
    let config = SacConfig {
        policy_lr: 3e-3,
        ..small_config(1e3)
    };
    let mut agent = SacAgent::new(2, actions.clone(), config, &mut rng).unwrap();
    let batch = random_batch(&mut rng, 64, 2, &actions);
    let start = agent
        .policy_objective(batch.obs.view(), agent.noise(64, &mut rng).view())
        .unwrap()
        .mean_log_std;
    for _ in 0..1500 {
        agent.policy_update(&batch, &mut rng).unwrap();
    }
    let eps = agent.noise(64, &mut rng);
    let end = agent.policy_objective(batch.obs.view(), eps.view()).unwrap().mean_log_std;
    assert!(end > start, "log-std should rise: {start} -> {end}");
    assert!((end - best).abs() < 0.1, "log-std {end}, squashed-entropy optimum {best}");
}

#[test]
fn target_tracking_is_geometric() {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut agent = SacAgent::new(2, space(1), small_config(0.1), &mut rng).unwrap();
    let before = agent.nets().q1_target.clone();
    agent.target_update().unwrap();
    for (a, b) in before.params().iter().zip(agent.nets().q1_target.params()) {
        assert!((a - b).abs() <= 1e-15 * a.abs().max(1e-300), "fixed point moved");
    }
    detune_targets(&mut agent, &mut rng);
    let online = agent.nets().q1.params().to_vec();
    let gap0: Vec<f64> = agent
        .nets()
        .q1_target
        .params()
        .iter()
        .zip(&online)
        .map(|(t, o)| t - o)
        .collect();
    agent.target_update().unwrap();
    for ((t, o), g) in agent.nets().q1_target.params().iter().zip(&online).zip(&gap0) {
        assert!(((t - o) - 0.995 * g).abs() < 1e-14);
    }
    for _ in 1..400 {
        agent.target_update().unwrap();
    }
    let ratio = 0.995f64.powi(400);
    for ((t, o), g) in agent.nets().q1_target.params().iter().zip(&online).zip(&gap0) {
        assert!(((t - o) - ratio * g).abs() < 1e-12, "{} vs {}", t - o, ratio * g);
    }
}

fn update_run(seed: u64, steps: usize) -> SacAgent {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let actions = space(2);
    let config = SacConfig {
        hidden: vec![16, 16],
        batch_size: 32,
        ..SacConfig::default()
    };
    let mut agent = SacAgent::new(3, actions.clone(), config, &mut rng).unwrap();
    for _ in 0..steps {
        let batch = random_batch(&mut rng, 32, 3, &actions);
        agent.update(&batch, &mut rng).unwrap();
    }
    agent
}

#[test]
fn update_cadence() {
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let actions = space(2);
    let config = SacConfig {
        hidden: vec![8],
        ..SacConfig::default()
    };
    let mut agent = SacAgent::new(3, actions.clone(), config, &mut rng).unwrap();
    for step in 1..=6u64 {
        let policy = agent.nets().policy.clone();
        let target = agent.nets().q1_target.clone();
        let alpha = agent.alpha();
        let batch = random_batch(&mut rng, 16, 3, &actions);
        let stats = agent.update(&batch, &mut rng).unwrap();
        assert_eq!(agent.q_updates(), step);
        assert_eq!(stats.policy_objective.is_some(), step % 2 == 0);
        assert_eq!(agent.nets().policy != policy, step % 2 == 0);
        assert_eq!(agent.alpha() != alpha, step % 2 == 0);
        assert_ne!(agent.nets().q1_target, target);
    }
}

#[test]
fn updates_are_deterministic_and_checkpoint_round_trips() {
    let a = update_run(19, 12);
    let b = update_run(19, 12);
    assert_eq!(a, b);
    let json = a.to_json().unwrap();
    let back = SacAgent::from_json(&json).unwrap();
    assert_eq!(back, a);
    for (x, y) in back.nets().policy.params().iter().zip(a.nets().policy.params()) {
        assert_eq!(x.to_bits(), y.to_bits());
    }
    // continuing from the restored agent matches continuing from the original
    let mut rng1 = ChaCha8Rng::seed_from_u64(20);
    let mut rng2 = ChaCha8Rng::seed_from_u64(20);
    let (mut a, mut back) = (a, back);
    let actions = space(2);
    for _ in 0..3 {
        let batch = random_batch(&mut rng1, 32, 3, &actions);
        let _ = random_batch(&mut rng2, 32, 3, &actions);
        a.update(&batch, &mut rng1).unwrap();
        back.update(&batch, &mut rng2).unwrap();
    }
    assert_eq!(a, back);
}

#[test]
fn nan_reward_aborts_without_touching_parameters() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let actions = space(1);
    let mut agent = SacAgent::new(2, actions.clone(), small_config(0.1), &mut rng).unwrap();
    let mut batch = random_batch(&mut rng, 4, 2, &actions);
    batch.rewards[2] = f64::NAN;
    let before = agent.clone();
    assert!(matches!(agent.update(&batch, &mut rng), Err(Error::NonFinite { .. })));
    assert_eq!(agent.nets(), before.nets());
}

#[test]
fn mismatched_networks_are_rejected() {
    let mut rng = ChaCha8Rng::seed_from_u64(22);
    let mut nets = SacNets::new(3, 2, &[4], &mut rng).unwrap();
    nets.q1_target = DenseNet::mlp(5, &[3], 1, Activation::Relu, Activation::Identity, &mut rng).unwrap();
    assert!(SacAgent::from_nets(nets, space(2), small_config(0.1)).is_err());
    assert!(SacConfig {
        tau: 0.0,
        ..SacConfig::default()
    }
    .validate()
    .is_err());
}
