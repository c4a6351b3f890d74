use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::*;
use crate::approx::OdeSystem;

fn all_presets() -> Vec<PlantParams> {
    let mut out = Vec::new();
    for kind in PlantKind::ALL {
        for role in [ParamRole::Estimated, ParamRole::Actual] {
            out.push(PlantParams::preset(kind, role));
        }
    }
    out
}

fn env(kind: PlantKind, role: ParamRole) -> Env {
    Env::new(PlantParams::preset(kind, role), EnvConfig::default_for(kind)).unwrap()
}

/// Random state near the reset state, scaled per component.
fn nearby_state(p: &PlantParams, rng: &mut impl Rng) -> Vec<f64> {
    let base = p.initial_state().unwrap();
    base.iter()
        .map(|v| {
            let spread = 0.2 * v.abs().max(0.05);
            v + rng.gen_range(-spread..spread)
        })
        .collect()
}

#[test]
fn jacobians_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for p in all_presets() {
        let cfg = EnvConfig::default_for(p.kind());
        for seam in [Seam::Hard, Seam::Smooth { width: 1.0 }] {
            let model = p.model(seam);
            let (n, k) = (model.state_dim(), model.action_dim());
            for _ in 0..20 {
                let s = nearby_state(&p, &mut rng);
                let a: Vec<f64> = (0..k)
                    .map(|i| rng.gen_range(cfg.actions.low[i]..cfg.actions.high[i]))
                    .collect();
                let t = rng.gen_range(0.0..300.0);
                let mut ds = vec![0.0; n * n];
                let mut da = vec![0.0; n * k];
                model.jacobian(&s, &a, t, &mut ds, &mut da);
                let mut fp = vec![0.0; n];
                let mut fm = vec![0.0; n];
                for j in 0..n {
                    let h = 1e-6 * s[j].abs().max(1e-3);
                    let (mut sp, mut sm) = (s.clone(), s.clone());
                    sp[j] += h;
                    sm[j] -= h;
                    model.derivative(&sp, &a, t, &mut fp);
                    model.derivative(&sm, &a, t, &mut fm);
                    for i in 0..n {
                        let fd = (fp[i] - fm[i]) / (2.0 * h);
                        let an = ds[i * n + j];
                        assert!(
                            (fd - an).abs() <= 1e-5 * an.abs().max(1.0) * 10.0,
                            "{:?} ds[{i},{j}] analytic {an} fd {fd}",
                            p.kind()
                        );
                    }
                }
                for j in 0..k {
                    let h = 1e-6 * a[j].abs().max(1.0);
                    let (mut ap, mut am) = (a.clone(), a.clone());
                    ap[j] += h;
                    am[j] -= h;
                    model.derivative(&s, &ap, t, &mut fp);
                    model.derivative(&s, &am, t, &mut fm);
                    for i in 0..n {
                        let fd = (fp[i] - fm[i]) / (2.0 * h);
                        let an = da[i * k + j];
                        assert!((fd - an).abs() <= 1e-5 * an.abs().max(1.0), "{:?} da[{i},{j}]", p.kind());
                    }
                }
            }
        }
    }
}

#[test]
fn glucose_reset_is_basal() {
    let mut e = env(PlantKind::Glucose, ParamRole::Actual);
    let obs = e.reset().unwrap();
    assert_eq!(e.state().x, vec![138.0, 0.0, 7.0]);
    assert_eq!(e.state().t, 0.0);
    assert_eq!(obs, vec![138.0, 0.0, 0.0]);
}

#[test]
fn cartpole_reset_tilt() {
    let mut e = env(PlantKind::CartPole, ParamRole::Actual);
    let obs = e.reset().unwrap();
    assert!((obs[2] - 0.10472).abs() < 1e-5);
    assert_eq!([obs[0], obs[1], obs[3]], [0.0, 0.0, 0.0]);
}

#[test]
fn biglucose_equilibrium_residual() {
    for role in [ParamRole::Estimated, ParamRole::Actual] {
        let p = PlantParams::preset(PlantKind::BiGlucose, role);
        let (x, a) = p.equilibrium().unwrap();
        let mut r = vec![0.0; 12];
        p.model(Seam::Hard).derivative(&x, &a, 1e9, &mut r);
        // meal term vanishes at large t; evaluate without it as well
        let norm = r.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(norm < 1e-10, "{role:?} residual {norm:e}");
        let g = p.glucose_reading(&x).unwrap();
        assert!(g > 100.0 && g < 400.0, "{role:?} G = {g}");
        assert!(x.iter().all(|v| v.is_finite()));
    }
}

#[test]
fn cstr_reset_holds_target_concentration() {
    let p = PlantParams::preset(PlantKind::Cstr, ParamRole::Actual);
    let (x, a) = p.equilibrium().unwrap();
    assert_eq!(x[1], 0.5);
    assert_eq!(a[1], 0.0);
    let cfg = EnvConfig::default_for(PlantKind::Cstr);
    assert!(cfg.actions.contains(&a), "holding action {a:?}");
    assert!(p.safety().is_safe(&x));
}

fn without_disturbance(p: &PlantParams) -> PlantParams {
    match p {
        PlantParams::Glucose(g) => PlantParams::Glucose(GlucoseParams { d0: 0.0, ..g.clone() }),
        PlantParams::BiGlucose(g) => PlantParams::BiGlucose(BiGlucoseParams { d_g: 0.0, ..g.clone() }),
        other => other.clone(),
    }
}

#[test]
fn equilibria_are_fixed_points() {
    for p in all_presets() {
        let p = without_disturbance(&p);
        let (x, a) = p.equilibrium().unwrap();
        let stepper = OdeStepper::new(p.dt(), 10).unwrap();
        let next = stepper.step(&p.model(Seam::Hard), &x, &a, 0.0).unwrap();
        for (u, v) in x.iter().zip(&next) {
            assert!((u - v).abs() <= 1e-8 * u.abs().max(1.0), "{:?}: {x:?} -> {next:?}", p.kind());
        }
    }
}

#[test]
fn safety_failure_and_penalty_coincide() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for p in all_presets() {
        let spec = p.safety();
        let base = p.initial_state().unwrap();
        for _ in 0..2000 {
            let mut x = base.clone();
            for b in &spec.bounds {
                let width = b.upper - b.lower;
                let v = rng.gen_range(b.lower - 0.3 * width..b.upper + 0.3 * width);
                x[b.index] = v / b.scale;
            }
            let (r, failed) = p.reward(&x);
            assert_eq!(failed, !spec.is_safe(&x));
            let mut scratch = vec![0.0; x.len()];
            let clean = match p.kind() {
                PlantKind::Glucose | PlantKind::BiGlucose => r == spec.penalty,
                _ => (r - (p.shaped_reward(&x, &mut scratch) + spec.penalty)).abs() < 1e-9,
            };
            assert_eq!(failed, clean, "{:?} at {x:?}", p.kind());
        }
        let mut nan = base.clone();
        nan[0] = f64::NAN;
        assert_eq!(p.reward(&nan), (spec.penalty, true));
    }
}

#[test]
fn glucose_far_above_band_terminates() {
    let mut e = env(PlantKind::Glucose, ParamRole::Actual);
    e.reset().unwrap();
    e.set_state(EnvState {
        x: vec![1005.0, 0.0, 7.0],
        t: 0.0,
    });
    let out = e.step(&[0.0]).unwrap();
    assert_eq!(out.reward, -1e5);
    assert!(out.done && out.failed);
    assert!(e.step(&[0.0]).is_err());
}

#[test]
fn glucose_reward_at_basal() {
    let p = PlantParams::preset(PlantKind::Glucose, ParamRole::Actual);
    let (r, failed) = p.reward(&[138.0, 0.0, 7.0]);
    assert!(!failed);
    assert!((r - magni::in_band(138.0)).abs() < 1e-15);
}

#[test]
fn cartpole_upright_reward_is_zero() {
    let p = PlantParams::preset(PlantKind::CartPole, ParamRole::Actual);
    for x in [-0.25, 0.0, 0.1, 0.25] {
        assert_eq!(p.reward(&[x, 0.3, 0.0, -0.2]), (0.0, false));
    }
    assert!(p.reward(&[0.5, 0.0, 0.0, 0.0]).0 < 0.0);
}

#[test]
fn glucose_rate_is_successive_difference() {
    for kind in [PlantKind::Glucose, PlantKind::BiGlucose] {
        let mut e = env(kind, ParamRole::Actual);
        let mut prev = e.reset().unwrap();
        assert_eq!(prev[1], 0.0);
        for k in 0..30 {
            let dose = if kind == PlantKind::Glucose { 5.0 } else { 0.01 };
            let a = vec![if k % 3 == 0 { dose } else { 0.0 }; e.params().action_dim()];
            let out = e.step(&a).unwrap();
            assert_eq!(out.observation[1], out.observation[0] - prev[0]);
            assert_eq!(out.observation[2], e.state().t);
            assert!(!out.failed);
            prev = out.observation;
        }
    }
}

#[test]
fn episode_stops_at_step_limit() {
    let mut e = env(PlantKind::Cstr, ParamRole::Actual);
    e.reset().unwrap();
    let (_, hold) = e.params().equilibrium().unwrap();
    let mut n = 0;
    loop {
        let out = e.step(&hold).unwrap();
        n += 1;
        assert!(!out.failed);
        if out.done {
            break;
        }
    }
    assert_eq!(n, 100);
}

#[test]
fn action_outside_box_is_rejected() {
    let mut e = env(PlantKind::Glucose, ParamRole::Actual);
    e.reset().unwrap();
    assert!(e.step(&[-1.0]).is_err());
    assert!(e.step(&[100.5]).is_err());
    assert!(e.step(&[100.0]).is_ok());
}

#[test]
fn glucose_substep_refinement() {
    let p = PlantParams::preset(PlantKind::Glucose, ParamRole::Actual);
    let model = p.model(Seam::Hard);
    let coarse = OdeStepper::new(10.0, 10).unwrap();
    let fine = OdeStepper::new(10.0, 1000).unwrap();
    let s0 = p.initial_state().unwrap();
    for a in [0.0, 5.0, 20.0, 50.0, 100.0] {
        let s = coarse.step(&model, &s0, &[a], 0.0).unwrap();
        let f = fine.step(&model, &s0, &[a], 0.0).unwrap();
        for (u, v) in s.iter().zip(&f) {
            assert!((u - v).abs() <= 1e-5 * v.abs(), "a={a}: {s:?} vs {f:?}");
        }
    }
}

#[test]
fn action_space_round_trip() {
    let space = ActionSpace::new(vec![5.0, -8500.0], vec![100.0, 0.0]).unwrap();
    assert_eq!(space.denormalize(&[-1.0, 1.0]), vec![5.0, 0.0]);
    assert_eq!(space.denormalize(&[1.0, -1.0]), vec![100.0, -8500.0]);
    let u = space.normalize(&[52.5, -4250.0]);
    assert_eq!(u, vec![0.0, 0.0]);
    assert_eq!(space.clip(&[200.0, 10.0]), vec![100.0, 0.0]);
    assert!(ActionSpace::new(vec![1.0], vec![1.0]).is_err());
}

#[test]
fn shaped_reward_gradient_matches_fd() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for p in all_presets() {
        for _ in 0..50 {
            let x = nearby_state(&p, &mut rng);
            let mut g = vec![0.0; x.len()];
            p.shaped_reward(&x, &mut g);
            let mut scratch = g.clone();
            for j in 0..x.len() {
                let h = 1e-6 * x[j].abs().max(1e-3);
                let (mut xp, mut xm) = (x.clone(), x.clone());
                xp[j] += h;
                xm[j] -= h;
                let fd = (p.shaped_reward(&xp, &mut scratch) - p.shaped_reward(&xm, &mut scratch)) / (2.0 * h);
                assert!((fd - g[j]).abs() <= 1e-4 * g[j].abs().max(1e-3), "{:?} d/dx{j}", p.kind());
            }
        }
    }
}

#[test]
fn observation_scaling_maps_range_to_unit_box() {
    let cfg = EnvConfig::default_for(PlantKind::Cstr);
    assert_eq!(cfg.obs_scaling.apply(&[0.0, 2.0, 50.0, 150.0]), vec![-1.0, 1.0, -1.0, 1.0]);
}
