//! Monte Carlo check that blending a fixed regularizer action with a
//! Gaussian action yields `N(beta a_reg + (1 - beta) mean, (1 - beta)^2 Sigma)`,
//! and that the blended mean minimizes
//! `|a - mean|^2_Sigma + lambda |a - a_reg|^2_Sigma` with `lambda = beta / (1 - beta)`.

use rand::Rng;
use rand_distr::StandardNormal;

use super::blend;
use crate::envs::ActionSpace;
use crate::error::{check_dim, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct Lemma1Fixture {
    pub beta: f64,
    pub a_reg: Vec<f64>,
    pub mean_rl: Vec<f64>,
    /// Diagonal of Sigma.
    pub variance: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Lemma1Report {
    pub samples: usize,
    pub empirical_mean: Vec<f64>,
    pub empirical_variance: Vec<f64>,
    pub expected_mean: Vec<f64>,
    pub expected_variance: Vec<f64>,
    /// Largest `|empirical - expected| / standard error` over dimensions.
    pub mean_z: f64,
    pub variance_z: f64,
    pub minimizer: Vec<f64>,
    /// Largest `|minimizer - empirical mean|` over dimensions.
    pub minimizer_gap: f64,
}

impl Lemma1Report {
    pub fn moments_pass(&self, z_limit: f64) -> bool {
        self.mean_z <= z_limit && self.variance_z <= z_limit
    }
}

impl Lemma1Fixture {
    fn validate(&self) -> Result<()> {
        let k = self.a_reg.len();
        check_dim("lemma mean", k, self.mean_rl.len())?;
        check_dim("lemma variance", k, self.variance.len())?;
        if !(self.beta > 0.0 && self.beta < 1.0) || self.variance.iter().any(|v| !(*v > 0.0)) {
            return Err(Error::Config("lemma fixture needs beta in (0, 1) and positive variances".into()));
        }
        Ok(())
    }
}

/// Gradient descent on the regularized objective, independent of the
/// closed form.
pub fn regularized_minimizer(f: &Lemma1Fixture) -> Vec<f64> {
    let lambda = f.beta / (1.0 - f.beta);
    let mut a = f.mean_rl.clone();
    let max_var = f.variance.iter().cloned().fold(0.0, f64::max);
    let min_var = f.variance.iter().cloned().fold(f64::INFINITY, f64::min);
    // step below 2 / L for the curvature 2 (1 + lambda) / min_var
    let step = 0.9 * min_var / (2.0 * (1.0 + lambda));
    for _ in 0..1_000_000 {
        let grad: Vec<f64> = (0..a.len())
            .map(|i| 2.0 * ((a[i] - f.mean_rl[i]) + lambda * (a[i] - f.a_reg[i])) / f.variance[i])
            .collect();
        let size = grad.iter().map(|g| g.abs()).fold(0.0, f64::max);
        if size < 1e-13 / max_var {
            break;
        }
        for i in 0..a.len() {
            a[i] -= step * grad[i];
        }
    }
    a
}

/// Draws `samples` blended actions with `a_rl ~ N(mean_rl, Sigma)` inside a
/// box wide enough that no clipping occurs.
pub fn lemma1_check<R: Rng + ?Sized>(f: &Lemma1Fixture, samples: usize, rng: &mut R) -> Result<Lemma1Report> {
    f.validate()?;
    if samples < 2 {
        return Err(Error::Config("lemma check needs at least two samples".into()));
    }
    let k = f.a_reg.len();
    let reach = f
        .a_reg
        .iter()
        .chain(&f.mean_rl)
        .map(|v| v.abs())
        .fold(0.0, f64::max)
        + 100.0 * f.variance.iter().cloned().fold(0.0, f64::max).sqrt();
    let space = ActionSpace::new(vec![-reach; k], vec![reach; k])?;
    let beta = vec![f.beta; k];
    // Welford running moments
    let mut mean = vec![0.0; k];
    let mut m2 = vec![0.0; k];
    for count in 1..=samples {
        let a_rl: Vec<f64> = (0..k)
            .map(|i| f.mean_rl[i] + f.variance[i].sqrt() * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let a = blend(&beta, &f.a_reg, &a_rl, &space);
        for i in 0..k {
            let delta = a[i] - mean[i];
            mean[i] += delta / count as f64;
            m2[i] += delta * (a[i] - mean[i]);
        }
    }
    let n = samples as f64;
    let empirical_mean = mean;
    let empirical_variance: Vec<f64> = m2.iter().map(|s| s / (n - 1.0)).collect();
    let expected_mean: Vec<f64> = (0..k)
        .map(|i| f.beta * f.a_reg[i] + (1.0 - f.beta) * f.mean_rl[i])
        .collect();
    let expected_variance: Vec<f64> = f.variance.iter().map(|v| (1.0 - f.beta).powi(2) * v).collect();
    let mut mean_z = 0.0f64;
    let mut variance_z = 0.0f64;
    for i in 0..k {
        let se_mean = (expected_variance[i] / n).sqrt();
        // sampling variance of a Gaussian sample variance
        let se_var = expected_variance[i] * (2.0 / (n - 1.0)).sqrt();
        mean_z = mean_z.max((empirical_mean[i] - expected_mean[i]).abs() / se_mean);
        variance_z = variance_z.max((empirical_variance[i] - expected_variance[i]).abs() / se_var);
    }
    let minimizer = regularized_minimizer(f);
    let minimizer_gap = (0..k)
        .map(|i| (minimizer[i] - empirical_mean[i]).abs())
        .fold(0.0, f64::max);
    Ok(Lemma1Report {
        samples,
        empirical_mean,
        empirical_variance,
        expected_mean,
        expected_variance,
        mean_z,
        variance_z,
        minimizer,
        minimizer_gap,
    })
}
