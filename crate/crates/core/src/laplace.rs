//! Post-hoc linearized Laplace approximation over trainable parameters.
//!
//! The posterior is `N(θ_MAP, S)` with
//! `S⁻¹ = Σ_i σ(d_i)(1 − σ(d_i)) g_i g_iᵀ + λI`, where `d_i` is the reward
//! difference of example `i` and `g_i` the difference of the two score
//! Jacobians, all at `θ_MAP`. This is the generalized Gauss-Newton curvature
//! of the Bradley-Terry likelihood in difference space plus the Gaussian
//! prior. Predictions linearize the network around `θ_MAP`, giving a
//! Gaussian reward with variance `jᵀ S j`.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::numerics::{sigmoid_unchecked, CholeskyFactor, DenseMatrix};
use crate::reward_model::{check_prior_precision, dataset_fingerprint, ParamVector, PreferenceExample, RewardNet};
use crate::{Error, Result};

/// Examples per partial precision block. Blocks are summed in index order,
/// so the result does not depend on thread scheduling.
const ACCUMULATION_BLOCK: usize = 64;

/// Gaussian belief over a single reward.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardDistribution {
    pub mean: f64,
    pub variance: f64,
}

impl RewardDistribution {
    pub fn new(mean: f64, variance: f64) -> Result<Self> {
        let dist = RewardDistribution { mean, variance };
        dist.validate()?;
        Ok(dist)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.mean.is_finite() || !self.variance.is_finite() {
            return Err(Error::Invariant(format!(
                "reward distribution must be finite (mean {}, variance {})",
                self.mean, self.variance
            )));
        }
        if self.variance < 0.0 {
            return Err(Error::Invariant(format!("negative variance {}", self.variance)));
        }
        Ok(())
    }

    pub fn std_dev(&self) -> f64 {
        self.variance.sqrt()
    }
}

/// Laplace posterior `N(theta_map, covariance)` over a network's trainable
/// parameters.
#[derive(Debug, Clone)]
pub struct PosteriorState {
    theta_map: ParamVector,
    covariance: DenseMatrix,
    prior_precision: f64,
    dataset_fingerprint: String,
    factor: CholeskyFactor,
}

impl PosteriorState {
    /// Validates shapes and that the covariance is symmetric positive definite.
    pub fn from_parts(
        theta_map: ParamVector,
        covariance: DenseMatrix,
        prior_precision: f64,
        dataset_fingerprint: String,
    ) -> Result<Self> {
        check_prior_precision(prior_precision, false)?;
        let p = theta_map.len();
        if covariance.rows() != p || covariance.cols() != p {
            return Err(Error::Shape(format!(
                "covariance is {}x{} for {p} parameters",
                covariance.rows(),
                covariance.cols()
            )));
        }
        let factor = CholeskyFactor::new(&covariance)?;
        Ok(PosteriorState {
            theta_map,
            covariance,
            prior_precision,
            dataset_fingerprint,
            factor,
        })
    }

    pub fn theta_map(&self) -> &ParamVector {
        &self.theta_map
    }

    pub fn covariance(&self) -> &DenseMatrix {
        &self.covariance
    }

    /// Lower Cholesky factor of the covariance.
    pub fn covariance_factor(&self) -> &DenseMatrix {
        self.factor.lower()
    }

    pub fn prior_precision(&self) -> f64 {
        self.prior_precision
    }

    pub fn dataset_fingerprint(&self) -> &str {
        &self.dataset_fingerprint
    }

    pub fn param_count(&self) -> usize {
        self.theta_map.len()
    }

    /// `jᵀ S j`, non-negative by construction.
    pub fn variance_along(&self, jacobian: &[f64]) -> Result<f64> {
        if jacobian.len() != self.param_count() {
            return Err(Error::Shape(format!(
                "Jacobian of length {} for a posterior over {} parameters",
                jacobian.len(),
                self.param_count()
            )));
        }
        Ok(self.factor.quadratic_form(jacobian))
    }

    /// Errors unless `net`'s trainable parameters are bitwise `theta_map`.
    pub fn check_matches(&self, net: &RewardNet) -> Result<()> {
        let theta = net.flatten();
        if theta.len() != self.theta_map.len() {
            return Err(Error::StalePosterior(format!(
                "network has {} trainable parameters, posterior has {}",
                theta.len(),
                self.theta_map.len()
            )));
        }
        let same = theta
            .iter()
            .zip(self.theta_map.iter())
            .all(|(a, b)| a.to_bits() == b.to_bits());
        if same {
            Ok(())
        } else {
            Err(Error::StalePosterior(
                "network parameters differ from the posterior's MAP estimate".into(),
            ))
        }
    }
}

/// `∂ r_θ(x) / ∂θ` over trainable parameters, in flattening order.
pub fn score_jacobian(net: &RewardNet, x: &[f64]) -> Result<ParamVector> {
    net.value_and_gradient(x).map(|(_, g)| g)
}

fn accumulate_block(net: &RewardNet, block: &[PreferenceExample], p: usize) -> Result<DenseMatrix> {
    let mut m = DenseMatrix::zeros(p, p);
    for ex in block {
        let (rw, jw) = net.value_and_gradient(&ex.winner)?;
        let (rl, jl) = net.value_and_gradient(&ex.loser)?;
        let s = sigmoid_unchecked(rw - rl);
        let g: Vec<f64> = jw.iter().zip(jl.iter()).map(|(a, b)| a - b).collect();
        m.add_outer(s * (1.0 - s), &g)?;
    }
    Ok(m)
}

fn pairwise_matrix_sum(mut parts: Vec<DenseMatrix>, p: usize) -> DenseMatrix {
    if parts.is_empty() {
        return DenseMatrix::zeros(p, p);
    }
    while parts.len() > 1 {
        let mut next = Vec::with_capacity(parts.len().div_ceil(2));
        let mut it = parts.into_iter();
        while let Some(mut a) = it.next() {
            if let Some(b) = it.next() {
                a.as_mut_slice().iter_mut().zip(b.as_slice()).for_each(|(x, y)| *x += y);
            }
            next.push(a);
        }
        parts = next;
    }
    parts.pop().unwrap()
}

/// Posterior precision `Σ σ(d)(1 − σ(d)) g gᵀ + λI` at the network's current
/// parameters.
pub fn ggn_precision(net: &RewardNet, data: &[PreferenceExample], prior_precision: f64) -> Result<DenseMatrix> {
    check_prior_precision(prior_precision, false)?;
    let p = net.param_count();
    let parts = data
        .par_chunks(ACCUMULATION_BLOCK)
        .map(|block| accumulate_block(net, block, p))
        .collect::<Result<Vec<_>>>()?;
    let mut precision = pairwise_matrix_sum(parts, p);
    precision.add_diagonal(prior_precision);
    if !precision.is_finite() {
        return Err(Error::NonFinite {
            context: "GGN precision".into(),
        });
    }
    Ok(precision)
}

/// Fits the linearized Laplace posterior at `net`'s current parameters,
/// which are taken as the MAP estimate for `data` under prior precision
/// `prior_precision`.
pub fn fit_ggn_posterior(net: &RewardNet, data: &[PreferenceExample], prior_precision: f64) -> Result<PosteriorState> {
    let precision = ggn_precision(net, data, prior_precision)?;
    let factor = CholeskyFactor::new(&precision).map_err(|e| match e {
        Error::NotPositiveDefinite { pivot, value, .. } => {
            let diag: Vec<f64> = (0..precision.rows()).map(|i| precision[(i, i)]).collect();
            let min = diag.iter().copied().fold(f64::INFINITY, f64::min);
            let max = diag.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            Error::NotPositiveDefinite {
                pivot,
                value,
                diagnostics: format!(
                    " (precision diagonal in [{min:e}, {max:e}], λ = {prior_precision:e}, {} examples)",
                    data.len()
                ),
            }
        }
        other => other,
    })?;
    let covariance = factor.inverse();
    PosteriorState::from_parts(net.flatten(), covariance, prior_precision, dataset_fingerprint(data))
}

/// Linearized predictive reward: mean `r_MAP(x)`, variance `jᵀ S j`.
pub fn predictive_reward(post: &PosteriorState, net: &RewardNet, x: &[f64]) -> Result<RewardDistribution> {
    post.check_matches(net)?;
    let (mean, jac) = net.value_and_gradient(x)?;
    let variance = post.variance_along(&jac)?;
    RewardDistribution::new(mean, variance)
}
