//! Scalar optimization targets from reward distributions.
//!
//! * `std` penalty: `mean − k·√Λ`
//! * `var` penalty: `mean − k·Λ`
//!
//! Ensembles of independent Gaussian rewards are fused into the Gaussian of
//! their mean, `N((1/n)Σ r_i, (1/n²)Σ Λ_i)`, and penalized the same way.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::laplace::RewardDistribution;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PenaltyKind {
    None,
    Std,
    Var,
}

impl fmt::Display for PenaltyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PenaltyKind::None => "none",
            PenaltyKind::Std => "std",
            PenaltyKind::Var => "var",
        })
    }
}

impl FromStr for PenaltyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(PenaltyKind::None),
            "std" => Ok(PenaltyKind::Std),
            "var" => Ok(PenaltyKind::Var),
            other => Err(Error::Usage(format!(
                "unknown penalty `{other}` (expected none, std or var)"
            ))),
        }
    }
}

/// `{kind, k}` as it appears in config files.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Penalty {
    pub kind: PenaltyKind,
    pub k: f64,
}

impl Penalty {
    pub fn new(kind: PenaltyKind, k: f64) -> Result<Self> {
        if !k.is_finite() || k < 0.0 {
            return Err(Error::Usage(format!(
                "penalty coefficient must be finite and >= 0, got {k}"
            )));
        }
        Ok(Penalty { kind, k })
    }

    pub const NONE: Penalty = Penalty {
        kind: PenaltyKind::None,
        k: 0.0,
    };

    fn validate(&self) -> Result<()> {
        Penalty::new(self.kind, self.k).map(|_| ())
    }

    /// Amount subtracted from the mean for a reward of variance `variance`.
    fn amount(&self, variance: f64) -> f64 {
        match self.kind {
            PenaltyKind::None => 0.0,
            PenaltyKind::Std => self.k * variance.sqrt(),
            PenaltyKind::Var => self.k * variance,
        }
    }
}

pub fn penalized_reward(dist: &RewardDistribution, penalty: Penalty) -> Result<f64> {
    dist.validate()?;
    penalty.validate()?;
    Ok(dist.mean - penalty.amount(dist.variance))
}

/// Gaussian of the member mean, assuming independent members.
pub fn ensemble_distribution(members: &[RewardDistribution]) -> Result<RewardDistribution> {
    if members.is_empty() {
        return Err(Error::Usage("ensemble needs at least one member".into()));
    }
    for m in members {
        m.validate()?;
    }
    let n = members.len() as f64;
    let mean = members.iter().map(|m| m.mean).sum::<f64>() / n;
    let variance = members.iter().map(|m| m.variance).sum::<f64>() / (n * n);
    RewardDistribution::new(mean, variance)
}

/// `mean − (k/n)√(ΣΛ_i)` for `std`, `mean − (k/n²)ΣΛ_i` for `var`.
pub fn ensemble_penalized_reward(members: &[RewardDistribution], penalty: Penalty) -> Result<f64> {
    if members.is_empty() {
        return Err(Error::Usage("ensemble needs at least one member".into()));
    }
    penalty.validate()?;
    for m in members {
        m.validate()?;
    }
    let n = members.len() as f64;
    let mean = members.iter().map(|m| m.mean).sum::<f64>() / n;
    let total_var = members.iter().map(|m| m.variance).sum::<f64>();
    Ok(match penalty.kind {
        PenaltyKind::None => mean,
        PenaltyKind::Std => mean - penalty.k / n * total_var.sqrt(),
        PenaltyKind::Var => mean - penalty.k / (n * n) * total_var,
    })
}

/// Plain ensemble average of member MAP rewards.
pub fn mean_ensemble_reward(member_means: &[f64]) -> Result<f64> {
    if member_means.is_empty() {
        return Err(Error::Usage("ensemble needs at least one member".into()));
    }
    Ok(member_means.iter().sum::<f64>() / member_means.len() as f64)
}
