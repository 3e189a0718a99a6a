//! Weighted group-lasso penalties on first-layer columns.

use ndarray::{ArrayView1, ArrayViewMut1};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{l2_norm, NetworkParams};

/// Per-group penalty weight. `Frozen` pins the group to the zero vector.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupWeight {
    Weight(f64),
    Frozen,
}

impl GroupWeight {
    pub fn is_frozen(self) -> bool {
        matches!(self, GroupWeight::Frozen)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PenaltySpec {
    pub group_weights: Vec<GroupWeight>,
    pub lambda: f64,
}

impl PenaltySpec {
    /// Plain group lasso: every weight is 1.
    pub fn group_lasso(n_groups: usize, lambda: f64) -> Self {
        PenaltySpec {
            group_weights: vec![GroupWeight::Weight(1.0); n_groups],
            lambda,
        }
    }

    pub fn new(group_weights: Vec<GroupWeight>, lambda: f64) -> Result<Self> {
        let spec = PenaltySpec {
            group_weights,
            lambda,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lambda must be a nonnegative finite number, got {}",
                self.lambda
            )));
        }
        for (k, w) in self.group_weights.iter().enumerate() {
            if let GroupWeight::Weight(w) = w {
                if !(*w >= 0.0 && w.is_finite()) {
                    return Err(Error::InvalidConfig(format!("group {k} has weight {w}")));
                }
            }
        }
        Ok(())
    }

    pub fn n_groups(&self) -> usize {
        self.group_weights.len()
    }

    pub fn frozen(&self) -> impl Iterator<Item = usize> + '_ {
        self.group_weights
            .iter()
            .enumerate()
            .filter(|(_, w)| w.is_frozen())
            .map(|(k, _)| k)
    }
}

/// `lambda * sum_k w_k ||column_k||`; frozen groups contribute nothing.
pub fn penalty_value(spec: &PenaltySpec, params: &NetworkParams) -> Result<f64> {
    if spec.n_groups() != params.n_groups() {
        return Err(Error::LengthMismatch {
            left: spec.n_groups(),
            right: params.n_groups(),
        });
    }
    let mut sum = 0.0;
    for (k, w) in spec.group_weights.iter().enumerate() {
        let norm = params.group_norm(k);
        match w {
            GroupWeight::Frozen if norm != 0.0 => {
                return Err(Error::FrozenNonzero { group: k });
            }
            GroupWeight::Frozen => {}
            GroupWeight::Weight(w) => sum += w * norm,
        }
    }
    Ok(spec.lambda * sum)
}

/// Same as [`penalty_value`] without the frozen-column check; used inside
/// the optimizer where frozen columns are zero by construction.
pub(crate) fn penalty_unchecked(spec: &PenaltySpec, params: &NetworkParams) -> f64 {
    let sum: f64 = spec
        .group_weights
        .iter()
        .enumerate()
        .map(|(k, w)| match w {
            GroupWeight::Weight(w) => w * params.group_norm(k),
            GroupWeight::Frozen => 0.0,
        })
        .sum();
    spec.lambda * sum
}

/// Adaptive weights `||base column k||^-gamma` from a fitted base network.
/// Groups that are exactly zero in the base become [`GroupWeight::Frozen`].
pub fn adaptive_weights(base: &NetworkParams, gamma: f64) -> Result<Vec<GroupWeight>> {
    if !(gamma > 0.0 && gamma.is_finite()) {
        return Err(Error::InvalidGamma(gamma));
    }
    Ok(adaptive_weights_unchecked(base, gamma))
}

pub(crate) fn adaptive_weights_unchecked(base: &NetworkParams, gamma: f64) -> Vec<GroupWeight> {
    base.group_norms()
        .into_iter()
        .map(|norm| {
            if norm == 0.0 {
                GroupWeight::Frozen
            } else {
                GroupWeight::Weight(norm.powf(-gamma))
            }
        })
        .collect()
}

/// Block soft-thresholding: the minimizer of
/// `0.5 ||z - column||^2 + threshold ||z||`.
pub fn prox_group(column: ArrayView1<'_, f64>, threshold: f64) -> Result<ndarray::Array1<f64>> {
    if !(threshold >= 0.0) {
        return Err(Error::NegativeThreshold(threshold));
    }
    let mut out = column.to_owned();
    prox_group_inplace(out.view_mut(), threshold);
    Ok(out)
}

/// In-place block soft-threshold. Groups with norm at or below the
/// threshold become exact zeros.
pub(crate) fn prox_group_inplace(mut column: ArrayViewMut1<'_, f64>, threshold: f64) {
    let norm = l2_norm(column.view());
    if norm <= threshold {
        column.fill(0.0);
    } else if threshold > 0.0 {
        let scale = 1.0 - threshold / norm;
        column.mapv_inplace(|v| v * scale);
    }
}
