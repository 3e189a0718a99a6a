//! The two selection procedures and their regularization-constant search.
//!
//! * GL: one weighted-by-one group lasso fit.
//! * GL+AGL: a GL fit, then a fresh fit penalized by adaptive weights
//!   `||GL column k||^-gamma`, where groups that GL zeroed stay frozen at 0.
//!
//! Constants are chosen by average held-out MSE over random splits. The split
//! set is drawn once per search and shared by every grid point. For GL+AGL
//! the base `lambda` is picked by the GL search first and `zeta` is swept
//! afterwards, reusing the GL fits at the chosen `lambda` as stage 1.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::data::{split_indices, Dataset};
use crate::error::{Error, Result};
use crate::net::{empirical_risk, NetworkArch, NetworkParams};
use crate::optimizer::{fit, initialize_params, FitResult, OptConfig};
use crate::par;
use crate::penalty::{adaptive_weights, PenaltySpec};
use crate::rng::derive_seed;

const TAG_SPLIT: u64 = 0x5350_4c49;
const TAG_STAGE2: u64 = 0x4147_4c32;

pub const DEFAULT_GRID: [f64; 7] = [0.001, 0.01, 0.05, 0.1, 0.5, 1.0, 2.0];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Method {
    #[serde(rename = "GL")]
    Gl,
    #[serde(rename = "GL_AGL")]
    GlAgl,
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Method::Gl => "GL",
            Method::GlAgl => "GL_AGL",
        })
    }
}

impl FromStr for Method {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "gl" => Ok(Method::Gl),
            "gl_agl" | "glagl" => Ok(Method::GlAgl),
            _ => Err(Error::InvalidConfig(format!("unknown method `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectConfig {
    pub gamma: f64,
    pub lambda_grid: Vec<f64>,
    pub zeta_grid: Vec<f64>,
    pub n_splits: usize,
    pub test_fraction: f64,
    pub opt: OptConfig,
    /// Seeds the split draws.
    pub seed: u64,
    /// Worker threads for grid fits.
    pub workers: usize,
}

impl Default for SelectConfig {
    fn default() -> Self {
        SelectConfig {
            gamma: 2.0,
            lambda_grid: DEFAULT_GRID.to_vec(),
            zeta_grid: DEFAULT_GRID.to_vec(),
            n_splits: 3,
            test_fraction: 1.0 / 3.0,
            opt: OptConfig::default(),
            seed: 0,
            workers: 1,
        }
    }
}

fn validate_grid(name: &str, grid: &[f64]) -> Result<()> {
    if grid.is_empty() {
        return Err(Error::InvalidConfig(format!("{name} is empty")));
    }
    if grid.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
        return Err(Error::InvalidConfig(format!(
            "{name} must contain positive finite values"
        )));
    }
    if grid.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidConfig(format!(
            "{name} must be strictly increasing"
        )));
    }
    Ok(())
}

impl SelectConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(Error::InvalidGamma(self.gamma));
        }
        validate_grid("lambda_grid", &self.lambda_grid)?;
        validate_grid("zeta_grid", &self.zeta_grid)?;
        if self.n_splits == 0 {
            return Err(Error::InvalidConfig("n_splits must be at least 1".into()));
        }
        if !(self.test_fraction > 0.0 && self.test_fraction < 1.0) {
            return Err(Error::InvalidConfig(format!(
                "test_fraction {} outside (0, 1)",
                self.test_fraction
            )));
        }
        self.opt.validate()
    }

    fn stage2_seed(&self) -> u64 {
        derive_seed(self.opt.seed, TAG_STAGE2, 0)
    }
}

/// Both stages of a GL+AGL fit.
#[derive(Debug, Clone, PartialEq)]
pub struct TwoStageFit {
    pub base: FitResult,
    pub adaptive: FitResult,
}

/// Group lasso with unit weights, started from
/// `initialize_params(arch, config.opt.seed)`.
pub fn fit_group_lasso(
    arch: &NetworkArch,
    data: &Dataset,
    lambda: f64,
    config: &SelectConfig,
) -> Result<FitResult> {
    let spec = PenaltySpec::group_lasso(arch.n_inputs(), lambda);
    spec.validate()?;
    let init = initialize_params(arch, config.opt.seed, None);
    fit(arch, data, &spec, &config.opt, Some(init))
}

/// Second stage of GL+AGL given a fitted base network.
pub fn fit_adaptive_stage(
    arch: &NetworkArch,
    data: &Dataset,
    base: &NetworkParams,
    zeta: f64,
    config: &SelectConfig,
) -> Result<FitResult> {
    let weights = adaptive_weights(base, config.gamma)?;
    let spec = PenaltySpec::new(weights, zeta)?;
    let init = initialize_params(arch, config.stage2_seed(), Some(&spec));
    fit(arch, data, &spec, &config.opt, Some(init))
}

pub fn fit_gl_agl(
    arch: &NetworkArch,
    data: &Dataset,
    lambda: f64,
    zeta: f64,
    config: &SelectConfig,
) -> Result<TwoStageFit> {
    let base = fit_group_lasso(arch, data, lambda, config)?;
    let adaptive = fit_adaptive_stage(arch, data, &base.params, zeta, config)?;
    Ok(TwoStageFit { base, adaptive })
}

/// Exact-zero support of a fit; no threshold is applied.
pub fn selected_support(fit: &FitResult) -> Vec<bool> {
    fit.support.clone()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    pub value: f64,
    /// Mean held-out MSE; infinite when a fit failed.
    pub mean_test_error: f64,
    pub split_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearch {
    pub chosen: f64,
    pub table: Vec<GridPoint>,
    /// Largest per-epoch objective rise over every successful fit of the
    /// sweep (see [`FitResult::max_objective_increase`]).
    pub max_objective_increase: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Selection {
    pub method: Method,
    pub lambda: GridSearch,
    pub zeta: Option<GridSearch>,
}

/// Lowest mean error wins; ties go to the larger constant.
fn choose(grid: &[f64], errors: &[Vec<f64>], max_objective_increase: f64) -> Result<GridSearch> {
    let table: Vec<GridPoint> = grid
        .iter()
        .zip(errors)
        .map(|(&value, errs)| {
            let mean = errs.iter().sum::<f64>() / errs.len() as f64;
            GridPoint {
                value,
                mean_test_error: if mean.is_nan() { f64::INFINITY } else { mean },
                split_errors: errs.clone(),
            }
        })
        .collect();
    let mut best: Option<&GridPoint> = None;
    for point in &table {
        if best.is_none_or(|b| point.mean_test_error <= b.mean_test_error) {
            best = Some(point);
        }
    }
    let best = best.expect("grid validated nonempty");
    if !best.mean_test_error.is_finite() {
        return Err(Error::Selection("every fit on the grid failed".into()));
    }
    Ok(GridSearch {
        chosen: best.value,
        table,
        max_objective_increase,
    })
}

struct SplitData {
    train: Dataset,
    test: Dataset,
}

fn draw_splits(data: &Dataset, config: &SelectConfig) -> Result<Vec<SplitData>> {
    (0..config.n_splits)
        .map(|s| {
            let seed = derive_seed(config.seed, TAG_SPLIT, s as u64);
            let (train_idx, test_idx) =
                split_indices(data.n_samples(), config.test_fraction, seed)?;
            Ok(SplitData {
                train: data.select_rows(&train_idx),
                test: data.select_rows(&test_idx),
            })
        })
        .collect()
}

fn max_increase<'a>(fits: impl Iterator<Item = &'a FitResult>) -> f64 {
    fits.map(FitResult::max_objective_increase)
        .fold(f64::NEG_INFINITY, f64::max)
}

fn held_out_error(arch: &NetworkArch, fit: &Result<FitResult>, test: &Dataset) -> f64 {
    match fit {
        Ok(f) => empirical_risk(arch, &f.params, test).unwrap_or(f64::INFINITY),
        Err(_) => f64::INFINITY,
    }
}

/// Picks the regularization constant(s) for `method` by average held-out
/// error over `config.n_splits` random splits.
pub fn grid_select(
    arch: &NetworkArch,
    data: &Dataset,
    method: Method,
    config: &SelectConfig,
) -> Result<Selection> {
    config.validate()?;
    arch.validate()?;
    if data.n_features() != arch.n_inputs() {
        return Err(Error::FeatureCount {
            expected: arch.n_inputs(),
            got: data.n_features(),
        });
    }
    let splits = draw_splits(data, config)?;
    let n_splits = splits.len();

    let lambdas = &config.lambda_grid;
    let gl_fits: Vec<Result<FitResult>> =
        par::map_indexed(lambdas.len() * n_splits, config.workers, |task| {
            let (li, s) = (task / n_splits, task % n_splits);
            fit_group_lasso(arch, &splits[s].train, lambdas[li], config)
        });
    let gl_errors: Vec<Vec<f64>> = (0..lambdas.len())
        .map(|li| {
            (0..n_splits)
                .map(|s| held_out_error(arch, &gl_fits[li * n_splits + s], &splits[s].test))
                .collect()
        })
        .collect();
    let lambda = choose(lambdas, &gl_errors, max_increase(gl_fits.iter().flatten()))?;
    if method == Method::Gl {
        return Ok(Selection {
            method,
            lambda,
            zeta: None,
        });
    }

    let li = lambdas
        .iter()
        .position(|v| *v == lambda.chosen)
        .expect("chosen value comes from the grid");
    let bases: Vec<&FitResult> = (0..n_splits)
        .map(|s| {
            gl_fits[li * n_splits + s]
                .as_ref()
                .expect("chosen lambda has finite error on every split")
        })
        .collect();
    let zetas = &config.zeta_grid;
    let agl_flat: Vec<(f64, f64)> =
        par::map_indexed(zetas.len() * n_splits, config.workers, |task| {
            let (zi, s) = (task / n_splits, task % n_splits);
            let fit = fit_adaptive_stage(arch, &splits[s].train, &bases[s].params, zetas[zi], config);
            let rise = fit.as_ref().map_or(f64::NEG_INFINITY, FitResult::max_objective_increase);
            (held_out_error(arch, &fit, &splits[s].test), rise)
        });
    let agl_errors: Vec<Vec<f64>> = agl_flat
        .chunks(n_splits)
        .map(|c| c.iter().map(|(e, _)| *e).collect())
        .collect();
    let rise = agl_flat.iter().map(|(_, r)| *r).fold(f64::NEG_INFINITY, f64::max);
    let zeta = choose(zetas, &agl_errors, rise)?;
    Ok(Selection {
        method,
        lambda,
        zeta: Some(zeta),
    })
}
