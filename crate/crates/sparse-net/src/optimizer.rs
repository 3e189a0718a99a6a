//! Full-batch proximal gradient descent on `risk + penalty`.
//!
//! Each epoch takes a gradient step on every trainable parameter, then
//! block soft-thresholds each non-frozen first-layer column with threshold
//! `step * lambda * w_k`. The step is halved until the penalized objective
//! does not increase, and regrown by `backtracking_growth` (capped at
//! `initial_step`) after every accepted epoch. Zero groups are produced by
//! the prox itself, so the reported support needs no cutoff.

use ndarray::Zip;
use serde::{Deserialize, Serialize};

use crate::data::{symmetric_uniform, Dataset};
use crate::error::{Error, Result};
use crate::net::{NetworkArch, NetworkParams, Workspace};
use crate::penalty::{penalty_unchecked, prox_group_inplace, GroupWeight, PenaltySpec};
use crate::rng;

/// Which parameters the optimizer may move.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Trainable {
    #[default]
    All,
    /// Only `(P, p)`; deeper layers stay at their initial values.
    FirstLayerOnly,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptConfig {
    pub epochs: usize,
    pub initial_step: f64,
    pub backtracking_factor: f64,
    pub backtracking_growth: f64,
    pub divergence_cap: f64,
    /// Relative objective decrease below which training stops; 0 disables.
    pub objective_tolerance: f64,
    pub seed: u64,
    pub trainable: Trainable,
}

impl Default for OptConfig {
    fn default() -> Self {
        OptConfig {
            epochs: 20_000,
            initial_step: 1e-2,
            backtracking_factor: 0.5,
            backtracking_growth: 1.1,
            divergence_cap: 1e6,
            objective_tolerance: 0.0,
            seed: 0,
            trainable: Trainable::All,
        }
    }
}

impl OptConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.epochs == 0 {
            return bad("epochs must be at least 1".into());
        }
        if !(self.initial_step > 0.0 && self.initial_step.is_finite()) {
            return bad(format!("initial_step {} must be positive", self.initial_step));
        }
        if !(self.backtracking_factor > 0.0 && self.backtracking_factor < 1.0) {
            return bad(format!(
                "backtracking_factor {} must lie in (0, 1)",
                self.backtracking_factor
            ));
        }
        if !(self.backtracking_growth > 1.0 && self.backtracking_growth.is_finite()) {
            return bad(format!(
                "backtracking_growth {} must exceed 1",
                self.backtracking_growth
            ));
        }
        if !(self.divergence_cap > 0.0) {
            return bad(format!("divergence_cap {} must be positive", self.divergence_cap));
        }
        if !(self.objective_tolerance >= 0.0 && self.objective_tolerance.is_finite()) {
            return bad(format!(
                "objective_tolerance {} must be nonnegative",
                self.objective_tolerance
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FitResult {
    pub params: NetworkParams,
    /// Penalized objective at the starting point followed by one entry per
    /// completed epoch.
    pub objective_trace: Vec<f64>,
    /// `support[k]` is true iff `group_norms[k] > 0.0`.
    pub support: Vec<bool>,
    pub group_norms: Vec<f64>,
    pub epochs_run: usize,
    pub converged_early: bool,
}

impl FitResult {
    fn from_params(params: NetworkParams, trace: Vec<f64>, epochs_run: usize, early: bool) -> Self {
        let group_norms = params.group_norms();
        let support = group_norms.iter().map(|n| *n > 0.0).collect();
        FitResult {
            params,
            objective_trace: trace,
            support,
            group_norms,
            epochs_run,
            converged_early: early,
        }
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_trace.last().unwrap()
    }

    /// Largest single-epoch rise of the objective; negative infinity when no
    /// epoch ran. A monotone trace gives a value `<= 0`.
    pub fn max_objective_increase(&self) -> f64 {
        self.objective_trace
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::NEG_INFINITY, f64::max)
    }
}

/// Uniform `[-r, r]` entries with `r = 1/sqrt(fan_in)` per layer; frozen
/// columns of `frozen` (if any) are zeroed.
pub fn initialize_params(
    arch: &NetworkArch,
    seed: u64,
    frozen: Option<&PenaltySpec>,
) -> NetworkParams {
    let mut params = NetworkParams::zeros(arch);
    let mut r = rng::stream(seed, rng::STREAM_INIT);
    for layer in params.layers.iter_mut() {
        let bound = 1.0 / (layer.weights.ncols() as f64).sqrt();
        for v in layer.weights.iter_mut().chain(layer.bias.iter_mut()) {
            *v = symmetric_uniform(&mut r, bound);
        }
    }
    if let Some(spec) = frozen {
        for k in spec.frozen() {
            if k < params.n_groups() {
                params.zero_group(k);
            }
        }
    }
    params
}

// Halving stops once the step has shrunk by this factor; the iterate is
// then a fixed point to working precision.
const MIN_STEP_RATIO: f64 = 1e-16;

/// Minimizes `empirical_risk + penalty_value` from `init` (or a fresh
/// [`initialize_params`] draw with `config.seed`).
pub fn fit(
    arch: &NetworkArch,
    data: &Dataset,
    spec: &PenaltySpec,
    config: &OptConfig,
    init: Option<NetworkParams>,
) -> Result<FitResult> {
    arch.validate()?;
    config.validate()?;
    spec.validate()?;
    if data.n_samples() == 0 {
        return Err(Error::EmptyDataset);
    }
    if data.n_features() != arch.n_inputs() {
        return Err(Error::FeatureCount {
            expected: arch.n_inputs(),
            got: data.n_features(),
        });
    }
    if spec.n_groups() != arch.n_inputs() {
        return Err(Error::LengthMismatch {
            left: spec.n_groups(),
            right: arch.n_inputs(),
        });
    }
    if arch.n_outputs() != 1 {
        return Err(Error::Shape {
            layer: arch.n_layers() - 1,
            detail: "squared-error risk needs a single output".into(),
        });
    }

    let mut params = match init {
        Some(p) => {
            p.check_shape(arch)?;
            p
        }
        None => initialize_params(arch, config.seed, Some(spec)),
    };
    for k in spec.frozen().collect::<Vec<_>>() {
        params.zero_group(k);
    }
    if !params.all_finite() {
        return Err(Error::NonFinite { epoch: 0 });
    }
    if params.max_abs() > config.divergence_cap {
        return Err(Error::Divergence {
            epoch: 0,
            cap: config.divergence_cap,
        });
    }

    let x = data.x.view();
    let y = data.y.view();
    let mut ws = Workspace::new(arch, x);
    let frozen: Vec<bool> = spec.group_weights.iter().map(|w| w.is_frozen()).collect();
    let mut grad = NetworkParams::zeros(arch);
    let mut trial = params.clone();

    ws.forward(arch, &params);
    let mut objective = ws.risk(y) + penalty_unchecked(spec, &params);
    if !objective.is_finite() {
        return Err(Error::NonFinite { epoch: 0 });
    }
    let mut trace = Vec::with_capacity(config.epochs + 1);
    trace.push(objective);

    let min_step = config.initial_step * MIN_STEP_RATIO;
    let mut step = config.initial_step;
    let mut epochs_run = 0;
    let mut early = false;

    for epoch in 1..=config.epochs {
        ws.backward(arch, &params, y, Some(&frozen), &mut grad);
        let previous = objective;
        let mut accepted = false;
        while step >= min_step {
            proximal_step(&params, &grad, spec, config.trainable, step, &mut trial);
            ws.forward(arch, &trial);
            let candidate = ws.risk(y) + penalty_unchecked(spec, &trial);
            if candidate <= objective {
                std::mem::swap(&mut params, &mut trial);
                objective = candidate;
                accepted = true;
                break;
            }
            step *= config.backtracking_factor;
        }
        epochs_run = epoch;
        if !accepted {
            // no step decreases the objective: stationary to working precision
            trace.push(objective);
            early = true;
            break;
        }
        if params.max_abs() > config.divergence_cap {
            return Err(Error::Divergence {
                epoch,
                cap: config.divergence_cap,
            });
        }
        trace.push(objective);
        if config.objective_tolerance > 0.0
            && previous - objective <= config.objective_tolerance * previous.abs().max(1.0)
        {
            early = true;
            break;
        }
        step = (step * config.backtracking_growth).min(config.initial_step);
    }

    Ok(FitResult::from_params(params, trace, epochs_run, early))
}

/// `out = prox(params - step * grad)`, touching only trainable parameters.
fn proximal_step(
    params: &NetworkParams,
    grad: &NetworkParams,
    spec: &PenaltySpec,
    trainable: Trainable,
    step: f64,
    out: &mut NetworkParams,
) {
    for (j, ((dst, src), g)) in out
        .layers
        .iter_mut()
        .zip(&params.layers)
        .zip(&grad.layers)
        .enumerate()
    {
        if j > 0 && trainable == Trainable::FirstLayerOnly {
            dst.weights.assign(&src.weights);
            dst.bias.assign(&src.bias);
            continue;
        }
        Zip::from(&mut dst.weights)
            .and(&src.weights)
            .and(&g.weights)
            .for_each(|d, &s, &g| *d = s - step * g);
        Zip::from(&mut dst.bias)
            .and(&src.bias)
            .and(&g.bias)
            .for_each(|d, &s, &g| *d = s - step * g);
    }
    let first = &mut out.layers[0].weights;
    for (k, w) in spec.group_weights.iter().enumerate() {
        let column = first.column_mut(k);
        match *w {
            GroupWeight::Frozen => {
                let mut column = column;
                column.fill(0.0);
            }
            GroupWeight::Weight(w) => prox_group_inplace(column, step * spec.lambda * w),
        }
    }
}
