//! Replicated selection experiments and their metrics.
//!
//! Replicate `r` uses seed `base_seed + r` for everything random in it: the
//! synthetic draw (or the appended noise columns in CSV mode), the split
//! set of the grid search, and the parameter initialization. A range of
//! replicates can therefore be re-run on its own.

use serde::{Deserialize, Serialize};

use crate::data::{augment_noise_features, gen_synthetic, standardize, Dataset, SyntheticConfig};
use crate::error::{Error, Result};
use crate::estimators::{fit_adaptive_stage, fit_group_lasso, grid_select, Method, SelectConfig};
use crate::net::{Activation, NetworkArch};
use crate::par;

/// FPR, FNR and exact recovery of one selected set against the truth.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Rates {
    pub false_positive_rate: f64,
    pub false_negative_rate: f64,
    pub exact_recovery: bool,
}

/// `FPR = |selected & !true| / |!true|`, `FNR = |!selected & true| / |true|`,
/// each 0 when its denominator is empty.
pub fn compute_metrics(selected: &[bool], true_support: &[bool]) -> Result<Rates> {
    if selected.len() != true_support.len() {
        return Err(Error::LengthMismatch {
            left: selected.len(),
            right: true_support.len(),
        });
    }
    let (mut fp, mut neg, mut fneg, mut pos) = (0usize, 0usize, 0usize, 0usize);
    for (&s, &t) in selected.iter().zip(true_support) {
        if t {
            pos += 1;
            fneg += usize::from(!s);
        } else {
            neg += 1;
            fp += usize::from(s);
        }
    }
    let rate = |num: usize, den: usize| if den == 0 { 0.0 } else { num as f64 / den as f64 };
    Ok(Rates {
        false_positive_rate: rate(fp, neg),
        false_negative_rate: rate(fneg, pos),
        exact_recovery: fp == 0 && fneg == 0,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Ok,
    Failed(String),
}

impl Status {
    pub fn is_ok(&self) -> bool {
        matches!(self, Status::Ok)
    }
}

/// One replicate's outcome for one method.
///
/// Rates are `None` when the data carry no true support (real datasets) or
/// when the replicate failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionMetrics {
    pub replicate_id: usize,
    pub method: Method,
    pub lambda: Option<f64>,
    pub zeta: Option<f64>,
    pub false_positive_rate: Option<f64>,
    pub false_negative_rate: Option<f64>,
    pub exact_recovery: Option<bool>,
    pub selected: Vec<bool>,
    pub status: Status,
    /// Largest per-epoch objective rise over every fit behind this row
    /// (grid search and final fits); `<= 0` means every trace descended.
    pub max_objective_increase: Option<f64>,
}

impl SelectionMetrics {
    fn success(
        replicate_id: usize,
        method: Method,
        lambda: f64,
        zeta: Option<f64>,
        selected: Vec<bool>,
        truth: Option<&[bool]>,
        max_objective_increase: f64,
    ) -> Result<Self> {
        let rates = truth.map(|t| compute_metrics(&selected, t)).transpose()?;
        Ok(SelectionMetrics {
            replicate_id,
            method,
            lambda: Some(lambda),
            zeta,
            false_positive_rate: rates.map(|r| r.false_positive_rate),
            false_negative_rate: rates.map(|r| r.false_negative_rate),
            exact_recovery: rates.map(|r| r.exact_recovery),
            selected,
            status: Status::Ok,
            max_objective_increase: Some(max_objective_increase),
        })
    }

    fn failure(replicate_id: usize, method: Method, err: &Error) -> Self {
        SelectionMetrics {
            replicate_id,
            method,
            lambda: None,
            zeta: None,
            false_positive_rate: None,
            false_negative_rate: None,
            exact_recovery: None,
            selected: Vec::new(),
            status: Status::Failed(err.to_string()),
            max_objective_increase: None,
        }
    }
}

/// Where each replicate's data come from.
#[derive(Debug, Clone)]
pub enum Experiment {
    /// Fresh synthetic draw per replicate; the config's seed is replaced by
    /// the replicate seed.
    Synthetic(SyntheticConfig),
    /// A fixed dataset with `add_noise` standard-normal columns appended per
    /// replicate, then (optionally) standardized.
    Csv {
        data: Dataset,
        add_noise: usize,
        standardize: bool,
    },
}

#[derive(Debug, Clone)]
pub struct ExperimentSpec {
    pub experiment: Experiment,
    /// Hidden widths; input width comes from the data, output width is 1.
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub select: SelectConfig,
}

impl ExperimentSpec {
    fn replicate_data(&self, seed: u64) -> Result<Dataset> {
        match &self.experiment {
            Experiment::Synthetic(cfg) => {
                let cfg = SyntheticConfig {
                    seed,
                    ..cfg.clone()
                };
                Ok(gen_synthetic(&cfg)?.data)
            }
            Experiment::Csv {
                data,
                add_noise,
                standardize: scale,
            } => {
                let augmented = augment_noise_features(data, *add_noise, seed);
                Ok(if *scale {
                    standardize(&augmented).0
                } else {
                    augmented
                })
            }
        }
    }

    fn arch_for(&self, n_inputs: usize) -> Result<NetworkArch> {
        let mut widths = Vec::with_capacity(self.hidden.len() + 2);
        widths.push(n_inputs);
        widths.extend(&self.hidden);
        widths.push(1);
        NetworkArch::new(widths, self.activation)
    }
}

/// Runs one replicate: grid search, then the final fit(s) on all rows.
pub fn run_replicate(
    spec: &ExperimentSpec,
    replicate_id: usize,
    methods: &[Method],
    base_seed: u64,
) -> Vec<SelectionMetrics> {
    let seed = base_seed.wrapping_add(replicate_id as u64);
    match run_replicate_inner(spec, replicate_id, methods, seed) {
        Ok(rows) => rows,
        Err(e) => methods
            .iter()
            .map(|m| SelectionMetrics::failure(replicate_id, *m, &e))
            .collect(),
    }
}

fn run_replicate_inner(
    spec: &ExperimentSpec,
    replicate_id: usize,
    methods: &[Method],
    seed: u64,
) -> Result<Vec<SelectionMetrics>> {
    let data = spec.replicate_data(seed)?;
    let arch = spec.arch_for(data.n_features())?;
    let mut select = spec.select.clone();
    select.seed = seed;
    select.opt.seed = seed;
    select.workers = 1;

    let need_agl = methods.contains(&Method::GlAgl);
    let method = if need_agl { Method::GlAgl } else { Method::Gl };
    let selection = grid_select(&arch, &data, method, &select)?;
    let lambda = selection.lambda.chosen;
    let truth = data.true_support.as_deref();

    let base = fit_group_lasso(&arch, &data, lambda, &select)?;
    let gl_rise = selection
        .lambda
        .max_objective_increase
        .max(base.max_objective_increase());
    let mut rows = Vec::with_capacity(methods.len());
    for m in methods {
        let row = match m {
            Method::Gl => SelectionMetrics::success(
                replicate_id,
                *m,
                lambda,
                None,
                base.support.clone(),
                truth,
                gl_rise,
            )?,
            Method::GlAgl => {
                let zeta_search = selection.zeta.as_ref().expect("GL+AGL search sweeps zeta");
                let zeta = zeta_search.chosen;
                let adaptive = fit_adaptive_stage(&arch, &data, &base.params, zeta, &select)?;
                let rise = gl_rise
                    .max(zeta_search.max_objective_increase)
                    .max(adaptive.max_objective_increase());
                SelectionMetrics::success(
                    replicate_id,
                    *m,
                    lambda,
                    Some(zeta),
                    adaptive.support,
                    truth,
                    rise,
                )?
            }
        };
        rows.push(row);
    }
    Ok(rows)
}

/// Called once per finished replicate with its rows.
pub type Progress<'a> = &'a (dyn Fn(&[SelectionMetrics]) + Sync);

/// Runs replicates `0..n_replicates` on up to `workers` threads. Rows come
/// back sorted by `(replicate_id, method)`; failures are rows too.
pub fn run_replicates(
    spec: &ExperimentSpec,
    n_replicates: usize,
    methods: &[Method],
    base_seed: u64,
    workers: usize,
    progress: Option<Progress<'_>>,
) -> Result<Vec<SelectionMetrics>> {
    if n_replicates == 0 {
        return Err(Error::InvalidConfig("n_replicates must be at least 1".into()));
    }
    if methods.is_empty() {
        return Err(Error::InvalidConfig("no method requested".into()));
    }
    spec.select.validate()?;
    let mut methods = methods.to_vec();
    methods.sort();
    methods.dedup();
    let per_replicate = par::map_indexed(n_replicates, workers, |r| {
        let rows = run_replicate(spec, r, &methods, base_seed);
        if let Some(cb) = progress {
            cb(&rows);
        }
        rows
    });
    let mut rows: Vec<SelectionMetrics> = per_replicate.into_iter().flatten().collect();
    rows.sort_by_key(|m| (m.replicate_id, m.method));
    Ok(rows)
}

/// Aggregate over the successful rows of one method.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SelectionSummary {
    /// Fraction of successful replicates selecting each feature.
    pub frequency: Vec<f64>,
    pub n_replicates: usize,
    pub n_failed: usize,
    pub mean_fpr: Option<f64>,
    pub mean_fnr: Option<f64>,
    pub exact_recovery_rate: Option<f64>,
}

fn mean_of(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Option<Vec<f64>> = values.collect();
    match v {
        Some(v) if !v.is_empty() => Some(v.iter().sum::<f64>() / v.len() as f64),
        _ => None,
    }
}

pub fn selection_frequency(metrics: &[SelectionMetrics]) -> Result<SelectionSummary> {
    let ok: Vec<&SelectionMetrics> = metrics.iter().filter(|m| m.status.is_ok()).collect();
    let n_failed = metrics.len() - ok.len();
    let Some(first) = ok.first() else {
        return Err(Error::InvalidConfig("no successful replicate to summarize".into()));
    };
    let d = first.selected.len();
    if let Some(bad) = ok.iter().find(|m| m.selected.len() != d) {
        return Err(Error::LengthMismatch {
            left: bad.selected.len(),
            right: d,
        });
    }
    let n = ok.len() as f64;
    let frequency = (0..d)
        .map(|j| ok.iter().filter(|m| m.selected[j]).count() as f64 / n)
        .collect();
    Ok(SelectionSummary {
        frequency,
        n_replicates: ok.len(),
        n_failed,
        mean_fpr: mean_of(ok.iter().map(|m| m.false_positive_rate)),
        mean_fnr: mean_of(ok.iter().map(|m| m.false_negative_rate)),
        exact_recovery_rate: mean_of(
            ok.iter()
                .map(|m| m.exact_recovery.map(|e| if e { 1.0 } else { 0.0 })),
        ),
    })
}

/// Per-feature selection frequencies of both methods.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrequencyTable {
    pub feature_names: Vec<String>,
    pub gl: Option<SelectionSummary>,
    pub gl_agl: Option<SelectionSummary>,
}

impl FrequencyTable {
    pub fn from_metrics(feature_names: Vec<String>, metrics: &[SelectionMetrics]) -> Result<Self> {
        let summarize = |method: Method| -> Result<Option<SelectionSummary>> {
            let rows: Vec<SelectionMetrics> = metrics
                .iter()
                .filter(|m| m.method == method)
                .cloned()
                .collect();
            if rows.is_empty() {
                return Ok(None);
            }
            let s = selection_frequency(&rows)?;
            if s.frequency.len() != feature_names.len() {
                return Err(Error::LengthMismatch {
                    left: s.frequency.len(),
                    right: feature_names.len(),
                });
            }
            Ok(Some(s))
        };
        Ok(FrequencyTable {
            gl: summarize(Method::Gl)?,
            gl_agl: summarize(Method::GlAgl)?,
            feature_names,
        })
    }
}
