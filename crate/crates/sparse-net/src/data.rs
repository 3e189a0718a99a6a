//! Datasets: synthetic generation, CSV ingestion, noise augmentation,
//! standardization and random splits.

use std::fs;
use std::io::Write;
use std::path::Path;

use ndarray::{s, Array1, Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::net::{predict, NetworkArch, NetworkParams};
use crate::rng;

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    /// `n x d0`.
    pub x: Array2<f64>,
    pub y: Array1<f64>,
    pub feature_names: Vec<String>,
    pub true_support: Option<Vec<bool>>,
}

impl Dataset {
    /// Builds a dataset with default feature names `x1..xd`.
    pub fn new(x: Array2<f64>, y: Array1<f64>) -> Result<Self> {
        let names = (1..=x.ncols()).map(|j| format!("x{j}")).collect();
        Dataset::with_names(x, y, names)
    }

    pub fn with_names(x: Array2<f64>, y: Array1<f64>, feature_names: Vec<String>) -> Result<Self> {
        let data = Dataset {
            x,
            y,
            feature_names,
            true_support: None,
        };
        data.validate()?;
        Ok(data)
    }

    pub fn with_support(mut self, support: Vec<bool>) -> Result<Self> {
        if support.len() != self.n_features() {
            return Err(Error::LengthMismatch {
                left: support.len(),
                right: self.n_features(),
            });
        }
        self.true_support = Some(support);
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        if self.x.nrows() == 0 {
            return Err(Error::EmptyDataset);
        }
        if self.x.ncols() == 0 {
            return Err(Error::InvalidConfig("dataset has no features".into()));
        }
        if self.y.len() != self.x.nrows() {
            return Err(Error::LengthMismatch {
                left: self.x.nrows(),
                right: self.y.len(),
            });
        }
        if self.feature_names.len() != self.x.ncols() {
            return Err(Error::LengthMismatch {
                left: self.feature_names.len(),
                right: self.x.ncols(),
            });
        }
        if !self.x.iter().chain(self.y.iter()).all(|v| v.is_finite()) {
            return Err(Error::InvalidConfig("dataset contains non-finite values".into()));
        }
        if let Some(s) = &self.true_support {
            if s.len() != self.x.ncols() {
                return Err(Error::LengthMismatch {
                    left: s.len(),
                    right: self.x.ncols(),
                });
            }
        }
        Ok(())
    }

    pub fn n_samples(&self) -> usize {
        self.x.nrows()
    }

    pub fn n_features(&self) -> usize {
        self.x.ncols()
    }

    /// Rows at `idx`, in the given order.
    pub fn select_rows(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select(Axis(0), idx),
            y: self.y.select(Axis(0), idx),
            feature_names: self.feature_names.clone(),
            true_support: self.true_support.clone(),
        }
    }

    /// Writes `name1,...,named,<response>` then one row per sample, floats
    /// with 17 significant digits.
    pub fn write_csv(&self, path: &Path, response: &str) -> Result<()> {
        let mut out = String::new();
        out.push_str(&self.feature_names.join(","));
        out.push(',');
        out.push_str(response);
        out.push('\n');
        for (row, y) in self.x.outer_iter().zip(self.y.iter()) {
            for v in row.iter() {
                out.push_str(&fmt_f64(*v));
                out.push(',');
            }
            out.push_str(&fmt_f64(*y));
            out.push('\n');
        }
        let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

/// 17 significant digits; parses back to the identical `f64`.
pub fn fmt_f64(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.16e}")
    } else {
        format!("{v}")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub arch: NetworkArch,
    pub n_features: usize,
    pub n_significant: usize,
    pub n_samples: usize,
    pub noise_sd: f64,
    pub input_low: f64,
    pub input_high: f64,
    pub seed: u64,
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        self.arch.validate()?;
        if self.arch.n_inputs() != self.n_features {
            return Err(Error::InvalidConfig(format!(
                "architecture expects {} inputs but n_features = {}",
                self.arch.n_inputs(),
                self.n_features
            )));
        }
        if self.arch.n_outputs() != 1 {
            return Err(Error::InvalidConfig("synthetic responses need one output".into()));
        }
        if self.n_significant > self.n_features {
            return Err(Error::InvalidConfig(format!(
                "n_significant {} exceeds n_features {}",
                self.n_significant, self.n_features
            )));
        }
        if self.n_samples == 0 {
            return Err(Error::InvalidConfig("n_samples must be positive".into()));
        }
        if !(self.noise_sd >= 0.0 && self.noise_sd.is_finite()) {
            return Err(Error::InvalidConfig(format!("bad noise_sd {}", self.noise_sd)));
        }
        if !(self.input_low < self.input_high)
            || !self.input_low.is_finite()
            || !self.input_high.is_finite()
        {
            return Err(Error::InvalidConfig(format!(
                "input range ({}, {}) is empty",
                self.input_low, self.input_high
            )));
        }
        Ok(())
    }
}

/// A generated dataset together with the network and noise that produced it.
#[derive(Debug, Clone)]
pub struct SyntheticSample {
    pub data: Dataset,
    pub true_params: NetworkParams,
    pub noise: Array1<f64>,
}

/// Draws `Y = f(X) + noise` from a random network whose last
/// `n_features - n_significant` input columns are exactly zero.
pub fn gen_synthetic(config: &SyntheticConfig) -> Result<SyntheticSample> {
    config.validate()?;
    let arch = &config.arch;
    let d = config.n_features;
    let n = config.n_samples;

    let mut true_params = NetworkParams::zeros(arch);
    let mut prng = rng::stream(config.seed, rng::STREAM_TRUE_PARAMS);
    for v in true_params.iter_mut() {
        *v = StandardNormal.sample(&mut prng);
    }
    for k in config.n_significant..d {
        true_params.zero_group(k);
    }

    let mut xrng = rng::stream(config.seed, rng::STREAM_INPUTS);
    let uniform = Uniform::new(config.input_low, config.input_high)
        .map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let x = Array2::from_shape_fn((n, d), |_| loop {
        // the open interval excludes the lower endpoint
        let v: f64 = uniform.sample(&mut xrng);
        if v > config.input_low {
            break v;
        }
    });

    let mut nrng = rng::stream(config.seed, rng::STREAM_NOISE);
    let noise = Array1::from_shape_fn(n, |_| {
        let z: f64 = StandardNormal.sample(&mut nrng);
        config.noise_sd * z
    });

    let clean = predict(arch, &true_params, x.view())?;
    let y = &clean.column(0) + &noise;
    let support = (0..d).map(|k| k < config.n_significant).collect();
    let data = Dataset::new(x, y)?.with_support(support)?;
    Ok(SyntheticSample {
        data,
        true_params,
        noise,
    })
}

/// Reads a headered, comma-separated numeric file. Every column other than
/// `response` becomes a feature, in file order.
pub fn load_csv(path: &Path, response: &str) -> Result<Dataset> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .quoting(false)
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| Error::Format {
        path: path.to_path_buf(),
        detail: e.to_string(),
    })?;
    let names: Vec<String> = headers.iter().map(str::to_string).collect();
    let ycol = names
        .iter()
        .position(|h| h == response)
        .ok_or_else(|| Error::MissingColumn {
            path: path.to_path_buf(),
            column: response.to_string(),
        })?;
    let feature_names: Vec<String> = names
        .iter()
        .enumerate()
        .filter(|(j, _)| *j != ycol)
        .map(|(_, h)| h.clone())
        .collect();
    if feature_names.is_empty() {
        return Err(Error::Format {
            path: path.to_path_buf(),
            detail: "no feature columns".into(),
        });
    }

    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (i, record) in reader.records().enumerate() {
        // row numbers are 1-based data rows (header excluded)
        let row = i + 1;
        let record = record.map_err(|e| Error::Parse {
            path: path.to_path_buf(),
            row,
            detail: e.to_string(),
        })?;
        if record.len() != names.len() {
            return Err(Error::Parse {
                path: path.to_path_buf(),
                row,
                detail: format!("expected {} cells, found {}", names.len(), record.len()),
            });
        }
        for (j, cell) in record.iter().enumerate() {
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                path: path.to_path_buf(),
                row,
                detail: format!("column `{}`: cannot parse `{cell}`", names[j]),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    path: path.to_path_buf(),
                    row,
                    detail: format!("column `{}`: non-finite value", names[j]),
                });
            }
            if j == ycol {
                ys.push(v);
            } else {
                xs.push(v);
            }
        }
    }
    if ys.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let x = Array2::from_shape_vec((ys.len(), feature_names.len()), xs).map_err(|e| {
        Error::Format {
            path: path.to_path_buf(),
            detail: e.to_string(),
        }
    })?;
    Dataset::with_names(x, Array1::from(ys), feature_names)
}

/// Appends `k` standard-normal columns named `noise_1..noise_k`.
pub fn augment_noise_features(data: &Dataset, k: usize, seed: u64) -> Dataset {
    if k == 0 {
        return data.clone();
    }
    let n = data.n_samples();
    let d = data.n_features();
    let mut r = rng::stream(seed, rng::STREAM_AUGMENT);
    let mut x = Array2::zeros((n, d + k));
    x.slice_mut(s![.., ..d]).assign(&data.x);
    // drawn column-major: noise_j is the j-th block of n draws
    for j in d..d + k {
        for i in 0..n {
            x[[i, j]] = StandardNormal.sample(&mut r);
        }
    }
    let mut names = data.feature_names.clone();
    names.extend((1..=k).map(|j| format!("noise_{j}")));
    let true_support = data.true_support.as_ref().map(|s| {
        let mut s = s.clone();
        s.resize(d + k, false);
        s
    });
    Dataset {
        x,
        y: data.y.clone(),
        feature_names: names,
        true_support,
    }
}

/// Per-feature affine transform `(x - mean) / scale`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardization {
    pub means: Vec<f64>,
    pub scales: Vec<f64>,
}

impl Standardization {
    pub fn apply(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for (j, mut col) in out.x.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.scales[j]);
            col.mapv_inplace(|v| (v - m) / s);
        }
        out
    }

    pub fn invert(&self, data: &Dataset) -> Dataset {
        let mut out = data.clone();
        for (j, mut col) in out.x.axis_iter_mut(Axis(1)).enumerate() {
            let (m, s) = (self.means[j], self.scales[j]);
            col.mapv_inplace(|v| v * s + m);
        }
        out
    }
}

/// Centers every feature and scales it to unit population standard
/// deviation. Constant columns keep scale 1. The response is untouched.
pub fn standardize(data: &Dataset) -> (Dataset, Standardization) {
    let n = data.n_samples() as f64;
    let mut means = Vec::with_capacity(data.n_features());
    let mut scales = Vec::with_capacity(data.n_features());
    for col in data.x.axis_iter(Axis(1)) {
        let mean = col.sum() / n;
        let var = col.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let sd = var.sqrt();
        means.push(mean);
        scales.push(if sd > 0.0 { sd } else { 1.0 });
    }
    let t = Standardization { means, scales };
    (t.apply(data), t)
}

/// Test-set size used by [`train_test_split`]: `floor(n * fraction)`, at
/// least one row.
pub fn test_size(n: usize, test_fraction: f64) -> usize {
    ((n as f64 * test_fraction).floor() as usize).max(1)
}

/// Random partition of rows into `(train, test)`.
pub fn train_test_split(data: &Dataset, test_fraction: f64, seed: u64) -> Result<(Dataset, Dataset)> {
    let (train_idx, test_idx) = split_indices(data.n_samples(), test_fraction, seed)?;
    Ok((data.select_rows(&train_idx), data.select_rows(&test_idx)))
}

pub(crate) fn split_indices(
    n: usize,
    test_fraction: f64,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>)> {
    if !(test_fraction > 0.0 && test_fraction < 1.0) {
        return Err(Error::InvalidConfig(format!(
            "test fraction {test_fraction} outside (0, 1)"
        )));
    }
    let n_test = test_size(n, test_fraction);
    if n_test >= n {
        return Err(Error::DegenerateSplit {
            train: n.saturating_sub(n_test),
            test: n_test,
        });
    }
    let mut idx: Vec<usize> = (0..n).collect();
    let mut r = rng::stream(seed, rng::STREAM_SPLIT);
    idx.shuffle(&mut r);
    let test = idx[..n_test].to_vec();
    let train = idx[n_test..].to_vec();
    Ok((train, test))
}

/// Uniform draw in `[-r, r]`.
pub(crate) fn symmetric_uniform<R: Rng>(rng: &mut R, r: f64) -> f64 {
    rng.random_range(-r..=r)
}
