//! Feed-forward networks with analytic activations.
//!
//! A network with widths `[d0, d1, ..., dL]` has `L` affine layers. Every
//! layer except the last is followed by the elementwise activation:
//!
//! ```text
//! a1 = act(P x + p)
//! aj = act(Sj a(j-1) + bj)      j = 2..L-1
//! f  = Q a(L-1) + q
//! ```
//!
//! Column `k` of the first-layer matrix `P` is the parameter group of input
//! feature `k`. If that column is exactly zero the output cannot depend on
//! `x[k]`.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => tanh(z),
            Activation::Identity => z,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkArch {
    pub layer_widths: Vec<usize>,
    #[serde(default)]
    pub activation: Activation,
}

impl NetworkArch {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        let arch = NetworkArch {
            layer_widths,
            activation,
        };
        arch.validate()?;
        Ok(arch)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layer_widths.len() < 3 {
            return Err(Error::InvalidArch(format!(
                "need at least 3 widths (input, hidden, output), got {}",
                self.layer_widths.len()
            )));
        }
        if let Some(pos) = self.layer_widths.iter().position(|&w| w == 0) {
            return Err(Error::InvalidArch(format!("width {pos} is zero")));
        }
        Ok(())
    }

    pub fn n_inputs(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn n_outputs(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    /// Number of affine layers (the `L` in `[d0, ..., dL]`).
    pub fn n_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn first_hidden_width(&self) -> usize {
        self.layer_widths[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `out x in`.
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Layer {
    fn zeros(n_in: usize, n_out: usize) -> Self {
        Layer {
            weights: Array2::zeros((n_out, n_in)),
            bias: Array1::zeros(n_out),
        }
    }
}

/// All weights and biases of a network, ordered from input to output.
///
/// `layers[0]` holds `(P, p)`, the last entry holds `(Q, q)` and anything in
/// between is a hidden transformation. Gradients use the same type.
#[derive(Debug, Clone, PartialEq)]
pub struct NetworkParams {
    pub layers: Vec<Layer>,
}

impl NetworkParams {
    pub fn zeros(arch: &NetworkArch) -> Self {
        let layers = arch
            .layer_widths
            .windows(2)
            .map(|w| Layer::zeros(w[0], w[1]))
            .collect();
        NetworkParams { layers }
    }

    pub fn first_layer(&self) -> &Layer {
        &self.layers[0]
    }

    pub fn first_layer_mut(&mut self) -> &mut Layer {
        &mut self.layers[0]
    }

    pub fn hidden(&self) -> &[Layer] {
        &self.layers[1..self.layers.len() - 1]
    }

    pub fn output(&self) -> &Layer {
        self.layers.last().unwrap()
    }

    pub fn output_mut(&mut self) -> &mut Layer {
        self.layers.last_mut().unwrap()
    }

    pub fn n_groups(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    /// Parameter group of input `k`: column `k` of the first-layer matrix.
    pub fn group(&self, k: usize) -> ArrayView1<'_, f64> {
        self.layers[0].weights.column(k)
    }

    pub fn group_norm(&self, k: usize) -> f64 {
        l2_norm(self.group(k))
    }

    pub fn group_norms(&self) -> Vec<f64> {
        (0..self.n_groups()).map(|k| self.group_norm(k)).collect()
    }

    pub fn zero_group(&mut self, k: usize) {
        self.layers[0].weights.column_mut(k).fill(0.0);
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = &f64> {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.iter().copied().collect()
    }

    pub fn from_flat(arch: &NetworkArch, values: &[f64]) -> Result<Self> {
        let mut params = NetworkParams::zeros(arch);
        if values.len() != params.n_params() {
            return Err(Error::LengthMismatch {
                left: values.len(),
                right: params.n_params(),
            });
        }
        for (dst, src) in params.iter_mut().zip(values) {
            *dst = *src;
        }
        Ok(params)
    }

    pub fn max_abs(&self) -> f64 {
        self.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|v| v.is_finite())
    }

    pub fn check_shape(&self, arch: &NetworkArch) -> Result<()> {
        if self.layers.len() != arch.n_layers() {
            return Err(Error::Shape {
                layer: self.layers.len().min(arch.n_layers()),
                detail: format!(
                    "expected {} layers, found {}",
                    arch.n_layers(),
                    self.layers.len()
                ),
            });
        }
        for (j, (layer, w)) in self
            .layers
            .iter()
            .zip(arch.layer_widths.windows(2))
            .enumerate()
        {
            if layer.weights.dim() != (w[1], w[0]) {
                return Err(Error::Shape {
                    layer: j,
                    detail: format!(
                        "weights are {:?}, expected {:?}",
                        layer.weights.dim(),
                        (w[1], w[0])
                    ),
                });
            }
            if layer.bias.len() != w[1] {
                return Err(Error::Shape {
                    layer: j,
                    detail: format!("bias has length {}, expected {}", layer.bias.len(), w[1]),
                });
            }
        }
        Ok(())
    }
}

// Rational approximation of tanh on |x| <= 0.625 (Cephes coefficients).
const TANH_P: [f64; 3] = [
    -9.643_991_794_250_522e-1,
    -9.928_772_310_019_186e1,
    -1.614_687_684_417_084_5e3,
];
const TANH_Q: [f64; 3] = [
    1.128_116_784_916_329_3e2,
    2.235_488_390_601_004_6e3,
    4.844_063_053_251_255e3,
];

/// `e^y` for `0 <= y <= 40`, accurate to a couple of ulps.
#[inline(always)]
fn exp_bounded(y: f64) -> f64 {
    // adding 1.5 * 2^52 rounds to an integer held in the low mantissa bits
    const SHIFT: f64 = 6_755_399_441_055_744.0;
    const LN2_HI: f64 = 6.931_471_803_691_238_2e-1;
    const LN2_LO: f64 = 1.908_214_929_270_587_7e-10;
    let t = y * std::f64::consts::LOG2_E + SHIFT;
    let k = t - SHIFT;
    let r = y - k * LN2_HI - k * LN2_LO;
    // Taylor series to degree 13 on |r| <= ln2 / 2
    let mut p = 1.0 / 6_227_020_800.0;
    for c in [
        1.0 / 479_001_600.0,
        1.0 / 39_916_800.0,
        1.0 / 3_628_800.0,
        1.0 / 362_880.0,
        1.0 / 40_320.0,
        1.0 / 5_040.0,
        1.0 / 720.0,
        1.0 / 120.0,
        1.0 / 24.0,
        1.0 / 6.0,
        0.5,
        1.0,
        1.0,
    ] {
        p = p * r + c;
    }
    p * f64::from_bits(t.to_bits().wrapping_add(1023) << 52)
}

/// Branch-free hyperbolic tangent, within 2 ulps of the libm result.
#[inline(always)]
pub fn tanh(x: f64) -> f64 {
    let a = x.abs();
    let e = exp_bounded((2.0 * a).min(40.0));
    let large = (1.0 - 2.0 / (e + 1.0)).copysign(x);
    let z = x * x;
    let p = (TANH_P[0] * z + TANH_P[1]) * z + TANH_P[2];
    let q = ((z + TANH_Q[0]) * z + TANH_Q[1]) * z + TANH_Q[2];
    let small = x + x * z * p / q;
    if a > 0.625 {
        large
    } else {
        small
    }
}

/// Euclidean norm, scaled so that a nonzero vector never reports norm 0.
pub fn l2_norm(v: ArrayView1<'_, f64>) -> f64 {
    let scale = v.iter().fold(0.0_f64, |m, x| m.max(x.abs()));
    if scale == 0.0 || !scale.is_finite() {
        return scale;
    }
    let sum: f64 = v.iter().map(|x| (x / scale) * (x / scale)).sum();
    scale * sum.sqrt()
}

/// Output of the network at a single input.
///
/// Exactly-zero weights are skipped, so an input whose first-layer column is
/// zero cannot influence the result in any bit.
pub fn forward(arch: &NetworkArch, params: &NetworkParams, x: &[f64]) -> Result<Vec<f64>> {
    arch.validate()?;
    params.check_shape(arch)?;
    if x.len() != arch.n_inputs() {
        return Err(Error::FeatureCount {
            expected: arch.n_inputs(),
            got: x.len(),
        });
    }
    let last = params.layers.len() - 1;
    let mut h = x.to_vec();
    for (j, layer) in params.layers.iter().enumerate() {
        let next: Vec<f64> = layer
            .weights
            .outer_iter()
            .zip(layer.bias.iter())
            .map(|(row, b)| {
                let z = row
                    .iter()
                    .zip(&h)
                    .filter(|(w, _)| **w != 0.0)
                    .fold(*b, |acc, (w, xi)| acc + w * xi);
                if j == last {
                    z
                } else {
                    arch.activation.apply(z)
                }
            })
            .collect();
        h = next;
    }
    Ok(h)
}

/// Predictions for every row of `x` (`n x d0`), returned as `n x dL`.
pub fn predict(
    arch: &NetworkArch,
    params: &NetworkParams,
    x: ArrayView2<'_, f64>,
) -> Result<Array2<f64>> {
    arch.validate()?;
    params.check_shape(arch)?;
    if x.ncols() != arch.n_inputs() {
        return Err(Error::FeatureCount {
            expected: arch.n_inputs(),
            got: x.ncols(),
        });
    }
    let mut ws = Workspace::new(arch, x);
    ws.forward(arch, params);
    let n = x.nrows();
    Ok(Array2::from_shape_fn((n, arch.n_outputs()), |(i, o)| ws.acts[ws.acts.len() - 1][o * n + i]))
}

fn check_fit_inputs(arch: &NetworkArch, params: &NetworkParams, data: &Dataset) -> Result<()> {
    arch.validate()?;
    params.check_shape(arch)?;
    if data.n_samples() == 0 {
        return Err(Error::EmptyDataset);
    }
    if data.n_features() != arch.n_inputs() {
        return Err(Error::FeatureCount {
            expected: arch.n_inputs(),
            got: data.n_features(),
        });
    }
    if arch.n_outputs() != 1 {
        return Err(Error::Shape {
            layer: arch.n_layers() - 1,
            detail: format!(
                "squared-error risk needs a single output, network has {}",
                arch.n_outputs()
            ),
        });
    }
    Ok(())
}

/// Mean squared residual `(1/n) sum (f(X_i) - Y_i)^2`.
pub fn empirical_risk(arch: &NetworkArch, params: &NetworkParams, data: &Dataset) -> Result<f64> {
    check_fit_inputs(arch, params, data)?;
    let mut ws = Workspace::new(arch, data.x.view());
    ws.forward(arch, params);
    Ok(ws.risk(data.y.view()))
}

/// Exact gradient of [`empirical_risk`] with respect to every parameter.
pub fn gradient(
    arch: &NetworkArch,
    params: &NetworkParams,
    data: &Dataset,
) -> Result<NetworkParams> {
    check_fit_inputs(arch, params, data)?;
    let mut ws = Workspace::new(arch, data.x.view());
    let mut grad = NetworkParams::zeros(arch);
    ws.forward(arch, params);
    ws.backward(arch, params, data.y.view(), None, &mut grad);
    Ok(grad)
}

/// Samples processed together in the forward pass; keeps a block of every
/// layer's activations in cache.
const BLOCK: usize = 256;

/// Preallocated activations and deltas for batched forward/backward passes.
///
/// Buffers are unit-major: row `u` of a layer holds unit `u` for all `n`
/// samples, so every kernel runs over long contiguous slices. After
/// [`Workspace::forward`] the activations belong to the parameters that were
/// passed in, and [`Workspace::backward`] may reuse them.
pub(crate) struct Workspace {
    n: usize,
    /// Inputs transposed to `d0 x n`.
    xt: Vec<f64>,
    acts: Vec<Vec<f64>>,
    deltas: Vec<Vec<f64>>,
    terms: Vec<(usize, f64)>,
    avx2: bool,
}

impl Workspace {
    pub(crate) fn new(arch: &NetworkArch, x: ArrayView2<'_, f64>) -> Self {
        let n = x.nrows();
        let xt = x.t().iter().copied().collect();
        let acts: Vec<Vec<f64>> = arch.layer_widths[1..].iter().map(|&w| vec![0.0; w * n]).collect();
        let deltas = acts.clone();
        #[cfg(target_arch = "x86_64")]
        let avx2 = std::arch::is_x86_feature_detected!("avx2");
        #[cfg(not(target_arch = "x86_64"))]
        let avx2 = false;
        Workspace {
            n,
            xt,
            acts,
            deltas,
            terms: Vec::new(),
            avx2,
        }
    }

    pub(crate) fn forward(&mut self, arch: &NetworkArch, params: &NetworkParams) {
        #[cfg(target_arch = "x86_64")]
        if self.avx2 {
            // SAFETY: the feature was detected at construction.
            unsafe { self.forward_avx2(arch, params) };
            return;
        }
        self.forward_generic(arch, params);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn forward_avx2(&mut self, arch: &NetworkArch, params: &NetworkParams) {
        self.forward_generic(arch, params);
    }

    #[inline(always)]
    fn forward_generic(&mut self, arch: &NetworkArch, params: &NetworkParams) {
        let n = self.n;
        let last = params.layers.len() - 1;
        for start in (0..n).step_by(BLOCK) {
            let len = BLOCK.min(n - start);
            for (j, layer) in params.layers.iter().enumerate() {
                let (done, rest) = self.acts.split_at_mut(j);
                let input: &[f64] = if j == 0 { &self.xt } else { &done[j - 1] };
                let out = &mut rest[0];
                for (o, (w_row, &b)) in layer.weights.outer_iter().zip(&layer.bias).enumerate() {
                    let dst = &mut out[o * n + start..o * n + start + len];
                    nonzero_terms(w_row.iter().copied(), n, start, &mut self.terms);
                    combine(&self.terms, b, input, dst);
                    if j != last && arch.activation == Activation::Tanh {
                        for z in dst.iter_mut() {
                            *z = tanh(*z);
                        }
                    }
                }
            }
        }
    }

    /// Network output for every sample (the output layer has one unit).
    pub(crate) fn output(&self) -> &[f64] {
        self.acts.last().expect("at least one layer")
    }

    pub(crate) fn risk(&self, y: ArrayView1<'_, f64>) -> f64 {
        let out = self.output();
        let y = y.as_slice().expect("contiguous response");
        let mut acc = [0.0; LANES];
        let mut fc = out.chunks_exact(LANES);
        let mut tc = y.chunks_exact(LANES);
        for (f, t) in (&mut fc).zip(&mut tc) {
            let f: &[f64; LANES] = f.try_into().unwrap();
            let t: &[f64; LANES] = t.try_into().unwrap();
            for l in 0..LANES {
                let r = f[l] - t[l];
                acc[l] += r * r;
            }
        }
        let mut sum = lane_sum(acc);
        for (f, t) in fc.remainder().iter().zip(tc.remainder()) {
            sum += (f - t) * (f - t);
        }
        sum / y.len() as f64
    }

    /// Fills `grad` using the activations of the last `forward` call.
    /// First-layer columns flagged in `skip_groups` get no gradient.
    pub(crate) fn backward(
        &mut self,
        arch: &NetworkArch,
        params: &NetworkParams,
        y: ArrayView1<'_, f64>,
        skip_groups: Option<&[bool]>,
        grad: &mut NetworkParams,
    ) {
        #[cfg(target_arch = "x86_64")]
        if self.avx2 {
            // SAFETY: the feature was detected at construction.
            unsafe { self.backward_avx2(arch, params, y, skip_groups, grad) };
            return;
        }
        self.backward_generic(arch, params, y, skip_groups, grad);
    }

    #[cfg(target_arch = "x86_64")]
    #[target_feature(enable = "avx2")]
    unsafe fn backward_avx2(
        &mut self,
        arch: &NetworkArch,
        params: &NetworkParams,
        y: ArrayView1<'_, f64>,
        skip_groups: Option<&[bool]>,
        grad: &mut NetworkParams,
    ) {
        self.backward_generic(arch, params, y, skip_groups, grad);
    }

    #[inline(always)]
    fn backward_generic(
        &mut self,
        arch: &NetworkArch,
        params: &NetworkParams,
        y: ArrayView1<'_, f64>,
        skip_groups: Option<&[bool]>,
        grad: &mut NetworkParams,
    ) {
        let n = self.n;
        let n_layers = params.layers.len();
        let scale = 2.0 / n as f64;
        {
            let out = &self.acts[n_layers - 1];
            let delta = &mut self.deltas[n_layers - 1];
            for ((d, f), t) in delta.iter_mut().zip(out).zip(y.iter()) {
                *d = scale * (f - t);
            }
        }
        for j in (0..n_layers).rev() {
            let (below, rest) = self.deltas.split_at_mut(j);
            let delta = &rest[0];
            let input: &[f64] = if j == 0 { &self.xt } else { &self.acts[j - 1] };
            let g = &mut grad.layers[j];
            let w = &params.layers[j].weights;
            for o in 0..w.nrows() {
                let d_o = &delta[o * n..(o + 1) * n];
                g.bias[o] = sum(d_o);
                for i in 0..w.ncols() {
                    let skip = j == 0 && skip_groups.is_some_and(|s| s[i]);
                    g.weights[[o, i]] = if skip {
                        0.0
                    } else {
                        dot(d_o, &input[i * n..(i + 1) * n])
                    };
                }
            }
            if j > 0 {
                let prev = &mut below[j - 1];
                let acts = &self.acts[j - 1];
                let tanh_layer = arch.activation == Activation::Tanh;
                for i in 0..w.ncols() {
                    let dst = &mut prev[i * n..(i + 1) * n];
                    nonzero_terms(w.column(i).iter().copied(), n, 0, &mut self.terms);
                    combine(&self.terms, 0.0, delta, dst);
                    if tanh_layer {
                        for (d, a) in dst.iter_mut().zip(&acts[i * n..(i + 1) * n]) {
                            *d *= 1.0 - a * a;
                        }
                    }
                }
            }
        }
    }
}

/// `dst[s] = init + sum over (offset, c) in terms of c * rows[offset + s]`.
/// Accumulators stay in registers across the sum.
#[inline(always)]
fn combine(terms: &[(usize, f64)], init: f64, rows: &[f64], dst: &mut [f64]) {
    let len = dst.len();
    let full = len / LANES * LANES;
    // every block read below lies inside `rows`
    assert!(terms.iter().all(|&(off, _)| off + len <= rows.len()));
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the feature was just detected and the bounds checked above.
        unsafe { combine_blocks_avx(terms, init, rows, &mut dst[..full]) };
    } else {
        combine_blocks(terms, init, rows, &mut dst[..full]);
    }
    #[cfg(not(target_arch = "x86_64"))]
    combine_blocks(terms, init, rows, &mut dst[..full]);
    for s in full..len {
        let mut acc = init;
        for &(off, c) in terms {
            acc += c * rows[off + s];
        }
        dst[s] = acc;
    }
}

#[inline(always)]
fn combine_blocks(terms: &[(usize, f64)], init: f64, rows: &[f64], dst: &mut [f64]) {
    for (b, out) in dst.chunks_exact_mut(LANES).enumerate() {
        let s = b * LANES;
        let mut acc = [init; LANES];
        for &(off, c) in terms {
            let x = &rows[off + s..off + s + LANES];
            for l in 0..LANES {
                acc[l] += c * x[l];
            }
        }
        out.copy_from_slice(&acc);
    }
}

/// Same lanes and operation order as [`combine_blocks`].
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn combine_blocks_avx(terms: &[(usize, f64)], init: f64, rows: &[f64], dst: &mut [f64]) {
    use std::arch::x86_64::*;
    let start = _mm256_set1_pd(init);
    let p = rows.as_ptr();
    for (b, out) in dst.chunks_exact_mut(LANES).enumerate() {
        let s = b * LANES;
        let mut lo = start;
        let mut hi = start;
        for &(off, c) in terms {
            let c = _mm256_set1_pd(c);
            lo = _mm256_add_pd(lo, _mm256_mul_pd(c, _mm256_loadu_pd(p.add(off + s))));
            hi = _mm256_add_pd(hi, _mm256_mul_pd(c, _mm256_loadu_pd(p.add(off + s + 4))));
        }
        _mm256_storeu_pd(out.as_mut_ptr(), lo);
        _mm256_storeu_pd(out.as_mut_ptr().add(4), hi);
    }
}

/// Nonzero coefficients paired with the offset of their row.
#[inline(always)]
fn nonzero_terms(coef: impl Iterator<Item = f64>, n: usize, start: usize, out: &mut Vec<(usize, f64)>) {
    out.clear();
    out.extend(
        coef.enumerate()
            .filter(|(_, c)| *c != 0.0)
            .map(|(r, c)| (r * n + start, c)),
    );
}

/// Independent accumulators for reductions; fixes the summation order so
/// results do not depend on the instruction set in use.
const LANES: usize = 8;

#[inline(always)]
fn lane_sum(acc: [f64; LANES]) -> f64 {
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7]))
}

#[inline(always)]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let len = a.len().min(b.len());
    let full = len / LANES * LANES;
    #[cfg(target_arch = "x86_64")]
    let acc = if std::arch::is_x86_feature_detected!("avx") {
        // SAFETY: the feature was just detected and `full <= len`.
        unsafe { dot_lanes_avx(a, b, full) }
    } else {
        dot_lanes(a, b, full)
    };
    #[cfg(not(target_arch = "x86_64"))]
    let acc = dot_lanes(a, b, full);
    let mut s = lane_sum(acc);
    for k in full..len {
        s += a[k] * b[k];
    }
    s
}

#[inline(always)]
fn dot_lanes(a: &[f64], b: &[f64], full: usize) -> [f64; LANES] {
    let mut acc = [0.0; LANES];
    for (x, y) in a[..full].chunks_exact(LANES).zip(b[..full].chunks_exact(LANES)) {
        for l in 0..LANES {
            acc[l] += x[l] * y[l];
        }
    }
    acc
}

/// Same lanes and operation order as [`dot_lanes`], so the results agree
/// bit for bit.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "avx")]
unsafe fn dot_lanes_avx(a: &[f64], b: &[f64], full: usize) -> [f64; LANES] {
    use std::arch::x86_64::*;
    assert!(full <= a.len() && full <= b.len() && full.is_multiple_of(LANES));
    let (pa, pb) = (a.as_ptr(), b.as_ptr());
    let mut lo = _mm256_setzero_pd();
    let mut hi = _mm256_setzero_pd();
    for k in (0..full).step_by(LANES) {
        lo = _mm256_add_pd(lo, _mm256_mul_pd(_mm256_loadu_pd(pa.add(k)), _mm256_loadu_pd(pb.add(k))));
        hi = _mm256_add_pd(
            hi,
            _mm256_mul_pd(_mm256_loadu_pd(pa.add(k + 4)), _mm256_loadu_pd(pb.add(k + 4))),
        );
    }
    let mut acc = [0.0; LANES];
    _mm256_storeu_pd(acc.as_mut_ptr(), lo);
    _mm256_storeu_pd(acc.as_mut_ptr().add(4), hi);
    acc
}

#[inline(always)]
fn sum(a: &[f64]) -> f64 {
    let mut acc = [0.0; LANES];
    let mut chunks = a.chunks_exact(LANES);
    for x in &mut chunks {
        let x: &[f64; LANES] = x.try_into().unwrap();
        for l in 0..LANES {
            acc[l] += x[l];
        }
    }
    let mut s = lane_sum(acc);
    for x in chunks.remainder() {
        s += x;
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn vector_kernels_match_scalar_order() {
        let a: Vec<f64> = (0..1003).map(|i| ((i * 37 % 101) as f64 - 50.0) / 7.0).collect();
        let b: Vec<f64> = (0..1003).map(|i| ((i * 53 % 97) as f64 - 48.0) / 3.0).collect();
        let full = a.len() / LANES * LANES;
        let mut expect = [0.0; LANES];
        for k in 0..full {
            expect[k % LANES] += a[k] * b[k];
        }
        assert_eq!(dot_lanes(&a, &b, full), expect);
        let mut tail = lane_sum(expect);
        for k in full..a.len() {
            tail += a[k] * b[k];
        }
        assert_eq!(dot(&a, &b).to_bits(), tail.to_bits());

        let terms = [(0, 0.5), (200, -1.25), (400, 3.0)];
        let mut fast = vec![0.0; 203];
        combine(&terms, 0.1, &a, &mut fast);
        for (s, v) in fast.iter().enumerate() {
            let mut acc = 0.1;
            for &(off, c) in &terms {
                acc += c * a[off + s];
            }
            assert_eq!(v.to_bits(), acc.to_bits());
        }
    }

    fn arch(widths: &[usize], act: Activation) -> NetworkArch {
        NetworkArch::new(widths.to_vec(), act).unwrap()
    }

    #[test]
    fn constant_network() {
        let a = arch(&[3, 4, 2, 1], Activation::Tanh);
        let mut p = NetworkParams::zeros(&a);
        p.output_mut().bias[0] = 0.5;
        for x in [[0.0, 1.0, -2.0], [7.0, 3.0, 1e6]] {
            assert_eq!(forward(&a, &p, &x).unwrap(), vec![0.5]);
        }
    }

    #[test]
    fn single_tanh_unit() {
        let a = arch(&[1, 1, 1], Activation::Tanh);
        let mut p = NetworkParams::zeros(&a);
        p.layers[0].weights[[0, 0]] = 1.0;
        p.layers[1].weights[[0, 0]] = 1.0;
        let out = forward(&a, &p, &[1.0]).unwrap();
        assert!((out[0] - 0.7615941559557649).abs() < 1e-15);
    }

    #[test]
    fn rejects_short_arch_and_zero_width() {
        assert!(NetworkArch::new(vec![2, 1], Activation::Tanh).is_err());
        assert!(NetworkArch::new(vec![2, 0, 1], Activation::Tanh).is_err());
    }

    #[test]
    fn shape_error_names_layer() {
        let a = arch(&[2, 3, 1], Activation::Tanh);
        let mut p = NetworkParams::zeros(&a);
        p.layers[1].weights = Array2::zeros((1, 4));
        match forward(&a, &p, &[0.0, 0.0]) {
            Err(Error::Shape { layer, .. }) => assert_eq!(layer, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn risk_of_constant_network() {
        let a = arch(&[1, 2, 1], Activation::Tanh);
        let p = NetworkParams::zeros(&a);
        let d = Dataset::new(array![[0.0], [1.0], [2.0]], array![0.0, 0.0, 0.0]).unwrap();
        assert_eq!(empirical_risk(&a, &p, &d).unwrap(), 0.0);
        let d = Dataset::new(array![[0.0], [1.0]], array![1.0, -1.0]).unwrap();
        assert_eq!(empirical_risk(&a, &p, &d).unwrap(), 1.0);
    }

    #[test]
    fn gradient_vanishes_on_perfect_fit() {
        let a = arch(&[2, 3, 1], Activation::Tanh);
        let mut p = NetworkParams::zeros(&a);
        p.layers[0].weights = array![[0.3, -0.2], [0.1, 0.5], [-0.4, 0.2]];
        p.layers[1].weights = array![[1.0, -1.0, 0.5]];
        let x = array![[0.1, 0.2], [-0.3, 0.7], [0.9, -0.5]];
        let y = predict(&a, &p, x.view()).unwrap().column(0).to_owned();
        let d = Dataset::new(x, y).unwrap();
        let g = gradient(&a, &p, &d).unwrap();
        assert!(g.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn linear_bias_gradient_is_minus_twice_mean_residual() {
        let a = arch(&[2, 1, 1], Activation::Identity);
        let mut p = NetworkParams::zeros(&a);
        p.layers[0].weights = array![[0.5, -1.0]];
        p.layers[0].bias[0] = 0.2;
        p.layers[1].weights[[0, 0]] = 2.0;
        p.layers[1].bias[0] = -0.1;
        let x = array![[1.0, 2.0], [0.0, -1.0], [3.0, 0.5], [-2.0, 1.0]];
        let y = array![1.0, 2.0, -0.5, 0.3];
        // f = 2 (0.5 x1 - x2 + 0.2) - 0.1 computed by hand
        let mean_residual = x
            .outer_iter()
            .zip(y.iter())
            .map(|(r, t)| t - (2.0 * (0.5 * r[0] - r[1] + 0.2) - 0.1))
            .sum::<f64>()
            / 4.0;
        let d = Dataset::new(x, y).unwrap();
        let g = gradient(&a, &p, &d).unwrap();
        assert!((g.output().bias[0] + 2.0 * mean_residual).abs() < 1e-14);
    }

    #[test]
    fn risk_needs_single_output() {
        let a = arch(&[1, 2, 2], Activation::Tanh);
        let p = NetworkParams::zeros(&a);
        let d = Dataset::new(array![[0.0]], array![0.0]).unwrap();
        assert!(matches!(
            empirical_risk(&a, &p, &d),
            Err(Error::Shape { layer: 1, .. })
        ));
    }

    #[test]
    fn tanh_matches_libm() {
        let mut worst = 0i64;
        for i in 0..400_000 {
            let x = i as f64 * 1e-4 - 20.0;
            let d = (tanh(x).to_bits() as i64 - x.tanh().to_bits() as i64).abs();
            worst = worst.max(d);
        }
        assert!(worst <= 4, "{worst} ulps");
        for x in [1e-300, 1e-9, 0.625, 0.6250001, 18.0, 50.0, 1e300] {
            assert!((tanh(x) - x.tanh()).abs() <= 4.0 * f64::EPSILON * x.tanh().abs());
            assert_eq!(tanh(-x), -tanh(x));
        }
        assert_eq!(tanh(0.0), 0.0);
        assert!(tanh(f64::NAN).is_nan());
    }

    #[test]
    fn norm_survives_tiny_entries() {
        let v = array![1e-200, 0.0];
        assert!(l2_norm(v.view()) > 0.0);
        assert_eq!(l2_norm(array![3.0, 4.0].view()), 5.0);
        assert_eq!(l2_norm(array![0.0, 0.0].view()), 0.0);
    }
}
