//! Reference implementations used as test oracles. They share no code with
//! the library's batched passes.
#![allow(dead_code)]

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use sparse_net::{Activation, Dataset, NetworkArch, NetworkParams};

/// Scalar forward pass written out with plain loops and `f64::tanh`.
pub fn naive_output(arch: &NetworkArch, params: &NetworkParams, x: &[f64]) -> f64 {
    let last = params.layers.len() - 1;
    let mut h = x.to_vec();
    for (j, layer) in params.layers.iter().enumerate() {
        let (rows, cols) = layer.weights.dim();
        let mut next = vec![0.0; rows];
        for o in 0..rows {
            let mut z = layer.bias[o];
            for i in 0..cols {
                z += layer.weights[[o, i]] * h[i];
            }
            next[o] = if j < last && arch.activation == Activation::Tanh {
                z.tanh()
            } else {
                z
            };
        }
        h = next;
    }
    h[0]
}

pub fn naive_risk(arch: &NetworkArch, params: &NetworkParams, data: &Dataset) -> f64 {
    let n = data.n_samples();
    (0..n)
        .map(|i| {
            let x = data.x.row(i).to_vec();
            let r = naive_output(arch, params, &x) - data.y[i];
            r * r
        })
        .sum::<f64>()
        / n as f64
}

/// Central differences of [`naive_risk`] for every parameter, in layer order
/// (weights row-major, then biases).
pub fn finite_difference_gradient(
    arch: &NetworkArch,
    params: &NetworkParams,
    data: &Dataset,
    h: f64,
) -> Vec<f64> {
    let mut out = Vec::new();
    let mut p = params.clone();
    for j in 0..p.layers.len() {
        let (rows, cols) = p.layers[j].weights.dim();
        for o in 0..rows {
            for i in 0..cols {
                let v = p.layers[j].weights[[o, i]];
                p.layers[j].weights[[o, i]] = v + h;
                let up = naive_risk(arch, &p, data);
                p.layers[j].weights[[o, i]] = v - h;
                let down = naive_risk(arch, &p, data);
                p.layers[j].weights[[o, i]] = v;
                out.push((up - down) / (2.0 * h));
            }
        }
        for o in 0..rows {
            let v = p.layers[j].bias[o];
            p.layers[j].bias[o] = v + h;
            let up = naive_risk(arch, &p, data);
            p.layers[j].bias[o] = v - h;
            let down = naive_risk(arch, &p, data);
            p.layers[j].bias[o] = v;
            out.push((up - down) / (2.0 * h));
        }
    }
    out
}

pub fn flatten(params: &NetworkParams) -> Vec<f64> {
    params
        .layers
        .iter()
        .flat_map(|l| l.weights.iter().chain(l.bias.iter()).copied().collect::<Vec<_>>())
        .collect()
}

/// Random small problem: widths in `1..=5`, one to three hidden layers.
pub fn random_problem<R: Rng>(r: &mut R, n_max: usize) -> (NetworkArch, NetworkParams, Dataset) {
    let hidden = r.random_range(1..=3);
    let mut widths = vec![r.random_range(1..=5)];
    widths.extend((0..hidden).map(|_| r.random_range(1..=5)));
    widths.push(1);
    let arch = NetworkArch::new(widths, Activation::Tanh).unwrap();
    let mut params = NetworkParams::zeros(&arch);
    for v in params.iter_mut() {
        *v = r.random_range(-1.0..=1.0);
    }
    let n = r.random_range(1..=n_max);
    let d = arch.n_inputs();
    let x = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..=1.0));
    let y = Array1::from_shape_fn(n, |_| r.random_range(-2.0..=2.0));
    (arch, params, Dataset::new(x, y).unwrap())
}

/// Design with `X^T X = n I` and columns orthogonal to the intercept.
pub fn orthonormal_design<R: Rng>(r: &mut R, n: usize, d: usize) -> Array2<f64> {
    let mut basis: Vec<Vec<f64>> = vec![vec![1.0; n]];
    while basis.len() < d + 1 {
        let mut v: Vec<f64> = (0..n).map(|_| StandardNormal.sample(r)).collect();
        // two Gram-Schmidt passes keep the columns orthogonal to rounding
        for _ in 0..2 {
            for b in &basis {
                let proj = dot(&v, b) / dot(b, b);
                for (vi, bi) in v.iter_mut().zip(b) {
                    *vi -= proj * bi;
                }
            }
        }
        let scale = (n as f64 / dot(&v, &v)).sqrt();
        basis.push(v.iter().map(|x| x * scale).collect());
    }
    Array2::from_shape_fn((n, d), |(i, j)| basis[j + 1][i])
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Solves `A x = b` by Gaussian elimination with partial pivoting.
pub fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for c in 0..n {
        let p = (c..n)
            .max_by(|&i, &j| a[i][c].abs().total_cmp(&a[j][c].abs()))
            .unwrap();
        a.swap(c, p);
        b.swap(c, p);
        for r in c + 1..n {
            let f = a[r][c] / a[c][c];
            for k in c..n {
                a[r][k] -= f * a[c][k];
            }
            b[r] -= f * b[c];
        }
    }
    let mut x = vec![0.0; n];
    for r in (0..n).rev() {
        let s: f64 = (r + 1..n).map(|k| a[r][k] * x[k]).sum();
        x[r] = (b[r] - s) / a[r][r];
    }
    x
}
