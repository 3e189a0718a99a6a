//! Quick invariant and oracle checks behind `sparse-net check`.

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::data::{gen_synthetic, Dataset, SyntheticConfig};
use crate::net::{empirical_risk, forward, gradient, Activation, NetworkArch, NetworkParams};
use crate::optimizer::{fit, initialize_params, OptConfig, Trainable};
use crate::penalty::{prox_group, PenaltySpec};
use crate::rng;

#[derive(Debug, Clone)]
pub struct CheckOutcome {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl std::fmt::Display for CheckOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

const CHECK_STREAM: u64 = 0xC4EC;

pub fn run_all(seed: u64) -> Vec<CheckOutcome> {
    vec![
        gradient_check(seed, 25),
        prox_check(seed, 300),
        significance_check(seed),
        orthonormal_check(seed),
        monotone_check(seed),
        determinism_check(seed),
    ]
}

fn random_problem<R: Rng>(r: &mut R) -> (NetworkArch, NetworkParams, Dataset) {
    let n_hidden = r.random_range(1..=3);
    let mut widths = vec![r.random_range(1..=5)];
    widths.extend((0..n_hidden).map(|_| r.random_range(1..=5)));
    widths.push(1);
    let arch = NetworkArch::new(widths, Activation::Tanh).expect("valid widths");
    let mut params = NetworkParams::zeros(&arch);
    for v in params.iter_mut() {
        *v = r.random_range(-1.0..=1.0);
    }
    let n = r.random_range(1..=20);
    let d = arch.n_inputs();
    let x = Array2::from_shape_fn((n, d), |_| r.random_range(-1.0..=1.0));
    let y = Array1::from_shape_fn(n, |_| r.random_range(-1.0..=1.0));
    (arch, params, Dataset::new(x, y).expect("finite data"))
}

/// Largest violation of `|g - g_fd| <= 1e-5 (1 + |g_fd|)` over random nets.
pub fn gradient_check(seed: u64, instances: usize) -> CheckOutcome {
    let mut r = rng::stream(seed, CHECK_STREAM);
    let mut worst = 0.0_f64;
    for _ in 0..instances {
        let (arch, params, data) = random_problem(&mut r);
        let g = gradient(&arch, &params, &data).expect("consistent shapes").to_flat();
        let flat = params.to_flat();
        for (i, gi) in g.iter().enumerate() {
            let h = 1e-5;
            let mut plus = flat.clone();
            plus[i] += h;
            let mut minus = flat.clone();
            minus[i] -= h;
            let rp = empirical_risk(&arch, &NetworkParams::from_flat(&arch, &plus).unwrap(), &data)
                .unwrap();
            let rm =
                empirical_risk(&arch, &NetworkParams::from_flat(&arch, &minus).unwrap(), &data)
                    .unwrap();
            let fd = (rp - rm) / (2.0 * h);
            worst = worst.max((gi - fd).abs() / (1.0 + fd.abs()));
        }
    }
    CheckOutcome {
        name: "gradient vs finite differences",
        passed: worst <= 1e-5,
        detail: format!("{instances} instances, worst scaled error {worst:.2e}"),
    }
}

pub fn prox_check(seed: u64, instances: usize) -> CheckOutcome {
    let mut r = rng::stream(seed, CHECK_STREAM + 1);
    let mut worst_margin = f64::INFINITY;
    let mut nonzero_residue = 0usize;
    for _ in 0..instances {
        let u = [r.random_range(-1.0..1.0), r.random_range(-1.0..1.0)];
        let tau: f64 = r.random_range(0.0..1.5);
        let z = prox_group(ndarray::arr1(&u).view(), tau).expect("tau >= 0");
        let obj = |a: f64, b: f64| {
            0.5 * ((a - u[0]).powi(2) + (b - u[1]).powi(2)) + tau * a.hypot(b)
        };
        let best = obj(z[0], z[1]);
        let norm = u[0].hypot(u[1]);
        if norm <= tau && z.iter().any(|v| v.to_bits() != 0) {
            nonzero_residue += 1;
        }
        let steps = (2.0 * norm / 0.01).ceil() as i64;
        for i in -steps..=steps {
            for j in -steps..=steps {
                let cand = obj(i as f64 * 0.01, j as f64 * 0.01);
                worst_margin = worst_margin.min(cand - best);
            }
        }
    }
    CheckOutcome {
        name: "prox vs grid search",
        passed: worst_margin >= -1e-9 && nonzero_residue == 0,
        detail: format!(
            "{instances} instances, worst margin {worst_margin:.2e}, {nonzero_residue} nonzero residues"
        ),
    }
}

pub fn significance_check(seed: u64) -> CheckOutcome {
    let mut r = rng::stream(seed, CHECK_STREAM + 2);
    let mut violations = 0;
    for _ in 0..50 {
        let (arch, mut params, data) = random_problem(&mut r);
        let k = r.random_range(0..arch.n_inputs());
        params.zero_group(k);
        let mut x = data.x.row(0).to_vec();
        let base = forward(&arch, &params, &x).unwrap();
        x[k] = r.random_range(-1e3..1e3);
        if forward(&arch, &params, &x).unwrap() != base {
            violations += 1;
        }
    }
    CheckOutcome {
        name: "zero column means insignificant input",
        passed: violations == 0,
        detail: format!("{violations} violations in 50 trials"),
    }
}

pub fn orthonormal_check(seed: u64) -> CheckOutcome {
    let mut r = rng::stream(seed, CHECK_STREAM + 3);
    let (n, d) = (40, 4);
    let mut cols: Vec<Array1<f64>> = vec![Array1::ones(n)];
    while cols.len() < d + 1 {
        let mut v = Array1::from_shape_fn(n, |_| StandardNormal.sample(&mut r));
        for c in &cols {
            let proj = v.dot(c) / c.dot(c);
            v.scaled_add(-proj, c);
        }
        let norm = v.dot(&v).sqrt();
        cols.push(v * ((n as f64).sqrt() / norm));
    }
    let x = Array2::from_shape_fn((n, d), |(i, j)| cols[j + 1][i]);
    let beta = [1.2, -0.6, 0.25, 0.0];
    let y = Array1::from_shape_fn(n, |i| {
        let e: f64 = StandardNormal.sample(&mut r);
        0.3 + (0..d).map(|j| beta[j] * x[[i, j]]).sum::<f64>() + 0.1 * e
    });
    let ls: Vec<f64> = (0..d).map(|j| x.column(j).dot(&y) / n as f64).collect();
    let data = Dataset::new(x, y).unwrap();
    let arch = NetworkArch::new(vec![d, 1, 1], Activation::Identity).unwrap();
    let mut init = initialize_params(&arch, seed, None);
    init.layers[1].weights[[0, 0]] = 1.0;
    init.layers[1].bias[0] = 0.0;
    let cfg = OptConfig {
        epochs: 3000,
        initial_step: 0.1,
        trainable: Trainable::FirstLayerOnly,
        ..OptConfig::default()
    };
    let mut worst = 0.0_f64;
    for lambda in [0.01, 0.1, 0.5, 1.0] {
        let res = fit(&arch, &data, &PenaltySpec::group_lasso(d, lambda), &cfg, Some(init.clone()))
            .unwrap();
        for (k, b) in ls.iter().enumerate() {
            let expected = (b.abs() - lambda / 2.0).max(0.0);
            worst = worst.max((res.group_norms[k] - expected).abs());
        }
    }
    CheckOutcome {
        name: "orthonormal linear oracle",
        passed: worst <= 1e-4,
        detail: format!("worst group-norm error {worst:.2e}"),
    }
}

pub fn monotone_check(seed: u64) -> CheckOutcome {
    let cfg = SyntheticConfig {
        arch: NetworkArch::new(vec![6, 5, 5, 1], Activation::Tanh).unwrap(),
        n_features: 6,
        n_significant: 3,
        n_samples: 100,
        noise_sd: 0.5,
        input_low: -1.0,
        input_high: 1.0,
        seed,
    };
    let s = gen_synthetic(&cfg).unwrap();
    let res = fit(
        &cfg.arch,
        &s.data,
        &PenaltySpec::group_lasso(6, 0.05),
        &OptConfig {
            epochs: 2000,
            initial_step: 0.5,
            seed,
            ..OptConfig::default()
        },
        None,
    )
    .unwrap();
    let worst = res
        .objective_trace
        .windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::NEG_INFINITY, f64::max);
    CheckOutcome {
        name: "monotone objective",
        passed: worst <= 1e-12,
        detail: format!("largest per-epoch increase {worst:.2e}"),
    }
}

pub fn determinism_check(seed: u64) -> CheckOutcome {
    let cfg = SyntheticConfig {
        arch: NetworkArch::new(vec![5, 4, 1], Activation::Tanh).unwrap(),
        n_features: 5,
        n_significant: 2,
        n_samples: 50,
        noise_sd: 1.0,
        input_low: -1.0,
        input_high: 1.0,
        seed,
    };
    let a = gen_synthetic(&cfg).unwrap();
    let b = gen_synthetic(&cfg).unwrap();
    let opt = OptConfig {
        epochs: 200,
        seed,
        ..OptConfig::default()
    };
    let spec = PenaltySpec::group_lasso(5, 0.1);
    let fa = fit(&cfg.arch, &a.data, &spec, &opt, None).unwrap();
    let fb = fit(&cfg.arch, &b.data, &spec, &opt, None).unwrap();
    let same = a.data == b.data && fa == fb;
    CheckOutcome {
        name: "determinism",
        passed: same,
        detail: if same {
            "identical data and fits".into()
        } else {
            "repeat run differs".into()
        },
    }
}
