#![allow(dead_code)]

use lcmdiv::divergence::EmpiricalDistribution;
use lcmdiv::{ModelSpec, ParameterVector};
use nalgebra::{DMatrix, DVector};
use rand::Rng;

/// Random design with `m` classes and `k` items. Q entries are mostly
/// 0 or 1 with an occasional real weight, so designs look like the usual
/// indicator constraints without being degenerate.
pub fn random_spec<R: Rng>(rng: &mut R, m: usize, k: usize) -> ModelSpec {
    let t = rng.random_range(1..=6);
    let u = rng.random_range(0..m);
    let q = (0..t)
        .map(|_| {
            DMatrix::from_fn(m, k, |_, _| match rng.random_range(0..10) {
                0..=5 => 0.0,
                6..=8 => 1.0,
                _ => rng.random_range(-1.0..1.0),
            })
        })
        .collect();
    let c = DMatrix::from_fn(m, k, |_, _| rng.random_range(-0.5..0.5));
    let v = DMatrix::from_fn(m, u, |_, _| f64::from(rng.random_range(0..2u8)));
    let d = DVector::from_fn(m, |_, _| rng.random_range(-0.5..0.5));
    ModelSpec::new(q, c, v, d).expect("shapes agree by construction")
}

pub fn random_theta<R: Rng>(rng: &mut R, spec: &ModelSpec, radius: f64) -> ParameterVector {
    let flat: Vec<f64> = (0..spec.n_params())
        .map(|_| rng.random_range(-radius..radius))
        .collect();
    ParameterVector::from_flat(spec.t, &flat)
}

/// Strictly positive probability vector.
pub fn random_simplex<R: Rng>(rng: &mut R, len: usize) -> Vec<f64> {
    let raw: Vec<f64> = (0..len).map(|_| rng.random_range(0.05..1.0)).collect();
    let s: f64 = raw.iter().sum();
    raw.into_iter().map(|x| x / s).collect()
}

pub fn random_empirical<R: Rng>(rng: &mut R, len: usize) -> EmpiricalDistribution {
    EmpiricalDistribution::new(random_simplex(rng, len)).expect("valid simplex")
}

/// Central differences of a vector-valued map, one column per coordinate.
pub fn central_jacobian<F: Fn(&[f64]) -> Vec<f64>>(f: F, x: &[f64], h: f64) -> DMatrix<f64> {
    let rows = f(x).len();
    let mut out = DMatrix::zeros(rows, x.len());
    let mut xp = x.to_vec();
    for j in 0..x.len() {
        xp[j] = x[j] + h;
        let fp = f(&xp);
        xp[j] = x[j] - h;
        let fm = f(&xp);
        xp[j] = x[j];
        for i in 0..rows {
            out[(i, j)] = (fp[i] - fm[i]) / (2.0 * h);
        }
    }
    out
}

pub fn relative_error(exact: &DMatrix<f64>, approx: &DMatrix<f64>) -> f64 {
    let scale = exact.norm().max(approx.norm());
    if scale == 0.0 {
        0.0
    } else {
        (exact - approx).norm() / scale
    }
}

/// Two classes, three items, one free item logit per cell and one weight contrast.
pub fn two_class_spec() -> ModelSpec {
    let q = (0..6)
        .map(|r| {
            let mut q = DMatrix::zeros(2, 3);
            q[(r / 3, r % 3)] = 1.0;
            q
        })
        .collect();
    ModelSpec::new(
        q,
        DMatrix::zeros(2, 3),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
        DVector::zeros(2),
    )
    .expect("valid spec")
}

pub fn two_class_theta() -> ParameterVector {
    ParameterVector::new(vec![-1.5, -1.0, -0.5, 1.0, 1.5, 0.8], vec![0.4])
}
