//! Comparing parameter vectors that describe the same distribution.
//!
//! Relabelling the latent classes, or moving along directions the design
//! matrices cannot see, changes `(lambda, eta)` without changing the manifest
//! distribution. [`align_to_reference`] picks, among all such equivalent
//! vectors, the one closest to a reference so estimates can be compared
//! coordinate by coordinate.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};
use crate::model::{class_weights, item_probabilities, ModelSpec, ParameterVector};

/// Class relabellings are enumerated up to this many classes.
pub const MAX_PERMUTED_CLASSES: usize = 8;

/// An equivalent parameter vector and the relabelling that produced it.
#[derive(Debug, Clone, PartialEq)]
pub struct Alignment {
    pub theta: ParameterVector,
    /// New class `j` is old class `permutation[j]`.
    pub permutation: Vec<usize>,
    pub distance: f64,
}

fn permutations(m: usize) -> Vec<Vec<usize>> {
    fn rec(prefix: &mut Vec<usize>, used: &mut [bool], out: &mut Vec<Vec<usize>>) {
        if prefix.len() == used.len() {
            out.push(prefix.clone());
            return;
        }
        for i in 0..used.len() {
            if !used[i] {
                used[i] = true;
                prefix.push(i);
                rec(prefix, used, out);
                prefix.pop();
                used[i] = false;
            }
        }
    }
    let mut out = Vec::new();
    rec(&mut Vec::with_capacity(m), &mut vec![false; m], &mut out);
    out
}

/// Orthonormal basis of the null space of `a`, as columns.
fn null_space(a: &DMatrix<f64>) -> DMatrix<f64> {
    let n = a.ncols();
    let ata = a.transpose() * a;
    let eig = SymmetricEigen::new(ata);
    let top = eig.eigenvalues.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let tol = 1e-10 * top.max(1.0);
    let cols: Vec<DVector<f64>> = (0..n)
        .filter(|&i| eig.eigenvalues[i].abs() <= tol)
        .map(|i| eig.eigenvectors.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(n, 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

/// Orthonormal basis of the column space of `a`.
fn range_basis(a: &DMatrix<f64>) -> DMatrix<f64> {
    if a.ncols() == 0 {
        return DMatrix::zeros(a.nrows(), 0);
    }
    let svd = a.clone().svd(true, false);
    let u = svd.u.expect("requested U");
    let top = svd.singular_values.iter().fold(0.0f64, |m, v| m.max(*v));
    let cols: Vec<DVector<f64>> = (0..svd.singular_values.len())
        .filter(|&i| svd.singular_values[i] > 1e-10 * top.max(1.0))
        .map(|i| u.column(i).into_owned())
        .collect();
    if cols.is_empty() {
        DMatrix::zeros(a.nrows(), 0)
    } else {
        DMatrix::from_columns(&cols)
    }
}

fn least_squares(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if a.ncols() == 0 {
        return Some(DVector::zeros(0));
    }
    a.clone().svd(true, true).solve(b, 1e-12).ok()
}

/// Moves `x` along the span of `basis` toward `target`.
fn shift_toward(x: &DVector<f64>, basis: &DMatrix<f64>, target: &DVector<f64>) -> DVector<f64> {
    if basis.ncols() == 0 {
        return x.clone();
    }
    x + basis * (basis.transpose() * (target - x))
}

/// Finds the parameter vector equivalent to `theta` that lies closest to
/// `reference` in Euclidean distance.
///
/// Candidates come from every relabelling of the classes (when there are at
/// most [`MAX_PERMUTED_CLASSES`] of them) that the design can express, each
/// shifted along the directions that leave the item probabilities and class
/// weights unchanged.
pub fn align_to_reference(
    spec: &ModelSpec,
    theta: &ParameterVector,
    reference: &ParameterVector,
) -> Result<Alignment> {
    spec.ensure_valid()?;
    if reference.lambda.len() != spec.t || reference.eta.len() != spec.u {
        return Err(Error::Dimension("reference does not match the spec".into()));
    }
    let ip = item_probabilities(spec, theta)?;
    let cw = class_weights(spec, theta)?;
    let (m, k) = (spec.m, spec.k);

    // vec(sum_r q_r lambda_r) = g * lambda, row index j * k + i
    let g = DMatrix::from_fn(m * k, spec.t, |row, r| spec.q[r][(row / k, row % k)]);
    let mut vd = DMatrix::zeros(m, spec.u + 1);
    vd.view_mut((0, 0), (m, spec.u)).copy_from(&spec.v);
    vd.column_mut(spec.u).fill(1.0);

    let lambda_gauge = null_space(&g);
    let eta_null = null_space(&vd);
    let eta_gauge = range_basis(&eta_null.rows(0, spec.u).into_owned());

    let lambda_ref = DVector::from_column_slice(&reference.lambda);
    let eta_ref = DVector::from_column_slice(&reference.eta);

    let perms = if m <= MAX_PERMUTED_CLASSES {
        permutations(m)
    } else {
        vec![(0..m).collect()]
    };

    let mut best: Option<Alignment> = None;
    for perm in perms {
        let x = DVector::from_fn(m * k, |row, _| {
            ip.x[(perm[row / k], row % k)] - spec.c[(row / k, row % k)]
        });
        let z = DVector::from_fn(m, |j, _| cw.z[perm[j]] - spec.d[j]);
        let Some(lambda) = least_squares(&g, &x) else {
            continue;
        };
        let Some(sol) = least_squares(&vd, &z) else {
            continue;
        };
        let tol_x = 1e-8 * x.amax().max(1.0);
        let tol_z = 1e-8 * z.amax().max(1.0);
        if (&g * &lambda - &x).amax() > tol_x || (&vd * &sol - &z).amax() > tol_z {
            continue;
        }
        let eta = sol.rows(0, spec.u).into_owned();
        let lambda = shift_toward(&lambda, &lambda_gauge, &lambda_ref);
        let eta = shift_toward(&eta, &eta_gauge, &eta_ref);
        let distance =
            ((&lambda - &lambda_ref).norm_squared() + (&eta - &eta_ref).norm_squared()).sqrt();
        if best.as_ref().is_none_or(|b| distance < b.distance) {
            best = Some(Alignment {
                theta: ParameterVector::new(
                    lambda.iter().copied().collect(),
                    eta.iter().copied().collect(),
                ),
                permutation: perm,
                distance,
            });
        }
    }
    best.ok_or_else(|| Error::InvalidInput("no relabelling reproduces the parameter vector".into()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::manifest_distribution;
    use nalgebra::{DMatrix, DVector};

    fn symmetric_spec() -> ModelSpec {
        // two classes with free item logits and a free weight contrast
        let mut q = Vec::new();
        for r in 0..4 {
            let mut m = DMatrix::zeros(2, 2);
            m[(r / 2, r % 2)] = 1.0;
            q.push(m);
        }
        ModelSpec::new(
            q,
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]),
            DVector::zeros(2),
        )
        .unwrap()
    }

    #[test]
    fn swapped_classes_are_mapped_back() {
        let spec = symmetric_spec();
        let theta = ParameterVector::new(vec![1.0, -1.0, 0.5, 2.0], vec![0.3, -0.2]);
        let swapped = ParameterVector::new(vec![0.5, 2.0, 1.0, -1.0], vec![-0.2 + 4.0, 0.3 + 4.0]);
        let al = align_to_reference(&spec, &swapped, &theta).unwrap();
        assert_eq!(al.permutation, vec![1, 0]);
        assert!(al.distance < 1e-9);
        let p0 = manifest_distribution(&spec, &theta).unwrap();
        let p1 = manifest_distribution(&spec, &al.theta).unwrap();
        for (a, b) in p0.p.iter().zip(&p1.p) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn identity_is_kept_when_closest() {
        let spec = symmetric_spec();
        let theta = ParameterVector::new(vec![1.0, -1.0, 0.5, 2.0], vec![0.3, -0.2]);
        let al = align_to_reference(&spec, &theta, &theta).unwrap();
        assert_eq!(al.permutation, vec![0, 1]);
        assert!(al.distance < 1e-9);
    }

    #[test]
    fn permutation_count() {
        assert_eq!(permutations(4).len(), 24);
        assert_eq!(permutations(1), vec![vec![0]]);
    }
}
