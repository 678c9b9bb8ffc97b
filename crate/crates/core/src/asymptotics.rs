//! Large-sample covariance of minimum phi-divergence estimators.
//!
//! With `J` the manifest Jacobian and `A = D_p^{-1/2} J`, every estimator in
//! the family has asymptotic covariance `(A^T A)^{-1} / N` for the parameters
//! and `J (A^T A)^{-1} J^T / N` for the fitted manifest probabilities.
//! `A^T A` is the Fisher information of one multinomial draw.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ModelEvaluation, ModelSpec, ParameterVector};

/// Checkable regularity conditions at a parameter value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BirchDiagnostics {
    /// Smallest manifest cell probability (positivity condition).
    pub min_cell_probability: f64,
    /// Numerical rank of the Jacobian.
    pub rank: usize,
    /// Number of free parameters `t + u`.
    pub parameters: usize,
    /// Singular values of the Jacobian in decreasing order.
    pub singular_values: Vec<f64>,
    /// `sigma_max / sigma_min`; infinite (written as `null`) when a singular value is zero.
    #[serde(with = "infinite_as_null")]
    pub condition_number: f64,
    /// Rank cutoff `max(2^k, t + u) * eps * sigma_max`.
    pub rank_tolerance: f64,
    /// Smoothness of `theta -> p(theta)`; holds for every linear-logistic model.
    pub differentiable: bool,
    /// Continuity of the inverse map; holds by construction once the rank is full.
    pub continuous_inverse: bool,
}

impl BirchDiagnostics {
    pub fn interior(&self) -> bool {
        self.min_cell_probability > 0.0
    }

    pub fn full_rank(&self) -> bool {
        self.rank == self.parameters
    }

    pub fn satisfied(&self) -> bool {
        self.interior() && self.full_rank()
    }
}

mod infinite_as_null {
    use serde::{Deserialize, Deserializer, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            s.serialize_f64(*v)
        } else {
            s.serialize_none()
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        Ok(Option::<f64>::deserialize(d)?.unwrap_or(f64::INFINITY))
    }
}

pub fn birch_diagnostics(spec: &ModelSpec, theta: &ParameterVector) -> Result<BirchDiagnostics> {
    let eval = ModelEvaluation::new(spec, theta)?;
    let jac = eval.jacobian(spec);
    Ok(diagnostics_from(spec, &eval.manifest, &jac))
}

fn diagnostics_from(spec: &ModelSpec, manifest: &[f64], jac: &DMatrix<f64>) -> BirchDiagnostics {
    let min_cell_probability = manifest.iter().copied().fold(f64::INFINITY, f64::min);
    let mut singular_values: Vec<f64> = jac.clone().singular_values().iter().copied().collect();
    singular_values.sort_by(|a, b| b.total_cmp(a));
    let sigma_max = singular_values.first().copied().unwrap_or(0.0);
    let rank_tolerance = spec.n_cells().max(spec.n_params()) as f64 * f64::EPSILON * sigma_max;
    let rank = singular_values
        .iter()
        .filter(|&&s| s > rank_tolerance)
        .count();
    let sigma_min = singular_values.last().copied().unwrap_or(0.0);
    let condition_number = if sigma_min > 0.0 {
        sigma_max / sigma_min
    } else {
        f64::INFINITY
    };
    BirchDiagnostics {
        min_cell_probability,
        rank,
        parameters: spec.n_params(),
        singular_values,
        condition_number,
        rank_tolerance,
        differentiable: true,
        continuous_inverse: rank == spec.n_params(),
    }
}

fn scaled_jacobian(manifest: &[f64], jac: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(cell) = manifest.iter().position(|&p| !(p > 0.0)) {
        return Err(Error::ZeroModelCell { cell });
    }
    let mut a = jac.clone();
    for (mut row, &p) in a.row_iter_mut().zip(manifest) {
        row /= p.sqrt();
    }
    Ok(a)
}

/// `A^T A` with `A = D_p^{-1/2} J`.
pub fn information_matrix(spec: &ModelSpec, theta: &ParameterVector) -> Result<DMatrix<f64>> {
    let eval = ModelEvaluation::new(spec, theta)?;
    let a = scaled_jacobian(&eval.manifest, &eval.jacobian(spec))?;
    Ok(symmetrize(a.transpose() * &a))
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    (&m + m.transpose()) * 0.5
}

/// Inverse of the information matrix through Cholesky; rank-deficient
/// matrices are reported, never regularized.
fn invert_information(info: &DMatrix<f64>, diagnostics: &BirchDiagnostics) -> Result<DMatrix<f64>> {
    if !diagnostics.full_rank() {
        return Err(Error::RankDeficient(Box::new(diagnostics.clone())));
    }
    let chol = info
        .clone()
        .cholesky()
        .ok_or_else(|| Error::RankDeficient(Box::new(diagnostics.clone())))?;
    Ok(symmetrize(chol.inverse()))
}

/// Parameter covariance `(A^T A)^{-1} / N` and its standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterCovariance {
    pub covariance: DMatrix<f64>,
    pub standard_errors: Vec<f64>,
}

pub fn parameter_covariance(
    spec: &ModelSpec,
    theta: &ParameterVector,
    n: u64,
) -> Result<ParameterCovariance> {
    let report = asymptotics_report(spec, theta, n)?;
    Ok(ParameterCovariance {
        covariance: report.param_cov,
        standard_errors: report.se,
    })
}

/// `J (A^T A)^{-1} J^T / N`, the covariance of `p(theta_hat)`.
pub fn manifest_covariance(
    spec: &ModelSpec,
    theta: &ParameterVector,
    n: u64,
) -> Result<DMatrix<f64>> {
    Ok(asymptotics_report(spec, theta, n)?.manifest_cov)
}

/// Everything the asymptotic theory provides at one parameter value.
#[derive(Debug, Clone, PartialEq)]
pub struct AsymptoticsReport {
    /// Sample size used for the finite-sample scaling.
    pub n: u64,
    pub jacobian: DMatrix<f64>,
    /// `D_p^{-1/2} J`.
    pub a_matrix: DMatrix<f64>,
    pub information: DMatrix<f64>,
    /// `(A^T A)^{-1}`, the covariance of `sqrt(N)(theta_hat - theta_0)`.
    pub param_cov_unscaled: DMatrix<f64>,
    pub param_cov: DMatrix<f64>,
    pub se: Vec<f64>,
    pub manifest_cov_unscaled: DMatrix<f64>,
    pub manifest_cov: DMatrix<f64>,
    pub birch: BirchDiagnostics,
}

pub fn asymptotics_report(
    spec: &ModelSpec,
    theta: &ParameterVector,
    n: u64,
) -> Result<AsymptoticsReport> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    let eval = ModelEvaluation::new(spec, theta)?;
    let jac = eval.jacobian(spec);
    let birch = diagnostics_from(spec, &eval.manifest, &jac);
    let a = scaled_jacobian(&eval.manifest, &jac)?;
    let information = symmetrize(a.transpose() * &a);
    let param_cov_unscaled = invert_information(&information, &birch)?;
    let scale = 1.0 / n as f64;
    let param_cov = &param_cov_unscaled * scale;
    let se = param_cov
        .diagonal()
        .iter()
        .map(|v| v.max(0.0).sqrt())
        .collect();
    let manifest_cov_unscaled = symmetrize(&jac * &param_cov_unscaled * jac.transpose());
    let manifest_cov = &manifest_cov_unscaled * scale;
    Ok(AsymptoticsReport {
        n,
        jacobian: jac,
        a_matrix: a,
        information,
        param_cov_unscaled,
        param_cov,
        se,
        manifest_cov_unscaled,
        manifest_cov,
        birch,
    })
}

/// `sqrt(p)^T A`, which is the column sums of `J`; zero because the cells sum to one.
pub fn left_null_residual(report: &AsymptoticsReport, manifest: &[f64]) -> DVector<f64> {
    let sqrt_p = DVector::from_iterator(manifest.len(), manifest.iter().map(|p| p.sqrt()));
    (report.a_matrix.transpose() * sqrt_p).into_owned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use nalgebra::{DMatrix, DVector};

    fn scalar_logistic() -> ModelSpec {
        ModelSpec::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 0),
            DVector::zeros(1),
        )
        .unwrap()
    }

    #[test]
    fn infinite_condition_number_survives_json() {
        let d = BirchDiagnostics {
            min_cell_probability: 0.1,
            rank: 0,
            parameters: 1,
            singular_values: vec![0.0],
            condition_number: f64::INFINITY,
            rank_tolerance: 0.0,
            differentiable: true,
            continuous_inverse: false,
        };
        let text = serde_json::to_string(&d).unwrap();
        assert!(text.contains("\"condition_number\":null"));
        assert_eq!(serde_json::from_str::<BirchDiagnostics>(&text).unwrap(), d);
    }

    #[test]
    fn scalar_information_and_covariance() {
        let spec = scalar_logistic();
        let theta = ParameterVector::zeros(&spec);
        let info = information_matrix(&spec, &theta).unwrap();
        // 2 * 0.25^2 / 0.5
        assert_abs_diff_eq!(info[(0, 0)], 0.25, epsilon = 1e-15);

        let cov = parameter_covariance(&spec, &theta, 1000).unwrap();
        assert_abs_diff_eq!(cov.covariance[(0, 0)], 0.004, epsilon = 1e-15);
        assert_abs_diff_eq!(cov.standard_errors[0], 0.004f64.sqrt(), epsilon = 1e-15);

        let half = parameter_covariance(&spec, &theta, 2000).unwrap();
        assert_abs_diff_eq!(
            half.covariance[(0, 0)] * 2.0,
            cov.covariance[(0, 0)],
            epsilon = 1e-18
        );

        let mcov = manifest_covariance(&spec, &theta, 1000).unwrap();
        assert_abs_diff_eq!(mcov[(0, 0)], 0.00025, epsilon = 1e-15);
        assert_abs_diff_eq!(mcov[(0, 1)], -0.00025, epsilon = 1e-15);
    }

    #[test]
    fn scalar_birch_diagnostics() {
        let spec = scalar_logistic();
        let d = birch_diagnostics(&spec, &ParameterVector::zeros(&spec)).unwrap();
        assert_eq!(d.rank, 1);
        assert_eq!(d.min_cell_probability, 0.5);
        assert!(d.satisfied());
    }

    #[test]
    fn duplicated_predictor_is_rank_deficient() {
        let q = DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]);
        let spec = ModelSpec::new(
            vec![q.clone(), q],
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let theta = ParameterVector::new(vec![0.3, -0.2], vec![0.1]);
        let d = birch_diagnostics(&spec, &theta).unwrap();
        assert!(d.rank < 3);
        assert!(!d.full_rank());
        assert!(matches!(
            parameter_covariance(&spec, &theta, 100),
            Err(Error::RankDeficient(_))
        ));
    }

    #[test]
    fn zero_sample_size_is_rejected() {
        let spec = scalar_logistic();
        assert!(asymptotics_report(&spec, &ParameterVector::zeros(&spec), 0).is_err());
    }
}
