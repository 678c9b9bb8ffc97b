//! Linear-logistic latent class model for binary items.
//!
//! Item probabilities are `p_ji = logistic(sum_r q_jir * lambda_r + c_ji)` and
//! class sizes are `w_j = softmax_j(sum_r v_jr * eta_r + d_j)`. The manifest
//! distribution mixes the product-Bernoulli class-conditional distributions
//! over all `2^k` response patterns.
//!
//! Pattern `nu` (zero-based here) is the big-endian binary encoding of the
//! responses: item 1 is the most significant bit.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Largest item count accepted; the manifest distribution has `2^k` cells.
pub const MAX_ITEMS: usize = 24;

/// Constraint structure of a latent class model.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelSpec {
    /// Number of latent classes.
    pub m: usize,
    /// Number of binary items.
    pub k: usize,
    /// Number of item parameters (lambda).
    pub t: usize,
    /// Number of class-size parameters (eta).
    pub u: usize,
    /// `t` design matrices, each `m x k`.
    pub q: Vec<DMatrix<f64>>,
    /// `m x k` offsets for the item logits.
    pub c: DMatrix<f64>,
    /// `m x u` design matrix for the class logits.
    pub v: DMatrix<f64>,
    /// Length-`m` offsets for the class logits.
    pub d: DVector<f64>,
}

/// Outcome of [`ModelSpec::validate`]: empty when the spec is usable.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ValidationReport {
    pub violations: Vec<String>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

impl ModelSpec {
    /// Builds a spec and rejects it unless [`validate`](Self::validate) passes.
    pub fn new(
        q: Vec<DMatrix<f64>>,
        c: DMatrix<f64>,
        v: DMatrix<f64>,
        d: DVector<f64>,
    ) -> Result<Self> {
        let spec = ModelSpec {
            m: c.nrows(),
            k: c.ncols(),
            t: q.len(),
            u: v.ncols(),
            q,
            c,
            v,
            d,
        };
        spec.ensure_valid()?;
        Ok(spec)
    }

    /// Checks declared dimensions against the arrays and that every entry is finite.
    pub fn validate(&self) -> ValidationReport {
        let mut violations = Vec::new();
        let (m, k) = (self.m, self.k);
        if m == 0 {
            violations.push("m must be at least 1".to_string());
        }
        if k == 0 || k > MAX_ITEMS {
            violations.push(format!("k must lie in 1..={MAX_ITEMS}, got {k}"));
        }
        if self.t + self.u == 0 {
            violations.push("t + u must be at least 1".to_string());
        }
        if self.q.len() != self.t {
            violations.push(format!(
                "Q holds {} matrices but t = {}",
                self.q.len(),
                self.t
            ));
        }
        for (r, q) in self.q.iter().enumerate() {
            if q.shape() != (m, k) {
                violations.push(format!(
                    "Q[{}] is {}x{}, expected {m}x{k}",
                    r + 1,
                    q.nrows(),
                    q.ncols()
                ));
            }
            if q.iter().any(|x| !x.is_finite()) {
                violations.push(format!("Q[{}] has non-finite entries", r + 1));
            }
        }
        if self.c.shape() != (m, k) {
            violations.push(format!(
                "C is {}x{}, expected {m}x{k}",
                self.c.nrows(),
                self.c.ncols()
            ));
        }
        if self.c.iter().any(|x| !x.is_finite()) {
            violations.push("C has non-finite entries".to_string());
        }
        if self.v.shape() != (m, self.u) {
            violations.push(format!(
                "V is {}x{}, expected {m}x{}",
                self.v.nrows(),
                self.v.ncols(),
                self.u
            ));
        }
        if self.v.iter().any(|x| !x.is_finite()) {
            violations.push("V has non-finite entries".to_string());
        }
        if self.d.len() != m {
            violations.push(format!("d has length {}, expected {m}", self.d.len()));
        }
        if self.d.iter().any(|x| !x.is_finite()) {
            violations.push("d has non-finite entries".to_string());
        }
        ValidationReport { violations }
    }

    pub(crate) fn ensure_valid(&self) -> Result<()> {
        let report = self.validate();
        if report.is_ok() {
            Ok(())
        } else {
            Err(Error::InvalidSpec(report.violations))
        }
    }

    /// Number of free parameters, `t + u`.
    pub fn n_params(&self) -> usize {
        self.t + self.u
    }

    /// Number of response patterns, `2^k`.
    pub fn n_cells(&self) -> usize {
        1usize << self.k
    }

    fn check_theta(&self, theta: &ParameterVector) -> Result<()> {
        if theta.lambda.len() != self.t || theta.eta.len() != self.u {
            return Err(Error::Dimension(format!(
                "theta has {} lambda and {} eta entries, spec expects {} and {}",
                theta.lambda.len(),
                theta.eta.len(),
                self.t,
                self.u
            )));
        }
        if !theta.is_finite() {
            return Err(Error::InvalidInput("theta has non-finite entries".into()));
        }
        Ok(())
    }
}

/// Free parameters `theta = (lambda, eta)`.
#[derive(Debug, Clone, PartialEq)]
pub struct ParameterVector {
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
}

impl ParameterVector {
    pub fn new(lambda: Vec<f64>, eta: Vec<f64>) -> Self {
        ParameterVector { lambda, eta }
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        ParameterVector {
            lambda: vec![0.0; spec.t],
            eta: vec![0.0; spec.u],
        }
    }

    /// Splits a flat `(lambda_1..lambda_t, eta_1..eta_u)` slice.
    pub fn from_flat(t: usize, flat: &[f64]) -> Self {
        let (lambda, eta) = flat.split_at(t.min(flat.len()));
        ParameterVector {
            lambda: lambda.to_vec(),
            eta: eta.to_vec(),
        }
    }

    /// Flat ordering: `s_j = lambda_j` for `j <= t`, then `eta_{j-t}`.
    pub fn flat(&self) -> Vec<f64> {
        let mut s = Vec::with_capacity(self.len());
        s.extend_from_slice(&self.lambda);
        s.extend_from_slice(&self.eta);
        s
    }

    pub fn len(&self) -> usize {
        self.lambda.len() + self.eta.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn is_finite(&self) -> bool {
        self.lambda.iter().chain(&self.eta).all(|x| x.is_finite())
    }
}

/// A response pattern `y = (y_1, ..., y_k)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct ResponsePattern {
    pub bits: Vec<u8>,
}

impl ResponsePattern {
    /// Pattern for zero-based cell `index` among `2^k`.
    pub fn from_index(index: usize, k: usize) -> Self {
        let bits = (0..k).map(|i| ((index >> (k - 1 - i)) & 1) as u8).collect();
        ResponsePattern { bits }
    }

    /// Zero-based cell index; item 1 is the most significant bit.
    pub fn index(&self) -> usize {
        self.bits
            .iter()
            .fold(0usize, |acc, &b| (acc << 1) | usize::from(b != 0))
    }

    pub fn k(&self) -> usize {
        self.bits.len()
    }
}

/// Item probabilities `p_ji` with their linear predictors `x_ji`.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemProbabilityMatrix {
    pub p: DMatrix<f64>,
    pub x: DMatrix<f64>,
}

/// Class sizes `w_j` with their linear predictors `z_j`.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassWeightVector {
    pub w: DVector<f64>,
    pub z: DVector<f64>,
}

/// Probabilities of the `2^k` response patterns.
#[derive(Debug, Clone, PartialEq)]
pub struct ManifestDistribution {
    pub p: Vec<f64>,
}

impl ManifestDistribution {
    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

/// Pattern counts `N_nu` in canonical cell order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ObservedCounts {
    pub counts: Vec<u64>,
}

impl ObservedCounts {
    pub fn new(counts: Vec<u64>) -> Result<Self> {
        if !counts.len().is_power_of_two() {
            return Err(Error::Dimension(format!(
                "{} count cells is not a power of two",
                counts.len()
            )));
        }
        Ok(ObservedCounts { counts })
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }

    pub fn k(&self) -> usize {
        self.counts.len().trailing_zeros() as usize
    }

    pub fn empirical(&self) -> Result<crate::divergence::EmpiricalDistribution> {
        crate::divergence::EmpiricalDistribution::from_counts(self)
    }
}

/// Overflow-safe `exp(x) / (1 + exp(x))`.
pub fn logistic(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn item_probabilities(
    spec: &ModelSpec,
    theta: &ParameterVector,
) -> Result<ItemProbabilityMatrix> {
    spec.check_theta(theta)?;
    Ok(item_probabilities_unchecked(spec, &theta.lambda))
}

fn item_probabilities_unchecked(spec: &ModelSpec, lambda: &[f64]) -> ItemProbabilityMatrix {
    let mut x = spec.c.clone();
    for (q, &l) in spec.q.iter().zip(lambda) {
        if l != 0.0 {
            x.zip_apply(q, |xv, qv| *xv += l * qv);
        }
    }
    let p = x.map(logistic);
    ItemProbabilityMatrix { p, x }
}

pub fn class_weights(spec: &ModelSpec, theta: &ParameterVector) -> Result<ClassWeightVector> {
    spec.check_theta(theta)?;
    Ok(class_weights_unchecked(spec, &theta.eta))
}

fn class_weights_unchecked(spec: &ModelSpec, eta: &[f64]) -> ClassWeightVector {
    let z = &spec.v * DVector::from_column_slice(eta) + &spec.d;
    let zmax = z.max();
    let e = z.map(|zj| (zj - zmax).exp());
    let w = &e / e.sum();
    ClassWeightVector { w, z }
}

/// `Pr(y | class j) = prod_i p_ji^y_i (1 - p_ji)^(1 - y_i)`; `class` is zero-based.
pub fn conditional_pattern_prob(
    ip: &ItemProbabilityMatrix,
    class: usize,
    y: &ResponsePattern,
) -> Result<f64> {
    if class >= ip.p.nrows() {
        return Err(Error::InvalidInput(format!(
            "class index {class} out of range for {} classes",
            ip.p.nrows()
        )));
    }
    if y.k() != ip.p.ncols() {
        return Err(Error::Dimension(format!(
            "pattern has {} items, model has {}",
            y.k(),
            ip.p.ncols()
        )));
    }
    Ok(y.bits
        .iter()
        .enumerate()
        .map(|(i, &b)| {
            let p = ip.p[(class, i)];
            if b != 0 {
                p
            } else {
                1.0 - p
            }
        })
        .product())
}

/// Everything the objective and its gradient need at one parameter value.
#[derive(Debug, Clone)]
pub(crate) struct ModelEvaluation {
    pub ip: ItemProbabilityMatrix,
    pub cw: ClassWeightVector,
    /// Class-conditional pattern probabilities, row-major `m x 2^k`.
    pub cond: Vec<f64>,
    pub manifest: Vec<f64>,
}

impl ModelEvaluation {
    pub fn new(spec: &ModelSpec, theta: &ParameterVector) -> Result<Self> {
        spec.check_theta(theta)?;
        Ok(Self::from_flat(spec, &theta.flat()))
    }

    /// Flat-slice entry point used on optimizer hot paths; the caller
    /// guarantees the length.
    pub fn from_flat(spec: &ModelSpec, flat: &[f64]) -> Self {
        let (lambda, eta) = flat.split_at(spec.t);
        let ip = item_probabilities_unchecked(spec, lambda);
        let cw = class_weights_unchecked(spec, eta);
        let n = spec.n_cells();
        let mut cond = vec![0.0; spec.m * n];
        let mut manifest = vec![0.0; n];
        for j in 0..spec.m {
            let row = &mut cond[j * n..(j + 1) * n];
            // Append items from most to least significant bit.
            row[0] = 1.0;
            let mut len = 1;
            for i in 0..spec.k {
                let p = ip.p[(j, i)];
                for idx in (0..len).rev() {
                    let base = row[idx];
                    row[2 * idx] = base * (1.0 - p);
                    row[2 * idx + 1] = base * p;
                }
                len *= 2;
            }
            let wj = cw.w[j];
            for (mv, &c) in manifest.iter_mut().zip(row.iter()) {
                *mv += wj * c;
            }
        }
        ModelEvaluation {
            ip,
            cw,
            cond,
            manifest,
        }
    }

    /// Jacobian of the manifest cells, `2^k x (t + u)`.
    pub fn jacobian(&self, spec: &ModelSpec) -> DMatrix<f64> {
        let n = spec.n_cells();
        let mut jac = DMatrix::zeros(n, spec.n_params());
        // sum_i q_jir * p_ji for each (class, lambda)
        let mut qp = vec![0.0; spec.m * spec.t];
        for (r, q) in spec.q.iter().enumerate() {
            for j in 0..spec.m {
                qp[j * spec.t + r] = (0..spec.k).map(|i| q[(j, i)] * self.ip.p[(j, i)]).sum();
            }
        }
        let vbar: Vec<f64> = (0..spec.u)
            .map(|b| (0..spec.m).map(|h| self.cw.w[h] * spec.v[(h, b)]).sum())
            .collect();
        for j in 0..spec.m {
            let wj = self.cw.w[j];
            let row = &self.cond[j * n..(j + 1) * n];
            for (r, q) in spec.q.iter().enumerate() {
                let items: Vec<(usize, f64)> = (0..spec.k)
                    .filter_map(|i| {
                        let v = q[(j, i)];
                        (v != 0.0).then_some((i, v))
                    })
                    .collect();
                if items.is_empty() {
                    continue;
                }
                let offset = qp[j * spec.t + r];
                let mut col = jac.column_mut(r);
                for (nu, &c) in row.iter().enumerate() {
                    let qy: f64 = items
                        .iter()
                        .filter(|(i, _)| (nu >> (spec.k - 1 - i)) & 1 == 1)
                        .map(|(_, v)| v)
                        .sum();
                    col[nu] += wj * c * (qy - offset);
                }
            }
            for b in 0..spec.u {
                let factor = wj * (spec.v[(j, b)] - vbar[b]);
                if factor == 0.0 {
                    continue;
                }
                let mut col = jac.column_mut(spec.t + b);
                for (nu, &c) in row.iter().enumerate() {
                    col[nu] += factor * c;
                }
            }
        }
        jac
    }
}

pub fn manifest_distribution(
    spec: &ModelSpec,
    theta: &ParameterVector,
) -> Result<ManifestDistribution> {
    Ok(ManifestDistribution {
        p: ModelEvaluation::new(spec, theta)?.manifest,
    })
}

/// Analytic derivatives `d p_nu / d s_j` (rows are cells, columns parameters).
pub fn manifest_jacobian(spec: &ModelSpec, theta: &ParameterVector) -> Result<DMatrix<f64>> {
    Ok(ModelEvaluation::new(spec, theta)?.jacobian(spec))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn one_item_model() -> ModelSpec {
        ModelSpec::new(
            vec![DMatrix::from_element(1, 1, 1.0)],
            DMatrix::zeros(1, 1),
            DMatrix::zeros(1, 0),
            DVector::zeros(1),
        )
        .unwrap()
    }

    /// m = 2, k = 1, one free lambda per class, one eta shifting class 1.
    fn two_class_one_item() -> ModelSpec {
        ModelSpec::new(
            vec![
                DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
                DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            ],
            DMatrix::zeros(2, 1),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap()
    }

    fn logit(p: f64) -> f64 {
        (p / (1.0 - p)).ln()
    }

    #[test]
    fn minimal_model_validates() {
        assert!(one_item_model().validate().is_ok());
    }

    #[test]
    fn missing_q_matrix_is_reported() {
        let mut spec = two_class_one_item();
        spec.q.pop();
        let report = spec.validate();
        assert!(!report.is_ok());
        assert!(report.violations[0].contains("Q holds 1 matrices but t = 2"));
    }

    #[test]
    fn wrong_shape_and_nan_are_reported() {
        let mut spec = two_class_one_item();
        spec.q[1] = DMatrix::zeros(3, 1);
        spec.d[0] = f64::NAN;
        let v = spec.validate().violations;
        assert!(v.iter().any(|s| s.contains("Q[2] is 3x1")));
        assert!(v.iter().any(|s| s.contains("d has non-finite")));
    }

    #[test]
    fn item_probabilities_at_zero_are_one_half() {
        let spec = two_class_one_item();
        let ip = item_probabilities(&spec, &ParameterVector::zeros(&spec)).unwrap();
        assert!(ip.p.iter().all(|&p| p == 0.5));
    }

    #[test]
    fn logistic_of_ln3_is_three_quarters() {
        let spec = one_item_model();
        let theta = ParameterVector::new(vec![3f64.ln()], vec![]);
        let ip = item_probabilities(&spec, &theta).unwrap();
        assert_abs_diff_eq!(ip.p[(0, 0)], 0.75, epsilon = 1e-15);
    }

    #[test]
    fn logistic_does_not_overflow() {
        assert_eq!(logistic(-800.0), 0.0);
        assert_eq!(logistic(800.0), 1.0);
        assert!(logistic(-700.0) > 0.0);
    }

    #[test]
    fn class_weights_two_cell_softmax() {
        let spec = ModelSpec::new(
            vec![DMatrix::zeros(2, 1)],
            DMatrix::zeros(2, 1),
            DMatrix::identity(2, 2),
            DVector::zeros(2),
        )
        .unwrap();
        let theta = ParameterVector::new(vec![0.0], vec![3f64.ln(), 0.0]);
        let cw = class_weights(&spec, &theta).unwrap();
        assert_abs_diff_eq!(cw.w[0], 0.75, epsilon = 1e-15);
        assert_abs_diff_eq!(cw.w[1], 0.25, epsilon = 1e-15);

        let big = ParameterVector::new(vec![0.0], vec![1000.0, 0.0]);
        let cw = class_weights(&spec, &big).unwrap();
        assert_eq!(cw.w[0], 1.0);
    }

    #[test]
    fn uniform_softmax_for_four_classes() {
        let spec = ModelSpec::new(
            vec![DMatrix::zeros(4, 2)],
            DMatrix::zeros(4, 2),
            DMatrix::identity(4, 4),
            DVector::zeros(4),
        )
        .unwrap();
        let cw = class_weights(&spec, &ParameterVector::zeros(&spec)).unwrap();
        assert!(cw.w.iter().all(|&w| (w - 0.25).abs() < 1e-15));
    }

    #[test]
    fn theta_dimension_mismatch_is_an_error() {
        let spec = two_class_one_item();
        let theta = ParameterVector::new(vec![0.0], vec![0.0]);
        assert!(matches!(
            item_probabilities(&spec, &theta),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn conditional_pattern_probabilities() {
        let ip = ItemProbabilityMatrix {
            p: DMatrix::from_row_slice(1, 2, &[0.2, 0.6]),
            x: DMatrix::zeros(1, 2),
        };
        let y = ResponsePattern { bits: vec![1, 0] };
        assert_abs_diff_eq!(
            conditional_pattern_prob(&ip, 0, &y).unwrap(),
            0.08,
            epsilon = 1e-15
        );
        assert!(conditional_pattern_prob(&ip, 1, &y).is_err());

        let single = ItemProbabilityMatrix {
            p: DMatrix::from_element(1, 1, 0.2),
            x: DMatrix::zeros(1, 1),
        };
        let one = ResponsePattern { bits: vec![1] };
        let zero = ResponsePattern { bits: vec![0] };
        assert_abs_diff_eq!(conditional_pattern_prob(&single, 0, &one).unwrap(), 0.2);
        assert_abs_diff_eq!(conditional_pattern_prob(&single, 0, &zero).unwrap(), 0.8);

        let fair = ItemProbabilityMatrix {
            p: DMatrix::from_element(1, 2, 0.5),
            x: DMatrix::zeros(1, 2),
        };
        for idx in 0..4 {
            let y = ResponsePattern::from_index(idx, 2);
            assert_eq!(conditional_pattern_prob(&fair, 0, &y).unwrap(), 0.25);
        }
    }

    #[test]
    fn manifest_single_fair_item() {
        let spec = one_item_model();
        let p = manifest_distribution(&spec, &ParameterVector::zeros(&spec)).unwrap();
        assert_eq!(p.p, vec![0.5, 0.5]);
    }

    #[test]
    fn manifest_two_class_mixture_matches_enumeration() {
        let spec = two_class_one_item();
        let theta = ParameterVector::new(vec![logit(0.2), logit(0.6)], vec![0.0]);
        let p = manifest_distribution(&spec, &theta).unwrap();
        // 0.5 * 0.8 + 0.5 * 0.4 and 0.5 * 0.2 + 0.5 * 0.6
        assert_abs_diff_eq!(p.p[0], 0.6, epsilon = 1e-14);
        assert_abs_diff_eq!(p.p[1], 0.4, epsilon = 1e-14);
    }

    #[test]
    fn manifest_agrees_with_conditional_products() {
        let spec = ModelSpec::new(
            vec![
                DMatrix::from_row_slice(2, 3, &[1.0, 0.0, 1.0, 0.0, 1.0, 0.0]),
                DMatrix::from_row_slice(2, 3, &[0.0, 1.0, 0.0, 1.0, 0.0, 1.0]),
            ],
            DMatrix::from_row_slice(2, 3, &[0.1, -0.2, 0.3, 0.0, 0.5, -0.4]),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap();
        let theta = ParameterVector::new(vec![0.7, -1.1], vec![0.3]);
        let ip = item_probabilities(&spec, &theta).unwrap();
        let cw = class_weights(&spec, &theta).unwrap();
        let p = manifest_distribution(&spec, &theta).unwrap();
        for nu in 0..8 {
            let y = ResponsePattern::from_index(nu, 3);
            let direct: f64 = (0..2)
                .map(|j| cw.w[j] * conditional_pattern_prob(&ip, j, &y).unwrap())
                .sum();
            assert_abs_diff_eq!(p.p[nu], direct, epsilon = 1e-15);
        }
    }

    #[test]
    fn logistic_derivative_at_zero() {
        let spec = one_item_model();
        let jac = manifest_jacobian(&spec, &ParameterVector::zeros(&spec)).unwrap();
        assert_abs_diff_eq!(jac[(1, 0)], 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(jac[(0, 0)], -0.25, epsilon = 1e-15);
    }

    #[test]
    fn pattern_index_convention() {
        assert_eq!(ResponsePattern::from_index(1, 4).bits, vec![0, 0, 0, 1]);
        assert_eq!(ResponsePattern::from_index(8, 4).bits, vec![1, 0, 0, 0]);
        assert_eq!(
            ResponsePattern {
                bits: vec![0, 1, 1, 0]
            }
            .index(),
            6
        );
    }

    #[test]
    fn flat_round_trip() {
        let theta = ParameterVector::new(vec![1.0, 2.0, 3.0], vec![4.0]);
        assert_eq!(theta.flat(), vec![1.0, 2.0, 3.0, 4.0]);
        assert_eq!(ParameterVector::from_flat(3, &theta.flat()), theta);
    }
}
