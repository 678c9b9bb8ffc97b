//! Phi-divergences between the empirical and the model manifest distribution.
//!
//! `D_phi(p_hat, p) = sum_nu p_nu * phi(p_hat_nu / p_nu)` for convex `phi` with
//! `phi(1) = 0`. Empty cells follow `0 * phi(0/0) = 0` and
//! `0 * phi(q/0) = q * lim_{x->inf} phi(x)/x`. The power-divergence family
//! indexed by `a` contains Kullback-Leibler (`a = 0`, the likelihood objective)
//! and its reverse (`a = -1`).

use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::model::{
    ManifestDistribution, ModelEvaluation, ModelSpec, ObservedCounts, ParameterVector,
};

/// Family indices closer than this to 0 or -1 use the exact limit branch.
pub const BRANCH_EPS: f64 = 1e-9;

type ScalarFn = Arc<dyn Fn(f64) -> f64 + Send + Sync>;

/// A convex generator `phi` together with its derivatives and boundary limits.
#[derive(Clone)]
pub struct PhiFunction {
    name: String,
    value: ScalarFn,
    d1: ScalarFn,
    d2: ScalarFn,
    /// `lim_{x -> 0+} phi(x)`, possibly infinite.
    at_zero: f64,
    /// `lim_{x -> inf} phi(x) / x`, possibly infinite.
    limit_slope: f64,
}

impl fmt::Debug for PhiFunction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("PhiFunction")
            .field("name", &self.name)
            .field("at_zero", &self.at_zero)
            .field("limit_slope", &self.limit_slope)
            .finish()
    }
}

impl PhiFunction {
    /// Builds a generator from closures. `at_zero` and `limit_slope` are the
    /// boundary limits used for empty cells.
    pub fn new(
        name: impl Into<String>,
        value: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d1: impl Fn(f64) -> f64 + Send + Sync + 'static,
        d2: impl Fn(f64) -> f64 + Send + Sync + 'static,
        at_zero: f64,
        limit_slope: f64,
    ) -> Self {
        PhiFunction {
            name: name.into(),
            value: Arc::new(value),
            d1: Arc::new(d1),
            d2: Arc::new(d2),
            at_zero,
            limit_slope,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// `phi(x)` for `x >= 0`; `x = 0` returns the right limit.
    pub fn value(&self, x: f64) -> f64 {
        if x == 0.0 {
            self.at_zero
        } else {
            (self.value)(x)
        }
    }

    pub fn derivative(&self, x: f64) -> f64 {
        (self.d1)(x)
    }

    pub fn second_derivative(&self, x: f64) -> f64 {
        (self.d2)(x)
    }

    pub fn at_zero(&self) -> f64 {
        self.at_zero
    }

    pub fn limit_slope(&self) -> f64 {
        self.limit_slope
    }

    /// `phi(r) - r phi'(r)`, the weight of `d p_nu / d s_j` in the gradient.
    /// At `r = 0` this is `phi(0)`; generators whose `x phi'(x)` does not
    /// vanish at 0 are outside what the gradient supports.
    pub fn gradient_weight(&self, r: f64) -> f64 {
        if r == 0.0 {
            self.at_zero
        } else {
            (self.value)(r) - r * (self.d1)(r)
        }
    }

    /// Checks `phi(1) = 0` and `phi'' >= 0` on 100 log-spaced points in `[1e-6, 1e6]`.
    pub fn check_generator(&self) -> std::result::Result<(), String> {
        let at_one = (self.value)(1.0);
        if at_one.abs() > 1e-14 {
            return Err(format!("phi(1) = {at_one:e}, expected 0"));
        }
        for s in 0..100 {
            let x = 10f64.powf(-6.0 + 12.0 * s as f64 / 99.0);
            let curv = (self.d2)(x);
            if curv < 0.0 || curv.is_nan() {
                return Err(format!("phi''({x:e}) = {curv:e} is negative"));
            }
        }
        Ok(())
    }

    /// `psi(x) = phi(x) - phi'(1)(x - 1)`: same divergence, `psi'(1) = 0`, `psi >= 0`.
    pub fn normalized(&self) -> PhiFunction {
        let slope = (self.d1)(1.0);
        if slope == 0.0 {
            return self.clone();
        }
        let value = Arc::clone(&self.value);
        let d1 = Arc::clone(&self.d1);
        let d2 = Arc::clone(&self.d2);
        PhiFunction {
            name: format!("{} (normalized)", self.name),
            value: Arc::new(move |x| value(x) - slope * (x - 1.0)),
            d1: Arc::new(move |x| d1(x) - slope),
            d2: Arc::new(move |x| d2(x)),
            at_zero: self.at_zero + slope,
            limit_slope: self.limit_slope - slope,
        }
    }
}

/// Free-function form of [`PhiFunction::normalized`].
pub fn phi_normalize(phi: &PhiFunction) -> PhiFunction {
    phi.normalized()
}

/// Member `a` of the power-divergence family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PowerDivergence {
    pub a: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Kullback,
    ReverseKullback,
    General,
}

impl PowerDivergence {
    pub fn new(a: f64) -> Self {
        PowerDivergence { a }
    }

    fn branch(self) -> Branch {
        if self.a.abs() < BRANCH_EPS {
            Branch::Kullback
        } else if (self.a + 1.0).abs() < BRANCH_EPS {
            Branch::ReverseKullback
        } else {
            Branch::General
        }
    }

    /// The generator `phi_a` with its derivatives.
    pub fn phi(self) -> PhiFunction {
        let a = self.a;
        match self.branch() {
            Branch::Kullback => PhiFunction::new(
                "power(a=0)",
                |x| x * x.ln() - x + 1.0,
                |x| x.ln(),
                |x| 1.0 / x,
                1.0,
                f64::INFINITY,
            ),
            Branch::ReverseKullback => PhiFunction::new(
                "power(a=-1)",
                |x| -x.ln() + x - 1.0,
                |x| 1.0 - 1.0 / x,
                |x| 1.0 / (x * x),
                f64::INFINITY,
                1.0,
            ),
            Branch::General => {
                let at_zero = if a > -1.0 {
                    1.0 / (a + 1.0)
                } else {
                    f64::INFINITY
                };
                let limit_slope = if a > 0.0 { f64::INFINITY } else { -1.0 / a };
                PhiFunction::new(
                    format!("power(a={a})"),
                    move |x| phi_power_general(a, x),
                    move |x| (x.powf(a) - 1.0) / a,
                    move |x| x.powf(a - 1.0),
                    at_zero,
                    limit_slope,
                )
            }
        }
    }
}

impl fmt::Display for PowerDivergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "power divergence a={}", self.a)
    }
}

// (x^(a+1) - x - a(x-1)) / (a(a+1)), rearranged around expm1 so it stays
// accurate for small |a| and |a+1|.
fn phi_power_general(a: f64, x: f64) -> f64 {
    let lx = x.ln();
    if a.abs() <= 0.5 {
        (x * (a * lx).exp_m1() / a - (x - 1.0)) / (a + 1.0)
    } else {
        let b = a + 1.0;
        ((b * lx).exp_m1() / b - (x - 1.0)) / a
    }
}

/// `phi_a(x)` for `x > 0`.
pub fn phi_power(a: f64, x: f64) -> Result<f64> {
    if x.is_nan() || x <= 0.0 {
        return Err(Error::InvalidInput(format!(
            "power generator needs x > 0, got {x}"
        )));
    }
    Ok(PowerDivergence::new(a).phi().value(x))
}

/// Either a member of the power-divergence family or an arbitrary generator.
#[derive(Debug, Clone)]
pub enum Family {
    Power(PowerDivergence),
    Phi(PhiFunction),
}

impl Family {
    pub fn power(a: f64) -> Self {
        Family::Power(PowerDivergence::new(a))
    }

    pub fn phi(&self) -> PhiFunction {
        match self {
            Family::Power(p) => p.phi(),
            Family::Phi(phi) => phi.clone(),
        }
    }

    /// The family index when this is a power divergence.
    pub fn power_index(&self) -> Option<f64> {
        match self {
            Family::Power(p) => Some(p.a),
            Family::Phi(_) => None,
        }
    }

    pub fn label(&self) -> String {
        match self {
            Family::Power(p) => format!("power(a={})", p.a),
            Family::Phi(phi) => phi.name().to_string(),
        }
    }
}

/// Sample proportions `N_nu / N`.
#[derive(Debug, Clone, PartialEq)]
pub struct EmpiricalDistribution {
    pub p_hat: Vec<f64>,
}

impl EmpiricalDistribution {
    pub fn from_counts(counts: &ObservedCounts) -> Result<Self> {
        let total = counts.total();
        if total == 0 {
            return Err(Error::InvalidInput("counts sum to zero".into()));
        }
        let n = total as f64;
        Ok(EmpiricalDistribution {
            p_hat: counts.counts.iter().map(|&c| c as f64 / n).collect(),
        })
    }

    /// Wraps a probability vector; entries must be nonnegative and sum to 1.
    pub fn new(p_hat: Vec<f64>) -> Result<Self> {
        if p_hat.iter().any(|&x| !(x >= 0.0) || !x.is_finite()) {
            return Err(Error::InvalidInput(
                "empirical entries must be finite and >= 0".into(),
            ));
        }
        let s: f64 = p_hat.iter().sum();
        if (s - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidInput(format!("empirical entries sum to {s}")));
        }
        Ok(EmpiricalDistribution { p_hat })
    }

    pub fn len(&self) -> usize {
        self.p_hat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p_hat.is_empty()
    }
}

fn check_lengths(p_hat: &[f64], p: &[f64]) -> Result<()> {
    if p_hat.len() != p.len() {
        return Err(Error::Dimension(format!(
            "empirical has {} cells, model has {}",
            p_hat.len(),
            p.len()
        )));
    }
    Ok(())
}

/// Generic evaluation `sum_nu p_nu phi(p_hat_nu / p_nu)`.
pub fn divergence(
    phi: &PhiFunction,
    p_hat: &EmpiricalDistribution,
    p: &ManifestDistribution,
) -> Result<f64> {
    check_lengths(&p_hat.p_hat, &p.p)?;
    Ok(phi_divergence_raw(phi, &p_hat.p_hat, &p.p))
}

pub(crate) fn phi_divergence_raw(phi: &PhiFunction, p_hat: &[f64], p: &[f64]) -> f64 {
    p_hat
        .iter()
        .zip(p)
        .map(|(&q, &pm)| {
            if pm > 0.0 {
                pm * phi.value(q / pm)
            } else if q > 0.0 {
                q * phi.limit_slope()
            } else {
                0.0
            }
        })
        .sum()
}

/// Closed form of the power divergence `D_a(p_hat, p)`.
pub fn power_divergence(
    a: f64,
    p_hat: &EmpiricalDistribution,
    p: &ManifestDistribution,
) -> Result<f64> {
    check_lengths(&p_hat.p_hat, &p.p)?;
    let family = PowerDivergence::new(a);
    let pairs = p_hat.p_hat.iter().zip(&p.p);
    let value = match family.branch() {
        Branch::Kullback => pairs
            .map(|(&q, &pm)| match (q > 0.0, pm > 0.0) {
                (false, _) => 0.0,
                (true, true) => q * (q / pm).ln(),
                (true, false) => f64::INFINITY,
            })
            .sum(),
        Branch::ReverseKullback => pairs
            .map(|(&q, &pm)| match (pm > 0.0, q > 0.0) {
                (false, _) => 0.0,
                (true, true) => pm * (pm / q).ln(),
                (true, false) => f64::INFINITY,
            })
            .sum(),
        Branch::General => {
            let s: f64 = pairs
                .map(|(&q, &pm)| {
                    if q == 0.0 && a > -1.0 {
                        0.0
                    } else if pm == 0.0 {
                        if a > 0.0 {
                            f64::INFINITY
                        } else {
                            0.0
                        }
                    } else {
                        q.powf(a + 1.0) / pm.powf(a)
                    }
                })
                .sum();
            (s - 1.0) / (a * (a + 1.0))
        }
    };
    Ok(value)
}

/// `sum_nu N_nu log p_nu(theta)`; empty cells contribute 0.
pub fn log_likelihood(
    counts: &ObservedCounts,
    spec: &ModelSpec,
    theta: &ParameterVector,
) -> Result<f64> {
    let eval = ModelEvaluation::new(spec, theta)?;
    check_lengths(&eval.manifest, &vec![0.0; counts.counts.len()])?;
    Ok(counts
        .counts
        .iter()
        .zip(&eval.manifest)
        .map(|(&n, &p)| if n == 0 { 0.0 } else { n as f64 * p.ln() })
        .sum())
}

/// Objective `D_phi(p_hat, p(theta))` evaluated through the generic form.
pub fn objective(
    spec: &ModelSpec,
    phi: &PhiFunction,
    p_hat: &EmpiricalDistribution,
    theta: &ParameterVector,
) -> Result<f64> {
    let eval = ModelEvaluation::new(spec, theta)?;
    check_lengths(&p_hat.p_hat, &eval.manifest)?;
    Ok(phi_divergence_raw(phi, &p_hat.p_hat, &eval.manifest))
}

/// Gradient of the objective with respect to `(lambda, eta)`.
pub fn objective_gradient(
    spec: &ModelSpec,
    phi: &PhiFunction,
    p_hat: &EmpiricalDistribution,
    theta: &ParameterVector,
) -> Result<Vec<f64>> {
    let eval = ModelEvaluation::new(spec, theta)?;
    check_lengths(&p_hat.p_hat, &eval.manifest)?;
    gradient_from_evaluation(spec, phi, &p_hat.p_hat, &eval)
}

pub(crate) fn gradient_from_evaluation(
    spec: &ModelSpec,
    phi: &PhiFunction,
    p_hat: &[f64],
    eval: &ModelEvaluation,
) -> Result<Vec<f64>> {
    let mut weights = Vec::with_capacity(p_hat.len());
    for (cell, (&q, &pm)) in p_hat.iter().zip(&eval.manifest).enumerate() {
        if pm > 0.0 {
            weights.push(phi.gradient_weight(q / pm));
        } else if q > 0.0 {
            return Err(Error::ZeroModelCell { cell });
        } else {
            weights.push(0.0);
        }
    }
    let jac = eval.jacobian(spec);
    Ok((0..spec.n_params())
        .map(|j| jac.column(j).iter().zip(&weights).map(|(d, w)| d * w).sum())
        .collect())
}
