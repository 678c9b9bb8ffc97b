//! Multistart minimization of a divergence objective.
//!
//! Each start is drawn uniformly in a box, improved by one Hooke-Jeeves
//! iteration plus a line probe ([`rough_improve`]), and only starts that beat
//! every earlier rough value go on to projected L-BFGS ([`fine_improve`]) and
//! a Powell dogleg solve of the gradient system ([`stationary_refine`]).

mod hooke_jeeves;
mod hybrid;
mod lbfgs;
mod multistart;

pub use hooke_jeeves::{rough_improve, RoughOutcome};
pub use hybrid::{stationary_refine, RefineOutcome};
pub use lbfgs::{fine_improve, FineOutcome};
pub use multistart::{
    generate_initial_points, multistart_fit, start_rng, FineSummary, FitResult, RefineSummary,
    StartTrace,
};

use crate::divergence::{
    gradient_from_evaluation, phi_divergence_raw, EmpiricalDistribution, PhiFunction,
};
use crate::error::{Error, Result};
use crate::model::{ModelEvaluation, ModelSpec};

/// A smooth function of a flat parameter vector.
///
/// `value` returns `+inf` where the objective is undefined; `gradient`
/// returns `None` there.
pub trait Objective: Sync {
    fn dim(&self) -> usize;
    fn value(&self, x: &[f64]) -> f64;
    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>>;
}

/// `theta -> D_phi(p_hat, p(theta))` on the flat `(lambda, eta)` vector.
pub struct DivergenceObjective<'a> {
    spec: &'a ModelSpec,
    phi: PhiFunction,
    p_hat: &'a EmpiricalDistribution,
}

impl<'a> DivergenceObjective<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        phi: PhiFunction,
        p_hat: &'a EmpiricalDistribution,
    ) -> Result<Self> {
        spec.ensure_valid()?;
        if p_hat.len() != spec.n_cells() {
            return Err(Error::Dimension(format!(
                "data has {} cells, model has {}",
                p_hat.len(),
                spec.n_cells()
            )));
        }
        Ok(DivergenceObjective { spec, phi, p_hat })
    }
}

impl Objective for DivergenceObjective<'_> {
    fn dim(&self) -> usize {
        self.spec.n_params()
    }

    fn value(&self, x: &[f64]) -> f64 {
        if x.iter().any(|v| !v.is_finite()) {
            return f64::INFINITY;
        }
        let eval = ModelEvaluation::from_flat(self.spec, x);
        let v = phi_divergence_raw(&self.phi, &self.p_hat.p_hat, &eval.manifest);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        if x.iter().any(|v| !v.is_finite()) {
            return None;
        }
        let eval = ModelEvaluation::from_flat(self.spec, x);
        let g = gradient_from_evaluation(self.spec, &self.phi, &self.p_hat.p_hat, &eval).ok()?;
        g.iter().all(|v| v.is_finite()).then_some(g)
    }
}

/// Adapts a pair of closures into an [`Objective`].
pub struct FnObjective<F, G> {
    dim: usize,
    value: F,
    gradient: G,
}

impl<F, G> FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    pub fn new(dim: usize, value: F, gradient: G) -> Self {
        FnObjective {
            dim,
            value,
            gradient,
        }
    }
}

impl<F, G> Objective for FnObjective<F, G>
where
    F: Fn(&[f64]) -> f64 + Sync,
    G: Fn(&[f64]) -> Vec<f64> + Sync,
{
    fn dim(&self) -> usize {
        self.dim
    }

    fn value(&self, x: &[f64]) -> f64 {
        let v = (self.value)(x);
        if v.is_nan() {
            f64::INFINITY
        } else {
            v
        }
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        let g = (self.gradient)(x);
        g.iter().all(|v| v.is_finite()).then_some(g)
    }
}

/// Axis-aligned search region.
#[derive(Debug, Clone, PartialEq)]
pub struct Bounds {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl Bounds {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self> {
        if lo.len() != hi.len() {
            return Err(Error::Dimension("bound vectors differ in length".into()));
        }
        if lo
            .iter()
            .zip(&hi)
            .any(|(l, h)| !(l <= h) || !l.is_finite() || !h.is_finite())
        {
            return Err(Error::InvalidInput("bounds need finite lo <= hi".into()));
        }
        Ok(Bounds { lo, hi })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self> {
        Bounds::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter()
            .zip(self.lo.iter().zip(&self.hi))
            .all(|(v, (l, h))| *l <= *v && *v <= *h)
    }

    /// Clamps `x` into the box; returns whether anything moved.
    pub fn project(&self, x: &mut [f64]) -> bool {
        let mut moved = false;
        for (v, (l, h)) in x.iter_mut().zip(self.lo.iter().zip(&self.hi)) {
            let c = v.clamp(*l, *h);
            if c != *v {
                *v = c;
                moved = true;
            }
        }
        moved
    }

    pub fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }
}

/// Settings for [`multistart_fit`].
#[derive(Debug, Clone, PartialEq)]
pub struct MultistartConfig {
    pub bounds_lambda_lo: Vec<f64>,
    pub bounds_lambda_up: Vec<f64>,
    pub bounds_eta_lo: Vec<f64>,
    pub bounds_eta_up: Vec<f64>,
    /// Number of random starts.
    pub n_initial: usize,
    pub rng_seed: u64,
    /// Hooke-Jeeves step as a fraction of each box width.
    pub hj_initial_step: f64,
    pub qn_gradient_tol: f64,
    pub root_residual_tol: f64,
    pub max_qn_iterations: usize,
    pub max_root_iterations: usize,
    /// Cap on the number of starts forwarded through the gate; `None` keeps every gate pass.
    pub keep_top: Option<usize>,
    /// Run starts on the rayon pool. Results do not depend on this.
    pub parallel: bool,
}

impl MultistartConfig {
    /// Default region `[-10, 10]^(t+u)` with 500 starts.
    pub fn for_spec(spec: &ModelSpec) -> Self {
        Self::with_box(spec, -10.0, 10.0)
    }

    pub fn with_box(spec: &ModelSpec, lo: f64, hi: f64) -> Self {
        MultistartConfig {
            bounds_lambda_lo: vec![lo; spec.t],
            bounds_lambda_up: vec![hi; spec.t],
            bounds_eta_lo: vec![lo; spec.u],
            bounds_eta_up: vec![hi; spec.u],
            n_initial: 500,
            rng_seed: 1,
            hj_initial_step: 0.05,
            qn_gradient_tol: 1e-8,
            root_residual_tol: 1e-10,
            max_qn_iterations: 1000,
            max_root_iterations: 100,
            keep_top: None,
            parallel: true,
        }
    }

    pub fn bounds(&self) -> Result<Bounds> {
        let lo = [self.bounds_lambda_lo.as_slice(), &self.bounds_eta_lo].concat();
        let hi = [self.bounds_lambda_up.as_slice(), &self.bounds_eta_up].concat();
        Bounds::new(lo, hi)
    }

    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.bounds_lambda_lo.len() != spec.t
            || self.bounds_lambda_up.len() != spec.t
            || self.bounds_eta_lo.len() != spec.u
            || self.bounds_eta_up.len() != spec.u
        {
            return Err(Error::Dimension(format!(
                "bounds must have {} lambda and {} eta entries",
                spec.t, spec.u
            )));
        }
        self.bounds()?;
        if self.n_initial == 0 {
            return Err(Error::InvalidInput("n_initial must be at least 1".into()));
        }
        let tols = [
            self.hj_initial_step,
            self.qn_gradient_tol,
            self.root_residual_tol,
        ];
        if tols.iter().any(|t| !(*t > 0.0)) {
            return Err(Error::InvalidInput(
                "step and tolerances must be positive".into(),
            ));
        }
        Ok(())
    }
}

pub(crate) fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
