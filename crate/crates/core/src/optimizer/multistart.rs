use std::sync::atomic::{AtomicUsize, Ordering};

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{
    fine_improve, norm, rough_improve, stationary_refine, Bounds, DivergenceObjective,
    MultistartConfig, Objective,
};
use crate::divergence::{objective_gradient, EmpiricalDistribution, Family};
use crate::error::{Error, Result};
use crate::model::{
    class_weights, item_probabilities, ClassWeightVector, ItemProbabilityMatrix, ModelSpec,
    ObservedCounts, ParameterVector,
};

/// RNG substream for start `index`. Start `i` draws its initial point and its
/// coordinate permutation from this stream only, so the schedule does not
/// affect results.
pub fn start_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

fn draw_point<R: Rng + ?Sized>(bounds: &Bounds, rng: &mut R) -> Vec<f64> {
    bounds
        .lo
        .iter()
        .zip(&bounds.hi)
        .map(|(&l, &h)| l + (h - l) * rng.random::<f64>())
        .collect()
}

/// `n_initial` points uniform in the search box, point `i` drawn from
/// [`start_rng`]`(rng_seed, i)`.
pub fn generate_initial_points(
    spec: &ModelSpec,
    config: &MultistartConfig,
) -> Result<Vec<ParameterVector>> {
    config.validate(spec)?;
    let bounds = config.bounds()?;
    Ok((0..config.n_initial)
        .map(|i| {
            ParameterVector::from_flat(
                spec.t,
                &draw_point(&bounds, &mut start_rng(config.rng_seed, i)),
            )
        })
        .collect())
}

/// Quasi-Newton stage of one start.
#[derive(Debug, Clone, PartialEq)]
pub struct FineSummary {
    pub value: f64,
    pub gradient_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub projections: usize,
}

/// Root-solver stage of one start.
#[derive(Debug, Clone, PartialEq)]
pub struct RefineSummary {
    pub value: f64,
    pub residual_norm: f64,
    pub iterations: usize,
    pub converged: bool,
    pub accepted: bool,
}

/// Everything recorded about one start.
#[derive(Debug, Clone, PartialEq)]
pub struct StartTrace {
    pub index: usize,
    pub initial: Vec<f64>,
    /// Objective at the initial point (`+inf` when undefined).
    pub initial_value: f64,
    pub rough_value: Option<f64>,
    pub rough_point: Option<Vec<f64>>,
    pub rough_evaluations: usize,
    /// Passed the gate and went on to fine improvement.
    pub forwarded: bool,
    /// Gate value `D_in` after this start was considered.
    pub gate_after: f64,
    pub fine: Option<FineSummary>,
    pub refined: Option<RefineSummary>,
    /// Final point of a forwarded start.
    pub final_point: Option<Vec<f64>>,
    pub failure: Option<String>,
}

impl StartTrace {
    /// Best value this start reached.
    pub fn final_value(&self) -> Option<f64> {
        self.refined
            .as_ref()
            .map(|r| r.value)
            .or(self.fine.as_ref().map(|f| f.value))
            .or(self.rough_value)
    }
}

/// Output of [`multistart_fit`].
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta_hat: ParameterVector,
    /// `D_phi(p_hat, p(theta_hat))`.
    pub objective_value: f64,
    /// Norm of the full gradient at `theta_hat`.
    pub gradient_norm: f64,
    pub item_probabilities: ItemProbabilityMatrix,
    pub class_weights: ClassWeightVector,
    /// The gradient norm is within `root_residual_tol`.
    pub converged: bool,
    pub best_start: usize,
    pub n_forwarded: usize,
    pub trace: Vec<StartTrace>,
    pub objective_evaluations: usize,
    pub gradient_evaluations: usize,
    pub family: String,
}

struct Counting<'a, O> {
    inner: &'a O,
    values: AtomicUsize,
    gradients: AtomicUsize,
}

impl<'a, O: Objective> Counting<'a, O> {
    fn new(inner: &'a O) -> Self {
        Counting {
            inner,
            values: AtomicUsize::new(0),
            gradients: AtomicUsize::new(0),
        }
    }
}

impl<O: Objective> Objective for Counting<'_, O> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn value(&self, x: &[f64]) -> f64 {
        self.values.fetch_add(1, Ordering::Relaxed);
        self.inner.value(x)
    }

    fn gradient(&self, x: &[f64]) -> Option<Vec<f64>> {
        self.gradients.fetch_add(1, Ordering::Relaxed);
        self.inner.gradient(x)
    }
}

struct Stage2 {
    initial: Vec<f64>,
    initial_value: f64,
    rough: std::result::Result<(Vec<f64>, f64, usize), String>,
}

struct Stage3 {
    fine: Option<FineSummary>,
    refined: Option<RefineSummary>,
    point: Vec<f64>,
    value: f64,
    failure: Option<String>,
    values: usize,
    gradients: usize,
}

fn map_indexed<T: Send, F: Fn(usize) -> T + Sync + Send>(n: usize, parallel: bool, f: F) -> Vec<T> {
    if parallel {
        (0..n).into_par_iter().map(f).collect()
    } else {
        (0..n).map(f).collect()
    }
}

/// Runs the full multistart pipeline against the objective for `family`.
pub fn multistart_fit(
    spec: &ModelSpec,
    counts: &ObservedCounts,
    family: &Family,
    config: &MultistartConfig,
) -> Result<FitResult> {
    spec.ensure_valid()?;
    config.validate(spec)?;
    let p_hat = EmpiricalDistribution::from_counts(counts)?;
    let phi = family.phi();
    let objective = DivergenceObjective::new(spec, phi.clone(), &p_hat)?;
    let bounds = config.bounds()?;
    let step: Vec<f64> = (0..bounds.dim())
        .map(|i| config.hj_initial_step * bounds.width(i))
        .collect();

    // Steps 1 and 2; each start owns its RNG substream.
    let stage2: Vec<Stage2> = map_indexed(config.n_initial, config.parallel, |i| {
        let mut rng = start_rng(config.rng_seed, i);
        let initial = draw_point(&bounds, &mut rng);
        let initial_value = objective.value(&initial);
        let rough = rough_improve(&initial, &objective, &bounds, &step, &mut rng)
            .map(|r| (r.point, r.value, r.evaluations))
            .map_err(|e| e.to_string());
        Stage2 {
            initial,
            initial_value,
            rough,
        }
    });

    // The gate is replayed in start order.
    let mut d_in = f64::INFINITY;
    let mut forwarded = Vec::new();
    let mut gate_after = Vec::with_capacity(stage2.len());
    for (i, s) in stage2.iter().enumerate() {
        if let Ok((_, v, _)) = &s.rough {
            if *v < d_in {
                d_in = *v;
                forwarded.push(i);
            }
        }
        gate_after.push(d_in);
    }
    if let Some(cap) = config.keep_top {
        // Later gate passes carry lower rough values.
        let drop = forwarded.len().saturating_sub(cap);
        forwarded.drain(..drop);
    }

    let stage3: Vec<Stage3> = map_indexed(forwarded.len(), config.parallel, |j| {
        let i = forwarded[j];
        let (rough_point, rough_value, _) = stage2[i]
            .rough
            .as_ref()
            .expect("forwarded starts have a rough value");
        let counted = Counting::new(&objective);
        let mut out = Stage3 {
            fine: None,
            refined: None,
            point: rough_point.clone(),
            value: *rough_value,
            failure: None,
            values: 0,
            gradients: 0,
        };
        match fine_improve(
            rough_point,
            &counted,
            &bounds,
            config.qn_gradient_tol,
            config.max_qn_iterations,
        ) {
            Ok(fine) => {
                out.fine = Some(FineSummary {
                    value: fine.value,
                    gradient_norm: fine.gradient_norm,
                    iterations: fine.iterations,
                    converged: fine.converged,
                    projections: fine.projections,
                });
                if fine.value <= out.value {
                    out.point = fine.point;
                    out.value = fine.value;
                }
                match stationary_refine(
                    &out.point,
                    &counted,
                    &bounds,
                    config.root_residual_tol,
                    config.max_root_iterations,
                ) {
                    Ok(r) => {
                        out.refined = Some(RefineSummary {
                            value: r.value,
                            residual_norm: r.residual_norm,
                            iterations: r.iterations,
                            converged: r.converged,
                            accepted: r.accepted,
                        });
                        out.point = r.point;
                        out.value = r.value;
                    }
                    Err(e) => out.failure = Some(e.to_string()),
                }
            }
            Err(e) => out.failure = Some(e.to_string()),
        }
        out.values = counted.values.load(Ordering::Relaxed);
        out.gradients = counted.gradients.load(Ordering::Relaxed);
        out
    });

    let mut trace: Vec<StartTrace> = stage2
        .iter()
        .enumerate()
        .map(|(i, s)| {
            let (rough_point, rough_value, rough_evaluations, failure) = match &s.rough {
                Ok((x, v, e)) => (Some(x.clone()), Some(*v), *e, None),
                Err(msg) => (None, None, 1, Some(msg.clone())),
            };
            StartTrace {
                index: i,
                initial: s.initial.clone(),
                initial_value: s.initial_value,
                rough_value,
                rough_point,
                rough_evaluations,
                forwarded: false,
                gate_after: gate_after[i],
                fine: None,
                refined: None,
                final_point: None,
                failure,
            }
        })
        .collect();

    let mut objective_evaluations: usize = trace.iter().map(|t| t.rough_evaluations).sum();
    let mut gradient_evaluations = 0;
    let mut best: Option<(f64, usize, Vec<f64>)> = None;
    for (&i, s) in forwarded.iter().zip(stage3) {
        objective_evaluations += s.values;
        gradient_evaluations += s.gradients;
        let better = match &best {
            None => true,
            Some((v, idx, _)) => s.value < *v || (s.value == *v && i < *idx),
        };
        if better && s.value.is_finite() {
            best = Some((s.value, i, s.point.clone()));
        }
        let t = &mut trace[i];
        t.forwarded = true;
        t.fine = s.fine;
        t.refined = s.refined;
        t.final_point = Some(s.point);
        t.failure = s.failure;
    }

    let Some((value, best_start, point)) = best else {
        return Err(Error::Optimization(format!(
            "no start produced a finite objective ({} starts)",
            config.n_initial
        )));
    };
    let theta_hat = ParameterVector::from_flat(spec.t, &point);
    let gradient = objective_gradient(spec, &phi, &p_hat, &theta_hat)?;
    let gradient_norm = norm(&gradient);
    Ok(FitResult {
        item_probabilities: item_probabilities(spec, &theta_hat)?,
        class_weights: class_weights(spec, &theta_hat)?,
        theta_hat,
        objective_value: value,
        gradient_norm,
        converged: gradient_norm <= config.root_residual_tol,
        best_start,
        n_forwarded: forwarded.len(),
        trace,
        objective_evaluations,
        gradient_evaluations,
        family: family.label(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::manifest_distribution;
    use nalgebra::{DMatrix, DVector};

    fn two_class_spec() -> ModelSpec {
        // two classes, three items, free item logits per class, one weight contrast
        let mut q = Vec::new();
        for r in 0..6 {
            let mut m = DMatrix::zeros(2, 3);
            m[(r / 3, r % 3)] = 1.0;
            q.push(m);
        }
        ModelSpec::new(
            q,
            DMatrix::zeros(2, 3),
            DMatrix::from_row_slice(2, 1, &[1.0, 0.0]),
            DVector::zeros(2),
        )
        .unwrap()
    }

    fn small_config(spec: &ModelSpec) -> MultistartConfig {
        let mut c = MultistartConfig::with_box(spec, -5.0, 5.0);
        c.n_initial = 30;
        c.rng_seed = 42;
        c
    }

    #[test]
    fn initial_points_are_deterministic_and_inside() {
        let spec = two_class_spec();
        let c = small_config(&spec);
        let a = generate_initial_points(&spec, &c).unwrap();
        let b = generate_initial_points(&spec, &c).unwrap();
        assert_eq!(a, b);
        let bounds = c.bounds().unwrap();
        assert!(a.iter().all(|p| bounds.contains(&p.flat())));
    }

    #[test]
    fn degenerate_box_gives_lower_corner() {
        let spec = two_class_spec();
        let c = MultistartConfig::with_box(&spec, 0.5, 0.5);
        let pts = generate_initial_points(&spec, &c).unwrap();
        assert!(pts.iter().all(|p| p.flat().iter().all(|&v| v == 0.5)));
    }

    #[test]
    fn perfect_fit_is_recovered() {
        let spec = two_class_spec();
        let theta0 = ParameterVector::new(vec![-1.5, 0.5, 1.0, 1.2, -0.8, 0.3], vec![0.4]);
        let p0 = manifest_distribution(&spec, &theta0).unwrap();
        let counts: Vec<u64> = p0.p.iter().map(|p| (p * 1e9).round() as u64).collect();
        let counts = ObservedCounts::new(counts).unwrap();
        let fit =
            multistart_fit(&spec, &counts, &Family::power(0.0), &small_config(&spec)).unwrap();
        assert!(fit.objective_value < 1e-10);
        let p_hat = counts.empirical().unwrap();
        let p = manifest_distribution(&spec, &fit.theta_hat).unwrap();
        for (a, b) in p.p.iter().zip(&p_hat.p_hat) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn parallel_and_serial_agree() {
        let spec = two_class_spec();
        let counts = ObservedCounts::new(vec![40, 12, 9, 30, 11, 25, 19, 54]).unwrap();
        let mut c = small_config(&spec);
        let par = multistart_fit(&spec, &counts, &Family::power(2.0 / 3.0), &c).unwrap();
        c.parallel = false;
        let ser = multistart_fit(&spec, &counts, &Family::power(2.0 / 3.0), &c).unwrap();
        assert_eq!(par.theta_hat, ser.theta_hat);
        assert_eq!(par.trace, ser.trace);
        assert_eq!(par.objective_evaluations, ser.objective_evaluations);
    }

    #[test]
    fn gate_and_monotone_pipeline() {
        let spec = two_class_spec();
        let counts = ObservedCounts::new(vec![40, 12, 9, 30, 11, 25, 19, 54]).unwrap();
        let fit =
            multistart_fit(&spec, &counts, &Family::power(0.0), &small_config(&spec)).unwrap();
        let mut gate = f64::INFINITY;
        for t in &fit.trace {
            if t.forwarded {
                let rough = t.rough_value.unwrap();
                assert!(rough < gate);
                gate = rough;
                let fine = t.fine.as_ref().unwrap().value;
                let refined = t.refined.as_ref().unwrap().value;
                assert!(fine <= rough + 1e-12);
                assert!(refined <= fine + 1e-12);
            }
            assert!(t.rough_evaluations <= 2 * 7 + 4);
        }
    }

    #[test]
    fn keep_top_caps_forwarded_starts() {
        let spec = two_class_spec();
        let counts = ObservedCounts::new(vec![40, 12, 9, 30, 11, 25, 19, 54]).unwrap();
        let mut c = small_config(&spec);
        c.keep_top = Some(1);
        let fit = multistart_fit(&spec, &counts, &Family::power(0.0), &c).unwrap();
        assert_eq!(fit.n_forwarded, 1);
        assert_eq!(fit.trace.iter().filter(|t| t.forwarded).count(), 1);
    }
}
