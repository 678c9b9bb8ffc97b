//! Monte Carlo studies of the estimators.
//!
//! Datasets are multinomial draws from a true model, optionally mixed with a
//! contaminating model as `(1 - eps) M + eps M_j`. Each `(N, a)` cell of the
//! study is summarized by mean squared errors and squared biases of the
//! parameters, the item probabilities and the class weights.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;

use crate::divergence::Family;
use crate::error::{Error, Result};
use crate::model::{
    class_weights, item_probabilities, manifest_distribution, ManifestDistribution, ModelSpec,
    ObservedCounts, ParameterVector,
};
use crate::optimizer::{multistart_fit, MultistartConfig};

/// A second model mixed into the sampling distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct ContaminationSpec {
    pub spec: ModelSpec,
    pub theta: ParameterVector,
    /// Mixing weight of the contaminant, in `[0, 1]`.
    pub epsilon: f64,
}

/// A grid of sample sizes and family indices with a fixed truth.
#[derive(Debug, Clone, PartialEq)]
pub struct SimulationPlan {
    pub spec: ModelSpec,
    pub theta0: ParameterVector,
    pub sample_sizes: Vec<u64>,
    pub a_values: Vec<f64>,
    pub replicates: usize,
    pub rng_seed: u64,
    pub contamination: Option<ContaminationSpec>,
}

impl SimulationPlan {
    pub fn validate(&self) -> Result<()> {
        self.spec.ensure_valid()?;
        manifest_distribution(&self.spec, &self.theta0)?;
        if self.replicates == 0 {
            return Err(Error::InvalidInput("replicates must be at least 1".into()));
        }
        if self.sample_sizes.is_empty() || self.sample_sizes.contains(&0) {
            return Err(Error::InvalidInput(
                "sample sizes must be a nonempty list of positive integers".into(),
            ));
        }
        if self.a_values.is_empty() || self.a_values.iter().any(|a| !a.is_finite()) {
            return Err(Error::InvalidInput(
                "a values must be a nonempty list of finite numbers".into(),
            ));
        }
        if let Some(c) = &self.contamination {
            contaminated_distribution(&self.spec, &self.theta0, c)?;
        }
        Ok(())
    }

    /// The distribution datasets are drawn from.
    pub fn sampling_distribution(&self) -> Result<ManifestDistribution> {
        match &self.contamination {
            Some(c) => contaminated_distribution(&self.spec, &self.theta0, c),
            None => manifest_distribution(&self.spec, &self.theta0),
        }
    }
}

/// Multinomial draw of `n` observations over the cells of `p`, as a chain of
/// conditional binomials.
pub fn sample_multinomial<R: Rng + ?Sized>(
    p: &[f64],
    n: u64,
    rng: &mut R,
) -> Result<ObservedCounts> {
    if p.iter().any(|v| !(*v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidInput(
            "cell probabilities must be finite and >= 0".into(),
        ));
    }
    let mut counts = vec![0u64; p.len()];
    let mut left = n;
    let mut mass: f64 = p.iter().sum();
    for (i, &pi) in p.iter().enumerate() {
        if left == 0 {
            break;
        }
        if i + 1 == p.len() {
            counts[i] = left;
            break;
        }
        let q = if mass > 0.0 {
            (pi / mass).clamp(0.0, 1.0)
        } else {
            0.0
        };
        let draw = Binomial::new(left, q)
            .map_err(|e| Error::InvalidInput(format!("binomial parameters: {e}")))?
            .sample(rng);
        counts[i] = draw;
        left -= draw;
        mass -= pi;
    }
    ObservedCounts::new(counts)
}

/// `n` multinomial observations from `p(theta0)`.
pub fn sample_dataset<R: Rng + ?Sized>(
    spec: &ModelSpec,
    theta0: &ParameterVector,
    n: u64,
    rng: &mut R,
) -> Result<ObservedCounts> {
    if n == 0 {
        return Err(Error::InvalidInput("sample size must be at least 1".into()));
    }
    sample_multinomial(&manifest_distribution(spec, theta0)?.p, n, rng)
}

/// Cellwise `(1 - eps) p_base + eps p_contaminant`.
pub fn contaminated_distribution(
    spec: &ModelSpec,
    theta: &ParameterVector,
    contamination: &ContaminationSpec,
) -> Result<ManifestDistribution> {
    if contamination.spec.k != spec.k {
        return Err(Error::Dimension(format!(
            "contaminant has {} items, base model has {}",
            contamination.spec.k, spec.k
        )));
    }
    let base = manifest_distribution(spec, theta)?;
    let other = manifest_distribution(&contamination.spec, &contamination.theta)?;
    mix_distributions(&base, &other, contamination.epsilon)
}

pub fn mix_distributions(
    base: &ManifestDistribution,
    other: &ManifestDistribution,
    epsilon: f64,
) -> Result<ManifestDistribution> {
    if !(0.0..=1.0).contains(&epsilon) {
        return Err(Error::InvalidInput(format!(
            "epsilon must be in [0, 1], got {epsilon}"
        )));
    }
    if base.p.len() != other.p.len() {
        return Err(Error::Dimension("distributions differ in length".into()));
    }
    Ok(ManifestDistribution {
        p: base
            .p
            .iter()
            .zip(&other.p)
            .map(|(a, b)| (1.0 - epsilon) * a + epsilon * b)
            .collect(),
    })
}

/// One successful replicate.
#[derive(Debug, Clone, PartialEq)]
pub struct ReplicateEstimate {
    pub theta: ParameterVector,
    /// `m x k` item probabilities.
    pub p: DMatrix<f64>,
    pub w: DVector<f64>,
    pub objective: f64,
}

impl ReplicateEstimate {
    pub fn from_theta(spec: &ModelSpec, theta: ParameterVector, objective: f64) -> Result<Self> {
        let p = item_probabilities(spec, &theta)?.p;
        let w = class_weights(spec, &theta)?.w;
        Ok(ReplicateEstimate {
            theta,
            p,
            w,
            objective,
        })
    }
}

/// Mean squared errors and squared biases for one `(N, a)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct MseSummary {
    pub mse_lambda_each: Vec<f64>,
    pub mse_eta_each: Vec<f64>,
    pub mse_lambda: f64,
    pub mse_eta: f64,
    pub mse_theta: f64,
    pub mse_p: f64,
    pub mse_w: f64,
    pub mse_pw: f64,
    pub bias_lambda: f64,
    pub bias_eta: f64,
    pub bias_theta: f64,
    pub bias_p: f64,
    pub bias_w: f64,
    pub bias_pw: f64,
}

/// `(t mse_lambda + u mse_eta) / (t + u)`.
pub fn combine_theta(t: usize, u: usize, lambda: f64, eta: f64) -> f64 {
    (t as f64 * lambda + u as f64 * eta) / (t + u) as f64
}

/// `(k m mse_p + m mse_w) / (m (k + 1))`.
pub fn combine_pw(m: usize, k: usize, p: f64, w: f64) -> f64 {
    let (m, k) = (m as f64, k as f64);
    (k * m * p + m * w) / (m * (k + 1.0))
}

fn mean(v: &[f64]) -> f64 {
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Per-coordinate mse and squared bias of `samples` (one row per replicate).
fn coordinate_errors(samples: &[Vec<f64>], truth: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let n = samples.len() as f64;
    truth
        .iter()
        .enumerate()
        .map(|(j, &t0)| {
            let mse = samples.iter().map(|s| (s[j] - t0).powi(2)).sum::<f64>() / n;
            let avg = samples.iter().map(|s| s[j]).sum::<f64>() / n;
            (mse, (avg - t0).powi(2))
        })
        .unzip()
}

pub fn mse_summary(
    estimates: &[ReplicateEstimate],
    theta0: &ParameterVector,
    spec: &ModelSpec,
) -> Result<MseSummary> {
    if estimates.is_empty() {
        return Err(Error::InvalidInput("no successful replicates".into()));
    }
    let p0 = item_probabilities(spec, theta0)?.p;
    let w0 = class_weights(spec, theta0)?.w;
    let lambdas: Vec<Vec<f64>> = estimates.iter().map(|e| e.theta.lambda.clone()).collect();
    let etas: Vec<Vec<f64>> = estimates.iter().map(|e| e.theta.eta.clone()).collect();
    let ps: Vec<Vec<f64>> = estimates
        .iter()
        .map(|e| e.p.iter().copied().collect())
        .collect();
    let ws: Vec<Vec<f64>> = estimates
        .iter()
        .map(|e| e.w.iter().copied().collect())
        .collect();

    let (mse_lambda_each, bias_lambda_each) = coordinate_errors(&lambdas, &theta0.lambda);
    let (mse_eta_each, bias_eta_each) = coordinate_errors(&etas, &theta0.eta);
    let (mse_p_each, bias_p_each) = coordinate_errors(&ps, p0.as_slice());
    let (mse_w_each, bias_w_each) = coordinate_errors(&ws, w0.as_slice());

    let (t, u, m, k) = (spec.t, spec.u, spec.m, spec.k);
    let mse_lambda = mean(&mse_lambda_each);
    let mse_eta = mean(&mse_eta_each);
    let mse_p = mean(&mse_p_each);
    let mse_w = mean(&mse_w_each);
    let bias_lambda = mean(&bias_lambda_each);
    let bias_eta = mean(&bias_eta_each);
    let bias_p = mean(&bias_p_each);
    let bias_w = mean(&bias_w_each);
    Ok(MseSummary {
        mse_theta: combine_theta(t, u, mse_lambda, mse_eta),
        mse_pw: combine_pw(m, k, mse_p, mse_w),
        bias_theta: combine_theta(t, u, bias_lambda, bias_eta),
        bias_pw: combine_pw(m, k, bias_p, bias_w),
        mse_lambda_each,
        mse_eta_each,
        mse_lambda,
        mse_eta,
        mse_p,
        mse_w,
        bias_lambda,
        bias_eta,
        bias_p,
        bias_w,
    })
}

/// Squared error of one replicate's `(p, w)` with the `mse_pw` weighting.
pub fn replicate_pw_error(
    estimate: &ReplicateEstimate,
    theta0: &ParameterVector,
    spec: &ModelSpec,
) -> Result<f64> {
    let p0 = item_probabilities(spec, theta0)?.p;
    let w0 = class_weights(spec, theta0)?.w;
    let ep = (&estimate.p - &p0).norm_squared() / p0.len() as f64;
    let ew = (&estimate.w - &w0).norm_squared() / w0.len() as f64;
    Ok(combine_pw(spec.m, spec.k, ep, ew))
}

/// Summary of one `(N, a)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SummaryRow {
    pub n: u64,
    pub a: f64,
    /// `None` when every replicate failed.
    pub summary: Option<MseSummary>,
    pub n_success: usize,
    pub n_failed: usize,
    /// Objective at the estimate for each successful replicate, in replicate order.
    pub objective_values: Vec<f64>,
    /// Each successful replicate's own contribution to `mse_pw`; their mean is `mse_pw`.
    pub pw_errors: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimulationSummary {
    pub t: usize,
    pub u: usize,
    pub rows: Vec<SummaryRow>,
}

impl SimulationSummary {
    pub fn row(&self, n: u64, a: f64) -> Option<&SummaryRow> {
        self.rows.iter().find(|r| r.n == n && r.a == a)
    }

    /// CSV with a header row; per-parameter mse columns follow the aggregates.
    pub fn to_csv(&self) -> Result<String> {
        let mut header: Vec<String> = [
            "N",
            "a",
            "mse_lambda",
            "mse_eta",
            "mse_theta",
            "mse_p",
            "mse_w",
            "mse_pw",
            "bias_lambda",
            "bias_eta",
            "bias_theta",
            "bias_p",
            "bias_w",
            "bias_pw",
            "n_success",
            "n_failed",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect();
        header.extend((1..=self.t).map(|j| format!("mse_lambda_{j}")));
        header.extend((1..=self.u).map(|j| format!("mse_eta_{j}")));

        let mut w = csv::WriterBuilder::new()
            .terminator(csv::Terminator::Any(b'\n'))
            .from_writer(Vec::new());
        let io = |e: csv::Error| Error::InvalidInput(format!("csv: {e}"));
        w.write_record(&header).map_err(io)?;
        for r in &self.rows {
            let mut rec = vec![r.n.to_string(), r.a.to_string()];
            let nan = f64::NAN;
            let values: Vec<f64> = match &r.summary {
                Some(s) => [
                    s.mse_lambda,
                    s.mse_eta,
                    s.mse_theta,
                    s.mse_p,
                    s.mse_w,
                    s.mse_pw,
                    s.bias_lambda,
                    s.bias_eta,
                    s.bias_theta,
                    s.bias_p,
                    s.bias_w,
                    s.bias_pw,
                ]
                .to_vec(),
                None => vec![nan; 12],
            };
            rec.extend(values.iter().map(|v| v.to_string()));
            rec.push(r.n_success.to_string());
            rec.push(r.n_failed.to_string());
            match &r.summary {
                Some(s) => {
                    rec.extend(s.mse_lambda_each.iter().map(|v| v.to_string()));
                    rec.extend(s.mse_eta_each.iter().map(|v| v.to_string()));
                }
                None => rec.extend(std::iter::repeat_n(nan.to_string(), self.t + self.u)),
            }
            w.write_record(&rec).map_err(io)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::InvalidInput(format!("csv: {e}")))?;
        String::from_utf8(bytes).map_err(|e| Error::InvalidInput(e.to_string()))
    }

    /// Human-readable table of the aggregate columns.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:>6} {:>10} {:>12} {:>12} {:>12} {:>12} {:>8}",
            "N", "a", "mse_theta", "mse_pw", "bias_theta", "bias_pw", "ok"
        );
        for r in &self.rows {
            match &r.summary {
                Some(m) => {
                    let _ = writeln!(
                        s,
                        "{:>6} {:>10.4} {:>12.6} {:>12.6} {:>12.6} {:>12.6} {:>8}",
                        r.n, r.a, m.mse_theta, m.mse_pw, m.bias_theta, m.bias_pw, r.n_success
                    );
                }
                None => {
                    let _ = writeln!(
                        s,
                        "{:>6} {:>10.4} {:>12} {:>12} {:>12} {:>12} {:>8}",
                        r.n, r.a, "-", "-", "-", "-", 0
                    );
                }
            }
        }
        s
    }
}

/// RNG for replicate `l` of the cell with sample size `n` and family index
/// position `a_index`.
pub fn replicate_rng(seed: u64, n: u64, a_index: usize, l: usize) -> ChaCha8Rng {
    let mut key = [0u8; 32];
    key[..8].copy_from_slice(&seed.to_le_bytes());
    key[8..16].copy_from_slice(&n.to_le_bytes());
    key[16..24].copy_from_slice(&(a_index as u64).to_le_bytes());
    key[24..].copy_from_slice(&(l as u64).to_le_bytes());
    ChaCha8Rng::from_seed(key)
}

/// Runs the study with a caller-supplied estimator.
///
/// `fitter(counts, a, seed)` returns the estimate and its objective value;
/// errors count as failed replicates.
pub fn run_study_with<F>(plan: &SimulationPlan, fitter: F) -> Result<SimulationSummary>
where
    F: Fn(&ObservedCounts, f64, u64) -> Result<(ParameterVector, f64)> + Sync,
{
    plan.validate()?;
    let dist = plan.sampling_distribution()?;
    let cells: Vec<(u64, usize)> = plan
        .sample_sizes
        .iter()
        .flat_map(|&n| (0..plan.a_values.len()).map(move |ai| (n, ai)))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cells.len())
        .flat_map(|c| (0..plan.replicates).map(move |l| (c, l)))
        .collect();

    let results: Vec<Option<ReplicateEstimate>> = jobs
        .par_iter()
        .map(|&(c, l)| {
            let (n, ai) = cells[c];
            let mut rng = replicate_rng(plan.rng_seed, n, ai, l);
            let counts = sample_multinomial(&dist.p, n, &mut rng).ok()?;
            let fit_seed = rng.next_u64();
            let (theta, value) = fitter(&counts, plan.a_values[ai], fit_seed).ok()?;
            ReplicateEstimate::from_theta(&plan.spec, theta, value).ok()
        })
        .collect();

    let mut rows = Vec::with_capacity(cells.len());
    for (c, chunk) in results.chunks(plan.replicates).enumerate() {
        let (n, ai) = cells[c];
        let ok: Vec<ReplicateEstimate> = chunk.iter().flatten().cloned().collect();
        let summary = if ok.is_empty() {
            None
        } else {
            Some(mse_summary(&ok, &plan.theta0, &plan.spec)?)
        };
        rows.push(SummaryRow {
            n,
            a: plan.a_values[ai],
            summary,
            n_success: ok.len(),
            n_failed: chunk.len() - ok.len(),
            objective_values: ok.iter().map(|e| e.objective).collect(),
            pw_errors: ok
                .iter()
                .map(|e| replicate_pw_error(e, &plan.theta0, &plan.spec))
                .collect::<Result<_>>()?,
        });
    }
    Ok(SimulationSummary {
        t: plan.spec.t,
        u: plan.spec.u,
        rows,
    })
}

/// Runs the study with [`multistart_fit`]. Each replicate draws its own
/// optimizer seed; replicates run in parallel and the starts of one fit run
/// serially.
pub fn run_study(plan: &SimulationPlan, config: &MultistartConfig) -> Result<SimulationSummary> {
    config.validate(&plan.spec)?;
    run_study_with(plan, |counts, a, seed| {
        let mut cfg = config.clone();
        cfg.rng_seed = seed;
        cfg.parallel = false;
        let fit = multistart_fit(&plan.spec, counts, &Family::power(a), &cfg)?;
        Ok((fit.theta_hat, fit.objective_value))
    })
}
