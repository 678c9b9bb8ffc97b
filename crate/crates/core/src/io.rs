//! Document formats: model specs, counts, parameter vectors, fit results
//! and simulation plans.

use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::asymptotics::{asymptotics_report, BirchDiagnostics};
use crate::error::{Error, Result};
use crate::model::{ModelSpec, ObservedCounts, ParameterVector, ResponsePattern, MAX_ITEMS};
use crate::optimizer::{FitResult, MultistartConfig};
use crate::simulation::{ContaminationSpec, SimulationPlan};

/// JSON form of a [`ModelSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpecDocument {
    pub m: usize,
    pub k: usize,
    pub t: usize,
    pub u: usize,
    #[serde(rename = "Q")]
    pub q: Vec<Vec<Vec<f64>>>,
    #[serde(rename = "C")]
    pub c: Vec<Vec<f64>>,
    #[serde(rename = "V")]
    pub v: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

fn matrix_from_rows(
    name: &str,
    rows: &[Vec<f64>],
    nrows: usize,
    ncols: usize,
) -> Result<DMatrix<f64>> {
    if rows.len() != nrows {
        return Err(Error::parse(
            name,
            format!("expected {nrows} rows, found {}", rows.len()),
        ));
    }
    for (i, r) in rows.iter().enumerate() {
        if r.len() != ncols {
            return Err(Error::parse(
                name,
                format!("row {} has {} entries, expected {ncols}", i + 1, r.len()),
            ));
        }
    }
    Ok(DMatrix::from_fn(nrows, ncols, |i, j| rows[i][j]))
}

fn matrix_to_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ModelSpecDocument {
    pub fn from_spec(spec: &ModelSpec) -> Self {
        ModelSpecDocument {
            m: spec.m,
            k: spec.k,
            t: spec.t,
            u: spec.u,
            q: spec.q.iter().map(matrix_to_rows).collect(),
            c: matrix_to_rows(&spec.c),
            v: matrix_to_rows(&spec.v),
            d: spec.d.iter().copied().collect(),
        }
    }

    pub fn to_spec(&self) -> Result<ModelSpec> {
        let (m, k) = (self.m, self.k);
        if self.q.len() != self.t {
            return Err(Error::parse(
                "Q",
                format!("expected t = {} matrices, found {}", self.t, self.q.len()),
            ));
        }
        let q = self
            .q
            .iter()
            .enumerate()
            .map(|(r, rows)| matrix_from_rows(&format!("Q[{}]", r + 1), rows, m, k))
            .collect::<Result<Vec<_>>>()?;
        let c = matrix_from_rows("C", &self.c, m, k)?;
        let v = matrix_from_rows("V", &self.v, m, self.u)?;
        if self.d.len() != m {
            return Err(Error::parse(
                "d",
                format!("expected {m} entries, found {}", self.d.len()),
            ));
        }
        let spec = ModelSpec {
            m,
            k,
            t: self.t,
            u: self.u,
            q,
            c,
            v,
            d: DVector::from_column_slice(&self.d),
        };
        let report = spec.validate();
        if !report.is_ok() {
            return Err(Error::InvalidSpec(report.violations));
        }
        Ok(spec)
    }
}

fn json_error(context: &str, e: serde_json::Error) -> Error {
    Error::parse(
        context,
        format!("line {}, column {}: {e}", e.line(), e.column()),
    )
}

pub fn parse_model_spec(text: &str) -> Result<ModelSpec> {
    let doc: ModelSpecDocument = serde_json::from_str(text).map_err(|e| json_error("model", e))?;
    doc.to_spec()
}

pub fn serialize_model_spec(spec: &ModelSpec) -> String {
    let mut s = serde_json::to_string_pretty(&ModelSpecDocument::from_spec(spec))
        .expect("plain data serializes");
    s.push('\n');
    s
}

/// Reads `pattern,count` lines. Patterns are `k` characters of 0/1 with
/// item 1 leftmost; absent patterns count zero. Blank lines are skipped.
pub fn parse_counts(text: &str, k: usize) -> Result<ObservedCounts> {
    if k == 0 || k > MAX_ITEMS {
        return Err(Error::InvalidInput(format!("k must be in 1..={MAX_ITEMS}")));
    }
    let mut counts = vec![0u64; 1 << k];
    let mut seen = vec![false; 1 << k];
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(false)
        .trim(csv::Trim::All)
        .flexible(true)
        .from_reader(text.as_bytes());
    for record in reader.records() {
        let record = record.map_err(|e| Error::parse("counts", e.to_string()))?;
        let line = record.position().map(|p| p.line()).unwrap_or(0);
        let ctx = format!("counts line {line}");
        if record.iter().all(|f| f.is_empty()) {
            continue;
        }
        if record.len() != 2 {
            return Err(Error::parse(
                ctx,
                format!("expected `pattern,count`, found {} fields", record.len()),
            ));
        }
        let pattern = &record[0];
        if pattern.len() != k || !pattern.bytes().all(|b| b == b'0' || b == b'1') {
            return Err(Error::parse(
                ctx,
                format!("pattern `{pattern}` is not {k} characters of 0/1"),
            ));
        }
        let bits: Vec<u8> = pattern.bytes().map(|b| b - b'0').collect();
        let idx = ResponsePattern { bits }.index();
        let count: u64 = record[1].parse().map_err(|_| {
            Error::parse(
                &ctx,
                format!("count `{}` is not a nonnegative integer", &record[1]),
            )
        })?;
        if seen[idx] {
            return Err(Error::parse(ctx, format!("duplicate pattern `{pattern}`")));
        }
        seen[idx] = true;
        counts[idx] = count;
    }
    let counts = ObservedCounts::new(counts)?;
    if counts.total() == 0 {
        return Err(Error::parse("counts", "total count is zero"));
    }
    Ok(counts)
}

/// Writes every pattern in canonical order, zeros included.
pub fn serialize_counts(counts: &ObservedCounts) -> String {
    let k = counts.k();
    let mut s = String::new();
    for (idx, c) in counts.counts.iter().enumerate() {
        let p: String = ResponsePattern::from_index(idx, k)
            .bits
            .iter()
            .map(|b| if *b == 1 { '1' } else { '0' })
            .collect();
        s.push_str(&format!("{p},{c}\n"));
    }
    s
}

/// JSON form of a parameter vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThetaDocument {
    pub lambda: Vec<f64>,
    pub eta: Vec<f64>,
}

impl From<&ParameterVector> for ThetaDocument {
    fn from(p: &ParameterVector) -> Self {
        ThetaDocument {
            lambda: p.lambda.clone(),
            eta: p.eta.clone(),
        }
    }
}

impl From<ThetaDocument> for ParameterVector {
    fn from(d: ThetaDocument) -> Self {
        ParameterVector::new(d.lambda, d.eta)
    }
}

/// Accepts either a bare `{"lambda", "eta"}` object or a result document.
pub fn parse_theta(text: &str) -> Result<ParameterVector> {
    let value: serde_json::Value =
        serde_json::from_str(text).map_err(|e| json_error("theta", e))?;
    let inner = match value.get("theta") {
        Some(t) => t.clone(),
        None => value,
    };
    let doc: ThetaDocument =
        serde_json::from_value(inner).map_err(|e| Error::parse("theta", e.to_string()))?;
    Ok(doc.into())
}

/// Parses a real number or a ratio such as `2/3` or `-1/2`.
pub fn parse_rational(s: &str) -> Result<f64> {
    let s = s.trim();
    let bad = || Error::parse("number", format!("`{s}` is not a real number or ratio"));
    let value = match s.split_once('/') {
        Some((num, den)) => {
            let n: f64 = num.trim().parse().map_err(|_| bad())?;
            let d: f64 = den.trim().parse().map_err(|_| bad())?;
            if d == 0.0 {
                return Err(bad());
            }
            n / d
        }
        None => s.parse().map_err(|_| bad())?,
    };
    if value.is_finite() {
        Ok(value)
    } else {
        Err(bad())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

pub fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn write_file(path: &Path, contents: &str) -> Result<()> {
    fs::write(path, contents).map_err(|source| Error::Io {
        path: path.display().to_string(),
        source,
    })
}

fn with_file_context<T>(path: &Path, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::Parse { context, message } => Error::Parse {
            context: format!("{}: {context}", path.display()),
            message,
        },
        other => other,
    })
}

pub fn load_model_spec(path: &Path) -> Result<ModelSpec> {
    with_file_context(path, parse_model_spec(&read_file(path)?))
}

pub fn load_counts(path: &Path, k: usize) -> Result<ObservedCounts> {
    with_file_context(path, parse_counts(&read_file(path)?, k))
}

/// Provenance of a fit.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputsDocument {
    pub model_sha256: String,
    pub data_sha256: String,
}

/// One start that passed the gate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ForwardedStart {
    pub index: usize,
    pub rough_value: f64,
    pub fine_value: Option<f64>,
    pub refined_value: Option<f64>,
    pub fine_iterations: Option<usize>,
    pub refine_accepted: Option<bool>,
    pub projections: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerSummary {
    pub n_initial: usize,
    pub bounds_lo: Vec<f64>,
    pub bounds_hi: Vec<f64>,
    pub best_start: usize,
    pub starts_failed: usize,
    pub objective_evaluations: usize,
    pub gradient_evaluations: usize,
    pub forwarded: Vec<ForwardedStart>,
}

impl OptimizerSummary {
    pub fn from_fit(fit: &FitResult, config: &MultistartConfig) -> Self {
        OptimizerSummary {
            n_initial: config.n_initial,
            bounds_lo: [config.bounds_lambda_lo.as_slice(), &config.bounds_eta_lo].concat(),
            bounds_hi: [config.bounds_lambda_up.as_slice(), &config.bounds_eta_up].concat(),
            best_start: fit.best_start,
            starts_failed: fit.trace.iter().filter(|t| t.rough_value.is_none()).count(),
            objective_evaluations: fit.objective_evaluations,
            gradient_evaluations: fit.gradient_evaluations,
            forwarded: fit
                .trace
                .iter()
                .filter(|t| t.forwarded)
                .map(|t| ForwardedStart {
                    index: t.index,
                    rough_value: t.rough_value.unwrap_or(f64::INFINITY),
                    fine_value: t.fine.as_ref().map(|f| f.value),
                    refined_value: t.refined.as_ref().map(|r| r.value),
                    fine_iterations: t.fine.as_ref().map(|f| f.iterations),
                    refine_accepted: t.refined.as_ref().map(|r| r.accepted),
                    projections: t.fine.as_ref().map(|f| f.projections),
                })
                .collect(),
        }
    }
}

/// Asymptotic quantities, or the reason they are unavailable.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticsDocument {
    /// `ok`, `rank_deficient` or `unavailable`.
    pub status: String,
    pub message: Option<String>,
    pub birch: Option<BirchDiagnostics>,
    pub n: u64,
    pub se: Option<Vec<f64>>,
    pub param_cov: Option<Vec<Vec<f64>>>,
    pub param_cov_unscaled: Option<Vec<Vec<f64>>>,
    pub manifest_cov: Option<Vec<Vec<f64>>>,
    pub manifest_cov_unscaled: Option<Vec<Vec<f64>>>,
}

impl AsymptoticsDocument {
    pub fn compute(spec: &ModelSpec, theta: &ParameterVector, n: u64) -> Self {
        let empty =
            |status: &str, message: String, birch: Option<BirchDiagnostics>| AsymptoticsDocument {
                status: status.into(),
                message: Some(message),
                birch,
                n,
                se: None,
                param_cov: None,
                param_cov_unscaled: None,
                manifest_cov: None,
                manifest_cov_unscaled: None,
            };
        match asymptotics_report(spec, theta, n) {
            Ok(r) => AsymptoticsDocument {
                status: "ok".into(),
                message: None,
                birch: Some(r.birch),
                n,
                se: Some(r.se),
                param_cov: Some(matrix_to_rows(&r.param_cov)),
                param_cov_unscaled: Some(matrix_to_rows(&r.param_cov_unscaled)),
                manifest_cov: Some(matrix_to_rows(&r.manifest_cov)),
                manifest_cov_unscaled: Some(matrix_to_rows(&r.manifest_cov_unscaled)),
            },
            Err(Error::RankDeficient(d)) => {
                let msg = format!(
                    "Jacobian rank {} < {} parameters; covariance not computed",
                    d.rank, d.parameters
                );
                empty("rank_deficient", msg, Some(*d))
            }
            Err(e) => empty("unavailable", e.to_string(), None),
        }
    }
}

/// Everything `fit` writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResultDocument {
    pub tool: String,
    pub version: String,
    /// Seconds since the Unix epoch at write time.
    pub timestamp: u64,
    pub seed: u64,
    pub family: String,
    pub a: Option<f64>,
    pub inputs: InputsDocument,
    pub n: u64,
    pub theta: ThetaDocument,
    /// `m x k` item probabilities.
    pub item_probabilities: Vec<Vec<f64>>,
    pub class_weights: Vec<f64>,
    pub objective: f64,
    pub gradient_norm: f64,
    pub converged: bool,
    pub optimizer: OptimizerSummary,
    pub asymptotics: AsymptoticsDocument,
}

impl ResultDocument {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        fit: &FitResult,
        spec: &ModelSpec,
        counts: &ObservedCounts,
        a: Option<f64>,
        config: &MultistartConfig,
        inputs: InputsDocument,
        timestamp: u64,
    ) -> Self {
        ResultDocument {
            tool: env!("CARGO_PKG_NAME").into(),
            version: env!("CARGO_PKG_VERSION").into(),
            timestamp,
            seed: config.rng_seed,
            family: fit.family.clone(),
            a,
            inputs,
            n: counts.total(),
            theta: ThetaDocument::from(&fit.theta_hat),
            item_probabilities: matrix_to_rows(&fit.item_probabilities.p),
            class_weights: fit.class_weights.w.iter().copied().collect(),
            objective: fit.objective_value,
            gradient_norm: fit.gradient_norm,
            converged: fit.converged,
            optimizer: OptimizerSummary::from_fit(fit, config),
            asymptotics: AsymptoticsDocument::compute(spec, &fit.theta_hat, counts.total()),
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("plain data serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| json_error("result", e))
    }
}

/// A model given inline or as a path relative to the plan file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ModelSource {
    Path(PathBuf),
    Inline(ModelSpecDocument),
}

impl ModelSource {
    fn resolve(&self, base: &Path) -> Result<ModelSpec> {
        match self {
            ModelSource::Path(p) => load_model_spec(&base.join(p)),
            ModelSource::Inline(doc) => doc.to_spec(),
        }
    }
}

/// A family index written as a number or a ratio string.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Number {
    Value(f64),
    Text(String),
}

impl Number {
    pub fn value(&self) -> Result<f64> {
        match self {
            Number::Value(v) => Ok(*v),
            Number::Text(s) => parse_rational(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ContaminationDocument {
    pub model: ModelSource,
    pub theta: ThetaDocument,
    pub epsilon: f64,
}

/// Optimizer overrides; omitted fields keep the defaults.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimizerDocument {
    pub starts: Option<usize>,
    pub bounds: Option<[f64; 2]>,
    pub hj_initial_step: Option<f64>,
    pub qn_gradient_tol: Option<f64>,
    pub root_residual_tol: Option<f64>,
    pub max_qn_iterations: Option<usize>,
    pub max_root_iterations: Option<usize>,
    pub keep_top: Option<usize>,
}

impl OptimizerDocument {
    pub fn config(&self, spec: &ModelSpec) -> MultistartConfig {
        let mut c = match self.bounds {
            Some([lo, hi]) => MultistartConfig::with_box(spec, lo, hi),
            None => MultistartConfig::for_spec(spec),
        };
        if let Some(v) = self.starts {
            c.n_initial = v;
        }
        if let Some(v) = self.hj_initial_step {
            c.hj_initial_step = v;
        }
        if let Some(v) = self.qn_gradient_tol {
            c.qn_gradient_tol = v;
        }
        if let Some(v) = self.root_residual_tol {
            c.root_residual_tol = v;
        }
        if let Some(v) = self.max_qn_iterations {
            c.max_qn_iterations = v;
        }
        if let Some(v) = self.max_root_iterations {
            c.max_root_iterations = v;
        }
        c.keep_top = self.keep_top;
        c
    }
}

/// JSON form of a [`SimulationPlan`] plus optimizer settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlanDocument {
    pub model: ModelSource,
    pub theta0: ThetaDocument,
    pub sample_sizes: Vec<u64>,
    pub a_values: Vec<Number>,
    pub replicates: usize,
    pub seed: u64,
    #[serde(default)]
    pub contamination: Option<ContaminationDocument>,
    #[serde(default)]
    pub optimizer: OptimizerDocument,
}

impl PlanDocument {
    /// Resolves model paths against `base` and builds the plan and optimizer settings.
    pub fn resolve(&self, base: &Path) -> Result<(SimulationPlan, MultistartConfig)> {
        let spec = self.model.resolve(base)?;
        let contamination = match &self.contamination {
            Some(c) => Some(ContaminationSpec {
                spec: c.model.resolve(base)?,
                theta: c.theta.clone().into(),
                epsilon: c.epsilon,
            }),
            None => None,
        };
        let plan = SimulationPlan {
            theta0: self.theta0.clone().into(),
            sample_sizes: self.sample_sizes.clone(),
            a_values: self
                .a_values
                .iter()
                .map(Number::value)
                .collect::<Result<_>>()?,
            replicates: self.replicates,
            rng_seed: self.seed,
            contamination,
            spec: spec.clone(),
        };
        plan.validate()?;
        let config = self.optimizer.config(&spec);
        config.validate(&spec)?;
        Ok((plan, config))
    }
}

pub fn parse_plan(text: &str, base: &Path) -> Result<(SimulationPlan, MultistartConfig)> {
    let doc: PlanDocument = serde_json::from_str(text).map_err(|e| json_error("plan", e))?;
    doc.resolve(base)
}

pub fn load_plan(path: &Path) -> Result<(SimulationPlan, MultistartConfig)> {
    let base = path.parent().unwrap_or(Path::new("."));
    with_file_context(path, parse_plan(&read_file(path)?, base))
}
