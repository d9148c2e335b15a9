//! The assessment loop: regenerate outcomes (or shocks) under the null, rerun
//! the method under audit and summarize the p-values.
//!
//! Replicate b draws its errors from `root.child(b).child(0)` and hands
//! `root.child(b).child(1)` to resampling methods, so results do not depend on
//! how replicates are scheduled across threads.

use std::collections::BTreeMap;
use std::sync::Arc;

use nalgebra::DVector;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, LinearHypothesis};
use crate::error::{config, Error, ExitClass, Result};
use crate::errorgen::{draw_shocks, ErrorModel, PreparedErrors};
use crate::matching::{MatchSpec, Matching};
use crate::regression::{zero_then_project, LinearDesign};
use crate::resampling::{
    sign_change_p, Permutation, ResamplingKind, ResamplingTestSpec, ShiftShare, WildCluster,
};
use crate::rng::Substream;
use crate::variance::{VarianceKernel, VarianceSpec};

fn default_inner() -> usize {
    999
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum InferenceMethod {
    Analytic(VarianceSpec),
    Resampling(ResamplingTestSpec),
    MatchAi(MatchSpec),
    MatchSigns {
        #[serde(flatten)]
        spec: MatchSpec,
        #[serde(default = "default_inner")]
        inner_reps: usize,
    },
}

impl InferenceMethod {
    fn validate(&self) -> Result<()> {
        match self {
            InferenceMethod::Analytic(v) => v.validate(),
            InferenceMethod::Resampling(r) => r.validate(),
            InferenceMethod::MatchAi(_) => Ok(()),
            InferenceMethod::MatchSigns { inner_reps, .. } => {
                if *inner_reps == 0 {
                    return config("inner_reps must be at least 1");
                }
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "scheme", rename_all = "snake_case")]
pub enum Generator {
    /// yᵇ = Xβ̃ + εᵇ.
    Errors { model: ErrorModel },
    /// Redraw shocks, rebuild the shift-share regressor, keep y.
    Shocks {
        #[serde(default)]
        cluster_draws: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BetaTildePolicy {
    /// R'(RR')⁻¹q: the minimum-norm point of {Rβ = q}.
    #[default]
    ZeroThenProject,
    /// Least squares on the observed outcome subject to Rβ = q.
    RestrictedFit,
}

fn default_reps() -> usize {
    10_000
}
fn default_alphas() -> Vec<f64> {
    vec![0.01, 0.05, 0.10]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentSpec {
    pub hypothesis: LinearHypothesis,
    pub method: InferenceMethod,
    pub generator: Generator,
    #[serde(default)]
    pub beta_tilde_policy: BetaTildePolicy,
    #[serde(default = "default_reps")]
    pub reps: usize,
    #[serde(default = "default_alphas")]
    pub alphas: Vec<f64>,
    #[serde(default)]
    pub seed: u64,
    /// Generate under Rβ = alternative while still testing the original q.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub power_alternative: Option<f64>,
    /// Residual-based generators draw from the null-restricted fit's residuals.
    #[serde(default)]
    pub restricted_residuals: bool,
}

impl AssessmentSpec {
    pub fn new(hypothesis: LinearHypothesis, method: InferenceMethod, generator: Generator) -> Self {
        AssessmentSpec {
            hypothesis,
            method,
            generator,
            beta_tilde_policy: BetaTildePolicy::default(),
            reps: default_reps(),
            alphas: default_alphas(),
            seed: 0,
            power_alternative: None,
            restricted_residuals: false,
        }
    }

    pub fn with_restricted_residuals(mut self, on: bool) -> Self {
        self.restricted_residuals = on;
        self
    }

    pub fn errors(hypothesis: LinearHypothesis, method: InferenceMethod, model: ErrorModel) -> Self {
        Self::new(hypothesis, method, Generator::Errors { model })
    }

    pub fn with_reps(mut self, reps: usize) -> Self {
        self.reps = reps;
        self
    }
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }
    pub fn with_alphas(mut self, alphas: Vec<f64>) -> Self {
        self.alphas = alphas;
        self
    }
    pub fn with_policy(mut self, p: BetaTildePolicy) -> Self {
        self.beta_tilde_policy = p;
        self
    }
    pub fn with_alternative(mut self, alt: f64) -> Self {
        self.power_alternative = Some(alt);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.reps < 100 {
            return config(format!("reps must be at least 100 (got {})", self.reps));
        }
        if self.alphas.is_empty() {
            return config("alphas must not be empty");
        }
        if self.alphas.iter().any(|a| !(0.0 < *a && *a < 1.0)) {
            return config("alphas must lie in (0, 1)");
        }
        if self.alphas.windows(2).any(|w| w[0] >= w[1]) {
            return config("alphas must be strictly increasing");
        }
        self.hypothesis.scalar()?;
        if let Some(a) = self.power_alternative {
            if !a.is_finite() {
                return config("power alternative must be finite");
            }
            if matches!(self.generator, Generator::Shocks { .. }) {
                return config("power mode is not defined under shock resampling");
            }
        }
        self.method.validate()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RejectionRate {
    pub alpha: f64,
    pub rate: f64,
    pub mc_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct FailureSummary {
    pub count: usize,
    /// Failure message → occurrences.
    pub reasons: BTreeMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssessmentReport {
    pub spec: AssessmentSpec,
    pub version: String,
    pub seed: u64,
    pub reps: usize,
    pub rejection_rates: Vec<RejectionRate>,
    pub ks_uniform: f64,
    pub max_over_rejection: f64,
    pub failures: FailureSummary,
    /// Observations whose fitted error variance hit the positive floor.
    #[serde(default)]
    pub clamped_variances: usize,
    /// Sorted; written separately as pvalues.csv.
    #[serde(skip)]
    pub pvalues: Vec<f64>,
    #[serde(skip)]
    pub wall_seconds: f64,
}

impl AssessmentReport {
    pub fn rate(&self, alpha: f64) -> Option<f64> {
        self.rejection_rates
            .iter()
            .find(|r| (r.alpha - alpha).abs() < 1e-12)
            .map(|r| r.rate)
    }

    pub fn effective_reps(&self) -> usize {
        self.pvalues.len()
    }
}

/// Fraction of sorted p-values at or below `u`.
fn ecdf(sorted: &[f64], u: f64) -> f64 {
    sorted.partition_point(|p| *p <= u) as f64 / sorted.len() as f64
}

pub fn ks_uniform(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, p)| {
            let p = p.clamp(0.0, 1.0);
            ((i + 1) as f64 / n - p).max(p - i as f64 / n)
        })
        .fold(0.0, f64::max)
}

/// sup over α of F̂(α) − α, attained at sample points.
pub fn max_over_rejection(sorted: &[f64]) -> f64 {
    let n = sorted.len() as f64;
    sorted
        .iter()
        .enumerate()
        .map(|(i, p)| (i + 1) as f64 / n - p)
        .fold(0.0, f64::max)
}

/// Empirical CDF of the report's p-values on `grid`.
pub fn pvalue_cdf(report: &AssessmentReport, grid: &[f64]) -> Vec<(f64, f64)> {
    grid.iter().map(|&u| (u, ecdf(&report.pvalues, u))).collect()
}

/// A method with everything that depends only on the design precomputed.
enum Prepared {
    Analytic {
        design: Arc<LinearDesign>,
        kernel: VarianceKernel,
        row: Vec<f64>,
        q: f64,
    },
    Wild(WildCluster),
    Permutation(Permutation),
    Akm(ShiftShare),
    Akm0(ShiftShare),
    SignChange { q: f64, inner_reps: usize },
    MatchAi(Matching),
    MatchSigns(Matching, usize),
}

impl Prepared {
    fn new(ds: &Dataset, h: &LinearHypothesis, method: &InferenceMethod, design: Option<Arc<LinearDesign>>) -> Result<Self> {
        let design = || -> Result<Arc<LinearDesign>> {
            match &design {
                Some(d) => Ok(Arc::clone(d)),
                None => Ok(Arc::new(LinearDesign::from_dataset(ds)?)),
            }
        };
        Ok(match method {
            InferenceMethod::Analytic(spec) => {
                let design = design()?;
                let (row, q) = h.scalar()?;
                let kernel = VarianceKernel::new(&design, ds, &row, spec)?;
                Prepared::Analytic { design, kernel, row, q }
            }
            InferenceMethod::Resampling(spec) => match spec.kind {
                ResamplingKind::WildCluster => Prepared::Wild(WildCluster::with_design(design()?, ds, h, spec)?),
                ResamplingKind::Permutation => {
                    Prepared::Permutation(Permutation::new(ds, h, spec.scheme, spec.inner_reps)?)
                }
                ResamplingKind::Akm => Prepared::Akm(ShiftShare::new(ds, h)?),
                ResamplingKind::Akm0 => Prepared::Akm0(ShiftShare::new(ds, h)?),
                ResamplingKind::SignChange => {
                    let col = h.tested_column();
                    let x = ds.x();
                    let intercept_only = ds.ncols() == 1
                        && col == Some(0)
                        && x.iter().all(|v| *v == 1.0)
                        && ds.absorb().is_none();
                    if !intercept_only {
                        return config("sign_change tests the mean of an intercept-only design");
                    }
                    Prepared::SignChange {
                        q: h.q[0] / h.r[(0, 0)],
                        inner_reps: spec.inner_reps,
                    }
                }
            },
            InferenceMethod::MatchAi(spec) => Prepared::MatchAi(Matching::new(ds, h, spec)?),
            InferenceMethod::MatchSigns { spec, inner_reps } => {
                Prepared::MatchSigns(Matching::new(ds, h, spec)?, *inner_reps)
            }
        })
    }

    fn p_value(&self, y: &[f64], stream: Substream) -> Result<f64> {
        match self {
            Prepared::Analytic { design, kernel, row, q } => {
                let beta = design.coefficients(y);
                let e = design.residuals(y, &beta);
                let num = row.iter().zip(beta.iter()).map(|(r, b)| r * b).sum::<f64>() - q;
                Ok(kernel.test(num, &e)?.0)
            }
            Prepared::Wild(w) => w.p_value(y, stream),
            Prepared::Permutation(p) => p.p_value(y, stream),
            Prepared::Akm(s) => s.akm_p(y),
            Prepared::Akm0(s) => s.akm0_p(y),
            Prepared::SignChange { q, inner_reps } => {
                let d: Vec<f64> = y.iter().map(|v| v - q).collect();
                Ok(sign_change_p(&d, *inner_reps, stream)?.p_value)
            }
            Prepared::MatchAi(m) => m.ai_p(y),
            Prepared::MatchSigns(m, inner) => Ok(m.sign_change(y, *inner, stream)?.p_value),
        }
    }
}

/// Coefficients used to generate outcomes: a point of {Rβ = q_gen}.
pub fn beta_tilde(ds: &Dataset, design: &LinearDesign, spec: &AssessmentSpec) -> Result<DVector<f64>> {
    let h = match spec.power_alternative {
        Some(a) => spec.hypothesis.with_q(a)?,
        None => spec.hypothesis.clone(),
    };
    match spec.beta_tilde_policy {
        BetaTildePolicy::ZeroThenProject => zero_then_project(&h),
        BetaTildePolicy::RestrictedFit => {
            let b = design.coefficients(ds.y());
            design.restrict(&b, &h)
        }
    }
}

fn collect(spec: &AssessmentSpec, results: Vec<Result<f64>>, clamped: usize, started: std::time::Instant) -> Result<AssessmentReport> {
    let mut pvalues = Vec::with_capacity(results.len());
    let mut failures = FailureSummary::default();
    let mut first = None;
    for r in results {
        match r {
            Ok(p) if p.is_finite() => pvalues.push(p),
            Ok(p) => {
                failures.count += 1;
                *failures.reasons.entry(format!("non-finite p-value {p}")).or_insert(0) += 1;
            }
            Err(e) if e.exit_class() == ExitClass::Numerical => {
                failures.count += 1;
                let msg = e.to_string();
                first.get_or_insert_with(|| msg.clone());
                *failures.reasons.entry(msg).or_insert(0) += 1;
            }
            Err(e) => return Err(e),
        }
    }
    if failures.count * 100 > spec.reps {
        return Err(Error::ReplicateFailures {
            failed: failures.count,
            reps: spec.reps,
            first: first.unwrap_or_else(|| "non-finite p-value".into()),
        });
    }
    pvalues.sort_by(f64::total_cmp);
    let b = pvalues.len() as f64;
    let rejection_rates = spec
        .alphas
        .iter()
        .map(|&alpha| {
            let rate = ecdf(&pvalues, alpha);
            RejectionRate {
                alpha,
                rate,
                mc_se: (rate * (1.0 - rate) / b).sqrt(),
            }
        })
        .collect();
    Ok(AssessmentReport {
        spec: spec.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed: spec.seed,
        reps: spec.reps,
        rejection_rates,
        ks_uniform: ks_uniform(&pvalues),
        max_over_rejection: max_over_rejection(&pvalues),
        failures,
        clamped_variances: clamped,
        pvalues,
        wall_seconds: started.elapsed().as_secs_f64(),
    })
}

pub fn run_assessment(ds: &Dataset, spec: &AssessmentSpec) -> Result<AssessmentReport> {
    spec.validate()?;
    let started = std::time::Instant::now();
    let root = Substream::root(spec.seed);
    let h = &spec.hypothesis;
    match &spec.generator {
        Generator::Errors { model } => {
            let design = Arc::new(LinearDesign::from_dataset(ds)?);
            let bt = beta_tilde(ds, &design, spec)?;
            let mean: Vec<f64> = (ds.x() * &bt).iter().copied().collect();
            let base = if model.needs_residuals() {
                let mut b = design.coefficients(ds.y());
                if spec.restricted_residuals {
                    b = design.restrict(&b, h)?;
                }
                Some(design.residuals(ds.y(), &b))
            } else {
                None
            };
            let errors = PreparedErrors::prepare(model, ds, base.as_deref(), h.tested_column())?;
            let method = Prepared::new(ds, h, &spec.method, Some(design))?;
            let results: Vec<Result<f64>> = (0..spec.reps)
                .into_par_iter()
                .map(|b| {
                    let s = root.child(b as u64);
                    let mut y = vec![0.0; ds.nobs()];
                    errors.draw(&mut s.child(0).rng(), &mut y);
                    for (y, m) in y.iter_mut().zip(&mean) {
                        *y += m;
                    }
                    method.p_value(&y, s.child(1))
                })
                .collect();
            collect(spec, results, errors.clamped(), started)
        }
        Generator::Shocks { cluster_draws } => {
            let col = ds
                .shift_share_col()
                .ok_or_else(|| Error::Config("shock resampling needs a designated shift-share column".into()))?;
            if h.tested_column() != Some(col) || h.q[0] != 0.0 {
                return config("shock resampling tests a zero coefficient on the shift-share column");
            }
            let results: Vec<Result<f64>> = (0..spec.reps)
                .into_par_iter()
                .map(|b| {
                    let s = root.child(b as u64);
                    let dsb = draw_shocks(ds, &mut s.child(0).rng(), *cluster_draws)?;
                    Prepared::new(&dsb, h, &spec.method, None)?.p_value(dsb.y(), s.child(1))
                })
                .collect();
            collect(spec, results, 0, started)
        }
    }
}

/// Size under Rβ = alternative; requires `power_alternative`.
pub fn run_power(ds: &Dataset, spec: &AssessmentSpec) -> Result<AssessmentReport> {
    if spec.power_alternative.is_none() {
        return config("run_power needs power_alternative");
    }
    run_assessment(ds, spec)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub ratio: f64,
    pub report: AssessmentReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepReport {
    pub points: Vec<SweepPoint>,
    /// Index into `points` of the largest 5% rejection rate.
    pub worst: usize,
    pub max_rate: f64,
}

/// Runs the assessment with two-group heteroskedastic errors at each
/// variance ratio σ₁²/σ₀² and reports the largest 5% rejection rate.
pub fn worst_case_sweep(ds: &Dataset, spec: &AssessmentSpec, ratio_grid: &[f64]) -> Result<SweepReport> {
    if ratio_grid.is_empty() {
        return config("ratio grid is empty");
    }
    if !spec.alphas.iter().any(|a| (a - 0.05).abs() < 1e-12) {
        return config("worst_case_sweep reports the 5% rate; include 0.05 in alphas");
    }
    let mut points = Vec::with_capacity(ratio_grid.len());
    for &ratio in ratio_grid {
        let mut s = spec.clone();
        s.generator = Generator::Errors {
            model: ErrorModel::TwoGroupHetero { ratio, column: None },
        };
        let report = run_assessment(ds, &s)?;
        points.push(SweepPoint { ratio, report });
    }
    let (worst, max_rate) = points
        .iter()
        .enumerate()
        .map(|(i, p)| (i, p.report.rate(0.05).expect("checked")))
        .fold((0, f64::NEG_INFINITY), |acc, x| if x.1 > acc.1 { x } else { acc });
    Ok(SweepReport { points, worst, max_rate })
}
