//! Analytic standard errors and t-tests for scalar hypotheses.

use serde::{Deserialize, Serialize};
use statrs::function::beta::beta_reg;
use statrs::function::erf::erfc;

use crate::datamodel::{label_count, ClusterLevel, Dataset, LinearHypothesis};
use crate::error::{Error, Result};
use crate::regression::{FitResult, LinearDesign};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum VarianceKind {
    Classical,
    Hc0,
    Hc1,
    Crve,
}

/// How absorbed fixed-effect levels enter the CRVE small-sample factor.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DofConvention {
    /// df = K + L: every absorbed level counts (areg-style).
    #[default]
    AbsorbCounted,
    /// df = K + 1 when absorbing, K otherwise (xtreg fe-style).
    AbsorbUncounted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceDist {
    Normal,
    TGMinus1,
    TNMinusK,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VarianceSpec {
    pub kind: VarianceKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cluster_level: Option<ClusterLevel>,
    #[serde(default)]
    pub dof_convention: DofConvention,
    /// `None` selects t(G−1) for crve and t(N−df) otherwise.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceDist>,
}

impl VarianceSpec {
    fn plain(kind: VarianceKind) -> Self {
        VarianceSpec {
            kind,
            cluster_level: None,
            dof_convention: DofConvention::AbsorbCounted,
            reference: None,
        }
    }
    pub fn classical() -> Self {
        Self::plain(VarianceKind::Classical)
    }
    pub fn hc0() -> Self {
        Self::plain(VarianceKind::Hc0)
    }
    pub fn hc1() -> Self {
        Self::plain(VarianceKind::Hc1)
    }
    pub fn crve(level: ClusterLevel) -> Self {
        VarianceSpec {
            cluster_level: Some(level),
            ..Self::plain(VarianceKind::Crve)
        }
    }
    pub fn with_reference(mut self, r: ReferenceDist) -> Self {
        self.reference = Some(r);
        self
    }
    pub fn with_dof(mut self, d: DofConvention) -> Self {
        self.dof_convention = d;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match (self.kind, self.cluster_level) {
            (VarianceKind::Crve, None) => {
                Err(Error::Config("crve requires a cluster level".into()))
            }
            (VarianceKind::Crve, Some(_)) => Ok(()),
            (_, Some(_)) => Err(Error::Config(
                "cluster level is only meaningful for crve".into(),
            )),
            _ => {
                if self.reference == Some(ReferenceDist::TGMinus1) {
                    return Err(Error::Config(
                        "t with G-1 df needs a clustered variance".into(),
                    ));
                }
                Ok(())
            }
        }
    }
}

/// Relative size below which a cluster-robust SE is treated as exactly zero.
pub(crate) const SCORE_CANCEL_TOL: f64 = 1e-10;

/// Two-sided p-value of a statistic against N(0,1) or t(df).
pub fn two_sided_p(stat: f64, df: Option<f64>) -> f64 {
    let t = stat.abs();
    match df {
        None => erfc(t / std::f64::consts::SQRT_2),
        Some(v) => {
            if t == 0.0 {
                1.0
            } else {
                beta_reg(v / 2.0, 0.5, v / (v + t * t))
            }
        }
    }
}

/// Precomputed pieces of √(RV̂R') for one design, hypothesis row and spec.
///
/// With a = R(X'ΠX)⁻¹X'Π, Rβ̂ − q = a·y − q and every sandwich reduces to a
/// weighted sum over a_i ê_i.
#[derive(Debug, Clone)]
pub struct VarianceKernel {
    a: Vec<f64>,
    rvr: f64,
    kind: VarianceKind,
    clusters: Option<(Vec<usize>, usize)>,
    weights: Option<Vec<f64>>,
    factor: f64,
    resid_df: f64,
    ref_df: Option<f64>,
}

impl VarianceKernel {
    pub fn new(design: &LinearDesign, ds: &Dataset, row: &[f64], spec: &VarianceSpec) -> Result<Self> {
        spec.validate()?;
        let k = design.ncols();
        if row.len() != k {
            return Err(Error::Config(format!(
                "hypothesis has {} columns, design has {k}",
                row.len()
            )));
        }
        let n = design.nobs();
        let mut a = vec![0.0; n];
        for (j, rj) in row.iter().enumerate() {
            if *rj != 0.0 {
                for (i, ai) in a.iter_mut().enumerate() {
                    *ai += rj * design.proj()[(j, i)];
                }
            }
        }
        let v = design.xtx_inv();
        let mut rvr = 0.0;
        for i in 0..k {
            for j in 0..k {
                rvr += row[i] * v[(i, j)] * row[j];
            }
        }
        let df_all = design.df_model() as f64;
        let nf = n as f64;
        if nf - df_all <= 0.0 {
            return Err(Error::Degenerate(format!(
                "no residual degrees of freedom (N = {n}, df = {df_all})"
            )));
        }
        let mut clusters = None;
        let factor = match spec.kind {
            VarianceKind::Classical | VarianceKind::Hc0 => 1.0,
            VarianceKind::Hc1 => nf / (nf - df_all),
            VarianceKind::Crve => {
                let level = spec.cluster_level.expect("validated");
                let labels = ds.clusters(level).ok_or_else(|| {
                    Error::Config(format!("crve at {level:?} level requires cluster labels"))
                })?;
                let g = label_count(labels);
                if g < 2 {
                    return Err(Error::Degenerate("crve needs at least two clusters".into()));
                }
                let df = match spec.dof_convention {
                    DofConvention::AbsorbCounted => df_all,
                    DofConvention::AbsorbUncounted => {
                        (k + usize::from(design.n_absorbed() > 0)) as f64
                    }
                };
                clusters = Some((labels.to_vec(), g));
                let gf = g as f64;
                gf / (gf - 1.0) * (nf - 1.0) / (nf - df)
            }
        };
        let ref_df = match spec.reference {
            Some(ReferenceDist::Normal) => None,
            Some(ReferenceDist::TGMinus1) => Some(clusters.as_ref().map_or(0, |c| c.1) as f64 - 1.0),
            Some(ReferenceDist::TNMinusK) => Some(nf - df_all),
            None => match &clusters {
                Some((_, g)) => Some(*g as f64 - 1.0),
                None => Some(nf - df_all),
            },
        };
        Ok(VarianceKernel {
            a,
            rvr,
            kind: spec.kind,
            clusters,
            weights: design.weights().map(|w| w.to_vec()),
            factor,
            resid_df: nf - df_all,
            ref_df,
        })
    }

    /// The row a = R(X'ΠX)⁻¹X'Π.
    pub fn a(&self) -> &[f64] {
        &self.a
    }

    pub fn se(&self, residuals: &[f64]) -> f64 {
        let var = match self.kind {
            VarianceKind::Classical => {
                let ssr: f64 = match &self.weights {
                    Some(w) => residuals.iter().zip(w).map(|(e, w)| w * e * e).sum(),
                    None => residuals.iter().map(|e| e * e).sum(),
                };
                ssr / self.resid_df * self.rvr
            }
            VarianceKind::Hc0 | VarianceKind::Hc1 => {
                self.a.iter().zip(residuals).map(|(a, e)| (a * e).powi(2)).sum::<f64>()
            }
            VarianceKind::Crve => {
                let (labels, g) = self.clusters.as_ref().expect("crve has clusters");
                let mut s = vec![0.0; *g];
                for ((l, a), e) in labels.iter().zip(&self.a).zip(residuals) {
                    s[*l] += a * e;
                }
                s.iter().map(|v| v * v).sum::<f64>()
            }
        };
        (self.factor * var).sqrt()
    }

    /// (p-value, statistic) for the given numerator Rβ̂ − q and residuals.
    pub fn test(&self, numerator: f64, residuals: &[f64]) -> Result<(f64, f64)> {
        let se = self.se(residuals);
        if se == 0.0 || !se.is_finite() {
            return Err(Error::Degenerate(format!("standard error is {se}")));
        }
        if self.kind == VarianceKind::Crve {
            // cluster sums that cancel to rounding error are zero in exact arithmetic
            let scale = self.a.iter().zip(residuals).map(|(a, e)| (a * e).powi(2)).sum::<f64>().sqrt();
            if se <= SCORE_CANCEL_TOL * scale * self.factor.sqrt() {
                return Err(Error::Degenerate("cluster scores cancel: standard error is zero".into()));
            }
        }
        let t = numerator / se;
        Ok((two_sided_p(t, self.ref_df), t))
    }
}

pub fn standard_error(fit: &FitResult, ds: &Dataset, h: &LinearHypothesis, spec: &VarianceSpec) -> Result<f64> {
    let (row, _) = h.scalar()?;
    Ok(VarianceKernel::new(fit.design(), ds, &row, spec)?.se(&fit.residuals))
}

pub fn t_test(fit: &FitResult, ds: &Dataset, h: &LinearHypothesis, spec: &VarianceSpec) -> Result<f64> {
    let (row, q) = h.scalar()?;
    let kernel = VarianceKernel::new(fit.design(), ds, &row, spec)?;
    let num: f64 = row.iter().zip(fit.beta_hat.iter()).map(|(r, b)| r * b).sum::<f64>() - q;
    Ok(kernel.test(num, &fit.residuals)?.0)
}

/// G* = G/(1+Γ) from the dispersion of cluster leverage γ_g for one coefficient.
pub fn effective_clusters(fit: &FitResult, ds: &Dataset, coef_index: usize, level: ClusterLevel) -> Result<f64> {
    let labels = ds
        .clusters(level)
        .ok_or_else(|| Error::Config("effective clusters requires cluster labels".into()))?;
    let design = fit.design();
    if coef_index >= design.ncols() {
        return Err(Error::Config(format!("coefficient {coef_index} out of range")));
    }
    let v = design.xtx_inv().column(coef_index).into_owned();
    let xd = design.demeaned_x();
    let w = design.weights();
    let mut gamma = vec![0.0; label_count(labels)];
    for (i, &g) in labels.iter().enumerate() {
        let z: f64 = (0..design.ncols()).map(|j| xd[(i, j)] * v[j]).sum();
        let wi = w.map_or(1.0, |w| w[i]);
        gamma[g] += (wi * z).powi(2);
    }
    let gf = gamma.len() as f64;
    let mean = gamma.iter().sum::<f64>() / gf;
    if mean <= 0.0 {
        return Err(Error::Degenerate("cluster leverages are all zero".into()));
    }
    let disp = gamma.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / gf / (mean * mean);
    Ok(gf / (1.0 + disp))
}
