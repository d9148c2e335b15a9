//! Nearest-neighbor matching estimate of the effect on the treated, with a
//! variance built from matched-set counts and same-arm neighbor variances.

use serde::{Deserialize, Serialize};

use crate::datamodel::{Dataset, LinearHypothesis};
use crate::error::{config, Error, Result};
use crate::resampling::{sign_change_p, SignChangeOutcome};
use crate::rng::Substream;
use crate::variance::two_sided_p;

fn one() -> usize {
    1
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchSpec {
    /// Matches per treated unit.
    #[serde(default = "one")]
    pub m: usize,
    #[serde(default = "yes")]
    pub with_replacement: bool,
    /// Covariate columns; defaults to every column except the treatment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub covariates: Option<Vec<usize>>,
}

impl Default for MatchSpec {
    fn default() -> Self {
        MatchSpec {
            m: 1,
            with_replacement: true,
            covariates: None,
        }
    }
}

/// Output of [`att_match`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttMatch {
    pub estimate: f64,
    /// d_k = Y_k − mean of matched controls, in treated-row order.
    pub discrepancies: Vec<f64>,
    /// K_M(j): times row j is used as a match (zero for treated rows).
    pub match_counts: Vec<usize>,
}

/// Matched sets and neighbor lists for a fixed covariate design.
#[derive(Debug, Clone)]
pub struct Matching {
    treated: Vec<usize>,
    matches: Vec<Vec<usize>>,
    counts: Vec<usize>,
    m: usize,
    /// Two nearest same-arm rows; absent when an arm has fewer than 3 units.
    neighbors: Option<Vec<[usize; 2]>>,
    q: f64,
}

struct Metric {
    cols: Vec<Vec<f64>>,
    inv_var: Vec<f64>,
}

impl Metric {
    fn dist(&self, i: usize, j: usize) -> f64 {
        self.cols
            .iter()
            .zip(&self.inv_var)
            .map(|(c, w)| w * (c[i] - c[j]).powi(2))
            .sum()
    }

    /// The `k` nearest candidates to `i`; ties go to the lower row index.
    fn nearest(&self, i: usize, candidates: impl Iterator<Item = usize>, k: usize) -> Vec<usize> {
        let mut v: Vec<(f64, usize)> = candidates.map(|j| (self.dist(i, j), j)).collect();
        v.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        v.into_iter().take(k).map(|p| p.1).collect()
    }
}

impl Matching {
    /// The treatment is the column restricted by `h`; q is the null effect.
    pub fn new(ds: &Dataset, h: &LinearHypothesis, spec: &MatchSpec) -> Result<Self> {
        if spec.m == 0 {
            return config("matching needs M ≥ 1");
        }
        let tcol = h
            .tested_column()
            .ok_or_else(|| Error::Config("matching needs a single-coefficient hypothesis".into()))?;
        let q = h.q[0] / h.r[(0, tcol)];
        let x = ds.x();
        let d: Vec<f64> = x.column(tcol).iter().copied().collect();
        if d.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return config("matching needs a binary (0/1) treatment");
        }
        let covs: Vec<usize> = match &spec.covariates {
            Some(c) => c.clone(),
            None => (0..ds.ncols()).filter(|c| *c != tcol).collect(),
        };
        if covs.is_empty() {
            return config("matching needs at least one covariate");
        }
        if covs.iter().any(|c| *c >= ds.ncols() || *c == tcol) {
            return config("covariate list must name non-treatment columns");
        }
        let n = ds.nobs();
        let treated: Vec<usize> = (0..n).filter(|i| d[*i] == 1.0).collect();
        let controls: Vec<usize> = (0..n).filter(|i| d[*i] == 0.0).collect();
        if treated.is_empty() {
            return config("matching needs at least one treated unit");
        }
        if controls.len() < spec.m {
            return config(format!("{} controls for M = {}", controls.len(), spec.m));
        }
        if !spec.with_replacement && controls.len() < spec.m * treated.len() {
            return config("too few controls to match without replacement");
        }
        let mut metric = Metric {
            cols: Vec::new(),
            inv_var: Vec::new(),
        };
        for &c in &covs {
            let col: Vec<f64> = x.column(c).iter().copied().collect();
            let mean = col.iter().sum::<f64>() / n as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0).max(1.0);
            if var > 0.0 {
                metric.cols.push(col);
                metric.inv_var.push(1.0 / var);
            }
        }
        let mut matches = Vec::with_capacity(treated.len());
        let mut used = vec![false; n];
        for &i in &treated {
            let pool = controls.iter().copied().filter(|j| spec.with_replacement || !used[*j]);
            let m = metric.nearest(i, pool, spec.m);
            for &j in &m {
                used[j] = true;
            }
            matches.push(m);
        }
        let mut counts = vec![0usize; n];
        for m in &matches {
            for &j in m {
                counts[j] += 1;
            }
        }
        let neighbors = (treated.len() >= 3 && controls.len() >= 3).then(|| {
            (0..n)
                .map(|i| {
                    let arm = if d[i] == 1.0 { &treated } else { &controls };
                    let nb = metric.nearest(i, arm.iter().copied().filter(|j| *j != i), 2);
                    [nb[0], nb[1]]
                })
                .collect()
        });
        Ok(Matching {
            treated,
            matches,
            counts,
            m: spec.m,
            neighbors,
            q,
        })
    }

    pub fn matches(&self) -> &[Vec<usize>] {
        &self.matches
    }

    pub fn discrepancies(&self, y: &[f64]) -> Vec<f64> {
        self.treated
            .iter()
            .zip(&self.matches)
            .map(|(&i, m)| y[i] - m.iter().map(|&j| y[j]).sum::<f64>() / m.len() as f64)
            .collect()
    }

    pub fn att(&self, y: &[f64]) -> AttMatch {
        let d = self.discrepancies(y);
        AttMatch {
            estimate: d.iter().sum::<f64>() / d.len() as f64,
            discrepancies: d,
            match_counts: self.counts.clone(),
        }
    }

    /// (τ̂, standard error).
    pub fn estimate(&self, y: &[f64]) -> Result<(f64, f64)> {
        let nb = self
            .neighbors
            .as_ref()
            .ok_or_else(|| Error::Config("matching variance needs at least three units per arm".into()))?;
        let d = self.discrepancies(y);
        let n1 = d.len() as f64;
        let tau = d.iter().sum::<f64>() / n1;
        let mut is_treated = vec![false; y.len()];
        for &i in &self.treated {
            is_treated[i] = true;
        }
        let mut v = 0.0;
        for (i, nb) in nb.iter().enumerate() {
            let w = if is_treated[i] { 1.0 } else { self.counts[i] as f64 / self.m as f64 };
            if w == 0.0 {
                continue;
            }
            let s2 = nb.iter().map(|&j| (y[i] - y[j]).powi(2) / 2.0).sum::<f64>() / 2.0;
            v += w * w * s2;
        }
        Ok((tau, v.sqrt() / n1))
    }

    pub fn ai_p(&self, y: &[f64]) -> Result<f64> {
        let (tau, se) = self.estimate(y)?;
        if se == 0.0 || !se.is_finite() {
            return Err(Error::Degenerate(format!("matching standard error is {se}")));
        }
        Ok(two_sided_p((tau - self.q) / se, None))
    }

    pub fn sign_change(&self, y: &[f64], inner_reps: usize, stream: Substream) -> Result<SignChangeOutcome> {
        let d: Vec<f64> = self.discrepancies(y).iter().map(|v| v - self.q).collect();
        sign_change_p(&d, inner_reps, stream)
    }
}

pub fn att_match(ds: &Dataset, h: &LinearHypothesis, spec: &MatchSpec) -> Result<AttMatch> {
    Ok(Matching::new(ds, h, spec)?.att(ds.y()))
}

pub fn ai_t_test(ds: &Dataset, h: &LinearHypothesis, spec: &MatchSpec) -> Result<f64> {
    Matching::new(ds, h, spec)?.ai_p(ds.y())
}

pub fn match_sign_change_p(
    ds: &Dataset,
    h: &LinearHypothesis,
    spec: &MatchSpec,
    inner_reps: usize,
    stream: Substream,
) -> Result<SignChangeOutcome> {
    Matching::new(ds, h, spec)?.sign_change(ds.y(), inner_reps, stream)
}
