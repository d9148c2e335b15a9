//! Resampling and design-based tests: wild cluster bootstrap, permutation,
//! shift-share AKM/AKM0 and sign-change randomization.
//!
//! Each test has a prepared form that caches the parts depending only on the
//! design, so the engine can call `p_value(y, stream)` once per replicate.
//! Inner draw r uses `stream.child(r)`.

use std::sync::Arc;

use itertools::Itertools;
use nalgebra::{DMatrix, DVector};
use rand::seq::index::sample;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::datamodel::{group_members, label_count, ClusterLevel, Dataset, LinearHypothesis};
use crate::error::{config, Error, Result};
use crate::regression::{ControlProjector, LinearDesign};
use crate::rng::Substream;
use crate::variance::{two_sided_p, SCORE_CANCEL_TOL};

/// Relative slack when comparing a resampled statistic with the observed one,
/// so that exact ties (the identity draw, mirrored sign vectors) count.
const TIE_TOL: f64 = 1e-10;

fn at_least(stat: f64, observed: f64) -> bool {
    stat >= observed * (1.0 - TIE_TOL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ResamplingKind {
    WildCluster,
    Permutation,
    Akm,
    Akm0,
    SignChange,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum WeightLaw {
    #[default]
    Rademacher,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PermutationScheme {
    #[default]
    UnitLevel,
    ClusterLevel,
    WithinStrata,
}

fn default_inner() -> usize {
    999
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResamplingTestSpec {
    pub kind: ResamplingKind,
    #[serde(default = "default_inner")]
    pub inner_reps: usize,
    #[serde(default = "yes")]
    pub impose_null: bool,
    #[serde(default)]
    pub weight_law: WeightLaw,
    #[serde(default)]
    pub cluster_level: ClusterLevel,
    #[serde(default)]
    pub scheme: PermutationScheme,
}

impl ResamplingTestSpec {
    pub fn new(kind: ResamplingKind) -> Self {
        ResamplingTestSpec {
            kind,
            inner_reps: default_inner(),
            impose_null: true,
            weight_law: WeightLaw::Rademacher,
            cluster_level: ClusterLevel::Primary,
            scheme: PermutationScheme::UnitLevel,
        }
    }
    pub fn with_inner_reps(mut self, b: usize) -> Self {
        self.inner_reps = b;
        self
    }
    pub fn validate(&self) -> Result<()> {
        if self.inner_reps == 0 {
            return config("inner_reps must be at least 1");
        }
        Ok(())
    }
}

/// 2^g ≤ reps, without overflow.
fn fits_enumeration(g: usize, reps: usize) -> bool {
    g < 64 && (1u128 << g) <= reps as u128
}

// ---------------------------------------------------------------- wild

#[derive(Debug, Clone)]
struct Coupling {
    labels: Vec<usize>,
    mass: Vec<f64>,
    /// For each absorbed group ℓ: (h, Σ_{i∈h∩ℓ} a_i).
    pairs: Vec<Vec<(usize, f64)>>,
}

/// Wild cluster bootstrap-t with Rademacher cluster signs.
///
/// Bootstrap scores are linear in the sign vector s, so each outer replicate
/// builds a G×G matrix M with score_h(s) = Σ_g M_hg s_g and a vector A with
/// numerator(s) = Σ_g A_g s_g; inner draws then cost O(G²).
#[derive(Debug, Clone)]
pub struct WildCluster {
    design: Arc<LinearDesign>,
    h: LinearHypothesis,
    row: Vec<f64>,
    q: f64,
    a: Vec<f64>,
    labels: Vec<usize>,
    members: Vec<Vec<usize>>,
    d: DMatrix<f64>,
    coupling: Option<Coupling>,
    impose_null: bool,
    inner_reps: usize,
}

impl WildCluster {
    pub fn new(ds: &Dataset, h: &LinearHypothesis, spec: &ResamplingTestSpec) -> Result<Self> {
        Self::with_design(Arc::new(LinearDesign::from_dataset(ds)?), ds, h, spec)
    }

    pub fn with_design(
        design: Arc<LinearDesign>,
        ds: &Dataset,
        h: &LinearHypothesis,
        spec: &ResamplingTestSpec,
    ) -> Result<Self> {
        spec.validate()?;
        let (row, q) = h.scalar()?;
        if row.len() != design.ncols() {
            return config("hypothesis does not match the design");
        }
        let labels = ds
            .clusters(spec.cluster_level)
            .ok_or_else(|| Error::Config("wild cluster bootstrap needs cluster labels".into()))?
            .to_vec();
        let g = label_count(&labels);
        if g < 2 {
            return Err(Error::Degenerate(
                "wild cluster bootstrap with one cluster: every sign vector is collinear".into(),
            ));
        }
        let n = design.nobs();
        let k = design.ncols();
        let proj = design.proj();
        let a: Vec<f64> = (0..n)
            .map(|i| (0..k).map(|j| row[j] * proj[(j, i)]).sum())
            .collect();
        let xd = design.demeaned_x();
        let mut d = DMatrix::zeros(g, k);
        for i in 0..n {
            for j in 0..k {
                d[(labels[i], j)] += a[i] * xd[(i, j)];
            }
        }
        let coupling = design.absorber().map(|ab| {
            let l = ab.n_groups();
            let mut p = vec![std::collections::BTreeMap::<usize, f64>::new(); l];
            for i in 0..n {
                *p[ab.labels()[i]].entry(labels[i]).or_insert(0.0) += a[i];
            }
            Coupling {
                labels: ab.labels().to_vec(),
                mass: (0..l).map(|x| ab.mass(x)).collect(),
                pairs: p.into_iter().map(|m| m.into_iter().collect()).collect(),
            }
        });
        Ok(WildCluster {
            members: group_members(&labels),
            design,
            h: h.clone(),
            row,
            q,
            a,
            labels,
            d,
            coupling,
            impose_null: spec.impose_null,
            inner_reps: spec.inner_reps,
        })
    }

    fn n_clusters(&self) -> usize {
        self.members.len()
    }

    fn meat(&self, e: &[f64]) -> f64 {
        let mut s = vec![0.0; self.n_clusters()];
        for ((l, a), e) in self.labels.iter().zip(&self.a).zip(e) {
            s[*l] += a * e;
        }
        s.iter().map(|v| v * v).sum()
    }

    /// (A, M) for bootstrap residuals `et`; M is row-major G×G.
    fn score_system(&self, et: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let g = self.n_clusters();
        let k = self.design.ncols();
        let proj = self.design.proj();
        let w = self.design.weights();
        let mut big_a = vec![0.0; g];
        let mut m = vec![0.0; g * g];
        let mut b = vec![0.0; k];
        let mut touched: Vec<(usize, f64)> = Vec::new();
        for (cg, rows) in self.members.iter().enumerate() {
            b.iter_mut().for_each(|v| *v = 0.0);
            touched.clear();
            let mut ag = 0.0;
            for &i in rows {
                ag += self.a[i] * et[i];
                for (j, bj) in b.iter_mut().enumerate() {
                    *bj += proj[(j, i)] * et[i];
                }
                if let Some(c) = &self.coupling {
                    let l = c.labels[i];
                    let v = w.map_or(1.0, |w| w[i]) * et[i];
                    match touched.iter_mut().find(|t| t.0 == l) {
                        Some(t) => t.1 += v,
                        None => touched.push((l, v)),
                    }
                }
            }
            big_a[cg] = ag;
            m[cg * g + cg] += ag;
            for hh in 0..g {
                let db: f64 = (0..k).map(|j| self.d[(hh, j)] * b[j]).sum();
                m[hh * g + cg] -= db;
            }
            if let Some(c) = &self.coupling {
                for &(l, s) in &touched {
                    let mean = s / c.mass[l];
                    for &(hh, p) in &c.pairs[l] {
                        m[hh * g + cg] -= p * mean;
                    }
                }
            }
        }
        (big_a, m)
    }

    pub fn p_value(&self, y: &[f64], stream: Substream) -> Result<f64> {
        let beta = self.design.coefficients(y);
        let e = self.design.residuals(y, &beta);
        let num0: f64 = self.row.iter().zip(beta.iter()).map(|(r, b)| r * b).sum::<f64>() - self.q;
        let meat0 = self.meat(&e);
        let scale: f64 = self.a.iter().zip(&e).map(|(a, e)| (a * e).powi(2)).sum();
        if meat0 <= (SCORE_CANCEL_TOL * SCORE_CANCEL_TOL) * scale || !meat0.is_finite() {
            return Err(Error::Degenerate("cluster-robust standard error is zero".into()));
        }
        let t0 = num0.abs() / meat0.sqrt();
        let et = if self.impose_null {
            let bt = self.design.restrict(&beta, &self.h)?;
            self.design.residuals(y, &bt)
        } else {
            e
        };
        let (big_a, m) = self.score_system(&et);
        let g = self.n_clusters();
        let mut signs = vec![1.0; g];
        let extreme = |signs: &[f64]| -> bool {
            let num: f64 = signs.iter().zip(&big_a).map(|(s, a)| s * a).sum();
            let mut meat = 0.0;
            for hh in 0..g {
                let row = &m[hh * g..(hh + 1) * g];
                let sc: f64 = row.iter().zip(signs).map(|(v, s)| v * s).sum();
                meat += sc * sc;
            }
            if meat == 0.0 {
                num != 0.0
            } else {
                at_least(num.abs() / meat.sqrt(), t0)
            }
        };
        if fits_enumeration(g, self.inner_reps) {
            let total = 1u64 << g;
            let mut count = 0u64;
            for mask in 0..total {
                for (c, s) in signs.iter_mut().enumerate() {
                    *s = if mask >> c & 1 == 1 { -1.0 } else { 1.0 };
                }
                count += u64::from(extreme(&signs));
            }
            Ok(count as f64 / total as f64)
        } else {
            let mut count = 0usize;
            for r in 0..self.inner_reps {
                let mut rng = stream.child(r as u64).rng();
                let mut word = 0u64;
                for (c, s) in signs.iter_mut().enumerate() {
                    if c % 64 == 0 {
                        word = rng.random();
                    }
                    *s = if word >> (c % 64) & 1 == 1 { -1.0 } else { 1.0 };
                }
                count += usize::from(extreme(&signs));
            }
            Ok((1 + count) as f64 / (1 + self.inner_reps) as f64)
        }
    }
}

pub fn wild_cluster_p(ds: &Dataset, h: &LinearHypothesis, spec: &ResamplingTestSpec, stream: Substream) -> Result<f64> {
    WildCluster::new(ds, h, spec)?.p_value(ds.y(), stream)
}

// ---------------------------------------------------------- permutation

fn binomial(n: usize, k: usize) -> u128 {
    let k = k.min(n - k);
    let mut r: u128 = 1;
    for i in 0..k {
        r = r.saturating_mul((n - i) as u128) / (i as u128 + 1);
    }
    r
}

/// Randomization test of a binary regressor with the raw coefficient as
/// statistic. Treated counts are held fixed within each block.
#[derive(Debug, Clone)]
pub struct Permutation {
    controls: ControlProjector,
    weights: Option<Vec<f64>>,
    d: Vec<f64>,
    q: f64,
    units: Vec<Vec<usize>>,
    blocks: Vec<Vec<usize>>,
    treated: Vec<usize>,
    inner_reps: usize,
    n: usize,
}

impl Permutation {
    pub fn new(ds: &Dataset, h: &LinearHypothesis, scheme: PermutationScheme, inner_reps: usize) -> Result<Self> {
        if inner_reps == 0 {
            return config("inner_reps must be at least 1");
        }
        let col = h
            .tested_column()
            .ok_or_else(|| Error::Config("permutation test needs a single-coefficient hypothesis".into()))?;
        let scale = h.r[(0, col)];
        let q = h.q[0] / scale;
        let d: Vec<f64> = ds.x().column(col).iter().copied().collect();
        if d.iter().any(|v| *v != 0.0 && *v != 1.0) {
            return config("permutation test needs a binary (0/1) regressor");
        }
        let n = ds.nobs();
        let unit_labels: Vec<usize> = match scheme {
            PermutationScheme::UnitLevel => (0..n).collect(),
            PermutationScheme::ClusterLevel => ds
                .cluster_primary()
                .ok_or_else(|| Error::Config("cluster_level permutation needs primary clusters".into()))?
                .to_vec(),
            PermutationScheme::WithinStrata => {
                if ds.cluster_coarse().is_none() {
                    return config("within_strata permutation needs coarse (strata) labels");
                }
                ds.cluster_primary().map_or_else(|| (0..n).collect(), <[usize]>::to_vec)
            }
        };
        let units = group_members(&unit_labels);
        for u in &units {
            if u.iter().any(|&i| d[i] != d[u[0]]) {
                return config("treatment varies within a permutation unit");
            }
        }
        let block_of_unit: Vec<usize> = match scheme {
            PermutationScheme::WithinStrata => {
                let coarse = ds.cluster_coarse().expect("checked");
                units.iter().map(|u| coarse[u[0]]).collect()
            }
            _ => vec![0; units.len()],
        };
        let blocks = group_members(&block_of_unit);
        let treated = blocks
            .iter()
            .map(|b| b.iter().filter(|&&u| d[units[u][0]] == 1.0).count())
            .collect();
        Ok(Permutation {
            controls: ControlProjector::new(ds, &[col])?,
            weights: ds.weights().map(<[f64]>::to_vec),
            d,
            q,
            units,
            blocks,
            treated,
            inner_reps,
            n,
        })
    }

    /// Number of distinct assignments (saturating).
    pub fn arrangements(&self) -> u128 {
        self.blocks
            .iter()
            .zip(&self.treated)
            .fold(1u128, |acc, (b, &k)| acc.saturating_mul(binomial(b.len(), k)))
    }

    fn coefficient(&self, d: &[f64], y: &[f64]) -> Option<f64> {
        let dt = self.controls.residualize(d);
        let (mut num, mut den) = (0.0, 0.0);
        for i in 0..self.n {
            let w = self.weights.as_ref().map_or(1.0, |w| w[i]);
            num += w * dt[i] * y[i];
            den += w * dt[i] * dt[i];
        }
        (den > 0.0).then(|| num / den)
    }

    fn assignment(&self, chosen: &[&Vec<usize>]) -> Vec<f64> {
        let mut d = vec![0.0; self.n];
        for units in chosen {
            for &u in units.iter() {
                for &i in &self.units[u] {
                    d[i] = 1.0;
                }
            }
        }
        d
    }

    /// Calls `f` on every assignment (as the set of treated units per block).
    pub fn for_each_assignment(&self, mut f: impl FnMut(&[f64])) {
        let per_block: Vec<Vec<Vec<usize>>> = self
            .blocks
            .iter()
            .zip(&self.treated)
            .map(|(b, &k)| b.iter().copied().combinations(k).collect())
            .collect();
        for combo in per_block.iter().map(|v| v.iter()).multi_cartesian_product() {
            f(&self.assignment(&combo));
        }
    }

    pub fn p_value(&self, y: &[f64], stream: Substream) -> Result<f64> {
        let y: Vec<f64> = y.iter().zip(&self.d).map(|(y, d)| y - self.q * d).collect();
        let b0 = self
            .coefficient(&self.d, &y)
            .ok_or_else(|| Error::Degenerate("treatment is collinear with the controls".into()))?
            .abs();
        let extreme = |d: &[f64]| self.coefficient(d, &y).is_none_or(|b| at_least(b.abs(), b0));
        if self.arrangements() <= self.inner_reps as u128 {
            let (mut count, mut total) = (0u64, 0u64);
            self.for_each_assignment(|d| {
                total += 1;
                count += u64::from(extreme(d));
            });
            Ok(count as f64 / total as f64)
        } else {
            let mut count = 0usize;
            for r in 0..self.inner_reps {
                let mut rng = stream.child(r as u64).rng();
                let chosen: Vec<Vec<usize>> = self
                    .blocks
                    .iter()
                    .zip(&self.treated)
                    .map(|(b, &k)| sample(&mut rng, b.len(), k).into_iter().map(|j| b[j]).collect())
                    .collect();
                let refs: Vec<&Vec<usize>> = chosen.iter().collect();
                count += usize::from(extreme(&self.assignment(&refs)));
            }
            Ok((1 + count) as f64 / (1 + self.inner_reps) as f64)
        }
    }
}

pub fn permutation_p(
    ds: &Dataset,
    h: &LinearHypothesis,
    scheme: PermutationScheme,
    inner_reps: usize,
    stream: Substream,
) -> Result<f64> {
    Permutation::new(ds, h, scheme, inner_reps)?.p_value(ds.y(), stream)
}

// ---------------------------------------------------------- shift-share

/// Confidence set from inverting the AKM0 test.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "shape", rename_all = "snake_case")]
pub enum ConfidenceSet {
    Interval { lo: f64, hi: f64 },
    /// (−∞, below] ∪ [above, ∞)
    TwoHalfLines { below: f64, above: f64 },
    /// (−∞, hi]
    Below { hi: f64 },
    /// [lo, ∞)
    Above { lo: f64 },
    WholeLine,
    Empty,
}

impl ConfidenceSet {
    pub fn contains(&self, b: f64) -> bool {
        match *self {
            ConfidenceSet::Interval { lo, hi } => lo <= b && b <= hi,
            ConfidenceSet::TwoHalfLines { below, above } => b <= below || b >= above,
            ConfidenceSet::Below { hi } => b <= hi,
            ConfidenceSet::Above { lo } => b >= lo,
            ConfidenceSet::WholeLine => true,
            ConfidenceSet::Empty => false,
        }
    }

    pub fn endpoints(&self) -> Vec<f64> {
        match *self {
            ConfidenceSet::Interval { lo, hi } => vec![lo, hi],
            ConfidenceSet::TwoHalfLines { below, above } => vec![below, above],
            ConfidenceSet::Below { hi } => vec![hi],
            ConfidenceSet::Above { lo } => vec![lo],
            _ => vec![],
        }
    }
}

/// Sector-level aggregates shared by AKM and AKM0.
#[derive(Debug, Clone)]
pub struct ShiftShare {
    controls: ControlProjector,
    weights: Option<Vec<f64>>,
    shares: Arc<DMatrix<f64>>,
    gt: Vec<f64>,
    clusters: Vec<usize>,
    n_clusters: usize,
    xt: Vec<f64>,
    sxx: f64,
    sx: Vec<f64>,
    beta0: f64,
}

/// Per-outcome quantities: β̂ and the cluster sums S^y_c, S^x_c.
struct Aggregates {
    beta: f64,
    sy: Vec<f64>,
}

impl ShiftShare {
    pub fn new(ds: &Dataset, h: &LinearHypothesis) -> Result<Self> {
        let (shares, shocks) = match (ds.shares(), ds.shocks()) {
            (Some(s), Some(g)) => (Arc::clone(s), g),
            _ => return config("AKM inference needs shares and shocks"),
        };
        let col = h
            .tested_column()
            .ok_or_else(|| Error::Config("AKM needs a single-coefficient hypothesis".into()))?;
        let beta0 = h.q[0] / h.r[(0, col)];
        if ds.shift_share_col() != Some(col) {
            let x: Vec<f64> = ds.x().column(col).iter().copied().collect();
            let wg = crate::errorgen::shift_share_regressor(&shares, shocks);
            let gap = x.iter().zip(&wg).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let scale = x.iter().map(|a| a * a).sum::<f64>().sqrt();
            if gap > 1e-6 * scale.max(f64::MIN_POSITIVE) {
                return config("tested regressor is not shares × shocks");
            }
        }
        let f = shocks.len();
        let gbar = shocks.iter().sum::<f64>() / f as f64;
        let gt: Vec<f64> = shocks.iter().map(|g| g - gbar).collect();
        let clusters = ds.shock_cluster().map_or_else(|| (0..f).collect(), <[usize]>::to_vec);
        let n_clusters = label_count(&clusters);
        let controls = ControlProjector::new(ds, &[col])?;
        let x: Vec<f64> = ds.x().column(col).iter().copied().collect();
        let xt = controls.residualize(&x);
        let weights = ds.weights().map(<[f64]>::to_vec);
        let sxx: f64 = xt
            .iter()
            .enumerate()
            .map(|(i, v)| weights.as_ref().map_or(1.0, |w| w[i]) * v * v)
            .sum();
        if sxx <= 0.0 {
            return Err(Error::Degenerate("shift-share regressor has no residual variation".into()));
        }
        let mut ss = ShiftShare {
            controls,
            weights,
            shares,
            gt,
            clusters,
            n_clusters,
            xt,
            sxx,
            sx: Vec::new(),
            beta0,
        };
        let xt = ss.xt.clone();
        ss.sx = ss.cluster_sums(&xt);
        Ok(ss)
    }

    /// S_c = Σ_{f∈c} g̃_f Σ_i π_i w_if v_i.
    fn cluster_sums(&self, v: &[f64]) -> Vec<f64> {
        let pv: Vec<f64> = v
            .iter()
            .enumerate()
            .map(|(i, x)| self.weights.as_ref().map_or(1.0, |w| w[i]) * x)
            .collect();
        let r = self.shares.tr_mul(&DVector::from_vec(pv));
        let mut s = vec![0.0; self.n_clusters];
        for (f, rf) in r.iter().enumerate() {
            s[self.clusters[f]] += self.gt[f] * rf;
        }
        s
    }

    fn aggregates(&self, y: &[f64]) -> Aggregates {
        let yt = self.controls.residualize(y);
        let sxy: f64 = yt
            .iter()
            .zip(&self.xt)
            .enumerate()
            .map(|(i, (a, b))| self.weights.as_ref().map_or(1.0, |w| w[i]) * a * b)
            .sum();
        Aggregates {
            beta: sxy / self.sxx,
            sy: self.cluster_sums(&yt),
        }
    }

    /// (β̂, AKM standard error).
    pub fn estimate(&self, y: &[f64]) -> (f64, f64) {
        let ag = self.aggregates(y);
        let v: f64 = ag.sy.iter().zip(&self.sx).map(|(a, b)| (a - ag.beta * b).powi(2)).sum();
        (ag.beta, v.sqrt() / self.sxx)
    }

    pub fn akm_p(&self, y: &[f64]) -> Result<f64> {
        let (b, se) = self.estimate(y);
        if se == 0.0 || !se.is_finite() {
            return Err(Error::Degenerate(format!("AKM standard error is {se}")));
        }
        Ok(two_sided_p((b - self.beta0) / se, None))
    }

    fn q_v(&self, ag: &Aggregates, b0: f64) -> (f64, f64) {
        let mut q = 0.0;
        let mut v = 0.0;
        for (sy, sx) in ag.sy.iter().zip(&self.sx) {
            let s = sy - b0 * sx;
            q += s;
            v += s * s;
        }
        (q, v)
    }

    pub fn akm0_p_at(&self, y: &[f64], b0: f64) -> Result<f64> {
        let (q, v) = self.q_v(&self.aggregates(y), b0);
        if v == 0.0 {
            return Err(Error::Degenerate("AKM0 variance is zero".into()));
        }
        Ok(two_sided_p(q / v.sqrt(), None))
    }

    pub fn akm0_p(&self, y: &[f64]) -> Result<f64> {
        self.akm0_p_at(y, self.beta0)
    }

    /// {β₀ : AKM0 p-value ≥ level}.
    pub fn akm0_ci(&self, y: &[f64], level: f64) -> Result<ConfidenceSet> {
        if !(0.0 < level && level < 1.0) {
            return config("level must lie in (0, 1)");
        }
        let z = statrs::distribution::ContinuousCDF::inverse_cdf(
            &statrs::distribution::Normal::standard(),
            1.0 - level / 2.0,
        );
        let z2 = z * z;
        let ag = self.aggregates(y);
        let qy: f64 = ag.sy.iter().sum();
        let qx: f64 = self.sx.iter().sum();
        let syy: f64 = ag.sy.iter().map(|v| v * v).sum();
        let sxx: f64 = self.sx.iter().map(|v| v * v).sum();
        let sxy: f64 = ag.sy.iter().zip(&self.sx).map(|(a, b)| a * b).sum();
        // (qy − β qx)² − z²(syy − 2β sxy + β² sxx) ≤ 0
        let a = qx * qx - z2 * sxx;
        let b = -2.0 * qy * qx + 2.0 * z2 * sxy;
        let c = qy * qy - z2 * syy;
        let scale = qx * qx + z2 * sxx;
        if a.abs() <= 1e-12 * scale {
            let bscale = 2.0 * (qy * qx).abs() + 2.0 * z2 * sxy.abs();
            return Ok(if b.abs() <= 1e-12 * bscale {
                if c <= 0.0 { ConfidenceSet::WholeLine } else { ConfidenceSet::Empty }
            } else if b > 0.0 {
                ConfidenceSet::Below { hi: -c / b }
            } else {
                ConfidenceSet::Above { lo: -c / b }
            });
        }
        let disc = b * b - 4.0 * a * c;
        if disc < 0.0 {
            return Ok(if a > 0.0 { ConfidenceSet::Empty } else { ConfidenceSet::WholeLine });
        }
        let sq = disc.sqrt();
        // numerically stable roots
        let t = -0.5 * (b + b.signum() * sq);
        let (r1, r2) = if t == 0.0 { (0.0, 0.0) } else { (t / a, c / t) };
        let (lo, hi) = (r1.min(r2), r1.max(r2));
        Ok(if a > 0.0 {
            ConfidenceSet::Interval { lo, hi }
        } else {
            ConfidenceSet::TwoHalfLines { below: lo, above: hi }
        })
    }
}

pub fn akm_se(ds: &Dataset, h: &LinearHypothesis) -> Result<f64> {
    Ok(ShiftShare::new(ds, h)?.estimate(ds.y()).1)
}

pub fn akm_p(ds: &Dataset, h: &LinearHypothesis) -> Result<f64> {
    ShiftShare::new(ds, h)?.akm_p(ds.y())
}

pub fn akm0_p(ds: &Dataset, h: &LinearHypothesis) -> Result<f64> {
    ShiftShare::new(ds, h)?.akm0_p(ds.y())
}

/// Inverts AKM0 at test level `level` for the designated shift-share column.
pub fn akm0_ci(ds: &Dataset, level: f64) -> Result<ConfidenceSet> {
    let col = ds
        .shift_share_col()
        .ok_or_else(|| Error::Config("akm0_ci needs a designated shift-share column".into()))?;
    let h = LinearHypothesis::coefficient(col, ds.ncols(), 0.0);
    ShiftShare::new(ds, &h)?.akm0_ci(ds.y(), level)
}

// ---------------------------------------------------------- sign change

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SignChangeOutcome {
    pub p_value: f64,
    /// Distinct values of |Σ s_i d_i| among the transformations evaluated.
    pub distinct_statistics: usize,
    pub enumerated: bool,
}

/// Sign-change randomization test of a zero center.
///
/// The statistic mean/sd is a monotone function of |Σ s_i d_i| because
/// Σ (s_i d_i)² does not depend on s, so that sum is compared directly.
pub fn sign_change_p(d: &[f64], inner_reps: usize, stream: Substream) -> Result<SignChangeOutcome> {
    let m = d.len();
    if m < 2 {
        return config("sign-change test needs at least two values");
    }
    if inner_reps == 0 {
        return config("inner_reps must be at least 1");
    }
    let rms = d.iter().map(|v| v * v).sum::<f64>();
    if rms == 0.0 || !rms.is_finite() {
        return Err(Error::Degenerate("all discrepancies are zero".into()));
    }
    let t0 = d.iter().sum::<f64>().abs();
    let mut stats = Vec::new();
    let stat = |flip: &dyn Fn(usize) -> bool| -> f64 {
        d.iter()
            .enumerate()
            .map(|(i, v)| if flip(i) { -v } else { *v })
            .sum::<f64>()
            .abs()
    };
    let (p, enumerated) = if fits_enumeration(m, inner_reps) {
        let total = 1u64 << m;
        for mask in 0..total {
            stats.push(stat(&|i| mask >> i & 1 == 1));
        }
        let count = stats.iter().filter(|s| at_least(**s, t0)).count();
        (count as f64 / total as f64, true)
    } else {
        for r in 0..inner_reps {
            let mut rng = stream.child(r as u64).rng();
            let bits: Vec<bool> = (0..m).map(|_| rng.random()).collect();
            stats.push(stat(&|i| bits[i]));
        }
        let count = stats.iter().filter(|s| at_least(**s, t0)).count();
        ((1 + count) as f64 / (1 + inner_reps) as f64, false)
    };
    stats.sort_by(f64::total_cmp);
    let tol = 1e-12 * rms.sqrt();
    let distinct = stats.iter().dedup_by(|a, b| (*a - *b).abs() <= tol).count();
    Ok(SignChangeOutcome {
        p_value: p,
        distinct_statistics: distinct,
        enumerated,
    })
}
