//! Synthetic designs for the experiments, plus the shift-share placebo
//! variance formulas.
//!
//! Outcomes in these designs are placeholders (zeros) unless stated: the
//! assessment regenerates them.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::Dataset;
use crate::error::{config, Error, Result};
use crate::errorgen::{shift_share_regressor, ErrorModel};

/// Intercept and a dummy equal to 1 on the first `n1` rows.
pub fn gen_two_sample(n1: usize, n0: usize) -> Result<Dataset> {
    if n1 == 0 || n0 == 0 {
        return config("both groups need at least one observation");
    }
    let n = n1 + n0;
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 || i < n1 { 1.0 } else { 0.0 });
    Dataset::builder(vec![0.0; n], x)
        .column_names(vec!["(intercept)".into(), "treat".into()])
        .build()
}

/// `n_schools` = `strata`·`per_stratum` schools of `n` students each. Half
/// of every stratum's schools are treated; `k_cov` standard normal
/// school-level covariates come from `cov_seed`. Strata effects are absorbed,
/// so there is no intercept column.
pub fn gen_stratified(
    n_schools: usize,
    strata: usize,
    per_stratum: usize,
    n: usize,
    k_cov: usize,
    cov_seed: u64,
) -> Result<Dataset> {
    if per_stratum == 0 || !per_stratum.is_multiple_of(2) {
        return config("schools per stratum must be even");
    }
    if strata == 0 || n == 0 || n_schools != strata * per_stratum {
        return config(format!(
            "{n_schools} schools do not split into {strata} strata of {per_stratum}"
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cov_seed);
    let cov = DMatrix::<f64>::from_fn(n_schools, k_cov, |_, _| rng.sample(StandardNormal));
    let rows = n_schools * n;
    let school: Vec<usize> = (0..rows).map(|i| i / n).collect();
    let stratum: Vec<usize> = school.iter().map(|s| s / per_stratum).collect();
    let x = DMatrix::from_fn(rows, 1 + k_cov, |i, j| {
        let s = school[i];
        if j == 0 {
            f64::from(u8::from(s % per_stratum < per_stratum / 2))
        } else {
            cov[(s, j - 1)]
        }
    });
    let mut names = vec!["treat".to_string()];
    names.extend((1..=k_cov).map(|k| format!("cov{k}")));
    Dataset::builder(vec![0.0; rows], x)
        .column_names(names)
        .cluster_primary(school)
        .cluster_coarse(stratum.clone())
        .absorb(stratum)
        .build()
}

/// Sectors of `group_size` observations each with one-hot shares; a random
/// half of the sectors get shock 1, the rest 0; y = β·x + ε with
/// ε ~ N(0, error_sd²). Columns are [intercept, x]. Primary clusters are
/// single observations, coarse clusters are sectors.
pub fn gen_shift_share_simple<R: Rng + ?Sized>(
    f: usize,
    group_size: usize,
    beta: f64,
    error_sd: f64,
    rng: &mut R,
) -> Result<Dataset> {
    if f < 2 || !f.is_multiple_of(2) {
        return config("F must be even and at least 2");
    }
    if group_size == 0 {
        return config("group_size must be at least 1");
    }
    let n = f * group_size;
    let mut shocks = vec![0.0; f];
    for k in sample(rng, f, f / 2) {
        shocks[k] = 1.0;
    }
    let shares = DMatrix::from_fn(n, f, |i, s| f64::from(u8::from(i / group_size == s)));
    let x = shift_share_regressor(&shares, &shocks);
    let y: Vec<f64> = x
        .iter()
        .map(|x| beta * x + error_sd * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
    Dataset::builder(y, design)
        .column_names(vec!["(intercept)".into(), "x".into()])
        .shift_share(shares, shocks, 1)
        .shock_cluster((0..f).collect())
        .shares_sum_to_one(true)
        .cluster_primary((0..n).collect())
        .cluster_coarse((0..n).map(|i| i / group_size).collect())
        .build()
}

/// (V_true, V_crve_limit) for a [`gen_shift_share_simple`] design with
/// coefficient `beta` and error vector `epsilon`.
pub fn placebo_variances(ds: &Dataset, beta: f64, epsilon: &[f64]) -> Result<(f64, f64)> {
    let shares = ds
        .shares()
        .ok_or_else(|| Error::Config("placebo_variances needs a shift-share design".into()))?;
    let shocks = ds.shocks().expect("shares come with shocks");
    let (n, f) = (shares.nrows(), shares.ncols());
    if epsilon.len() != n {
        return config("epsilon has the wrong length");
    }
    if f < 3 || n < 3 {
        return config("placebo_variances needs F ≥ 3 and N ≥ 3");
    }
    let sector: Vec<usize> = (0..n)
        .map(|i| {
            let row = shares.row(i);
            (0..f).find(|s| row[*s] == 1.0).ok_or_else(|| {
                Error::Validation(format!("row {i} is not assigned to exactly one sector"))
            })
        })
        .collect::<Result<_>>()?;
    let ebar = epsilon.iter().sum::<f64>() / n as f64;
    let mut sum_f = vec![0.0; f];
    let mut cnt = vec![0usize; f];
    for (i, &s) in sector.iter().enumerate() {
        sum_f[s] += epsilon[i];
        cnt[s] += 1;
    }
    let (nf, ff) = (n as f64, f as f64);
    let v_true = 4.0 / (ff * (ff - 2.0))
        * (0..f)
            .map(|s| {
                let eb = if cnt[s] > 0 { sum_f[s] / cnt[s] as f64 } else { 0.0 };
                (beta * shocks[s] - beta / 2.0 + eb - ebar).powi(2)
            })
            .sum::<f64>();
    let v_crve = 4.0 / (nf * (nf - 2.0))
        * (0..n)
            .map(|i| (beta * shocks[sector[i]] - beta / 2.0 + epsilon[i] - ebar).powi(2))
            .sum::<f64>();
    Ok((v_true, v_crve))
}

/// Stacks `times` copies; every cluster label (primary, coarse) and absorbed
/// group of copy c is offset so copies are independent. Shock labels and
/// shocks are shared.
pub fn duplicate_dataset(ds: &Dataset, times: usize) -> Result<Dataset> {
    if times < 2 {
        return config("times must be at least 2");
    }
    let n = ds.nobs();
    let k = ds.ncols();
    let y: Vec<f64> = (0..times).flat_map(|_| ds.y().iter().copied()).collect();
    let x = DMatrix::from_fn(n * times, k, |i, j| ds.x()[(i % n, j)]);
    let offset = |l: &[usize]| -> Vec<usize> {
        let g = crate::datamodel::label_count(l);
        (0..times).flat_map(|c| l.iter().map(move |v| v + c * g)).collect()
    };
    let mut b = Dataset::builder(y, x).column_names(ds.column_names().to_vec());
    if let Some(l) = ds.cluster_primary() {
        b = b.cluster_primary(offset(l));
    }
    if let Some(l) = ds.cluster_coarse() {
        b = b.cluster_coarse(offset(l));
    }
    if let Some(l) = ds.absorb() {
        b = b.absorb(offset(l));
    }
    if let Some(w) = ds.weights() {
        b = b.weights((0..times).flat_map(|_| w.iter().copied()).collect());
    }
    if let (Some(s), Some(g), Some(col)) = (ds.shares(), ds.shocks(), ds.shift_share_col()) {
        let stacked = DMatrix::from_fn(n * times, s.ncols(), |i, j| s[(i % n, j)]);
        b = b.shift_share(stacked, g.to_vec(), col).shares_sum_to_one(ds.shares_sum_to_one());
        if let Some(sc) = ds.shock_cluster() {
            b = b.shock_cluster(sc.to_vec());
        }
    }
    b.build()
}

/// Intercept-only design; the first half has weight 1 and the second
/// half weight `w`.
pub fn gen_weighted_mean_toy(n: usize, w: f64) -> Result<Dataset> {
    if n < 2 || !n.is_multiple_of(2) {
        return config("N must be even and at least 2");
    }
    let weights = (0..n).map(|i| if i < n / 2 { 1.0 } else { w }).collect();
    Dataset::builder(vec![0.0; n], DMatrix::from_element(n, 1, 1.0))
        .column_names(vec!["(intercept)".into()])
        .weights(weights)
        .build()
}

/// Error distribution for the weighted-mean toy: unit variance, or variance
/// 0.1 on the heavily weighted half when `hetero`.
pub fn weighted_toy_errors(n: usize, hetero: bool) -> ErrorModel {
    if !hetero {
        return ErrorModel::IidNormal;
    }
    ErrorModel::ScaledNormal {
        variances: (0..n).map(|i| if i < n / 2 { 1.0 } else { 0.1 }).collect(),
    }
}

/// Shift-share design with overlapping exposure: observation i puts share
/// `dominance` on sector i mod F and spreads the rest evenly; y has a
/// sector-level component λ·W·h with h = (1, −1, 1, …) plus N(0,1) noise.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ShiftShareSynthetic {
    pub n: usize,
    pub sectors: usize,
    pub dominance: f64,
    /// σ of log-normal observation weights; `None` for unweighted.
    pub weight_sigma: Option<f64>,
    pub lambda: f64,
    pub seed: u64,
}

impl ShiftShareSynthetic {
    /// 411 observations, 5 sectors, log-normal weights.
    pub fn small_f(seed: u64) -> Self {
        ShiftShareSynthetic {
            n: 411,
            sectors: 5,
            dominance: 0.7,
            weight_sigma: Some(1.0),
            lambda: 1.0,
            seed,
        }
    }

    /// 1444 observations, 500 sectors, unweighted.
    pub fn large_f(seed: u64) -> Self {
        ShiftShareSynthetic {
            n: 1444,
            sectors: 500,
            dominance: 0.7,
            weight_sigma: None,
            lambda: 1.0,
            seed,
        }
    }

    /// Columns [intercept, x] with x = W·g for standard normal shocks g.
    pub fn generate(&self) -> Result<Dataset> {
        let (n, f) = (self.n, self.sectors);
        if f < 2 || n == 0 {
            return config("need at least two sectors and one observation");
        }
        if !(0.0..=1.0).contains(&self.dominance) {
            return config("dominance must lie in [0, 1]");
        }
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        let rest = (1.0 - self.dominance) / (f - 1) as f64;
        let shares = DMatrix::from_fn(n, f, |i, s| if i % f == s { self.dominance } else { rest });
        let h: Vec<f64> = (0..f).map(|s| if s % 2 == 0 { 1.0 } else { -1.0 }).collect();
        let wh = shift_share_regressor(&shares, &h);
        let weights: Option<Vec<f64>> = self
            .weight_sigma
            .map(|s| (0..n).map(|_| (s * rng.sample::<f64, _>(StandardNormal)).exp()).collect());
        let y: Vec<f64> = wh
            .iter()
            .map(|v| self.lambda * v + rng.sample::<f64, _>(StandardNormal))
            .collect();
        let shocks: Vec<f64> = (0..f).map(|_| rng.sample(StandardNormal)).collect();
        let x = shift_share_regressor(&shares, &shocks);
        let design = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { x[i] });
        let mut b = Dataset::builder(y, design)
            .column_names(vec!["(intercept)".into(), "x".into()])
            .shift_share(shares, shocks, 1)
            .shares_sum_to_one(true);
        if let Some(w) = weights {
            b = b.weights(w);
        }
        b.build()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn two_sample_shape() {
        let ds = gen_two_sample(5, 100).unwrap();
        assert_eq!(ds.nobs(), 105);
        assert_eq!(ds.x().column(1).sum(), 5.0);
        assert!(gen_two_sample(1, 1).is_ok());
        assert!(gen_two_sample(0, 3).is_err());
    }

    #[test]
    fn stratified_shape() {
        let ds = gen_stratified(12, 6, 2, 10, 0, 0).unwrap();
        assert_eq!(ds.nobs(), 120);
        assert_eq!(crate::datamodel::label_count(ds.cluster_primary().unwrap()), 12);
        let c = gen_stratified(40, 2, 20, 10, 5, 9).unwrap();
        let strata = c.cluster_coarse().unwrap();
        for s in 0..2 {
            let treated: f64 = (0..400).filter(|i| strata[*i] == s).map(|i| c.x()[(i, 0)]).sum();
            assert_eq!(treated, 10.0 * 10.0);
        }
        // covariates constant within school
        let sch = c.cluster_primary().unwrap();
        for i in 1..400 {
            if sch[i] == sch[i - 1] {
                assert_eq!(c.x()[(i, 3)], c.x()[(i - 1, 3)]);
            }
        }
        assert_eq!(c.x(), gen_stratified(40, 2, 20, 10, 5, 9).unwrap().x());
        assert!(gen_stratified(15, 5, 3, 10, 0, 0).is_err());
    }

    #[test]
    fn shift_share_simple_structure() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let ds = gen_shift_share_simple(4, 2, 0.0, 1.0, &mut rng).unwrap();
        assert_eq!(ds.nobs(), 8);
        assert_eq!(ds.shocks().unwrap().iter().sum::<f64>(), 2.0);
        for g in 0..4 {
            assert_eq!(ds.x()[(2 * g, 1)], ds.x()[(2 * g + 1, 1)]);
        }
        let (vt, vc) = placebo_variances(&ds, 0.0, &[0.0; 8]).unwrap();
        assert_eq!((vt, vc), (0.0, 0.0));
    }

    #[test]
    fn duplicate_counts() {
        let ds = gen_stratified(12, 6, 2, 10, 0, 0).unwrap();
        let d = duplicate_dataset(&ds, 2).unwrap();
        assert_eq!(d.nobs(), 240);
        assert_eq!(crate::datamodel::label_count(d.cluster_primary().unwrap()), 24);
        assert_eq!(&d.y()[..120], ds.y());
        let q = duplicate_dataset(&ds, 4).unwrap();
        assert_eq!(crate::datamodel::label_count(q.cluster_coarse().unwrap()), 24);
        assert!(duplicate_dataset(&ds, 1).is_err());
    }

    #[test]
    fn toy_and_synthetic() {
        let ds = gen_weighted_mean_toy(10, 10.0).unwrap();
        assert_eq!(ds.weights().unwrap()[9], 10.0);
        assert!(gen_weighted_mean_toy(9, 10.0).is_err());
        let s = ShiftShareSynthetic::small_f(3).generate().unwrap();
        assert_eq!(s.nobs(), 411);
        let row: f64 = s.shares().unwrap().row(0).sum();
        assert!((row - 1.0).abs() < 1e-12);
    }
}
