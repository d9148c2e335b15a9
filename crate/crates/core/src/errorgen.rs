//! Replicate-generating distributions: error models and shock resampling.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::datamodel::{label_count, ClusterLevel, Dataset};
use crate::error::{config, Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum ErrorModel {
    IidNormal,
    ScaledNormal {
        variances: Vec<f64>,
    },
    /// N(0, â + b̂/M_i) with (â, b̂) from regressing ê² on [1, 1/M].
    FittedScaledNormal,
    ClusterNormal {
        rho: f64,
        #[serde(default)]
        level: ClusterLevel,
    },
    ResidualBootstrap,
    SignFlipResiduals,
    LognormalDemeaned,
    /// σ₁²/σ₀² = `ratio` with σ₀² = 1; `column` defaults to the tested one.
    TwoGroupHetero {
        ratio: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        column: Option<usize>,
    },
}

impl ErrorModel {
    pub fn needs_residuals(&self) -> bool {
        matches!(
            self,
            ErrorModel::FittedScaledNormal
                | ErrorModel::ResidualBootstrap
                | ErrorModel::SignFlipResiduals
        )
    }
}

#[derive(Debug, Clone)]
enum Prep {
    Iid,
    Scaled(Vec<f64>),
    Cluster {
        labels: Vec<usize>,
        groups: usize,
        a: f64,
        b: f64,
    },
    Bootstrap(Vec<f64>),
    SignFlip(Vec<f64>),
    Lognormal,
}

/// An error model with its setup work (variance fits, label lookups) done.
#[derive(Debug, Clone)]
pub struct PreparedErrors {
    prep: Prep,
    n: usize,
    clamped: usize,
}

fn residuals_for<'a>(model: &ErrorModel, base: Option<&'a [f64]>, n: usize) -> Result<&'a [f64]> {
    let r = base.ok_or_else(|| Error::Config(format!("{model:?} needs base residuals")))?;
    if r.len() != n {
        return config(format!("base residuals have length {}, expected {n}", r.len()));
    }
    Ok(r)
}

impl PreparedErrors {
    /// `tested` names the regressor under test; two_group_hetero uses it when
    /// the model does not name a column.
    pub fn prepare(
        model: &ErrorModel,
        ds: &Dataset,
        base_residuals: Option<&[f64]>,
        tested: Option<usize>,
    ) -> Result<Self> {
        let n = ds.nobs();
        let mut clamped = 0;
        let prep = match model {
            ErrorModel::IidNormal => Prep::Iid,
            ErrorModel::ScaledNormal { variances } => {
                if variances.len() != n {
                    return config(format!("{} variances for {n} observations", variances.len()));
                }
                if variances.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                    return config("variances must be strictly positive");
                }
                Prep::Scaled(variances.iter().map(|v| v.sqrt()).collect())
            }
            ErrorModel::FittedScaledNormal => {
                let r = residuals_for(model, base_residuals, n)?;
                let m = ds
                    .weights()
                    .ok_or_else(|| Error::Config("fitted_scaled_normal needs weights".into()))?;
                let (a, b) = fit_variance_model(r, m)?;
                let fitted: Vec<f64> = m.iter().map(|mi| a + b / mi).collect();
                let mut sorted = fitted.clone();
                sorted.sort_by(f64::total_cmp);
                let median = sorted[n / 2];
                let floor = 1e-6 * median.abs().max(f64::MIN_POSITIVE);
                let sd = fitted
                    .iter()
                    .map(|v| {
                        if *v < floor {
                            clamped += 1;
                            floor.sqrt()
                        } else {
                            v.sqrt()
                        }
                    })
                    .collect();
                Prep::Scaled(sd)
            }
            ErrorModel::ClusterNormal { rho, level } => {
                if !(0.0..1.0).contains(rho) {
                    return config("rho must lie in [0, 1)");
                }
                let labels = ds
                    .clusters(*level)
                    .ok_or_else(|| Error::Config("cluster_normal needs cluster labels".into()))?;
                Prep::Cluster {
                    labels: labels.to_vec(),
                    groups: label_count(labels),
                    a: rho.sqrt(),
                    b: (1.0 - rho).sqrt(),
                }
            }
            ErrorModel::ResidualBootstrap => {
                Prep::Bootstrap(residuals_for(model, base_residuals, n)?.to_vec())
            }
            ErrorModel::SignFlipResiduals => {
                Prep::SignFlip(residuals_for(model, base_residuals, n)?.to_vec())
            }
            ErrorModel::LognormalDemeaned => Prep::Lognormal,
            ErrorModel::TwoGroupHetero { ratio, column } => {
                if !(*ratio > 0.0 && ratio.is_finite()) {
                    return config("variance ratio must be strictly positive");
                }
                let col = column.or(tested).ok_or_else(|| {
                    Error::Config("two_group_hetero needs the dummy column".into())
                })?;
                if col >= ds.ncols() {
                    return config(format!("column {col} out of range"));
                }
                let d = ds.x().column(col);
                if d.iter().any(|v| *v != 0.0 && *v != 1.0) {
                    return config("two_group_hetero needs a 0/1 column");
                }
                let s1 = ratio.sqrt();
                Prep::Scaled(d.iter().map(|v| if *v == 1.0 { s1 } else { 1.0 }).collect())
            }
        };
        Ok(PreparedErrors { prep, n, clamped })
    }

    /// Observations whose fitted variance hit the positive floor.
    pub fn clamped(&self) -> usize {
        self.clamped
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.n);
        match &self.prep {
            Prep::Iid => out.iter_mut().for_each(|e| *e = rng.sample(StandardNormal)),
            Prep::Scaled(sd) => {
                for (e, s) in out.iter_mut().zip(sd) {
                    *e = s * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Prep::Cluster { labels, groups, a, b } => {
                let zg: Vec<f64> = (0..*groups).map(|_| rng.sample(StandardNormal)).collect();
                for (e, l) in out.iter_mut().zip(labels) {
                    *e = a * zg[*l] + b * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Prep::Bootstrap(r) => {
                for e in out.iter_mut() {
                    *e = r[rng.random_range(0..r.len())];
                }
            }
            Prep::SignFlip(r) => {
                for (e, v) in out.iter_mut().zip(r) {
                    *e = if rng.random::<bool>() { *v } else { -v };
                }
            }
            Prep::Lognormal => {
                let shift = 0.5f64.exp();
                for e in out.iter_mut() {
                    *e = rng.sample::<f64, _>(StandardNormal).exp() - shift;
                }
            }
        }
    }
}

pub fn draw_errors<R: Rng + ?Sized>(
    model: &ErrorModel,
    ds: &Dataset,
    base_residuals: Option<&[f64]>,
    rng: &mut R,
) -> Result<Vec<f64>> {
    let p = PreparedErrors::prepare(model, ds, base_residuals, None)?;
    let mut out = vec![0.0; ds.nobs()];
    p.draw(rng, &mut out);
    Ok(out)
}

/// OLS of ê_i² on [1, 1/M_i]; returns (â, b̂).
pub fn fit_variance_model(residuals: &[f64], m: &[f64]) -> Result<(f64, f64)> {
    if residuals.len() != m.len() {
        return config("residuals and M have different lengths");
    }
    if m.iter().any(|v| *v <= 0.0) {
        return config("M must be strictly positive");
    }
    let n = m.len() as f64;
    let z: Vec<f64> = m.iter().map(|v| 1.0 / v).collect();
    let e2: Vec<f64> = residuals.iter().map(|e| e * e).collect();
    let zbar = z.iter().sum::<f64>() / n;
    let ebar = e2.iter().sum::<f64>() / n;
    let sxx: f64 = z.iter().map(|v| (v - zbar).powi(2)).sum();
    let sxy: f64 = z.iter().zip(&e2).map(|(v, e)| (v - zbar) * (e - ebar)).sum();
    if sxx <= 1e-14 * z.iter().map(|v| v * v).sum::<f64>() {
        return Err(Error::Degenerate("1/M has no variation".into()));
    }
    let b = sxy / sxx;
    Ok((ebar - b * zbar, b))
}

/// Shock-resampling replicate: g* ~ iid N(0,1) (one draw per shock cluster
/// when `cluster_draws`), shift-share column rebuilt as W·g*, y unchanged.
pub fn draw_shocks<R: Rng + ?Sized>(ds: &Dataset, rng: &mut R, cluster_draws: bool) -> Result<Dataset> {
    let shares = ds
        .shares()
        .ok_or_else(|| Error::Config("shock resampling needs shares".into()))?;
    if ds.shift_share_col().is_none() {
        return config("shock resampling needs a designated shift-share column");
    }
    let f = shares.ncols();
    let g: Vec<f64> = match (cluster_draws, ds.shock_cluster()) {
        (true, Some(sc)) => {
            let z: Vec<f64> = (0..label_count(sc)).map(|_| rng.sample(StandardNormal)).collect();
            sc.iter().map(|c| z[*c]).collect()
        }
        _ => (0..f).map(|_| rng.sample(StandardNormal)).collect(),
    };
    let x: DVector<f64> = shares.as_ref() * DVector::from_column_slice(&g);
    Ok(ds.with_shift_share_draw(x.as_slice(), g))
}

/// x = W·g for the given shares and shocks.
pub fn shift_share_regressor(shares: &DMatrix<f64>, shocks: &[f64]) -> Vec<f64> {
    (shares * DVector::from_column_slice(shocks)).iter().copied().collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Substream;

    fn plain(n: usize) -> Dataset {
        let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 || i % 3 == 0 { 1.0 } else { 0.0 });
        Dataset::builder(vec![0.0; n], x)
            .cluster_primary((0..n).map(|i| i / 10).collect())
            .build()
            .unwrap()
    }

    fn moments(v: &[f64]) -> (f64, f64, f64) {
        let n = v.len() as f64;
        let m = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / n;
        let skew = v.iter().map(|x| (x - m).powi(3)).sum::<f64>() / n / var.powf(1.5);
        (m, var, skew)
    }

    #[test]
    fn iid_normal_moments() {
        let n = 1_000_000;
        let ds = plain(n);
        let e = draw_errors(&ErrorModel::IidNormal, &ds, None, &mut Substream::root(1).rng()).unwrap();
        let (m, v, _) = moments(&e);
        assert!(m.abs() < 4.0 / (n as f64).sqrt());
        assert!((v - 1.0).abs() < 0.01);
    }

    #[test]
    fn mean_zero_generators() {
        let n = 1_000_000;
        let ds = plain(n);
        let base: Vec<f64> = (0..n).map(|i| ((i % 7) as f64) - 3.0).collect();
        for model in [
            ErrorModel::LognormalDemeaned,
            ErrorModel::ClusterNormal { rho: 0.5, level: ClusterLevel::Primary },
            ErrorModel::SignFlipResiduals,
            ErrorModel::TwoGroupHetero { ratio: 4.0, column: Some(1) },
            ErrorModel::ResidualBootstrap,
        ] {
            let e = draw_errors(&model, &ds, Some(&base), &mut Substream::root(2).rng()).unwrap();
            let (m, v, skew) = moments(&e);
            // cluster-level draws have G = n/10 effective units
            let eff = if matches!(model, ErrorModel::ClusterNormal { .. }) { n as f64 / 10.0 } else { n as f64 };
            assert!(m.abs() < 5.0 * (v / eff).sqrt(), "{model:?}: mean {m}");
            if model == ErrorModel::LognormalDemeaned {
                assert!(skew > 0.0);
            }
        }
    }

    #[test]
    fn unit_scaled_normal_is_iid_stream() {
        let ds = plain(50);
        let a = draw_errors(&ErrorModel::IidNormal, &ds, None, &mut Substream::root(3).rng()).unwrap();
        let b = draw_errors(
            &ErrorModel::ScaledNormal { variances: vec![1.0; 50] },
            &ds,
            None,
            &mut Substream::root(3).rng(),
        )
        .unwrap();
        assert_eq!(a, b);
        let c = draw_errors(
            &ErrorModel::TwoGroupHetero { ratio: 1.0, column: Some(1) },
            &ds,
            None,
            &mut Substream::root(3).rng(),
        )
        .unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn rho_zero_matches_iid_in_distribution() {
        let n = 100_000;
        let ds = plain(n);
        let mut a = draw_errors(&ErrorModel::IidNormal, &ds, None, &mut Substream::root(4).rng()).unwrap();
        let mut b = draw_errors(
            &ErrorModel::ClusterNormal { rho: 0.0, level: ClusterLevel::Primary },
            &ds,
            None,
            &mut Substream::root(5).rng(),
        )
        .unwrap();
        a.sort_by(f64::total_cmp);
        b.sort_by(f64::total_cmp);
        // two-sample KS distance via merged walk
        let (mut i, mut j, mut d) = (0usize, 0usize, 0.0f64);
        while i < n && j < n {
            if a[i] <= b[j] { i += 1 } else { j += 1 }
            d = d.max((i as f64 - j as f64).abs() / n as f64);
        }
        assert!(d < 0.01, "KS {d}");
    }

    #[test]
    fn bootstrap_draws_from_support() {
        let ds = plain(30);
        let base: Vec<f64> = (0..30).map(|i| i as f64 * 0.5).collect();
        let e = draw_errors(&ErrorModel::ResidualBootstrap, &ds, Some(&base), &mut Substream::root(6).rng()).unwrap();
        assert!(e.iter().all(|v| base.contains(v)));
        assert!(draw_errors(&ErrorModel::ResidualBootstrap, &ds, None, &mut Substream::root(6).rng()).is_err());
    }

    #[test]
    fn variance_model_fits() {
        let m: Vec<f64> = (1..=200).map(|i| 1.0 + (i % 10) as f64).collect();
        // |e| = sqrt(c/M) gives e² = c/M exactly
        let e: Vec<f64> = m.iter().map(|mi| (3.0 / mi).sqrt()).collect();
        let (a, b) = fit_variance_model(&e, &m).unwrap();
        assert!(a.abs() < 1e-10 && (b - 3.0).abs() < 1e-10);
        let e = vec![1.5; 200];
        let (_, b) = fit_variance_model(&e, &m).unwrap();
        assert!(b.abs() < 1e-10);
    }

    #[test]
    fn fitted_variance_clamps_negative_values() {
        let n = 100;
        let w: Vec<f64> = (0..n).map(|i| if i < 50 { 1.0 } else { 10.0 }).collect();
        let ds = Dataset::builder(vec![0.0; n], DMatrix::from_element(n, 1, 1.0)).weights(w).build().unwrap();
        // large residuals on the heavy-weight half: b̂ < 0 and â + b̂ < 0
        let r: Vec<f64> = (0..n).map(|i| if i < 50 { 0.0 } else { 2.0 }).collect();
        let p = PreparedErrors::prepare(&ErrorModel::FittedScaledNormal, &ds, Some(&r), None).unwrap();
        assert_eq!(p.clamped(), 50);
    }

    #[test]
    fn shock_draws() {
        let shares = DMatrix::from_fn(6, 3, |i, f| if i / 2 == f { 1.0 } else { 0.0 });
        let x = DMatrix::from_fn(6, 2, |_, j| if j == 0 { 1.0 } else { 0.0 });
        let ds = Dataset::builder(vec![1.0; 6], x)
            .shift_share(shares, vec![0.0; 3], 1)
            .build()
            .unwrap();
        let a = draw_shocks(&ds, &mut Substream::root(1).rng(), false).unwrap();
        let b = draw_shocks(&ds, &mut Substream::root(1).rng(), false).unwrap();
        let c = draw_shocks(&ds, &mut Substream::root(2).rng(), false).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        let x = a.x().column(1);
        assert_eq!(x[0], x[1]);
        assert_eq!(x[0], a.shocks().unwrap()[0]);
        assert_eq!(a.y(), ds.y());
    }
}
