//! Weighted least squares with one absorbed fixed-effect factor.
//!
//! [`LinearDesign`] caches everything that depends on X only: the demeaned
//! design, (X'ΠX)⁻¹, the projection rows (X'ΠX)⁻¹X'Π and the leverages.
//! Replicates reuse it and only touch y.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::datamodel::{label_count, Dataset, LinearHypothesis};
use crate::error::{Error, Result};

/// Relative pivot tolerance for rank decisions.
pub const RANK_TOL: f64 = 1e-10;

/// Within-group demeaning for one factor, weighted when weights are present.
#[derive(Debug, Clone)]
pub struct Absorber {
    labels: Vec<usize>,
    inv_mass: Vec<f64>,
}

impl Absorber {
    pub fn new(labels: &[usize], weights: Option<&[f64]>) -> Self {
        let g = label_count(labels);
        let mut mass = vec![0.0; g];
        for (i, &l) in labels.iter().enumerate() {
            mass[l] += weights.map_or(1.0, |w| w[i]);
        }
        Absorber {
            labels: labels.to_vec(),
            inv_mass: mass.iter().map(|m| 1.0 / m).collect(),
        }
    }

    pub fn n_groups(&self) -> usize {
        self.inv_mass.len()
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Total weight of each group.
    pub fn mass(&self, g: usize) -> f64 {
        1.0 / self.inv_mass[g]
    }

    pub fn demean(&self, v: &mut [f64], weights: Option<&[f64]>) {
        let mut sums = vec![0.0; self.n_groups()];
        for (i, &l) in self.labels.iter().enumerate() {
            sums[l] += weights.map_or(1.0, |w| w[i]) * v[i];
        }
        for (i, &l) in self.labels.iter().enumerate() {
            v[i] -= sums[l] * self.inv_mass[l];
        }
    }
}

/// Householder QR with column pivoting by remaining column norm.
/// Returns (R, perm) with A[:, perm] = QR. On rank deficiency the error
/// names the first column (in original order) spanned by the ones before it.
pub(crate) fn pivoted_qr(a: &DMatrix<f64>) -> Result<(DMatrix<f64>, Vec<usize>)> {
    qr_core(a).ok_or_else(|| {
        let column = (1..=a.ncols())
            .find(|&j| qr_core(&a.columns(0, j).into_owned()).is_none())
            .map_or(a.ncols().saturating_sub(1), |j| j - 1);
        Error::SingularDesign { column }
    })
}

fn qr_core(a: &DMatrix<f64>) -> Option<(DMatrix<f64>, Vec<usize>)> {
    let (n, k) = a.shape();
    let mut m = a.clone();
    let mut perm: Vec<usize> = (0..k).collect();
    let mut first = 0.0;
    for i in 0..k {
        let norms: Vec<f64> = (i..k)
            .map(|j| m.view((i, j), (n - i, 1)).norm_squared())
            .collect();
        let (best, &nrm2) = norms
            .iter()
            .enumerate()
            .max_by(|x, y| x.1.total_cmp(y.1))
            .expect("nonempty range");
        let nrm = nrm2.sqrt();
        if i == 0 {
            first = nrm;
        }
        if nrm <= RANK_TOL * first || nrm == 0.0 {
            return None;
        }
        m.swap_columns(i, i + best);
        perm.swap(i, i + best);
        let x0 = m[(i, i)];
        let alpha = if x0 >= 0.0 { -nrm } else { nrm };
        let mut v: Vec<f64> = (i..n).map(|r| m[(r, i)]).collect();
        v[0] -= alpha;
        let vnorm2: f64 = v.iter().map(|t| t * t).sum();
        if vnorm2 > 0.0 {
            for j in i..k {
                let dot: f64 = (i..n).map(|r| v[r - i] * m[(r, j)]).sum();
                let f = 2.0 * dot / vnorm2;
                for r in i..n {
                    m[(r, j)] -= f * v[r - i];
                }
            }
        }
        m[(i, i)] = alpha;
    }
    if n < k {
        return None;
    }
    Some((m.rows(0, k).upper_triangle(), perm))
}

/// Cached factorization of a fixed design.
#[derive(Debug, Clone)]
pub struct LinearDesign {
    xd: DMatrix<f64>,
    weights: Option<Vec<f64>>,
    absorber: Option<Absorber>,
    xtx_inv: DMatrix<f64>,
    proj: DMatrix<f64>,
    leverage: Vec<f64>,
}

impl LinearDesign {
    pub fn new(x: &DMatrix<f64>, weights: Option<&[f64]>, absorb: Option<&[usize]>) -> Result<Self> {
        let (n, k) = x.shape();
        let absorber = absorb.map(|l| Absorber::new(l, weights));
        let mut xd = x.clone();
        if let Some(a) = &absorber {
            for j in 0..k {
                a.demean(xd.column_mut(j).as_mut_slice(), weights);
            }
        }
        let (xtx_inv, proj) = if k == 0 {
            (DMatrix::zeros(0, 0), DMatrix::zeros(0, n))
        } else {
            let mut xs = xd.clone();
            if let Some(w) = weights {
                for (i, wi) in w.iter().enumerate() {
                    let s = wi.sqrt();
                    for j in 0..k {
                        xs[(i, j)] *= s;
                    }
                }
            }
            let (r, perm) = pivoted_qr(&xs)?;
            let rinv = r
                .solve_upper_triangular(&DMatrix::identity(k, k))
                .ok_or(Error::SingularDesign { column: perm[k - 1] })?;
            let pinv = &rinv * rinv.transpose();
            let mut xtx_inv = DMatrix::zeros(k, k);
            for a in 0..k {
                for b in 0..k {
                    xtx_inv[(perm[a], perm[b])] = pinv[(a, b)];
                }
            }
            let mut proj = &xtx_inv * xd.transpose();
            if let Some(w) = weights {
                for (i, wi) in w.iter().enumerate() {
                    proj.column_mut(i).scale_mut(*wi);
                }
            }
            (xtx_inv, proj)
        };
        let leverage = (0..n)
            .map(|i| {
                (0..k)
                    .map(|j| proj[(j, i)] * xd[(i, j)])
                    .sum::<f64>()
            })
            .collect();
        Ok(LinearDesign {
            xd,
            weights: weights.map(|w| w.to_vec()),
            absorber,
            xtx_inv,
            proj,
            leverage,
        })
    }

    pub fn from_dataset(ds: &Dataset) -> Result<Self> {
        Self::new(ds.x(), ds.weights(), ds.absorb())
    }

    pub fn nobs(&self) -> usize {
        self.xd.nrows()
    }
    pub fn ncols(&self) -> usize {
        self.xd.ncols()
    }
    /// Number of absorbed fixed-effect levels (0 without absorption).
    pub fn n_absorbed(&self) -> usize {
        self.absorber.as_ref().map_or(0, Absorber::n_groups)
    }
    /// Columns plus absorbed levels.
    pub fn df_model(&self) -> usize {
        self.ncols() + self.n_absorbed()
    }
    pub fn demeaned_x(&self) -> &DMatrix<f64> {
        &self.xd
    }
    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }
    pub fn absorber(&self) -> Option<&Absorber> {
        self.absorber.as_ref()
    }
    pub fn xtx_inv(&self) -> &DMatrix<f64> {
        &self.xtx_inv
    }
    /// K×N matrix (X'ΠX)⁻¹X'Π on the demeaned design.
    pub fn proj(&self) -> &DMatrix<f64> {
        &self.proj
    }
    pub fn leverage(&self) -> &[f64] {
        &self.leverage
    }

    pub fn within(&self, y: &[f64]) -> Vec<f64> {
        let mut v = y.to_vec();
        if let Some(a) = &self.absorber {
            a.demean(&mut v, self.weights());
        }
        v
    }

    /// β̂ for outcome y. Raw y is fine: the projection annihilates
    /// anything constant within absorbed groups.
    pub fn coefficients(&self, y: &[f64]) -> DVector<f64> {
        &self.proj * DVector::from_column_slice(y)
    }

    /// ỹ − X̃β for a given β.
    pub fn residuals(&self, y: &[f64], beta: &DVector<f64>) -> Vec<f64> {
        let mut e = self.within(y);
        let fitted = &self.xd * beta;
        for (ei, fi) in e.iter_mut().zip(fitted.iter()) {
            *ei -= fi;
        }
        e
    }

    pub fn fit(self: &Arc<Self>, y: &[f64]) -> FitResult {
        let beta_hat = self.coefficients(y);
        let residuals = self.residuals(y, &beta_hat);
        FitResult {
            beta_hat,
            residuals,
            design: Arc::clone(self),
        }
    }

    /// β̃ = β̂ − V R'(RVR')⁻¹(Rβ̂ − q) with V = (X'ΠX)⁻¹.
    pub fn restrict(&self, beta_hat: &DVector<f64>, h: &LinearHypothesis) -> Result<DVector<f64>> {
        if h.r.ncols() != self.ncols() {
            return Err(Error::Config(format!(
                "hypothesis has {} columns, design has {}",
                h.r.ncols(),
                self.ncols()
            )));
        }
        let vrt = &self.xtx_inv * h.r.transpose();
        let m = &h.r * &vrt;
        let inv = m
            .try_inverse()
            .ok_or_else(|| Error::Config("R(X'ΠX)⁻¹R' is singular".into()))?;
        let gap = &h.r * beta_hat - &h.q;
        Ok(beta_hat - vrt * (inv * gap))
    }
}

/// A fitted model. Design-level quantities live in the shared cache.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub beta_hat: DVector<f64>,
    pub residuals: Vec<f64>,
    design: Arc<LinearDesign>,
}

impl FitResult {
    pub fn design(&self) -> &Arc<LinearDesign> {
        &self.design
    }
    pub fn xtx_inv(&self) -> &DMatrix<f64> {
        self.design.xtx_inv()
    }
    pub fn leverage(&self) -> &[f64] {
        self.design.leverage()
    }
    pub fn df_model(&self) -> usize {
        self.design.df_model()
    }
}

pub fn fit(ds: &Dataset) -> Result<FitResult> {
    Ok(Arc::new(LinearDesign::from_dataset(ds)?).fit(ds.y()))
}

pub fn fit_restricted(ds: &Dataset, h: &LinearHypothesis) -> Result<FitResult> {
    let mut f = fit(ds)?;
    let beta = f.design.restrict(&f.beta_hat, h)?;
    f.residuals = f.design.residuals(ds.y(), &beta);
    f.beta_hat = beta;
    Ok(f)
}

/// Smallest-norm β with Rβ = q: R'(RR')⁻¹q.
pub fn zero_then_project(h: &LinearHypothesis) -> Result<DVector<f64>> {
    let rrt = &h.r * h.r.transpose();
    let inv = rrt
        .try_inverse()
        .ok_or_else(|| Error::Config("R must have full row rank".into()))?;
    Ok(h.r.transpose() * (inv * &h.q))
}

/// Outcome and target columns residualized on the other columns and the
/// absorbed effects.
#[derive(Debug, Clone)]
pub struct Partialled {
    pub y: Vec<f64>,
    pub x: DMatrix<f64>,
}

/// Cached residual-maker for "everything except `target_cols`".
#[derive(Debug, Clone)]
pub struct ControlProjector {
    design: Option<LinearDesign>,
    absorber: Option<Absorber>,
    weights: Option<Vec<f64>>,
}

impl ControlProjector {
    pub fn new(ds: &Dataset, target_cols: &[usize]) -> Result<Self> {
        if let Some(&bad) = target_cols.iter().find(|&&c| c >= ds.ncols()) {
            return Err(Error::Config(format!("column {bad} out of range")));
        }
        let others: Vec<usize> = (0..ds.ncols()).filter(|c| !target_cols.contains(c)).collect();
        let design = if others.is_empty() {
            None
        } else {
            Some(LinearDesign::new(&ds.x().select_columns(&others), ds.weights(), ds.absorb())?)
        };
        Ok(ControlProjector {
            absorber: ds.absorb().map(|l| Absorber::new(l, ds.weights())),
            weights: ds.weights().map(|w| w.to_vec()),
            design,
        })
    }

    pub fn residualize(&self, v: &[f64]) -> Vec<f64> {
        match &self.design {
            Some(d) => {
                let b = d.coefficients(v);
                d.residuals(v, &b)
            }
            None => {
                let mut out = v.to_vec();
                if let Some(a) = &self.absorber {
                    a.demean(&mut out, self.weights.as_deref());
                }
                out
            }
        }
    }
}

pub fn partial_out(ds: &Dataset, target_cols: &[usize]) -> Result<Partialled> {
    let p = ControlProjector::new(ds, target_cols)?;
    let y = p.residualize(ds.y());
    let mut x = DMatrix::zeros(ds.nobs(), target_cols.len());
    for (j, &c) in target_cols.iter().enumerate() {
        let col: Vec<f64> = ds.x().column(c).iter().copied().collect();
        x.set_column(j, &DVector::from_vec(p.residualize(&col)));
    }
    Ok(Partialled { y, x })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_ds(n: usize, k: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut x = DMatrix::from_fn(n, k, |_, _| rng.sample::<f64, _>(StandardNormal));
        x.column_mut(0).fill(1.0);
        let y = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        Dataset::builder(y, x).build().unwrap()
    }

    #[test]
    fn exact_fit() {
        let x = DMatrix::from_row_slice(4, 2, &[1.0, 0.0, 1.0, 1.0, 1.0, 2.0, 1.0, 5.0]);
        let y: Vec<f64> = (0..4).map(|i| 2.0 - x[(i, 1)]).collect();
        let f = fit(&Dataset::builder(y, x).build().unwrap()).unwrap();
        assert!((f.beta_hat[0] - 2.0).abs() < 1e-10);
        assert!((f.beta_hat[1] + 1.0).abs() < 1e-10);
    }

    #[test]
    fn difference_in_means() {
        let y = vec![1.0, 3.0, 2.0, 7.0, 4.0, 0.5];
        let d = [1.0, 1.0, 0.0, 0.0, 0.0, 0.0];
        let x = DMatrix::from_fn(6, 2, |i, j| if j == 0 { 1.0 } else { d[i] });
        let f = fit(&Dataset::builder(y, x).build().unwrap()).unwrap();
        let want = (1.0 + 3.0) / 2.0 - (2.0 + 7.0 + 4.0 + 0.5) / 4.0;
        assert!((f.beta_hat[1] - want).abs() < 1e-12);
    }

    #[test]
    fn constant_weights_match_unweighted() {
        let ds = random_ds(30, 3, 1);
        let w = ds.to_builder().weights(vec![7.0; 30]).build().unwrap();
        let a = fit(&ds).unwrap().beta_hat;
        let b = fit(&w).unwrap().beta_hat;
        assert!((a - b).amax() < 1e-12);
    }

    #[test]
    fn singular_column_is_named() {
        let d = [1.0, 0.0, 1.0, 0.0, 1.0];
        let x = DMatrix::from_fn(5, 3, |i, j| match j {
            0 => 1.0,
            1 => d[i],
            _ => 1.0 - d[i],
        });
        let err = fit(&Dataset::builder(vec![0.0; 5], x).build().unwrap()).unwrap_err();
        assert!(matches!(err, Error::SingularDesign { column: 2 }), "{err}");
        // constant within absorbed groups
        let x = DMatrix::from_fn(4, 1, |i, _| (i / 2) as f64);
        let ds = Dataset::builder(vec![0.0; 4], x).absorb(vec![0, 0, 1, 1]).build().unwrap();
        assert!(matches!(fit(&ds), Err(Error::SingularDesign { column: 0 })));
    }

    #[test]
    fn restricted_examples() {
        let ds = random_ds(25, 3, 2);
        let f = fit(&ds).unwrap();
        let h = LinearHypothesis::coefficient(1, 3, f.beta_hat[1]);
        let r = fit_restricted(&ds, &h).unwrap();
        assert!((r.beta_hat.clone() - f.beta_hat.clone()).amax() < 1e-12);
        let c = DVector::from_vec(vec![0.3, -1.0, 2.0]);
        let h = LinearHypothesis::new(DMatrix::identity(3, 3), c.clone()).unwrap();
        let r = fit_restricted(&ds, &h).unwrap();
        assert!((r.beta_hat - c).amax() < 1e-12);
    }

    /// Oracle: minimize SSR subject to Rβ = q by solving the KKT system.
    #[test]
    fn restricted_matches_kkt_oracle() {
        let ds = random_ds(5, 3, 9);
        let r = DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 2.0]);
        let h = LinearHypothesis::new(r.clone(), DVector::from_element(1, 0.7)).unwrap();
        let got = fit_restricted(&ds, &h).unwrap().beta_hat;
        let x = ds.x();
        let mut kkt = DMatrix::zeros(4, 4);
        kkt.view_mut((0, 0), (3, 3)).copy_from(&(2.0 * x.transpose() * x));
        kkt.view_mut((0, 3), (3, 1)).copy_from(&r.transpose());
        kkt.view_mut((3, 0), (1, 3)).copy_from(&r);
        let mut rhs = DVector::zeros(4);
        rhs.rows_mut(0, 3)
            .copy_from(&(2.0 * x.transpose() * DVector::from_column_slice(ds.y())));
        rhs[3] = 0.7;
        let sol = kkt.lu().solve(&rhs).unwrap();
        for j in 0..3 {
            assert!((got[j] - sol[j]).abs() < 1e-10);
        }
        assert!(((&r * &got)[0] - 0.7).abs() < 1e-10);
    }

    #[test]
    fn partial_out_cases() {
        let ds = random_ds(20, 1, 3);
        let p = partial_out(&ds, &[0]).unwrap();
        assert_eq!(p.y, ds.y());
        let ds = random_ds(20, 2, 4);
        let p = partial_out(&ds, &[1]).unwrap();
        let ybar = ds.y().iter().sum::<f64>() / 20.0;
        for i in 0..20 {
            assert!((p.y[i] - (ds.y()[i] - ybar)).abs() < 1e-12);
        }
    }

    fn weighted_absorbed_ds(n: usize, seed: u64) -> (Dataset, Dataset) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let groups: Vec<usize> = (0..n).map(|i| i % 4).collect();
        let w: Vec<f64> = (0..n).map(|_| rng.random_range(0.5..3.0)).collect();
        let x = DMatrix::from_fn(n, 2, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        let absorbed = Dataset::builder(y.clone(), x.clone())
            .weights(w.clone())
            .absorb(groups.clone())
            .build()
            .unwrap();
        let full = DMatrix::from_fn(n, 6, |i, j| if j < 2 { x[(i, j)] } else if groups[i] == j - 2 { 1.0 } else { 0.0 });
        let dummies = Dataset::builder(y, full).weights(w).build().unwrap();
        (absorbed, dummies)
    }

    #[test]
    fn residuals_orthogonal_to_columns_and_groups() {
        let (ds, _) = weighted_absorbed_ds(40, 5);
        let f = fit(&ds).unwrap();
        let w = ds.weights().unwrap();
        let ynorm = ds.y().iter().map(|v| v * v).sum::<f64>().sqrt();
        for j in 0..2 {
            let s: f64 = (0..40).map(|i| w[i] * ds.x()[(i, j)] * f.residuals[i]).sum();
            assert!(s.abs() < 1e-8 * ynorm);
        }
        for g in 0..4 {
            let s: f64 = (0..40).filter(|i| i % 4 == g).map(|i| w[i] * f.residuals[i]).sum();
            assert!(s.abs() < 1e-8 * ynorm);
        }
        assert_eq!(f.df_model(), 6);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(40))]

        #[test]
        fn absorption_equals_dummies(seed in 0u64..10_000, n in 12usize..200) {
            let (a, d) = weighted_absorbed_ds(n, seed);
            let ba = fit(&a).unwrap().beta_hat;
            let bd = fit(&d).unwrap().beta_hat;
            for j in 0..2 {
                prop_assert!((ba[j] - bd[j]).abs() <= 1e-8 * bd[j].abs().max(1.0));
            }
        }

        #[test]
        fn frisch_waugh(seed in 0u64..10_000, weighted in any::<bool>()) {
            let (a, _) = weighted_absorbed_ds(60, seed);
            let ds = if weighted { a } else {
                Dataset::builder(a.y().to_vec(), a.x().clone()).absorb(a.absorb().unwrap().to_vec()).build().unwrap()
            };
            let full = fit(&ds).unwrap().beta_hat[1];
            let p = partial_out(&ds, &[1]).unwrap();
            let w: Vec<f64> = ds.weights().map_or(vec![1.0; 60], |w| w.to_vec());
            let num: f64 = (0..60).map(|i| w[i] * p.x[(i, 0)] * p.y[i]).sum();
            let den: f64 = (0..60).map(|i| w[i] * p.x[(i, 0)].powi(2)).sum();
            prop_assert!((num / den - full).abs() <= 1e-8 * full.abs().max(1.0));
        }

        /// Two β̃ on the null, same errors: β̂ᵇ − β̃ and residuals coincide.
        #[test]
        fn beta_tilde_choice_is_irrelevant(seed in 0u64..10_000, shift in -5.0f64..5.0) {
            let ds = random_ds(30, 3, seed);
            let h = LinearHypothesis::coefficient(1, 3, 0.5);
            let b1 = zero_then_project(&h).unwrap();
            let mut b2 = b1.clone();
            b2[0] += shift;
            b2[2] -= 2.0 * shift;
            let eps: Vec<f64> = ds.y().to_vec();
            let design = Arc::new(LinearDesign::from_dataset(&ds).unwrap());
            let run = |b: &DVector<f64>| {
                let xb = ds.x() * b;
                let y: Vec<f64> = (0..30).map(|i| xb[i] + eps[i]).collect();
                let f = design.fit(&y);
                (f.beta_hat - b, f.residuals)
            };
            let (d1, r1) = run(&b1);
            let (d2, r2) = run(&b2);
            prop_assert!((d1 - d2).amax() < 1e-10);
            for i in 0..30 {
                prop_assert!((r1[i] - r2[i]).abs() < 1e-10);
            }
        }
    }
}
