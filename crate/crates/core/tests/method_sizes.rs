//! Size of the resampling and matching methods on designs where they should
//! hold their level.

use nalgebra::DMatrix;

use infassess::datamodel::{ClusterLevel, Dataset, LinearHypothesis};
use infassess::engine::{run_assessment, AssessmentReport, AssessmentSpec, Generator, InferenceMethod};
use infassess::errorgen::ErrorModel;
use infassess::matching::MatchSpec;
use infassess::presets::design_preset;
use infassess::resampling::{PermutationScheme, ResamplingKind, ResamplingTestSpec};

fn mc_se(alpha: f64, b: usize) -> f64 {
    (alpha * (1.0 - alpha) / b as f64).sqrt()
}

fn assert_size(r: &AssessmentReport, lo_slack: f64, hi_slack: f64) {
    let b = r.effective_reps();
    for rr in &r.rejection_rates {
        let se = mc_se(rr.alpha, b);
        assert!(
            rr.rate <= rr.alpha + hi_slack + 3.0 * se && rr.rate >= rr.alpha - lo_slack - 3.0 * se,
            "α={} rate={}",
            rr.alpha,
            rr.rate
        );
    }
}

/// `g` clusters of 6 with a cluster-level binary regressor.
fn clustered(g: usize) -> Dataset {
    let n = g * 6;
    let x = DMatrix::from_fn(n, 2, |i, j| if j == 0 { 1.0 } else { ((i / 6) % 2) as f64 });
    Dataset::builder(vec![0.0; n], x)
        .cluster_primary((0..n).map(|i| i / 6).collect())
        .build()
        .unwrap()
}

#[test]
fn wild_cluster_bootstrap_thirty_clusters() {
    let ds = clustered(30);
    let spec = AssessmentSpec::errors(
        LinearHypothesis::coefficient(1, 2, 0.0),
        InferenceMethod::Resampling(ResamplingTestSpec::new(ResamplingKind::WildCluster).with_inner_reps(199)),
        ErrorModel::ClusterNormal { rho: 0.5, level: ClusterLevel::Primary },
    )
    .with_reps(1500)
    .with_seed(5);
    assert_size(&run_assessment(&ds, &spec).unwrap(), 0.02, 0.01);
}

#[test]
fn cluster_level_permutation_holds_level() {
    let ds = clustered(12);
    let mut t = ResamplingTestSpec::new(ResamplingKind::Permutation).with_inner_reps(999);
    t.scheme = PermutationScheme::ClusterLevel;
    let spec = AssessmentSpec::errors(
        LinearHypothesis::coefficient(1, 2, 0.0),
        InferenceMethod::Resampling(t),
        ErrorModel::ClusterNormal { rho: 0.5, level: ClusterLevel::Primary },
    )
    .with_reps(2000)
    .with_seed(6);
    let r = run_assessment(&ds, &spec).unwrap();
    // C(12, 6) = 924 assignments are enumerated: the test is exact
    assert_size(&r, 0.0, 0.0);
}

fn matching_design(n1: usize, n0: usize) -> Dataset {
    let n = n1 + n0;
    let x = DMatrix::from_fn(n, 3, |i, j| match j {
        0 => f64::from(u8::from(i < n1)),
        1 => ((i * 37) % 101) as f64 / 101.0,
        _ => ((i * 53) % 89) as f64 / 89.0,
    });
    Dataset::builder(vec![0.0; n], x).build().unwrap()
}

#[test]
fn matching_sign_change_is_valid() {
    let ds = matching_design(12, 60);
    let spec = AssessmentSpec::errors(
        LinearHypothesis::coefficient(0, 3, 0.0),
        InferenceMethod::MatchSigns { spec: MatchSpec::default(), inner_reps: 999 },
        ErrorModel::IidNormal,
    )
    .with_reps(2000)
    .with_seed(7);
    let r = run_assessment(&ds, &spec).unwrap();
    for rr in &r.rejection_rates {
        assert!(rr.rate <= rr.alpha + 2.0 * mc_se(rr.alpha, 2000), "α={} rate={}", rr.alpha, rr.rate);
    }
}

#[test]
fn matching_ai_t_test_near_level_with_many_treated() {
    let ds = matching_design(150, 450);
    let spec = AssessmentSpec::errors(
        LinearHypothesis::coefficient(0, 3, 0.0),
        InferenceMethod::MatchAi(MatchSpec::default()),
        ErrorModel::IidNormal,
    )
    .with_reps(1500)
    .with_seed(8);
    assert_size(&run_assessment(&ds, &spec).unwrap(), 0.02, 0.02);
}

#[test]
fn akm_calibrated_with_many_sectors() {
    let (ds, h) = design_preset("ss-simple-200-5", 3).unwrap();
    for kind in [ResamplingKind::Akm, ResamplingKind::Akm0] {
        let spec = AssessmentSpec::new(
            h.clone(),
            InferenceMethod::Resampling(ResamplingTestSpec::new(kind)),
            Generator::Shocks { cluster_draws: false },
        )
        .with_reps(2000)
        .with_seed(9);
        assert_size(&run_assessment(&ds, &spec).unwrap(), 0.015, 0.015);
    }
}

fn akm_rate(f: usize) -> f64 {
    let (ds, h) = design_preset(&format!("ss-simple-{f}-5"), 3).unwrap();
    let spec = AssessmentSpec::new(
        h,
        InferenceMethod::Resampling(ResamplingTestSpec::new(ResamplingKind::Akm)),
        Generator::Shocks { cluster_draws: false },
    )
    .with_reps(3000)
    .with_seed(10);
    run_assessment(&ds, &spec).unwrap().rate(0.05).unwrap()
}

#[test]
fn akm_over_rejection_shrinks_with_sectors() {
    let (r20, r100, r500) = (akm_rate(20), akm_rate(100), akm_rate(500));
    let se = mc_se(0.08, 3000);
    assert!(r20 > r100 + 2.0 * se && r100 > r500 - 2.0 * se, "{r20} {r100} {r500}");
    assert!(r500 <= 0.08, "{r500}");
}

#[test]
fn balanced_clusters_make_crve_size_free_of_rho() {
    let ds = clustered(10);
    let rate = |rho| {
        let spec = AssessmentSpec::errors(
            LinearHypothesis::coefficient(1, 2, 0.0),
            InferenceMethod::Analytic(infassess::variance::VarianceSpec::crve(ClusterLevel::Primary)),
            ErrorModel::ClusterNormal { rho, level: ClusterLevel::Primary },
        )
        .with_reps(4000)
        .with_seed(11);
        run_assessment(&ds, &spec).unwrap().rate(0.05).unwrap()
    };
    let (lo, hi) = (rate(0.1), rate(0.9));
    // independent runs: the gap has standard error √2 times the single-rate one
    assert!((lo - hi).abs() <= 3.0 * 2f64.sqrt() * mc_se(lo.max(hi), 4000), "{lo} {hi}");
}

#[test]
fn worst_case_over_variance_ratios_is_the_noisy_treated_group() {
    let ds = infassess::designs::gen_two_sample(5, 100).unwrap();
    let spec = AssessmentSpec::errors(
        LinearHypothesis::coefficient(1, 2, 0.0),
        infassess::presets::hc1_normal(),
        ErrorModel::IidNormal,
    )
    .with_reps(4000)
    .with_seed(12);
    let sw = infassess::engine::worst_case_sweep(&ds, &spec, &[0.01, 1.0, 100.0]).unwrap();
    assert_eq!(sw.points[sw.worst].ratio, 100.0);
    assert!(sw.max_rate > 0.13, "{}", sw.max_rate);
}

#[test]
fn wild_bootstrap_near_nominal_on_unweighted_shift_share_with_48_clusters() {
    let ds = infassess::designs::ShiftShareSynthetic::large_f(2).generate().unwrap();
    let n = ds.nobs();
    let ds = ds.to_builder().cluster_primary((0..n).map(|i| i % 48).collect()).build().unwrap();
    let spec = AssessmentSpec::errors(
        LinearHypothesis::coefficient(1, 2, 0.0),
        InferenceMethod::Resampling(ResamplingTestSpec::new(ResamplingKind::WildCluster).with_inner_reps(199)),
        ErrorModel::IidNormal,
    )
    .with_reps(1000)
    .with_seed(13);
    let r = run_assessment(&ds, &spec).unwrap().rate(0.05).unwrap();
    assert!((r - 0.05).abs() <= 0.03, "{r}");
}
