//! Flags, the TOML config that mirrors them, and their translation into an
//! assessment.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use serde::Deserialize;

use infassess::datamodel::{load_dataset, ClusterLevel, Dataset, LinearHypothesis, Schema};
use infassess::engine::{AssessmentSpec, BetaTildePolicy, Generator, InferenceMethod};
use infassess::errorgen::ErrorModel;
use infassess::matching::MatchSpec;
use infassess::presets::design_preset;
use infassess::resampling::{PermutationScheme, ResamplingKind, ResamplingTestSpec};
use infassess::variance::{DofConvention, ReferenceDist, VarianceSpec};
use infassess::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MethodArg {
    Classical,
    Hc0,
    Hc1,
    Crve,
    Wild,
    Permutation,
    Akm,
    Akm0,
    SignChange,
    MatchAi,
    MatchSigns,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ErrorsArg {
    IidNormal,
    ClusterNormal,
    ResidualBootstrap,
    SignFlip,
    Lognormal,
    FittedScaled,
    TwoGroup,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RefArg {
    Normal,
    /// t(G−1) for crve, t(N−df) otherwise
    T,
    TGMinus1,
    TNMinusK,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum LevelArg {
    Primary,
    Coarse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DofArg {
    Counted,
    Uncounted,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeArg {
    Unit,
    Cluster,
    Strata,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PolicyArg {
    ZeroThenProject,
    RestrictedFit,
}

/// Every assessment flag. A config file given with `--config` supplies the
/// same keys (kebab-case); flags on the command line win.
#[derive(Debug, Clone, Default, Args, Deserialize)]
#[serde(rename_all = "kebab-case", deny_unknown_fields)]
pub struct AssessArgs {
    /// TOML file with any of these options
    #[arg(long)]
    #[serde(skip)]
    pub config: Option<PathBuf>,

    /// Built-in design (see `replicate --list` for experiments)
    #[arg(long)]
    pub preset: Option<String>,
    /// Seed for designs that draw shares, shocks or outcomes
    #[arg(long)]
    pub design_seed: Option<u64>,

    /// Delimited input file with a header row
    #[arg(long)]
    pub data: Option<PathBuf>,
    #[arg(long)]
    pub outcome: Option<String>,
    /// Regressor columns, comma separated
    #[arg(long, value_delimiter = ',')]
    pub x: Option<Vec<String>>,
    /// Add an intercept (default: yes unless --absorb is given)
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub intercept: Option<bool>,
    #[arg(long)]
    pub absorb: Option<String>,
    #[arg(long)]
    pub cluster: Option<String>,
    /// Coarse cluster column (strata)
    #[arg(long)]
    pub coarse: Option<String>,
    #[arg(long)]
    pub weights: Option<String>,
    /// Tab-delimited input
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub tab: Option<bool>,

    /// Tested column (default: first regressor)
    #[arg(long)]
    pub test: Option<String>,
    /// Null value of the tested coefficient
    #[arg(long)]
    pub null: Option<f64>,

    #[arg(long, value_enum)]
    pub method: Option<MethodArg>,
    #[arg(long, value_enum)]
    pub cluster_level: Option<LevelArg>,
    #[arg(long, value_enum)]
    pub dof: Option<DofArg>,
    #[arg(long = "ref", value_enum)]
    #[serde(rename = "ref")]
    pub reference: Option<RefArg>,
    #[arg(long)]
    pub inner_reps: Option<usize>,
    /// Wild bootstrap: resample around the unrestricted fit
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub no_impose_null: Option<bool>,
    #[arg(long, value_enum)]
    pub scheme: Option<SchemeArg>,
    /// Matches per treated unit
    #[arg(long)]
    pub matches: Option<usize>,
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub without_replacement: Option<bool>,

    #[arg(long, value_enum)]
    pub errors: Option<ErrorsArg>,
    /// Residual-based errors come from the null-restricted fit
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub restricted_residuals: Option<bool>,
    #[arg(long)]
    pub rho: Option<f64>,
    /// σ₁²/σ₀² for two-group errors
    #[arg(long)]
    pub ratio: Option<f64>,
    /// Resample shocks instead of errors
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub shocks: Option<bool>,
    /// One shock draw per shock cluster
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    pub cluster_draws: Option<bool>,

    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long, value_delimiter = ',')]
    pub alphas: Option<Vec<f64>>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum)]
    pub policy: Option<PolicyArg>,

    /// Output directory for report.json and pvalues.csv
    #[arg(long)]
    pub out: Option<PathBuf>,
}

macro_rules! overlay {
    ($dst:ident, $src:ident; $($f:ident),* $(,)?) => {
        $( if $dst.$f.is_none() { $dst.$f = $src.$f; } )*
    };
}

impl AssessArgs {
    /// Flags first, then the config file.
    pub fn resolve(mut self) -> Result<Self> {
        let Some(path) = self.config.clone() else {
            return Ok(self);
        };
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::Config(format!("config file {}: {e}", path.display())))?;
        let file: AssessArgs = toml::from_str(&text)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        overlay!(self, file; preset, design_seed, data, outcome, x, intercept, absorb, cluster,
            coarse, weights, tab, test, null, method, cluster_level, dof, reference, inner_reps,
            no_impose_null, scheme, matches, without_replacement, errors, restricted_residuals, rho, ratio, shocks,
            cluster_draws, reps, alphas, seed, policy, out);
        Ok(self)
    }

    pub fn out_dir(&self) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from("infassess-out"))
    }

    pub fn dataset(&self) -> Result<(Dataset, LinearHypothesis)> {
        let (ds, h) = match (&self.preset, &self.data) {
            (Some(_), Some(_)) => return Err(Error::Config("give either --preset or --data, not both".into())),
            (Some(p), None) => design_preset(p, self.design_seed.unwrap_or(0))?,
            (None, Some(path)) => {
                let outcome = self
                    .outcome
                    .clone()
                    .ok_or_else(|| Error::Config("--outcome is required with --data".into()))?;
                let x = self.x.clone().unwrap_or_default();
                let schema = Schema {
                    outcome,
                    regressors: x.clone(),
                    intercept: self.intercept.unwrap_or(self.absorb.is_none()),
                    absorb: self.absorb.clone(),
                    cluster: self.cluster.clone(),
                    coarse: self.coarse.clone(),
                    weights: self.weights.clone(),
                    delimiter: if self.tab.unwrap_or(false) { b'\t' } else { b',' },
                };
                let ds = load_dataset(path, &schema)?;
                let name = match (&self.test, x.first()) {
                    (Some(t), _) => t.clone(),
                    (None, Some(first)) => first.clone(),
                    (None, None) => "(intercept)".into(),
                };
                let col = ds
                    .column_index(&name)
                    .ok_or_else(|| Error::Config(format!("tested column '{name}' is not a regressor")))?;
                let h = LinearHypothesis::coefficient(col, ds.ncols(), 0.0);
                (ds, h)
            }
            (None, None) => return Err(Error::Config("one of --preset or --data is required".into())),
        };
        let h = match (&self.preset, &self.test) {
            (Some(_), Some(name)) => {
                let col = ds
                    .column_index(name)
                    .ok_or_else(|| Error::Config(format!("tested column '{name}' is not in the preset")))?;
                LinearHypothesis::coefficient(col, ds.ncols(), 0.0)
            }
            _ => h,
        };
        let h = match self.null {
            Some(q) => h.with_q(q)?,
            None => h,
        };
        Ok((ds, h))
    }

    fn level(&self) -> ClusterLevel {
        match self.cluster_level {
            Some(LevelArg::Coarse) => ClusterLevel::Coarse,
            _ => ClusterLevel::Primary,
        }
    }

    pub fn method(&self) -> Result<InferenceMethod> {
        let m = self
            .method
            .ok_or_else(|| Error::Config("--method is required".into()))?;
        let analytic = |v: VarianceSpec| {
            let v = match self.reference {
                Some(RefArg::Normal) => v.with_reference(ReferenceDist::Normal),
                Some(RefArg::TGMinus1) => v.with_reference(ReferenceDist::TGMinus1),
                Some(RefArg::TNMinusK) => v.with_reference(ReferenceDist::TNMinusK),
                Some(RefArg::T) | None => v,
            };
            let v = match self.dof {
                Some(DofArg::Uncounted) => v.with_dof(DofConvention::AbsorbUncounted),
                _ => v,
            };
            InferenceMethod::Analytic(v)
        };
        let resampling = |kind| {
            let mut s = ResamplingTestSpec::new(kind);
            if let Some(b) = self.inner_reps {
                s.inner_reps = b;
            }
            s.impose_null = !self.no_impose_null.unwrap_or(false);
            s.cluster_level = self.level();
            s.scheme = match self.scheme {
                Some(SchemeArg::Cluster) => PermutationScheme::ClusterLevel,
                Some(SchemeArg::Strata) => PermutationScheme::WithinStrata,
                _ => PermutationScheme::UnitLevel,
            };
            InferenceMethod::Resampling(s)
        };
        let matching = MatchSpec {
            m: self.matches.unwrap_or(1),
            with_replacement: !self.without_replacement.unwrap_or(false),
            covariates: None,
        };
        Ok(match m {
            MethodArg::Classical => analytic(VarianceSpec::classical()),
            MethodArg::Hc0 => analytic(VarianceSpec::hc0()),
            MethodArg::Hc1 => analytic(VarianceSpec::hc1()),
            MethodArg::Crve => analytic(VarianceSpec::crve(self.level())),
            MethodArg::Wild => resampling(ResamplingKind::WildCluster),
            MethodArg::Permutation => resampling(ResamplingKind::Permutation),
            MethodArg::Akm => resampling(ResamplingKind::Akm),
            MethodArg::Akm0 => resampling(ResamplingKind::Akm0),
            MethodArg::SignChange => resampling(ResamplingKind::SignChange),
            MethodArg::MatchAi => InferenceMethod::MatchAi(matching),
            MethodArg::MatchSigns => InferenceMethod::MatchSigns {
                spec: matching,
                inner_reps: self.inner_reps.unwrap_or(999),
            },
        })
    }

    pub fn generator(&self) -> Result<Generator> {
        if self.shocks.unwrap_or(false) {
            if self.errors.is_some() {
                return Err(Error::Config("--shocks and --errors are mutually exclusive".into()));
            }
            return Ok(Generator::Shocks {
                cluster_draws: self.cluster_draws.unwrap_or(false),
            });
        }
        let model = match self.errors.unwrap_or(ErrorsArg::IidNormal) {
            ErrorsArg::IidNormal => ErrorModel::IidNormal,
            ErrorsArg::ClusterNormal => ErrorModel::ClusterNormal {
                rho: self
                    .rho
                    .ok_or_else(|| Error::Config("cluster-normal errors need --rho".into()))?,
                level: self.level(),
            },
            ErrorsArg::ResidualBootstrap => ErrorModel::ResidualBootstrap,
            ErrorsArg::SignFlip => ErrorModel::SignFlipResiduals,
            ErrorsArg::Lognormal => ErrorModel::LognormalDemeaned,
            ErrorsArg::FittedScaled => ErrorModel::FittedScaledNormal,
            ErrorsArg::TwoGroup => ErrorModel::TwoGroupHetero {
                ratio: self
                    .ratio
                    .ok_or_else(|| Error::Config("two-group errors need --ratio".into()))?,
                column: None,
            },
        };
        Ok(Generator::Errors { model })
    }

    pub fn spec(&self, h: LinearHypothesis) -> Result<AssessmentSpec> {
        let mut s = AssessmentSpec::new(h, self.method()?, self.generator()?);
        if let Some(r) = self.reps {
            s.reps = r;
        }
        if let Some(a) = &self.alphas {
            s.alphas = a.clone();
        }
        if let Some(seed) = self.seed {
            s.seed = seed;
        }
        s.restricted_residuals = self.restricted_residuals.unwrap_or(false);
        if let Some(p) = self.policy {
            s.beta_tilde_policy = match p {
                PolicyArg::ZeroThenProject => BetaTildePolicy::ZeroThenProject,
                PolicyArg::RestrictedFit => BetaTildePolicy::RestrictedFit,
            };
        }
        Ok(s)
    }
}
