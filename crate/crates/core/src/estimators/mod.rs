//! The four CSDE estimators and the analysis entry point.

mod ee;
mod eic;
mod iptw;
mod tmle;

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::glm::FitOptions;
use crate::inference::{ic_wald_weighted, ratio_ic, CiMethod, ConfidenceInterval};
use crate::nuisance::{
    fit_nuisances, mediator_first_stage, FirstStage, ModelSuite, NuisanceSet, Truncation,
    TruncationCounts,
};
use crate::tabular::Dataset;

pub use ee::estimate_ee;
pub use eic::{eic_components, EicInputs};
pub use iptw::estimate_iptw;
pub use tmle::{estimate_tmle, targeted_outcome, TmleVariant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EstimatorKind {
    Iptw,
    Ee,
    TmleEfficient,
    TmleCompatible,
}

impl EstimatorKind {
    pub const ALL: [EstimatorKind; 4] = [
        EstimatorKind::Iptw,
        EstimatorKind::Ee,
        EstimatorKind::TmleEfficient,
        EstimatorKind::TmleCompatible,
    ];

    pub fn label(self) -> &'static str {
        match self {
            EstimatorKind::Iptw => "IPTW",
            EstimatorKind::Ee => "EE",
            EstimatorKind::TmleEfficient => "TMLE (efficient)",
            EstimatorKind::TmleCompatible => "TMLE (compatible)",
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            EstimatorKind::Iptw => "iptw",
            EstimatorKind::Ee => "ee",
            EstimatorKind::TmleEfficient => "tmle-efficient",
            EstimatorKind::TmleCompatible => "tmle-compatible",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.key() == s)
    }
}

/// How the outcome clever covariate enters the fluctuation regression.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FluctuationForm {
    /// The whole clever covariate is the regressor.
    #[default]
    Covariate,
    /// Its nonnegative mediator-density factor moves into the weights.
    Weighted,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EstimatorOptions {
    pub level: f64,
    /// First-stage estimates smaller than this in magnitude are flagged and
    /// get no influence curve.
    pub fs_floor: f64,
    pub fluctuation: FluctuationForm,
    /// Options for the fluctuation regressions. Their cap is wide because a
    /// covariate with little spread may need a large coefficient.
    pub fluctuation_fit: FitOptions,
}

impl Default for EstimatorOptions {
    fn default() -> Self {
        Self {
            level: 0.95,
            fs_floor: 1e-10,
            fluctuation: FluctuationForm::Covariate,
            fluctuation_fit: FitOptions {
                coef_cap: 1000.0,
                drop_aliased: true,
                ..FitOptions::default()
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Epsilons {
    pub y: f64,
    /// Exposure fluctuation; the numerator fluctuation for the efficient
    /// variant.
    pub z: Vec<f64>,
    /// Denominator fluctuation of the efficient variant.
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub z_den: Vec<f64>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct Diagnostics {
    pub truncated: TruncationCounts,
    pub fs_below_floor: bool,
    /// False when a fluctuation regression hit its iteration limit.
    pub fluctuation_converged: bool,
    /// Rows where the targeted exposure model is not monotone in A.
    pub monotonicity_violations: usize,
    pub warnings: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Estimate {
    pub estimator: EstimatorKind,
    pub psi_sde: f64,
    pub psi_fs: f64,
    pub psi_csde: f64,
    pub se: f64,
    pub ci: ConfidenceInterval,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub epsilons: Option<Epsilons>,
    pub out_of_bounds: bool,
    pub diagnostics: Diagnostics,
    /// Per-row influence curve of the ratio (NaN when the first stage is
    /// below the floor).
    #[serde(skip)]
    pub ic: Vec<f64>,
    /// Centered numerator influence curve, original outcome scale.
    #[serde(skip)]
    pub ic_sde: Vec<f64>,
    /// Centered first-stage influence curve.
    #[serde(skip)]
    pub ic_fs: Vec<f64>,
}

/// Assembles an estimate from point values and centered influence curves.
#[allow(clippy::too_many_arguments)]
pub(crate) fn finish(
    kind: EstimatorKind,
    d: &Dataset,
    ns: &NuisanceSet,
    psi_sde: f64,
    psi_fs: f64,
    ic_sde: Vec<f64>,
    ic_fs: Vec<f64>,
    opts: &EstimatorOptions,
    mut diagnostics: Diagnostics,
    epsilons: Option<Epsilons>,
) -> Result<Estimate> {
    let psi_csde = psi_sde / psi_fs;
    diagnostics.truncated = ns.truncated;
    let below = !(psi_fs.abs() >= opts.fs_floor);
    diagnostics.fs_below_floor = below;
    let (ic, se, ci) = if below {
        diagnostics.warnings.push(format!(
            "first-stage estimate {psi_fs:e} is below the floor"
        ));
        let nan = ConfidenceInterval {
            level: opts.level,
            lo: f64::NAN,
            hi: f64::NAN,
            method: CiMethod::Wald,
        };
        (vec![f64::NAN; d.n()], f64::NAN, nan)
    } else {
        let ic = ratio_ic(&ic_sde, &ic_fs, psi_sde, psi_fs)?;
        let (se, ci) = ic_wald_weighted(&ic, d.weights(), psi_csde, opts.level)?;
        (ic, se, ci)
    };
    Ok(Estimate {
        estimator: kind,
        psi_sde,
        psi_fs,
        psi_csde,
        se,
        ci,
        epsilons,
        out_of_bounds: !(psi_csde.abs() <= ns.scale().width()),
        diagnostics,
        ic,
        ic_sde,
        ic_fs,
    })
}

/// Runs one estimator on fitted nuisances.
pub fn estimate(
    kind: EstimatorKind,
    d: &Dataset,
    ns: &NuisanceSet,
    opts: &EstimatorOptions,
) -> Result<Estimate> {
    match kind {
        EstimatorKind::Iptw => estimate_iptw(d, ns, opts),
        EstimatorKind::Ee => estimate_ee(d, ns, opts),
        EstimatorKind::TmleEfficient => estimate_tmle(d, ns, TmleVariant::Efficient, opts),
        EstimatorKind::TmleCompatible => estimate_tmle(d, ns, TmleVariant::Compatible, opts),
    }
}

/// Everything needed to go from a dataset to estimates.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisConfig {
    pub suite: ModelSuite,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default)]
    pub nuisance_fit: FitOptions,
    #[serde(default)]
    pub estimator: EstimatorOptions,
}

impl AnalysisConfig {
    pub fn new(suite: ModelSuite) -> Self {
        Self {
            suite,
            truncation: Truncation::default(),
            nuisance_fit: FitOptions::default(),
            estimator: EstimatorOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Analysis {
    pub estimates: Vec<Estimate>,
    pub mediator_first_stage: FirstStage,
    pub nuisance_warnings: Vec<String>,
}

/// Fits the nuisance models and runs the requested estimators.
pub fn analyze(d: &Dataset, config: &AnalysisConfig, kinds: &[EstimatorKind]) -> Result<Analysis> {
    let ns = fit_nuisances(d, &config.suite, config.truncation, &config.nuisance_fit)?;
    let estimates = kinds
        .iter()
        .map(|&k| estimate(k, d, &ns, &config.estimator))
        .collect::<Result<Vec<_>>>()?;
    Ok(Analysis {
        estimates,
        mediator_first_stage: mediator_first_stage(d, &ns),
        nuisance_warnings: ns.fits.warnings(),
    })
}

pub(crate) fn analyze_kinds(
    d: &Dataset,
    config: &AnalysisConfig,
    kinds: &[EstimatorKind],
) -> Result<Vec<Estimate>> {
    let ns = fit_nuisances(d, &config.suite, config.truncation, &config.nuisance_fit)?;
    kinds
        .iter()
        .map(|&k| estimate(k, d, &ns, &config.estimator))
        .collect()
}
