use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::dgm::{draw_dataset, draw_sampled, DgmSpec, DGM_PRESETS};
use super::oracle::{oracle_truth, OracleTruth};
use crate::error::{Error, Result};
use crate::estimators::{analyze_kinds, AnalysisConfig, EstimatorKind, EstimatorOptions};
use crate::glm::{DesignSpec, FitOptions};
use crate::inference::{bootstrap, child_seed};
use crate::nuisance::{MediatorMode, ModelSuite, Truncation};

pub const SCHEMA_VERSION: u32 = 1;

/// Which nuisance models are replaced by a deliberately wrong formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Misspecification {
    Correct,
    YMisspec,
    MMisspec,
    MyMisspec,
    ZMisspec,
    ZyMisspec,
}

impl Misspecification {
    pub const ALL: [Misspecification; 6] = [
        Misspecification::Correct,
        Misspecification::YMisspec,
        Misspecification::MMisspec,
        Misspecification::MyMisspec,
        Misspecification::ZMisspec,
        Misspecification::ZyMisspec,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Misspecification::Correct => "correct",
            Misspecification::YMisspec => "y-misspec",
            Misspecification::MMisspec => "m-misspec",
            Misspecification::MyMisspec => "my-misspec",
            Misspecification::ZMisspec => "z-misspec",
            Misspecification::ZyMisspec => "zy-misspec",
        }
    }

    /// Applies the misspecification to a correct suite. The stochastic
    /// mediator distribution keeps the correct instrument and mediator
    /// models, so every scenario targets the same parameter.
    pub fn apply(self, mut suite: ModelSuite) -> ModelSuite {
        let f = |s: &str| DesignSpec::parse(s).expect("built-in formula");
        let (y, m, z) = match self {
            Misspecification::Correct => (false, false, false),
            Misspecification::YMisspec => (true, false, false),
            Misspecification::MMisspec => (false, true, false),
            Misspecification::MyMisspec => (true, true, false),
            Misspecification::ZMisspec => (false, false, true),
            Misspecification::ZyMisspec => (true, false, true),
        };
        if y {
            suite.y = f("Y ~ Z");
        }
        if m {
            suite.intervention_m.get_or_insert_with(|| suite.m.clone());
            suite.m = f("M ~ W2");
        }
        if z {
            suite.intervention_z.get_or_insert_with(|| suite.z.clone());
            suite.z = f("Z ~ A");
        }
        suite
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BootstrapSettings {
    pub replicates: usize,
    pub level: f64,
}

impl Default for BootstrapSettings {
    fn default() -> Self {
        Self {
            replicates: 500,
            level: 0.95,
        }
    }
}

/// What the scenario sample size counts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SampleBasis {
    /// Units with `delta = 1`; draws continue until `n` are sampled.
    #[default]
    Sampled,
    /// All drawn units, sampled or not.
    Total,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub name: String,
    pub dgm: DgmSpec,
    pub n: usize,
    #[serde(default)]
    pub sample_basis: SampleBasis,
    pub suite: ModelSuite,
    pub estimators: Vec<EstimatorKind>,
    #[serde(default)]
    pub truncation: Truncation,
    #[serde(default = "scenario_fit_options")]
    pub nuisance_fit: FitOptions,
    #[serde(default)]
    pub estimator: EstimatorOptions,
    /// Percentile bootstrap intervals for every estimator, per replicate.
    #[serde(default)]
    pub bootstrap: Option<BootstrapSettings>,
}

/// Simulated nuisance fits drop aliased terms (small samples can leave a
/// covariate pattern empty) rather than failing the replicate.
fn scenario_fit_options() -> FitOptions {
    FitOptions {
        drop_aliased: true,
        ..FitOptions::default()
    }
}

/// Names accepted by [`ScenarioSpec::preset`]: `<dgm>-<misspecification>`.
pub fn scenario_presets() -> Vec<String> {
    let mut v = Vec::new();
    for dgm in DGM_PRESETS {
        for m in Misspecification::ALL {
            v.push(format!("{dgm}-{}", m.label()));
        }
    }
    v
}

impl ScenarioSpec {
    pub fn new(name: &str, dgm: DgmSpec, misspecification: Misspecification, n: usize) -> Self {
        let mut suite = ModelSuite::correct();
        if dgm.mediator_uses_instrument() {
            suite.m = DesignSpec::parse("M ~ Z + A + W2").expect("built-in formula");
            suite.mediator_mode = MediatorMode::IncludesInstrument;
        }
        if dgm.delta.is_none() {
            suite.delta = None;
        }
        let bootstrap = matches!(
            misspecification,
            Misspecification::ZMisspec | Misspecification::ZyMisspec
        )
        .then(BootstrapSettings::default);
        Self {
            name: name.to_string(),
            dgm,
            n,
            sample_basis: SampleBasis::Sampled,
            suite: misspecification.apply(suite),
            estimators: EstimatorKind::ALL.to_vec(),
            truncation: Truncation::default(),
            nuisance_fit: scenario_fit_options(),
            estimator: EstimatorOptions::default(),
            bootstrap,
        }
    }

    /// Built-in scenario `<dgm>-<misspecification>` with `n = 5000`;
    /// misspecified exposure models come with bootstrap intervals.
    pub fn preset(name: &str) -> Result<Self> {
        for dgm in DGM_PRESETS {
            if let Some(rest) = name.strip_prefix(dgm).and_then(|r| r.strip_prefix('-')) {
                if let Some(m) = Misspecification::ALL
                    .into_iter()
                    .find(|m| m.label() == rest)
                {
                    return Ok(Self::new(name, DgmSpec::preset(dgm)?, m, 5000));
                }
            }
        }
        Err(Error::UnknownPreset(name.to_string()))
    }

    pub fn analysis(&self) -> AnalysisConfig {
        AnalysisConfig {
            suite: self.suite.clone(),
            truncation: self.truncation,
            nuisance_fit: self.nuisance_fit,
            estimator: self.estimator,
        }
    }
}

/// One estimator's result on one simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RepRecord {
    pub rep: usize,
    pub estimator: EstimatorKind,
    pub n_sampled: f64,
    pub psi_sde: f64,
    pub psi_fs: f64,
    pub psi_csde: f64,
    pub se: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub oob: bool,
    pub boot_lo: Option<f64>,
    pub boot_hi: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EstimatorSummary {
    pub estimator: EstimatorKind,
    /// Replicates where the estimator ran.
    pub replicates: usize,
    /// Replicates where fitting or estimation failed.
    pub failures: usize,
    /// Replicates with a non-finite point estimate (excluded from bias and
    /// MSE).
    pub non_finite: usize,
    pub bias: f64,
    pub pct_bias: f64,
    /// Mean of `se * sqrt(number of sampled units)`.
    pub se_sqrt_n: f64,
    pub coverage: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap_coverage: Option<f64>,
    pub mse: f64,
    pub pct_oob: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulationReport {
    pub schema_version: u32,
    pub scenario: String,
    pub n: usize,
    pub sample_basis: SampleBasis,
    pub reps: usize,
    pub seed: u64,
    pub truth: OracleTruth,
    pub estimators: Vec<EstimatorSummary>,
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, k) = v.fold((0.0, 0usize), |(s, k), x| (s + x, k + 1));
    if k == 0 {
        f64::NAN
    } else {
        s / k as f64
    }
}

/// Per-estimator bias, coverage, MSE and out-of-bounds rates against the
/// oracle truth.
pub fn summarize_runs(records: &[RepRecord], truth: &OracleTruth) -> Result<Vec<EstimatorSummary>> {
    if records.is_empty() {
        return Err(Error::NoReplicates);
    }
    let psi = truth.psi_csde;
    let mut kinds: Vec<EstimatorKind> = records.iter().map(|r| r.estimator).collect();
    kinds.sort();
    kinds.dedup();
    let mut out = Vec::with_capacity(kinds.len());
    for kind in kinds {
        let all: Vec<&RepRecord> = records.iter().filter(|r| r.estimator == kind).collect();
        let ok: Vec<&RepRecord> = all.iter().copied().filter(|r| r.error.is_none()).collect();
        let finite: Vec<f64> = ok
            .iter()
            .map(|r| r.psi_csde)
            .filter(|v| v.is_finite())
            .collect();
        let k = ok.len() as f64;
        let bias = mean(finite.iter().map(|v| v - psi));
        let pct = |count: usize| {
            if ok.is_empty() {
                f64::NAN
            } else {
                100.0 * count as f64 / k
            }
        };
        let boot: Vec<&RepRecord> = ok.iter().copied().filter(|r| r.boot_lo.is_some()).collect();
        out.push(EstimatorSummary {
            estimator: kind,
            replicates: ok.len(),
            failures: all.len() - ok.len(),
            non_finite: ok.len() - finite.len(),
            bias,
            pct_bias: 100.0 * bias / psi,
            se_sqrt_n: mean(
                ok.iter()
                    .map(|r| r.se * r.n_sampled.sqrt())
                    .filter(|v| v.is_finite()),
            ),
            coverage: pct(ok
                .iter()
                .filter(|r| r.ci_lo <= psi && psi <= r.ci_hi)
                .count()),
            bootstrap_coverage: (!boot.is_empty()).then(|| {
                let c = boot
                    .iter()
                    .filter(|r| r.boot_lo.unwrap() <= psi && psi <= r.boot_hi.unwrap())
                    .count();
                100.0 * c as f64 / boot.len() as f64
            }),
            mse: mean(finite.iter().map(|v| (v - psi) * (v - psi))),
            pct_oob: pct(ok.iter().filter(|r| r.oob).count()),
        });
    }
    Ok(out)
}

fn run_rep(s: &ScenarioSpec, config: &AnalysisConfig, rep: usize, seed: u64) -> Vec<RepRecord> {
    let data_seed = child_seed(seed, rep as u64);
    let failed = |msg: String| -> Vec<RepRecord> {
        s.estimators
            .iter()
            .map(|&k| RepRecord {
                rep,
                estimator: k,
                n_sampled: f64::NAN,
                psi_sde: f64::NAN,
                psi_fs: f64::NAN,
                psi_csde: f64::NAN,
                se: f64::NAN,
                ci_lo: f64::NAN,
                ci_hi: f64::NAN,
                oob: true,
                boot_lo: None,
                boot_hi: None,
                error: Some(msg.clone()),
            })
            .collect()
    };
    let drawn = match s.sample_basis {
        SampleBasis::Sampled => draw_sampled(&s.dgm, s.n, data_seed),
        SampleBasis::Total => draw_dataset(&s.dgm, s.n, data_seed),
    };
    let d = match drawn {
        Ok(d) => d.compress(),
        Err(e) => return failed(e.to_string()),
    };
    let est = match analyze_kinds(&d, config, &s.estimators) {
        Ok(e) => e,
        Err(e) => return failed(e.to_string()),
    };
    let boot = s.bootstrap.map(|b| {
        bootstrap(
            &d,
            config,
            &s.estimators,
            b.replicates,
            child_seed(data_seed, u64::MAX),
            b.level,
        )
    });
    let n_sampled = d.sampled_weight();
    est.into_iter()
        .enumerate()
        .map(|(k, e)| {
            let (boot_lo, boot_hi) = match &boot {
                Some(Ok(cis)) => (Some(cis[k].ci.lo), Some(cis[k].ci.hi)),
                // a failed bootstrap counts as an uninformative interval
                Some(Err(_)) => (Some(f64::NAN), Some(f64::NAN)),
                None => (None, None),
            };
            RepRecord {
                rep,
                estimator: e.estimator,
                n_sampled,
                psi_sde: e.psi_sde,
                psi_fs: e.psi_fs,
                psi_csde: e.psi_csde,
                se: e.se,
                ci_lo: e.ci.lo,
                ci_hi: e.ci.hi,
                oob: e.out_of_bounds,
                boot_lo,
                boot_hi,
                error: None,
            }
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct ScenarioRun {
    pub report: SimulationReport,
    pub records: Vec<RepRecord>,
}

/// Runs `reps` replicates of a scenario. Replicate `r` draws its data with
/// seed `child_seed(master_seed, r)`, so results do not depend on
/// `threads`.
pub fn run_scenario(
    s: &ScenarioSpec,
    reps: usize,
    master_seed: u64,
    threads: Option<usize>,
) -> Result<ScenarioRun> {
    if reps == 0 {
        return Err(Error::NoReplicates);
    }
    if s.estimators.is_empty() {
        return Err(Error::InvalidArgument("no estimators selected".into()));
    }
    s.dgm.validate()?;
    s.suite.validate()?;
    let truth = oracle_truth(&s.dgm)?;
    let config = s.analysis();
    let work = || -> Vec<RepRecord> {
        (0..reps)
            .into_par_iter()
            .map(|r| run_rep(s, &config, r, master_seed))
            .collect::<Vec<_>>()
            .into_iter()
            .flatten()
            .collect()
    };
    let records = match threads {
        Some(t) => rayon::ThreadPoolBuilder::new()
            .num_threads(t)
            .build()
            .map_err(|e| Error::InvalidArgument(format!("thread pool: {e}")))?
            .install(work),
        None => work(),
    };
    let estimators = summarize_runs(&records, &truth)?;
    Ok(ScenarioRun {
        report: SimulationReport {
            schema_version: SCHEMA_VERSION,
            scenario: s.name.clone(),
            n: s.n,
            sample_basis: s.sample_basis,
            reps,
            seed: master_seed,
            truth,
            estimators,
        },
        records,
    })
}

/// Per-replicate results as CSV.
pub fn write_records_csv<W: Write>(records: &[RepRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record([
        "rep",
        "estimator",
        "psi_sde",
        "psi_fs",
        "psi_csde",
        "se",
        "ci_lo",
        "ci_hi",
        "oob",
        "boot_lo",
        "boot_hi",
    ])?;
    let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
    for r in records {
        w.write_record([
            r.rep.to_string(),
            r.estimator.key().to_string(),
            r.psi_sde.to_string(),
            r.psi_fs.to_string(),
            r.psi_csde.to_string(),
            r.se.to_string(),
            r.ci_lo.to_string(),
            r.ci_hi.to_string(),
            u8::from(r.oob).to_string(),
            opt(r.boot_lo),
            opt(r.boot_hi),
        ])?;
    }
    w.flush().map_err(|e| Error::Io {
        path: "<records>".into(),
        source: e,
    })?;
    Ok(())
}
