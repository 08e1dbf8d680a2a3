//! JSON and fixed-width text renderings of results.
//!
//! Every JSON document carries `schema_version`. Tables print bias and MSE
//! with 3 decimals and percentages and `SE x sqrt(n)` with 2.

use std::fmt::Write as _;

use serde::Serialize;

use crate::error::{Error, Result};
use crate::estimators::{analyze, Analysis, AnalysisConfig, Estimate, EstimatorKind};
use crate::inference::BootstrapCi;
use crate::simulate::{
    BootstrapSettings, OracleTruth, SampleBasis, SimulationReport, SCHEMA_VERSION,
};
use crate::tabular::{validate, Dataset, ValidationReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ReportFormat {
    #[default]
    Json,
    Table,
}

impl std::str::FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "json" => Ok(Self::Json),
            "table" => Ok(Self::Table),
            other => Err(Error::InvalidArgument(format!(
                "unknown format `{other}` (expected json or table)"
            ))),
        }
    }
}

/// Result of running the estimators on one dataset.
#[derive(Debug, Clone, Serialize)]
pub struct EstimateReport {
    pub schema_version: u32,
    pub data: ValidationReport,
    #[serde(flatten)]
    pub analysis: Analysis,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bootstrap: Option<Vec<BootstrapCi>>,
}

/// Validates `d`, runs the estimators and, when `bootstrap` is given as
/// `(settings, seed)`, adds percentile intervals.
pub fn estimate_report(
    d: &Dataset,
    config: &AnalysisConfig,
    kinds: &[EstimatorKind],
    bootstrap: Option<(BootstrapSettings, u64)>,
) -> Result<EstimateReport> {
    let data = validate(d)?;
    let analysis = analyze(d, config, kinds)?;
    let bootstrap = bootstrap
        .map(|(b, seed)| crate::inference::bootstrap(d, config, kinds, b.replicates, seed, b.level))
        .transpose()?;
    Ok(EstimateReport {
        schema_version: SCHEMA_VERSION,
        data,
        analysis,
        bootstrap,
    })
}

#[derive(Serialize)]
struct Versioned<'a, T: Serialize> {
    schema_version: u32,
    #[serde(flatten)]
    body: &'a T,
}

/// Something that can be rendered by [`emit_report`].
pub trait Emit {
    fn json(&self) -> Result<String>;
    fn table(&self) -> Result<String>;
}

pub fn emit_report<R: Emit + ?Sized>(report: &R, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Json => report.json(),
        ReportFormat::Table => report.table(),
    }
}

fn to_json<T: Serialize + ?Sized>(v: &T) -> Result<String> {
    let mut s = serde_json::to_string_pretty(v)
        .map_err(|e| Error::InvalidArgument(format!("cannot serialize report: {e}")))?;
    s.push('\n');
    Ok(s)
}

fn num(v: f64, decimals: usize) -> String {
    if v.is_finite() {
        format!("{v:.decimals$}")
    } else {
        "NA".to_string()
    }
}

const SIM_HEADER: [&str; 6] = [
    "Bias",
    "%Bias",
    "SE x sqrt(n)",
    "95%CI Cov",
    "MSE",
    "% Out of Bounds",
];

impl Emit for SimulationReport {
    fn json(&self) -> Result<String> {
        to_json(self)
    }

    fn table(&self) -> Result<String> {
        if self.estimators.is_empty() {
            return Err(Error::NoReplicates);
        }
        let boot = self
            .estimators
            .iter()
            .any(|e| e.bootstrap_coverage.is_some());
        let mut head: Vec<&str> = vec!["Estimand"];
        head.extend(SIM_HEADER);
        if boot {
            head.push("Boot Cov");
        }
        head.push("Failed");
        let rows: Vec<Vec<String>> = self
            .estimators
            .iter()
            .map(|e| {
                let mut r = vec![
                    e.estimator.label().to_string(),
                    num(e.bias, 3),
                    num(e.pct_bias, 2),
                    num(e.se_sqrt_n, 2),
                    num(e.coverage, 2),
                    num(e.mse, 3),
                    num(e.pct_oob, 2),
                ];
                if boot {
                    r.push(e.bootstrap_coverage.map_or("NA".into(), |c| num(c, 2)));
                }
                r.push(e.failures.to_string());
                r
            })
            .collect();
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{}: n = {} ({} units), {} replicates, seed {}",
            self.scenario,
            self.n,
            match self.sample_basis {
                SampleBasis::Sampled => "sampled",
                SampleBasis::Total => "total",
            },
            self.reps,
            self.seed
        );
        let _ = writeln!(
            out,
            "truth: psi_CSDE = {}, efficiency bound = {}",
            num(self.truth.psi_csde, 3),
            num(self.truth.efficiency_bound, 3)
        );
        out.push_str(&render(&head, &rows));
        Ok(out)
    }
}

impl Emit for [SimulationReport] {
    fn json(&self) -> Result<String> {
        if self.is_empty() {
            return Err(Error::NoReplicates);
        }
        to_json(self)
    }

    fn table(&self) -> Result<String> {
        if self.is_empty() {
            return Err(Error::NoReplicates);
        }
        let parts = self.iter().map(|r| r.table()).collect::<Result<Vec<_>>>()?;
        Ok(parts.join("\n"))
    }
}

impl Emit for OracleTruth {
    fn json(&self) -> Result<String> {
        to_json(&Versioned {
            schema_version: SCHEMA_VERSION,
            body: self,
        })
    }

    fn table(&self) -> Result<String> {
        let rows = vec![
            vec!["psi_SDE".into(), num(self.psi_sde, 6)],
            vec!["psi_FS".into(), num(self.psi_fs, 6)],
            vec!["psi_CSDE".into(), num(self.psi_csde, 6)],
            vec!["efficiency bound".into(), num(self.efficiency_bound, 6)],
            vec!["EIC sd (all units)".into(), num(self.eic_sd, 6)],
            vec!["P(delta = 1)".into(), num(self.p_sampled, 6)],
            vec![
                "mediator first stage".into(),
                num(self.mediator_first_stage, 6),
            ],
        ];
        let mut out = format!("{}\n", self.dgm);
        out.push_str(&render(&["Quantity", "Value"], &rows));
        Ok(out)
    }
}

fn estimate_rows(estimates: &[Estimate], boot: Option<&[BootstrapCi]>) -> Vec<Vec<String>> {
    estimates
        .iter()
        .map(|e| {
            let mut r = vec![
                e.estimator.label().to_string(),
                num(e.psi_sde, 3),
                num(e.psi_fs, 3),
                num(e.psi_csde, 3),
                num(e.se, 3),
                format!("[{}, {}]", num(e.ci.lo, 3), num(e.ci.hi, 3)),
            ];
            if let Some(b) = boot {
                let ci = b.iter().find(|c| c.estimator == e.estimator);
                r.push(ci.map_or("NA".into(), |c| {
                    format!("[{}, {}]", num(c.ci.lo, 3), num(c.ci.hi, 3))
                }));
            }
            r.push(if e.out_of_bounds { "yes" } else { "no" }.into());
            r
        })
        .collect()
}

fn estimate_table(estimates: &[Estimate], boot: Option<&[BootstrapCi]>) -> String {
    let level = estimates.first().map_or(0.95, |e| e.ci.level);
    let wald = format!("{:.0}% CI", level * 100.0);
    let mut head = vec![
        "Estimator",
        "psi_SDE",
        "psi_FS",
        "psi_CSDE",
        "SE",
        wald.as_str(),
    ];
    if boot.is_some() {
        head.push("Bootstrap CI");
    }
    head.push("Out of Bounds");
    render(&head, &estimate_rows(estimates, boot))
}

impl Emit for Estimate {
    fn json(&self) -> Result<String> {
        to_json(&Versioned {
            schema_version: SCHEMA_VERSION,
            body: self,
        })
    }

    fn table(&self) -> Result<String> {
        Ok(estimate_table(std::slice::from_ref(self), None))
    }
}

impl Emit for EstimateReport {
    fn json(&self) -> Result<String> {
        to_json(self)
    }

    fn table(&self) -> Result<String> {
        let a = &self.analysis;
        let mut out = format!("n = {}, sampled = {}\n", self.data.n, self.data.n_sampled);
        out.push_str(&estimate_table(&a.estimates, self.bootstrap.as_deref()));
        let fs = a.mediator_first_stage;
        let _ = writeln!(
            out,
            "\nFirst-stage effect on the mediator: {} (SE {})",
            num(fs.estimate, 3),
            num(fs.se, 3)
        );
        let mut warnings: Vec<String> = self.data.warnings.clone();
        warnings.extend(a.nuisance_warnings.iter().cloned());
        for e in &a.estimates {
            let label = e.estimator.label();
            warnings.extend(
                e.diagnostics
                    .warnings
                    .iter()
                    .map(|w| format!("{label}: {w}")),
            );
            if e.diagnostics.monotonicity_violations > 0 {
                warnings.push(format!(
                    "{label}: targeted exposure model not monotone on {} rows",
                    e.diagnostics.monotonicity_violations
                ));
            }
        }
        for w in warnings {
            let _ = writeln!(out, "warning: {w}");
        }
        Ok(out)
    }
}

fn render(head: &[&str], rows: &[Vec<String>]) -> String {
    let mut width: Vec<usize> = head.iter().map(|h| h.chars().count()).collect();
    for r in rows {
        for (j, c) in r.iter().enumerate() {
            width[j] = width[j].max(c.chars().count());
        }
    }
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (j, c) in cells.iter().enumerate() {
            let pad = width[j] - c.chars().count();
            if j == 0 {
                s.push_str(c);
                s.push_str(&" ".repeat(pad));
            } else {
                s.push_str("  ");
                s.push_str(&" ".repeat(pad));
                s.push_str(c);
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(head.to_vec());
    let total: usize = width.iter().sum::<usize>() + 2 * (width.len() - 1);
    out.push_str(&"-".repeat(total));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r.iter().map(String::as_str).collect()));
    }
    out
}
