//! Influence-curve variances, Wald intervals and the nonparametric
//! bootstrap.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::estimators::{AnalysisConfig, EstimatorKind};
use crate::tabular::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CiMethod {
    Wald,
    BootstrapPercentile,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ConfidenceInterval {
    pub level: f64,
    pub lo: f64,
    pub hi: f64,
    pub method: CiMethod,
}

impl ConfidenceInterval {
    /// Inclusive containment; false for undefined intervals.
    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }
}

/// Two-sided standard normal critical value.
pub fn z_quantile(level: f64) -> f64 {
    if level == 0.95 {
        1.959964
    } else {
        Normal::standard().inverse_cdf(0.5 + level / 2.0)
    }
}

/// Weighted mean and variance (frequency weights, `N - 1` divisor with
/// `N` the total weight).
pub fn weighted_moments(values: &[f64], d: &Dataset) -> (f64, f64) {
    moments(values, d.weights())
}

pub(crate) fn moments(values: &[f64], weights: Option<&[f64]>) -> (f64, f64) {
    let w = |i: usize| weights.map_or(1.0, |w| w[i]);
    let total: f64 = (0..values.len()).map(w).sum();
    let mean = values
        .iter()
        .enumerate()
        .map(|(i, v)| w(i) * v)
        .sum::<f64>()
        / total;
    let ss: f64 = values
        .iter()
        .enumerate()
        .map(|(i, v)| w(i) * (v - mean) * (v - mean))
        .sum();
    (mean, ss / (total - 1.0))
}

/// Delta-method influence curve of `psi_sde / psi_fs`.
pub fn ratio_ic(d_num: &[f64], d_den: &[f64], psi_sde: f64, psi_fs: f64) -> Result<Vec<f64>> {
    if psi_fs == 0.0 {
        return Err(Error::ZeroFirstStage);
    }
    if d_num.len() != d_den.len() {
        return Err(Error::Dimension(format!(
            "numerator IC has {} rows, denominator {}",
            d_num.len(),
            d_den.len()
        )));
    }
    Ok(d_num
        .iter()
        .zip(d_den)
        .map(|(n, d)| n / psi_fs - psi_sde * d / (psi_fs * psi_fs))
        .collect())
}

/// Standard error `sqrt(var(ic) / n)` and the Wald interval around `psi`.
pub fn ic_wald(ic: &[f64], psi: f64, level: f64) -> Result<(f64, ConfidenceInterval)> {
    ic_wald_weighted(ic, None, psi, level)
}

/// As [`ic_wald`] with per-row frequency weights.
pub fn ic_wald_weighted(
    ic: &[f64],
    weights: Option<&[f64]>,
    psi: f64,
    level: f64,
) -> Result<(f64, ConfidenceInterval)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "level {level} is not in (0, 1)"
        )));
    }
    let n: f64 = weights.map_or(ic.len() as f64, |w| w.iter().sum());
    if n < 2.0 {
        return Err(Error::InvalidArgument(
            "need at least two observations".into(),
        ));
    }
    let (_, var) = moments(ic, weights);
    let se = (var / n).sqrt();
    let half = z_quantile(level) * se;
    Ok((
        se,
        ConfidenceInterval {
            level,
            lo: psi - half,
            hi: psi + half,
            method: CiMethod::Wald,
        },
    ))
}

/// Sample quantile with linear interpolation between order statistics
/// (Hyndman and Fan type 7). `sorted` must be ascending and nonempty.
pub fn quantile_type7(sorted: &[f64], p: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Seed of replicate `r`, derived from the master seed only.
pub fn child_seed(seed: u64, r: u64) -> u64 {
    let mut z = seed ^ r.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Multinomial resample counts: `round(total weight)` draws over rows with
/// probability proportional to their weights.
pub fn resample_counts(d: &Dataset, rng: &mut ChaCha8Rng) -> Vec<f64> {
    let total = d.total_weight();
    let mut left = total.round() as u64;
    let mut mass = total;
    let mut counts = vec![0.0; d.n()];
    for (i, c) in counts.iter_mut().enumerate() {
        if left == 0 {
            break;
        }
        let w = d.weight_at(i);
        let p = (w / mass).clamp(0.0, 1.0);
        let k = if p >= 1.0 {
            left
        } else {
            Binomial::new(left, p).expect("valid binomial").sample(rng)
        };
        *c = k as f64;
        left -= k;
        mass -= w;
    }
    counts
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BootstrapCi {
    pub estimator: EstimatorKind,
    pub ci: ConfidenceInterval,
    pub replicates: usize,
    pub failed: usize,
}

/// Percentile bootstrap intervals for several estimators sharing the same
/// resamples. Nuisance models are refit on every resample.
pub fn bootstrap(
    d: &Dataset,
    config: &AnalysisConfig,
    estimators: &[EstimatorKind],
    b: usize,
    seed: u64,
    level: f64,
) -> Result<Vec<BootstrapCi>> {
    if b < 2 {
        return Err(Error::InvalidArgument(
            "bootstrap needs at least 2 replicates".into(),
        ));
    }
    if !(level > 0.0 && level < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "level {level} is not in (0, 1)"
        )));
    }
    let draws: Vec<Vec<f64>> = (0..b as u64)
        .into_par_iter()
        .map(|r| {
            let mut rng = ChaCha8Rng::seed_from_u64(child_seed(seed, r));
            let counts = resample_counts(d, &mut rng);
            let nan = vec![f64::NAN; estimators.len()];
            let Ok(rd) = d.reweighted(&counts) else {
                return nan;
            };
            match crate::estimators::analyze_kinds(&rd, config, estimators) {
                Ok(est) => est.iter().map(|e| e.psi_csde).collect(),
                Err(_) => nan,
            }
        })
        .collect();
    let (lo_p, hi_p) = ((1.0 - level) / 2.0, (1.0 + level) / 2.0);
    let mut out = Vec::with_capacity(estimators.len());
    for (k, &kind) in estimators.iter().enumerate() {
        let mut vals: Vec<f64> = draws
            .iter()
            .map(|v| v[k])
            .filter(|v| v.is_finite())
            .collect();
        let failed = b - vals.len();
        if 2 * failed > b {
            return Err(Error::Bootstrap { failed, total: b });
        }
        vals.sort_by(f64::total_cmp);
        out.push(BootstrapCi {
            estimator: kind,
            ci: ConfidenceInterval {
                level,
                lo: quantile_type7(&vals, lo_p),
                hi: quantile_type7(&vals, hi_p),
                method: CiMethod::BootstrapPercentile,
            },
            replicates: vals.len(),
            failed,
        });
    }
    Ok(out)
}

/// Percentile bootstrap interval for one estimator.
pub fn bootstrap_ci(
    d: &Dataset,
    config: &AnalysisConfig,
    estimator: EstimatorKind,
    b: usize,
    seed: u64,
    level: f64,
) -> Result<BootstrapCi> {
    Ok(bootstrap(d, config, &[estimator], b, seed, level)?.remove(0))
}
