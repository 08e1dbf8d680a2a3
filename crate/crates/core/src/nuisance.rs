//! Nuisance factors of the likelihood and the quantities built from them:
//! the frozen stochastic mediator distribution, the marginal exposure
//! distribution, the instrument posterior and the outcome clever covariate.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::{
    expit, fit_logistic, Assign, DesignSpec, FitOptions, LogisticFit, ResolvedDesign, UnitScale,
    Var,
};
use crate::tabular::Dataset;

/// Whether the mediator model may depend on the instrument.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MediatorMode {
    #[default]
    ExcludesInstrument,
    IncludesInstrument,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSuite {
    pub a: DesignSpec,
    pub z: DesignSpec,
    pub m: DesignSpec,
    pub y: DesignSpec,
    #[serde(default)]
    pub delta: Option<DesignSpec>,
    #[serde(default)]
    pub mediator_mode: MediatorMode,
    /// Instrument model used only to build the stochastic mediator
    /// distribution; defaults to `z`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention_z: Option<DesignSpec>,
    /// Mediator model used only to build the stochastic mediator
    /// distribution; defaults to `m`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub intervention_m: Option<DesignSpec>,
}

impl ModelSuite {
    pub fn from_formulas(
        a: &str,
        z: &str,
        m: &str,
        y: &str,
        delta: Option<&str>,
        mediator_mode: MediatorMode,
    ) -> Result<Self> {
        let suite = Self {
            a: DesignSpec::parse(a)?,
            z: DesignSpec::parse(z)?,
            m: DesignSpec::parse(m)?,
            y: DesignSpec::parse(y)?,
            delta: delta.map(DesignSpec::parse).transpose()?,
            mediator_mode,
            intervention_z: None,
            intervention_m: None,
        };
        suite.validate()?;
        Ok(suite)
    }

    /// Correctly specified models for the simulation mechanisms.
    pub fn correct() -> Self {
        Self::from_formulas(
            "A ~ 1",
            "Z ~ A + W2",
            "M ~ Z + W2",
            "Y ~ Z + M + W2 + Z:W2",
            Some("delta ~ W1 + W2"),
            MediatorMode::ExcludesInstrument,
        )
        .expect("built-in suite is valid")
    }

    /// Instrument model behind the stochastic mediator distribution.
    pub fn intervention_z(&self) -> &DesignSpec {
        self.intervention_z.as_ref().unwrap_or(&self.z)
    }

    /// Mediator model behind the stochastic mediator distribution.
    pub fn intervention_m(&self) -> &DesignSpec {
        self.intervention_m.as_ref().unwrap_or(&self.m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |model: &str, why: &str| Err(Error::Suite(format!("{model} model {why}")));
        let roles = [
            ("A", &self.a),
            ("Z", &self.z),
            ("M", &self.m),
            ("Y", &self.y),
        ];
        let extra = [
            ("Z", self.intervention_z.as_ref()),
            ("M", self.intervention_m.as_ref()),
        ];
        for (name, spec) in roles
            .iter()
            .copied()
            .chain(self.delta.iter().map(|d| ("delta", d)))
            .chain(extra.iter().filter_map(|&(n, s)| s.map(|s| (n, s))))
        {
            if let Some(r) = spec.response() {
                if r != name {
                    return bad(name, &format!("has response `{r}`"));
                }
            }
        }
        if [Var::A, Var::Z, Var::M].iter().any(|v| self.a.mentions(v)) {
            return bad("A", "may only use covariates");
        }
        if !self.z.has_main(&Var::A) {
            return bad("Z", "must contain A as a main effect");
        }
        if self.z.interacts(&Var::A) {
            return bad("Z", "may not interact A with other terms");
        }
        for z in [&self.z, self.intervention_z()] {
            if z.mentions(&Var::Z) || z.mentions(&Var::M) {
                return bad("Z", "may only use A and covariates");
            }
        }
        for m in [&self.m, self.intervention_m()] {
            if m.mentions(&Var::M) {
                return bad("M", "cannot use M as a predictor");
            }
            if self.mediator_mode == MediatorMode::ExcludesInstrument && m.mentions(&Var::A) {
                return bad(
                    "M",
                    "cannot use A unless the mediator includes the instrument",
                );
            }
        }
        if self.y.mentions(&Var::A) {
            return bad("Y", "cannot use A (exclusion restriction)");
        }
        if let Some(d) = &self.delta {
            if [Var::A, Var::Z, Var::M].iter().any(|v| d.mentions(v)) {
                return bad("delta", "may only use covariates");
            }
        }
        Ok(())
    }
}

/// Probability truncation interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Truncation {
    pub lo: f64,
    pub hi: f64,
}

impl Default for Truncation {
    fn default() -> Self {
        Self {
            lo: 0.005,
            hi: 0.995,
        }
    }
}

impl Truncation {
    pub fn none() -> Self {
        Self { lo: 0.0, hi: 1.0 }
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.lo && self.lo < self.hi && self.hi <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "truncation [{}, {}] must satisfy 0 <= lo < hi <= 1",
                self.lo, self.hi
            )));
        }
        Ok(())
    }

    #[inline]
    pub fn clamp(&self, p: f64) -> f64 {
        p.clamp(self.lo, self.hi)
    }

    #[inline]
    fn clamp_counted(&self, p: f64, count: &mut usize) -> f64 {
        let c = self.clamp(p);
        if c != p {
            *count += 1;
        }
        c
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize)]
pub struct TruncationCounts {
    pub g_a: usize,
    pub g_z: usize,
    pub g_m: usize,
    pub g_a2: usize,
    pub pi: usize,
}

/// Fitted regressions with their designs.
#[derive(Debug, Clone)]
pub struct FittedModel {
    pub spec: DesignSpec,
    pub fit: LogisticFit,
}

impl FittedModel {
    fn eta(&self, d: &Dataset, at: Assign) -> Result<Vec<f64>> {
        let r = self.spec.resolve(d)?;
        Ok(r.linear_predictor(d, &self.fit.coefficients, |_| at))
    }
}

#[derive(Debug, Clone)]
pub struct NuisanceFits {
    pub a: FittedModel,
    pub z: FittedModel,
    pub m: FittedModel,
    pub y: FittedModel,
    pub delta: Option<FittedModel>,
    /// Separate fits behind the stochastic mediator distribution, when the
    /// suite asks for them.
    pub intervention_z: Option<FittedModel>,
    pub intervention_m: Option<FittedModel>,
}

impl NuisanceFits {
    pub fn warnings(&self) -> Vec<String> {
        let mut out = Vec::new();
        let models = [
            ("A", Some(&self.a)),
            ("Z", Some(&self.z)),
            ("M", Some(&self.m)),
            ("Y", Some(&self.y)),
            ("delta", self.delta.as_ref()),
            ("intervention Z", self.intervention_z.as_ref()),
            ("intervention M", self.intervention_m.as_ref()),
        ];
        for (name, f) in models {
            if let Some(f) = f {
                out.extend(
                    f.fit
                        .warnings()
                        .into_iter()
                        .map(|w| format!("{name} model: {w}")),
                );
            }
        }
        out
    }
}

/// Nuisance evaluators at every row of the dataset they were evaluated on.
///
/// Arrays hold the probability of level 1; the level-0 value is its
/// complement. All probabilities are already truncated.
#[derive(Debug, Clone)]
pub struct NuisanceSet {
    mode: MediatorMode,
    scale: UnitScale,
    truncation: Truncation,
    ga1: Vec<f64>,
    /// `gz1[a][i] = gZ(1 | a, W_i)`
    gz1: [Vec<f64>; 2],
    /// `gm1[z][a][i] = gM(1 | z, a, W_i)`; identical in `a` unless the
    /// mediator includes the instrument.
    gm1: [[Vec<f64>; 2]; 2],
    /// `qy_eta[m][z][i] = logit Q_Y(m, z, W_i)` on the unit scale.
    qy_eta: [[Vec<f64>; 2]; 2],
    pi: Vec<f64>,
    /// `gstar1[i] = g*(M = 1 | W_i)`, frozen.
    gstar1: Vec<f64>,
    pub fits: NuisanceFits,
    pub truncated: TruncationCounts,
}

#[inline]
fn level(p1: f64, v: u8) -> f64 {
    if v == 1 {
        p1
    } else {
        1.0 - p1
    }
}

fn fit_model(
    name: &'static str,
    spec: &DesignSpec,
    d: &Dataset,
    rows: &[usize],
    response: &[f64],
    lower: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<FittedModel> {
    let wrap = |e| Error::nuisance(name, e);
    let r: ResolvedDesign = spec.resolve(d).map_err(wrap)?;
    let x = r.matrix(d, rows, |i| Assign::observed(d, i));
    let y: Vec<f64> = rows.iter().map(|&i| response[i]).collect();
    let w: Vec<f64> = rows.iter().map(|&i| d.weight_at(i)).collect();
    let offset = vec![0.0; rows.len()];
    let fit = fit_logistic(&x, &y, &w, &offset, lower, opts).map_err(wrap)?;
    Ok(FittedModel {
        spec: spec.clone(),
        fit,
    })
}

/// Fits every nuisance regression and evaluates it on `d`.
///
/// Regressions use the sampled rows; the sampling model uses all rows and
/// is skipped (`pi = 1`) when no row is unsampled.
pub fn fit_nuisances(
    d: &Dataset,
    suite: &ModelSuite,
    truncation: Truncation,
    opts: &FitOptions,
) -> Result<NuisanceSet> {
    suite.validate()?;
    truncation.validate()?;
    let rows = d.sampled_rows();
    if rows.is_empty() {
        return Err(Error::NoSampledRows);
    }
    let scale = UnitScale::from_range(rows.iter().map(|&i| d.y()[i]))?;
    let as_f = |v: &[u8]| v.iter().map(|&x| f64::from(x)).collect::<Vec<_>>();

    let a = fit_model("A", &suite.a, d, &rows, &as_f(d.a()), None, opts)?;
    let mut lower = vec![f64::NEG_INFINITY; suite.z.column_names().len()];
    let j = suite.z.main_column(&Var::A).expect("validated");
    lower[j] = 0.0;
    let z = fit_model("Z", &suite.z, d, &rows, &as_f(d.z()), Some(&lower), opts)?;
    let m = fit_model("M", &suite.m, d, &rows, &as_f(d.m()), None, opts)?;
    let y_unit: Vec<f64> = d
        .y()
        .iter()
        .map(|&v| scale.forward(v).clamp(0.0, 1.0))
        .collect();
    let y = fit_model("Y", &suite.y, d, &rows, &y_unit, None, opts)?;
    let delta = if d.has_unsampled() {
        let spec = suite.delta.as_ref().ok_or_else(|| {
            Error::Suite("the data contain unsampled rows but no delta model was given".into())
        })?;
        let all: Vec<usize> = (0..d.n()).filter(|&i| d.weight_at(i) > 0.0).collect();
        let resp: Vec<f64> = (0..d.n()).map(|i| f64::from(d.delta_at(i))).collect();
        Some(fit_model("delta", spec, d, &all, &resp, None, opts)?)
    } else {
        None
    };
    let intervention_z = match suite.intervention_z() {
        spec if *spec == suite.z => None,
        spec => {
            let mut lower = vec![f64::NEG_INFINITY; spec.column_names().len()];
            lower[spec.main_column(&Var::A).expect("validated")] = 0.0;
            Some(fit_model(
                "intervention Z",
                spec,
                d,
                &rows,
                &as_f(d.z()),
                Some(&lower),
                opts,
            )?)
        }
    };
    let intervention_m = match suite.intervention_m() {
        spec if *spec == suite.m => None,
        spec => Some(fit_model(
            "intervention M",
            spec,
            d,
            &rows,
            &as_f(d.m()),
            None,
            opts,
        )?),
    };
    let fits = NuisanceFits {
        a,
        z,
        m,
        y,
        delta,
        intervention_z,
        intervention_m,
    };
    NuisanceSet::evaluate(fits, suite.mediator_mode, scale, truncation, d)
}

impl NuisanceSet {
    fn evaluate(
        fits: NuisanceFits,
        mode: MediatorMode,
        scale: UnitScale,
        truncation: Truncation,
        d: &Dataset,
    ) -> Result<Self> {
        let n = d.n();
        let mut t = TruncationCounts::default();
        let at = |a: u8, z: u8, m: u8| Assign { a, z, m };
        let probs = |f: &FittedModel, a: Assign, count: &mut usize| -> Result<Vec<f64>> {
            Ok(f.eta(d, a)?
                .into_iter()
                .map(|e| truncation.clamp_counted(expit(e), count))
                .collect())
        };
        let ga1 = probs(&fits.a, at(0, 0, 0), &mut t.g_a)?;
        let gz1 = [
            probs(&fits.z, at(0, 0, 0), &mut t.g_z)?,
            probs(&fits.z, at(1, 0, 0), &mut t.g_z)?,
        ];
        let gm1 = [
            [
                probs(&fits.m, at(0, 0, 0), &mut t.g_m)?,
                probs(&fits.m, at(1, 0, 0), &mut t.g_m)?,
            ],
            [
                probs(&fits.m, at(0, 1, 0), &mut t.g_m)?,
                probs(&fits.m, at(1, 1, 0), &mut t.g_m)?,
            ],
        ];
        let qy_eta = [
            [fits.y.eta(d, at(0, 0, 0))?, fits.y.eta(d, at(0, 1, 0))?],
            [fits.y.eta(d, at(0, 0, 1))?, fits.y.eta(d, at(0, 1, 1))?],
        ];
        let pi = match &fits.delta {
            Some(f) => probs(f, at(0, 0, 0), &mut t.pi)?,
            None => vec![1.0; n],
        };
        let gz0_star = match &fits.intervention_z {
            Some(f) => probs(f, at(0, 0, 0), &mut t.g_z)?,
            None => gz1[0].clone(),
        };
        let gm_star = match &fits.intervention_m {
            Some(f) => [
                probs(f, at(0, 0, 0), &mut t.g_m)?,
                probs(f, at(0, 1, 0), &mut t.g_m)?,
            ],
            None => [gm1[0][0].clone(), gm1[1][0].clone()],
        };
        let gstar1 = (0..n)
            .map(|i| gm_star[0][i] * (1.0 - gz0_star[i]) + gm_star[1][i] * gz0_star[i])
            .collect();
        let mut ns = Self {
            mode,
            scale,
            truncation,
            ga1,
            gz1,
            gm1,
            qy_eta,
            pi,
            gstar1,
            fits,
            truncated: t,
        };
        let mut g_a2 = 0;
        for i in 0..n {
            if d.delta_at(i) == 1 {
                let raw = ns.ga2_raw(d.z()[i], d.m()[i], i);
                if truncation.clamp(raw) != raw {
                    g_a2 += 1;
                }
            }
        }
        ns.truncated.g_a2 = g_a2;
        Ok(ns)
    }

    /// Evaluates the same fitted models on another dataset with the same
    /// covariate columns.
    pub fn reevaluate(&self, d: &Dataset) -> Result<Self> {
        Self::evaluate(self.fits.clone(), self.mode, self.scale, self.truncation, d)
    }

    pub fn n(&self) -> usize {
        self.ga1.len()
    }

    pub fn mode(&self) -> MediatorMode {
        self.mode
    }

    pub fn scale(&self) -> UnitScale {
        self.scale
    }

    pub fn truncation(&self) -> Truncation {
        self.truncation
    }

    /// `gA(a | W_i)`
    #[inline]
    pub fn ga(&self, a: u8, i: usize) -> f64 {
        level(self.ga1[i], a)
    }

    /// `gZ(z | a, W_i)`
    #[inline]
    pub fn gz(&self, z: u8, a: u8, i: usize) -> f64 {
        level(self.gz1[a as usize][i], z)
    }

    /// `gM(m | z, a, W_i)`; `a` is irrelevant unless the mediator includes
    /// the instrument.
    #[inline]
    pub fn gm(&self, m: u8, z: u8, a: u8, i: usize) -> f64 {
        level(self.gm1[z as usize][a as usize][i], m)
    }

    /// Initial outcome regression on the unit scale.
    #[inline]
    pub fn qy(&self, m: u8, z: u8, i: usize) -> f64 {
        expit(self.qy_eta[m as usize][z as usize][i])
    }

    #[inline]
    pub fn qy_eta(&self, m: u8, z: u8, i: usize) -> f64 {
        self.qy_eta[m as usize][z as usize][i]
    }

    /// `P(delta = 1 | W_i)`
    #[inline]
    pub fn pi(&self, i: usize) -> f64 {
        self.pi[i]
    }

    /// Frozen stochastic mediator distribution `g*(m | W_i)`.
    #[inline]
    pub fn gstar(&self, m: u8, i: usize) -> f64 {
        level(self.gstar1[i], m)
    }

    /// `P(Z = z | W_i)`, marginal over the instrument.
    #[inline]
    pub fn pz(&self, z: u8, i: usize) -> f64 {
        self.gz(z, 0, i) * self.ga(0, i) + self.gz(z, 1, i) * self.ga(1, i)
    }

    /// Untruncated `P(A = 1 | W, Z = z[, M = m])`.
    fn ga2_raw(&self, z: u8, m: u8, i: usize) -> f64 {
        let joint = |a: u8| {
            let base = self.ga(a, i) * self.gz(z, a, i);
            match self.mode {
                MediatorMode::ExcludesInstrument => base,
                MediatorMode::IncludesInstrument => base * self.gm(m, z, a, i),
            }
        };
        let (j0, j1) = (joint(0), joint(1));
        j1 / (j0 + j1)
    }

    /// Instrument posterior `gA2(a | W_i, z[, m])`, truncated; `m` only
    /// matters when the mediator includes the instrument.
    #[inline]
    pub fn ga2(&self, a: u8, z: u8, m: u8, i: usize) -> f64 {
        level(self.truncation.clamp(self.ga2_raw(z, m, i)), a)
    }

    /// Outcome clever covariate at `(z, m, W_i)` without the sampling
    /// weight. It never depends on an observed instrument value.
    #[inline]
    pub fn clever_y(&self, z: u8, m: u8, i: usize) -> f64 {
        let gs = self.gstar(m, i);
        match self.mode {
            MediatorMode::ExcludesInstrument => {
                (self.ga2(1, z, m, i) / self.ga(1, i) - self.ga2(0, z, m, i) / self.ga(0, i)) * gs
                    / self.gm(m, z, 0, i)
            }
            MediatorMode::IncludesInstrument => {
                let t = |a: u8| self.ga2(a, z, m, i) / (self.ga(a, i) * self.gm(m, z, a, i));
                (t(1) - t(0)) * gs
            }
        }
    }

    /// Factor of the clever covariate that may move into the regression
    /// weights (nonnegative) and the remaining covariate.
    #[inline]
    pub fn clever_y_split(&self, z: u8, m: u8, i: usize) -> (f64, f64) {
        let gs = self.gstar(m, i);
        match self.mode {
            MediatorMode::ExcludesInstrument => (
                gs / self.gm(m, z, 0, i),
                self.ga2(1, z, m, i) / self.ga(1, i) - self.ga2(0, z, m, i) / self.ga(0, i),
            ),
            MediatorMode::IncludesInstrument => {
                let t = |a: u8| self.ga2(a, z, m, i) / (self.ga(a, i) * self.gm(m, z, a, i));
                (gs, t(1) - t(0))
            }
        }
    }

    /// `sum_m q(m) g*(m | W_i)`
    #[inline]
    pub fn integrate_m(&self, i: usize, q: impl Fn(u8) -> f64) -> f64 {
        q(0) * self.gstar(0, i) + q(1) * self.gstar(1, i)
    }

    /// Mediator distribution under instrument level `a`, marginal over `Z`:
    /// `sum_z gM(1 | z, a, W) gZ(z | a, W)`.
    pub fn mediator_under(&self, a: u8, i: usize) -> f64 {
        self.gm(1, 0, a, i) * self.gz(0, a, i) + self.gm(1, 1, a, i) * self.gz(1, a, i)
    }
}

/// `g*(M = 1 | W)` at each row.
pub fn stochastic_mediator_dist(ns: &NuisanceSet) -> Vec<f64> {
    ns.gstar1.clone()
}

/// `gA2(a | W, Z[, M])` at row `i`'s observed values, as `[a = 0, a = 1]`.
pub fn instrument_posterior(ns: &NuisanceSet, d: &Dataset, i: usize) -> [f64; 2] {
    let (z, m) = (d.z()[i], d.m()[i]);
    [ns.ga2(0, z, m, i), ns.ga2(1, z, m, i)]
}

/// Outcome clever covariate at row `i`'s observed `(Z, M, W)`, including
/// the `delta / pi` sampling weight.
pub fn clever_covariate_y(ns: &NuisanceSet, d: &Dataset, i: usize) -> f64 {
    if d.delta_at(i) == 0 {
        return 0.0;
    }
    ns.clever_y(d.z()[i], d.m()[i], i) / ns.pi(i)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FirstStage {
    pub estimate: f64,
    pub se: f64,
}

/// Average effect of the instrument on the mediator distribution,
/// `E[g(M=1 | a=1, W) - g(M=1 | a=0, W)]`, marginal over `Z`.
pub fn mediator_first_stage(d: &Dataset, ns: &NuisanceSet) -> FirstStage {
    let diff: Vec<f64> = (0..d.n())
        .map(|i| ns.mediator_under(1, i) - ns.mediator_under(0, i))
        .collect();
    let (mean, var) = crate::inference::weighted_moments(&diff, d);
    FirstStage {
        estimate: mean,
        se: (var / d.total_weight()).sqrt(),
    }
}
