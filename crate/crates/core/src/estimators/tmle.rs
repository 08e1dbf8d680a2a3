use serde::{Deserialize, Serialize};

use super::eic::{eic_components, EicInputs};
use super::{
    finish, Diagnostics, Epsilons, Estimate, EstimatorKind, EstimatorOptions, FluctuationForm,
};
use crate::error::{Error, Result};
use crate::glm::{expit, fit_logistic, logit, DesignMatrix, FitOptions, LogisticFit};
use crate::nuisance::NuisanceSet;
use crate::tabular::Dataset;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TmleVariant {
    /// Separate exposure targeting for numerator and first stage.
    Efficient,
    /// One exposure fluctuation shared by numerator and first stage.
    Compatible,
}

#[inline]
fn safe_logit(p: f64) -> f64 {
    logit(p.clamp(f64::EPSILON, 1.0 - f64::EPSILON))
}

/// Outcome fluctuation regressor at `(m, z, W_i)` for the chosen form.
#[inline]
fn y_regressor(ns: &NuisanceSet, form: FluctuationForm, z: u8, m: u8, i: usize) -> f64 {
    match form {
        FluctuationForm::Covariate => ns.clever_y(z, m, i) / ns.pi(i),
        FluctuationForm::Weighted => ns.clever_y_split(z, m, i).1,
    }
}

/// Targeted outcome regression `Q*_Y(m, z, W_i)` on the unit scale, as
/// `[m][z][i]`. Depends only on `(m, z, W)` and the fitted nuisances.
pub fn targeted_outcome(ns: &NuisanceSet, eps_y: f64, form: FluctuationForm) -> [[Vec<f64>; 2]; 2] {
    let n = ns.n();
    [0u8, 1].map(|m| {
        [0u8, 1].map(|z| {
            (0..n)
                .map(|i| expit(ns.qy_eta(m, z, i) + eps_y * y_regressor(ns, form, z, m, i)))
                .collect()
        })
    })
}

fn fluctuate(
    name: &'static str,
    columns: &[(&str, &[f64])],
    y: &[f64],
    w: &[f64],
    offset: &[f64],
    opts: &FitOptions,
) -> Result<LogisticFit> {
    let x = DesignMatrix::from_columns(columns)?;
    fit_logistic(&x, y, w, offset, None, opts).map_err(|e| Error::nuisance(name, e))
}

/// Targeted maximum likelihood estimator.
pub fn estimate_tmle(
    d: &Dataset,
    ns: &NuisanceSet,
    variant: TmleVariant,
    opts: &EstimatorOptions,
) -> Result<Estimate> {
    let n = d.n();
    let scale = ns.scale();
    let form = opts.fluctuation;
    let fopts = &opts.fluctuation_fit;
    let rows = d.sampled_rows();
    let mut diag = Diagnostics {
        fluctuation_converged: true,
        ..Diagnostics::default()
    };
    let note = |fit: &LogisticFit, what: &str, diag: &mut Diagnostics| {
        if !fit.converged {
            diag.fluctuation_converged = false;
        }
        diag.warnings.extend(
            fit.warnings()
                .into_iter()
                .map(|w| format!("{what} fluctuation: {w}")),
        );
    };

    // Outcome fluctuation.
    let mut h = Vec::with_capacity(rows.len());
    let mut w = Vec::with_capacity(rows.len());
    let mut y = Vec::with_capacity(rows.len());
    let mut off = Vec::with_capacity(rows.len());
    for &i in &rows {
        let (z, m) = (d.z()[i], d.m()[i]);
        h.push(y_regressor(ns, form, z, m, i));
        w.push(match form {
            FluctuationForm::Covariate => d.weight_at(i),
            FluctuationForm::Weighted => d.weight_at(i) * ns.clever_y_split(z, m, i).0 / ns.pi(i),
        });
        y.push(scale.forward(d.y()[i]).clamp(0.0, 1.0));
        off.push(ns.qy_eta(m, z, i));
    }
    let fit_y = fluctuate("outcome fluctuation", &[("C_Y", &h)], &y, &w, &off, fopts)?;
    note(&fit_y, "outcome", &mut diag);
    let eps_y = fit_y.coefficients[0];
    let qy_star = targeted_outcome(ns, eps_y, form);
    let qm: [Vec<f64>; 2] = [0usize, 1].map(|z| {
        (0..n)
            .map(|i| ns.integrate_m(i, |m| qy_star[m as usize][z][i]))
            .collect()
    });
    let dq: Vec<f64> = (0..n).map(|i| qm[1][i] - qm[0][i]).collect();

    // Exposure fluctuation(s).
    let mut i1 = Vec::with_capacity(rows.len());
    let mut i0 = Vec::with_capacity(rows.len());
    let mut i1q = Vec::with_capacity(rows.len());
    let mut i0q = Vec::with_capacity(rows.len());
    let mut zr = Vec::with_capacity(rows.len());
    let mut wz = Vec::with_capacity(rows.len());
    let mut offz = Vec::with_capacity(rows.len());
    for &i in &rows {
        let a = d.a()[i];
        let (one, zero) = if a == 1 { (1.0, 0.0) } else { (0.0, 1.0) };
        i1.push(one);
        i0.push(zero);
        i1q.push(one * dq[i]);
        i0q.push(zero * dq[i]);
        zr.push(f64::from(d.z()[i]));
        wz.push(d.weight_at(i) / (ns.ga(a, i) * ns.pi(i)));
        offz.push(safe_logit(ns.gz(1, a, i)));
    }
    // Updated P(Z = 1 | a, W) from coefficients on (I1, I0, I1 dQ, I0 dQ).
    let update = |eps: [f64; 4]| -> [Vec<f64>; 2] {
        [0usize, 1].map(|a| {
            (0..n)
                .map(|i| {
                    let shift = if a == 1 {
                        eps[0] + eps[2] * dq[i]
                    } else {
                        eps[1] + eps[3] * dq[i]
                    };
                    expit(safe_logit(ns.gz(1, a as u8, i)) + shift)
                })
                .collect()
        })
    };
    let (g_num, g_den, epsilons) = match variant {
        TmleVariant::Compatible => {
            let f = fluctuate(
                "exposure fluctuation",
                &[
                    ("I(A=1)", &i1),
                    ("I(A=0)", &i0),
                    ("I(A=1):dQ", &i1q),
                    ("I(A=0):dQ", &i0q),
                ],
                &zr,
                &wz,
                &offz,
                fopts,
            )?;
            note(&f, "exposure", &mut diag);
            let e = [
                f.coefficients[0],
                f.coefficients[1],
                f.coefficients[2],
                f.coefficients[3],
            ];
            let g = update(e);
            (
                g.clone(),
                g,
                Epsilons {
                    y: eps_y,
                    z: e.to_vec(),
                    z_den: Vec::new(),
                },
            )
        }
        TmleVariant::Efficient => {
            let fnum = fluctuate(
                "numerator exposure fluctuation",
                &[("I(A=1):dQ", &i1q), ("I(A=0):dQ", &i0q)],
                &zr,
                &wz,
                &offz,
                fopts,
            )?;
            note(&fnum, "numerator exposure", &mut diag);
            let fden = fluctuate(
                "first-stage exposure fluctuation",
                &[("I(A=1)", &i1), ("I(A=0)", &i0)],
                &zr,
                &wz,
                &offz,
                fopts,
            )?;
            note(&fden, "first-stage exposure", &mut diag);
            let en = [0.0, 0.0, fnum.coefficients[0], fnum.coefficients[1]];
            let ed = [fden.coefficients[0], fden.coefficients[1], 0.0, 0.0];
            (
                update(en),
                update(ed),
                Epsilons {
                    y: eps_y,
                    z: fnum.coefficients.clone(),
                    z_den: fden.coefficients.clone(),
                },
            )
        }
    };
    diag.monotonicity_violations = (0..n)
        .filter(|&i| g_num[1][i] < g_num[0][i] || g_den[1][i] < g_den[0][i])
        .count();

    let qy_obs: Vec<f64> = (0..n)
        .map(|i| qy_star[d.m()[i] as usize][d.z()[i] as usize][i])
        .collect();
    let c = eic_components(
        d,
        ns,
        &EicInputs {
            qy_obs: &qy_obs,
            qm: [&qm[0], &qm[1]],
            gz_num: [&g_num[0], &g_num[1]],
            gz_den: [&g_den[0], &g_den[1]],
        },
    );
    let width = scale.width();
    let psi_sde_unit = d.mean(&c.plug_sde);
    let psi_fs = d.mean(&c.plug_fs);
    let ic_sde = (0..n)
        .map(|i| (c.resid_sde[i] + c.plug_sde[i] - psi_sde_unit) * width)
        .collect();
    let ic_fs = (0..n)
        .map(|i| c.resid_fs[i] + c.plug_fs[i] - psi_fs)
        .collect();
    let kind = match variant {
        TmleVariant::Efficient => EstimatorKind::TmleEfficient,
        TmleVariant::Compatible => EstimatorKind::TmleCompatible,
    };
    finish(
        kind,
        d,
        ns,
        psi_sde_unit * width,
        psi_fs,
        ic_sde,
        ic_fs,
        opts,
        diag,
        Some(epsilons),
    )
}
