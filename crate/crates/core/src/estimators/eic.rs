//! Efficient influence curve pieces shared by the estimating-equation and
//! TMLE estimators.

use crate::nuisance::NuisanceSet;
use crate::tabular::Dataset;

/// Outcome and exposure components the influence curve is evaluated at.
/// Outcome quantities are on the unit scale.
pub struct EicInputs<'a> {
    /// Outcome regression at each row's observed `(M, Z)`.
    pub qy_obs: &'a [f64],
    /// `qm[z][i] = sum_m Q_Y(m, z, W_i) g*(m | W_i)`
    pub qm: [&'a [f64]; 2],
    /// Exposure model `P(Z = 1 | a, W)` used by the numerator.
    pub gz_num: [&'a [f64]; 2],
    /// Exposure model used by the first stage.
    pub gz_den: [&'a [f64]; 2],
}

/// Uncentered influence-curve terms, split into the sampled-row residual
/// part (already carrying `delta / pi`) and the plug-in part.
pub struct EicComponents {
    pub resid_sde: Vec<f64>,
    pub plug_sde: Vec<f64>,
    pub resid_fs: Vec<f64>,
    pub plug_fs: Vec<f64>,
}

pub fn eic_components(d: &Dataset, ns: &NuisanceSet, x: &EicInputs<'_>) -> EicComponents {
    let n = d.n();
    let scale = ns.scale();
    let mut out = EicComponents {
        resid_sde: vec![0.0; n],
        plug_sde: vec![0.0; n],
        resid_fs: vec![0.0; n],
        plug_fs: vec![0.0; n],
    };
    for i in 0..n {
        let (q0, q1) = (x.qm[0][i], x.qm[1][i]);
        let gz = |g: &[&[f64]; 2], a: usize| g[a][i];
        let qz = |a: usize| q0 * (1.0 - gz(&x.gz_num, a)) + q1 * gz(&x.gz_num, a);
        out.plug_sde[i] = qz(1) - qz(0);
        out.plug_fs[i] = gz(&x.gz_den, 1) - gz(&x.gz_den, 0);
        if d.delta_at(i) == 0 {
            continue;
        }
        let (a, z, m) = (d.a()[i], d.z()[i], d.m()[i]);
        let w = 1.0 / ns.pi(i);
        let sign = if a == 1 { 1.0 } else { -1.0 };
        let h_a = sign / ns.ga(a, i);
        let zf = f64::from(z);
        let y = scale.forward(d.y()[i]);
        let cy = ns.clever_y(z, m, i);
        out.resid_sde[i] =
            w * (cy * (y - x.qy_obs[i]) + h_a * (q1 - q0) * (zf - gz(&x.gz_num, a as usize)));
        out.resid_fs[i] = w * h_a * (zf - gz(&x.gz_den, a as usize));
    }
    out
}
