use super::eic::{eic_components, EicInputs};
use super::{finish, Diagnostics, Estimate, EstimatorKind, EstimatorOptions};
use crate::error::Result;
use crate::nuisance::NuisanceSet;
use crate::tabular::Dataset;

/// One-step estimator: the empirical mean of the uncentered efficient
/// influence curve at the initial fits.
pub fn estimate_ee(d: &Dataset, ns: &NuisanceSet, opts: &EstimatorOptions) -> Result<Estimate> {
    let n = d.n();
    let qy_obs: Vec<f64> = (0..n).map(|i| ns.qy(d.m()[i], d.z()[i], i)).collect();
    let qm: [Vec<f64>; 2] = [0u8, 1].map(|z| {
        (0..n)
            .map(|i| ns.integrate_m(i, |m| ns.qy(m, z, i)))
            .collect()
    });
    let gz: [Vec<f64>; 2] = [0u8, 1].map(|a| (0..n).map(|i| ns.gz(1, a, i)).collect());
    let c = eic_components(
        d,
        ns,
        &EicInputs {
            qy_obs: &qy_obs,
            qm: [&qm[0], &qm[1]],
            gz_num: [&gz[0], &gz[1]],
            gz_den: [&gz[0], &gz[1]],
        },
    );
    let width = ns.scale().width();
    let sde: Vec<f64> = (0..n).map(|i| c.resid_sde[i] + c.plug_sde[i]).collect();
    let fs: Vec<f64> = (0..n).map(|i| c.resid_fs[i] + c.plug_fs[i]).collect();
    let psi_sde_unit = d.mean(&sde);
    let psi_fs = d.mean(&fs);
    let ic_sde = sde.iter().map(|v| (v - psi_sde_unit) * width).collect();
    let ic_fs = fs.iter().map(|v| v - psi_fs).collect();
    finish(
        EstimatorKind::Ee,
        d,
        ns,
        psi_sde_unit * width,
        psi_fs,
        ic_sde,
        ic_fs,
        opts,
        Diagnostics {
            fluctuation_converged: true,
            ..Diagnostics::default()
        },
        None,
    )
}
