use super::{finish, Diagnostics, Estimate, EstimatorKind, EstimatorOptions};
use crate::error::Result;
use crate::nuisance::NuisanceSet;
use crate::tabular::Dataset;

/// Inverse-probability-weighted ratio estimator. Its influence curve treats
/// the nuisance models as known.
pub fn estimate_iptw(d: &Dataset, ns: &NuisanceSet, opts: &EstimatorOptions) -> Result<Estimate> {
    let n = d.n();
    let mut sde = vec![0.0; n];
    let mut fs = vec![0.0; n];
    for i in 0..n {
        if d.delta_at(i) == 0 {
            continue;
        }
        let (a, z, m) = (d.a()[i], d.z()[i], d.m()[i]);
        let sign = if a == 1 { 1.0 } else { -1.0 };
        let h = sign / (ns.ga(a, i) * ns.pi(i));
        sde[i] = h * ns.gstar(m, i) / ns.gm(m, z, a, i) * d.y()[i];
        fs[i] = h * f64::from(z);
    }
    let psi_sde = d.mean(&sde);
    let psi_fs = d.mean(&fs);
    let ic_sde = sde.iter().map(|v| v - psi_sde).collect();
    let ic_fs = fs.iter().map(|v| v - psi_fs).collect();
    finish(
        EstimatorKind::Iptw,
        d,
        ns,
        psi_sde,
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
