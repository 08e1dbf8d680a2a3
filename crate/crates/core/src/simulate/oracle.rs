use serde::Serialize;

use super::dgm::DgmSpec;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OracleTruth {
    pub dgm: String,
    pub psi_sde: f64,
    pub psi_fs: f64,
    pub psi_csde: f64,
    /// Standard deviation of the efficient influence curve per sampled
    /// unit, `sd(D) * sqrt(P(delta = 1))`; comparable to `SE * sqrt(n)`
    /// with `n` the number of sampled units.
    pub efficiency_bound: f64,
    /// Standard deviation of the efficient influence curve per unit of the
    /// full population.
    pub eic_sd: f64,
    pub p_sampled: f64,
    /// `E[g(M=1 | a=1, W) - g(M=1 | a=0, W)]` at the truth.
    pub mediator_first_stage: f64,
}

fn bern(p: f64, x: u8) -> f64 {
    if x == 1 {
        p
    } else {
        1.0 - p
    }
}

/// Exact target parameters and efficient influence curve variance by
/// enumeration of every cell of the mechanism.
pub fn oracle_truth(dgm: &DgmSpec) -> Result<OracleTruth> {
    dgm.validate()?;
    struct Cell {
        pw: f64,
        pi: f64,
        ga1: f64,
        gz1: [f64; 2],
        gm1: [[f64; 2]; 2],
        qy: [[f64; 2]; 2],
        gstar1: f64,
        qm: [f64; 2],
    }
    let mut cells = Vec::with_capacity(4);
    for w in 0..4u8 {
        let base = [w & 1, (w >> 1) & 1, 0, 0, 0];
        let pw = bern(dgm.w1.prob(&base), base[0]) * bern(dgm.w2.prob(&base), base[1]);
        let at = |a: u8, z: u8, m: u8| [base[0], base[1], a, z, m];
        let pi = dgm.delta.as_ref().map_or(1.0, |g| g.prob(&base));
        let ga1 = dgm.a.prob(&base);
        let gz1 = [dgm.z.prob(&at(0, 0, 0)), dgm.z.prob(&at(1, 0, 0))];
        // gm1[z][a]
        let gm1 = [0u8, 1].map(|z| [0u8, 1].map(|a| dgm.m.prob(&at(a, z, 0))));
        // qy[m][z]
        let qy = [0u8, 1].map(|m| [0u8, 1].map(|z| dgm.y.prob(&at(0, z, m))));
        let gstar1 = gm1[0][0] * (1.0 - gz1[0]) + gm1[1][0] * gz1[0];
        let qm = [0usize, 1].map(|z| qy[0][z] * (1.0 - gstar1) + qy[1][z] * gstar1);
        cells.push(Cell {
            pw,
            pi,
            ga1,
            gz1,
            gm1,
            qy,
            gstar1,
            qm,
        });
    }
    let qz = |c: &Cell, a: usize| c.qm[0] * (1.0 - c.gz1[a]) + c.qm[1] * c.gz1[a];
    let psi_sde: f64 = cells.iter().map(|c| c.pw * (qz(c, 1) - qz(c, 0))).sum();
    let psi_fs: f64 = cells.iter().map(|c| c.pw * (c.gz1[1] - c.gz1[0])).sum();
    if psi_fs == 0.0 {
        return Err(Error::ZeroFirstStage);
    }
    let p_sampled: f64 = cells.iter().map(|c| c.pw * c.pi).sum();
    let mediator_first_stage: f64 = cells
        .iter()
        .map(|c| {
            let under = |a: usize| c.gm1[0][a] * (1.0 - c.gz1[a]) + c.gm1[1][a] * c.gz1[a];
            c.pw * (under(1) - under(0))
        })
        .sum();

    let mut var = 0.0;
    for c in &cells {
        let plug_sde = qz(c, 1) - qz(c, 0) - psi_sde;
        let plug_fs = c.gz1[1] - c.gz1[0] - psi_fs;
        let ratio = |dn: f64, dd: f64| dn / psi_fs - psi_sde * dd / (psi_fs * psi_fs);
        if c.pi < 1.0 {
            var += c.pw * (1.0 - c.pi) * ratio(plug_sde, plug_fs).powi(2);
        }
        for bits in 0..16u8 {
            let (a, z, m, y) = (bits & 1, (bits >> 1) & 1, (bits >> 2) & 1, (bits >> 3) & 1);
            let (au, zu, mu) = (a as usize, z as usize, m as usize);
            let p_obs = bern(c.ga1, a)
                * bern(c.gz1[au], z)
                * bern(c.gm1[zu][au], m)
                * bern(c.qy[mu][zu], y);
            let p = c.pw * c.pi * p_obs;
            if p == 0.0 {
                continue;
            }
            // density of (M, Z) given W, marginal over A
            let p_mz: f64 = [0usize, 1]
                .iter()
                .map(|&a2| bern(c.ga1, a2 as u8) * bern(c.gz1[a2], z) * bern(c.gm1[zu][a2], m))
                .sum();
            let c_y = (bern(c.gz1[1], z) - bern(c.gz1[0], z)) * bern(c.gstar1, m) / p_mz;
            let sign = if a == 1 { 1.0 } else { -1.0 };
            let h = sign / bern(c.ga1, a);
            let resid_z = f64::from(z) - c.gz1[au];
            let d_sde = (c_y * (f64::from(y) - c.qy[mu][zu]) + h * (c.qm[1] - c.qm[0]) * resid_z)
                / c.pi
                + plug_sde;
            let d_fs = h * resid_z / c.pi + plug_fs;
            var += p * ratio(d_sde, d_fs).powi(2);
        }
    }
    let eic_sd = var.sqrt();
    Ok(OracleTruth {
        dgm: dgm.name.clone(),
        psi_sde,
        psi_fs,
        psi_csde: psi_sde / psi_fs,
        efficiency_bound: eic_sd * p_sampled.sqrt(),
        eic_sd,
        p_sampled,
        mediator_first_stage,
    })
}
