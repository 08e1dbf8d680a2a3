use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::glm::expit;
use crate::tabular::Dataset;

/// Variables a generator may depend on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Node {
    W1,
    W2,
    A,
    Z,
    M,
}

impl Node {
    fn index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Link {
    /// `P(X = 1) = eta`
    Probability,
    /// `P(X = 1) = expit(eta)`
    Logit,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearTerm {
    pub vars: Vec<Node>,
    pub coef: f64,
}

/// Bernoulli generator with a linear predictor over its parents.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generator {
    pub link: Link,
    pub intercept: f64,
    #[serde(default)]
    pub terms: Vec<LinearTerm>,
}

impl Generator {
    pub fn constant(p: f64) -> Self {
        Self {
            link: Link::Probability,
            intercept: p,
            terms: Vec::new(),
        }
    }

    pub fn logit(intercept: f64, terms: &[(&[Node], f64)]) -> Self {
        Self::build(Link::Logit, intercept, terms)
    }

    pub fn probability(intercept: f64, terms: &[(&[Node], f64)]) -> Self {
        Self::build(Link::Probability, intercept, terms)
    }

    fn build(link: Link, intercept: f64, terms: &[(&[Node], f64)]) -> Self {
        Self {
            link,
            intercept,
            terms: terms
                .iter()
                .map(|(v, c)| LinearTerm {
                    vars: v.to_vec(),
                    coef: *c,
                })
                .collect(),
        }
    }

    /// `P(X = 1)` given parent values indexed by [`Node`].
    pub fn prob(&self, v: &[u8; 5]) -> f64 {
        let eta = self.intercept
            + self
                .terms
                .iter()
                .map(|t| {
                    if t.vars.iter().all(|n| v[n.index()] == 1) {
                        t.coef
                    } else {
                        0.0
                    }
                })
                .sum::<f64>();
        match self.link {
            Link::Probability => eta,
            Link::Logit => expit(eta),
        }
    }

    fn uses(&self, node: Node) -> bool {
        self.terms.iter().any(|t| t.vars.contains(&node))
    }
}

/// Binary data-generating mechanism `W1 -> W2 -> delta -> A -> Z -> M -> Y`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DgmSpec {
    pub name: String,
    pub w1: Generator,
    pub w2: Generator,
    /// Sampling indicator; absent means every unit is sampled.
    #[serde(default)]
    pub delta: Option<Generator>,
    pub a: Generator,
    pub z: Generator,
    pub m: Generator,
    pub y: Generator,
}

pub const DGM_PRESETS: [&str; 4] = [
    "moderate-strong",
    "weak-instrument",
    "z-misspec-dgm",
    "mediator-instrument",
];

impl DgmSpec {
    pub fn preset(name: &str) -> Result<Self> {
        use Node::*;
        let ln = f64::ln;
        let mut d = DgmSpec {
            name: name.to_string(),
            w1: Generator::constant(0.5),
            w2: Generator::probability(0.4, &[(&[W1], 0.2)]),
            delta: Some(Generator::logit(
                -1.0,
                &[(&[W1], ln(4.0)), (&[W2], ln(4.0))],
            )),
            a: Generator::constant(0.5),
            z: Generator::logit(0.0, &[(&[A], ln(4.0)), (&[W2], -ln(2.0))]),
            m: Generator::logit(-ln(3.0), &[(&[Z], ln(10.0)), (&[W2], -ln(1.4))]),
            y: Generator::logit(
                ln(1.2),
                &[
                    (&[Z], ln(3.0)),
                    (&[M], ln(3.0)),
                    (&[W2], -ln(1.2)),
                    (&[Z, W2], ln(1.2)),
                ],
            ),
        };
        match name {
            "moderate-strong" => {}
            "weak-instrument" => {
                d.z = Generator::probability(0.005, &[(&[A], 0.1), (&[W2], 0.5)]);
            }
            "z-misspec-dgm" => {
                d.z = Generator::logit(0.0, &[(&[A], ln(4.0)), (&[W2], -ln(40.0))]);
            }
            "mediator-instrument" => {
                d.m = Generator::logit(
                    -ln(3.0),
                    &[(&[Z], ln(10.0)), (&[A], ln(2.0)), (&[W2], -ln(1.4))],
                );
            }
            other => return Err(Error::UnknownPreset(other.to_string())),
        }
        Ok(d)
    }

    fn generators(&self) -> Vec<(&'static str, &Generator, &'static [Node])> {
        use Node::*;
        let mut g: Vec<(&'static str, &Generator, &'static [Node])> = vec![
            ("W1", &self.w1, &[]),
            ("W2", &self.w2, &[W1]),
            ("A", &self.a, &[W1, W2]),
            ("Z", &self.z, &[W1, W2, A]),
            ("M", &self.m, &[W1, W2, A, Z]),
            ("Y", &self.y, &[W1, W2, Z, M]),
        ];
        if let Some(d) = &self.delta {
            g.push(("delta", d, &[W1, W2]));
        }
        g
    }

    /// Checks parent ordering and that probability-scale predictors stay in
    /// `[0, 1]` for every parent configuration.
    pub fn validate(&self) -> Result<()> {
        use Node::*;
        for (name, g, parents) in self.generators() {
            for node in [W1, W2, A, Z, M] {
                if g.uses(node) && !parents.contains(&node) {
                    return Err(Error::InvalidArgument(format!(
                        "generator for {name} may not depend on {node:?}"
                    )));
                }
            }
            for bits in 0..32u8 {
                let v = [0, 1, 2, 3, 4].map(|k| (bits >> k) & 1);
                let p = g.prob(&v);
                if !(0.0..=1.0).contains(&p) {
                    return Err(Error::Domain(format!(
                        "generator for {name} gives probability {p} at {v:?}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Whether the mediator depends on the instrument given the exposure.
    pub fn mediator_uses_instrument(&self) -> bool {
        self.m.uses(Node::A)
    }
}

/// Ancestral sampling of `n` units. Unsampled units have `A, Z, M, Y`
/// set to zero.
pub fn draw_dataset(dgm: &DgmSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    draw_until(dgm, seed, |total, _| total == n)
}

/// Draws rows until `n` of them are sampled (`delta = 1`); the total row
/// count is random. Same as [`draw_dataset`] when the mechanism has no
/// sampling indicator.
pub fn draw_sampled(dgm: &DgmSpec, n: usize, seed: u64) -> Result<Dataset> {
    if n == 0 {
        return Err(Error::InvalidArgument("n must be at least 1".into()));
    }
    let limit = n.saturating_mul(10_000).max(1_000_000);
    let d = draw_until(dgm, seed, |total, sampled| sampled == n || total == limit)?;
    if d.sampled_rows().len() < n {
        return Err(Error::Domain(format!(
            "fewer than {n} sampled rows after {limit} draws"
        )));
    }
    Ok(d)
}

fn draw_until(
    dgm: &DgmSpec,
    seed: u64,
    mut done: impl FnMut(usize, usize) -> bool,
) -> Result<Dataset> {
    dgm.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut bern = |p: f64| u8::from(rng.random::<f64>() < p);
    let (mut w1, mut w2) = (Vec::new(), Vec::new());
    let (mut a, mut z, mut m, mut y, mut delta) =
        (Vec::new(), Vec::new(), Vec::new(), Vec::new(), Vec::new());
    let mut sampled = 0;
    while !done(delta.len(), sampled) {
        let mut v = [0u8; 5];
        v[0] = bern(dgm.w1.prob(&v));
        v[1] = bern(dgm.w2.prob(&v));
        let dl = dgm.delta.as_ref().map_or(1, |g| bern(g.prob(&v)));
        v[2] = bern(dgm.a.prob(&v));
        v[3] = bern(dgm.z.prob(&v));
        v[4] = bern(dgm.m.prob(&v));
        let yv = bern(dgm.y.prob(&v));
        sampled += usize::from(dl);
        w1.push(f64::from(v[0]));
        w2.push(f64::from(v[1]));
        delta.push(dl);
        a.push(dl * v[2]);
        z.push(dl * v[3]);
        m.push(dl * v[4]);
        y.push(f64::from(dl * yv));
    }
    Dataset::new(
        vec!["W1".into(), "W2".into()],
        vec![w1, w2],
        a,
        z,
        m,
        y,
        dgm.delta.as_ref().map(|_| delta),
    )
}

/// One weighted row per support point of the observed-data law, with
/// weights `total * probability`.
pub fn exhaustive_dataset(dgm: &DgmSpec, total: f64) -> Result<Dataset> {
    dgm.validate()?;
    let mut cols: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
    let (mut a, mut z, mut m, mut y, mut delta, mut wt) =
        (vec![], vec![], vec![], vec![], vec![], vec![]);
    let bern = |p: f64, x: u8| if x == 1 { p } else { 1.0 - p };
    for cell in 0..4u8 {
        let mut v = [cell & 1, (cell >> 1) & 1, 0, 0, 0];
        let pw = bern(dgm.w1.prob(&v), v[0]) * bern(dgm.w2.prob(&v), v[1]);
        let pi = dgm.delta.as_ref().map_or(1.0, |g| g.prob(&v));
        let mut push = |v: &[u8; 5], dl: u8, yv: u8, p: f64| {
            if p > 0.0 {
                cols[0].push(f64::from(v[0]));
                cols[1].push(f64::from(v[1]));
                a.push(v[2]);
                z.push(v[3]);
                m.push(v[4]);
                y.push(f64::from(yv));
                delta.push(dl);
                wt.push(total * p);
            }
        };
        if dgm.delta.is_some() {
            push(&v, 0, 0, pw * (1.0 - pi));
        }
        for rest in 0..16u8 {
            v[2] = rest & 1;
            v[3] = (rest >> 1) & 1;
            v[4] = (rest >> 2) & 1;
            let yv = (rest >> 3) & 1;
            let p = pw
                * pi
                * bern(dgm.a.prob(&v), v[2])
                * bern(dgm.z.prob(&v), v[3])
                * bern(dgm.m.prob(&v), v[4])
                * bern(dgm.y.prob(&v), yv);
            push(&v, 1, yv, p);
        }
    }
    let [w1, w2] = cols;
    Dataset::new(
        vec!["W1".into(), "W2".into()],
        vec![w1, w2],
        a,
        z,
        m,
        y,
        dgm.delta.as_ref().map(|_| delta),
    )?
    .with_weights(wt)
}

/// Exact marginal probabilities over the whole population. `a, z, m, y`
/// are the generated values before masking by the sampling indicator.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Marginals {
    pub w1: f64,
    pub w2: f64,
    pub delta: f64,
    pub a: f64,
    pub z: f64,
    pub m: f64,
    pub y: f64,
    /// `P(Z = 1 | delta = 1)`
    pub z_sampled: f64,
}

pub fn dgm_marginals(dgm: &DgmSpec) -> Result<Marginals> {
    dgm.validate()?;
    let bern = |p: f64, x: u8| if x == 1 { p } else { 1.0 - p };
    let mut mg = Marginals {
        w1: 0.0,
        w2: 0.0,
        delta: 0.0,
        a: 0.0,
        z: 0.0,
        m: 0.0,
        y: 0.0,
        z_sampled: 0.0,
    };
    for bits in 0..32u8 {
        let v = [0, 1, 2, 3, 4].map(|k| (bits >> k) & 1);
        let p = bern(dgm.w1.prob(&v), v[0])
            * bern(dgm.w2.prob(&v), v[1])
            * bern(dgm.a.prob(&v), v[2])
            * bern(dgm.z.prob(&v), v[3])
            * bern(dgm.m.prob(&v), v[4]);
        let pi = dgm.delta.as_ref().map_or(1.0, |g| g.prob(&v));
        mg.w1 += p * f64::from(v[0]);
        mg.w2 += p * f64::from(v[1]);
        mg.a += p * f64::from(v[2]);
        mg.z += p * f64::from(v[3]);
        mg.m += p * f64::from(v[4]);
        mg.y += p * dgm.y.prob(&v);
        mg.delta += p * pi;
        mg.z_sampled += p * pi * f64::from(v[3]);
    }
    mg.z_sampled /= mg.delta;
    Ok(mg)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        for name in DGM_PRESETS {
            DgmSpec::preset(name).unwrap().validate().unwrap();
        }
        assert!(matches!(
            DgmSpec::preset("nope"),
            Err(Error::UnknownPreset(_))
        ));
    }

    #[test]
    fn out_of_range_probability_is_rejected() {
        let mut d = DgmSpec::preset("weak-instrument").unwrap();
        d.z = Generator::probability(0.6, &[(&[Node::A], 0.5)]);
        assert!(matches!(d.validate(), Err(Error::Domain(_))));
        assert!(draw_dataset(&d, 10, 1).is_err());
    }

    #[test]
    fn wrong_parent_is_rejected() {
        let mut d = DgmSpec::preset("moderate-strong").unwrap();
        d.y.terms.push(LinearTerm {
            vars: vec![Node::A],
            coef: 1.0,
        });
        assert!(d.validate().is_err());
    }

    #[test]
    fn exhaustive_weights_sum_to_total() {
        let d = exhaustive_dataset(&DgmSpec::preset("moderate-strong").unwrap(), 1.0).unwrap();
        assert_eq!(d.n(), 68);
        assert!((d.total_weight() - 1.0).abs() < 1e-14);
    }

    #[test]
    fn draw_is_deterministic_and_masks_unsampled() {
        let g = DgmSpec::preset("moderate-strong").unwrap();
        let a = draw_dataset(&g, 500, 3).unwrap();
        assert_eq!(a, draw_dataset(&g, 500, 3).unwrap());
        assert_ne!(a, draw_dataset(&g, 500, 4).unwrap());
        for i in 0..a.n() {
            if a.delta_at(i) == 0 {
                assert_eq!((a.a()[i], a.z()[i], a.m()[i], a.y()[i]), (0, 0, 0, 0.0));
            }
        }
    }
}
