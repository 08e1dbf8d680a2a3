//! Weighted logistic regression with offsets and box constraints.
//!
//! Responses may lie anywhere in `[0, 1]` (quasi-binomial loss), which is
//! what the targeting steps need for unit-scaled outcomes. Every coefficient
//! is confined to `[-cap, cap]`; callers may raise individual lower bounds
//! (the exposure model pins the instrument coefficient at `>= 0`).
//!
//! The solver is an active-set Newton/IRLS method. Free coordinates take
//! Newton steps truncated at the first bound they would cross; a coordinate
//! that reaches its bound is frozen there and the remaining coordinates are
//! refit. Once the free problem is stationary, frozen coordinates whose
//! score points back into the feasible box are released one at a time.
//! The likelihood is concave, so this terminates at the box-constrained MLE.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::design::DesignMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub max_iter: usize,
    /// Relative change in deviance that ends the Newton iterations.
    pub tol: f64,
    /// Symmetric bound on every coefficient.
    pub coef_cap: f64,
    /// Fix aliased coefficients at zero instead of failing.
    pub drop_aliased: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            max_iter: 100,
            tol: 1e-10,
            coef_cap: 20.0,
            drop_aliased: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LogisticFit {
    pub names: Vec<String>,
    pub coefficients: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    pub lower_bounds: Option<Vec<f64>>,
    /// Terms whose coefficient was fixed at zero because the column is a
    /// linear combination of earlier columns.
    pub aliased: Vec<String>,
    /// Terms held at the coefficient cap (quasi-separation).
    pub capped: Vec<String>,
    /// Minus twice the weighted log-likelihood at the solution.
    pub neg2_loglik: f64,
}

impl LogisticFit {
    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if !self.converged {
            w.push(format!(
                "did not converge in {} iterations",
                self.iterations
            ));
        }
        for name in &self.capped {
            w.push(format!(
                "quasi-separation: `{name}` held at the coefficient cap"
            ));
        }
        for name in &self.aliased {
            w.push(format!("aliased term `{name}` fixed at 0"));
        }
        w
    }

    /// Linear predictor for one design row.
    #[inline]
    pub fn eta(&self, row: &[f64]) -> f64 {
        row.iter().zip(&self.coefficients).map(|(x, b)| x * b).sum()
    }
}

#[inline]
pub fn expit(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[inline]
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Side {
    Lower,
    Upper,
}

struct Problem<'a> {
    x: &'a DesignMatrix,
    y: &'a [f64],
    w: &'a [f64],
    offset: &'a [f64],
    rows: Vec<usize>,
}

impl Problem<'_> {
    fn eta(&self, i: usize, beta: &[f64]) -> f64 {
        self.offset[i]
            + self
                .x
                .row(i)
                .iter()
                .zip(beta)
                .map(|(x, b)| x * b)
                .sum::<f64>()
    }

    fn neg2_loglik(&self, beta: &[f64]) -> f64 {
        2.0 * self
            .rows
            .iter()
            .map(|&i| {
                let e = self.eta(i, beta);
                self.w[i] * (self.y[i] * softplus(-e) + (1.0 - self.y[i]) * softplus(e))
            })
            .sum::<f64>()
    }

    /// Score over all coordinates, and the information matrix restricted to
    /// `free`.
    fn score_info(&self, beta: &[f64], free: &[usize]) -> (Vec<f64>, DMatrix<f64>) {
        let p = self.x.ncols();
        let k = free.len();
        let mut score = vec![0.0; p];
        let mut info = DMatrix::<f64>::zeros(k, k);
        for &i in &self.rows {
            let row = self.x.row(i);
            let mu = expit(self.eta(i, beta));
            let r = self.w[i] * (self.y[i] - mu);
            for (s, x) in score.iter_mut().zip(row) {
                *s += r * x;
            }
            let v = self.w[i] * mu * (1.0 - mu);
            if v == 0.0 {
                continue;
            }
            for a in 0..k {
                let xa = row[free[a]] * v;
                if xa == 0.0 {
                    continue;
                }
                for b in 0..=a {
                    info[(a, b)] += xa * row[free[b]];
                }
            }
        }
        for a in 0..k {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        (score, info)
    }
}

fn solve_spd(info: DMatrix<f64>, rhs: DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = info.clone().cholesky() {
        return Some(ch.solve(&rhs));
    }
    let scale = info
        .diagonal()
        .iter()
        .fold(0.0f64, |m, v| m.max(v.abs()))
        .max(1e-300);
    let mut ridge = 1e-12 * scale;
    for _ in 0..8 {
        let mut m = info.clone();
        for d in 0..m.nrows() {
            m[(d, d)] += ridge;
        }
        if let Some(ch) = m.cholesky() {
            return Some(ch.solve(&rhs));
        }
        ridge *= 100.0;
    }
    info.lu().solve(&rhs)
}

/// In-order aliasing check on the weighted Gram matrix: a column is aliased
/// when its residual after projecting on the kept earlier columns carries
/// less than `1e-10` of its squared norm.
fn aliased_columns(x: &DesignMatrix, w: &[f64], rows: &[usize]) -> Vec<usize> {
    let p = x.ncols();
    let mut gram = DMatrix::<f64>::zeros(p, p);
    for &i in rows {
        let row = x.row(i);
        for a in 0..p {
            let xa = row[a] * w[i];
            for b in 0..=a {
                gram[(a, b)] += xa * row[b];
            }
        }
    }
    let mut kept: Vec<usize> = Vec::new();
    let mut chol: Vec<Vec<f64>> = Vec::new();
    let mut aliased = Vec::new();
    for j in 0..p {
        let gjj = gram[(j, j)];
        let mut l = Vec::with_capacity(kept.len());
        for (r, &k) in kept.iter().enumerate() {
            let g = if j > k { gram[(j, k)] } else { gram[(k, j)] };
            let s: f64 = (0..r).map(|c| chol[r][c] * l[c]).sum();
            l.push((g - s) / chol[r][r]);
        }
        let resid = gjj - l.iter().map(|v| v * v).sum::<f64>();
        if gjj <= 0.0 || resid <= 1e-10 * gjj {
            aliased.push(j);
        } else {
            l.push(resid.sqrt());
            chol.push(l);
            kept.push(j);
        }
    }
    aliased
}

/// Fits `logit E[y] = offset + X beta` by weighted maximum likelihood.
///
/// `lower_bounds`, when given, holds one lower bound per coefficient
/// (`f64::NEG_INFINITY` for none); the coefficient cap applies on top.
pub fn fit_logistic(
    x: &DesignMatrix,
    y: &[f64],
    weights: &[f64],
    offset: &[f64],
    lower_bounds: Option<&[f64]>,
    opts: &FitOptions,
) -> Result<LogisticFit> {
    let (n, p) = (x.nrows(), x.ncols());
    if y.len() != n || weights.len() != n || offset.len() != n {
        return Err(Error::Dimension(format!(
            "design has {n} rows; y {}, weights {}, offset {}",
            y.len(),
            weights.len(),
            offset.len()
        )));
    }
    if let Some(i) = y.iter().position(|v| !(0.0..=1.0).contains(v)) {
        return Err(Error::Domain(format!(
            "response {} at row {} is outside [0, 1]",
            y[i],
            i + 1
        )));
    }
    if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
        return Err(Error::Domain(
            "weights must be finite and nonnegative".into(),
        ));
    }
    if offset.iter().any(|o| !o.is_finite()) {
        return Err(Error::Domain("offset must be finite".into()));
    }
    let cap = opts.coef_cap;
    let mut lb = vec![-cap; p];
    let ub = vec![cap; p];
    if let Some(b) = lower_bounds {
        if b.len() != p {
            return Err(Error::Dimension(format!(
                "{} bounds for {p} coefficients",
                b.len()
            )));
        }
        for (j, &v) in b.iter().enumerate() {
            if v.is_nan() || v > cap {
                return Err(Error::Domain(format!(
                    "lower bound {v} on `{}` is not below the cap {cap}",
                    x.names()[j]
                )));
            }
            lb[j] = lb[j].max(v);
        }
    }
    let rows: Vec<usize> = (0..n).filter(|&i| weights[i] > 0.0).collect();
    if rows.is_empty() {
        return Err(Error::Domain("no row has a positive weight".into()));
    }
    let sum_w: f64 = rows.iter().map(|&i| weights[i]).sum();
    let aliased = aliased_columns(x, weights, &rows);
    if let (Some(&j), false) = (aliased.first(), opts.drop_aliased) {
        return Err(Error::Aliased(x.names()[j].clone()));
    }

    let prob = Problem {
        x,
        y,
        w: weights,
        offset,
        rows,
    };
    let mut beta: Vec<f64> = (0..p).map(|j| 0.0f64.clamp(lb[j], ub[j])).collect();
    for &j in &aliased {
        beta[j] = 0.0;
    }
    let mut active: Vec<Option<Side>> = vec![None; p];
    let score_tol = 1e-12 * sum_w.max(1.0);
    let kkt_tol = 1e-8 * sum_w.max(1.0);

    let mut iterations = 0;
    let mut converged = false;
    let mut releases = 0;
    let mut dev = prob.neg2_loglik(&beta);
    'outer: loop {
        let free: Vec<usize> = (0..p)
            .filter(|j| active[*j].is_none() && !aliased.contains(j))
            .collect();
        // Newton iterations on the free coordinates.
        let mut stationary = free.is_empty();
        while !stationary {
            if iterations >= opts.max_iter {
                break 'outer;
            }
            iterations += 1;
            let (score, info) = prob.score_info(&beta, &free);
            let rhs = DVector::from_iterator(free.len(), free.iter().map(|&j| score[j]));
            let Some(step) = solve_spd(info, rhs) else {
                break 'outer;
            };
            let mut alpha = 1.0;
            let mut hit: Option<(usize, Side)> = None;
            for (k, &j) in free.iter().enumerate() {
                let s = step[k];
                let target = beta[j] + s;
                if target < lb[j] {
                    let a = (lb[j] - beta[j]) / s;
                    if a < alpha {
                        alpha = a;
                        hit = Some((j, Side::Lower));
                    }
                } else if target > ub[j] {
                    let a = (ub[j] - beta[j]) / s;
                    if a < alpha {
                        alpha = a;
                        hit = Some((j, Side::Upper));
                    }
                }
            }
            let propose = |alpha: f64, hit: Option<(usize, Side)>| {
                let mut b = beta.clone();
                for (k, &j) in free.iter().enumerate() {
                    b[j] = (beta[j] + alpha * step[k]).clamp(lb[j], ub[j]);
                }
                if let Some((j, side)) = hit {
                    b[j] = if side == Side::Lower { lb[j] } else { ub[j] };
                }
                b
            };
            let mut candidate = propose(alpha, hit);
            let mut dev_new = prob.neg2_loglik(&candidate);
            let mut halvings = 0;
            while dev_new > dev + 1e-12 * (dev.abs() + 1.0) && halvings < 40 {
                alpha *= 0.5;
                hit = None;
                candidate = propose(alpha, hit);
                dev_new = prob.neg2_loglik(&candidate);
                halvings += 1;
            }
            let rel = (dev - dev_new).abs() / (dev_new.abs() + 0.1);
            let tiny_step = free
                .iter()
                .all(|&j| (candidate[j] - beta[j]).abs() <= 1e-13 * (1.0 + beta[j].abs()));
            beta = candidate;
            dev = dev_new;
            if let Some((j, side)) = hit {
                active[j] = Some(side);
                continue 'outer;
            }
            if rel < opts.tol {
                let (score, _) = prob.score_info(&beta, &[]);
                let worst = free.iter().fold(0.0f64, |m, &j| m.max(score[j].abs()));
                if worst <= score_tol || tiny_step || halvings >= 40 {
                    stationary = true;
                }
            }
        }
        // Release the frozen coordinate whose score most strongly points
        // back into the box.
        let (score, _) = prob.score_info(&beta, &[]);
        let mut worst: Option<(usize, f64)> = None;
        for j in 0..p {
            let violation = match active[j] {
                Some(Side::Lower) => score[j],
                Some(Side::Upper) => -score[j],
                None => continue,
            };
            if violation > kkt_tol && worst.is_none_or(|(_, v)| violation > v) {
                worst = Some((j, violation));
            }
        }
        match worst {
            Some((j, _)) if releases < 50 => {
                active[j] = None;
                releases += 1;
            }
            _ => {
                converged = true;
                break;
            }
        }
    }

    let names = x.names().to_vec();
    let capped = (0..p)
        .filter(|&j| !aliased.contains(&j) && (beta[j].abs() >= cap))
        .map(|j| names[j].clone())
        .collect();
    Ok(LogisticFit {
        coefficients: beta,
        converged,
        iterations,
        lower_bounds: lower_bounds.map(<[f64]>::to_vec),
        aliased: aliased.iter().map(|&j| names[j].clone()).collect(),
        capped,
        neg2_loglik: dev,
        names,
    })
}

/// `expit(offset + X beta)` row by row.
pub fn predict_prob(fit: &LogisticFit, x: &DesignMatrix, offset: &[f64]) -> Result<Vec<f64>> {
    if x.ncols() != fit.coefficients.len() || offset.len() != x.nrows() {
        return Err(Error::Dimension(format!(
            "design {}x{} with {} offsets does not conform to {} coefficients",
            x.nrows(),
            x.ncols(),
            offset.len(),
            fit.coefficients.len()
        )));
    }
    Ok((0..x.nrows())
        .map(|i| expit(offset[i] + fit.eta(x.row(i))))
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn intercept_only(y: &[f64]) -> DesignMatrix {
        let ones = vec![1.0; y.len()];
        DesignMatrix::from_columns(&[("(Intercept)", &ones)]).unwrap()
    }

    #[test]
    fn intercept_matches_logit_of_mean() {
        let y = [1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0];
        let x = intercept_only(&y);
        let fit = fit_logistic(&x, &y, &[1.0; 8], &[0.0; 8], None, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!((fit.coefficients[0] + 3f64.ln()).abs() < 1e-10);

        let y = [1.0, 0.0];
        let x = intercept_only(&y);
        let fit = fit_logistic(&x, &y, &[1.0; 2], &[0.0; 2], None, &FitOptions::default()).unwrap();
        assert!(fit.coefficients[0].abs() < 1e-12);
    }

    #[test]
    fn two_by_two_log_odds_ratio() {
        // counts: (x=1,y=1)=40, (x=1,y=0)=10, (x=0,y=1)=20, (x=0,y=0)=30
        let xs = [1.0, 1.0, 0.0, 0.0];
        let ys = [1.0, 0.0, 1.0, 0.0];
        let w = [40.0, 10.0, 20.0, 30.0];
        let x = DesignMatrix::from_columns(&[("(Intercept)", &[1.0; 4]), ("x", &xs)]).unwrap();
        let fit = fit_logistic(&x, &ys, &w, &[0.0; 4], None, &FitOptions::default()).unwrap();
        assert!((fit.coefficients[1] - 6f64.ln()).abs() < 1e-10, "{fit:?}");
        assert!((fit.coefficients[0] - (20.0f64 / 30.0).ln()).abs() < 1e-10);
    }

    #[test]
    fn offset_passthrough_and_zero_coefficients() {
        let q = 0.3;
        let fit = LogisticFit {
            names: vec!["x".into()],
            coefficients: vec![0.0],
            converged: true,
            iterations: 0,
            lower_bounds: None,
            aliased: vec![],
            capped: vec![],
            neg2_loglik: 0.0,
        };
        let x = DesignMatrix::from_columns(&[("x", &[1.0, 2.0])]).unwrap();
        let p = predict_prob(&fit, &x, &[logit(q), 0.0]).unwrap();
        assert!((p[0] - q).abs() < 1e-15);
        assert_eq!(p[1], 0.5);
    }

    #[test]
    fn aliased_column_is_reported_or_dropped() {
        let a = [0.0, 1.0, 0.0, 1.0];
        let x = DesignMatrix::from_columns(&[("(Intercept)", &[1.0; 4]), ("a", &a), ("a2", &a)])
            .unwrap();
        let y = [0.0, 1.0, 1.0, 0.0];
        let err = fit_logistic(&x, &y, &[1.0; 4], &[0.0; 4], None, &FitOptions::default());
        assert!(matches!(err, Err(Error::Aliased(t)) if t == "a2"));
        let opts = FitOptions {
            drop_aliased: true,
            ..FitOptions::default()
        };
        let fit = fit_logistic(&x, &y, &[1.0; 4], &[0.0; 4], None, &opts).unwrap();
        assert_eq!(fit.aliased, ["a2"]);
        assert_eq!(fit.coefficients[2], 0.0);
    }

    #[test]
    fn separation_is_capped() {
        let xs = [0.0, 0.0, 1.0, 1.0];
        let ys = [0.0, 0.0, 1.0, 1.0];
        let x = DesignMatrix::from_columns(&[("(Intercept)", &[1.0; 4]), ("x", &xs)]).unwrap();
        let fit =
            fit_logistic(&x, &ys, &[1.0; 4], &[0.0; 4], None, &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert!(!fit.capped.is_empty());
        assert!(fit.coefficients.iter().all(|b| b.abs() <= 20.0));
    }

    #[test]
    fn rejects_out_of_range_response() {
        let x = intercept_only(&[0.0, 2.0]);
        assert!(fit_logistic(
            &x,
            &[0.0, 1.5],
            &[1.0; 2],
            &[0.0; 2],
            None,
            &FitOptions::default()
        )
        .is_err());
    }

    #[test]
    fn lower_bound_binds_on_negative_association() {
        // unconstrained slope is log(1/6) < 0; bounded at zero the intercept
        // is the logit of the pooled mean
        let xs = [1.0, 1.0, 0.0, 0.0];
        let ys = [1.0, 0.0, 1.0, 0.0];
        let w = [10.0, 40.0, 30.0, 20.0];
        let x = DesignMatrix::from_columns(&[("(Intercept)", &[1.0; 4]), ("A", &xs)]).unwrap();
        let lb = [f64::NEG_INFINITY, 0.0];
        let fit = fit_logistic(&x, &ys, &w, &[0.0; 4], Some(&lb), &FitOptions::default()).unwrap();
        assert!(fit.converged);
        assert_eq!(fit.coefficients[1], 0.0);
        assert!((fit.coefficients[0] - logit(0.4)).abs() < 1e-10);
    }

    fn score(x: &DesignMatrix, y: &[f64], w: &[f64], beta: &[f64]) -> Vec<f64> {
        let mut s = vec![0.0; x.ncols()];
        for i in 0..x.nrows() {
            let mu = expit(x.row(i).iter().zip(beta).map(|(a, b)| a * b).sum());
            for (sj, xj) in s.iter_mut().zip(x.row(i)) {
                *sj += w[i] * (y[i] - mu) * xj;
            }
        }
        s
    }

    proptest::proptest! {
        #[test]
        fn kkt_conditions_hold(
            rows in proptest::collection::vec((0u8..2, 0u8..2, 0.0f64..=1.0, 0.1f64..3.0), 8..60),
            bound in proptest::bool::ANY,
        ) {
            let a: Vec<f64> = rows.iter().map(|r| r.0 as f64).collect();
            let v: Vec<f64> = rows.iter().map(|r| r.1 as f64).collect();
            let y: Vec<f64> = rows.iter().map(|r| r.2).collect();
            let w: Vec<f64> = rows.iter().map(|r| r.3).collect();
            let n = rows.len();
            let ones = vec![1.0; n];
            let x = DesignMatrix::from_columns(&[("(Intercept)", &ones), ("A", &a), ("V", &v)]).unwrap();
            let lb = [f64::NEG_INFINITY, 0.0, f64::NEG_INFINITY];
            let opts = FitOptions { drop_aliased: true, ..FitOptions::default() };
            let fit = fit_logistic(&x, &y, &w, &vec![0.0; n], bound.then_some(&lb[..]), &opts).unwrap();
            proptest::prop_assert!(fit.converged);
            let s = score(&x, &y, &w, &fit.coefficients);
            let tol = 1e-8 * n as f64;
            for j in 0..3 {
                let b = fit.coefficients[j];
                proptest::prop_assert!(b.abs() <= 20.0);
                if fit.aliased.contains(&x.names()[j]) {
                    continue;
                }
                let lower = if bound && j == 1 { 0.0 } else { -20.0 };
                proptest::prop_assert!(b >= lower);
                if b == lower {
                    proptest::prop_assert!(s[j] <= tol);
                } else if b == 20.0 {
                    proptest::prop_assert!(s[j] >= -tol);
                } else {
                    proptest::prop_assert!(s[j].abs() <= tol, "score {} at {:?}", s[j], fit);
                }
            }
        }
    }

    #[test]
    fn deterministic() {
        let xs: Vec<f64> = (0..50).map(|i| ((i * 7) % 5) as f64 / 4.0).collect();
        let ys: Vec<f64> = (0..50).map(|i| ((i * 3) % 2) as f64).collect();
        let x = DesignMatrix::from_columns(&[("(Intercept)", &[1.0; 50]), ("x", &xs)]).unwrap();
        let f1 = fit_logistic(
            &x,
            &ys,
            &[1.0; 50],
            &[0.0; 50],
            None,
            &FitOptions::default(),
        )
        .unwrap();
        let f2 = fit_logistic(
            &x,
            &ys,
            &[1.0; 50],
            &[0.0; 50],
            None,
            &FitOptions::default(),
        )
        .unwrap();
        assert_eq!(f1, f2);
    }
}
