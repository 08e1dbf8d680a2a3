//! Model formulas (`response ~ term + term + a:b`) and row designs.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tabular::Dataset;

/// A variable a design term can reference.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Var {
    A,
    Z,
    M,
    Covariate(String),
}

impl Var {
    fn parse(name: &str) -> std::result::Result<Var, String> {
        match name {
            "A" => Ok(Var::A),
            "Z" => Ok(Var::Z),
            "M" => Ok(Var::M),
            "Y" | "delta" => Err(format!("`{name}` cannot appear as a predictor")),
            "" => Err("empty term".into()),
            other => {
                if other
                    .chars()
                    .all(|c| c.is_alphanumeric() || c == '_' || c == '.')
                {
                    Ok(Var::Covariate(other.to_string()))
                } else {
                    Err(format!("invalid variable name `{other}`"))
                }
            }
        }
    }

    fn name(&self) -> &str {
        match self {
            Var::A => "A",
            Var::Z => "Z",
            Var::M => "M",
            Var::Covariate(s) => s,
        }
    }
}

/// Product of one or more variables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Term(Vec<Var>);

impl Term {
    pub fn vars(&self) -> &[Var] {
        &self.0
    }

    pub fn name(&self) -> String {
        self.0.iter().map(Var::name).collect::<Vec<_>>().join(":")
    }

    fn same_as(&self, other: &Term) -> bool {
        let mut a = self.0.clone();
        let mut b = other.0.clone();
        a.sort();
        b.sort();
        a == b
    }
}

/// Parsed model formula.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub struct DesignSpec {
    response: Option<String>,
    intercept: bool,
    terms: Vec<Term>,
}

impl TryFrom<String> for DesignSpec {
    type Error = Error;
    fn try_from(s: String) -> Result<Self> {
        DesignSpec::parse(&s)
    }
}

impl From<DesignSpec> for String {
    fn from(d: DesignSpec) -> String {
        d.to_string()
    }
}

impl fmt::Display for DesignSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if let Some(r) = &self.response {
            write!(f, "{r} ~ ")?;
        } else {
            write!(f, "~ ")?;
        }
        let mut parts: Vec<String> = Vec::new();
        if !self.intercept {
            parts.push("0".into());
        } else if self.terms.is_empty() {
            parts.push("1".into());
        }
        parts.extend(self.terms.iter().map(Term::name));
        write!(f, "{}", parts.join(" + "))
    }
}

impl DesignSpec {
    /// Parses `response ~ rhs`. The right-hand side accepts `+`-separated
    /// terms, `a:b` interactions, `a*b` (all main effects and interactions),
    /// `1` and `0`/`-1` to keep or drop the intercept.
    pub fn parse(formula: &str) -> Result<Self> {
        let err = |reason: String| Error::Formula {
            formula: formula.to_string(),
            reason,
        };
        let (lhs, rhs) = match formula.split_once('~') {
            Some((l, r)) => (l.trim(), r.trim()),
            None => return Err(err("missing `~`".into())),
        };
        if rhs.is_empty() {
            return Err(err("empty right-hand side".into()));
        }
        let response = if lhs.is_empty() {
            None
        } else {
            Some(lhs.to_string())
        };
        let mut intercept = true;
        let mut terms: Vec<Term> = Vec::new();
        let compact: String = rhs.chars().filter(|c| !c.is_whitespace()).collect();
        let normalized = compact.replace('-', "+-");
        let tokens: Vec<&str> = normalized.split('+').collect();
        for (k, tok) in tokens.iter().enumerate() {
            if tok.is_empty() {
                // a leading `-1` leaves an empty first token
                if k == 0 && tokens.len() > 1 && tokens[1].starts_with('-') {
                    continue;
                }
                return Err(err("empty term".into()));
            }
            let tok = tok.to_string();
            match tok.as_str() {
                "1" => continue,
                "0" | "-1" => {
                    intercept = false;
                    continue;
                }
                t if t.starts_with('-') => {
                    return Err(err(format!("term removal `{t}` is not supported")))
                }
                _ => {}
            }
            let expanded: Vec<Term> = if tok.contains('*') {
                if tok.contains(':') {
                    return Err(err(format!("cannot mix `*` and `:` in `{tok}`")));
                }
                let vars: Vec<Var> = tok
                    .split('*')
                    .map(Var::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(err)?;
                let k = vars.len();
                let mut subsets: Vec<Vec<usize>> = (1u32..(1 << k))
                    .map(|mask| (0..k).filter(|b| mask & (1 << b) != 0).collect())
                    .collect();
                subsets.sort_by_key(|s| s.len());
                subsets
                    .into_iter()
                    .map(|s| Term(s.into_iter().map(|b| vars[b].clone()).collect()))
                    .collect()
            } else {
                let vars: Vec<Var> = tok
                    .split(':')
                    .map(Var::parse)
                    .collect::<std::result::Result<_, _>>()
                    .map_err(err)?;
                vec![Term(vars)]
            };
            for t in expanded {
                let mut sorted = t.0.clone();
                sorted.sort();
                sorted.dedup();
                if sorted.len() != t.0.len() {
                    return Err(err(format!("repeated variable in `{}`", t.name())));
                }
                if !terms.iter().any(|e| e.same_as(&t)) {
                    terms.push(t);
                }
            }
        }
        Ok(Self {
            response,
            intercept,
            terms,
        })
    }

    pub fn response(&self) -> Option<&str> {
        self.response.as_deref()
    }

    pub fn has_intercept(&self) -> bool {
        self.intercept
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    /// True when any term references `var`.
    pub fn mentions(&self, var: &Var) -> bool {
        self.terms.iter().any(|t| t.0.contains(var))
    }

    /// True when `var` appears as a main effect.
    pub fn has_main(&self, var: &Var) -> bool {
        self.terms.iter().any(|t| t.0.len() == 1 && &t.0[0] == var)
    }

    /// True when `var` appears inside a product with another variable.
    pub fn interacts(&self, var: &Var) -> bool {
        self.terms
            .iter()
            .any(|t| t.0.len() > 1 && t.0.contains(var))
    }

    pub fn column_names(&self) -> Vec<String> {
        let mut v = Vec::with_capacity(self.terms.len() + 1);
        if self.intercept {
            v.push("(Intercept)".to_string());
        }
        v.extend(self.terms.iter().map(Term::name));
        v
    }

    /// Column index of the main effect of `var`.
    pub fn main_column(&self, var: &Var) -> Option<usize> {
        let offset = usize::from(self.intercept);
        self.terms
            .iter()
            .position(|t| t.0.len() == 1 && &t.0[0] == var)
            .map(|j| j + offset)
    }

    /// Binds covariate names to dataset columns.
    pub fn resolve(&self, d: &Dataset) -> Result<ResolvedDesign> {
        let mut cols = Vec::with_capacity(self.terms.len());
        for t in &self.terms {
            let mut factors = Vec::with_capacity(t.0.len());
            for v in &t.0 {
                factors.push(match v {
                    Var::A => Factor::A,
                    Var::Z => Factor::Z,
                    Var::M => Factor::M,
                    Var::Covariate(name) => {
                        Factor::W(d.w_index(name).ok_or_else(|| Error::Formula {
                            formula: self.to_string(),
                            reason: format!("unknown covariate `{name}`"),
                        })?)
                    }
                });
            }
            cols.push(factors);
        }
        Ok(ResolvedDesign {
            intercept: self.intercept,
            cols,
            names: self.column_names(),
        })
    }
}

#[derive(Debug, Clone, Copy)]
enum Factor {
    A,
    Z,
    M,
    W(usize),
}

/// Values substituted for the role variables when building a row.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Assign {
    pub a: u8,
    pub z: u8,
    pub m: u8,
}

impl Assign {
    pub fn observed(d: &Dataset, i: usize) -> Self {
        Self {
            a: d.a()[i],
            z: d.z()[i],
            m: d.m()[i],
        }
    }
}

/// A design bound to a particular dataset's covariate layout.
#[derive(Debug, Clone)]
pub struct ResolvedDesign {
    intercept: bool,
    cols: Vec<Vec<Factor>>,
    names: Vec<String>,
}

impl ResolvedDesign {
    pub fn p(&self) -> usize {
        self.names.len()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn fill_row(&self, d: &Dataset, i: usize, at: Assign, out: &mut [f64]) {
        let mut k = 0;
        if self.intercept {
            out[0] = 1.0;
            k = 1;
        }
        for factors in &self.cols {
            let mut v = 1.0;
            for f in factors {
                v *= match *f {
                    Factor::A => f64::from(at.a),
                    Factor::Z => f64::from(at.z),
                    Factor::M => f64::from(at.m),
                    Factor::W(j) => d.w_at(j, i),
                };
            }
            out[k] = v;
            k += 1;
        }
    }

    /// Design rows for `rows`, with role values from `at`.
    pub fn matrix(
        &self,
        d: &Dataset,
        rows: &[usize],
        at: impl Fn(usize) -> Assign,
    ) -> DesignMatrix {
        let p = self.p();
        let mut data = vec![0.0; rows.len() * p];
        for (r, &i) in rows.iter().enumerate() {
            self.fill_row(d, i, at(i), &mut data[r * p..(r + 1) * p]);
        }
        DesignMatrix {
            n: rows.len(),
            p,
            data,
            names: self.names.clone(),
        }
    }

    /// Linear predictor `x·beta` at every row of `d` for a fixed assignment
    /// rule.
    pub fn linear_predictor(
        &self,
        d: &Dataset,
        beta: &[f64],
        at: impl Fn(usize) -> Assign,
    ) -> Vec<f64> {
        let p = self.p();
        let mut row = vec![0.0; p];
        (0..d.n())
            .map(|i| {
                self.fill_row(d, i, at(i), &mut row);
                row.iter().zip(beta).map(|(x, b)| x * b).sum()
            })
            .collect()
    }
}

/// Dense row-major design matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct DesignMatrix {
    n: usize,
    p: usize,
    data: Vec<f64>,
    names: Vec<String>,
}

impl DesignMatrix {
    pub fn new(n: usize, p: usize, data: Vec<f64>, names: Vec<String>) -> Result<Self> {
        if data.len() != n * p || names.len() != p {
            return Err(Error::Dimension(format!(
                "design data {} / names {} do not match {n}x{p}",
                data.len(),
                names.len()
            )));
        }
        Ok(Self { n, p, data, names })
    }

    /// Builds a matrix from columns.
    pub fn from_columns(columns: &[(&str, &[f64])]) -> Result<Self> {
        let p = columns.len();
        let n = columns.first().map_or(0, |c| c.1.len());
        if columns.iter().any(|c| c.1.len() != n) {
            return Err(Error::Dimension("columns differ in length".into()));
        }
        let mut data = vec![0.0; n * p];
        for (j, (_, col)) in columns.iter().enumerate() {
            for (i, v) in col.iter().enumerate() {
                data[i * p + j] = *v;
            }
        }
        Ok(Self {
            n,
            p,
            data,
            names: columns.iter().map(|c| c.0.to_string()).collect(),
        })
    }

    pub fn nrows(&self) -> usize {
        self.n
    }

    pub fn ncols(&self) -> usize {
        self.p
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    #[inline]
    pub fn row(&self, i: usize) -> &[f64] {
        &self.data[i * self.p..(i + 1) * self.p]
    }
}
