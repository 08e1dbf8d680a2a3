//! Observation data model, CSV ingestion and positivity diagnostics.
//!
//! A [`Dataset`] holds baseline covariates `W` (named numeric columns), the
//! binary instrument `A`, exposure `Z` and mediator `M`, a numeric outcome
//! `Y`, and an optional binary sampling indicator `delta`. Rows with
//! `delta = 0` carry covariates only; their `A`, `Z`, `M`, `Y` entries are
//! never read by an estimator.
//!
//! Rows may carry frequency weights. A weighted dataset is equivalent to the
//! dataset in which row `i` is repeated `weight[i]` times, which lets the
//! simulator collapse discrete draws into their distinct cells.

use std::collections::BTreeMap;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Role names that cannot be reused as covariate names.
pub const RESERVED_NAMES: [&str; 5] = ["A", "Z", "M", "Y", "delta"];

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    w_names: Vec<String>,
    /// Column-major covariates: `w[j][i]`.
    w: Vec<Vec<f64>>,
    a: Vec<u8>,
    z: Vec<u8>,
    m: Vec<u8>,
    y: Vec<f64>,
    delta: Option<Vec<u8>>,
    weights: Option<Vec<f64>>,
}

fn check_binary(column: &str, values: &[u8]) -> Result<()> {
    match values.iter().position(|&v| v > 1) {
        Some(i) => Err(Error::NonBinary {
            row: i + 1,
            column: column.to_string(),
            value: f64::from(values[i]),
        }),
        None => Ok(()),
    }
}

impl Dataset {
    pub fn new(
        w_names: Vec<String>,
        w: Vec<Vec<f64>>,
        a: Vec<u8>,
        z: Vec<u8>,
        m: Vec<u8>,
        y: Vec<f64>,
        delta: Option<Vec<u8>>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyFile);
        }
        if w_names.len() != w.len() {
            return Err(Error::Dimension(format!(
                "{} covariate names for {} covariate columns",
                w_names.len(),
                w.len()
            )));
        }
        for (name, col) in w_names.iter().zip(&w) {
            if RESERVED_NAMES.contains(&name.as_str()) {
                return Err(Error::InvalidArgument(format!(
                    "covariate name `{name}` is reserved"
                )));
            }
            if col.len() != n {
                return Err(Error::Dimension(format!(
                    "covariate `{name}` has {} rows, expected {n}",
                    col.len()
                )));
            }
            if let Some(i) = col.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    row: i + 1,
                    column: name.clone(),
                });
            }
        }
        let mut seen = std::collections::HashSet::new();
        for name in &w_names {
            if !seen.insert(name) {
                return Err(Error::DuplicateColumn(name.clone()));
            }
        }
        for (name, col) in [("A", &a), ("Z", &z), ("M", &m)] {
            if col.len() != n {
                return Err(Error::Dimension(format!(
                    "column {name} has {} rows, expected {n}",
                    col.len()
                )));
            }
            check_binary(name, col)?;
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite {
                row: i + 1,
                column: "Y".into(),
            });
        }
        if let Some(d) = &delta {
            if d.len() != n {
                return Err(Error::Dimension(format!(
                    "delta has {} rows, expected {n}",
                    d.len()
                )));
            }
            check_binary("delta", d)?;
        }
        Ok(Self {
            w_names,
            w,
            a,
            z,
            m,
            y,
            delta,
            weights: None,
        })
    }

    /// Attaches nonnegative frequency weights.
    pub fn with_weights(mut self, weights: Vec<f64>) -> Result<Self> {
        if weights.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} weights for {} rows",
                weights.len(),
                self.n()
            )));
        }
        if weights.iter().any(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::Domain(
                "weights must be finite and nonnegative".into(),
            ));
        }
        if weights.iter().all(|w| *w == 0.0) {
            return Err(Error::Domain("at least one weight must be positive".into()));
        }
        self.weights = Some(weights);
        Ok(self)
    }

    pub fn n(&self) -> usize {
        self.y.len()
    }

    pub fn w_names(&self) -> &[String] {
        &self.w_names
    }

    pub fn w_column(&self, name: &str) -> Option<&[f64]> {
        self.w_names
            .iter()
            .position(|n| n == name)
            .map(|j| self.w[j].as_slice())
    }

    pub(crate) fn w_index(&self, name: &str) -> Option<usize> {
        self.w_names.iter().position(|n| n == name)
    }

    pub(crate) fn w_at(&self, j: usize, i: usize) -> f64 {
        self.w[j][i]
    }

    pub fn a(&self) -> &[u8] {
        &self.a
    }

    pub fn z(&self) -> &[u8] {
        &self.z
    }

    pub fn m(&self) -> &[u8] {
        &self.m
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn delta(&self) -> Option<&[u8]> {
        self.delta.as_deref()
    }

    pub fn weights(&self) -> Option<&[f64]> {
        self.weights.as_deref()
    }

    /// Sampling indicator of row `i`; all-ones when no delta column exists.
    #[inline]
    pub fn delta_at(&self, i: usize) -> u8 {
        self.delta.as_ref().map_or(1, |d| d[i])
    }

    #[inline]
    pub fn weight_at(&self, i: usize) -> f64 {
        self.weights.as_ref().map_or(1.0, |w| w[i])
    }

    pub fn has_delta(&self) -> bool {
        self.delta.is_some()
    }

    /// True when some row has delta = 0, i.e. a sampling model is needed.
    pub fn has_unsampled(&self) -> bool {
        self.delta.as_ref().is_some_and(|d| {
            d.iter()
                .zip(0..)
                .any(|(&v, i)| v == 0 && self.weight_at(i) > 0.0)
        })
    }

    pub fn total_weight(&self) -> f64 {
        match &self.weights {
            Some(w) => w.iter().sum(),
            None => self.n() as f64,
        }
    }

    /// Total weight of rows with delta = 1.
    pub fn sampled_weight(&self) -> f64 {
        (0..self.n())
            .filter(|&i| self.delta_at(i) == 1)
            .map(|i| self.weight_at(i))
            .sum()
    }

    /// Indices of rows with delta = 1 and positive weight.
    pub fn sampled_rows(&self) -> Vec<usize> {
        (0..self.n())
            .filter(|&i| self.delta_at(i) == 1 && self.weight_at(i) > 0.0)
            .collect()
    }

    /// Weighted mean of `values` (one per row).
    pub fn mean(&self, values: &[f64]) -> f64 {
        debug_assert_eq!(values.len(), self.n());
        match &self.weights {
            None => values.iter().sum::<f64>() / self.n() as f64,
            Some(w) => {
                let total: f64 = w.iter().sum();
                values.iter().zip(w).map(|(v, w)| v * w).sum::<f64>() / total
            }
        }
    }

    /// Collapses identical rows into one weighted row each.
    ///
    /// For unsampled rows the ignored `A, Z, M, Y` entries are zeroed before
    /// grouping. Output rows are ordered by their bit patterns, so the result
    /// is independent of the input row order.
    pub fn compress(&self) -> Dataset {
        let mut groups: BTreeMap<Vec<u64>, f64> = BTreeMap::new();
        for i in 0..self.n() {
            let wt = self.weight_at(i);
            if wt == 0.0 {
                continue;
            }
            let d = self.delta_at(i);
            let mut key: Vec<u64> = self.w.iter().map(|c| c[i].to_bits()).collect();
            key.push(u64::from(d));
            if d == 1 {
                key.extend([
                    u64::from(self.a[i]),
                    u64::from(self.z[i]),
                    u64::from(self.m[i]),
                    self.y[i].to_bits(),
                ]);
            } else {
                key.extend([0, 0, 0, 0.0f64.to_bits()]);
            }
            *groups.entry(key).or_insert(0.0) += wt;
        }
        let p = self.w.len();
        let mut w = vec![Vec::with_capacity(groups.len()); p];
        let (mut a, mut z, mut m, mut y) = (vec![], vec![], vec![], vec![]);
        let mut delta = vec![];
        let mut weights = vec![];
        for (key, wt) in groups {
            for (j, col) in w.iter_mut().enumerate() {
                col.push(f64::from_bits(key[j]));
            }
            delta.push(key[p] as u8);
            a.push(key[p + 1] as u8);
            z.push(key[p + 2] as u8);
            m.push(key[p + 3] as u8);
            y.push(f64::from_bits(key[p + 4]));
            weights.push(wt);
        }
        Dataset {
            w_names: self.w_names.clone(),
            w,
            a,
            z,
            m,
            y,
            delta: self.delta.as_ref().map(|_| delta),
            weights: Some(weights),
        }
    }

    /// Keeps rows with a positive count and uses the counts as frequency
    /// weights in place of any existing ones.
    pub fn reweighted(&self, counts: &[f64]) -> Result<Dataset> {
        if counts.len() != self.n() {
            return Err(Error::Dimension(format!(
                "{} counts for {} rows",
                counts.len(),
                self.n()
            )));
        }
        let keep: Vec<usize> = (0..self.n()).filter(|&i| counts[i] > 0.0).collect();
        if keep.is_empty() {
            return Err(Error::Domain("all counts are zero".into()));
        }
        let pick_f = |v: &[f64]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        let pick_u = |v: &[u8]| keep.iter().map(|&i| v[i]).collect::<Vec<_>>();
        Ok(Dataset {
            w_names: self.w_names.clone(),
            w: self.w.iter().map(|c| pick_f(c)).collect(),
            a: pick_u(&self.a),
            z: pick_u(&self.z),
            m: pick_u(&self.m),
            y: pick_f(&self.y),
            delta: self.delta.as_deref().map(pick_u),
            weights: Some(pick_f(counts)),
        })
    }

    /// Writes the dataset in the ingestion dialect. Weighted datasets are
    /// rejected unless every weight is a whole number, in which case rows
    /// are repeated.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut wtr = csv::Writer::from_writer(out);
        let mut header: Vec<&str> = self.w_names.iter().map(String::as_str).collect();
        header.extend(["A", "Z", "M", "Y"]);
        if self.delta.is_some() {
            header.push("delta");
        }
        wtr.write_record(&header)?;
        for i in 0..self.n() {
            let wt = self.weight_at(i);
            if wt.fract() != 0.0 {
                return Err(Error::Domain(format!(
                    "row {} has fractional weight {wt}; cannot expand to CSV",
                    i + 1
                )));
            }
            let mut rec: Vec<String> = self.w.iter().map(|c| c[i].to_string()).collect();
            rec.push(self.a[i].to_string());
            rec.push(self.z[i].to_string());
            rec.push(self.m[i].to_string());
            rec.push(self.y[i].to_string());
            if let Some(d) = &self.delta {
                rec.push(d[i].to_string());
            }
            for _ in 0..wt as u64 {
                wtr.write_record(&rec)?;
            }
        }
        wtr.flush().map_err(|e| Error::Io {
            path: "<csv output>".into(),
            source: e,
        })?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|source| Error::Io {
            path: path.to_path_buf(),
            source,
        })?;
        self.write_csv(file)
    }
}

/// Maps file columns onto dataset roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ColumnMap {
    pub w: Vec<String>,
    #[serde(default = "default_a")]
    pub a: String,
    #[serde(default = "default_z")]
    pub z: String,
    #[serde(default = "default_m")]
    pub m: String,
    #[serde(default = "default_y")]
    pub y: String,
    #[serde(default)]
    pub delta: Option<String>,
}

fn default_a() -> String {
    "A".into()
}
fn default_z() -> String {
    "Z".into()
}
fn default_m() -> String {
    "M".into()
}
fn default_y() -> String {
    "Y".into()
}

impl ColumnMap {
    /// Roles named `A`, `Z`, `M`, `Y`, no delta column.
    pub fn standard(w: &[&str]) -> Self {
        Self {
            w: w.iter().map(|s| s.to_string()).collect(),
            a: default_a(),
            z: default_z(),
            m: default_m(),
            y: default_y(),
            delta: None,
        }
    }

    pub fn with_delta(mut self, name: &str) -> Self {
        self.delta = Some(name.to_string());
        self
    }

    fn all_names(&self) -> Vec<&str> {
        let mut v: Vec<&str> = self.w.iter().map(String::as_str).collect();
        v.extend([
            self.a.as_str(),
            self.z.as_str(),
            self.m.as_str(),
            self.y.as_str(),
        ]);
        if let Some(d) = &self.delta {
            v.push(d);
        }
        v
    }

    fn check_unique(&self) -> Result<()> {
        let mut seen = std::collections::HashSet::new();
        for name in self.all_names() {
            if !seen.insert(name) {
                return Err(Error::DuplicateColumn(name.to_string()));
            }
        }
        Ok(())
    }
}

fn parse_cell(raw: &str, row: usize, column: &str) -> Result<f64> {
    let s = raw.trim();
    if s.is_empty() || s.eq_ignore_ascii_case("na") || s.eq_ignore_ascii_case("nan") {
        return Err(Error::MissingValue {
            row,
            column: column.to_string(),
        });
    }
    let v: f64 = s.parse().map_err(|_| Error::NonNumeric {
        row,
        column: column.to_string(),
        value: s.to_string(),
    })?;
    if !v.is_finite() {
        return Err(Error::NonFinite {
            row,
            column: column.to_string(),
        });
    }
    Ok(v)
}

fn to_binary(v: f64, row: usize, column: &str) -> Result<u8> {
    if v == 0.0 {
        Ok(0)
    } else if v == 1.0 {
        Ok(1)
    } else {
        Err(Error::NonBinary {
            row,
            column: column.to_string(),
            value: v,
        })
    }
}

/// Reads a comma-separated file with a header row. Row numbers in errors
/// count data rows from 1.
pub fn load_csv(path: &Path, map: &ColumnMap) -> Result<Dataset> {
    let file = File::open(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    read_csv(file, map)
}

pub fn read_csv<R: std::io::Read>(input: R, map: &ColumnMap) -> Result<Dataset> {
    map.check_unique()?;
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(input);
    let headers = rdr.headers()?.clone();
    if headers.is_empty() {
        return Err(Error::EmptyFile);
    }
    let index_of = |name: &str| -> Result<usize> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let w_idx: Vec<usize> = map.w.iter().map(|n| index_of(n)).collect::<Result<_>>()?;
    let (ai, zi, mi, yi) = (
        index_of(&map.a)?,
        index_of(&map.z)?,
        index_of(&map.m)?,
        index_of(&map.y)?,
    );
    let di = map.delta.as_deref().map(index_of).transpose()?;

    let mut w: Vec<Vec<f64>> = vec![Vec::new(); w_idx.len()];
    let (mut a, mut z, mut m, mut y) = (vec![], vec![], vec![], vec![]);
    let mut delta = di.map(|_| Vec::new());
    for (k, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let row = k + 1;
        let cell = |idx: usize, name: &str| -> Result<f64> {
            parse_cell(rec.get(idx).unwrap_or(""), row, name)
        };
        for (col, (&idx, name)) in w.iter_mut().zip(w_idx.iter().zip(&map.w)) {
            col.push(cell(idx, name)?);
        }
        a.push(to_binary(cell(ai, &map.a)?, row, &map.a)?);
        z.push(to_binary(cell(zi, &map.z)?, row, &map.z)?);
        m.push(to_binary(cell(mi, &map.m)?, row, &map.m)?);
        y.push(cell(yi, &map.y)?);
        if let (Some(idx), Some(d)) = (di, delta.as_mut()) {
            let name = map.delta.as_deref().unwrap_or("delta");
            d.push(to_binary(cell(idx, name)?, row, name)?);
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyFile);
    }
    // Roles are stored under canonical names; only W keeps file names.
    Dataset::new(map.w.clone(), w, a, z, m, y, delta)
}

/// Empirical cell totals among sampled rows (weighted counts).
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ValidationReport {
    pub n: f64,
    pub n_sampled: f64,
    /// Indexed by `a`.
    pub cells_a: [f64; 2],
    /// Indexed by `[a][z]`.
    pub cells_az: [[f64; 2]; 2],
    /// Indexed by `[z][m]`.
    pub cells_zm: [[f64; 2]; 2],
    pub warnings: Vec<String>,
}

/// Positivity diagnostics over sampled rows. Never mutates the dataset.
pub fn validate(d: &Dataset) -> Result<ValidationReport> {
    let mut cells_a = [0.0; 2];
    let mut cells_az = [[0.0; 2]; 2];
    let mut cells_zm = [[0.0; 2]; 2];
    let mut n_sampled = 0.0;
    for i in 0..d.n() {
        if d.delta_at(i) == 0 {
            continue;
        }
        let wt = d.weight_at(i);
        let (a, z, m) = (d.a[i] as usize, d.z[i] as usize, d.m[i] as usize);
        n_sampled += wt;
        cells_a[a] += wt;
        cells_az[a][z] += wt;
        cells_zm[z][m] += wt;
    }
    if n_sampled == 0.0 {
        return Err(Error::NoSampledRows);
    }
    let mut warnings = Vec::new();
    for a in 0..2 {
        if cells_a[a] == 0.0 {
            warnings.push(format!("positivity: empty cell (A={a})"));
        }
    }
    for a in 0..2 {
        for z in 0..2 {
            if cells_az[a][z] == 0.0 {
                warnings.push(format!("positivity: empty cell (A={a},Z={z})"));
            }
        }
    }
    for z in 0..2 {
        for m in 0..2 {
            if cells_zm[z][m] == 0.0 {
                warnings.push(format!("positivity: empty cell (Z={z},M={m})"));
            }
        }
    }
    Ok(ValidationReport {
        n: d.total_weight(),
        n_sampled,
        cells_a,
        cells_az,
        cells_zm,
        warnings,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn csv_text(rows: &[&str]) -> String {
        let mut s = String::from("W1,W2,A,Z,M,Y\n");
        for r in rows {
            s.push_str(r);
            s.push('\n');
        }
        s
    }

    fn map() -> ColumnMap {
        ColumnMap::standard(&["W1", "W2"])
    }

    #[test]
    fn ingests_columns_and_defaults_delta() {
        let text = csv_text(&["0,1,0,0,1,1", "1,0,1,1,0,0", "1,1,1,0,0,1", "0,0,0,1,1,0.5"]);
        let d = read_csv(text.as_bytes(), &map()).unwrap();
        assert_eq!(d.a(), &[0, 1, 1, 0]);
        assert_eq!(d.y()[3], 0.5);
        assert!(d.delta().is_none());
        assert!((0..4).all(|i| d.delta_at(i) == 1));
    }

    #[test]
    fn reports_non_binary_with_row() {
        let text = csv_text(&["0,1,0,0,1,1", "1,0,1,2,0,0"]);
        match read_csv(text.as_bytes(), &map()) {
            Err(Error::NonBinary { row, column, .. }) => {
                assert_eq!(row, 2);
                assert_eq!(column, "Z");
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn reports_missing_and_non_numeric() {
        let text = csv_text(&["0,1,0,0,1,"]);
        assert!(matches!(
            read_csv(text.as_bytes(), &map()),
            Err(Error::MissingValue { row: 1, .. })
        ));
        let text = csv_text(&["0,x,0,0,1,1"]);
        assert!(matches!(
            read_csv(text.as_bytes(), &map()),
            Err(Error::NonNumeric { row: 1, .. })
        ));
        let text = "W1,A,Z,M,Y\n0,0,0,0,0\n";
        assert!(matches!(
            read_csv(text.as_bytes(), &map()),
            Err(Error::MissingColumn(c)) if c == "W2"
        ));
        assert!(matches!(
            read_csv("W1,W2,A,Z,M,Y\n".as_bytes(), &map()),
            Err(Error::EmptyFile)
        ));
    }

    #[test]
    fn duplicate_mapping_is_rejected() {
        let mut m = map();
        m.y = "W1".into();
        assert!(matches!(
            read_csv(csv_text(&["0,1,0,0,1,1"]).as_bytes(), &m),
            Err(Error::DuplicateColumn(_))
        ));
    }

    #[test]
    fn validate_flags_empty_cells() {
        let text = csv_text(&["0,1,0,0,0,1", "1,0,1,1,1,0", "1,1,1,1,0,1", "0,0,0,0,1,0"]);
        let d = read_csv(text.as_bytes(), &map()).unwrap();
        let rep = validate(&d).unwrap();
        assert!(rep.warnings.iter().any(|w| w.contains("(A=1,Z=0)")));
        assert!(!rep.warnings.iter().any(|w| w.contains("(Z=0,M=1)")));
        assert_eq!(rep, validate(&d).unwrap());

        let text = csv_text(&["0,1,0,0,0,1", "1,0,1,1,1,0", "1,1,1,1,0,1", "0,0,0,0,0,0"]);
        let d = read_csv(text.as_bytes(), &map()).unwrap();
        let rep = validate(&d).unwrap();
        assert!(rep.warnings.iter().any(|w| w.contains("(Z=0,M=1)")));
    }

    #[test]
    fn all_unsampled_is_an_error() {
        let text = "W1,W2,A,Z,M,Y,S\n0,1,0,0,0,1,0\n1,1,1,1,1,1,0\n";
        let d = read_csv(text.as_bytes(), &map().with_delta("S")).unwrap();
        assert!(matches!(validate(&d), Err(Error::NoSampledRows)));
    }

    #[test]
    fn compress_preserves_weighted_means() {
        let text = csv_text(&["0,1,0,0,0,1", "0,1,0,0,0,1", "1,1,1,1,0,1", "0,1,0,0,0,1"]);
        let d = read_csv(text.as_bytes(), &map()).unwrap();
        let c = d.compress();
        assert_eq!(c.n(), 2);
        assert_eq!(c.total_weight(), 4.0);
        let a_full: Vec<f64> = d.a().iter().map(|&v| f64::from(v)).collect();
        let a_c: Vec<f64> = c.a().iter().map(|&v| f64::from(v)).collect();
        assert_eq!(d.mean(&a_full), c.mean(&a_c));
    }
}
