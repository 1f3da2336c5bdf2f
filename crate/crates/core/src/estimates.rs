//! Welfare estimates, their standard errors and cross-policy correlation.
//!
//! An [`EstimateTable`] is the single input every selection rule consumes. It
//! stores correlation rather than covariance; the covariance of the estimates
//! is always rebuilt as `diag(se) * corr * diag(se)`.

use std::collections::HashSet;
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Smallest eigenvalue tolerated (and repaired) in a correlation matrix.
pub const PSD_TOLERANCE: f64 = 1e-8;
/// Jitter added to a correlation matrix whose smallest eigenvalue is slightly negative.
pub const PSD_JITTER: f64 = 1e-8;
/// Tolerance on `sum(weights) == 1` and on the box bounds of an allocation.
pub const ALLOCATION_TOLERANCE: f64 = 1e-9;

const ENTRY_TOLERANCE: f64 = 1e-8;

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TableMeta {
    /// Notional sample size. Metadata only.
    pub n: Option<f64>,
    pub notes: Vec<String>,
    /// Set when the correlation matrix needed the PSD jitter.
    pub corr_jittered: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateTable {
    labels: Vec<String>,
    v_hat: Vec<f64>,
    se: Vec<f64>,
    known: Vec<bool>,
    corr: DMatrix<f64>,
    meta: TableMeta,
}

impl EstimateTable {
    /// Table with identity correlation and strictly positive standard errors.
    pub fn new(labels: Vec<String>, v_hat: Vec<f64>, se: Vec<f64>) -> Result<Self> {
        let known = vec![false; labels.len()];
        Self::from_parts(labels, v_hat, se, known, None, TableMeta::default())
    }

    /// Full constructor. `known[j]` permits `se[j] == 0`; `corr = None` means identity.
    pub fn from_parts(
        labels: Vec<String>,
        v_hat: Vec<f64>,
        se: Vec<f64>,
        known: Vec<bool>,
        corr: Option<DMatrix<f64>>,
        mut meta: TableMeta,
    ) -> Result<Self> {
        let p = labels.len();
        if p == 0 {
            return Err(Error::EmptyTable);
        }
        if v_hat.len() != p || se.len() != p || known.len() != p {
            return Err(Error::DimensionMismatch(format!(
                "{} labels, {} estimates, {} standard errors, {} known flags",
                p,
                v_hat.len(),
                se.len(),
                known.len()
            )));
        }
        let mut seen = HashSet::with_capacity(p);
        for (row, label) in labels.iter().enumerate() {
            if label.trim().is_empty() {
                return Err(Error::EmptyLabel(row));
            }
            if !seen.insert(label.as_str()) {
                return Err(Error::DuplicateLabel(label.clone()));
            }
        }
        for j in 0..p {
            if !v_hat[j].is_finite() {
                return Err(Error::NonFinite(format!("estimate of `{}`", labels[j])));
            }
            if se[j].is_nan() || se[j] < 0.0 {
                return Err(Error::NegativeOrMissingSe(format!(
                    "`{}` has standard error {}",
                    labels[j], se[j]
                )));
            }
            if !se[j].is_finite() {
                return Err(Error::NonFinite(format!("standard error of `{}`", labels[j])));
            }
            if se[j] == 0.0 && !known[j] {
                return Err(Error::UnflaggedZeroSe(labels[j].clone()));
            }
        }
        let corr = match corr {
            None => DMatrix::identity(p, p),
            Some(c) => {
                let (c, jittered) = validate_correlation(c, p)?;
                meta.corr_jittered |= jittered;
                c
            }
        };
        Ok(Self {
            labels,
            v_hat,
            se,
            known,
            corr,
            meta,
        })
    }

    /// Replace the correlation matrix, validating it.
    pub fn with_correlation(self, corr: DMatrix<f64>) -> Result<Self> {
        Self::from_parts(
            self.labels,
            self.v_hat,
            self.se,
            self.known,
            Some(corr),
            self.meta,
        )
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn v_hat(&self) -> &[f64] {
        &self.v_hat
    }

    pub fn se(&self) -> &[f64] {
        &self.se
    }

    pub fn known(&self) -> &[bool] {
        &self.known
    }

    pub fn corr(&self) -> &DMatrix<f64> {
        &self.corr
    }

    pub fn meta(&self) -> &TableMeta {
        &self.meta
    }

    pub fn meta_mut(&mut self) -> &mut TableMeta {
        &mut self.meta
    }

    pub fn index_of(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    /// `diag(se) * corr * diag(se)`.
    pub fn covariance(&self) -> DMatrix<f64> {
        let p = self.len();
        DMatrix::from_fn(p, p, |i, j| self.se[i] * self.corr[(i, j)] * self.se[j])
    }

    /// Copy of the table with new point estimates (same risks and correlation).
    pub fn with_estimates(&self, v_hat: Vec<f64>) -> Result<Self> {
        if v_hat.len() != self.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} estimates for a table of {}",
                v_hat.len(),
                self.len()
            )));
        }
        if let Some(j) = v_hat.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("estimate of `{}`", self.labels[j])));
        }
        let mut out = self.clone();
        out.v_hat = v_hat;
        Ok(out)
    }
}

/// Symmetrize, range-check and PSD-check a correlation matrix.
///
/// Returns the (possibly jittered) matrix and whether jitter was applied.
pub fn validate_correlation(mut c: DMatrix<f64>, p: usize) -> Result<(DMatrix<f64>, bool)> {
    if c.nrows() != p || c.ncols() != p {
        return Err(Error::DimensionMismatch(format!(
            "correlation is {}x{}, table has {} rows",
            c.nrows(),
            c.ncols(),
            p
        )));
    }
    for i in 0..p {
        for j in 0..p {
            let v = c[(i, j)];
            if !v.is_finite() {
                return Err(Error::InvalidCorrelation(format!("entry ({i}, {j}) is not finite")));
            }
            if v.abs() > 1.0 + ENTRY_TOLERANCE {
                return Err(Error::InvalidCorrelation(format!(
                    "entry ({i}, {j}) = {v} is outside [-1, 1]"
                )));
            }
        }
        if (c[(i, i)] - 1.0).abs() > ENTRY_TOLERANCE {
            return Err(Error::InvalidCorrelation(format!(
                "diagonal entry {i} is {}",
                c[(i, i)]
            )));
        }
    }
    for i in 0..p {
        for j in (i + 1)..p {
            if (c[(i, j)] - c[(j, i)]).abs() > ENTRY_TOLERANCE {
                return Err(Error::InvalidCorrelation(format!(
                    "not symmetric at ({i}, {j})"
                )));
            }
            let m = (0.5 * (c[(i, j)] + c[(j, i)])).clamp(-1.0, 1.0);
            c[(i, j)] = m;
            c[(j, i)] = m;
        }
        c[(i, i)] = 1.0;
    }
    if is_diagonal(&c) {
        return Ok((c, false));
    }
    let min_eig = smallest_eigenvalue(&c);
    if min_eig < -PSD_TOLERANCE {
        return Err(Error::NotPsd {
            min_eigenvalue: min_eig,
        });
    }
    if min_eig < 0.0 {
        let scale = 1.0 / (1.0 + PSD_JITTER);
        for i in 0..p {
            for j in 0..p {
                c[(i, j)] *= scale;
            }
            c[(i, i)] = 1.0;
        }
        return Ok((c, true));
    }
    Ok((c, false))
}

pub(crate) fn is_diagonal(m: &DMatrix<f64>) -> bool {
    let n = m.nrows();
    (0..n).all(|i| (0..n).all(|j| i == j || m[(i, j)] == 0.0))
}

pub(crate) fn smallest_eigenvalue(m: &DMatrix<f64>) -> f64 {
    SymmetricEigen::new(m.clone())
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// The simplex-with-box set `{pi : sum(pi) = 1, lower <= pi <= upper}`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polytope {
    lower: Vec<f64>,
    upper: Vec<f64>,
}

impl Polytope {
    pub fn new(lower: Vec<f64>, upper: Vec<f64>) -> Result<Self> {
        if lower.is_empty() {
            return Err(Error::InfeasiblePolytope("no programs".into()));
        }
        if lower.len() != upper.len() {
            return Err(Error::DimensionMismatch(format!(
                "{} lower bounds, {} upper bounds",
                lower.len(),
                upper.len()
            )));
        }
        for (j, (&a, &b)) in lower.iter().zip(&upper).enumerate() {
            if !(0.0..=1.0).contains(&a) || !(0.0..=1.0).contains(&b) || a > b {
                return Err(Error::InfeasiblePolytope(format!(
                    "bounds [{a}, {b}] for program {j} violate 0 <= a <= b <= 1"
                )));
            }
        }
        let sa: f64 = lower.iter().sum();
        let sb: f64 = upper.iter().sum();
        if sa > 1.0 + 1e-12 || sb < 1.0 - 1e-12 {
            return Err(Error::InfeasiblePolytope(format!(
                "sum of lower bounds {sa} and upper bounds {sb} do not bracket 1"
            )));
        }
        Ok(Self { lower, upper })
    }

    /// The full unit simplex in `dim` coordinates.
    pub fn simplex(dim: usize) -> Result<Self> {
        Self::new(vec![0.0; dim], vec![1.0; dim])
    }

    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn lower(&self) -> &[f64] {
        &self.lower
    }

    pub fn upper(&self) -> &[f64] {
        &self.upper
    }

    pub fn contains(&self, weights: &[f64], tol: f64) -> bool {
        weights.len() == self.dim()
            && (weights.iter().sum::<f64>() - 1.0).abs() <= tol
            && weights
                .iter()
                .zip(self.lower.iter().zip(&self.upper))
                .all(|(&w, (&a, &b))| w >= a - tol && w <= b + tol)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicySpace {
    Finite { size: usize },
    Polytope(Polytope),
}

impl PolicySpace {
    pub fn finite(size: usize) -> Result<Self> {
        if size == 0 {
            return Err(Error::EmptyTable);
        }
        Ok(PolicySpace::Finite { size })
    }

    pub fn dim(&self) -> usize {
        match self {
            PolicySpace::Finite { size } => *size,
            PolicySpace::Polytope(p) => p.dim(),
        }
    }
}

/// Investment shares over programs.
#[derive(Debug, Clone, PartialEq)]
pub struct Allocation {
    weights: Vec<f64>,
}

impl Allocation {
    /// Validated against `space` within [`ALLOCATION_TOLERANCE`].
    pub fn new(weights: Vec<f64>, space: &Polytope) -> Result<Self> {
        if weights.len() != space.dim() {
            return Err(Error::DimensionMismatch(format!(
                "{} weights for {} programs",
                weights.len(),
                space.dim()
            )));
        }
        if !space.contains(&weights, ALLOCATION_TOLERANCE) {
            return Err(Error::InfeasibleAllocation(format!("{weights:?}")));
        }
        Ok(Self { weights })
    }

    /// Validated against the full simplex.
    pub fn on_simplex(weights: Vec<f64>) -> Result<Self> {
        let simplex = Polytope::simplex(weights.len().max(1))?;
        Self::new(weights, &simplex)
    }

    pub fn vertex(dim: usize, j: usize) -> Self {
        let mut weights = vec![0.0; dim];
        weights[j] = 1.0;
        Self { weights }
    }

    pub(crate) fn from_trusted(weights: Vec<f64>) -> Self {
        Self { weights }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }

    pub fn into_weights(self) -> Vec<f64> {
        self.weights
    }
}

fn check_dim(table: &EstimateTable, pi: &Allocation) -> Result<()> {
    if table.len() != pi.len() {
        return Err(Error::DimensionMismatch(format!(
            "allocation over {} programs, table has {}",
            pi.len(),
            table.len()
        )));
    }
    Ok(())
}

/// Estimated welfare `pi' v_hat`.
pub fn policy_value(table: &EstimateTable, pi: &Allocation) -> Result<f64> {
    check_dim(table, pi)?;
    Ok(dot(pi.weights(), table.v_hat()))
}

/// Estimation risk `sqrt(pi' Sigma pi)` with `Sigma = diag(se) corr diag(se)`.
pub fn policy_risk(table: &EstimateTable, pi: &Allocation) -> Result<f64> {
    check_dim(table, pi)?;
    let w = pi.weights();
    if let Some(j) = single_support(w) {
        return Ok(table.se()[j]);
    }
    let scaled: Vec<f64> = w.iter().zip(table.se()).map(|(a, s)| a * s).collect();
    Ok(quad_form(table.corr(), &scaled).max(0.0).sqrt())
}

fn single_support(w: &[f64]) -> Option<usize> {
    let mut nz = w.iter().enumerate().filter(|(_, &x)| x != 0.0);
    match (nz.next(), nz.next()) {
        (Some((j, &1.0)), None) => Some(j),
        _ => None,
    }
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub(crate) fn quad_form(m: &DMatrix<f64>, x: &[f64]) -> f64 {
    let n = x.len();
    let mut acc = 0.0;
    for j in 0..n {
        if x[j] == 0.0 {
            continue;
        }
        let mut col = 0.0;
        for i in 0..n {
            col += m[(i, j)] * x[i];
        }
        acc += col * x[j];
    }
    acc
}

// ---------------------------------------------------------------------------
// CSV ingestion and export
// ---------------------------------------------------------------------------

/// Load `label,estimate,se[,known]` rows; correlation defaults to identity.
pub fn load_estimates(path: impl AsRef<Path>) -> Result<EstimateTable> {
    let mut text = String::new();
    File::open(path.as_ref())?.read_to_string(&mut text)?;
    parse_estimates(&text, None)
}

/// Load estimates plus a companion `p x p` correlation CSV.
pub fn load_estimates_with_corr(
    path: impl AsRef<Path>,
    corr_path: impl AsRef<Path>,
) -> Result<EstimateTable> {
    let mut text = String::new();
    File::open(path.as_ref())?.read_to_string(&mut text)?;
    let mut corr_text = String::new();
    File::open(corr_path.as_ref())?.read_to_string(&mut corr_text)?;
    parse_estimates(&text, Some(&corr_text))
}

/// Parse an estimates CSV (and optionally a correlation CSV) from memory.
/// Lines starting with `#` are comments.
pub fn parse_estimates(text: &str, corr_text: Option<&str>) -> Result<EstimateTable> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let label_col = col("label").ok_or_else(|| Error::Parse("missing `label` column".into()))?;
    let est_col =
        col("estimate").ok_or_else(|| Error::Parse("missing `estimate` column".into()))?;
    let se_col =
        col("se").ok_or_else(|| Error::NegativeOrMissingSe("missing `se` column".into()))?;
    let known_col = col("known");

    let mut labels = Vec::new();
    let mut v_hat = Vec::new();
    let mut se = Vec::new();
    let mut known = Vec::new();
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |c: usize| rec.get(c).unwrap_or("");
        labels.push(field(label_col).to_string());
        v_hat.push(parse_number(field(est_col), row, "estimate")?);
        let s = field(se_col);
        if s.is_empty() {
            return Err(Error::NegativeOrMissingSe(format!("row {row} has no se")));
        }
        se.push(
            s.parse::<f64>()
                .map_err(|_| Error::NegativeOrMissingSe(format!("row {row}: se `{s}`")))?,
        );
        known.push(match known_col.map(field) {
            None | Some("") => false,
            Some(k) => parse_flag(k)
                .ok_or_else(|| Error::Parse(format!("row {row}: known flag `{k}`")))?,
        });
    }
    let corr = corr_text.map(|t| parse_matrix(t, labels.len())).transpose()?;
    EstimateTable::from_parts(labels, v_hat, se, known, corr, TableMeta::default())
}

fn parse_number(s: &str, row: usize, what: &str) -> Result<f64> {
    s.parse::<f64>()
        .map_err(|_| Error::Parse(format!("row {row}: {what} `{s}` is not a number")))
}

fn parse_flag(s: &str) -> Option<bool> {
    match s.to_ascii_lowercase().as_str() {
        "1" | "true" | "yes" => Some(true),
        "0" | "false" | "no" => Some(false),
        _ => None,
    }
}

/// Parse a headerless square numeric matrix (a non-numeric first row is skipped as a header).
pub fn parse_matrix(text: &str, p: usize) -> Result<DMatrix<f64>> {
    let mut rdr = csv::ReaderBuilder::new()
        .has_headers(false)
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let mut rows: Vec<Vec<f64>> = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let parsed: std::result::Result<Vec<f64>, _> =
            rec.iter().map(|s| s.parse::<f64>()).collect();
        match parsed {
            Ok(r) => rows.push(r),
            Err(_) if i == 0 => continue,
            Err(_) => return Err(Error::Parse(format!("correlation row {i} is not numeric"))),
        }
    }
    if rows.len() != p || rows.iter().any(|r| r.len() != p) {
        return Err(Error::DimensionMismatch(format!(
            "correlation matrix must be {p}x{p}"
        )));
    }
    Ok(DMatrix::from_fn(p, p, |i, j| rows[i][j]))
}

/// Write the table as CSV, preceded by `# `-prefixed header lines.
pub fn write_estimates<W: Write>(table: &EstimateTable, mut w: W, header: &[String]) -> Result<()> {
    for line in header {
        writeln!(w, "# {line}")?;
    }
    let any_known = table.known.iter().any(|&k| k);
    let mut wtr = csv::Writer::from_writer(w);
    if any_known {
        wtr.write_record(["label", "estimate", "se", "known"])?;
    } else {
        wtr.write_record(["label", "estimate", "se"])?;
    }
    for j in 0..table.len() {
        let mut rec = vec![
            table.labels[j].clone(),
            table.v_hat[j].to_string(),
            table.se[j].to_string(),
        ];
        if any_known {
            rec.push(if table.known[j] { "1" } else { "0" }.to_string());
        }
        wtr.write_record(&rec)?;
    }
    wtr.flush()?;
    Ok(())
}

pub fn write_correlation<W: Write>(table: &EstimateTable, mut w: W, header: &[String]) -> Result<()> {
    for line in header {
        writeln!(w, "# {line}")?;
    }
    let p = table.len();
    for i in 0..p {
        let row: Vec<String> = (0..p).map(|j| table.corr[(i, j)].to_string()).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    Ok(())
}

pub fn save_estimates(table: &EstimateTable, path: impl AsRef<Path>) -> Result<()> {
    write_estimates(table, File::create(path)?, &[])
}

pub fn save_correlation(table: &EstimateTable, path: impl AsRef<Path>) -> Result<()> {
    write_correlation(table, File::create(path)?, &[])
}
