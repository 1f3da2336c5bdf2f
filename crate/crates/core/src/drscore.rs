//! Doubly-robust welfare estimates from randomized-trial micro-data.
//!
//! Units live in discrete covariate cells `x` and receive one of finitely
//! many treatments `t` with known propensities `p(t|x)`. For each policy
//! `pi(t|x)` the per-unit score is
//!
//! ```text
//! psi = sum_t g(t,x) pi(t|x) + H (y - g(T,x)),    H = pi(T|x) / p(T|x)
//! ```
//!
//! with `g` a cross-fitted cell mean. In added-value mode the score is taken
//! relative to always assigning the control arm. Column means and clustered
//! standard errors of the score matrix give an [`EstimateTable`] over the
//! policy class.

use std::collections::HashMap;
use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::estimates::{EstimateTable, TableMeta};

pub const PROPENSITY_SUM_TOLERANCE: f64 = 1e-9;
pub const DEFAULT_POLICY_CAP: u64 = 1_000_000;
pub const DEFAULT_FOLDS: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ScoreMode {
    Levels,
    AddedValue,
}

impl std::str::FromStr for ScoreMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace(['-', '_'], "").as_str() {
            "levels" | "level" => Ok(ScoreMode::Levels),
            "addedvalue" | "added" => Ok(ScoreMode::AddedValue),
            _ => Err(Error::InvalidConfig(format!("unknown score mode `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreDataset {
    y: Vec<f64>,
    t: Vec<usize>,
    x: Vec<usize>,
    weight: Vec<f64>,
    /// Dense cluster index per unit; `None` means every unit is its own cluster.
    cluster: Option<Vec<usize>>,
    /// `cells x treatments`.
    propensity: DMatrix<f64>,
}

impl ScoreDataset {
    /// `propensity[(x, t)] = p(t|x)`. Weights default to one.
    pub fn new(
        y: Vec<f64>,
        t: Vec<usize>,
        x: Vec<usize>,
        weight: Option<Vec<f64>>,
        cluster: Option<Vec<String>>,
        propensity: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.len();
        if n == 0 {
            return Err(Error::EmptyTable);
        }
        if t.len() != n || x.len() != n {
            return Err(Error::DimensionMismatch(format!(
                "{n} outcomes, {} treatments, {} cells",
                t.len(),
                x.len()
            )));
        }
        let weight = weight.unwrap_or_else(|| vec![1.0; n]);
        if weight.len() != n {
            return Err(Error::DimensionMismatch(format!("{} weights for {n} units", weight.len())));
        }
        if let Some(i) = y.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("outcome of unit {i}")));
        }
        if let Some(i) = weight.iter().position(|w| !w.is_finite() || *w < 0.0) {
            return Err(Error::InvalidConfig(format!("weight of unit {i} must be finite and >= 0")));
        }
        if weight.iter().sum::<f64>() <= 0.0 {
            return Err(Error::InvalidConfig("weights sum to zero".into()));
        }
        let cluster = match cluster {
            None => None,
            Some(ids) => {
                if ids.len() != n {
                    return Err(Error::DimensionMismatch(format!("{} cluster ids for {n} units", ids.len())));
                }
                let mut index: HashMap<String, usize> = HashMap::new();
                Some(
                    ids.into_iter()
                        .map(|id| {
                            let next = index.len();
                            *index.entry(id).or_insert(next)
                        })
                        .collect(),
                )
            }
        };

        let (cells, treatments) = (propensity.nrows(), propensity.ncols());
        for xi in 0..cells {
            let row = propensity.row(xi);
            if row.iter().any(|p| !p.is_finite() || *p < 0.0 || *p > 1.0) {
                return Err(Error::InvalidPropensity(format!("cell {xi} has a probability outside [0, 1]")));
            }
            let s: f64 = row.iter().sum();
            if s != 0.0 && (s - 1.0).abs() > PROPENSITY_SUM_TOLERANCE {
                return Err(Error::InvalidPropensity(format!("propensities of cell {xi} sum to {s}")));
            }
        }
        for i in 0..n {
            if x[i] >= cells || t[i] >= treatments {
                return Err(Error::InvalidPropensity(format!(
                    "unit {i} in (x={}, t={}) has no propensity",
                    x[i], t[i]
                )));
            }
            if propensity[(x[i], t[i])] <= 0.0 {
                return Err(Error::InvalidPropensity(format!(
                    "unit {i} observed in (x={}, t={}) where p = 0",
                    x[i], t[i]
                )));
            }
        }
        Ok(Self { y, t, x, weight, cluster, propensity })
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn cells(&self) -> usize {
        self.propensity.nrows()
    }

    pub fn treatments(&self) -> usize {
        self.propensity.ncols()
    }

    pub fn y(&self) -> &[f64] {
        &self.y
    }

    pub fn t(&self) -> &[usize] {
        &self.t
    }

    pub fn x(&self) -> &[usize] {
        &self.x
    }

    pub fn weight(&self) -> &[f64] {
        &self.weight
    }

    pub fn propensity(&self) -> &DMatrix<f64> {
        &self.propensity
    }

    pub fn is_clustered(&self) -> bool {
        self.cluster.is_some()
    }

    /// Widen the cell/treatment ranges to `cells x treatments`; new entries
    /// have zero propensity.
    pub fn with_dims(mut self, cells: usize, treatments: usize) -> Result<Self> {
        if cells < self.cells() || treatments < self.treatments() {
            return Err(Error::DimensionMismatch(format!(
                "data uses {} cells and {} treatments, asked for {cells} and {treatments}",
                self.cells(),
                self.treatments()
            )));
        }
        let old = &self.propensity;
        self.propensity = DMatrix::from_fn(cells, treatments, |x, t| {
            if x < old.nrows() && t < old.ncols() {
                old[(x, t)]
            } else {
                0.0
            }
        });
        Ok(self)
    }

    /// Same design with transformed outcomes.
    pub fn with_outcomes(&self, y: Vec<f64>) -> Result<Self> {
        if y.len() != self.len() {
            return Err(Error::DimensionMismatch(format!("{} outcomes for {} units", y.len(), self.len())));
        }
        if y.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite("outcome".into()));
        }
        Ok(Self { y, ..self.clone() })
    }

    fn cluster_of(&self, i: usize) -> usize {
        self.cluster.as_ref().map_or(i, |c| c[i])
    }

    fn cluster_count(&self) -> usize {
        self.cluster.as_ref().map_or(self.len(), |c| c.iter().max().map_or(0, |m| m + 1))
    }

    /// Representer weights `H_i = pi(T_i|x_i) / p(T_i|x_i)` of policy `m`.
    pub fn representer(&self, class: &PolicyClass, m: usize) -> Vec<f64> {
        (0..self.len())
            .map(|i| class.prob(m, self.x[i], self.t[i]) / self.propensity[(self.x[i], self.t[i])])
            .collect()
    }
}

/// Parse micro-data `y,t,x[,weight][,cluster]` and propensities `x,t,p`.
/// Cell and treatment ids are nonnegative integers; unlisted propensities are 0.
pub fn parse_dataset(data: &str, propensities: &str) -> Result<ScoreDataset> {
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(data.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (iy, it, ix) = match (col("y"), col("t"), col("x")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::Parse("micro-data header must contain y, t and x".into())),
    };
    let (iw, ic) = (col("weight"), col("cluster"));
    let (mut y, mut t, mut x, mut w, mut c) = (vec![], vec![], vec![], vec![], vec![]);
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        y.push(parse_f64(field(iy), row, "y")?);
        t.push(parse_id(field(it), row, "t")?);
        x.push(parse_id(field(ix), row, "x")?);
        if let Some(i) = iw {
            w.push(parse_f64(field(i), row, "weight")?);
        }
        if let Some(i) = ic {
            c.push(field(i).to_string());
        }
    }
    if y.is_empty() {
        return Err(Error::EmptyTable);
    }

    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(propensities.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (px, pt, pp) = match (col("x"), col("t"), col("p")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::Parse("propensity header must contain x, t and p".into())),
    };
    let mut entries = vec![];
    for (row, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let field = |i: usize| rec.get(i).unwrap_or("");
        entries.push((
            parse_id(field(px), row, "x")?,
            parse_id(field(pt), row, "t")?,
            parse_f64(field(pp), row, "p")?,
        ));
    }
    let cells = x.iter().chain(entries.iter().map(|e| &e.0)).max().map_or(0, |m| m + 1);
    let treatments = t.iter().chain(entries.iter().map(|e| &e.1)).max().map_or(0, |m| m + 1);
    let mut p = DMatrix::zeros(cells, treatments);
    for (xi, ti, v) in entries {
        p[(xi, ti)] = v;
    }
    ScoreDataset::new(
        y,
        t,
        x,
        (!w.is_empty()).then_some(w),
        (!c.is_empty()).then_some(c),
        p,
    )
}

pub fn load_dataset(data: impl AsRef<Path>, propensities: impl AsRef<Path>) -> Result<ScoreDataset> {
    parse_dataset(
        &std::fs::read_to_string(data)?,
        &std::fs::read_to_string(propensities)?,
    )
}

fn parse_f64(s: &str, row: usize, what: &str) -> Result<f64> {
    let v: f64 = s
        .parse()
        .map_err(|_| Error::Parse(format!("row {}: `{s}` is not a number in column {what}", row + 1)))?;
    if !v.is_finite() {
        return Err(Error::NonFinite(format!("row {} column {what}", row + 1)));
    }
    Ok(v)
}

fn parse_id(s: &str, row: usize, what: &str) -> Result<usize> {
    s.parse()
        .map_err(|_| Error::Parse(format!("row {}: `{s}` is not a nonnegative integer id in column {what}", row + 1)))
}

#[derive(Debug, Clone, PartialEq)]
pub enum PolicyClass {
    /// Every map from cells to treatments, in mixed-radix order with cell 0
    /// as the most significant digit.
    Deterministic { cells: usize, treatments: usize, count: usize },
    /// Explicit `cells x treatments` probability tables.
    Listed { labels: Vec<String>, tables: Vec<DMatrix<f64>> },
}

impl PolicyClass {
    pub fn listed(labels: Vec<String>, tables: Vec<DMatrix<f64>>) -> Result<Self> {
        if labels.len() != tables.len() || tables.is_empty() {
            return Err(Error::DimensionMismatch(format!(
                "{} labels for {} policy tables",
                labels.len(),
                tables.len()
            )));
        }
        let shape = tables[0].shape();
        for (label, tab) in labels.iter().zip(&tables) {
            if tab.shape() != shape {
                return Err(Error::DimensionMismatch(format!("policy `{label}` has shape {:?}", tab.shape())));
            }
            for r in 0..tab.nrows() {
                let row = tab.row(r);
                if row.iter().any(|p| !p.is_finite() || *p < 0.0)
                    || (row.iter().sum::<f64>() - 1.0).abs() > PROPENSITY_SUM_TOLERANCE
                {
                    return Err(Error::InvalidConfig(format!(
                        "policy `{label}` is not a distribution in cell {r}"
                    )));
                }
            }
        }
        Ok(PolicyClass::Listed { labels, tables })
    }

    pub fn len(&self) -> usize {
        match self {
            PolicyClass::Deterministic { count, .. } => *count,
            PolicyClass::Listed { tables, .. } => tables.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cells(&self) -> usize {
        match self {
            PolicyClass::Deterministic { cells, .. } => *cells,
            PolicyClass::Listed { tables, .. } => tables[0].nrows(),
        }
    }

    pub fn treatments(&self) -> usize {
        match self {
            PolicyClass::Deterministic { treatments, .. } => *treatments,
            PolicyClass::Listed { tables, .. } => tables[0].ncols(),
        }
    }

    /// Treatment assigned to each cell by deterministic policy `m`.
    pub fn assignment(&self, m: usize) -> Option<Vec<usize>> {
        match self {
            PolicyClass::Deterministic { cells, treatments, .. } => {
                let mut out = vec![0; *cells];
                let mut rest = m;
                for slot in out.iter_mut().rev() {
                    *slot = rest % treatments;
                    rest /= treatments;
                }
                Some(out)
            }
            PolicyClass::Listed { .. } => None,
        }
    }

    pub fn label(&self, m: usize) -> String {
        match self {
            PolicyClass::Deterministic { .. } => self
                .assignment(m)
                .unwrap()
                .iter()
                .enumerate()
                .map(|(x, t)| format!("x{x}->t{t}"))
                .collect::<Vec<_>>()
                .join(";"),
            PolicyClass::Listed { labels, .. } => labels[m].clone(),
        }
    }

    pub fn labels(&self) -> Vec<String> {
        (0..self.len()).map(|m| self.label(m)).collect()
    }

    /// `pi(t|x)` under policy `m`.
    pub fn prob(&self, m: usize, x: usize, t: usize) -> f64 {
        match self {
            PolicyClass::Deterministic { treatments, cells, .. } => {
                let digit = (m / treatments.pow((cells - 1 - x) as u32)) % treatments;
                if digit == t {
                    1.0
                } else {
                    0.0
                }
            }
            PolicyClass::Listed { tables, .. } => tables[m][(x, t)],
        }
    }

    fn table(&self, m: usize) -> DMatrix<f64> {
        DMatrix::from_fn(self.cells(), self.treatments(), |x, t| self.prob(m, x, t))
    }
}

/// All `treatments^cells` deterministic assignments.
pub fn enumerate_policies(cells: usize, treatments: usize, cap: u64) -> Result<PolicyClass> {
    if cells == 0 || treatments == 0 {
        return Err(Error::InvalidConfig("need at least one cell and one treatment".into()));
    }
    let count = (0..cells).try_fold(1u128, |acc, _| acc.checked_mul(treatments as u128));
    match count {
        Some(c) if c <= cap as u128 => Ok(PolicyClass::Deterministic {
            cells,
            treatments,
            count: c as usize,
        }),
        Some(c) => Err(Error::PolicyCapExceeded { count: c, cap }),
        None => Err(Error::PolicyCapExceeded { count: u128::MAX, cap }),
    }
}

/// Cross-fitted cell means `g(t, x)`, one table per fold.
#[derive(Debug, Clone, PartialEq)]
pub struct Regression {
    pub folds: Vec<usize>,
    /// `tables[k][(x, t)]` is fitted on units outside fold `k`.
    pub tables: Vec<DMatrix<f64>>,
    /// `(fold, x, t)` cells that fell back to a treatment-level mean.
    pub fallbacks: Vec<(usize, usize, usize)>,
}

impl Regression {
    pub fn predict(&self, unit: usize, t: usize, x: usize) -> f64 {
        self.tables[self.folds[unit]][(x, t)]
    }
}

/// Fold assignment stratified on `(x, t)`: units are grouped by cell and dealt
/// round-robin across folds.
pub fn stratified_folds(data: &ScoreDataset, k: usize) -> Vec<usize> {
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by_key(|&i| (data.x[i], data.t[i], i));
    let mut folds = vec![0; data.len()];
    for (pos, i) in order.into_iter().enumerate() {
        folds[i] = pos % k;
    }
    folds
}

/// Weighted cell means of `y` fitted out-of-fold. A `(x, t)` cell with no
/// training weight falls back to the training mean of treatment `t`, then to
/// the overall training mean, and is recorded in `fallbacks`.
pub fn fit_regression(data: &ScoreDataset, k: usize) -> Result<Regression> {
    if data.is_empty() {
        return Err(Error::EmptyTable);
    }
    if k < 2 || k > data.len() {
        return Err(Error::InvalidConfig(format!(
            "fold count {k} must be between 2 and the number of units ({})",
            data.len()
        )));
    }
    let folds = stratified_folds(data, k);
    let (cells, treatments) = (data.cells(), data.treatments());
    let mut tables = Vec::with_capacity(k);
    let mut fallbacks = Vec::new();
    for fold in 0..k {
        let mut sum = DMatrix::<f64>::zeros(cells, treatments);
        let mut wsum = DMatrix::<f64>::zeros(cells, treatments);
        for i in (0..data.len()).filter(|&i| folds[i] != fold) {
            let w = data.weight[i];
            sum[(data.x[i], data.t[i])] += w * data.y[i];
            wsum[(data.x[i], data.t[i])] += w;
        }
        let total_w: f64 = wsum.iter().sum();
        let overall = if total_w > 0.0 { sum.iter().sum::<f64>() / total_w } else { 0.0 };
        let mut g = DMatrix::zeros(cells, treatments);
        for t in 0..treatments {
            let (s, w): (f64, f64) = (0..cells).fold((0.0, 0.0), |(s, w), x| (s + sum[(x, t)], w + wsum[(x, t)]));
            let arm = if w > 0.0 { s / w } else { overall };
            for x in 0..cells {
                g[(x, t)] = if wsum[(x, t)] > 0.0 {
                    sum[(x, t)] / wsum[(x, t)]
                } else {
                    fallbacks.push((fold, x, t));
                    arm
                };
            }
        }
        tables.push(g);
    }
    Ok(Regression { folds, tables, fallbacks })
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScoreMatrix {
    /// `n x p` per-unit scores.
    pub psi: DMatrix<f64>,
    pub mode: ScoreMode,
    pub folds: Vec<usize>,
    pub labels: Vec<String>,
    /// False for policies that put mass on a `(t, x)` cell with zero propensity.
    pub overlap: Vec<bool>,
    weight: Vec<f64>,
    cluster: Vec<usize>,
    clusters: usize,
}

impl ScoreMatrix {
    pub fn units(&self) -> usize {
        self.psi.nrows()
    }

    pub fn policies(&self) -> usize {
        self.psi.ncols()
    }

    fn total_weight(&self) -> f64 {
        self.weight.iter().sum()
    }

    /// Weighted column mean.
    pub fn mean(&self, m: usize) -> f64 {
        let col = self.psi.column(m);
        col.iter().zip(&self.weight).map(|(p, w)| p * w).sum::<f64>() / self.total_weight()
    }

    /// Cluster sums of `w (psi - mean)` per column, `clusters x cols`.
    fn cluster_sums(&self, cols: &[usize], means: &[f64]) -> DMatrix<f64> {
        let mut u = DMatrix::zeros(self.clusters, cols.len());
        for (c, &m) in cols.iter().enumerate() {
            for i in 0..self.units() {
                u[(self.cluster[i], c)] += self.weight[i] * (self.psi[(i, m)] - means[c]);
            }
        }
        u
    }

    fn effective_clusters(&self) -> usize {
        let mut w = vec![0.0; self.clusters];
        for i in 0..self.units() {
            w[self.cluster[i]] += self.weight[i];
        }
        w.iter().filter(|v| **v > 0.0).count()
    }

    /// Column covariance of the mean estimates,
    /// `G/(G-1) sum_c u_c u_c' / (sum w)^2`.
    pub fn covariance(&self, cols: &[usize]) -> Result<(Vec<f64>, DMatrix<f64>)> {
        let g = self.effective_clusters();
        if g < 2 {
            return Err(Error::InsufficientUnits(g));
        }
        let means: Vec<f64> = cols.iter().map(|&m| self.mean(m)).collect();
        let u = self.cluster_sums(cols, &means);
        let tw = self.total_weight();
        let scale = g as f64 / (g as f64 - 1.0) / (tw * tw);
        let cov = (u.transpose() * &u) * scale;
        Ok((means, cov))
    }

    /// Weighted standard error of column `m`.
    pub fn se(&self, m: usize) -> Result<f64> {
        let (_, cov) = self.covariance(&[m])?;
        Ok(cov[(0, 0)].sqrt())
    }

    /// Estimate table over the policies with overlap.
    pub fn to_estimate_table(&self) -> Result<EstimateTable> {
        let cols: Vec<usize> = (0..self.policies()).filter(|&m| self.overlap[m]).collect();
        if cols.is_empty() {
            return Err(Error::InvalidPropensity("no policy satisfies overlap".into()));
        }
        let (means, cov) = self.covariance(&cols)?;
        let p = cols.len();
        let se: Vec<f64> = (0..p).map(|j| cov[(j, j)].max(0.0).sqrt()).collect();
        let known: Vec<bool> = se.iter().map(|s| *s == 0.0).collect();
        let corr = DMatrix::from_fn(p, p, |a, b| {
            if a == b {
                1.0
            } else if known[a] || known[b] {
                0.0
            } else {
                (cov[(a, b)] / (cov[(a, a)] * cov[(b, b)]).sqrt()).clamp(-1.0, 1.0)
            }
        });
        let mut meta = TableMeta { n: Some(self.units() as f64), ..Default::default() };
        let dropped: Vec<&str> = (0..self.policies())
            .filter(|&m| !self.overlap[m])
            .map(|m| self.labels[m].as_str())
            .collect();
        if !dropped.is_empty() {
            meta.notes.push(format!("dropped for lack of overlap: {}", dropped.join(", ")));
        }
        EstimateTable::from_parts(
            cols.iter().map(|&m| self.labels[m].clone()).collect(),
            means,
            se,
            known,
            Some(corr),
            meta,
        )
    }
}

/// Score matrix for `policies`. Column `m` is
/// `sum_t pi_m(t|x) a(t)` with `a(t) = g(t,x) + 1{T=t} (y - g(T,x)) / p(t|x)`,
/// minus `a(control)` in added-value mode.
pub fn compute_scores(
    data: &ScoreDataset,
    policies: &PolicyClass,
    g: &Regression,
    mode: ScoreMode,
    control: usize,
) -> Result<ScoreMatrix> {
    let (n, cells, treatments) = (data.len(), data.cells(), data.treatments());
    if policies.cells() != cells || policies.treatments() != treatments {
        return Err(Error::DimensionMismatch(format!(
            "policies over {}x{} cells/treatments, data has {cells}x{treatments}",
            policies.cells(),
            policies.treatments()
        )));
    }
    if g.folds.len() != n {
        return Err(Error::DimensionMismatch(format!("regression fitted on {} units, data has {n}", g.folds.len())));
    }
    let mut present = vec![false; cells];
    for &x in &data.x {
        present[x] = true;
    }
    if mode == ScoreMode::AddedValue {
        if control >= treatments {
            return Err(Error::InvalidConfig(format!("control id {control} is not a treatment")));
        }
        if let Some(x) = (0..cells).find(|&x| present[x] && data.propensity[(x, control)] <= 0.0) {
            return Err(Error::InvalidPropensity(format!("control arm has p = 0 in cell {x}")));
        }
    }

    // a[(i, t)]: the Levels score of "always t" for unit i.
    let a = DMatrix::from_fn(n, treatments, |i, t| {
        let (xi, ti) = (data.x[i], data.t[i]);
        let gt = g.predict(i, t, xi);
        if t == ti {
            gt + (data.y[i] - g.predict(i, ti, xi)) / data.propensity[(xi, ti)]
        } else {
            gt
        }
    });

    let p = policies.len();
    let columns: Vec<(Vec<f64>, bool)> = (0..p)
        .into_par_iter()
        .map(|m| {
            let pi = policies.table(m);
            let overlap = (0..cells)
                .filter(|&x| present[x])
                .all(|x| (0..treatments).all(|t| pi[(x, t)] <= 0.0 || data.propensity[(x, t)] > 0.0));
            let col = (0..n)
                .map(|i| {
                    let xi = data.x[i];
                    let mut s = 0.0;
                    for t in 0..treatments {
                        let w = pi[(xi, t)];
                        if w != 0.0 {
                            s += w * a[(i, t)];
                        }
                    }
                    match mode {
                        ScoreMode::Levels => s,
                        ScoreMode::AddedValue => s - a[(i, control)],
                    }
                })
                .collect();
            (col, overlap)
        })
        .collect();

    let mut psi = DMatrix::zeros(n, p);
    let mut overlap = Vec::with_capacity(p);
    for (m, (col, ok)) in columns.into_iter().enumerate() {
        psi.set_column(m, &nalgebra::DVector::from_vec(col));
        overlap.push(ok);
    }
    let cluster: Vec<usize> = (0..n).map(|i| data.cluster_of(i)).collect();
    Ok(ScoreMatrix {
        psi,
        mode,
        folds: g.folds.clone(),
        labels: policies.labels(),
        overlap,
        weight: data.weight.clone(),
        cluster,
        clusters: data.cluster_count(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScoreConfig {
    pub folds: usize,
    pub mode: ScoreMode,
    pub control: usize,
    pub cap: u64,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self { folds: DEFAULT_FOLDS, mode: ScoreMode::Levels, control: 0, cap: DEFAULT_POLICY_CAP }
    }
}

/// Fit, enumerate every deterministic policy, score, and summarize.
pub fn score_all_policies(data: &ScoreDataset, cfg: &ScoreConfig) -> Result<(ScoreMatrix, EstimateTable)> {
    let class = enumerate_policies(data.cells(), data.treatments(), cfg.cap)?;
    let g = fit_regression(data, cfg.folds)?;
    let scores = compute_scores(data, &class, &g, cfg.mode, cfg.control)?;
    let mut table = scores.to_estimate_table()?;
    if !g.fallbacks.is_empty() {
        table
            .meta_mut()
            .notes
            .push(format!("{} empty training cells used treatment-level means", g.fallbacks.len()));
    }
    Ok((scores, table))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform_p(cells: usize, treatments: usize) -> DMatrix<f64> {
        DMatrix::from_element(cells, treatments, 1.0 / treatments as f64)
    }

    fn small() -> ScoreDataset {
        ScoreDataset::new(
            vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0, 8.0],
            vec![0, 1, 0, 1, 0, 1, 0, 1],
            vec![0, 0, 1, 1, 0, 0, 1, 1],
            None,
            None,
            uniform_p(2, 2),
        )
        .unwrap()
    }

    #[test]
    fn enumeration_counts_and_labels() {
        assert_eq!(enumerate_policies(4, 5, DEFAULT_POLICY_CAP).unwrap().len(), 625);
        assert_eq!(enumerate_policies(4, 3, DEFAULT_POLICY_CAP).unwrap().len(), 81);
        assert_eq!(enumerate_policies(1, 1, DEFAULT_POLICY_CAP).unwrap().len(), 1);
        let c = enumerate_policies(2, 3, 100).unwrap();
        assert_eq!(c.label(0), "x0->t0;x1->t0");
        assert_eq!(c.label(1), "x0->t0;x1->t1");
        assert_eq!(c.label(3), "x0->t1;x1->t0");
        assert_eq!(c.prob(3, 0, 1), 1.0);
        assert_eq!(c.prob(3, 1, 1), 0.0);
        assert!(matches!(
            enumerate_policies(7, 10, DEFAULT_POLICY_CAP),
            Err(Error::PolicyCapExceeded { .. })
        ));
        assert!(enumerate_policies(1000, 10, DEFAULT_POLICY_CAP).is_err());
    }

    #[test]
    fn folds_are_balanced_within_cells() {
        let d = small();
        let f = stratified_folds(&d, 2);
        for x in 0..2 {
            for t in 0..2 {
                let fs: Vec<usize> = (0..d.len()).filter(|&i| d.x()[i] == x && d.t()[i] == t).map(|i| f[i]).collect();
                assert_eq!(fs.len(), 2);
                assert_ne!(fs[0], fs[1]);
            }
        }
    }

    #[test]
    fn constant_outcome_gives_constant_regression() {
        let d = small().with_outcomes(vec![2.5; 8]).unwrap();
        let g = fit_regression(&d, 2).unwrap();
        assert!(g.tables.iter().all(|t| t.iter().all(|v| *v == 2.5)));
    }

    #[test]
    fn empty_training_cell_falls_back() {
        let d = ScoreDataset::new(
            vec![1.0, 3.0, 5.0],
            vec![0, 0, 1],
            vec![0, 1, 1],
            None,
            None,
            uniform_p(2, 2),
        )
        .unwrap();
        let g = fit_regression(&d, 2).unwrap();
        assert!(!g.fallbacks.is_empty());
        assert!(g.tables.iter().all(|t| t.iter().all(|v| v.is_finite())));
    }

    #[test]
    fn observed_cell_without_propensity_rejected() {
        let mut p = uniform_p(1, 2);
        p[(0, 1)] = 0.0;
        p[(0, 0)] = 1.0;
        let err = ScoreDataset::new(vec![1.0], vec![1], vec![0], None, None, p).unwrap_err();
        assert!(matches!(err, Error::InvalidPropensity(_)));
    }

    #[test]
    fn bad_propensity_sum_rejected() {
        let p = DMatrix::from_row_slice(1, 2, &[0.5, 0.6]);
        assert!(ScoreDataset::new(vec![1.0], vec![0], vec![0], None, None, p).is_err());
    }

    #[test]
    fn ht_reduction_when_g_is_zero() {
        let d = small();
        let class = enumerate_policies(2, 2, 100).unwrap();
        let g = Regression {
            folds: vec![0; 8],
            tables: vec![DMatrix::zeros(2, 2)],
            fallbacks: vec![],
        };
        let s = compute_scores(&d, &class, &g, ScoreMode::Levels, 0).unwrap();
        for m in 0..class.len() {
            let h = d.representer(&class, m);
            let ht: f64 = h.iter().zip(d.y()).map(|(h, y)| h * y).sum::<f64>() / 8.0;
            assert!((s.mean(m) - ht).abs() < 1e-12);
        }
    }

    #[test]
    fn added_value_of_control_is_zero() {
        let d = small();
        let class = enumerate_policies(2, 2, 100).unwrap();
        let g = fit_regression(&d, 2).unwrap();
        let s = compute_scores(&d, &class, &g, ScoreMode::AddedValue, 0).unwrap();
        assert!(s.psi.column(0).iter().all(|v| *v == 0.0));
        let table = s.to_estimate_table().unwrap();
        assert_eq!(table.se()[0], 0.0);
        assert!(table.known()[0]);
    }

    #[test]
    fn overlap_violation_is_per_policy() {
        let p = DMatrix::from_row_slice(2, 2, &[0.5, 0.5, 1.0, 0.0]);
        let d = ScoreDataset::new(
            vec![1.0, 2.0, 3.0, 4.0],
            vec![0, 1, 0, 0],
            vec![0, 0, 1, 1],
            None,
            None,
            p,
        )
        .unwrap();
        let class = enumerate_policies(2, 2, 100).unwrap();
        let g = fit_regression(&d, 2).unwrap();
        let s = compute_scores(&d, &class, &g, ScoreMode::Levels, 0).unwrap();
        assert_eq!(s.overlap, vec![true, false, true, false]);
        assert_eq!(s.to_estimate_table().unwrap().len(), 2);
    }

    #[test]
    fn single_unit_cannot_give_se() {
        let d = ScoreDataset::new(vec![1.0, 2.0], vec![0, 0], vec![0, 0], None, Some(vec!["a".into(), "a".into()]), uniform_p(1, 1)).unwrap();
        let class = enumerate_policies(1, 1, 10).unwrap();
        let g = fit_regression(&d, 2).unwrap();
        let s = compute_scores(&d, &class, &g, ScoreMode::Levels, 0).unwrap();
        assert!(matches!(s.to_estimate_table(), Err(Error::InsufficientUnits(1))));
    }

    #[test]
    fn csv_round_trip() {
        let data = "y,t,x,weight,cluster\n1.5,0,0,1,a\n2.5,1,0,2,a\n0.5,0,1,1,b\n";
        let prop = "x,t,p\n0,0,0.5\n0,1,0.5\n1,0,1\n";
        let d = parse_dataset(data, prop).unwrap();
        assert_eq!(d.len(), 3);
        assert_eq!(d.weight(), &[1.0, 2.0, 1.0]);
        assert!(d.is_clustered());
        assert_eq!(d.cells(), 2);
        assert_eq!(d.treatments(), 2);
    }
}
