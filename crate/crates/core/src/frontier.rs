//! Efficient decision frontier: the concave, nondecreasing upper envelope of
//! (risk, value) pairs.

use std::cmp::Ordering;
use std::io::Write;

use rayon::prelude::*;
use serde_json::{Map, Value};

use crate::conic::InnerProblem;
use crate::error::{Error, Result};
use crate::estimates::{EstimateTable, Polytope};
use crate::rules::select_rw_with;

#[derive(Debug, Clone, PartialEq)]
pub enum FrontierPolicy {
    Index(usize),
    Allocation(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrontierPoint {
    pub risk: f64,
    pub value: f64,
    pub policy: FrontierPolicy,
    /// Penalty that generated the point in a polytope sweep.
    pub k: Option<f64>,
}

impl FrontierPoint {
    pub fn new(risk: f64, value: f64, index: usize) -> Self {
        Self { risk, value, policy: FrontierPolicy::Index(index), k: None }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Frontier {
    points: Vec<FrontierPoint>,
}

impl Frontier {
    pub fn points(&self) -> &[FrontierPoint] {
        &self.points
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn into_points(self) -> Vec<FrontierPoint> {
        self.points
    }

    /// Piecewise-linear envelope at `risk`; `None` left of the first point.
    /// Right of the last point the envelope is flat.
    pub fn envelope_at(&self, risk: f64) -> Option<f64> {
        let first = self.points.first()?;
        if risk < first.risk {
            return None;
        }
        for w in self.points.windows(2) {
            let (a, b) = (&w[0], &w[1]);
            if risk <= b.risk {
                let t = (risk - a.risk) / (b.risk - a.risk);
                return Some(a.value + t * (b.value - a.value));
            }
        }
        Some(self.points.last().unwrap().value)
    }

    /// Nearest frontier point to `(risk, value)` in Euclidean distance.
    pub fn nearest(&self, risk: f64, value: f64) -> Option<&FrontierPoint> {
        self.points.iter().min_by(|a, b| {
            let da = (a.risk - risk).hypot(a.value - value);
            let db = (b.risk - risk).hypot(b.value - value);
            da.total_cmp(&db)
        })
    }

    /// CSV rows `risk,value,k,weights_json` in ascending risk. Weights are a
    /// JSON object keyed by `labels`; finite-menu points are one-hot. With
    /// `markers` (one per point) a trailing `marker` column is added.
    pub fn write_csv<W: Write>(
        &self,
        mut w: W,
        labels: &[String],
        header: &[String],
        markers: Option<&[String]>,
    ) -> Result<()> {
        if let Some(m) = markers {
            if m.len() != self.len() {
                return Err(Error::DimensionMismatch(format!("{} markers for {} points", m.len(), self.len())));
            }
        }
        for line in header {
            writeln!(w, "# {line}")?;
        }
        let mut out = csv::Writer::from_writer(w);
        let mut head = vec!["risk", "value", "k", "weights_json"];
        if markers.is_some() {
            head.push("marker");
        }
        out.write_record(&head)?;
        for (i, p) in self.points.iter().enumerate() {
            let weights = match &p.policy {
                FrontierPolicy::Index(j) => {
                    let mut v = vec![0.0; labels.len()];
                    if *j < v.len() {
                        v[*j] = 1.0;
                    }
                    v
                }
                FrontierPolicy::Allocation(v) => v.clone(),
            };
            if weights.len() != labels.len() {
                return Err(Error::DimensionMismatch(format!(
                    "{} labels for {} weights",
                    labels.len(),
                    weights.len()
                )));
            }
            let obj: Map<String, Value> = labels
                .iter()
                .zip(&weights)
                .map(|(l, x)| (l.clone(), Value::from(*x)))
                .collect();
            let mut row = vec![
                p.risk.to_string(),
                p.value.to_string(),
                p.k.map(|k| k.to_string()).unwrap_or_default(),
                Value::Object(obj).to_string(),
            ];
            if let Some(m) = markers {
                row.push(m[i].clone());
            }
            out.write_record(&row)?;
        }
        out.flush()?;
        Ok(())
    }
}

fn policy_cmp(a: &FrontierPolicy, b: &FrontierPolicy) -> Ordering {
    match (a, b) {
        (FrontierPolicy::Index(i), FrontierPolicy::Index(j)) => i.cmp(j),
        (FrontierPolicy::Index(_), FrontierPolicy::Allocation(_)) => Ordering::Less,
        (FrontierPolicy::Allocation(_), FrontierPolicy::Index(_)) => Ordering::Greater,
        (FrontierPolicy::Allocation(x), FrontierPolicy::Allocation(y)) => x
            .iter()
            .zip(y)
            .map(|(p, q)| p.total_cmp(q))
            .find(|o| o.is_ne())
            .unwrap_or(x.len().cmp(&y.len())),
    }
}

fn point_cmp(a: &FrontierPoint, b: &FrontierPoint) -> Ordering {
    a.risk
        .total_cmp(&b.risk)
        .then(b.value.total_cmp(&a.value))
        .then_with(|| policy_cmp(&a.policy, &b.policy))
        .then_with(|| match (a.k, b.k) {
            (Some(x), Some(y)) => x.total_cmp(&y),
            (x, y) => x.is_some().cmp(&y.is_some()),
        })
}

/// `(p - a)` turns left of `(b - a)`, i.e. slope(a, p) > slope(a, b) for
/// `a.risk < b.risk < p.risk`; compared without division.
fn steeper(a: &FrontierPoint, b: &FrontierPoint, p: &FrontierPoint) -> bool {
    (p.value - a.value) * (b.risk - a.risk) > (b.value - a.value) * (p.risk - a.risk)
}

/// Build the frontier from arbitrary points: sort by risk (ties: higher value
/// first), drop exact duplicates, skip points below the running frontier value
/// and pop middle points that would break concavity. Collinear points stay.
pub fn frontier_finite(mut points: Vec<FrontierPoint>) -> Result<Frontier> {
    if points.is_empty() {
        return Err(Error::EmptyTable);
    }
    for p in &points {
        if !p.risk.is_finite() || !p.value.is_finite() {
            return Err(Error::NonFinite(format!("frontier point ({}, {})", p.risk, p.value)));
        }
        if p.risk < 0.0 {
            return Err(Error::InvalidConfig(format!("negative risk {}", p.risk)));
        }
    }
    points.sort_by(point_cmp);
    points.dedup_by(|b, a| a.risk == b.risk && a.value == b.value);

    let mut stack: Vec<FrontierPoint> = Vec::new();
    for p in points {
        if let Some(last) = stack.last() {
            if p.value < last.value || p.risk == last.risk {
                continue;
            }
        }
        while stack.len() >= 2 && steeper(&stack[stack.len() - 2], &stack[stack.len() - 1], &p) {
            stack.pop();
        }
        stack.push(p);
    }
    Ok(Frontier { points: stack })
}

/// Frontier of a finite menu: one point `(se_j, v_hat_j)` per row.
pub fn frontier_from_table(table: &EstimateTable) -> Result<Frontier> {
    let points = table
        .se()
        .iter()
        .zip(table.v_hat())
        .enumerate()
        .map(|(j, (s, v))| FrontierPoint::new(*s, *v, j))
        .collect();
    frontier_finite(points)
}

/// Sweep RW(k) over `k_grid` on the polytope and take the envelope.
pub fn frontier_polytope(table: &EstimateTable, space: &Polytope, k_grid: &[f64]) -> Result<Frontier> {
    if k_grid.is_empty() {
        return Err(Error::InvalidConfig("empty k grid".into()));
    }
    if let Some(k) = k_grid.iter().find(|k| !(**k >= 0.0) || !k.is_finite()) {
        return Err(Error::InvalidConfig(format!("k grid value {k} must be finite and >= 0")));
    }
    let problem = InnerProblem::new(&table.covariance(), space)?;
    let points = k_grid
        .par_iter()
        .map(|&k| {
            let r = select_rw_with(table, &problem, k, None)?;
            Ok(FrontierPoint {
                risk: r.s_hat,
                value: r.v_hat,
                policy: FrontierPolicy::Allocation(r.weights()),
                k: Some(k),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    frontier_finite(points)
}

/// `k = 0` plus `count` log-spaced values over `[q/50, 5q]`, descending, with
/// `q` itself inserted so the PoLeCe allocation is on the sweep.
pub fn default_k_grid(q_hat: f64, count: usize) -> Vec<f64> {
    let mut grid = vec![0.0];
    if q_hat > 0.0 && q_hat.is_finite() {
        let (lo, hi) = ((q_hat / 50.0).ln(), (5.0 * q_hat).ln());
        let n = count.max(2);
        grid.extend((0..n).map(|i| (lo + (hi - lo) * i as f64 / (n - 1) as f64).exp()));
        grid.push(q_hat);
    }
    grid.sort_by(|a, b| b.total_cmp(a));
    grid.dedup();
    grid
}
