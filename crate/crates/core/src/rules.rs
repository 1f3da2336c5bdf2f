//! Selection rules: empirical welfare maximization (EWM), the risk-aware
//! rule RW(k), and PoLeCe, which is RW with `k` set to the bootstrap
//! critical value so that its objective is a lower confidence bound on the
//! welfare it delivers.

use serde_json::{json, Map, Value};

use crate::bootstrap::{quantile_finite, quantile_polytope, BootstrapConfig, QuantileResult};
use crate::conic::{InnerProblem, SOLVER_TOL};
use crate::error::{Error, Result};
use crate::estimates::{policy_risk, policy_value, Allocation, EstimateTable, PolicySpace, Polytope};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Rule {
    Ewm,
    Rw { k: f64 },
    Polece { alpha: f64 },
}

impl Rule {
    pub fn name(&self) -> String {
        match self {
            Rule::Ewm => "EWM".to_string(),
            Rule::Rw { k } => format!("RW({k})"),
            Rule::Polece { alpha } => format!("PoLeCe({alpha})"),
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            Rule::Ewm => "EWM",
            Rule::Rw { .. } => "RW",
            Rule::Polece { .. } => "PoLeCe",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Chosen {
    Index(usize),
    Allocation(Allocation),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SelectionReport {
    pub rule: Rule,
    pub chosen: Chosen,
    pub labels: Vec<String>,
    pub v_hat: f64,
    pub s_hat: f64,
    pub k_used: f64,
    /// Critical value behind the report, when one was computed.
    pub q_hat: Option<f64>,
    /// `v_hat - k_used * s_hat`.
    pub lcb: f64,
    /// `v_hat - q_hat * s_hat`: the uniform-band bound at the chosen policy.
    pub band_lcb: Option<f64>,
    pub quantile: Option<QuantileResult>,
    pub config: Option<BootstrapConfig>,
}

impl SelectionReport {
    fn build(rule: Rule, chosen: Chosen, labels: &[String], v_hat: f64, s_hat: f64, k: f64) -> Self {
        let rule = if k == 0.0 && matches!(rule, Rule::Rw { .. }) {
            Rule::Ewm
        } else {
            rule
        };
        Self {
            rule,
            chosen,
            labels: labels.to_vec(),
            v_hat,
            s_hat,
            k_used: k,
            q_hat: None,
            lcb: v_hat - k * s_hat,
            band_lcb: None,
            quantile: None,
            config: None,
        }
    }

    /// Shares over the menu; a finite choice is the corresponding vertex.
    pub fn weights(&self) -> Vec<f64> {
        match &self.chosen {
            Chosen::Index(j) => Allocation::vertex(self.labels.len(), *j).into_weights(),
            Chosen::Allocation(a) => a.weights().to_vec(),
        }
    }

    pub fn chosen_index(&self) -> Option<usize> {
        match self.chosen {
            Chosen::Index(j) => Some(j),
            Chosen::Allocation(_) => None,
        }
    }

    /// Attach the uniform-band bound `v_hat - q * s_hat`.
    pub fn with_band(mut self, q: f64) -> Self {
        self.band_lcb = Some(self.v_hat - q * self.s_hat);
        if self.q_hat.is_none() && !matches!(self.rule, Rule::Polece { .. }) {
            self.q_hat = Some(q);
        }
        self
    }

    /// Flat JSON object; weights keyed by label are rounded to 4 decimals and
    /// the full-precision shares are kept in `weights_raw`.
    pub fn to_json(&self) -> Value {
        let mut m = Map::new();
        m.insert("rule".into(), json!(self.rule.kind()));
        m.insert("rule_name".into(), json!(self.rule.name()));
        match self.rule {
            Rule::Rw { k } => {
                m.insert("k".into(), json!(k));
            }
            Rule::Polece { alpha } => {
                m.insert("alpha".into(), json!(alpha));
            }
            Rule::Ewm => {}
        }
        if let Some(cfg) = &self.config {
            m.entry("alpha").or_insert(json!(cfg.alpha));
            m.insert("draws".into(), json!(cfg.draws));
            m.insert("seed".into(), json!(cfg.seed));
        }
        m.insert("v_hat".into(), json!(self.v_hat));
        m.insert("s_hat".into(), json!(self.s_hat));
        m.insert("k_used".into(), json!(self.k_used));
        m.insert("q_hat".into(), json!(self.q_hat));
        m.insert("lcb".into(), json!(self.lcb));
        m.insert("band_lcb".into(), json!(self.band_lcb));
        if let Some(q) = &self.quantile {
            m.insert("clamped_fraction".into(), json!(q.clamped_fraction));
            if let Some(w) = &q.warning {
                m.insert("warning".into(), json!(w));
            }
        }
        match self.chosen {
            Chosen::Index(j) => {
                m.insert("chosen".into(), json!(self.labels[j]));
                m.insert("chosen_index".into(), json!(j));
            }
            Chosen::Allocation(_) => {
                m.insert("chosen".into(), Value::Null);
            }
        }
        let w = self.weights();
        let mut shares = Map::new();
        for (label, x) in self.labels.iter().zip(&w) {
            shares.insert(label.clone(), json!(round4(*x)));
        }
        m.insert("weights".into(), Value::Object(shares));
        m.insert("weights_raw".into(), json!(w));
        Value::Object(m)
    }
}

pub fn round4(x: f64) -> f64 {
    let r = (x * 1e4).round() / 1e4;
    if r == 0.0 {
        0.0
    } else {
        r
    }
}

fn check_k(k: f64) -> Result<()> {
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::InvalidConfig(format!("penalty k = {k} must be finite and >= 0")));
    }
    Ok(())
}

/// `argmax_j v_hat[j] - k se[j]`; ties go to the smaller se, then the smaller index.
pub fn select_rw_finite(table: &EstimateTable, k: f64) -> Result<SelectionReport> {
    check_k(k)?;
    if table.is_empty() {
        return Err(Error::EmptyTable);
    }
    let (v, se) = (table.v_hat(), table.se());
    let best = argmax_rw(v, se, k);
    Ok(SelectionReport::build(
        Rule::Rw { k },
        Chosen::Index(best),
        table.labels(),
        v[best],
        se[best],
        k,
    ))
}

/// Index maximizing `v[j] - k se[j]` with the shared tie rule. `v` must be nonempty.
pub fn argmax_rw(v: &[f64], se: &[f64], k: f64) -> usize {
    let mut best = 0usize;
    let mut best_obj = v[0] - k * se[0];
    for j in 1..v.len() {
        let obj = v[j] - k * se[j];
        if obj > best_obj || (obj == best_obj && se[j] < se[best]) {
            best = j;
            best_obj = obj;
        }
    }
    best
}

pub fn select_ewm_finite(table: &EstimateTable) -> Result<SelectionReport> {
    select_rw_finite(table, 0.0)
}

/// Allocation maximizing `pi'v_hat - k sqrt(pi' Sigma pi)`.
pub fn select_rw_polytope(table: &EstimateTable, space: &Polytope, k: f64) -> Result<SelectionReport> {
    check_k(k)?;
    let problem = InnerProblem::new(&table.covariance(), space)?;
    select_rw_with(table, &problem, k, None)
}

pub(crate) fn select_rw_with(
    table: &EstimateTable,
    problem: &InnerProblem,
    k: f64,
    warm: Option<&[f64]>,
) -> Result<SelectionReport> {
    if problem.dim() != table.len() {
        return Err(Error::DimensionMismatch(format!(
            "polytope over {} programs, table has {}",
            problem.dim(),
            table.len()
        )));
    }
    let sol = problem.solve(table.v_hat(), k, SOLVER_TOL, warm)?;
    let pi = sol.pi_star;
    let v = policy_value(table, &pi)?;
    let s = policy_risk(table, &pi)?;
    Ok(SelectionReport::build(
        Rule::Rw { k },
        Chosen::Allocation(pi),
        table.labels(),
        v,
        s,
        k,
    ))
}

pub fn select_ewm_polytope(table: &EstimateTable, space: &Polytope) -> Result<SelectionReport> {
    select_rw_polytope(table, space, 0.0)
}

/// RW(k) on either kind of policy space.
pub fn select_rw(table: &EstimateTable, space: &PolicySpace, k: f64) -> Result<SelectionReport> {
    match space {
        PolicySpace::Finite { size } => {
            check_finite_size(table, *size)?;
            select_rw_finite(table, k)
        }
        PolicySpace::Polytope(p) => select_rw_polytope(table, p, k),
    }
}

fn check_finite_size(table: &EstimateTable, size: usize) -> Result<()> {
    if size != table.len() {
        return Err(Error::DimensionMismatch(format!(
            "finite space of size {size}, table has {}",
            table.len()
        )));
    }
    Ok(())
}

/// Bootstrap critical value for the space.
pub fn critical_value(table: &EstimateTable, space: &PolicySpace, cfg: &BootstrapConfig) -> Result<QuantileResult> {
    match space {
        PolicySpace::Finite { size } => {
            check_finite_size(table, *size)?;
            quantile_finite(table, cfg)
        }
        PolicySpace::Polytope(p) => quantile_polytope(table, p, cfg),
    }
}

/// PoLeCe: RW with `k = q_hat_{1-alpha}`; `lcb` is the maximized lower confidence bound.
pub fn select_polece(table: &EstimateTable, space: &PolicySpace, cfg: &BootstrapConfig) -> Result<SelectionReport> {
    let quantile = critical_value(table, space, cfg)?;
    polece_with_quantile(table, space, cfg, quantile)
}

/// PoLeCe with an already computed critical value.
pub fn polece_with_quantile(
    table: &EstimateTable,
    space: &PolicySpace,
    cfg: &BootstrapConfig,
    quantile: QuantileResult,
) -> Result<SelectionReport> {
    let q = quantile.q_hat;
    let mut report = select_rw(table, space, q)?;
    report.rule = Rule::Polece { alpha: cfg.alpha };
    report.k_used = q;
    report.lcb = report.v_hat - q * report.s_hat;
    report.q_hat = Some(q);
    report.band_lcb = Some(report.lcb);
    report.quantile = Some(quantile);
    report.config = Some(*cfg);
    Ok(report)
}

/// `LV[j] = v_hat[j] - q se[j]` for every row.
pub fn lcb_all(table: &EstimateTable, q_hat: f64) -> Result<Vec<f64>> {
    if !(q_hat >= 0.0) || !q_hat.is_finite() {
        return Err(Error::InvalidConfig(format!("critical value {q_hat} must be finite and >= 0")));
    }
    Ok(table
        .v_hat()
        .iter()
        .zip(table.se())
        .map(|(v, s)| v - q_hat * s)
        .collect())
}

/// EWM and PoLeCe side by side, sharing one bootstrap run.
#[derive(Debug, Clone, PartialEq)]
pub struct RuleComparison {
    pub ewm: SelectionReport,
    pub polece: SelectionReport,
}

impl RuleComparison {
    pub fn q_hat(&self) -> f64 {
        self.polece.k_used
    }
}

pub fn compare_rules(table: &EstimateTable, space: &PolicySpace, cfg: &BootstrapConfig) -> Result<RuleComparison> {
    let polece = select_polece(table, space, cfg)?;
    let q = polece.k_used;
    let mut ewm = select_rw(table, space, 0.0)?.with_band(q);
    ewm.config = Some(*cfg);
    Ok(RuleComparison { ewm, polece })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(v: &[f64], se: &[f64]) -> EstimateTable {
        EstimateTable::new((0..v.len()).map(|i| format!("p{i}")).collect(), v.to_vec(), se.to_vec()).unwrap()
    }

    #[test]
    fn identical_rows_pick_first() {
        let t = table(&[1.0, 1.0], &[0.5, 0.5]);
        assert_eq!(select_rw_finite(&t, 0.7).unwrap().chosen_index(), Some(0));
    }

    #[test]
    fn ties_prefer_lower_risk() {
        let t = table(&[1.0, 1.0], &[0.9, 0.5]);
        assert_eq!(select_ewm_finite(&t).unwrap().chosen_index(), Some(1));
    }

    #[test]
    fn huge_penalty_picks_min_se() {
        let t = table(&[5.0, 1.0, 3.0], &[2.0, 0.3, 0.4]);
        assert_eq!(select_rw_finite(&t, 1e6).unwrap().chosen_index(), Some(1));
    }

    #[test]
    fn rw_zero_is_reported_as_ewm() {
        let t = table(&[5.0, 1.0], &[2.0, 0.3]);
        let r = select_rw_finite(&t, 0.0).unwrap();
        assert_eq!(r.rule, Rule::Ewm);
        assert_eq!(r.k_used, 0.0);
        assert_eq!(r.lcb, r.v_hat);
    }

    #[test]
    fn negative_k_is_rejected() {
        let t = table(&[5.0], &[2.0]);
        assert!(select_rw_finite(&t, -1.0).is_err());
        assert!(lcb_all(&t, -0.1).is_err());
    }

    #[test]
    fn lcb_all_examples() {
        let t = EstimateTable::from_parts(
            vec!["a".into(), "b".into()],
            vec![1.0, 2.0],
            vec![0.0, 0.5],
            vec![true, false],
            None,
            Default::default(),
        )
        .unwrap();
        assert_eq!(lcb_all(&t, 0.0).unwrap(), vec![1.0, 2.0]);
        assert_eq!(lcb_all(&t, 3.0).unwrap(), vec![1.0, 0.5]);
    }

    #[test]
    fn single_program_polytope_gets_full_weight() {
        let t = table(&[0.3], &[0.2]);
        let space = Polytope::simplex(1).unwrap();
        for k in [0.0, 1.0, 10.0] {
            let r = select_rw_polytope(&t, &space, k).unwrap();
            assert_eq!(r.weights(), vec![1.0]);
        }
    }

    #[test]
    fn report_json_is_flat() {
        let t = table(&[1.84, 1.43], &[0.47, 0.38]);
        let space = Polytope::simplex(2).unwrap();
        let r = select_rw_polytope(&t, &space, 2.9).unwrap();
        let j = r.to_json();
        assert_eq!(j["rule"], "RW");
        assert!(j["weights"]["p0"].is_number());
        assert_eq!(j["weights_raw"].as_array().unwrap().len(), 2);
    }
}
