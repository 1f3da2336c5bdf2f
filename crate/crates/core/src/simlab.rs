//! Monte Carlo regret experiments.
//!
//! A truth table `(V, s)` is held fixed; each replication draws
//! `V* ~ N(V, diag(s^2))`, applies every rule to `(V*, s)`, and records the
//! regret `V_max - V(chosen)`. Statistics are reported as percentages of
//! `V_max`. The critical value is computed once per design under identity
//! correlation.

use std::collections::BTreeMap;
use std::io::Write;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::bootstrap::{fill_normals, quantile_finite, BootstrapConfig};
use crate::error::{Error, Result};
use crate::estimates::{load_estimates, EstimateTable};
use crate::rules::argmax_rw;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SimRule {
    Ewm,
    Polece,
    Control,
    Rw(f64),
}

impl SimRule {
    pub fn name(&self) -> String {
        match self {
            SimRule::Ewm => "EWM".into(),
            SimRule::Polece => "PoLeCe".into(),
            SimRule::Control => "Control".into(),
            SimRule::Rw(k) => format!("RW({k})"),
        }
    }
}

impl std::str::FromStr for SimRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let lower = s.to_ascii_lowercase();
        match lower.as_str() {
            "ewm" => Ok(SimRule::Ewm),
            "polece" => Ok(SimRule::Polece),
            "control" => Ok(SimRule::Control),
            _ => {
                let k = lower
                    .strip_prefix("rw:")
                    .or_else(|| lower.strip_prefix("rw(").and_then(|r| r.strip_suffix(')')))
                    .ok_or_else(|| Error::InvalidConfig(format!("unknown rule `{s}`")))?;
                let k: f64 = k
                    .trim()
                    .parse()
                    .map_err(|_| Error::InvalidConfig(format!("bad penalty in rule `{s}`")))?;
                if !(k >= 0.0) || !k.is_finite() {
                    return Err(Error::InvalidConfig(format!("penalty in rule `{s}` must be >= 0")));
                }
                Ok(SimRule::Rw(k))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDesign {
    /// `(V, s)`; any correlation on the table is ignored.
    pub truth: EstimateTable,
    pub control: Option<usize>,
    pub replications: usize,
    pub bootstrap: BootstrapConfig,
    pub rules: Vec<SimRule>,
}

impl SimDesign {
    pub fn new(truth: EstimateTable, replications: usize, bootstrap: BootstrapConfig) -> Self {
        Self {
            truth,
            control: None,
            replications,
            bootstrap,
            rules: vec![SimRule::Ewm, SimRule::Polece],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.bootstrap.validate()?;
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        if let Some(c) = self.control {
            if c >= self.truth.len() {
                return Err(Error::InvalidConfig(format!("control index {c} out of range")));
            }
        }
        if self.rules.is_empty() {
            return Err(Error::InvalidConfig("no rules to simulate".into()));
        }
        if self.rules.contains(&SimRule::Control) && self.control.is_none() {
            return Err(Error::InvalidConfig("rule Control needs a control policy".into()));
        }
        if self.v_max() <= 0.0 {
            return Err(Error::InvalidConfig(format!(
                "percentages relative to V_max need V_max > 0 (got {})",
                self.v_max()
            )));
        }
        Ok(())
    }

    pub fn v_max(&self) -> f64 {
        self.truth.v_hat().iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    /// `max_pi s(pi)`.
    pub fn sigma_bar(&self) -> f64 {
        self.truth.se().iter().copied().fold(0.0, f64::max)
    }

    /// Indices of the best policies.
    pub fn best_set(&self) -> Vec<usize> {
        let v_max = self.v_max();
        (0..self.truth.len()).filter(|&j| self.truth.v_hat()[j] == v_max).collect()
    }

    /// `min s(pi)` over the best policies.
    pub fn sigma_under(&self) -> f64 {
        self.best_set()
            .iter()
            .map(|&j| self.truth.se()[j])
            .fold(f64::INFINITY, f64::min)
    }

    fn identity_truth(&self) -> Result<EstimateTable> {
        let t = &self.truth;
        EstimateTable::from_parts(
            t.labels().to_vec(),
            t.v_hat().to_vec(),
            t.se().to_vec(),
            t.known().to_vec(),
            None,
            Default::default(),
        )
    }
}

/// Replication `r` uses its own counter-based stream, disjoint from the
/// bootstrap streams (which occupy the low half of the stream space).
pub fn replication_stream(seed: u64, r: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream((1u64 << 63) | r);
    rng.set_word_pos(0);
    rng
}

fn draw_estimates(design: &SimDesign, r: usize, g: &mut [f64], out: &mut [f64]) {
    let mut rng = replication_stream(design.bootstrap.seed, r as u64);
    fill_normals(&mut rng, g);
    for ((o, v), (s, z)) in out.iter_mut().zip(design.truth.v_hat()).zip(design.truth.se().iter().zip(g.iter())) {
        *o = v + s * z;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RuleStats {
    pub rule: SimRule,
    pub avg_regret_pct: f64,
    pub median_regret_pct: f64,
    pub p95_regret_pct: f64,
    /// Mean of `(V*(chosen) - q s(chosen) - V_max) / V_max`, in percent.
    pub avg_lcb_pct: f64,
    /// Frequency of `V(chosen) >= V*(chosen) - q s(chosen)`.
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimResult {
    pub stats: Vec<RuleStats>,
    pub q_hat: f64,
    pub v_max: f64,
    pub sigma_bar: f64,
    pub sigma_under: f64,
    pub replications: usize,
    pub seed: u64,
}

impl SimResult {
    pub fn get(&self, rule: SimRule) -> Option<&RuleStats> {
        self.stats.iter().find(|s| s.rule == rule)
    }

    /// Rule rows, statistic columns; diagnostics go in the comment header.
    pub fn write_csv<W: Write>(&self, mut w: W, header: &[String]) -> Result<()> {
        for line in header {
            writeln!(w, "# {line}")?;
        }
        writeln!(
            w,
            "# q_hat={} v_max={} sigma_bar={} sigma_under={} replications={}",
            self.q_hat, self.v_max, self.sigma_bar, self.sigma_under, self.replications
        )?;
        let mut out = csv::Writer::from_writer(w);
        out.write_record([
            "rule",
            "avg_regret_pct",
            "median_regret_pct",
            "p95_regret_pct",
            "avg_lcb_pct",
            "coverage",
        ])?;
        for s in &self.stats {
            out.write_record([
                s.rule.name(),
                format!("{:.4}", s.avg_regret_pct),
                format!("{:.4}", s.median_regret_pct),
                format!("{:.4}", s.p95_regret_pct),
                format!("{:.4}", s.avg_lcb_pct),
                format!("{:.4}", s.coverage),
            ])?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Nearest-rank percentile: the `ceil(p R)`-th smallest value.
pub fn percentile(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    let raw = p * n as f64;
    let rank = ((raw - 1e-9 * raw.max(1.0)).ceil() as usize).clamp(1, n);
    sorted[rank - 1]
}

fn choose(rule: SimRule, v: &[f64], se: &[f64], q: f64, control: Option<usize>) -> usize {
    match rule {
        SimRule::Ewm => argmax_rw(v, se, 0.0),
        SimRule::Polece => argmax_rw(v, se, q),
        SimRule::Rw(k) => argmax_rw(v, se, k),
        SimRule::Control => control.expect("validated"),
    }
}

pub fn run_sim(design: &SimDesign) -> Result<SimResult> {
    design.validate()?;
    let q_hat = quantile_finite(&design.identity_truth()?, &design.bootstrap)?.q_hat;
    run_sim_with_quantile(design, q_hat)
}

/// As [`run_sim`] with a given critical value.
pub fn run_sim_with_quantile(design: &SimDesign, q_hat: f64) -> Result<SimResult> {
    design.validate()?;
    let p = design.truth.len();
    let (truth, se) = (design.truth.v_hat(), design.truth.se());
    let v_max = design.v_max();
    let rules = &design.rules;

    // per replication, per rule: (regret, lcb, covered)
    let outcomes: Vec<Vec<(f64, f64, bool)>> = (0..design.replications)
        .into_par_iter()
        .map_init(
            || (vec![0.0; p], vec![0.0; p]),
            |(g, v), r| {
                draw_estimates(design, r, g, v);
                rules
                    .iter()
                    .map(|&rule| {
                        let j = choose(rule, v, se, q_hat, design.control);
                        let lcb = v[j] - q_hat * se[j];
                        (v_max - truth[j], lcb, truth[j] >= lcb)
                    })
                    .collect()
            },
        )
        .collect();

    let n = design.replications as f64;
    let stats = rules
        .iter()
        .enumerate()
        .map(|(c, &rule)| {
            let mut regret: Vec<f64> = outcomes.iter().map(|o| 100.0 * o[c].0 / v_max).collect();
            let avg_lcb = outcomes.iter().map(|o| 100.0 * (o[c].1 - v_max) / v_max).sum::<f64>() / n;
            let covered = outcomes.iter().filter(|o| o[c].2).count() as f64 / n;
            let avg = regret.iter().sum::<f64>() / n;
            regret.sort_by(|a, b| a.total_cmp(b));
            RuleStats {
                rule,
                avg_regret_pct: avg,
                median_regret_pct: percentile(&regret, 0.5),
                p95_regret_pct: percentile(&regret, 0.95),
                avg_lcb_pct: avg_lcb,
                coverage: covered,
            }
        })
        .collect();

    Ok(SimResult {
        stats,
        q_hat,
        v_max,
        sigma_bar: design.sigma_bar(),
        sigma_under: design.sigma_under(),
        replications: design.replications,
        seed: design.bootstrap.seed,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct BoundCheck {
    pub k: f64,
    pub beta: f64,
    /// `(1 - beta)`-quantile of the maximal standardized error over all policies.
    pub q_all: f64,
    /// The same over the best policies.
    pub q_best: f64,
    /// `sigma_under (q_best + k) + sigma_bar (q_all - k)_+`.
    pub bound: f64,
    pub violation_frequency: f64,
    pub replications: usize,
}

/// Frequency with which the realized regret of RW(k) exceeds the
/// high-probability regret bound; the bound's quantiles are simulated
/// directly with the design's bootstrap settings.
pub fn regret_bound_check(design: &SimDesign, k: f64, beta: f64) -> Result<BoundCheck> {
    design.bootstrap.validate()?;
    if design.replications == 0 {
        return Err(Error::InvalidConfig("replications must be >= 1".into()));
    }
    if !(beta > 0.0 && beta < 0.5) {
        return Err(Error::InvalidConfig(format!("beta = {beta} must lie in (0, 0.5)")));
    }
    if !(k >= 0.0) || !k.is_finite() {
        return Err(Error::InvalidConfig(format!("penalty k = {k} must be finite and >= 0")));
    }
    let cfg = BootstrapConfig { alpha: beta, ..design.bootstrap };
    let all = design.identity_truth()?;
    let q_all = quantile_finite(&all, &cfg)?.q_hat;
    let best = design.best_set();
    let t = &design.truth;
    let best_table = EstimateTable::from_parts(
        best.iter().map(|&j| t.labels()[j].clone()).collect(),
        best.iter().map(|&j| t.v_hat()[j]).collect(),
        best.iter().map(|&j| t.se()[j]).collect(),
        best.iter().map(|&j| t.known()[j]).collect(),
        None,
        Default::default(),
    )?;
    let q_best = quantile_finite(&best_table, &cfg)?.q_hat;
    let bound = design.sigma_under() * (q_best + k) + design.sigma_bar() * (q_all - k).max(0.0);

    let p = t.len();
    let (truth, se) = (t.v_hat(), t.se());
    let v_max = design.v_max();
    let violations = (0..design.replications)
        .into_par_iter()
        .map_init(
            || (vec![0.0; p], vec![0.0; p]),
            |(g, v), r| {
                draw_estimates(design, r, g, v);
                let j = argmax_rw(v, se, k);
                usize::from(v_max - truth[j] > bound)
            },
        )
        .sum::<usize>();
    Ok(BoundCheck {
        k,
        beta,
        q_all,
        q_best,
        bound,
        violation_frequency: violations as f64 / design.replications as f64,
        replications: design.replications,
    })
}

/// Parse a `key = value` design file. Keys: `truth` (CSV path, relative to
/// `base`), `replications`, `alpha`, `draws`, `seed`, `rules` (comma list of
/// `ewm`, `polece`, `control`, `rw:<k>`), `control` (label or 0-based index).
pub fn parse_design(text: &str, base: &Path) -> Result<SimDesign> {
    let mut kv = BTreeMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("design line {}: expected key = value", n + 1)))?;
        kv.insert(k.trim().to_ascii_lowercase(), v.trim().to_string());
    }
    let known = ["truth", "replications", "alpha", "draws", "seed", "rules", "control"];
    if let Some(k) = kv.keys().find(|k| !known.contains(&k.as_str())) {
        return Err(Error::Parse(format!("unknown design key `{k}`")));
    }
    let truth_path = kv
        .get("truth")
        .ok_or_else(|| Error::Parse("design needs a `truth` path".into()))?;
    let truth = load_estimates(base.join(truth_path))?;
    let num = |key: &str, default: &str| -> Result<String> { Ok(kv.get(key).map_or(default, |s| s.as_str()).to_string()) };
    let parse_err = |key: &str| Error::Parse(format!("bad value for `{key}`"));
    let replications: usize = num("replications", "10000")?.parse().map_err(|_| parse_err("replications"))?;
    let alpha: f64 = num("alpha", "0.05")?.parse().map_err(|_| parse_err("alpha"))?;
    let draws: usize = num("draws", "100000")?.parse().map_err(|_| parse_err("draws"))?;
    let seed: u64 = num("seed", "0")?.parse().map_err(|_| parse_err("seed"))?;
    let control = match kv.get("control") {
        None => None,
        Some(c) => Some(match truth.index_of(c) {
            Some(j) => j,
            None => c.parse().map_err(|_| Error::InvalidConfig(format!("unknown control `{c}`")))?,
        }),
    };
    let rules = match kv.get("rules") {
        None => {
            let mut r = vec![SimRule::Ewm, SimRule::Polece];
            if control.is_some() {
                r.push(SimRule::Control);
            }
            r
        }
        Some(list) => list
            .split(',')
            .filter(|s| !s.trim().is_empty())
            .map(str::parse)
            .collect::<Result<_>>()?,
    };
    let design = SimDesign {
        truth,
        control,
        replications,
        bootstrap: BootstrapConfig::new(alpha, draws, seed)?,
        rules,
    };
    design.validate()?;
    Ok(design)
}

pub fn load_design(path: impl AsRef<Path>) -> Result<SimDesign> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path)?;
    parse_design(&text, path.parent().unwrap_or(Path::new(".")))
}
