//! Command-line front end. Every output carries a provenance header with the
//! seed, draw count, level, a SHA-256 digest of the inputs and the tool version.

use std::fmt::Write as _;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::bootstrap::{BootstrapConfig, QuantileResult};
use crate::drscore::{self, ScoreConfig, ScoreMode};
use crate::error::{Error, Result};
use crate::estimates::{
    load_estimates, load_estimates_with_corr, parse_estimates, write_correlation, write_estimates, EstimateTable,
    PolicySpace, Polytope,
};
use crate::frontier::{default_k_grid, frontier_from_table, frontier_polytope, Frontier, FrontierPolicy};
use crate::rules::{self, critical_value, lcb_all, polece_with_quantile, SelectionReport};
use crate::simlab::{self, load_design};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, Parser)]
#[command(name = "polece", version, about = "Risk-aware policy selection with confidence")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Select a policy or allocation and report its lower confidence bound.
    Select(SelectArgs),
    /// Trace the efficient decision frontier.
    Frontier(FrontierArgs),
    /// Doubly-robust estimate table from trial micro-data.
    Scores(ScoresArgs),
    /// Monte Carlo regret experiment from a design file.
    Simulate(SimulateArgs),
    /// Bootstrap critical value only.
    Quantile(QuantileArgs),
}

#[derive(Debug, Clone, Args)]
pub struct BootstrapArgs {
    #[arg(long, default_value_t = 0.05)]
    pub alpha: f64,
    /// Bootstrap draws B.
    #[arg(long, default_value_t = 100_000)]
    pub draws: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl BootstrapArgs {
    fn config(&self) -> Result<BootstrapConfig> {
        BootstrapConfig::new(self.alpha, self.draws, self.seed)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum SpaceKind {
    /// Pick one program from the menu.
    Finite,
    /// Split a budget across programs.
    Simplex,
}

#[derive(Debug, Clone, Args)]
pub struct InputArgs {
    /// Estimates CSV: `label,estimate,se[,known]`.
    pub input: PathBuf,
    /// Headerless correlation matrix CSV; identity when absent.
    #[arg(long)]
    pub corr: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = SpaceKind::Finite)]
    pub space: SpaceKind,
    /// Per-program share bounds `label,lower,upper` (simplex space only).
    #[arg(long)]
    pub bounds: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum RuleKind {
    Ewm,
    Rw,
    Polece,
}

#[derive(Debug, Clone, Args)]
pub struct SelectArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    #[arg(long, value_enum, default_value_t = RuleKind::Polece)]
    pub rule: RuleKind,
    /// Penalty for `--rule rw`.
    #[arg(long)]
    pub k: Option<f64>,
    /// Report JSON path; the per-policy LCB table goes next to it as `<stem>.lcb.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct FrontierArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    /// Number of log-spaced penalties in the sweep (simplex space).
    #[arg(long, default_value_t = 200)]
    pub grid: usize,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeKind {
    Levels,
    AddedValue,
}

#[derive(Debug, Clone, Args)]
pub struct ScoresArgs {
    /// Micro-data CSV: `y,t,x[,weight][,cluster]`.
    pub data: PathBuf,
    /// Propensity CSV: `x,t,p`.
    pub propensities: PathBuf,
    #[arg(long)]
    pub cells: Option<usize>,
    #[arg(long)]
    pub treatments: Option<usize>,
    #[arg(long, value_enum, default_value_t = ModeKind::Levels)]
    pub mode: ModeKind,
    #[arg(long = "control", default_value_t = 0)]
    pub control_id: usize,
    #[arg(long, default_value_t = drscore::DEFAULT_FOLDS)]
    pub folds: usize,
    #[arg(long, default_value_t = drscore::DEFAULT_POLICY_CAP)]
    pub cap: u64,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    /// Estimate table path; the correlation matrix goes to `<stem>.corr.csv`.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct SimulateArgs {
    /// Design file of `key = value` lines.
    pub design: PathBuf,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long)]
    pub draws: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub replications: Option<usize>,
    /// Also check the high-probability regret bound of RW(k) at this beta.
    #[arg(long)]
    pub beta: Option<f64>,
    /// Penalty used by the bound check.
    #[arg(long, default_value_t = 0.0)]
    pub k: f64,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Clone, Args)]
pub struct QuantileArgs {
    #[command(flatten)]
    pub input: InputArgs,
    #[command(flatten)]
    pub bootstrap: BootstrapArgs,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Parse `args` (including the program name), run, and return the exit code:
/// 0 on success, 2 on invalid input, 1 on numerical failure.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let text = e.render().to_string();
            let _ = if code == 0 { write!(stdout, "{text}") } else { write!(stderr, "{text}") };
            return code;
        }
    };
    match execute(&cli.command, stdout) {
        Ok(()) => 0,
        Err(e) => {
            let msg = json!({ "error": e.code(), "message": e.to_string() });
            let _ = writeln!(stderr, "{msg}");
            if e.is_validation() {
                2
            } else {
                1
            }
        }
    }
}

pub fn execute(command: &Command, stdout: &mut dyn Write) -> Result<()> {
    match command {
        Command::Select(a) => cmd_select(a, stdout),
        Command::Frontier(a) => cmd_frontier(a, stdout),
        Command::Scores(a) => cmd_scores(a, stdout),
        Command::Simulate(a) => cmd_simulate(a, stdout),
        Command::Quantile(a) => cmd_quantile(a, stdout),
    }
}

/// SHA-256 over the inputs, each prefixed by its byte length.
pub fn input_digest(paths: &[&Path]) -> Result<String> {
    let mut h = Sha256::new();
    for p in paths {
        let bytes = std::fs::read(p)?;
        h.update((bytes.len() as u64).to_le_bytes());
        h.update(&bytes);
    }
    Ok(hex::encode(h.finalize()))
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub command: &'static str,
    pub seed: u64,
    pub draws: usize,
    pub alpha: f64,
    pub input_sha256: String,
}

impl Provenance {
    pub fn lines(&self) -> Vec<String> {
        vec![
            format!("tool=polece {VERSION}"),
            format!("command={}", self.command),
            format!("seed={}", self.seed),
            format!("draws={}", self.draws),
            format!("alpha={}", self.alpha),
            format!("input_sha256={}", self.input_sha256),
        ]
    }

    fn insert_into(&self, v: &mut Value) {
        if let Value::Object(m) = v {
            m.insert("tool_version".into(), json!(VERSION));
            m.insert("command".into(), json!(self.command));
            m.insert("seed".into(), json!(self.seed));
            m.insert("draws".into(), json!(self.draws));
            m.insert("alpha".into(), json!(self.alpha));
            m.insert("input_sha256".into(), json!(self.input_sha256));
        }
    }
}

fn load_input(a: &InputArgs) -> Result<(EstimateTable, PolicySpace, Vec<PathBuf>)> {
    let table = match &a.corr {
        Some(c) => load_estimates_with_corr(&a.input, c)?,
        None => load_estimates(&a.input)?,
    };
    let mut inputs = vec![a.input.clone()];
    inputs.extend(a.corr.clone());
    let space = match (a.space, &a.bounds) {
        (SpaceKind::Finite, Some(_)) => {
            return Err(Error::InvalidConfig("--bounds applies only to --space simplex".into()));
        }
        (SpaceKind::Finite, None) => PolicySpace::finite(table.len())?,
        (SpaceKind::Simplex, None) => PolicySpace::Polytope(Polytope::simplex(table.len())?),
        (SpaceKind::Simplex, Some(b)) => {
            inputs.push(b.clone());
            PolicySpace::Polytope(load_bounds(b, &table)?)
        }
    };
    Ok((table, space, inputs))
}

/// Bounds CSV `label,lower,upper`; unlisted programs get `[0, 1]`.
pub fn load_bounds(path: &Path, table: &EstimateTable) -> Result<Polytope> {
    let text = std::fs::read_to_string(path)?;
    parse_bounds(&text, table)
}

pub fn parse_bounds(text: &str, table: &EstimateTable) -> Result<Polytope> {
    let mut lower = vec![0.0; table.len()];
    let mut upper = vec![1.0; table.len()];
    let mut rdr = csv::ReaderBuilder::new()
        .comment(Some(b'#'))
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let headers = rdr.headers()?.clone();
    let col = |name: &str| headers.iter().position(|h| h.eq_ignore_ascii_case(name));
    let (il, ilo, ihi) = match (col("label"), col("lower"), col("upper")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(Error::Parse("bounds header must be label,lower,upper".into())),
    };
    for rec in rdr.records() {
        let rec = rec?;
        let label = rec.get(il).unwrap_or("");
        let j = table
            .index_of(label)
            .ok_or_else(|| Error::InvalidConfig(format!("bounds name unknown program `{label}`")))?;
        let num = |i: usize| -> Result<f64> {
            let s = rec.get(i).unwrap_or("");
            s.parse().map_err(|_| Error::Parse(format!("bound `{s}` for `{label}` is not a number")))
        };
        lower[j] = num(ilo)?;
        upper[j] = num(ihi)?;
    }
    Polytope::new(lower, upper)
}

fn paths(v: &[PathBuf]) -> Vec<&Path> {
    v.iter().map(PathBuf::as_path).collect()
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    path.with_file_name(format!("{stem}{suffix}"))
}

fn write_json(path: &Path, v: &Value) -> Result<()> {
    let text = serde_json::to_string_pretty(v)? + "\n";
    std::fs::write(path, &text)?;
    // read back: the file must be a parseable report
    serde_json::from_str::<Value>(&std::fs::read_to_string(path)?)?;
    Ok(())
}

fn lcb_csv(table: &EstimateTable, q: f64, header: &[String]) -> Result<String> {
    let lcb = lcb_all(table, q)?;
    let mut buf = Vec::new();
    for line in header {
        writeln!(buf, "# {line}")?;
    }
    {
        let mut w = csv::Writer::from_writer(&mut buf);
        w.write_record(["label", "estimate", "se", "lcb"])?;
        for (j, l) in lcb.iter().enumerate() {
            w.write_record([
                table.labels()[j].clone(),
                table.v_hat()[j].to_string(),
                table.se()[j].to_string(),
                l.to_string(),
            ])?;
        }
        w.flush()?;
    }
    Ok(String::from_utf8(buf).expect("csv output is utf-8"))
}

/// Table-style summary: panel A with value and LCB per rule, panel B with weights.
pub fn summary(reports: &[&SelectionReport], q_hat: f64) -> String {
    let mut s = String::new();
    let labels = &reports[0].labels;
    let width = labels.iter().map(|l| l.chars().count()).max().unwrap_or(0).clamp(8, 64);
    let _ = writeln!(s, "critical value q = {q_hat:.4}");
    let _ = writeln!(s, "Panel A: welfare");
    let _ = write!(s, "{:<w$}", "", w = width);
    for r in reports {
        let _ = write!(s, " {:>10}", r.rule.name());
    }
    let _ = writeln!(s);
    let _ = write!(s, "{:<w$}", "Estimated value", w = width);
    for r in reports {
        let _ = write!(s, " {:>10.4}", r.v_hat);
    }
    let _ = writeln!(s);
    let _ = write!(s, "{:<w$}", "Lower confidence bound", w = width);
    for r in reports {
        let _ = write!(s, " {:>10.4}", r.band_lcb.unwrap_or(r.v_hat - q_hat * r.s_hat));
    }
    let _ = writeln!(s);
    let _ = writeln!(s, "Panel B: weights");
    let weights: Vec<Vec<f64>> = reports.iter().map(|r| r.weights()).collect();
    for (j, label) in labels.iter().enumerate() {
        let shown: String = label.chars().take(width).collect();
        let _ = write!(s, "{shown:<width$}");
        for w in &weights {
            let _ = write!(s, " {:>10.4}", rules::round4(w[j]));
        }
        let _ = writeln!(s);
    }
    s
}

pub fn cmd_select(a: &SelectArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = a.bootstrap.config()?;
    let (table, space, inputs) = load_input(&a.input)?;
    let prov = Provenance {
        command: "select",
        seed: cfg.seed,
        draws: cfg.draws,
        alpha: cfg.alpha,
        input_sha256: input_digest(&paths(&inputs))?,
    };
    let quantile = critical_value(&table, &space, &cfg)?;
    let q = quantile.q_hat;
    let ewm = rules::select_rw(&table, &space, 0.0)?.with_band(q);
    let chosen = match a.rule {
        RuleKind::Polece => polece_with_quantile(&table, &space, &cfg, quantile.clone())?,
        RuleKind::Ewm => ewm.clone(),
        RuleKind::Rw => {
            let k = a.k.ok_or_else(|| Error::InvalidConfig("--rule rw needs --k".into()))?;
            rules::select_rw(&table, &space, k)?.with_band(q)
        }
    };
    if a.k.is_some() && a.rule != RuleKind::Rw {
        return Err(Error::InvalidConfig("--k applies only to --rule rw".into()));
    }

    let mut report = chosen.to_json();
    if let Value::Object(m) = &mut report {
        m.insert("q_hat".into(), json!(q));
        m.insert("ewm_v_hat".into(), json!(ewm.v_hat));
        m.insert("ewm_band_lcb".into(), json!(ewm.band_lcb));
        if let Some(w) = &quantile.warning {
            m.insert("warning".into(), json!(w));
        }
    }
    prov.insert_into(&mut report);

    let shown: Vec<&SelectionReport> = if chosen.rule == ewm.rule { vec![&chosen] } else { vec![&ewm, &chosen] };
    let text = summary(&shown, q);
    match &a.out {
        Some(path) => {
            write_json(path, &report)?;
            std::fs::write(sibling(path, ".lcb.csv"), lcb_csv(&table, q, &prov.lines())?)?;
            write!(stdout, "{text}")?;
        }
        None => {
            writeln!(stdout, "{}", serde_json::to_string_pretty(&report)?)?;
        }
    }
    Ok(())
}

fn markers(frontier: &Frontier, reports: &[(&str, &SelectionReport)]) -> Vec<String> {
    let mut out = vec![String::new(); frontier.len()];
    for (name, r) in reports {
        let hit = match r.chosen_index() {
            Some(j) => frontier.points().iter().position(|p| p.policy == FrontierPolicy::Index(j)),
            None => frontier
                .nearest(r.s_hat, r.v_hat)
                .and_then(|n| frontier.points().iter().position(|p| std::ptr::eq(p, n))),
        };
        if let Some(i) = hit {
            if !out[i].is_empty() {
                out[i].push(';');
            }
            out[i].push_str(name);
        }
    }
    out
}

pub fn cmd_frontier(a: &FrontierArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = a.bootstrap.config()?;
    let (table, space, inputs) = load_input(&a.input)?;
    let prov = Provenance {
        command: "frontier",
        seed: cfg.seed,
        draws: cfg.draws,
        alpha: cfg.alpha,
        input_sha256: input_digest(&paths(&inputs))?,
    };
    let quantile = critical_value(&table, &space, &cfg)?;
    let polece = polece_with_quantile(&table, &space, &cfg, quantile.clone())?;
    let ewm = rules::select_rw(&table, &space, 0.0)?;
    let frontier = match &space {
        PolicySpace::Finite { .. } => frontier_from_table(&table)?,
        PolicySpace::Polytope(p) => frontier_polytope(&table, p, &default_k_grid(quantile.q_hat, a.grid))?,
    };
    let marks = markers(&frontier, &[("EWM", &ewm), ("PoLeCe", &polece)]);
    let mut header = prov.lines();
    header.push(format!("q_hat={}", quantile.q_hat));
    let mut buf = Vec::new();
    frontier.write_csv(&mut buf, table.labels(), &header, Some(&marks))?;
    match &a.out {
        Some(path) => {
            std::fs::write(path, &buf)?;
            writeln!(stdout, "{} frontier points written to {}", frontier.len(), path.display())?;
        }
        None => stdout.write_all(&buf)?,
    }
    Ok(())
}

pub fn cmd_scores(a: &ScoresArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = a.bootstrap.config()?;
    let prov = Provenance {
        command: "scores",
        seed: cfg.seed,
        draws: cfg.draws,
        alpha: cfg.alpha,
        input_sha256: input_digest(&[&a.data, &a.propensities])?,
    };
    let mut data = drscore::load_dataset(&a.data, &a.propensities)?;
    let cells = a.cells.unwrap_or(data.cells());
    let treatments = a.treatments.unwrap_or(data.treatments());
    data = data.with_dims(cells, treatments)?;
    let mode = match a.mode {
        ModeKind::Levels => ScoreMode::Levels,
        ModeKind::AddedValue => ScoreMode::AddedValue,
    };
    let score_cfg = ScoreConfig { folds: a.folds, mode, control: a.control_id, cap: a.cap };
    let (_, table) = drscore::score_all_policies(&data, &score_cfg)?;
    let mut header = prov.lines();
    header.push(format!("mode={mode:?} folds={} control={}", a.folds, a.control_id));
    header.extend(table.meta().notes.iter().cloned());
    match &a.out {
        Some(path) => {
            let corr_path = sibling(path, ".corr.csv");
            let mut buf = Vec::new();
            write_estimates(&table, &mut buf, &header)?;
            std::fs::write(path, &buf)?;
            write_correlation(&table, std::fs::File::create(&corr_path)?, &header)?;
            // the written pair must load back as an estimate table
            load_estimates_with_corr(path, &corr_path)?;
            writeln!(
                stdout,
                "{} policies written to {} (correlation in {})",
                table.len(),
                path.display(),
                corr_path.display()
            )?;
        }
        None => {
            let mut buf = Vec::new();
            write_estimates(&table, &mut buf, &header)?;
            parse_estimates(std::str::from_utf8(&buf).expect("utf-8"), None)?;
            stdout.write_all(&buf)?;
        }
    }
    Ok(())
}

pub fn cmd_simulate(a: &SimulateArgs, stdout: &mut dyn Write) -> Result<()> {
    let mut design = load_design(&a.design)?;
    let mut inputs = vec![a.design.clone()];
    let text = std::fs::read_to_string(&a.design)?;
    if let Some(t) = text
        .lines()
        .filter_map(|l| l.split('#').next()?.split_once('='))
        .find(|(k, _)| k.trim().eq_ignore_ascii_case("truth"))
    {
        inputs.push(a.design.parent().unwrap_or(Path::new(".")).join(t.1.trim()));
    }
    if let Some(alpha) = a.alpha {
        design.bootstrap.alpha = alpha;
    }
    if let Some(d) = a.draws {
        design.bootstrap.draws = d;
    }
    if let Some(s) = a.seed {
        design.bootstrap.seed = s;
    }
    if let Some(r) = a.replications {
        design.replications = r;
    }
    design.validate()?;
    let prov = Provenance {
        command: "simulate",
        seed: design.bootstrap.seed,
        draws: design.bootstrap.draws,
        alpha: design.bootstrap.alpha,
        input_sha256: input_digest(&paths(&inputs))?,
    };
    let result = simlab::run_sim(&design)?;
    let mut header = prov.lines();
    if let Some(beta) = a.beta {
        let b = simlab::regret_bound_check(&design, a.k, beta)?;
        header.push(format!(
            "bound_check k={} beta={} q_all={} q_best={} bound={} violation_frequency={}",
            b.k, b.beta, b.q_all, b.q_best, b.bound, b.violation_frequency
        ));
    }
    let mut buf = Vec::new();
    result.write_csv(&mut buf, &header)?;
    match &a.out {
        Some(path) => {
            std::fs::write(path, &buf)?;
            writeln!(stdout, "results written to {}", path.display())?;
        }
        None => stdout.write_all(&buf)?,
    }
    Ok(())
}

pub fn cmd_quantile(a: &QuantileArgs, stdout: &mut dyn Write) -> Result<()> {
    let cfg = a.bootstrap.config()?;
    let (table, space, inputs) = load_input(&a.input)?;
    let prov = Provenance {
        command: "quantile",
        seed: cfg.seed,
        draws: cfg.draws,
        alpha: cfg.alpha,
        input_sha256: input_digest(&paths(&inputs))?,
    };
    let q: QuantileResult = critical_value(&table, &space, &cfg)?;
    let mut v = serde_json::to_value(&q)?;
    if let Value::Object(m) = &mut v {
        m.insert("space".into(), json!(if matches!(space, PolicySpace::Finite { .. }) { "finite" } else { "simplex" }));
        m.insert("programs".into(), json!(table.len()));
    }
    prov.insert_into(&mut v);
    match &a.out {
        Some(path) => {
            write_json(path, &v)?;
            writeln!(stdout, "q_hat = {}", q.q_hat)?;
        }
        None => writeln!(stdout, "{}", serde_json::to_string_pretty(&v)?)?,
    }
    Ok(())
}
