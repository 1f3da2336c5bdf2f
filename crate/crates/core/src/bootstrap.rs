//! Gaussian bootstrap critical values for the supremum of the studentized
//! estimation-error process.
//!
//! Given the correlation `C` of the estimates, each draw `b` samples
//! `g_b ~ N(0, I)` from its own counter-addressed ChaCha stream
//! `(seed, b)`, maps it through a factor `L` with `L L' = C`, and records the
//! supremum over the policy space:
//!
//! * finite menus: `max_j (L g_b)_j`;
//! * allocation polytopes: `max_pi pi'z_b / sqrt(pi' Sigma pi)` with
//!   `z_b = diag(se) L g_b`, computed as the root of the conic `f(t)`.
//!
//! The critical value is the upper order statistic of rank `ceil((1 - alpha) B)`.
//! Draws are stored by index and sorted once, so the result does not depend
//! on how the draws were scheduled across threads.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::conic::{InnerProblem, RootResult, ROOT_TOL};
use crate::error::{Error, Result};
use crate::estimates::{is_diagonal, EstimateTable, Polytope, PSD_TOLERANCE};

/// Fraction of failed per-draw root solves above which the bootstrap errors out.
pub const MAX_FAILED_FRACTION: f64 = 0.001;
/// Pivots below this are treated as zero by the pivoted Cholesky factor.
const FACTOR_PIVOT_TOL: f64 = 1e-11;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BootstrapConfig {
    pub alpha: f64,
    pub draws: usize,
    pub seed: u64,
    /// Warn when more than this fraction of polytope draws had no nonnegative root.
    pub clamp_report_threshold: f64,
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        Self {
            alpha: 0.05,
            draws: 100_000,
            seed: 0,
            clamp_report_threshold: 0.10,
        }
    }
}

impl BootstrapConfig {
    pub fn new(alpha: f64, draws: usize, seed: u64) -> Result<Self> {
        let cfg = Self {
            alpha,
            draws,
            seed,
            ..Self::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 0.5) {
            return Err(Error::InvalidConfig(format!(
                "alpha = {} must lie in (0, 0.5]",
                self.alpha
            )));
        }
        if self.draws < 1000 {
            return Err(Error::InvalidConfig(format!(
                "{} bootstrap draws; at least 1000 are required",
                self.draws
            )));
        }
        if !(0.0..=1.0).contains(&self.clamp_report_threshold) {
            return Err(Error::InvalidConfig(format!(
                "clamp report threshold {} must lie in [0, 1]",
                self.clamp_report_threshold
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QuantileResult {
    pub q_hat: f64,
    pub alpha: f64,
    pub draws_used: usize,
    /// Polytope draws whose supremum was negative and clamped to zero.
    pub clamped_fraction: f64,
    /// Polytope draws where the root finder hit its iteration cap.
    pub failed_draws: usize,
    pub seed: u64,
    pub warning: Option<String>,
}

/// `L` with `L L' = C`, from a pivoted Cholesky factorization; `L` is
/// `p x r` where `r` is the numerical rank of `C`.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianFactor {
    l: DMatrix<f64>,
    /// `C = I`: `L g = g`, skipping the dense product.
    identity: bool,
}

impl GaussianFactor {
    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.l
    }

    pub fn dim(&self) -> usize {
        self.l.nrows()
    }

    pub fn rank(&self) -> usize {
        self.l.ncols()
    }

    /// `out = L g`.
    pub fn apply(&self, g: &[f64], out: &mut [f64]) {
        if self.identity {
            out.copy_from_slice(g);
            return;
        }
        out.fill(0.0);
        for (k, &gk) in g.iter().enumerate() {
            if gk == 0.0 {
                continue;
            }
            let col = self.l.column(k);
            for (o, c) in out.iter_mut().zip(col.iter()) {
                *o += c * gk;
            }
        }
    }
}

/// Pivoted (outer-product) Cholesky factor of a PSD matrix.
pub fn gaussian_factor(corr: &DMatrix<f64>) -> Result<GaussianFactor> {
    let p = corr.nrows();
    if corr.ncols() != p || p == 0 {
        return Err(Error::DimensionMismatch(format!(
            "matrix is {}x{}",
            corr.nrows(),
            corr.ncols()
        )));
    }
    if (0..p).all(|i| corr[(i, i)] == 1.0) && is_diagonal(corr) {
        return Ok(GaussianFactor { l: DMatrix::identity(p, p), identity: true });
    }
    let mut a = corr.clone();
    let mut cols: Vec<Vec<f64>> = Vec::new();
    let mut used = vec![false; p];
    for _ in 0..p {
        let (piv, d) = (0..p)
            .filter(|&i| !used[i])
            .map(|i| (i, a[(i, i)]))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("unused pivot remains");
        if d <= FACTOR_PIVOT_TOL {
            // what remains must be numerically zero, not negative
            let worst = (0..p)
                .filter(|&i| !used[i])
                .map(|i| a[(i, i)])
                .fold(f64::INFINITY, f64::min);
            if worst < -PSD_TOLERANCE {
                return Err(Error::NotPsd {
                    min_eigenvalue: worst,
                });
            }
            break;
        }
        used[piv] = true;
        let root = d.sqrt();
        let col: Vec<f64> = (0..p)
            .map(|i| if used[i] && i != piv { 0.0 } else { a[(i, piv)] / root })
            .collect();
        for i in 0..p {
            if col[i] == 0.0 {
                continue;
            }
            for j in 0..p {
                a[(i, j)] -= col[i] * col[j];
            }
        }
        cols.push(col);
    }
    // a diagonal entry driven well below zero means the input was indefinite
    let worst = (0..p).map(|i| a[(i, i)]).fold(f64::INFINITY, f64::min);
    if worst < -PSD_TOLERANCE {
        return Err(Error::NotPsd {
            min_eigenvalue: worst,
        });
    }
    let r = cols.len().max(1);
    let l = DMatrix::from_fn(p, r, |i, k| cols.get(k).map_or(0.0, |c| c[i]));
    Ok(GaussianFactor { l, identity: false })
}

/// Independent, reproducible standard-normal stream for draw `index`.
pub fn draw_stream(seed: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index);
    rng.set_word_pos(0);
    rng
}

pub(crate) fn fill_normals(rng: &mut ChaCha8Rng, out: &mut [f64]) {
    for v in out.iter_mut() {
        *v = rng.sample(StandardNormal);
    }
}

/// 1-based rank `ceil((1 - alpha) B)` of the upper order statistic.
pub fn quantile_rank(alpha: f64, draws: usize) -> usize {
    let raw = (1.0 - alpha) * draws as f64;
    // guard against (1 - alpha) * B landing a hair above an integer
    let k = (raw - 1e-9 * raw.max(1.0)).ceil() as usize;
    k.clamp(1, draws)
}

/// Upper order statistic of rank `ceil((1 - alpha) B)` of `values` (sorted in place).
pub fn upper_order_statistic(values: &mut [f64], alpha: f64) -> f64 {
    values.sort_by(|a, b| a.total_cmp(b));
    values[quantile_rank(alpha, values.len()) - 1]
}

/// Per-draw suprema for a finite menu, in draw order.
pub fn sup_draws_finite(table: &EstimateTable, cfg: &BootstrapConfig) -> Result<Vec<f64>> {
    let factor = gaussian_factor(table.corr())?;
    let p = table.len();
    let active: Vec<bool> = table.se().iter().map(|&s| s > 0.0).collect();
    let has_known = active.iter().any(|&a| !a);
    let seed = cfg.seed;
    let r = factor.rank();
    let draws = (0..cfg.draws as u64)
        .into_par_iter()
        .map_init(
            || (vec![0.0; r], vec![0.0; p]),
            |(g, y), b| {
                let mut rng = draw_stream(seed, b);
                fill_normals(&mut rng, g);
                factor.apply(g, y);
                let mut sup = if has_known { 0.0 } else { f64::NEG_INFINITY };
                for j in 0..p {
                    if active[j] && y[j] > sup {
                        sup = y[j];
                    }
                }
                if sup == f64::NEG_INFINITY {
                    0.0
                } else {
                    sup
                }
            },
        )
        .collect();
    Ok(draws)
}

/// Critical value over a finite menu.
pub fn quantile_finite(table: &EstimateTable, cfg: &BootstrapConfig) -> Result<QuantileResult> {
    cfg.validate()?;
    let mut draws = sup_draws_finite(table, cfg)?;
    let q_hat = upper_order_statistic(&mut draws, cfg.alpha);
    Ok(QuantileResult {
        q_hat,
        alpha: cfg.alpha,
        draws_used: cfg.draws,
        clamped_fraction: 0.0,
        failed_draws: 0,
        seed: cfg.seed,
        warning: None,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PolytopeDraw {
    Root(f64),
    /// `f(0) < 0`; recorded as zero.
    Clamped,
    /// Root finder hit its cap; carries the best iterate.
    Failed(f64),
}

impl PolytopeDraw {
    pub fn value(&self) -> f64 {
        match *self {
            PolytopeDraw::Root(t) => t,
            PolytopeDraw::Clamped => 0.0,
            PolytopeDraw::Failed(t) => {
                if t.is_finite() {
                    t
                } else {
                    0.0
                }
            }
        }
    }
}

/// Per-draw suprema over an allocation polytope, in draw order.
pub fn sup_draws_polytope(
    table: &EstimateTable,
    space: &Polytope,
    cfg: &BootstrapConfig,
) -> Result<Vec<PolytopeDraw>> {
    if space.dim() != table.len() {
        return Err(Error::DimensionMismatch(format!(
            "polytope over {} programs, table has {}",
            space.dim(),
            table.len()
        )));
    }
    let factor = gaussian_factor(table.corr())?;
    let problem = InnerProblem::new(&table.covariance(), space)?;
    let se = table.se().to_vec();
    let p = table.len();
    let r = factor.rank();
    let seed = cfg.seed;
    (0..cfg.draws as u64)
        .into_par_iter()
        .map_init(
            || (vec![0.0; r], vec![0.0; p]),
            |(g, z), b| -> Result<PolytopeDraw> {
                let mut rng = draw_stream(seed, b);
                fill_normals(&mut rng, g);
                factor.apply(g, z);
                for (zj, s) in z.iter_mut().zip(&se) {
                    *zj *= s;
                }
                match problem.find_root(z, ROOT_TOL) {
                    Ok(RootResult::Root { t_star, .. }) => Ok(PolytopeDraw::Root(t_star)),
                    Ok(RootResult::NoNonnegativeRoot { .. }) => Ok(PolytopeDraw::Clamped),
                    Err(Error::IterationLimit { best, .. }) => Ok(PolytopeDraw::Failed(best)),
                    Err(e) => Err(e),
                }
            },
        )
        .collect()
}

/// Critical value over an allocation polytope.
pub fn quantile_polytope(
    table: &EstimateTable,
    space: &Polytope,
    cfg: &BootstrapConfig,
) -> Result<QuantileResult> {
    cfg.validate()?;
    let draws = sup_draws_polytope(table, space, cfg)?;
    let clamped = draws.iter().filter(|d| matches!(d, PolytopeDraw::Clamped)).count();
    let failed = draws.iter().filter(|d| matches!(d, PolytopeDraw::Failed(_))).count();
    if failed as f64 > MAX_FAILED_FRACTION * cfg.draws as f64 {
        return Err(Error::SolverFailures {
            failed,
            draws: cfg.draws,
        });
    }
    let mut values: Vec<f64> = draws.iter().map(PolytopeDraw::value).collect();
    let q_hat = upper_order_statistic(&mut values, cfg.alpha);
    let clamped_fraction = clamped as f64 / cfg.draws as f64;
    let warning = (clamped_fraction > cfg.clamp_report_threshold).then(|| {
        format!(
            "{:.1}% of draws had no nonnegative root and were clamped to 0",
            100.0 * clamped_fraction
        )
    });
    Ok(QuantileResult {
        q_hat,
        alpha: cfg.alpha,
        draws_used: cfg.draws,
        clamped_fraction,
        failed_draws: failed,
        seed: cfg.seed,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn table(se: &[f64]) -> EstimateTable {
        let p = se.len();
        EstimateTable::new(
            (0..p).map(|i| format!("p{i}")).collect(),
            vec![0.0; p],
            se.to_vec(),
        )
        .unwrap()
    }

    #[test]
    fn identity_factor() {
        let f = gaussian_factor(&DMatrix::identity(3, 3)).unwrap();
        assert_eq!(f.matrix(), &DMatrix::<f64>::identity(3, 3));
    }

    #[test]
    fn two_by_two_factor() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.0]);
        let f = gaussian_factor(&c).unwrap();
        let back = f.matrix() * f.matrix().transpose();
        assert!((back[(0, 1)] - 0.5).abs() < 1e-12);
    }

    #[test]
    fn rank_deficient_factor() {
        let c = DMatrix::from_element(3, 3, 1.0);
        let f = gaussian_factor(&c).unwrap();
        assert_eq!(f.rank(), 1);
    }

    #[test]
    fn indefinite_factor_fails() {
        let c = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        assert!(gaussian_factor(&c).is_err());
    }

    #[test]
    fn rank_of_order_statistic() {
        assert_eq!(quantile_rank(0.05, 200_000), 190_000);
        assert_eq!(quantile_rank(0.05, 1000), 950);
        assert_eq!(quantile_rank(0.5, 1001), 501);
    }

    #[test]
    fn config_validation() {
        assert!(BootstrapConfig::new(0.0, 1000, 0).is_err());
        assert!(BootstrapConfig::new(0.6, 1000, 0).is_err());
        assert!(BootstrapConfig::new(0.05, 999, 0).is_err());
        assert!(BootstrapConfig::new(0.5, 1000, 0).is_ok());
    }

    #[test]
    fn known_rows_contribute_zero() {
        let t = EstimateTable::from_parts(
            vec!["a".into(), "b".into()],
            vec![0.0, 0.0],
            vec![0.0, 1.0],
            vec![true, false],
            None,
            Default::default(),
        )
        .unwrap();
        let cfg = BootstrapConfig::new(0.05, 2000, 3).unwrap();
        let d = sup_draws_finite(&t, &cfg).unwrap();
        assert!(d.iter().all(|v| v.is_finite() && *v >= 0.0));
    }

    #[test]
    fn streams_are_reproducible() {
        let cfg = BootstrapConfig::new(0.05, 2000, 11).unwrap();
        let t = table(&[1.0, 2.0, 0.5]);
        assert_eq!(quantile_finite(&t, &cfg).unwrap(), quantile_finite(&t, &cfg).unwrap());
    }
}
