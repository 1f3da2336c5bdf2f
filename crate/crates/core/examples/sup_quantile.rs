//! Critical values of the maximal standardized estimation error.
//!
//! For independent estimates over a finite menu of size p the 95% quantile is
//! Phi^{-1}(0.95^{1/p}); over the full simplex it is the quantile of the norm
//! of the positive part of a standard normal vector. Correlation shrinks both.

use nalgebra::DMatrix;
use polece::bootstrap::{quantile_finite, quantile_polytope, BootstrapConfig};
use polece::estimates::{load_estimates, EstimateTable, Polytope};

fn menu(p: usize, rho: f64) -> polece::Result<EstimateTable> {
    let t = EstimateTable::new(
        (0..p).map(|j| format!("policy {j}")).collect(),
        vec![0.0; p],
        (0..p).map(|j| 0.1 + 0.01 * j as f64).collect(),
    )?;
    t.with_correlation(DMatrix::from_fn(p, p, |i, j| if i == j { 1.0 } else { rho }))
}

fn main() -> polece::Result<()> {
    let cfg = BootstrapConfig::new(0.05, 100_000, 1)?;
    println!("finite menus, 95% critical value");
    for p in [1, 5, 50] {
        let indep = quantile_finite(&menu(p, 0.0)?, &cfg)?.q_hat;
        let corr = quantile_finite(&menu(p, 0.7)?, &cfg)?.q_hat;
        println!("  p = {p:>2}: independent {indep:.4}, equicorrelated (0.7) {corr:.4}");
    }

    println!("budget allocation over the full simplex");
    let cfg = BootstrapConfig::new(0.05, 20_000, 1)?;
    for name in ["adult_programs", "youth_programs"] {
        let table = load_estimates(format!("{}/data/{name}.csv", env!("CARGO_MANIFEST_DIR")))?;
        let q = quantile_polytope(&table, &Polytope::simplex(table.len())?, &cfg)?;
        println!(
            "  {name}: q = {:.4} (J = {}, {:.2}% of draws clamped at zero)",
            q.q_hat,
            table.len(),
            100.0 * q.clamped_fraction
        );
    }
    Ok(())
}
