//! The supremum of a standardized Gaussian error over an allocation polytope
//! is the root of f(t) = max_pi pi'z - t sqrt(pi' Sigma pi). This traces f on a
//! grid and compares with the root finder for one draw.

use nalgebra::DMatrix;
use polece::conic::{f_and_derivative, find_root, solve_inner, RootResult, ROOT_TOL, SOLVER_TOL};
use polece::estimates::Polytope;

fn main() -> polece::Result<()> {
    let se = [0.4, 0.2, 0.9];
    let sigma = DMatrix::from_fn(3, 3, |i, j| se[i] * se[j] * if i == j { 1.0 } else { 0.3 });
    let z = [0.5, -0.1, 1.2];
    let space = Polytope::simplex(3)?;

    println!("{:>6} {:>10} {:>10}", "t", "f(t)", "f'(t)");
    for i in 0..=8 {
        let t = 0.5 * i as f64;
        let (f, df) = f_and_derivative(&z, &sigma, &space, t)?;
        println!("{t:>6.2} {f:>10.5} {df:>10.5}");
    }

    match find_root(&z, &sigma, &space, ROOT_TOL)? {
        RootResult::Root { t_star, residual, pi_at_root, iterations } => {
            println!("root t* = {t_star:.6} after {iterations} iterations (residual {residual:.1e})");
            println!("maximizing allocation: {:?}", pi_at_root.weights());
            let inner = solve_inner(&z, &sigma, &space, t_star, SOLVER_TOL)?;
            println!("objective at t*: {:.2e}", inner.objective);
        }
        RootResult::NoNonnegativeRoot { f_at_zero } => {
            println!("every allocation has negative error: f(0) = {f_at_zero:.4}");
        }
    }
    Ok(())
}
