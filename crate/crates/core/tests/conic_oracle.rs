use nalgebra::DMatrix;
use proptest::prelude::*;

use polece::conic::{f_and_derivative, find_root, project_simplex_box, solve_inner, InnerProblem, RootResult, ROOT_TOL, SOLVER_TOL};
use polece::estimates::Polytope;

fn risk(sigma: &DMatrix<f64>, w: &[f64]) -> f64 {
    (0..w.len())
        .flat_map(|a| (0..w.len()).map(move |b| (a, b)))
        .map(|(a, b)| w[a] * sigma[(a, b)] * w[b])
        .sum::<f64>()
        .sqrt()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

#[test]
fn two_programs_against_fine_grid() {
    let z = [1.0, 0.0];
    let sigma = DMatrix::identity(2, 2);
    let space = Polytope::simplex(2).unwrap();
    let sol = solve_inner(&z, &sigma, &space, 2.0, SOLVER_TOL).unwrap();
    let (best_w, best) = (0..=10_000)
        .map(|i| {
            let w = [i as f64 / 10_000.0, 1.0 - i as f64 / 10_000.0];
            (w, dot(&w, &z) - 2.0 * risk(&sigma, &w))
        })
        .max_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap();
    assert!((sol.objective - best).abs() < 1e-4);
    assert!((sol.pi_star.weights()[0] - best_w[0]).abs() < 1e-3);
    // interior optimum of w - 2 sqrt(w^2 + (1-w)^2): the derivative vanishes
    let w = sol.pi_star.weights()[0];
    let grad = 1.0 - 2.0 * (2.0 * w - 1.0) / (w * w + (1.0 - w) * (1.0 - w)).sqrt();
    assert!(grad.abs() < 1e-4);
}

#[test]
fn derivative_matches_central_difference() {
    let z = [1.0, 0.0];
    let sigma = DMatrix::identity(2, 2);
    let space = Polytope::simplex(2).unwrap();
    let h = 1e-4;
    for t in [0.0, 1.0, 2.0] {
        let (_, d) = f_and_derivative(&z, &sigma, &space, t).unwrap();
        // f is linear in t just left of 0 on the same vertex, so use a one-sided difference there
        let fd = if t == 0.0 {
            (f_and_derivative(&z, &sigma, &space, h).unwrap().0 - f_and_derivative(&z, &sigma, &space, 0.0).unwrap().0) / h
        } else {
            (f_and_derivative(&z, &sigma, &space, t + h).unwrap().0 - f_and_derivative(&z, &sigma, &space, t - h).unwrap().0)
                / (2.0 * h)
        };
        assert!((d - fd).abs() < 1e-3, "t={t}: {d} vs {fd}");
    }
}

#[test]
fn three_program_root_matches_ratio_grid() {
    let z = [1.2, 0.4, -0.3];
    let sigma = DMatrix::from_diagonal(&nalgebra::DVector::from_vec(vec![0.04, 0.25, 1.0]));
    let space = Polytope::simplex(3).unwrap();
    let n = 500;
    let mut best = f64::NEG_INFINITY;
    for a in 0..=n {
        for b in 0..=(n - a) {
            let w = [a as f64 / n as f64, b as f64 / n as f64, (n - a - b) as f64 / n as f64];
            best = best.max(dot(&w, &z) / risk(&sigma, &w));
        }
    }
    let t = find_root(&z, &sigma, &space, ROOT_TOL).unwrap().t_star().unwrap();
    assert!((t - best).abs() < 5e-3, "{t} vs {best}");
    // diagonal covariance on the simplex: sup equals the norm of the positive part of z/se
    let closed = ((1.2f64 / 0.2).powi(2) + (0.4f64 / 0.5).powi(2)).sqrt();
    assert!((t - closed).abs() < 1e-5);
}

#[test]
fn capped_projection_matches_grid() {
    let v = [0.9, 0.1, -0.3, 0.6];
    let space = Polytope::new(vec![0.0; 4], vec![0.5; 4]).unwrap();
    let p = project_simplex_box(&v, &space).unwrap();
    let n = 100;
    let mut best = (f64::INFINITY, vec![]);
    for a in 0..=n / 2 {
        for b in 0..=n / 2 {
            for c in 0..=n / 2 {
                let d = n as i64 - (a + b + c) as i64;
                if d < 0 || d > n as i64 / 2 {
                    continue;
                }
                let w = [a as f64 / n as f64, b as f64 / n as f64, c as f64 / n as f64, d as f64 / n as f64];
                let dist: f64 = w.iter().zip(&v).map(|(x, y)| (x - y).powi(2)).sum();
                if dist < best.0 {
                    best = (dist, w.to_vec());
                }
            }
        }
    }
    let dist: f64 = p.weights().iter().zip(&v).map(|(x, y)| (x - y).powi(2)).sum();
    assert!(dist <= best.0 + 1e-12);
    // the exact answer: 0.5, tau-shifted rest
    assert!((p.weights()[0] - 0.5).abs() < 1e-12);
    assert!((dist - best.0).abs() < 1e-3);
}

fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, f64)> {
    (2usize..7).prop_flat_map(|j| {
        (
            prop::collection::vec(-2.0f64..2.0, j),
            prop::collection::vec(0.05f64..1.5, j),
            -0.15f64..0.9,
        )
    })
}

fn equicorrelated(se: &[f64], rho: f64) -> DMatrix<f64> {
    let j = se.len();
    DMatrix::from_fn(j, j, |a, b| se[a] * se[b] * if a == b { 1.0 } else { rho })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn f_is_decreasing_with_negative_slope((z, se, rho) in instance()) {
        // keep the equicorrelation PSD for every dimension drawn
        let rho = rho.max(-1.0 / (se.len() as f64 - 1.0) + 0.05);
        let sigma = equicorrelated(&se, rho);
        let space = Polytope::simplex(se.len()).unwrap();
        let mut prev = f64::INFINITY;
        for t in [0.0, 0.3, 0.9, 2.0, 4.0] {
            let (f, d) = f_and_derivative(&z, &sigma, &space, t).unwrap();
            prop_assert!(d < 0.0);
            prop_assert!(f < prev + 1e-9);
            prev = f;
        }
    }

    #[test]
    fn root_is_a_zero_of_f((z, se, rho) in instance()) {
        let rho = rho.max(-1.0 / (se.len() as f64 - 1.0) + 0.05);
        let sigma = equicorrelated(&se, rho);
        let space = Polytope::simplex(se.len()).unwrap();
        match find_root(&z, &sigma, &space, ROOT_TOL).unwrap() {
            RootResult::Root { t_star, pi_at_root, .. } => {
                let (f, _) = f_and_derivative(&z, &sigma, &space, t_star).unwrap();
                prop_assert!(f.abs() <= 1e-5, "f(t*) = {}", f);
                let ratio = dot(pi_at_root.weights(), &z) / risk(&sigma, pi_at_root.weights());
                prop_assert!((ratio - t_star).abs() <= 1e-4);
            }
            RootResult::NoNonnegativeRoot { f_at_zero } => {
                prop_assert!(f_at_zero < 0.0);
                prop_assert!(z.iter().all(|x| *x < 0.0));
            }
        }
    }

    #[test]
    fn projection_is_idempotent_and_feasible(
        v in prop::collection::vec(-3.0f64..3.0, 1..10),
        cap in 0.2f64..1.0,
    ) {
        let j = v.len();
        let cap = cap.max(1.0 / j as f64);
        let space = Polytope::new(vec![0.0; j], vec![cap; j]).unwrap();
        let p = project_simplex_box(&v, &space).unwrap();
        prop_assert!(space.contains(p.weights(), 1e-9));
        let again = project_simplex_box(p.weights(), &space).unwrap();
        for (a, b) in p.weights().iter().zip(again.weights()) {
            prop_assert!((a - b).abs() <= 1e-12);
        }
    }

    #[test]
    fn warm_start_does_not_change_the_optimum((z, se, _rho) in instance(), t in 0.0f64..4.0) {
        let sigma = equicorrelated(&se, 0.0);
        let space = Polytope::simplex(se.len()).unwrap();
        let problem = InnerProblem::new(&sigma, &space).unwrap();
        let cold = problem.solve(&z, t, SOLVER_TOL, None).unwrap();
        let warm_at = vec![1.0 / se.len() as f64; se.len()];
        let warm = problem.solve(&z, t, SOLVER_TOL, Some(&warm_at)).unwrap();
        prop_assert!((cold.objective - warm.objective).abs() <= 1e-6);
    }
}
