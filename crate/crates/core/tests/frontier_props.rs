use proptest::prelude::*;

use polece::estimates::{load_estimates, EstimateTable, Polytope};
use polece::frontier::{default_k_grid, frontier_finite, frontier_from_table, frontier_polytope, FrontierPoint, FrontierPolicy};
use polece::rules::select_rw_polytope;

fn data(name: &str) -> EstimateTable {
    load_estimates(format!("{}/data/{name}.csv", env!("CARGO_MANIFEST_DIR"))).unwrap()
}

fn coords(points: &[FrontierPoint]) -> Vec<(f64, f64)> {
    points.iter().map(|p| (p.risk, p.value)).collect()
}

// values on a coarse lattice so exact ties and collinear triples actually occur
fn lattice_points() -> impl Strategy<Value = Vec<(f64, f64)>> {
    prop::collection::vec((0u32..12, -6i32..6), 1..25)
        .prop_map(|v| v.into_iter().map(|(r, v)| (r as f64 / 4.0, v as f64 / 4.0)).collect())
}

fn build(raw: &[(f64, f64)]) -> Vec<FrontierPoint> {
    raw.iter().enumerate().map(|(j, (r, v))| FrontierPoint::new(*r, *v, j)).collect()
}

proptest! {
    #[test]
    fn shape_invariants(raw in lattice_points()) {
        let f = frontier_finite(build(&raw)).unwrap();
        let pts = f.points();
        prop_assert!(!pts.is_empty());
        for w in pts.windows(2) {
            prop_assert!(w[1].risk > w[0].risk);
            prop_assert!(w[1].value >= w[0].value);
        }
        for w in pts.windows(3) {
            let s1 = (w[1].value - w[0].value) / (w[1].risk - w[0].risk);
            let s2 = (w[2].value - w[1].value) / (w[2].risk - w[1].risk);
            prop_assert!(s2 <= s1 + 1e-12);
        }
        // leftmost point is the best of the least risky; rightmost attains the max value
        let rmin = raw.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let vmax = raw.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        prop_assert_eq!(pts[0].risk, rmin);
        prop_assert_eq!(pts[pts.len() - 1].value, vmax);
    }

    #[test]
    fn envelope_dominates_inputs(raw in lattice_points()) {
        let f = frontier_finite(build(&raw)).unwrap();
        for (r, v) in &raw {
            let e = f.envelope_at(*r).unwrap();
            prop_assert!(e >= v - 1e-12, "({r}, {v}) above envelope {e}");
        }
    }

    #[test]
    fn idempotent(raw in lattice_points()) {
        let once = frontier_finite(build(&raw)).unwrap();
        let twice = frontier_finite(once.points().to_vec()).unwrap();
        prop_assert_eq!(once, twice);
    }

    #[test]
    fn permutation_invariant(raw in lattice_points(), seed in any::<u64>()) {
        let mut shuffled = raw.clone();
        let n = shuffled.len();
        let mut s = seed;
        for i in (1..n).rev() {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            shuffled.swap(i, (s >> 33) as usize % (i + 1));
        }
        let a = frontier_finite(build(&raw)).unwrap();
        let b = frontier_finite(build(&shuffled)).unwrap();
        prop_assert_eq!(coords(a.points()), coords(b.points()));
    }
}

#[test]
fn collinear_points_are_kept() {
    let f = frontier_finite(build(&[(0.0, 0.0), (1.0, 1.0), (2.0, 2.0), (1.0, 0.5)])).unwrap();
    assert_eq!(coords(f.points()), vec![(0.0, 0.0), (1.0, 1.0), (2.0, 2.0)]);
}

#[test]
fn vertex_frontier_ends_at_the_largest_estimate() {
    for name in ["adult_programs", "youth_programs"] {
        let t = data(name);
        let f = frontier_from_table(&t).unwrap();
        let best = (0..t.len()).max_by(|a, b| t.v_hat()[*a].total_cmp(&t.v_hat()[*b])).unwrap();
        assert_eq!(f.points().last().unwrap().policy, FrontierPolicy::Index(best), "{name}");
        let safest = (0..t.len()).min_by(|a, b| t.se()[*a].total_cmp(&t.se()[*b])).unwrap();
        assert_eq!(f.points()[0].policy, FrontierPolicy::Index(safest), "{name}");
    }
}

#[test]
fn two_asset_sweep_traces_the_efficient_curve() {
    // independent assets on the simplex: risk(w) = sqrt(w^2 a^2 + (1-w)^2 b^2)
    let (v, s) = ([1.0, 0.4], [0.8, 0.3]);
    let t = EstimateTable::new(vec!["hi".into(), "lo".into()], v.to_vec(), s.to_vec()).unwrap();
    let curve: Vec<(f64, f64)> = (0..=20_000)
        .map(|i| {
            let w = i as f64 / 20_000.0;
            ((w * w * s[0] * s[0] + (1.0 - w) * (1.0 - w) * s[1] * s[1]).sqrt(), w * v[0] + (1.0 - w) * v[1])
        })
        .collect();
    let best_at = |r: f64| curve.iter().filter(|c| c.0 <= r + 1e-9).map(|c| c.1).fold(f64::NEG_INFINITY, f64::max);
    let f = frontier_polytope(&t, &Polytope::simplex(2).unwrap(), &default_k_grid(2.0, 60)).unwrap();
    assert!(f.len() > 20);
    for p in f.points() {
        assert!((p.value - best_at(p.risk)).abs() < 1e-3, "({}, {}) vs {}", p.risk, p.value, best_at(p.risk));
    }
    // minimum-variance share of the risky asset is b^2 / (a^2 + b^2)
    let wmin = s[1] * s[1] / (s[0] * s[0] + s[1] * s[1]);
    let rmin = s[0] * s[1] / (s[0] * s[0] + s[1] * s[1]).sqrt();
    let left = &f.points()[0];
    assert!(left.risk >= rmin - 1e-6);
    if let FrontierPolicy::Allocation(w) = &f.points().last().unwrap().policy {
        assert!((w[0] - 1.0).abs() < 1e-6);
    }
    let first_share = match &left.policy {
        FrontierPolicy::Allocation(w) => w[0],
        _ => unreachable!(),
    };
    assert!(first_share >= wmin - 1e-6);
}

#[test]
fn sweep_contains_the_polece_allocation() {
    let t = data("adult_programs");
    let space = Polytope::simplex(t.len()).unwrap();
    let q = 3.19;
    let f = frontier_polytope(&t, &space, &default_k_grid(q, 200)).unwrap();
    let target = select_rw_polytope(&t, &space, q).unwrap();
    let hit = f.points().iter().find(|p| p.k == Some(q)).expect("k = q on the envelope");
    assert!((hit.risk - target.s_hat).abs() < 1e-6 && (hit.value - target.v_hat).abs() < 1e-6);
    for w in f.points().windows(2) {
        assert!(w[1].risk > w[0].risk);
    }
}
