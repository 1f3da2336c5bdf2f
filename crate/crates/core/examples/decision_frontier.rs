//! Efficient decision frontier for the adult programs: first over the menu of
//! single programs, then over budget splits by sweeping the risk penalty k.
//! The sweep is written as CSV (risk,value,k,weights_json,marker) on stdout.

use polece::bootstrap::{quantile_polytope, BootstrapConfig};
use polece::estimates::{load_estimates, PolicySpace, Polytope};
use polece::frontier::{default_k_grid, frontier_from_table, frontier_polytope, FrontierPolicy};
use polece::rules::{select_polece, select_rw_polytope};

fn main() -> polece::Result<()> {
    let table = load_estimates(concat!(env!("CARGO_MANIFEST_DIR"), "/data/adult_programs.csv"))?;

    let menu = frontier_from_table(&table)?;
    eprintln!("single-program frontier:");
    for p in menu.points() {
        if let FrontierPolicy::Index(j) = p.policy {
            eprintln!("  se {:.2}  value {:.2}  {}", p.risk, p.value, table.labels()[j]);
        }
    }

    let simplex = Polytope::simplex(table.len())?;
    let cfg = BootstrapConfig::new(0.05, 20_000, 7)?;
    let q = quantile_polytope(&table, &simplex, &cfg)?.q_hat;
    let frontier = frontier_polytope(&table, &simplex, &default_k_grid(q, 200))?;

    let polece = select_polece(&table, &PolicySpace::Polytope(simplex.clone()), &cfg)?;
    let ewm = select_rw_polytope(&table, &simplex, 0.0)?;
    let mark = |r: &polece::rules::SelectionReport| frontier.nearest(r.s_hat, r.v_hat).map(|p| (p.risk, p.value));
    let (pe, pp) = (mark(&ewm), mark(&polece));
    let markers: Vec<String> = frontier
        .points()
        .iter()
        .map(|p| {
            let at = Some((p.risk, p.value));
            match (at == pe, at == pp) {
                (true, true) => "EWM;PoLeCe".into(),
                (true, false) => "EWM".into(),
                (false, true) => "PoLeCe".into(),
                _ => String::new(),
            }
        })
        .collect();
    eprintln!("allocation frontier: {} points, q = {q:.4}", frontier.len());
    frontier.write_csv(std::io::stdout().lock(), table.labels(), &[], Some(&markers))
}
