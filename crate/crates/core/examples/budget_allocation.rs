//! Split a budget across the adult programs: EWM puts everything on the
//! highest point estimate, PoLeCe trades a little value for a much tighter
//! lower confidence bound.
//!
//! cargo run --release --example budget_allocation [draws] [seed]

use polece::bootstrap::BootstrapConfig;
use polece::cli::summary;
use polece::estimates::{load_estimates, PolicySpace, Polytope};
use polece::rules::compare_rules;

fn main() -> polece::Result<()> {
    let mut args = std::env::args().skip(1);
    let draws = args.next().map_or(Ok(20_000), |s| s.parse()).expect("draws");
    let seed = args.next().map_or(Ok(7), |s| s.parse()).expect("seed");

    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/data/adult_programs.csv");
    let table = load_estimates(path)?;
    let space = PolicySpace::Polytope(Polytope::simplex(table.len())?);
    let cfg = BootstrapConfig::new(0.05, draws, seed)?;

    let cmp = compare_rules(&table, &space, &cfg)?;
    print!("{}", summary(&[&cmp.ewm, &cmp.polece], cmp.q_hat()));

    // Programs capped at 50% of the budget each.
    let capped = Polytope::new(vec![0.0; table.len()], vec![0.5; table.len()])?;
    let cmp = compare_rules(&table, &PolicySpace::Polytope(capped), &cfg)?;
    println!("\nwith a 50% cap per program:");
    print!("{}", summary(&[&cmp.ewm, &cmp.polece], cmp.q_hat()));
    Ok(())
}
