//! Monte Carlo comparison of EWM and PoLeCe. The best policy is estimated
//! precisely while two slightly worse ones are noisy: EWM is often lured by a
//! lucky noisy draw, PoLeCe rarely is.

use polece::bootstrap::BootstrapConfig;
use polece::estimates::EstimateTable;
use polece::simlab::{regret_bound_check, run_sim, SimDesign, SimRule};

fn main() -> polece::Result<()> {
    let truth = EstimateTable::new(
        vec!["precise best".into(), "noisy A".into(), "noisy B".into(), "status quo".into()],
        vec![1.0, 0.95, 0.9, 0.6],
        vec![0.01, 0.5, 0.4, 0.05],
    )?;
    let mut design = SimDesign::new(truth, 10_000, BootstrapConfig::new(0.05, 100_000, 11)?);
    design.control = Some(3);
    design.rules = vec![SimRule::Ewm, SimRule::Polece, SimRule::Rw(1.0), SimRule::Control];

    let result = run_sim(&design)?;
    result.write_csv(std::io::stdout().lock(), &[])?;

    let check = regret_bound_check(&design, 0.0, 0.05)?;
    println!(
        "\nEWM regret bound {:.4} violated in {:.2}% of replications",
        check.bound,
        100.0 * check.violation_frequency
    );
    Ok(())
}
