use polece::bootstrap::BootstrapConfig;
use polece::estimates::EstimateTable;
use polece::simlab::{load_design, percentile, regret_bound_check, run_sim, run_sim_with_quantile, SimDesign, SimRule};

fn truth(v: &[f64], s: &[f64]) -> EstimateTable {
    EstimateTable::new((0..v.len()).map(|j| format!("p{j}")).collect(), v.to_vec(), s.to_vec()).unwrap()
}

fn ten_policies() -> EstimateTable {
    let v: Vec<f64> = (0..10).map(|j| 1.0 - 0.04 * j as f64).collect();
    let s: Vec<f64> = (0..10).map(|j| 0.05 + 0.09 * ((j * 7) % 10) as f64).collect();
    truth(&v, &s)
}

#[test]
fn regret_bound_holds_with_the_stated_frequency() {
    let design = SimDesign::new(ten_policies(), 5000, BootstrapConfig::new(0.05, 20_000, 12).unwrap());
    for k in [0.0, 1.0, 2.5] {
        let b = regret_bound_check(&design, k, 0.05).unwrap();
        assert!(b.violation_frequency <= 0.12, "k={k}: {}", b.violation_frequency);
        assert!(b.q_all >= b.q_best);
        assert!(b.bound > 0.0);
    }
}

#[test]
fn all_policies_equally_good_means_no_regret() {
    let design = SimDesign {
        rules: vec![SimRule::Ewm, SimRule::Polece, SimRule::Rw(0.7)],
        ..SimDesign::new(truth(&[1.0; 5], &[0.1, 0.5, 0.2, 0.9, 0.3]), 500, BootstrapConfig::new(0.05, 5000, 3).unwrap())
    };
    let r = run_sim(&design).unwrap();
    for st in &r.stats {
        assert_eq!(st.avg_regret_pct, 0.0);
        assert_eq!(st.p95_regret_pct, 0.0);
    }
    assert_eq!(regret_bound_check(&design, 1.0, 0.05).unwrap().violation_frequency, 0.0);
}

#[test]
fn lower_bounds_cover_for_every_rule() {
    let design = SimDesign {
        rules: vec![SimRule::Ewm, SimRule::Polece, SimRule::Rw(1.0), SimRule::Control],
        control: Some(9),
        ..SimDesign::new(ten_policies(), 4000, BootstrapConfig::new(0.05, 20_000, 99).unwrap())
    };
    let r = run_sim(&design).unwrap();
    for st in &r.stats {
        assert!(st.coverage >= 0.94, "{}: {}", st.rule.name(), st.coverage);
    }
    let ewm = r.get(SimRule::Ewm).unwrap();
    let polece = r.get(SimRule::Polece).unwrap();
    assert!(polece.avg_lcb_pct >= ewm.avg_lcb_pct);
}

#[test]
fn heterogeneous_risk_favours_the_cautious_rule() {
    // the best policy is precise; a close second is very noisy
    let design = SimDesign::new(
        truth(&[1.0, 0.95, 0.9, 0.6], &[0.01, 0.5, 0.4, 0.05]),
        4000,
        BootstrapConfig::new(0.05, 20_000, 5).unwrap(),
    );
    let r = run_sim(&design).unwrap();
    let (ewm, polece) = (r.get(SimRule::Ewm).unwrap(), r.get(SimRule::Polece).unwrap());
    assert!(polece.p95_regret_pct < ewm.p95_regret_pct);
    assert!(polece.avg_regret_pct < ewm.avg_regret_pct);
}

#[test]
fn identical_across_thread_counts() {
    let design = SimDesign::new(ten_policies(), 3000, BootstrapConfig::new(0.05, 4000, 8).unwrap());
    let run = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| (run_sim(&design).unwrap(), regret_bound_check(&design, 1.0, 0.05).unwrap()))
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn fixed_critical_value_is_used_verbatim() {
    let design = SimDesign::new(ten_policies(), 200, BootstrapConfig::new(0.05, 1000, 1).unwrap());
    let r = run_sim_with_quantile(&design, 0.0).unwrap();
    assert_eq!(r.q_hat, 0.0);
    // with q = 0 PoLeCe is EWM
    assert_eq!(r.get(SimRule::Ewm).unwrap().avg_regret_pct, r.get(SimRule::Polece).unwrap().avg_regret_pct);
}

#[test]
fn nearest_rank_percentiles() {
    let xs: Vec<f64> = (1..=20).map(f64::from).collect();
    assert_eq!(percentile(&xs, 0.95), 19.0);
    assert_eq!(percentile(&xs, 0.5), 10.0);
    assert_eq!(percentile(&xs, 1.0), 20.0);
    assert_eq!(percentile(&xs, 0.0), 1.0);
    assert_eq!(percentile(&[3.0], 0.95), 3.0);
}

#[test]
fn design_files_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("truth.csv"), "label,estimate,se,known\nA,1.0,0.1,false\nB,0.9,0.6,false\nC,0.5,0.0,true\n").unwrap();
    let path = dir.path().join("design.txt");
    std::fs::write(&path, "# toy\ntruth = truth.csv\nreplications = 300\nseed = 4\ndraws = 2000\nrules = ewm, polece, rw:1.5, control\ncontrol = C\n").unwrap();
    let d = load_design(&path).unwrap();
    assert_eq!(d.control, Some(2));
    assert_eq!(d.rules, vec![SimRule::Ewm, SimRule::Polece, SimRule::Rw(1.5), SimRule::Control]);
    assert_eq!((d.replications, d.bootstrap.seed, d.bootstrap.draws), (300, 4, 2000));
    let r = run_sim(&d).unwrap();
    let control = r.get(SimRule::Control).unwrap();
    assert!((control.avg_regret_pct - 50.0).abs() < 1e-9);

    std::fs::write(&path, "truth = truth.csv\nbogus = 1\n").unwrap();
    assert!(load_design(&path).is_err());
    std::fs::write(dir.path().join("neg.csv"), "label,estimate,se\nA,-1.0,0.1\n").unwrap();
    std::fs::write(&path, "truth = neg.csv\n").unwrap();
    assert!(load_design(&path).is_err());
}
