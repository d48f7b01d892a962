use std::collections::BTreeSet;

use acord::experiment::{simulate, ExperimentConfig, Scenario, TauSetting};
use acord::model::{Head, QuantLevel};
use acord::runtime::Policy;

fn small_scenario(seed: u64) -> (ExperimentConfig, Scenario) {
    let mut config = ExperimentConfig::default();
    config.synth.length = 2000;
    config.initial_epochs = 10;
    config.tau = TauSetting::Fixed(0.4);
    let scenario = Scenario::build(&config, seed).unwrap();
    (config, scenario)
}

#[test]
fn planned_policy_with_the_fixed_plan_matches_the_baseline() {
    let (config, scenario) = small_scenario(7);
    let mut run = config.run_config(1e9, 0.4);
    run.baseline_tau = 0.4;
    run.fixed_plan = Some((0.0, QuantLevel::Q32, run.w_max));
    let planned = simulate(&scenario, Head::Autoencoder, Policy::Acord, &run, 1e6, config.header_bits, 3).unwrap();
    let baseline = simulate(&scenario, Head::Autoencoder, Policy::Hawk, &run, 1e6, config.header_bits, 3).unwrap();
    assert_eq!(planned.predictions, baseline.predictions);
    assert_eq!(planned.rehearsal, baseline.rehearsal);
    assert_eq!(planned.reports.len(), baseline.reports.len());
    assert!(planned.metrics.rounds > 0);
}

#[test]
fn rehearsal_is_the_union_of_uploaded_events() {
    let (config, scenario) = small_scenario(8);
    let run = config.run_config(40.0, 0.4);
    for policy in Policy::ALL {
        let out = simulate(&scenario, Head::Autoencoder, policy, &run, 1e6, config.header_bits, 5).unwrap();
        let unique: BTreeSet<usize> = out.rehearsal.iter().copied().collect();
        assert_eq!(unique.len(), out.rehearsal.len(), "{policy}: a sample was uploaded twice");
        let sent: usize = out.reports.iter().map(|r| r.samples_sent).sum();
        assert_eq!(sent, out.rehearsal.len(), "{policy}");
    }
}

#[test]
fn runs_are_reproducible_and_within_budget() {
    let (config, scenario) = small_scenario(9);
    for policy in Policy::ALL {
        let run = config.run_config(15.0, 0.4);
        let a = simulate(&scenario, Head::Autoencoder, policy, &run, 5e5, config.header_bits, 1).unwrap();
        let b = simulate(&scenario, Head::Autoencoder, policy, &run, 5e5, config.header_bits, 1).unwrap();
        assert_eq!(a.predictions, b.predictions);
        assert_eq!(a.reports, b.reports);
        if policy != Policy::Hawk {
            assert!(a.ledger.total() <= 15.0, "{policy} used {}", a.ledger.total());
        }
        let mut prev = 0.0;
        for e in a.ledger.entries() {
            assert!(e.total >= prev);
            prev = e.total;
        }
    }
}

#[test]
fn tiny_budget_yields_no_update() {
    let (config, scenario) = small_scenario(10);
    let run = config.run_config(1e-3, 0.4);
    let out = simulate(&scenario, Head::Autoencoder, Policy::Acord, &run, 1e6, config.header_bits, 1);
    match out {
        Ok(out) => {
            assert_eq!(out.metrics.rounds, 0);
            assert!(out.ledger.total() <= 1e-3);
        }
        Err(e) => assert!(matches!(e, acord::Error::Budget(_)), "{e}"),
    }
}
