//! Runs the three policies on one synthetic scenario and prints recall and
//! energy for each.
//!
//! ```text
//! cargo run --release --example compare_policies -- [E_TH_J] [BANDWIDTH_MBPS] [SEED]
//! ```

use std::time::Instant;

use acord::experiment::{resolve_tau, simulate, ExperimentConfig, Scenario};
use acord::runtime::Policy;

fn main() -> acord::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let e_th: f64 = args.first().map_or(Ok(20.0), |s| s.parse()).expect("budget in J");
    let mbps: f64 = args.get(1).map_or(Ok(1.0), |s| s.parse()).expect("bandwidth in Mbit/s");
    let seed: u64 = args.get(2).map_or(Ok(1), |s| s.parse()).expect("seed");

    let config = ExperimentConfig::default();
    let started = Instant::now();
    let scenario = Scenario::build(&config, seed)?;
    let tau = resolve_tau(&config, seed)?;
    println!(
        "scenario ready in {:.1?}: {} test samples, {} faults, tau = {tau}",
        started.elapsed(),
        scenario.data.test.len(),
        scenario.data.test.fault_count()
    );

    let run = config.run_config(e_th, tau);
    for policy in Policy::ALL {
        let t = Instant::now();
        let out = simulate(&scenario, config.detector, policy, &run, mbps * 1e6, config.header_bits, seed)?;
        let m = &out.metrics;
        println!(
            "{policy:>8}: recall {:.3}  energy {:.3} J  updates {:>3}  detections {:>5}  ({:.1?})",
            m.recall,
            m.e_total,
            m.rounds,
            m.detections,
            t.elapsed()
        );
    }
    Ok(())
}
