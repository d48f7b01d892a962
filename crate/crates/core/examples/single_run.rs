//! One run with full per-round logging, driven by a config file and
//! `key=value` overrides. Writes rounds, ledger, prediction and metrics CSVs
//! to the configured output directory.
//!
//! ```text
//! cargo run --release --example single_run -- policy=hawk e-th=20 out=out/hawk
//! ```

use acord::experiment::{cmd_run, ExperimentConfig};

fn main() -> acord::Result<()> {
    let mut config = ExperimentConfig::default();
    for arg in std::env::args().skip(1) {
        match arg.split_once('=') {
            Some((key, value)) => config.set(key, value)?,
            None => config = ExperimentConfig::load(arg.as_ref())?,
        }
    }
    let out = cmd_run(&config)?;
    let m = &out.metrics;
    println!(
        "{}: recall {:.3}, energy {:.3} J of {} J, {} model updates over {} rounds",
        m.policy,
        m.recall,
        m.e_total,
        config.e_th[0],
        m.rounds,
        out.reports.len()
    );
    println!("CSVs written to {}", config.out.display());
    Ok(())
}
