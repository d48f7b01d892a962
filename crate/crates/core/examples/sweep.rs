//! Recall and energy of every policy along one sweep axis, median over
//! seeds. Raw and median CSVs land in the output directory.
//!
//! ```text
//! cargo run --release --example sweep -- energy e-th=10,20,30 seeds=1,2,3
//! cargo run --release --example sweep -- bandwidth bandwidth=0.1,1
//! ```

use acord::experiment::{cmd_sweep, Axis, ExperimentConfig};

fn main() -> acord::Result<()> {
    let mut args = std::env::args().skip(1);
    let axis: Axis = args.next().as_deref().unwrap_or("energy").parse()?;
    let mut config = ExperimentConfig::default();
    for arg in args {
        match arg.split_once('=') {
            Some((key, value)) => config.set(key, value)?,
            None => config = ExperimentConfig::load(arg.as_ref())?,
        }
    }
    let (_, medians) = cmd_sweep(&config, axis)?;
    println!("{:>9} {:>6} {:>6} {:>7} {:>9}", "policy", "e_th", "mbps", "recall", "energy");
    for m in medians {
        println!(
            "{:>9} {:>6} {:>6} {:>7.3} {:>9.3}",
            m.policy.name(),
            m.e_th,
            m.bandwidth_mbps,
            m.recall,
            m.e_total
        );
    }
    Ok(())
}
