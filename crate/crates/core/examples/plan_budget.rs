//! Prints the planner's decisions and energy estimates across budgets and
//! link rates, together with the periodic baseline's transmission period.
//!
//! ```text
//! cargo run --release --example plan_budget -- [SEED]
//! ```

use acord::compression::{calibrate_sizes, SizeCalibration};
use acord::dataset::{prepare, synth_trace, SplitSpec, SynthConfig};
use acord::energy::{comm_energy, comp_energy, EnergyParams};
use acord::model::{train, DenseModel, Head, QuantLevel, TrainBatch, TrainConfig};
use acord::planner::{p_threshold, periodic_period, plan, PlanInputs};

fn main() -> acord::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(1), |s| s.parse()).expect("seed");
    let synth = SynthConfig {
        length: 3000,
        ..SynthConfig::default()
    };
    let data = prepare(&synth_trace(&synth, seed)?, SplitSpec::default())?;
    let inputs: Vec<Vec<f64>> = data.train.samples().iter().map(|s| s.features.clone()).collect();
    let n = data.train.feature_count();
    let batch = TrainBatch::new(inputs.clone(), vec![false; inputs.len()])?;
    let model = train(
        &DenseModel::new(&[n, 64, 16, 64, n], Head::Autoencoder, seed)?,
        &batch,
        &TrainConfig { epochs: 10, ..TrainConfig::default() },
        seed,
    )?;
    let sizes: SizeCalibration = calibrate_sizes(&model, &inputs, 200, 25, 512)?;
    let p_th = p_threshold(&sizes)?;
    let horizon = data.test.len();
    println!("P_th {p_th:.3}, horizon {horizon} samples");

    println!("{:>6} {:>8} {:>6} {:>4} {:>5} {:>10} {:>10} {:>10}", "E_th", "Mbit/s", "P", "Q", "W", "E_dl", "E_ul", "periodic T");
    for e_th in [10.0, 20.0, 40.0, 60.0] {
        for mbps in [0.1, 0.5, 1.0, 2.0] {
            let params = EnergyParams {
                budget: e_th,
                ..EnergyParams::default()
            };
            let rate = mbps * 1e6;
            let inputs = PlanInputs {
                params: &params,
                sizes: &sizes,
                rate,
                comp_estimate: comp_energy(horizon as u64, QuantLevel::Q32, &params),
                p_th,
                w_max: 200,
            };
            let p = plan(&inputs, 0.5)?;
            let dl = sizes.downlink(p.quant).predict(p.prune_level) / rate;
            let ul = sizes.ul.predict(p.window as f64) / rate;
            let event = comm_energy(sizes.ul.predict(200.0) / rate, sizes.dl_q32.predict(0.0) / rate, &params)?;
            let period = periodic_period(e_th, horizon, event, params.inference.q32);
            println!(
                "{e_th:>6} {mbps:>8} {:>6.3} {:>4} {:>5} {:>10.4} {:>10.4} {:>10}",
                p.prune_level,
                p.quant.bits(),
                p.window,
                comm_energy(0.0, dl, &params)?,
                comm_energy(ul, 0.0, &params)?,
                period.map_or("none".into(), |t| format!("{t:.1}"))
            );
        }
    }
    Ok(())
}
