//! Prunes and quantizes an autoencoder across the compression grid, shows
//! the coded sizes and the fitted size models used by the planner.
//!
//! ```text
//! cargo run --release --example compress_model -- [SEED]
//! ```

use acord::compression::{calibrate_sizes, compress, decode_model_payload, model_payload};
use acord::dataset::{prepare, synth_trace, SplitSpec, SynthConfig};
use acord::model::{train, DenseModel, Head, QuantLevel, TrainBatch, TrainConfig};
use acord::planner::p_threshold;

fn main() -> acord::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(1), |s| s.parse()).expect("seed");
    let synth = SynthConfig {
        length: 3000,
        ..SynthConfig::default()
    };
    let data = prepare(&synth_trace(&synth, seed)?, SplitSpec::default())?;
    let inputs: Vec<Vec<f64>> = data.train.samples().iter().map(|s| s.features.clone()).collect();
    let batch = TrainBatch::new(inputs.clone(), vec![false; inputs.len()])?;
    let n = data.train.feature_count();
    let fresh = DenseModel::new(&[n, 64, 16, 64, n], Head::Autoencoder, seed)?;
    let model = train(&fresh, &batch, &TrainConfig { epochs: 20, ..TrainConfig::default() }, seed)?;
    let probe = &data.test.samples()[0].features;
    let reference = model.reconstruction_error(probe)?;

    println!("{:>5} {:>4} {:>10} {:>14}", "P", "Q", "bits", "probe error");
    for q in [QuantLevel::Q32, QuantLevel::Q8] {
        for p in [0.0, 0.25, 0.5, 0.75, 0.9, 1.0] {
            let compressed = compress(&model, p, q, &inputs)?;
            let payload = model_payload(&compressed)?;
            let installed = decode_model_payload(&payload.bytes)?;
            println!(
                "{p:>5.2} {:>4} {:>10} {:>14.6}",
                q.bits(),
                payload.coded_bits,
                installed.reconstruction_error(probe)?
            );
        }
    }
    println!("uncompressed probe error {reference:.6}");

    let test: Vec<Vec<f64>> = data.test.samples().iter().map(|s| s.features.clone()).collect();
    let sizes = calibrate_sizes(&model, &test, 200, 25, 512)?;
    for (name, fit) in [("dl q8", sizes.dl_q8), ("dl q32", sizes.dl_q32), ("ul", sizes.ul)] {
        println!(
            "{name:>6}: bits = {:.1} * x + {:.1} (max residual {:.1})",
            fit.slope, fit.intercept, fit.residual_max
        );
    }
    println!("P_th = {:.4}", p_threshold(&sizes)?);
    Ok(())
}
