//! Generates a synthetic trace, trains both detectors on the normal
//! initial split and reports how well each separates faults in the rest.
//!
//! ```text
//! cargo run --release --example train_detectors -- [SEED]
//! ```

use acord::dataset::{prepare, synth_trace, SplitSpec, SynthConfig};
use acord::model::{train_with_history, DenseModel, Head, TrainBatch, TrainConfig};
use acord::planner::{auc, roc_curve, select_threshold};

fn main() -> acord::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(1), |s| s.parse()).expect("seed");
    let synth = SynthConfig {
        length: 4000,
        ..SynthConfig::default()
    };
    let trace = synth_trace(&synth, seed)?;
    let data = prepare(&trace, SplitSpec::default())?;
    println!(
        "trace: {} samples x {} features, {} faults; train {} / test {}",
        trace.len(),
        trace.feature_count(),
        trace.fault_count(),
        data.train.len(),
        data.test.len()
    );

    let batch = TrainBatch::new(
        data.train.samples().iter().map(|s| s.features.clone()).collect(),
        data.train.samples().iter().map(|s| s.label).collect(),
    )?;
    let n = trace.feature_count();
    let config = TrainConfig {
        epochs: 30,
        ..TrainConfig::default()
    };
    for (head, dims) in [
        (Head::Autoencoder, vec![n, 64, 16, 64, n]),
        (Head::Classifier, vec![n, 64, 16, 1]),
    ] {
        let (model, history) = train_with_history(&DenseModel::new(&dims, head, seed)?, &batch, &config, seed)?;
        let scores: Vec<f64> = data
            .test
            .samples()
            .iter()
            .map(|s| model.fault_score(&s.features))
            .collect::<acord::Result<_>>()?;
        let labels: Vec<bool> = data.test.samples().iter().map(|s| s.label).collect();
        let curve = roc_curve(&scores, &labels, 0.05)?;
        let best = select_threshold(&curve)?;
        println!(
            "{head:?}: loss {:.5} -> {:.5}, e_ref {:?}, AUC {:.3}, best tau {:.2} (TPR {:.3}, FPR {:.3})",
            history[0],
            history[history.len() - 1],
            model.e_ref(),
            auc(&curve),
            best.tau,
            best.tpr,
            best.fpr
        );
    }
    Ok(())
}
