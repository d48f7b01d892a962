//! Threshold calibration: a continual-learning dry run per threshold for
//! both detectors, with the resulting ROC points, AUC and chosen threshold.
//!
//! ```text
//! cargo run --release --example roc_curves -- [SEED] [CONFIG]
//! ```

use acord::experiment::{detector_name, roc_dry_run, ExperimentConfig, Scenario};
use acord::model::Head;
use acord::planner::{auc, select_threshold};

fn main() -> acord::Result<()> {
    let seed: u64 = std::env::args().nth(1).map_or(Ok(1), |s| s.parse()).expect("seed");
    let config = match std::env::args().nth(2) {
        Some(path) => ExperimentConfig::load(path.as_ref())?,
        None => ExperimentConfig::default(),
    };
    let validation = Scenario::validation(&config, seed)?;
    for head in [Head::Autoencoder, Head::Classifier] {
        let points = roc_dry_run(&config, &validation, head)?;
        println!("{}: AUC {:.3}", detector_name(head), auc(&points));
        for p in &points {
            println!("  tau {:.1}  fpr {:.3}  tpr {:.3}", p.tau, p.fpr, p.tpr);
        }
        let best = select_threshold(&points)?;
        println!("  chosen tau {}", best.tau);
    }
    Ok(())
}
