//! End-to-end acceptance checks. Prints one PASS/FAIL line per criterion
//! and exits non-zero if any fails.

use std::path::Path;
use std::time::Instant;

use acord::compression::{self, data_payload, measure_dl_bits, prune_grid, SizeCalibration};
use acord::experiment::{
    cmd_run, cmd_sweep, read_rounds_csv, roc_dry_run, simulate, sweep_points, write_rounds_csv, Axis,
    ExperimentConfig, Scenario, TauSetting,
};
use acord::model::{batch_loss, gradient, DenseModel, Head, LossWeights, QuantLevel, TrainBatch};
use acord::planner::{self, auc, PlanInputs};
use acord::runtime::{recall, Policy};
use anyhow::{ensure, Result};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Verdict = Result<(bool, String)>;

/// Scenario size for the checks that need many runs.
fn desk_config() -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.synth.length = 3000;
    c.tau = TauSetting::Fixed(0.4);
    c
}

fn rel(a: f64, b: f64) -> f64 {
    if a == b {
        0.0
    } else {
        (a - b).abs() / a.abs().max(b.abs())
    }
}

/// Recomputes per-round and cumulative energy from a rounds CSV with the
/// radio and compute constants written out here.
fn energy_oracle() -> Verdict {
    let config = desk_config();
    let scenario = Scenario::build(&config, 11)?;
    let dir = tempfile::tempdir()?;
    let mut worst = 0.0f64;
    let mut rounds = 0;
    for (policy, e_th, mbps) in [
        (Policy::Acord, 20.0, 1.0),
        (Policy::Acord, 60.0, 0.1),
        (Policy::Hawk, 20.0, 1.0),
        (Policy::Periodic, 20.0, 0.5),
    ] {
        let run = config.run_config(e_th, 0.4);
        let out = simulate(&scenario, Head::Autoencoder, policy, &run, mbps * 1e6, config.header_bits, 11)?;
        let path = dir.path().join(format!("{policy}-{e_th}-{mbps}.csv"));
        write_rounds_csv(&path, &out.reports, &config.energy)?;
        let rows = read_rounds_csv(&path)?;
        ensure!(rows.len() == out.ledger.entries().len(), "round count differs from ledger");
        let qs: Vec<QuantLevel> = out.reports.iter().map(|r| r.model_quant).collect();
        let mut total = 0.0;
        for (row, q) in rows.iter().zip(qs) {
            let e_inf = match q {
                QuantLevel::Q8 => 1.4e-6,
                QuantLevel::Q32 => 6.6e-6,
            };
            let comm = row.t_ul * 0.79 + row.t_dl * 0.33;
            let comp = e_inf * row.inferences as f64;
            total += comm + comp;
            worst = worst.max(rel(comm, row.e_comm)).max(rel(comp, row.e_comp)).max(rel(total, row.e_total));
        }
        worst = worst.max(rel(total, out.ledger.total()));
        rounds += rows.len();
    }
    Ok((worst <= 1e-9, format!("{rounds} rounds over 4 runs, worst relative error {worst:.2e}")))
}

fn budget_compliance() -> Verdict {
    let mut config = desk_config();
    config.seeds = (1..=10).collect();
    config.policies = vec![Policy::Acord, Policy::Periodic];
    let mut points = Vec::new();
    for mbps in [0.1, 1.0] {
        for e_th in [10.0, 20.0, 30.0, 40.0, 50.0, 60.0] {
            points.push((e_th, mbps));
        }
    }
    let rows = sweep_points(&config, &points)?;
    let violations: Vec<String> = rows
        .iter()
        .filter(|r| r.e_total > r.e_th)
        .map(|r| format!("{} seed {} at {} J/{} Mbps used {}", r.policy, r.seed, r.e_th, r.bandwidth_mbps, r.e_total))
        .collect();
    let worst = rows.iter().map(|r| r.e_total / r.e_th).fold(0.0, f64::max);
    Ok((
        violations.is_empty() && rows.len() == 240,
        format!(
            "{} runs, {} violations, highest use {:.4} of budget {}",
            rows.len(),
            violations.len(),
            worst,
            violations.first().map(String::as_str).unwrap_or("")
        ),
    ))
}

fn recall_oracle() -> Verdict {
    let mut config = desk_config();
    config.synth.length = 2000;
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut mismatches = 0;
    let mut summary = Vec::new();
    for i in 0..20 {
        let seed = rng.gen_range(0..1_000_000u64);
        let policy = Policy::ALL[i % 3];
        let e_th = rng.gen_range(2.0..60.0);
        let mbps = [0.1, 0.25, 0.5, 1.0, 2.0][rng.gen_range(0..5)];
        let tau = rng.gen_range(1..9) as f64 / 10.0;
        let scenario = Scenario::build(&config, seed)?;
        let run = config.run_config(e_th, tau);
        let out = simulate(&scenario, Head::Autoencoder, policy, &run, mbps * 1e6, config.header_bits, seed)?;
        let tp = out.predictions.iter().filter(|p| p.predicted && p.label).count();
        let faults = out.predictions.iter().filter(|p| p.label).count();
        let brute = tp as f64 / faults.max(1) as f64;
        if brute != recall(&out.reports) || brute != out.metrics.recall {
            mismatches += 1;
        }
        // cumulative recall in every report against a prefix recount
        for r in &out.reports {
            let prefix = &out.predictions[..r.span_end];
            let tp = prefix.iter().filter(|p| p.predicted && p.label).count();
            let faults = prefix.iter().filter(|p| p.label).count();
            if r.recall != tp as f64 / faults.max(1) as f64 {
                mismatches += 1;
            }
        }
        ensure!(out.predictions.len() == scenario.data.test.len(), "prediction log incomplete");
        summary.push(format!("{brute:.2}"));
    }
    Ok((mismatches == 0, format!("20 runs, {mismatches} mismatches, recalls [{}]", summary.join(" "))))
}

/// Which hidden units are active for each input, computed from the raw
/// layer parameters.
fn relu_pattern(model: &DenseModel, inputs: &[Vec<f64>]) -> Vec<bool> {
    let layers = model.layers();
    let mut pattern = Vec::new();
    for x in inputs {
        let mut a = x.clone();
        for layer in &layers[..layers.len() - 1] {
            let next: Vec<f64> = (0..layer.outputs())
                .map(|o| {
                    let row = &layer.weights()[o * layer.inputs()..(o + 1) * layer.inputs()];
                    layer.biases()[o] + row.iter().zip(&a).map(|(w, v)| w * v).sum::<f64>()
                })
                .collect();
            pattern.extend(next.iter().map(|&z| z > 0.0));
            a = next.into_iter().map(|z| z.max(0.0)).collect();
        }
    }
    pattern
}

/// Central differences against backprop for every parameter.
fn gradient_check() -> Verdict {
    let weights = LossWeights {
        fault: -0.1,
        normal: 1.0,
    };
    let step = 1e-5;
    let mut worst = 0.0f64;
    let (mut checked, mut kinks) = (0usize, 0usize);
    for seed in 0..10u64 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (dims, head) in [
            (vec![6, 5, 3, 5, 6], Head::Autoencoder),
            (vec![6, 5, 3, 1], Head::Classifier),
        ] {
            let model = DenseModel::new(&dims, head, seed)?;
            let inputs: Vec<Vec<f64>> = (0..8).map(|_| (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect()).collect();
            let labels: Vec<bool> = (0..8).map(|i| i % 3 == 0).collect();
            let batch = TrainBatch::new(inputs, labels)?;
            let analytic = gradient(&model, &batch, weights)?;
            for l in 0..model.layers().len() {
                let n_w = model.layers()[l].weights().len();
                let n_b = model.layers()[l].biases().len();
                for k in 0..n_w + n_b {
                    let nudged = |delta: f64| {
                        let mut m = model.clone();
                        let layer = &mut m.layers_mut()[l];
                        if k < n_w {
                            layer.weights_mut()[k] += delta;
                        } else {
                            layer.biases_mut()[k - n_w] += delta;
                        }
                        m
                    };
                    let (up, down) = (nudged(step), nudged(-step));
                    // a difference straddling a ReLU kink measures no derivative
                    if relu_pattern(&up, &batch.inputs) != relu_pattern(&down, &batch.inputs) {
                        kinks += 1;
                        continue;
                    }
                    let numeric = (batch_loss(&up, &batch, weights)? - batch_loss(&down, &batch, weights)?) / (2.0 * step);
                    let g = if k < n_w {
                        analytic.weights[l][k]
                    } else {
                        analytic.biases[l][k - n_w]
                    };
                    let err = (g - numeric).abs() / g.abs().max(numeric.abs()).max(1e-6);
                    worst = worst.max(err);
                    checked += 1;
                }
            }
        }
    }
    Ok((
        worst <= 1e-4 && checked > 20 * kinks,
        format!("{checked} parameters over 10 seeds x 2 heads ({kinks} skipped at a ReLU kink), worst relative error {worst:.2e}"),
    ))
}

fn compression_properties() -> Verdict {
    let config = ExperimentConfig::default();
    let scenario = Scenario::build(&config, 3)?;
    let model = &scenario.ae;
    let sizes: &SizeCalibration = &scenario.ae_sizes;
    let mut monotone = true;
    for q in [QuantLevel::Q8, QuantLevel::Q32] {
        let bits: Vec<u64> = prune_grid()
            .iter()
            .map(|&p| measure_dl_bits(model, p, q))
            .collect::<acord::Result<_>>()?;
        monotone &= bits.windows(2).all(|w| w[1] <= w[0]);
    }
    let header = sizes.header_bits as f64;
    let b8 = measure_dl_bits(model, 0.0, QuantLevel::Q8)? as f64 + header;
    let b32 = measure_dl_bits(model, 0.0, QuantLevel::Q32)? as f64 + header;
    let p_th = planner::p_threshold(sizes)?;
    let at_p_th = measure_dl_bits(model, p_th, QuantLevel::Q32)? as f64 + header;
    let gap = (at_p_th - b8).abs();
    let tolerance = sizes.dl_q32.residual_max + sizes.dl_q8.residual_max;
    Ok((
        monotone && b8 < b32 && gap <= tolerance,
        format!(
            "monotone {monotone}, b(0,8) {b8} < b(0,32) {b32}, P_th {p_th:.4}: |b(P_th,32) - b(0,8)| = {gap} <= {tolerance}"
        ),
    ))
}

fn planner_feasibility() -> Verdict {
    let config = ExperimentConfig::default();
    let scenario = Scenario::build(&config, 5)?;
    let sizes = &scenario.ae_sizes;
    let model = &scenario.ae;
    let p_th = planner::p_threshold(sizes)?;
    let train: Vec<&[f64]> = scenario.data.train.samples().iter().map(|s| s.features.as_slice()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let (mut failures, mut clamped) = (Vec::new(), 0);
    for draw in 0..100 {
        let e_th = rng.gen_range(10.0..60.0);
        let rate = rng.gen_range(0.1..2.0) * 1e6;
        let params = acord::energy::EnergyParams {
            budget: e_th,
            ..config.energy
        };
        let inputs = PlanInputs {
            params: &params,
            sizes,
            rate,
            comp_estimate: params.inference.q32 * scenario.data.test.len() as f64,
            p_th,
            w_max: config.w_max,
        };
        let plan = planner::plan(&inputs, 0.5)?;
        let t = planner::target_latencies(&inputs)?;
        let in_range = (0.0..=1.0).contains(&plan.prune_level) && plan.window <= config.w_max;
        // fitted sizes
        let dl_fit = sizes.downlink(plan.quant).predict(plan.prune_level);
        let ul_fit = sizes.ul.predict(plan.window as f64);
        let dl_budget = rate * t.downlink;
        let ul_budget = rate * t.uplink;
        let dl_max_compression = plan.prune_level == 1.0 && plan.quant == QuantLevel::Q8;
        let dl_ok = dl_fit <= dl_budget * (1.0 + 1e-9) || dl_max_compression;
        let ul_ok = ul_fit <= ul_budget * (1.0 + 1e-9) || plan.window == 0;
        if dl_max_compression || plan.window == 0 {
            clamped += 1;
        }
        // measured sizes, within the fit residual
        let dl_meas = measure_dl_bits(model, plan.prune_level, plan.quant)? as f64 + sizes.header_bits as f64;
        let width = (2 * plan.window + 1).min(train.len());
        let block: Vec<(usize, &[f64])> = (0..width).map(|i| (i, train[i])).collect();
        let ul_meas = data_payload(&block, plan.window)?.coded_bits as f64 + sizes.header_bits as f64;
        let dl_meas_ok = dl_meas <= dl_budget + sizes.downlink(plan.quant).residual_max || dl_max_compression;
        let ul_meas_ok = ul_meas <= ul_budget + sizes.ul.residual_max || plan.window == 0;
        if !(in_range && dl_ok && ul_ok && dl_meas_ok && ul_meas_ok) {
            failures.push(format!(
                "draw {draw}: E_th {e_th:.1} rate {rate:.0} plan ({:.3},{},{}) dl {dl_fit:.0}/{dl_meas:.0} vs {dl_budget:.0}, ul {ul_fit:.0}/{ul_meas:.0} vs {ul_budget:.0}",
                plan.prune_level,
                plan.quant.bits(),
                plan.window
            ));
        }
    }
    let _ = compression::uplink_bits(1, 1, 0);
    Ok((
        failures.is_empty(),
        format!(
            "100 draws, {} outside bounds, {clamped} at a compression or window clamp {}",
            failures.len(),
            failures.first().map(String::as_str).unwrap_or("")
        ),
    ))
}

fn median(mut v: Vec<f64>) -> f64 {
    acord::experiment::median(&mut v)
}

fn roc_dominance() -> Verdict {
    let started = Instant::now();
    let config = ExperimentConfig::default();
    let (mut ae, mut mlp) = (Vec::new(), Vec::new());
    for seed in 1..=5 {
        let validation = Scenario::validation(&config, seed)?;
        ae.push(auc(&roc_dry_run(&config, &validation, Head::Autoencoder)?));
        mlp.push(auc(&roc_dry_run(&config, &validation, Head::Classifier)?));
    }
    let fmt = |v: &[f64]| v.iter().map(|a| format!("{a:.3}")).collect::<Vec<_>>().join(" ");
    let detail = format!("AE AUC [{}], MLP AUC [{}]", fmt(&ae), fmt(&mlp));
    let (ae_med, mlp_med) = (median(ae), median(mlp));
    let elapsed = started.elapsed().as_secs_f64();
    Ok((
        ae_med >= 0.65 && ae_med > mlp_med && elapsed <= 600.0,
        format!("median AE {ae_med:.3} vs MLP {mlp_med:.3} in {elapsed:.0} s; {detail}"),
    ))
}

fn baseline_ordering() -> Verdict {
    let config = ExperimentConfig::default();
    let points = [(10.0, 1.0), (20.0, 1.0), (60.0, 0.1)];
    let rows = sweep_points(&config, &points)?;
    let med = acord::experiment::medians(&rows);
    let get = |p: Policy, e: f64, b: f64| {
        med.iter()
            .find(|m| m.policy == p && m.e_th == e && m.bandwidth_mbps == b)
            .map(|m| m.recall)
            .unwrap_or(f64::NAN)
    };
    let mut ok = true;
    let mut detail = Vec::new();
    for (e, b) in points {
        let (a, h, p) = (get(Policy::Acord, e, b), get(Policy::Hawk, e, b), get(Policy::Periodic, e, b));
        ok &= a >= h && a >= p;
        detail.push(format!("{e} J/{b} Mbps: acord {a:.3} hawk {h:.3} periodic {p:.3}"));
    }
    Ok((ok, format!("medians over {} seeds; {}", config.seeds.len(), detail.join("; "))))
}

fn same_bytes(a: &Path, b: &Path) -> Result<bool> {
    Ok(std::fs::read(a)? == std::fs::read(b)?)
}

fn determinism() -> Verdict {
    let mut config = desk_config();
    config.seeds = vec![4];
    config.e_th = vec![20.0];
    config.bandwidth = vec![0.5];
    let dirs = [tempfile::tempdir()?, tempfile::tempdir()?];
    for d in &dirs {
        config.out = d.path().to_path_buf();
        cmd_sweep(&config, Axis::Energy)?;
        cmd_run(&config)?;
    }
    let mut identical = true;
    for name in ["sweep_energy.csv", "sweep_energy_median.csv", "rounds.csv", "ledger.csv", "predictions.csv", "metrics.csv"] {
        identical &= same_bytes(&dirs[0].path().join(name), &dirs[1].path().join(name))?;
    }
    Ok((identical, "sweep point and single run repeated; all six CSVs compared byte for byte".into()))
}

fn main() {
    let criteria: [(&str, fn() -> Verdict); 9] = [
        ("1 energy oracle", energy_oracle),
        ("2 budget compliance", budget_compliance),
        ("3 recall oracle", recall_oracle),
        ("4 gradient check", gradient_check),
        ("5 compression properties", compression_properties),
        ("6 planner feasibility", planner_feasibility),
        ("7 ROC dominance", roc_dominance),
        ("8 baseline ordering", baseline_ordering),
        ("9 determinism", determinism),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (name, check) in criteria {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let started = Instant::now();
        let (pass, detail) = match check() {
            Ok(v) => v,
            Err(e) => (false, format!("error: {e:#}")),
        };
        if !pass {
            failed += 1;
        }
        println!(
            "[{}] {name} ({:.1} s): {detail}",
            if pass { "PASS" } else { "FAIL" },
            started.elapsed().as_secs_f64()
        );
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        std::process::exit(1);
    }
}
