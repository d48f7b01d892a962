//! Energy-aware choice of compression level and uplink window, ROC-based
//! threshold selection, and the fixed rules of the baseline policies.

use crate::compression::{SizeCalibration, SizeModel};
use crate::energy::EnergyParams;
use crate::error::{Error, Result};
use crate::model::QuantLevel;

/// A round's configuration.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Plan {
    pub prune_level: f64,
    pub quant: QuantLevel,
    pub window: usize,
    pub tau: f64,
}

/// Everything the planner looks at.
#[derive(Debug, Clone, Copy)]
pub struct PlanInputs<'a> {
    pub params: &'a EnergyParams,
    pub sizes: &'a SizeCalibration,
    /// Current rate estimate `R̂`, bit/s.
    pub rate: f64,
    /// Expected compute energy over the horizon, J.
    pub comp_estimate: f64,
    pub p_th: f64,
    pub w_max: usize,
}

/// Per-direction time allowances, seconds.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TargetLatencies {
    pub downlink: f64,
    pub uplink: f64,
}

/// Scales the reference latencies (full model, widest window at the
/// reference rate) by the share of the budget left for the radio.
pub fn target_latencies(inputs: &PlanInputs) -> Result<TargetLatencies> {
    let p = inputs.params;
    if !(p.budget > inputs.comp_estimate) {
        return Err(Error::Budget(format!(
            "budget {} J does not cover expected compute {} J",
            p.budget, inputs.comp_estimate
        )));
    }
    let share = (p.budget - inputs.comp_estimate) / p.reference_energy;
    let tau_dl = inputs.sizes.dl_q32.predict(0.0) / p.reference_rate;
    let tau_ul = inputs.sizes.ul.predict(inputs.w_max as f64) / p.reference_rate;
    Ok(TargetLatencies {
        downlink: tau_dl * share,
        uplink: tau_ul * share,
    })
}

fn solve_prune(model: &SizeModel, bits: f64) -> Result<f64> {
    if !(model.slope < 0.0) {
        return Err(Error::DegenerateFit(format!(
            "model size must shrink with pruning, slope {}",
            model.slope
        )));
    }
    Ok(((bits - model.intercept) / model.slope).clamp(0.0, 1.0))
}

/// Pruning level at which the 32-bit size line meets the unpruned 8-bit
/// size, clamped to `[0, 1]`.
pub fn p_threshold(sizes: &SizeCalibration) -> Result<f64> {
    solve_prune(&sizes.dl_q32, sizes.dl_q8.predict(0.0))
}

/// Smallest compression that fits the downlink allowance: stay at 32 bits
/// while the pruning needed is at most `p_th`, otherwise go to 8 bits.
pub fn plan_downlink(t_dl: f64, inputs: &PlanInputs) -> Result<(f64, QuantLevel)> {
    let bits = inputs.rate * t_dl;
    let p32 = solve_prune(&inputs.sizes.dl_q32, bits)?;
    if p32 <= inputs.p_th {
        return Ok((p32, QuantLevel::Q32));
    }
    Ok((solve_prune(&inputs.sizes.dl_q8, bits)?, QuantLevel::Q8))
}

/// Widest window whose event fits the uplink allowance.
pub fn plan_uplink(t_ul: f64, inputs: &PlanInputs) -> Result<usize> {
    let ul = &inputs.sizes.ul;
    if !(ul.slope > 0.0) {
        return Err(Error::DegenerateFit(format!(
            "event size must grow with the window, slope {}",
            ul.slope
        )));
    }
    let w = ((inputs.rate * t_ul - ul.intercept) / ul.slope).floor();
    Ok(w.clamp(0.0, inputs.w_max as f64) as usize)
}

/// Full plan for the next round.
pub fn plan(inputs: &PlanInputs, tau: f64) -> Result<Plan> {
    let t = target_latencies(inputs)?;
    let (prune_level, quant) = plan_downlink(t.downlink, inputs)?;
    Ok(Plan {
        prune_level,
        quant,
        window: plan_uplink(t.uplink, inputs)?,
        tau,
    })
}

/// One operating point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RocPoint {
    pub tau: f64,
    pub fpr: f64,
    pub tpr: f64,
}

/// `{0, step, ..., 1}` with both endpoints, computed as `k / K` so the
/// grid values are exact decimals where possible.
pub fn tau_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 1.0) {
        return Err(Error::InvalidArgument(format!("grid step must be in (0, 1], got {step}")));
    }
    let k = (1.0 / step).round().max(1.0) as usize;
    Ok((0..=k).map(|i| i as f64 / k as f64).collect())
}

/// Rates of `score > tau` against the labels.
pub fn roc_point(scores: &[f64], labels: &[bool], tau: f64) -> Result<RocPoint> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            actual: scores.len(),
        });
    }
    let positives = labels.iter().filter(|l| **l).count();
    if positives == 0 {
        return Err(Error::NoPositives);
    }
    let negatives = labels.len() - positives;
    let (mut tp, mut fp) = (0usize, 0usize);
    for (s, l) in scores.iter().zip(labels) {
        if *s > tau {
            if *l {
                tp += 1;
            } else {
                fp += 1;
            }
        }
    }
    Ok(RocPoint {
        tau,
        fpr: if negatives == 0 { 0.0 } else { fp as f64 / negatives as f64 },
        tpr: tp as f64 / positives as f64,
    })
}

pub fn roc_curve(scores: &[f64], labels: &[bool], step: f64) -> Result<Vec<RocPoint>> {
    tau_grid(step)?
        .into_iter()
        .map(|tau| roc_point(scores, labels, tau))
        .collect()
}

/// Point closest to the top-left corner; ties go to the larger threshold.
pub fn select_threshold(points: &[RocPoint]) -> Result<RocPoint> {
    let dist = |p: &RocPoint| p.fpr * p.fpr + (1.0 - p.tpr) * (1.0 - p.tpr);
    points
        .iter()
        .copied()
        .reduce(|best, p| {
            let (d, b) = (dist(&p), dist(&best));
            if d < b || (d == b && p.tau > best.tau) {
                p
            } else {
                best
            }
        })
        .ok_or_else(|| Error::InvalidArgument("no operating points".into()))
}

/// Threshold for a detector from labelled scores.
pub fn roc_threshold(scores: &[f64], labels: &[bool], step: f64) -> Result<f64> {
    Ok(select_threshold(&roc_curve(scores, labels, step)?)?.tau)
}

/// Trapezoid area under the curve, closed with `(0, 0)` and `(1, 1)`.
pub fn auc(points: &[RocPoint]) -> f64 {
    let mut pts: Vec<(f64, f64)> = points.iter().map(|p| (p.fpr, p.tpr)).collect();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    pts.windows(2)
        .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
        .sum()
}

/// Fixed configuration of the fixed-plan baseline.
pub fn hawk_plan(w_max: usize, tau: f64) -> Plan {
    Plan {
        prune_level: 0.0,
        quant: QuantLevel::Q32,
        window: w_max,
        tau,
    }
}

/// Spacing of periodic transmissions: the smallest period whose
/// transmissions over `horizon` samples, plus per-sample compute, fit in
/// `budget`. Picks land at `T, 2T, ...`, so a period `T` yields
/// `floor(horizon / T)` of them. `None` when not even one fits.
pub fn periodic_period(budget: f64, horizon: usize, event_energy: f64, inference_energy: f64) -> Option<f64> {
    if horizon == 0 || !(event_energy > 0.0) {
        return None;
    }
    let spare = budget - horizon as f64 * inference_energy;
    if !(spare >= event_energy) {
        return None;
    }
    let count = ((spare / event_energy).floor() as usize).min(horizon);
    Some(horizon as f64 / count as f64)
}
