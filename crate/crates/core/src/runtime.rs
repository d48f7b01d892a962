//! Device and edge-server state machines running the fault-detection
//! rounds: monitor, upload an event window, retrain with replay, send back
//! a compressed model.
//!
//! A run walks the test trace once on a virtual clock. Each sample arrives
//! `sample_period` seconds after the previous one; samples that arrive
//! while the radio is busy are never classified.

use std::fmt;
use std::str::FromStr;

use rand::seq::index::sample as sample_indices;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::compression::{self, SizeCalibration};
use crate::dataset::Trace;
use crate::energy::{comm_energy, comp_energy, EnergyLedger, EnergyParams};
use crate::error::{Error, Result};
use crate::link::{LinkEstimate, Transport};
use crate::model::{calibrate, epochs_for_window, train, DenseModel, Head, QuantLevel, TrainBatch, TrainConfig};
use crate::planner::{self, Plan, PlanInputs};

/// Keeps capped transmissions a hair inside the budget.
const CAP_MARGIN: f64 = 1.0 - 1e-9;

/// How the device decides when to transmit and how the model is shipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Policy {
    /// Event-driven, with compression and window planned each round.
    Acord,
    /// Event-driven with a fixed plan; stops when the budget runs out.
    Hawk,
    /// Designates samples as faults at a fixed period sized to the budget.
    Periodic,
}

impl Policy {
    pub const ALL: [Policy; 3] = [Policy::Acord, Policy::Hawk, Policy::Periodic];

    pub fn name(self) -> &'static str {
        match self {
            Policy::Acord => "acord",
            Policy::Hawk => "hawk",
            Policy::Periodic => "periodic",
        }
    }
}

impl fmt::Display for Policy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Policy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "acord" => Ok(Policy::Acord),
            "hawk" => Ok(Policy::Hawk),
            "periodic" => Ok(Policy::Periodic),
            other => Err(Error::InvalidArgument(format!("unknown policy `{other}`"))),
        }
    }
}

/// Settings shared by all policies.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub energy: EnergyParams,
    pub w_max: usize,
    /// Device threshold under the event-driven planned policy.
    pub tau: f64,
    /// Device threshold under the fixed-plan baseline.
    pub baseline_tau: f64,
    /// Replaces the planner's output for the planned policy.
    pub fixed_plan: Option<(f64, QuantLevel, usize)>,
    pub p_th_override: Option<f64>,
    pub train: TrainConfig,
    /// Seconds between consecutive samples.
    pub sample_period: f64,
    /// A fault is only known to the server once the device has moved this
    /// many samples past it.
    pub label_delay: usize,
    /// Rate assumed before anything has been measured, bit/s.
    pub initial_rate: f64,
}

impl Default for RunConfig {
    fn default() -> Self {
        let energy = EnergyParams::default();
        Self {
            energy,
            w_max: 200,
            tau: 0.5,
            baseline_tau: 0.5,
            fixed_plan: None,
            p_th_override: None,
            train: TrainConfig::default(),
            sample_period: 1.0,
            label_delay: 0,
            initial_rate: energy.reference_rate,
        }
    }
}

/// One line of the per-sample log.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Prediction {
    pub position: usize,
    pub index: usize,
    /// `false` for samples the device never classified.
    pub inferred: bool,
    pub predicted: bool,
    pub label: bool,
    pub round: usize,
}

/// Summary of one round.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundReport {
    pub round: usize,
    pub policy: Policy,
    /// Trace positions `[span_start, span_end)` the round covered.
    pub span_start: usize,
    pub span_end: usize,
    /// Compression of the model in use during the round.
    pub model_prune: f64,
    pub model_quant: QuantLevel,
    /// Downlink plan, when one was made.
    pub plan_prune: Option<f64>,
    pub plan_quant: Option<QuantLevel>,
    pub plan_window: usize,
    pub tau: f64,
    pub samples_sent: usize,
    pub bits_up: u64,
    pub bits_down: u64,
    pub t_ul: f64,
    pub t_dl: f64,
    pub e_comm: f64,
    pub e_comp: f64,
    pub e_total: f64,
    pub inferences: u64,
    pub detections: u64,
    pub true_positives: u64,
    pub false_positives: u64,
    /// Fault samples in the span, classified or not.
    pub faults: u64,
    /// Cumulative recall at the end of the round.
    pub recall: f64,
    pub model_updated: bool,
    /// Rate estimate at the end of the round, bit/s.
    pub rate_estimate: f64,
}

/// Whole-run figures.
#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub policy: Policy,
    pub recall: f64,
    pub e_total: f64,
    /// Rounds that ended with a model update.
    pub rounds: usize,
    pub detections: u64,
    pub true_positives: u64,
    pub faults: u64,
    pub inferences: u64,
}

/// Everything a run produces.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub reports: Vec<RoundReport>,
    pub predictions: Vec<Prediction>,
    pub ledger: EnergyLedger,
    pub metrics: RunMetrics,
    /// Trace positions of every sample the server received, in order.
    pub rehearsal: Vec<usize>,
    pub final_model: DenseModel,
}

/// `TP / max(1, actual faults)` over the reports so far.
pub fn recall(reports: &[RoundReport]) -> f64 {
    let tp: u64 = reports.iter().map(|r| r.true_positives).sum();
    let faults: u64 = reports.iter().map(|r| r.faults).sum();
    tp as f64 / faults.max(1) as f64
}

/// On-device state.
#[derive(Debug, Clone)]
pub struct DeviceState {
    pub model: DenseModel,
    pub round: usize,
    /// Trace positions of the event being uploaded.
    pub buffer: Vec<usize>,
    /// Classifications in the current round.
    pub inferences: u64,
    pub tau: f64,
    cursor: usize,
    busy_until: f64,
}

/// A labelled sample held by the server.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredSample {
    pub position: usize,
    pub features: Vec<f64>,
    pub label: bool,
}

/// Edge-server state.
#[derive(Debug, Clone)]
pub struct ServerState {
    /// Samples received this round.
    pub round_memory: Vec<StoredSample>,
    /// Everything received in earlier rounds.
    pub rehearsal: Vec<StoredSample>,
    /// Latest full-precision model.
    pub model: DenseModel,
    pub plan: Option<Plan>,
    /// Retraining attempts dropped because the loss diverged.
    pub divergences: usize,
}

/// What the monitoring phase ended with.
#[derive(Debug, Clone, PartialEq)]
pub enum FdOutcome {
    /// Trace positions to upload; may be empty if all were sent before.
    Event(Vec<usize>),
    EndOfTrace,
    /// The budget no longer covers another classification.
    Halted,
}

#[derive(Debug, Clone)]
struct RoundAcc {
    start: usize,
    model_prune: f64,
    model_quant: QuantLevel,
    t_ul: f64,
    t_dl: f64,
    bits_up: u64,
    bits_down: u64,
    detections: u64,
    tp: u64,
    fp: u64,
    faults: u64,
    samples_sent: usize,
    window: usize,
    dl_plan: Option<(f64, QuantLevel)>,
    updated: bool,
}

impl RoundAcc {
    fn new(start: usize, model: &DenseModel) -> Self {
        let meta = model.compression();
        Self {
            start,
            model_prune: meta.prune_level,
            model_quant: meta.quant,
            t_ul: 0.0,
            t_dl: 0.0,
            bits_up: 0,
            bits_down: 0,
            detections: 0,
            tp: 0,
            fp: 0,
            faults: 0,
            samples_sent: 0,
            window: 0,
            dl_plan: None,
            updated: false,
        }
    }
}

enum Step {
    Continue,
    Stop,
    Installed,
}

/// One simulation run.
pub struct Simulation<'a, T: Transport> {
    policy: Policy,
    config: &'a RunConfig,
    trace: &'a Trace,
    sizes: &'a SizeCalibration,
    p_th: f64,
    transport: T,
    pub device: DeviceState,
    pub server: ServerState,
    ledger: EnergyLedger,
    estimate: LinkEstimate,
    rng: ChaCha8Rng,
    predictions: Vec<Prediction>,
    reports: Vec<RoundReport>,
    sent: Vec<bool>,
    received: Vec<usize>,
    tp_total: u64,
    faults_total: u64,
    next_pick: f64,
    acc: RoundAcc,
}

impl<'a, T: Transport> Simulation<'a, T> {
    pub fn new(
        policy: Policy,
        config: &'a RunConfig,
        trace: &'a Trace,
        initial: &DenseModel,
        sizes: &'a SizeCalibration,
        transport: T,
        seed: u64,
    ) -> Result<Self> {
        if trace.feature_count() != initial.input_dim() {
            return Err(Error::DimensionMismatch {
                expected: initial.input_dim(),
                actual: trace.feature_count(),
            });
        }
        if !(config.sample_period > 0.0) {
            return Err(Error::InvalidArgument("sample period must be positive".into()));
        }
        let p_th = match config.p_th_override {
            Some(p) => p.clamp(0.0, 1.0),
            None => planner::p_threshold(sizes)?,
        };
        let tau = match policy {
            Policy::Hawk => config.baseline_tau,
            _ => config.tau,
        };
        let mut sim = Self {
            policy,
            config,
            trace,
            sizes,
            p_th,
            transport,
            device: DeviceState {
                model: initial.clone(),
                round: 1,
                buffer: Vec::new(),
                inferences: 0,
                tau,
                cursor: 0,
                busy_until: 0.0,
            },
            server: ServerState {
                round_memory: Vec::new(),
                rehearsal: Vec::new(),
                model: initial.clone(),
                plan: None,
                divergences: 0,
            },
            ledger: EnergyLedger::new(config.energy.budget),
            estimate: LinkEstimate::new(config.initial_rate),
            rng: ChaCha8Rng::seed_from_u64(seed),
            predictions: Vec::with_capacity(trace.len()),
            reports: Vec::new(),
            sent: vec![false; trace.len()],
            received: Vec::new(),
            tp_total: 0,
            faults_total: 0,
            next_pick: f64::INFINITY,
            acc: RoundAcc::new(0, initial),
        };
        if policy == Policy::Periodic {
            sim.reschedule_picks();
        }
        Ok(sim)
    }

    fn inference_energy(&self) -> f64 {
        self.config.energy.inference.get(self.device.model.compression().quant)
    }

    /// Energy committed in the current round if `extra` more inferences run.
    fn round_energy(&self, extra: u64) -> f64 {
        let comm = self.acc.t_ul * self.config.energy.tx_power + self.acc.t_dl * self.config.energy.rx_power;
        comm + comp_energy(self.device.inferences + extra, self.acc.model_quant, &self.config.energy)
    }

    /// Energy held back so the device can keep classifying to the end.
    fn compute_reserve(&self, inference_energy: f64) -> f64 {
        match self.policy {
            Policy::Hawk => 0.0,
            _ => inference_energy * (self.trace.len() - self.device.cursor) as f64,
        }
    }

    fn plan_inputs(&self) -> PlanInputs<'_> {
        PlanInputs {
            params: &self.config.energy,
            sizes: self.sizes,
            rate: self.estimate.uplink_rate(),
            comp_estimate: self.inference_energy() * self.trace.len() as f64,
            p_th: self.p_th,
            w_max: self.config.w_max,
        }
    }

    /// Window for the round, or `None` when no uplink fits the budget.
    fn plan_window(&self) -> Result<Option<usize>> {
        match self.policy {
            Policy::Hawk | Policy::Periodic => Ok(Some(self.config.w_max)),
            Policy::Acord => {
                if let Some((_, _, w)) = self.config.fixed_plan {
                    return Ok(Some(w));
                }
                let inputs = self.plan_inputs();
                match planner::target_latencies(&inputs) {
                    Ok(t) => planner::plan_uplink(t.uplink, &inputs).map(Some),
                    Err(Error::Budget(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            }
        }
    }

    fn plan_downlink(&self) -> Result<Option<(f64, QuantLevel)>> {
        match self.policy {
            Policy::Hawk | Policy::Periodic => Ok(Some((0.0, QuantLevel::Q32))),
            Policy::Acord => {
                if let Some((p, q, _)) = self.config.fixed_plan {
                    return Ok(Some((p, q)));
                }
                let inputs = self.plan_inputs();
                match planner::target_latencies(&inputs) {
                    Ok(t) => planner::plan_downlink(t.downlink, &inputs).map(Some),
                    Err(Error::Budget(_)) => Ok(None),
                    Err(e) => Err(e),
                }
            }
        }
    }

    /// Places the next periodic pick from the budget left and the samples
    /// still to come.
    fn reschedule_picks(&mut self) {
        let e = &self.config.energy;
        let rate = self.estimate.uplink_rate();
        let event = self.sizes.ul.predict(self.config.w_max as f64) / rate * e.tx_power
            + self.sizes.dl_q32.predict(0.0) / rate * e.rx_power;
        let left = self.ledger.remaining() - self.round_energy(0);
        let horizon = self.trace.len() - self.device.cursor;
        self.next_pick = match planner::periodic_period(left, horizon, event, self.inference_energy()) {
            Some(period) => self.device.cursor as f64 + period,
            None => f64::INFINITY,
        };
    }

    fn log(&mut self, position: usize, inferred: bool, predicted: bool) {
        let label = self.trace.samples()[position].label;
        self.predictions.push(Prediction {
            position,
            index: self.trace.samples()[position].index,
            inferred,
            predicted,
            label,
            round: self.device.round,
        });
        if label {
            self.acc.faults += 1;
            self.faults_total += 1;
        }
        if predicted {
            self.acc.detections += 1;
            if label {
                self.acc.tp += 1;
                self.tp_total += 1;
            } else {
                self.acc.fp += 1;
            }
        }
    }

    /// Classifies the sample at the cursor if the budget allows. Returns
    /// `None` when it does not.
    fn classify_next(&mut self, may_trigger: bool) -> Result<Option<bool>> {
        let pos = self.device.cursor;
        if self.ledger.would_exceed(self.round_energy(1)) {
            return Ok(None);
        }
        let predicted = match self.policy {
            Policy::Periodic => {
                let pick = may_trigger && (pos + 1) as f64 >= self.next_pick;
                if pick {
                    self.next_pick = f64::INFINITY;
                }
                pick
            }
            _ => self
                .device
                .model
                .classify(&self.trace.samples()[pos].features, self.device.tau)?,
        };
        self.device.inferences += 1;
        self.log(pos, true, predicted);
        self.device.cursor += 1;
        Ok(Some(predicted))
    }

    fn arrival(&self, pos: usize) -> f64 {
        pos as f64 * self.config.sample_period
    }

    /// Monitors until a detection, the end of the trace, or the budget
    /// stops classification. After a detection at `k` the device keeps
    /// classifying up to `k + window` to complete the event window.
    pub fn fd_phase(&mut self, window: usize) -> Result<FdOutcome> {
        let n = self.trace.len();
        loop {
            let pos = self.device.cursor;
            if pos >= n {
                return Ok(FdOutcome::EndOfTrace);
            }
            if self.arrival(pos) < self.device.busy_until {
                self.log(pos, false, false);
                self.device.cursor += 1;
                continue;
            }
            match self.classify_next(true)? {
                None => return Ok(FdOutcome::Halted),
                Some(false) => continue,
                Some(true) => {
                    let end = (pos + window).min(n - 1);
                    while self.device.cursor <= end {
                        if self.classify_next(false)?.is_none() {
                            return Ok(FdOutcome::Halted);
                        }
                    }
                    let start = pos.saturating_sub(window);
                    let event: Vec<usize> = (start..=end).filter(|&i| !self.sent[i]).collect();
                    self.device.buffer = event.clone();
                    return Ok(FdOutcome::Event(event));
                }
            }
        }
    }

    fn occupy_radio(&mut self, elapsed: f64) {
        let now = self.arrival(self.device.cursor.saturating_sub(1)).max(self.device.busy_until);
        self.device.busy_until = now + elapsed;
    }

    /// Time cap keeping a transmission inside the budget, after holding back
    /// `reserve`. `None` for the baseline that does not track the budget.
    fn time_cap(&self, power: f64, reserve: f64) -> Option<f64> {
        match self.policy {
            Policy::Hawk => None,
            _ => Some((self.ledger.remaining() - self.round_energy(0) - reserve).max(0.0) * CAP_MARGIN / power),
        }
    }

    /// Uploads the buffered event. Returns the received samples, or `None`
    /// when the upload was skipped or cut short.
    pub fn uplink_phase(&mut self, window: usize) -> Result<Option<Vec<(usize, Vec<f64>)>>> {
        let samples: Vec<(usize, &[f64])> = self
            .device
            .buffer
            .iter()
            .map(|&i| (i, self.trace.samples()[i].features.as_slice()))
            .collect();
        let payload = compression::data_payload(&samples, window)?;
        let e = self.config.energy;
        let rate = self.estimate.uplink_rate();
        let header = self.sizes.header_bits as f64;
        let ul_energy = (header + payload.coded_bits as f64) / rate * e.tx_power;
        let dl_bits = match self.plan_downlink()? {
            Some((p, q)) => self.sizes.downlink(q).predict(p),
            None => self.sizes.dl_q8.predict(1.0),
        };
        let dl_energy = dl_bits.max(0.0) / rate * e.rx_power;
        let reserve = self.compute_reserve(self.inference_energy());
        if self.ledger.would_exceed(self.round_energy(0) + ul_energy + dl_energy + reserve) {
            return Ok(None);
        }
        self.transport.begin_round(self.device.round);
        let cap = self.time_cap(e.tx_power, reserve);
        let delivery = self.transport.send(payload.kind, &payload.bytes, cap)?;
        self.acc.t_ul += delivery.elapsed;
        self.acc.bits_up += delivery.bits;
        self.occupy_radio(delivery.elapsed);
        if !delivery.completed {
            return Ok(None);
        }
        if delivery.elapsed > 0.0 {
            self.estimate.update(delivery.bits, delivery.elapsed, self.device.round)?;
        }
        for &i in &self.device.buffer {
            self.sent[i] = true;
        }
        self.acc.samples_sent += self.device.buffer.len();
        Ok(Some(compression::unpack_samples(&compression::lossless_decode(&delivery.payload)?)?))
    }

    /// Labels received samples from ground truth and stores them as the
    /// round memory.
    pub fn server_ingest(&mut self, samples: Vec<(usize, Vec<f64>)>) {
        let known_up_to = self.device.cursor;
        for (position, features) in samples {
            let label = self.trace.samples()[position].label && position + self.config.label_delay <= known_up_to;
            self.received.push(position);
            self.server.round_memory.push(StoredSample {
                position,
                features,
                label,
            });
        }
    }

    /// Trains on the round memory plus an equal-sized replay draw, then
    /// merges the round memory into the rehearsal store.
    pub fn server_retrain(&mut self, window: usize) -> Result<TrainBatch> {
        if self.server.round_memory.is_empty() {
            return Err(Error::EmptyBatch);
        }
        let replay = self.server.round_memory.len().min(self.server.rehearsal.len());
        let picks = sample_indices(&mut self.rng, self.server.rehearsal.len(), replay).into_vec();
        let mut batch = TrainBatch::default();
        for s in self
            .server
            .round_memory
            .iter()
            .chain(picks.iter().map(|&i| &self.server.rehearsal[i]))
        {
            batch.push(s.features.clone(), s.label);
        }
        let config = TrainConfig {
            epochs: epochs_for_window(window),
            ..self.config.train
        };
        let seed: u64 = self.rng.gen();
        // the negative fault weight makes the loss unbounded below; a
        // diverged update is dropped and the previous model kept
        match train(&self.server.model, &batch, &config, seed) {
            Ok(m) => self.server.model = m,
            Err(Error::Divergence) => self.server.divergences += 1,
            Err(e) => return Err(e),
        }
        self.server.rehearsal.append(&mut self.server.round_memory);
        Ok(batch)
    }

    /// Compresses and sends the server model; installs it when it arrives.
    fn downlink_phase(&mut self, batch: &TrainBatch) -> Result<Step> {
        let Some((p, q)) = self.plan_downlink()? else {
            return Ok(Step::Continue);
        };
        self.acc.dl_plan = Some((p, q));
        self.server.plan = Some(Plan {
            prune_level: p,
            quant: q,
            window: self.acc.window,
            tau: self.device.tau,
        });
        let mut compressed = compression::compress(&self.server.model, p, q, &batch.inputs)?;
        if compressed.head() == Head::Autoencoder {
            calibrate(&mut compressed, batch, self.config.train.calibration_percentile)?;
        }
        let payload = compression::model_payload(&compressed)?;
        let e = self.config.energy;
        let bits = self.sizes.header_bits + payload.coded_bits;
        let dl_energy = bits as f64 / self.estimate.downlink_rate() * e.rx_power;
        let next_inference = e.inference.get(q).max(self.inference_energy());
        let reserve = self.compute_reserve(next_inference);
        if self.ledger.would_exceed(self.round_energy(0) + dl_energy + reserve) {
            return Ok(if self.policy == Policy::Hawk { Step::Stop } else { Step::Continue });
        }
        let cap = self.time_cap(e.rx_power, reserve);
        let delivery = self.transport.send(payload.kind, &payload.bytes, cap)?;
        self.acc.t_dl += delivery.elapsed;
        self.acc.bits_down += delivery.bits;
        self.occupy_radio(delivery.elapsed);
        if !delivery.completed {
            return Ok(Step::Continue);
        }
        self.device.model = compression::decode_model_payload(&delivery.payload)?;
        self.acc.updated = true;
        Ok(Step::Installed)
    }

    fn close_round(&mut self) -> Result<()> {
        let e = self.config.energy;
        let e_comm = comm_energy(self.acc.t_ul, self.acc.t_dl, &e)?;
        let e_comp = comp_energy(self.device.inferences, self.acc.model_quant, &e);
        let e_total = self.ledger.accrue_round(self.device.round, e_comm, e_comp)?;
        let acc = std::mem::replace(&mut self.acc, RoundAcc::new(self.device.cursor, &self.device.model));
        self.reports.push(RoundReport {
            round: self.device.round,
            policy: self.policy,
            span_start: acc.start,
            span_end: self.device.cursor,
            model_prune: acc.model_prune,
            model_quant: acc.model_quant,
            plan_prune: acc.dl_plan.map(|p| p.0),
            plan_quant: acc.dl_plan.map(|p| p.1),
            plan_window: acc.window,
            tau: self.device.tau,
            samples_sent: acc.samples_sent,
            bits_up: acc.bits_up,
            bits_down: acc.bits_down,
            t_ul: acc.t_ul,
            t_dl: acc.t_dl,
            e_comm,
            e_comp,
            e_total,
            inferences: self.device.inferences,
            detections: acc.detections,
            true_positives: acc.tp,
            false_positives: acc.fp,
            faults: acc.faults,
            recall: self.tp_total as f64 / self.faults_total.max(1) as f64,
            model_updated: acc.updated,
            rate_estimate: self.estimate.uplink_rate(),
        });
        self.device.inferences = 0;
        self.device.buffer.clear();
        Ok(())
    }

    /// Marks every remaining sample as unclassified.
    fn abandon_rest(&mut self) {
        while self.device.cursor < self.trace.len() {
            self.log(self.device.cursor, false, false);
            self.device.cursor += 1;
        }
    }

    /// Runs rounds until the trace is exhausted.
    pub fn run(mut self) -> Result<RunOutcome> {
        'rounds: while self.device.cursor < self.trace.len() {
            let window = self.plan_window()?;
            self.acc.window = window.unwrap_or(0);
            loop {
                match self.fd_phase(self.acc.window)? {
                    FdOutcome::EndOfTrace => break 'rounds,
                    FdOutcome::Halted => {
                        self.abandon_rest();
                        break 'rounds;
                    }
                    FdOutcome::Event(event) => {
                        let step = if window.is_none() || event.is_empty() {
                            Step::Continue
                        } else {
                            self.exchange(self.acc.window)?
                        };
                        if self.policy == Policy::Periodic {
                            self.reschedule_picks();
                        }
                        match step {
                            Step::Continue => {}
                            Step::Stop => {
                                self.abandon_rest();
                                break 'rounds;
                            }
                            Step::Installed => {
                                self.close_round()?;
                                self.device.round += 1;
                                continue 'rounds;
                            }
                        }
                    }
                }
            }
        }
        if self.acc.start < self.device.cursor || self.reports.is_empty() {
            self.close_round()?;
        }
        let metrics = RunMetrics {
            policy: self.policy,
            recall: recall(&self.reports),
            e_total: self.ledger.total(),
            rounds: self.reports.iter().filter(|r| r.model_updated).count(),
            detections: self.reports.iter().map(|r| r.detections).sum(),
            true_positives: self.tp_total,
            faults: self.faults_total,
            inferences: self.reports.iter().map(|r| r.inferences).sum(),
        };
        Ok(RunOutcome {
            reports: self.reports,
            predictions: self.predictions,
            ledger: self.ledger,
            metrics,
            rehearsal: self.received,
            final_model: self.device.model,
        })
    }

    /// Uplink, server update and downlink for the buffered event.
    fn exchange(&mut self, window: usize) -> Result<Step> {
        let Some(received) = self.uplink_phase(window)? else {
            return Ok(if self.policy == Policy::Hawk {
                Step::Stop
            } else {
                Step::Continue
            });
        };
        self.server_ingest(received);
        let batch = self.server_retrain(window)?;
        self.downlink_phase(&batch)
    }
}
