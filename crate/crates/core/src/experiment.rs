//! Experiment harness: configuration, scenario preparation, ROC calibration,
//! single runs and sweeps, with CSV output.
//!
//! Configuration is flat `key = value` text; lists are comma-separated and
//! `#` starts a comment. Every key can also be given as a `--key` flag.

use std::fmt::Write as _;
use std::fs;
use std::net::TcpListener;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use crate::compression::{calibrate_sizes, SizeCalibration};
use crate::dataset::{load_trace, prepare, synth_trace, CsvSchema, PreparedData, SplitSpec, SynthConfig, Trace};
use crate::energy::EnergyParams;
use crate::error::{Error, Result};
use crate::link::{serve_echo, Bandwidth, SimulatedTransport, SocketTransport};
use crate::model::{train, DenseModel, Head, QuantLevel, TrainBatch, TrainConfig};
use crate::planner::{self, auc, select_threshold, tau_grid, RocPoint};
use crate::runtime::{Policy, Prediction, RoundReport, RunConfig, RunOutcome, Simulation};

/// Mixed into the seed of the synthetic validation trace used for ROC
/// calibration, so it never coincides with a test trace.
const VALIDATION_SALT: u64 = 0x9e37_79b9_7f4a_7c15;

/// Where samples come from.
#[derive(Debug, Clone, PartialEq)]
pub enum DatasetSource {
    Synthetic,
    Csv(PathBuf),
}

/// How the device threshold is chosen.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum TauSetting {
    /// Per seed, from a dry run on validation data.
    Auto,
    Fixed(f64),
}

/// Sweep axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Axis {
    Energy,
    Bandwidth,
}

impl std::str::FromStr for Axis {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "energy" => Ok(Axis::Energy),
            "bandwidth" => Ok(Axis::Bandwidth),
            other => Err(Error::Config(format!("unknown sweep axis `{other}`"))),
        }
    }
}

impl Axis {
    pub fn name(self) -> &'static str {
        match self {
            Axis::Energy => "energy",
            Axis::Bandwidth => "bandwidth",
        }
    }
}

/// Everything an experiment needs.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset: DatasetSource,
    pub synth: SynthConfig,
    pub split: SplitSpec,
    pub detector: Head,
    pub policy: Policy,
    pub policies: Vec<Policy>,
    /// Budgets, J.
    pub e_th: Vec<f64>,
    /// Bandwidths, Mbit/s.
    pub bandwidth: Vec<f64>,
    /// Bandwidth held fixed along the energy axis, Mbit/s.
    pub energy_axis_bandwidth: f64,
    /// Budget held fixed along the bandwidth axis, J.
    pub bandwidth_axis_e_th: f64,
    pub seed: u64,
    pub seeds: Vec<u64>,
    pub energy: EnergyParams,
    pub w_max: usize,
    pub w_step: usize,
    pub grid_step: f64,
    pub p_th: Option<f64>,
    pub tau: TauSetting,
    pub hawk_tau: f64,
    pub ae_hidden: Vec<usize>,
    pub mlp_hidden: Vec<usize>,
    pub initial_epochs: usize,
    pub train: TrainConfig,
    pub sample_period: f64,
    pub label_delay: usize,
    pub header_bits: u64,
    pub out: PathBuf,
    pub socket: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dataset: DatasetSource::Synthetic,
            synth: SynthConfig::default(),
            split: SplitSpec::default(),
            detector: Head::Autoencoder,
            policy: Policy::Acord,
            policies: Policy::ALL.to_vec(),
            e_th: vec![10.0, 20.0, 30.0, 40.0, 50.0, 60.0],
            bandwidth: vec![0.1, 0.25, 0.5, 1.0, 2.0],
            energy_axis_bandwidth: 1.0,
            bandwidth_axis_e_th: 60.0,
            seed: 1,
            seeds: vec![1, 2, 3, 4, 5],
            energy: EnergyParams::default(),
            w_max: 200,
            w_step: 25,
            grid_step: 0.1,
            p_th: None,
            tau: TauSetting::Auto,
            hawk_tau: 0.5,
            ae_hidden: vec![64, 16, 64],
            mlp_hidden: vec![64, 16],
            initial_epochs: 30,
            train: TrainConfig::default(),
            sample_period: 1.0,
            label_delay: 0,
            header_bits: crate::link::DEFAULT_HEADER_BITS,
            out: PathBuf::from("out"),
            socket: None,
        }
    }
}

/// Recognised keys with a one-line description each.
pub const CONFIG_KEYS: &[(&str, &str)] = &[
    ("dataset", "`synth` or a path to a pump-sensor CSV"),
    ("synth-length", "samples in the synthetic trace"),
    ("synth-features", "sensors in the synthetic trace"),
    ("synth-fault-events", "fault events in the synthetic trace"),
    ("synth-coherence", "correlation length and fault width, samples"),
    ("synth-noise", "sensor noise scale"),
    ("synth-fault-shift", "size of the fault displacement"),
    ("synth-regimes", "operating-regime segments"),
    ("train-fraction", "share of the trace used for initial training"),
    ("detector", "`ae` or `mlp`"),
    ("policy", "policy for a single run"),
    ("policies", "policies compared in sweeps"),
    ("e-th", "energy budgets, J"),
    ("bandwidth", "link bandwidths, Mbit/s"),
    ("energy-axis-bandwidth", "bandwidth for the energy sweep, Mbit/s"),
    ("bandwidth-axis-e-th", "budget for the bandwidth sweep, J"),
    ("seed", "seed for a single run"),
    ("seeds", "seeds for sweeps"),
    ("tx-power", "transmit power, W"),
    ("rx-power", "receive power, W"),
    ("e-inf-q8", "energy per 8-bit inference, J"),
    ("e-inf-q32", "energy per 32-bit inference, J"),
    ("e-ref", "reference energy, J"),
    ("r-ref", "reference rate, Mbit/s"),
    ("w-max", "largest context window"),
    ("w-step", "window step of the uplink size sweep"),
    ("grid-step", "threshold grid step"),
    ("p-th", "`auto` or a fixed 32/8-bit switch point"),
    ("tau", "`auto` or a fixed device threshold"),
    ("hawk-tau", "threshold of the fixed-plan baseline"),
    ("ae-hidden", "autoencoder hidden widths"),
    ("mlp-hidden", "classifier hidden widths"),
    ("initial-epochs", "epochs of initial training"),
    ("learning-rate", "gradient step size"),
    ("batch-size", "minibatch size, 0 for full batch"),
    ("lambda-fault", "loss weight of fault samples"),
    ("lambda-normal", "loss weight of normal samples"),
    ("percentile", "normal-error percentile used as reference error"),
    ("sample-period", "seconds between samples"),
    ("label-delay", "samples before a fault becomes known to the server"),
    ("header-bits", "per-message protocol overhead, bits"),
    ("out", "output directory"),
    ("socket", "HOST:PORT to run the link over TCP loopback"),
];

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::Config(format!("bad value `{value}` for `{key}`")))
}

fn parse_list<T: std::str::FromStr>(key: &str, value: &str) -> Result<Vec<T>> {
    let items: Vec<T> = value
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| parse(key, s))
        .collect::<Result<_>>()?;
    if items.is_empty() {
        return Err(Error::Config(format!("`{key}` needs at least one value")));
    }
    Ok(items)
}

fn join<T: std::fmt::Display>(items: &[T]) -> String {
    items.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl ExperimentConfig {
    /// Applies one `key = value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        match key {
            "dataset" => {
                self.dataset = match v {
                    "synth" | "synthetic" => DatasetSource::Synthetic,
                    path => DatasetSource::Csv(PathBuf::from(path)),
                }
            }
            "synth-length" => self.synth.length = parse(key, v)?,
            "synth-features" => self.synth.features = parse(key, v)?,
            "synth-fault-events" => self.synth.fault_events = parse(key, v)?,
            "synth-coherence" => self.synth.coherence = parse(key, v)?,
            "synth-noise" => self.synth.noise_scale = parse(key, v)?,
            "synth-fault-shift" => self.synth.fault_shift = parse(key, v)?,
            "synth-regimes" => self.synth.regimes = parse(key, v)?,
            "train-fraction" => self.split.train_fraction = parse(key, v)?,
            "detector" => {
                self.detector = match v {
                    "ae" => Head::Autoencoder,
                    "mlp" => Head::Classifier,
                    _ => return Err(Error::Config(format!("bad value `{v}` for `{key}`"))),
                }
            }
            "policy" => self.policy = parse(key, v)?,
            "policies" => self.policies = parse_list(key, v)?,
            "e-th" => self.e_th = parse_list(key, v)?,
            "bandwidth" => self.bandwidth = parse_list(key, v)?,
            "energy-axis-bandwidth" => self.energy_axis_bandwidth = parse(key, v)?,
            "bandwidth-axis-e-th" => self.bandwidth_axis_e_th = parse(key, v)?,
            "seed" => self.seed = parse(key, v)?,
            "seeds" => self.seeds = parse_list(key, v)?,
            "tx-power" => self.energy.tx_power = parse(key, v)?,
            "rx-power" => self.energy.rx_power = parse(key, v)?,
            "e-inf-q8" => self.energy.inference.q8 = parse(key, v)?,
            "e-inf-q32" => self.energy.inference.q32 = parse(key, v)?,
            "e-ref" => self.energy.reference_energy = parse(key, v)?,
            "r-ref" => self.energy.reference_rate = parse::<f64>(key, v)? * 1e6,
            "w-max" => self.w_max = parse(key, v)?,
            "w-step" => self.w_step = parse(key, v)?,
            "grid-step" => self.grid_step = parse(key, v)?,
            "p-th" => self.p_th = if v == "auto" { None } else { Some(parse(key, v)?) },
            "tau" => {
                self.tau = if v == "auto" {
                    TauSetting::Auto
                } else {
                    TauSetting::Fixed(parse(key, v)?)
                }
            }
            "hawk-tau" => self.hawk_tau = parse(key, v)?,
            "ae-hidden" => self.ae_hidden = parse_list(key, v)?,
            "mlp-hidden" => self.mlp_hidden = parse_list(key, v)?,
            "initial-epochs" => self.initial_epochs = parse(key, v)?,
            "learning-rate" => self.train.learning_rate = parse(key, v)?,
            "batch-size" => {
                let b: usize = parse(key, v)?;
                self.train.batch_size = (b > 0).then_some(b);
            }
            "lambda-fault" => self.train.loss.fault = parse(key, v)?,
            "lambda-normal" => self.train.loss.normal = parse(key, v)?,
            "percentile" => self.train.calibration_percentile = parse(key, v)?,
            "sample-period" => self.sample_period = parse(key, v)?,
            "label-delay" => self.label_delay = parse(key, v)?,
            "header-bits" => self.header_bits = parse(key, v)?,
            "out" => self.out = PathBuf::from(v),
            "socket" => self.socket = (!v.is_empty()).then(|| v.to_string()),
            other => return Err(Error::Config(format!("unknown key `{other}`"))),
        }
        Ok(())
    }

    /// Parses `key = value` lines on top of the defaults.
    pub fn parse_str(text: &str) -> Result<Self> {
        let mut config = Self::default();
        config.apply_str(text)?;
        Ok(config)
    }

    pub fn apply_str(&mut self, text: &str) -> Result<()> {
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::Config(format!("line {}: expected `key = value`", n + 1)))?;
            self.set(key.trim(), value)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse_str(&fs::read_to_string(path)?)
    }

    /// Checks the invariants the commands rely on.
    pub fn validate(&self) -> Result<()> {
        let nonempty = [
            ("policies", self.policies.is_empty()),
            ("e-th", self.e_th.is_empty()),
            ("bandwidth", self.bandwidth.is_empty()),
            ("seeds", self.seeds.is_empty()),
        ];
        if let Some((key, _)) = nonempty.iter().find(|(_, empty)| *empty) {
            return Err(Error::Config(format!("`{key}` must not be empty")));
        }
        if self.bandwidth.iter().chain([&self.energy_axis_bandwidth]).any(|b| !(*b > 0.0)) {
            return Err(Error::Config("bandwidths must be positive".into()));
        }
        if self.e_th.iter().chain([&self.bandwidth_axis_e_th]).any(|e| !(*e >= 0.0)) {
            return Err(Error::Config("budgets must be non-negative".into()));
        }
        if self.w_max == 0 || self.initial_epochs == 0 {
            return Err(Error::Config("`w-max` and `initial-epochs` must be positive".into()));
        }
        Ok(())
    }

    /// Canonical text form, re-readable by [`ExperimentConfig::parse_str`].
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut put = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        put(
            "dataset",
            match &self.dataset {
                DatasetSource::Synthetic => "synth".into(),
                DatasetSource::Csv(p) => p.display().to_string(),
            },
        );
        put("synth-length", self.synth.length.to_string());
        put("synth-features", self.synth.features.to_string());
        put("synth-fault-events", self.synth.fault_events.to_string());
        put("synth-coherence", self.synth.coherence.to_string());
        put("synth-noise", self.synth.noise_scale.to_string());
        put("synth-fault-shift", self.synth.fault_shift.to_string());
        put("synth-regimes", self.synth.regimes.to_string());
        put("train-fraction", self.split.train_fraction.to_string());
        put(
            "detector",
            match self.detector {
                Head::Autoencoder => "ae".into(),
                Head::Classifier => "mlp".into(),
            },
        );
        put("policy", self.policy.to_string());
        put("policies", join(&self.policies));
        put("e-th", join(&self.e_th));
        put("bandwidth", join(&self.bandwidth));
        put("energy-axis-bandwidth", self.energy_axis_bandwidth.to_string());
        put("bandwidth-axis-e-th", self.bandwidth_axis_e_th.to_string());
        put("seed", self.seed.to_string());
        put("seeds", join(&self.seeds));
        put("tx-power", self.energy.tx_power.to_string());
        put("rx-power", self.energy.rx_power.to_string());
        put("e-inf-q8", self.energy.inference.q8.to_string());
        put("e-inf-q32", self.energy.inference.q32.to_string());
        put("e-ref", self.energy.reference_energy.to_string());
        put("r-ref", (self.energy.reference_rate / 1e6).to_string());
        put("w-max", self.w_max.to_string());
        put("w-step", self.w_step.to_string());
        put("grid-step", self.grid_step.to_string());
        put("p-th", self.p_th.map_or("auto".into(), |p| p.to_string()));
        put(
            "tau",
            match self.tau {
                TauSetting::Auto => "auto".into(),
                TauSetting::Fixed(t) => t.to_string(),
            },
        );
        put("hawk-tau", self.hawk_tau.to_string());
        put("ae-hidden", join(&self.ae_hidden));
        put("mlp-hidden", join(&self.mlp_hidden));
        put("initial-epochs", self.initial_epochs.to_string());
        put("learning-rate", self.train.learning_rate.to_string());
        put("batch-size", self.train.batch_size.unwrap_or(0).to_string());
        put("lambda-fault", self.train.loss.fault.to_string());
        put("lambda-normal", self.train.loss.normal.to_string());
        put("percentile", self.train.calibration_percentile.to_string());
        put("sample-period", self.sample_period.to_string());
        put("label-delay", self.label_delay.to_string());
        put("header-bits", self.header_bits.to_string());
        put("out", self.out.display().to_string());
        put("socket", self.socket.clone().unwrap_or_default());
        s
    }

    /// Runtime settings for one budget.
    pub fn run_config(&self, e_th: f64, tau: f64) -> RunConfig {
        RunConfig {
            energy: EnergyParams {
                budget: e_th,
                ..self.energy
            },
            w_max: self.w_max,
            tau,
            baseline_tau: self.hawk_tau,
            fixed_plan: None,
            p_th_override: self.p_th,
            train: self.train,
            sample_period: self.sample_period,
            label_delay: self.label_delay,
            initial_rate: self.energy.reference_rate,
        }
    }
}

/// Data and initial models for one seed.
#[derive(Debug, Clone)]
pub struct Scenario {
    pub seed: u64,
    pub data: PreparedData,
    pub ae: DenseModel,
    pub mlp: DenseModel,
    pub ae_sizes: SizeCalibration,
    pub mlp_sizes: SizeCalibration,
}

impl Scenario {
    /// Loads or generates the trace, trains both detectors on the initial
    /// split and fits their size models.
    pub fn build(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        let trace = match &config.dataset {
            DatasetSource::Synthetic => synth_trace(&config.synth, seed)?,
            DatasetSource::Csv(path) => load_trace(path, &CsvSchema::default())?,
        };
        Self::from_trace(config, &trace, seed)
    }

    pub fn from_trace(config: &ExperimentConfig, trace: &Trace, seed: u64) -> Result<Self> {
        let data = prepare(trace, config.split)?;
        let n = data.train.feature_count();
        let batch = TrainBatch::new(
            data.train.samples().iter().map(|s| s.features.clone()).collect(),
            data.train.samples().iter().map(|s| s.label).collect(),
        )?;
        let train_cfg = TrainConfig {
            epochs: config.initial_epochs,
            ..config.train
        };
        let dims = |hidden: &[usize], out: usize| {
            let mut d = vec![n];
            d.extend_from_slice(hidden);
            d.push(out);
            d
        };
        let ae = DenseModel::new(&dims(&config.ae_hidden, n), Head::Autoencoder, seed)?;
        let ae = train(&ae, &batch, &train_cfg, seed)?;
        let mlp = DenseModel::new(&dims(&config.mlp_hidden, 1), Head::Classifier, seed)?;
        let mlp = train(&mlp, &batch, &train_cfg, seed)?;
        let size_samples = &batch.inputs;
        let ae_sizes = calibrate_sizes(&ae, size_samples, config.w_max, config.w_step, config.header_bits)?;
        let mlp_sizes = calibrate_sizes(&mlp, size_samples, config.w_max, config.w_step, config.header_bits)?;
        Ok(Self {
            seed,
            data,
            ae,
            mlp,
            ae_sizes,
            mlp_sizes,
        })
    }

    /// Scenario whose test part serves for threshold calibration: an
    /// independent synthetic trace, or the same data for a CSV source.
    pub fn validation(config: &ExperimentConfig, seed: u64) -> Result<Self> {
        match config.dataset {
            DatasetSource::Synthetic => Self::build(config, seed ^ VALIDATION_SALT),
            DatasetSource::Csv(_) => Self::build(config, seed),
        }
    }

    pub fn detector(&self, head: Head) -> (&DenseModel, &SizeCalibration) {
        match head {
            Head::Autoencoder => (&self.ae, &self.ae_sizes),
            Head::Classifier => (&self.mlp, &self.mlp_sizes),
        }
    }
}

/// Runs one policy on a scenario over the simulated link.
pub fn simulate(
    scenario: &Scenario,
    head: Head,
    policy: Policy,
    run: &RunConfig,
    bandwidth_bps: f64,
    header_bits: u64,
    seed: u64,
) -> Result<RunOutcome> {
    let (model, sizes) = scenario.detector(head);
    let transport = SimulatedTransport::new(Bandwidth::Constant(bandwidth_bps), header_bits)?;
    Simulation::new(policy, run, &scenario.data.test, model, sizes, transport, seed)?.run()
}

/// Fraction of flagged samples among normal and among fault samples of a
/// prediction log; unclassified samples count as not flagged.
pub fn roc_from_predictions(predictions: &[Prediction], tau: f64) -> Result<RocPoint> {
    let scores: Vec<f64> = predictions.iter().map(|p| if p.predicted { 1.0 } else { 0.0 }).collect();
    let labels: Vec<bool> = predictions.iter().map(|p| p.label).collect();
    let mut point = planner::roc_point(&scores, &labels, 0.5)?;
    point.tau = tau;
    Ok(point)
}

/// Continual-learning dry run at each grid threshold with the fixed plan
/// `(0, 32, W_max)` and no budget, on the validation scenario.
pub fn roc_dry_run(config: &ExperimentConfig, validation: &Scenario, head: Head) -> Result<Vec<RocPoint>> {
    let grid = tau_grid(config.grid_step)?;
    grid.par_iter()
        .map(|&tau| {
            let mut run = config.run_config(f64::INFINITY, tau);
            run.fixed_plan = Some((0.0, QuantLevel::Q32, config.w_max));
            let out = simulate(
                validation,
                head,
                Policy::Acord,
                &run,
                config.energy.reference_rate,
                config.header_bits,
                validation.seed,
            )?;
            roc_from_predictions(&out.predictions, tau)
        })
        .collect()
}

/// Device threshold for a seed.
pub fn resolve_tau(config: &ExperimentConfig, seed: u64) -> Result<f64> {
    match config.tau {
        TauSetting::Fixed(t) => Ok(t),
        TauSetting::Auto => {
            let validation = Scenario::validation(config, seed)?;
            Ok(select_threshold(&roc_dry_run(config, &validation, config.detector)?)?.tau)
        }
    }
}

/// One row of a sweep.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub policy: Policy,
    pub e_th: f64,
    pub bandwidth_mbps: f64,
    pub seed: u64,
    pub recall: f64,
    pub e_total: f64,
    pub rounds: usize,
}

/// Median of each (policy, point) group across seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct MedianRow {
    pub policy: Policy,
    pub e_th: f64,
    pub bandwidth_mbps: f64,
    pub seeds: usize,
    pub recall: f64,
    pub e_total: f64,
}

pub fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    match n {
        0 => f64::NAN,
        _ if n % 2 == 1 => values[n / 2],
        _ => (values[n / 2 - 1] + values[n / 2]) / 2.0,
    }
}

/// `(e_th, bandwidth Mbit/s)` points along an axis.
pub fn axis_points(config: &ExperimentConfig, axis: Axis) -> Vec<(f64, f64)> {
    match axis {
        Axis::Energy => config.e_th.iter().map(|&e| (e, config.energy_axis_bandwidth)).collect(),
        Axis::Bandwidth => config.bandwidth.iter().map(|&b| (config.bandwidth_axis_e_th, b)).collect(),
    }
}

/// Runs every `(policy, point, seed)` combination. Output order follows
/// seeds, then points, then policies, whatever the scheduling.
pub fn sweep_points(config: &ExperimentConfig, points: &[(f64, f64)]) -> Result<Vec<SweepRow>> {
    config.validate()?;
    let prepared: Vec<(Scenario, f64)> = config
        .seeds
        .par_iter()
        .map(|&seed| Ok((Scenario::build(config, seed)?, resolve_tau(config, seed)?)))
        .collect::<Result<_>>()?;
    let jobs: Vec<(usize, (f64, f64), Policy)> = (0..prepared.len())
        .flat_map(|s| {
            points
                .iter()
                .flat_map(move |&pt| config.policies.iter().map(move |&p| (s, pt, p)))
        })
        .collect();
    jobs.par_iter()
        .map(|&(s, (e_th, bw), policy)| {
            let (scenario, tau) = &prepared[s];
            let run = config.run_config(e_th, *tau);
            let out = simulate(scenario, config.detector, policy, &run, bw * 1e6, config.header_bits, scenario.seed)?;
            Ok(SweepRow {
                policy,
                e_th,
                bandwidth_mbps: bw,
                seed: scenario.seed,
                recall: out.metrics.recall,
                e_total: out.metrics.e_total,
                rounds: out.metrics.rounds,
            })
        })
        .collect()
}

pub fn sweep(config: &ExperimentConfig, axis: Axis) -> Result<Vec<SweepRow>> {
    sweep_points(config, &axis_points(config, axis))
}

pub fn medians(rows: &[SweepRow]) -> Vec<MedianRow> {
    let mut keys: Vec<(Policy, f64, f64)> = Vec::new();
    for r in rows {
        let key = (r.policy, r.e_th, r.bandwidth_mbps);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(policy, e_th, bw)| {
            let group: Vec<&SweepRow> = rows
                .iter()
                .filter(|r| r.policy == policy && r.e_th == e_th && r.bandwidth_mbps == bw)
                .collect();
            MedianRow {
                policy,
                e_th,
                bandwidth_mbps: bw,
                seeds: group.len(),
                recall: median(&mut group.iter().map(|r| r.recall).collect::<Vec<_>>()),
                e_total: median(&mut group.iter().map(|r| r.e_total).collect::<Vec<_>>()),
            }
        })
        .collect()
}

fn quant_str(q: Option<QuantLevel>) -> String {
    q.map(|q| q.bits().to_string()).unwrap_or_default()
}

fn opt_str(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(csv::Writer::from_path(path)?)
}

pub const ROUND_COLUMNS: [&str; 27] = [
    "round",
    "policy",
    "span_start",
    "span_end",
    "model_p_l",
    "model_q_l",
    "p_l",
    "q_l",
    "w",
    "tau",
    "samples_sent",
    "bits_up",
    "bits_down",
    "t_ul",
    "t_dl",
    "e_comm",
    "e_comp",
    "e_total",
    "inferences",
    "detections",
    "true_positives",
    "false_positives",
    "faults",
    "recall",
    "model_updated",
    "rate_estimate",
    "e_inf",
];

pub fn write_rounds_csv(path: &Path, reports: &[RoundReport], energy: &EnergyParams) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(ROUND_COLUMNS)?;
    for r in reports {
        w.write_record([
            r.round.to_string(),
            r.policy.to_string(),
            r.span_start.to_string(),
            r.span_end.to_string(),
            r.model_prune.to_string(),
            r.model_quant.bits().to_string(),
            opt_str(r.plan_prune),
            quant_str(r.plan_quant),
            r.plan_window.to_string(),
            r.tau.to_string(),
            r.samples_sent.to_string(),
            r.bits_up.to_string(),
            r.bits_down.to_string(),
            r.t_ul.to_string(),
            r.t_dl.to_string(),
            r.e_comm.to_string(),
            r.e_comp.to_string(),
            r.e_total.to_string(),
            r.inferences.to_string(),
            r.detections.to_string(),
            r.true_positives.to_string(),
            r.false_positives.to_string(),
            r.faults.to_string(),
            r.recall.to_string(),
            r.model_updated.to_string(),
            r.rate_estimate.to_string(),
            energy.inference.get(r.model_quant).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// A round as read back from a rounds CSV, enough to recompute energy.
#[derive(Debug, Clone, PartialEq)]
pub struct RoundRow {
    pub round: usize,
    pub t_ul: f64,
    pub t_dl: f64,
    pub inferences: u64,
    pub e_inf: f64,
    pub e_comm: f64,
    pub e_comp: f64,
    pub e_total: f64,
    pub true_positives: u64,
    pub faults: u64,
    pub recall: f64,
}

pub fn read_rounds_csv(path: &Path) -> Result<Vec<RoundRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    let col = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let idx: Vec<usize> = [
        "round", "t_ul", "t_dl", "inferences", "e_inf", "e_comm", "e_comp", "e_total", "true_positives", "faults",
        "recall",
    ]
    .iter()
    .map(|c| col(c))
    .collect::<Result<_>>()?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        let f = |i: usize| parse::<f64>(&headers[idx[i]], &rec[idx[i]]);
        let u = |i: usize| parse::<u64>(&headers[idx[i]], &rec[idx[i]]);
        rows.push(RoundRow {
            round: u(0)? as usize,
            t_ul: f(1)?,
            t_dl: f(2)?,
            inferences: u(3)?,
            e_inf: f(4)?,
            e_comm: f(5)?,
            e_comp: f(6)?,
            e_total: f(7)?,
            true_positives: u(8)?,
            faults: u(9)?,
            recall: f(10)?,
        });
    }
    Ok(rows)
}

pub fn write_ledger_csv(path: &Path, outcome: &RunOutcome) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["round", "e_comm", "e_comp", "e_total"])?;
    for e in outcome.ledger.entries() {
        w.write_record([e.round.to_string(), e.comm.to_string(), e.comp.to_string(), e.total.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_predictions_csv(path: &Path, predictions: &[Prediction]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["position", "index", "round", "inferred", "predicted", "label"])?;
    for p in predictions {
        w.write_record([
            p.position.to_string(),
            p.index.to_string(),
            p.round.to_string(),
            (p.inferred as u8).to_string(),
            (p.predicted as u8).to_string(),
            (p.label as u8).to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_metrics_csv(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["policy", "e_th", "bandwidth_mbps", "seed", "recall", "e_total", "rounds"])?;
    for r in rows {
        w.write_record([
            r.policy.to_string(),
            r.e_th.to_string(),
            r.bandwidth_mbps.to_string(),
            r.seed.to_string(),
            r.recall.to_string(),
            r.e_total.to_string(),
            r.rounds.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_metrics_csv(path: &Path) -> Result<Vec<SweepRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        if rec.len() != 7 {
            return Err(Error::Config(format!("metrics row has {} fields", rec.len())));
        }
        rows.push(SweepRow {
            policy: rec[0].parse()?,
            e_th: parse("e_th", &rec[1])?,
            bandwidth_mbps: parse("bandwidth_mbps", &rec[2])?,
            seed: parse("seed", &rec[3])?,
            recall: parse("recall", &rec[4])?,
            e_total: parse("e_total", &rec[5])?,
            rounds: parse("rounds", &rec[6])?,
        });
    }
    Ok(rows)
}

pub fn write_medians_csv(path: &Path, rows: &[MedianRow]) -> Result<()> {
    let mut w = csv_writer(path)?;
    w.write_record(["policy", "e_th", "bandwidth_mbps", "seeds", "median_recall", "median_e_total"])?;
    for r in rows {
        w.write_record([
            r.policy.to_string(),
            r.e_th.to_string(),
            r.bandwidth_mbps.to_string(),
            r.seeds.to_string(),
            r.recall.to_string(),
            r.e_total.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_sizes_csv(dir: &Path, sizes: &SizeCalibration, p_th: f64) -> Result<()> {
    let mut w = csv_writer(&dir.join("sizes.csv"))?;
    w.write_record(["p_l", "q_l", "raw_bits", "coded_bits"])?;
    for p in &sizes.model_points {
        w.write_record([
            p.prune_level.to_string(),
            p.quant.bits().to_string(),
            p.raw_bits.to_string(),
            p.coded_bits.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv_writer(&dir.join("ul_sizes.csv"))?;
    w.write_record(["w", "samples", "raw_bits", "coded_bits"])?;
    for p in &sizes.data_points {
        w.write_record([
            p.window.to_string(),
            p.samples.to_string(),
            p.raw_bits.to_string(),
            p.coded_bits.to_string(),
        ])?;
    }
    w.flush()?;
    let mut w = csv_writer(&dir.join("size_models.csv"))?;
    w.write_record(["parameter", "value"])?;
    for (name, m) in [("dl_q8", sizes.dl_q8), ("dl_q32", sizes.dl_q32), ("ul", sizes.ul)] {
        w.write_record([format!("{name}_slope"), m.slope.to_string()])?;
        w.write_record([format!("{name}_intercept"), m.intercept.to_string()])?;
        w.write_record([format!("{name}_residual_max"), m.residual_max.to_string()])?;
    }
    w.write_record(["header_bits".to_string(), sizes.header_bits.to_string()])?;
    w.write_record(["p_th".to_string(), p_th.to_string()])?;
    w.flush()?;
    Ok(())
}

/// ROC results for one detector.
#[derive(Debug, Clone, PartialEq)]
pub struct RocSummary {
    pub detector: &'static str,
    pub points: Vec<RocPoint>,
    pub auc: f64,
    pub best: RocPoint,
}

pub fn detector_name(head: Head) -> &'static str {
    match head {
        Head::Autoencoder => "ae",
        Head::Classifier => "mlp",
    }
}

pub fn write_roc_csv(dir: &Path, summaries: &[RocSummary], grid_step: f64) -> Result<()> {
    let mut w = csv_writer(&dir.join("roc.csv"))?;
    w.write_record(["detector", "tau", "fpr", "tpr"])?;
    for s in summaries {
        for p in &s.points {
            w.write_record([s.detector.to_string(), p.tau.to_string(), p.fpr.to_string(), p.tpr.to_string()])?;
        }
    }
    for tau in tau_grid(grid_step)? {
        let rate = (1.0 - tau).to_string();
        w.write_record(["random".to_string(), tau.to_string(), rate.clone(), rate])?;
    }
    w.flush()?;
    let mut w = csv_writer(&dir.join("roc_summary.csv"))?;
    w.write_record(["detector", "auc", "tau_star", "fpr", "tpr"])?;
    for s in summaries {
        w.write_record([
            s.detector.to_string(),
            s.auc.to_string(),
            s.best.tau.to_string(),
            s.best.fpr.to_string(),
            s.best.tpr.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// `(detector, point)` rows of a ROC CSV.
pub fn read_roc_csv(path: &Path) -> Result<Vec<(String, RocPoint)>> {
    let mut r = csv::Reader::from_path(path)?;
    let mut rows = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        rows.push((
            rec[0].to_string(),
            RocPoint {
                tau: parse("tau", &rec[1])?,
                fpr: parse("fpr", &rec[2])?,
                tpr: parse("tpr", &rec[3])?,
            },
        ));
    }
    Ok(rows)
}

/// Fits the size models for the configured seed and writes them out.
pub fn cmd_calibrate_sizes(config: &ExperimentConfig) -> Result<(SizeCalibration, f64)> {
    config.validate()?;
    let scenario = Scenario::build(config, config.seed)?;
    let (_, sizes) = scenario.detector(config.detector);
    let p_th = match config.p_th {
        Some(p) => p,
        None => planner::p_threshold(sizes)?,
    };
    write_sizes_csv(&config.out, sizes, p_th)?;
    Ok((sizes.clone(), p_th))
}

/// ROC dry run for both detectors on the configured seed.
pub fn cmd_roc(config: &ExperimentConfig) -> Result<Vec<RocSummary>> {
    config.validate()?;
    let validation = Scenario::validation(config, config.seed)?;
    let summaries = [Head::Autoencoder, Head::Classifier]
        .into_iter()
        .map(|head| {
            let points = roc_dry_run(config, &validation, head)?;
            Ok(RocSummary {
                detector: detector_name(head),
                auc: auc(&points),
                best: select_threshold(&points)?,
                points,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    write_roc_csv(&config.out, &summaries, config.grid_step)?;
    Ok(summaries)
}

/// One run at the first configured budget and bandwidth, with per-round
/// output. With `socket` set, the link is a TCP loopback to an echo peer
/// listening there.
pub fn cmd_run(config: &ExperimentConfig) -> Result<RunOutcome> {
    config.validate()?;
    let scenario = Scenario::build(config, config.seed)?;
    let tau = resolve_tau(config, config.seed)?;
    let e_th = config.e_th[0];
    let bandwidth = config.bandwidth[0];
    let run = config.run_config(e_th, tau);
    let outcome = match &config.socket {
        None => simulate(
            &scenario,
            config.detector,
            config.policy,
            &run,
            bandwidth * 1e6,
            config.header_bits,
            config.seed,
        )?,
        Some(addr) => {
            let listener = TcpListener::bind(addr.as_str()).map_err(|e| Error::Transport(format!("{addr}: {e}")))?;
            let local = listener.local_addr()?;
            let peer = serve_echo(listener, 1);
            let (model, sizes) = scenario.detector(config.detector);
            let transport = SocketTransport::connect(local)?;
            let outcome =
                Simulation::new(config.policy, &run, &scenario.data.test, model, sizes, transport, config.seed)?.run();
            let served = peer.join().map_err(|_| Error::Transport("echo peer panicked".into()))?;
            let outcome = outcome?;
            served?;
            outcome
        }
    };
    write_rounds_csv(&config.out.join("rounds.csv"), &outcome.reports, &config.energy)?;
    write_ledger_csv(&config.out.join("ledger.csv"), &outcome)?;
    write_predictions_csv(&config.out.join("predictions.csv"), &outcome.predictions)?;
    let row = SweepRow {
        policy: config.policy,
        e_th,
        bandwidth_mbps: bandwidth,
        seed: config.seed,
        recall: outcome.metrics.recall,
        e_total: outcome.metrics.e_total,
        rounds: outcome.metrics.rounds,
    };
    write_metrics_csv(&config.out.join("metrics.csv"), &[row])?;
    Ok(outcome)
}

/// Sweep along `axis`, writing raw rows and per-point medians.
pub fn cmd_sweep(config: &ExperimentConfig, axis: Axis) -> Result<(Vec<SweepRow>, Vec<MedianRow>)> {
    let rows = sweep(config, axis)?;
    let med = medians(&rows);
    write_metrics_csv(&config.out.join(format!("sweep_{}.csv", axis.name())), &rows)?;
    write_medians_csv(&config.out.join(format!("sweep_{}_median.csv", axis.name())), &med)?;
    Ok((rows, med))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn unknown_keys_are_named() {
        let err = ExperimentConfig::parse_str("e-th = 10\nbogus = 1\n").unwrap_err();
        assert!(err.to_string().contains("bogus"), "{err}");
        assert!(ExperimentConfig::parse_str("e-th 10").is_err());
    }

    #[test]
    fn text_form_round_trips() {
        let mut c = ExperimentConfig::default();
        c.apply_str("e-th = 10, 20 # two budgets\ntau = 0.3\np-th = 0.25\nbatch-size = 0\nsocket = 127.0.0.1:9000")
            .unwrap();
        assert_eq!(c.e_th, vec![10.0, 20.0]);
        assert_eq!(c.tau, TauSetting::Fixed(0.3));
        assert_eq!(c.train.batch_size, None);
        let back = ExperimentConfig::parse_str(&c.to_text()).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn every_key_is_settable_and_documented() {
        let text = ExperimentConfig::default().to_text();
        let written: Vec<&str> = text.lines().map(|l| l.split('=').next().unwrap().trim()).collect();
        let known: Vec<&str> = CONFIG_KEYS.iter().map(|k| k.0).collect();
        assert_eq!(written, known);
    }

    #[test]
    fn empty_lists_are_rejected() {
        assert!(ExperimentConfig::parse_str("seeds = ,").is_err());
        let c = ExperimentConfig {
            policies: vec![],
            ..Default::default()
        };
        assert!(c.validate().is_err());
    }

    #[test]
    fn medians_of_even_and_odd_groups() {
        assert_eq!(median(&mut [3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut [4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
