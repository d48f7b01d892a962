//! Sensor traces: CSV ingestion, synthetic generation, the initial
//! train/test split and min-max scaling.
//!
//! A [`Trace`] is an ordered run of [`Sample`]s, each one an `N`-dimensional
//! reading with its ground-truth fault label. The CSV loader cleans and
//! imputes raw telemetry; [`synth_trace`] produces a desk-scale substitute
//! with controllable fault events, operating-regime changes and temporal
//! correlation.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};

/// One reading at sampling period `index`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub index: usize,
    pub features: Vec<f64>,
    pub label: bool,
}

/// An ordered sequence of samples sharing one feature dimension.
#[derive(Debug, Clone, PartialEq)]
pub struct Trace {
    samples: Vec<Sample>,
    feature_count: usize,
}

impl Trace {
    /// Builds a trace, checking dimensions, ordering and finiteness.
    pub fn new(samples: Vec<Sample>, feature_count: usize) -> Result<Self> {
        if feature_count == 0 {
            return Err(Error::NoFeatures);
        }
        for (pos, s) in samples.iter().enumerate() {
            if s.features.len() != feature_count {
                return Err(Error::DimensionMismatch {
                    expected: feature_count,
                    actual: s.features.len(),
                });
            }
            if s.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite feature in sample {}",
                    s.index
                )));
            }
            if pos > 0 && samples[pos - 1].index >= s.index {
                return Err(Error::InvalidArgument(
                    "sample indices must be strictly increasing".into(),
                ));
            }
        }
        Ok(Self {
            samples,
            feature_count,
        })
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn feature_count(&self) -> usize {
        self.feature_count
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample indices whose label is set.
    pub fn fault_event_indices(&self) -> Vec<usize> {
        self.samples
            .iter()
            .filter(|s| s.label)
            .map(|s| s.index)
            .collect()
    }

    pub fn fault_count(&self) -> usize {
        self.samples.iter().filter(|s| s.label).count()
    }

    fn slice(&self, range: std::ops::Range<usize>) -> Trace {
        Trace {
            samples: self.samples[range].to_vec(),
            feature_count: self.feature_count,
        }
    }
}

/// Column mapping for CSV ingestion.
#[derive(Debug, Clone, PartialEq)]
pub struct CsvSchema {
    pub status_column: String,
    pub feature_columns: Vec<String>,
}

impl Default for CsvSchema {
    /// The public pump telemetry layout: `sensor_00`..`sensor_51` with the
    /// two sparsest columns (`sensor_15`, `sensor_50`) left out, giving 50
    /// features.
    fn default() -> Self {
        let feature_columns = (0..52)
            .filter(|i| *i != 15 && *i != 50)
            .map(|i| format!("sensor_{i:02}"))
            .collect();
        Self {
            status_column: "machine_status".into(),
            feature_columns,
        }
    }
}

fn parse_status(raw: &str, row: usize) -> Result<bool> {
    match raw.trim().to_ascii_uppercase().as_str() {
        "BROKEN" => Ok(true),
        "NORMAL" | "RECOVERING" => Ok(false),
        other => Err(Error::InvalidArgument(format!(
            "unknown status `{other}` on row {row}"
        ))),
    }
}

fn parse_feature(raw: &str) -> Option<f64> {
    raw.trim().parse::<f64>().ok().filter(|v| v.is_finite())
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Reads a telemetry CSV into an unscaled trace.
///
/// Unparseable feature cells take the previous valid value of their column
/// (the column median when the first row is affected). Columns with no
/// parseable value at all are dropped.
pub fn load_trace(path: &Path, schema: &CsvSchema) -> Result<Trace> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    if schema.feature_columns.is_empty() {
        return Err(Error::NoFeatures);
    }
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .from_path(path)?;
    let headers = reader.headers()?.clone();
    if headers.is_empty() || (headers.len() == 1 && headers[0].is_empty()) {
        return Err(Error::ZeroRows);
    }
    let column = |name: &str| {
        headers
            .iter()
            .position(|h| h.trim() == name)
            .ok_or_else(|| Error::MissingColumn(name.to_string()))
    };
    let status_col = column(&schema.status_column)?;
    let feature_cols = schema
        .feature_columns
        .iter()
        .map(|c| column(c))
        .collect::<Result<Vec<_>>>()?;

    let mut labels = Vec::new();
    let mut raw: Vec<Vec<Option<f64>>> = vec![Vec::new(); feature_cols.len()];
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        labels.push(parse_status(record.get(status_col).unwrap_or(""), row)?);
        for (col, &idx) in raw.iter_mut().zip(&feature_cols) {
            col.push(record.get(idx).and_then(parse_feature));
        }
    }
    if labels.is_empty() {
        return Err(Error::ZeroRows);
    }

    let mut columns: Vec<Vec<f64>> = Vec::new();
    for col in raw {
        let mut valid: Vec<f64> = col.iter().flatten().copied().collect();
        if valid.is_empty() {
            continue;
        }
        let mut last = median(&mut valid);
        columns.push(
            col.into_iter()
                .map(|v| {
                    if let Some(v) = v {
                        last = v;
                    }
                    last
                })
                .collect(),
        );
    }
    if columns.is_empty() {
        return Err(Error::NoFeatures);
    }

    let n = columns.len();
    let samples = labels
        .into_iter()
        .enumerate()
        .map(|(k, label)| Sample {
            index: k,
            features: columns.iter().map(|c| c[k]).collect(),
            label,
        })
        .collect();
    Trace::new(samples, n)
}

/// How the initial split is made.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitSpec {
    pub train_fraction: f64,
    pub faults_to_test: bool,
}

impl Default for SplitSpec {
    fn default() -> Self {
        Self {
            train_fraction: 0.1,
            faults_to_test: true,
        }
    }
}

/// Contiguous prefix/suffix split. With `faults_to_test` the boundary is
/// pulled back to the first fault so the train part holds none.
pub fn split_initial(trace: &Trace, spec: SplitSpec) -> Result<(Trace, Trace)> {
    if trace.is_empty() {
        return Err(Error::InvalidArgument("cannot split an empty trace".into()));
    }
    if !(spec.train_fraction > 0.0 && spec.train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {} outside (0, 1)",
            spec.train_fraction
        )));
    }
    let mut boundary = (spec.train_fraction * trace.len() as f64).floor() as usize;
    if spec.faults_to_test {
        if let Some(first) = trace.samples.iter().position(|s| s.label) {
            boundary = boundary.min(first);
        }
    }
    if boundary == 0 {
        return Err(Error::InfeasibleSplit(
            "no sample can be placed in the train part".into(),
        ));
    }
    Ok((trace.slice(0..boundary), trace.slice(boundary..trace.len())))
}

/// Per-column min-max scaling to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct MinMaxScaler {
    min: Vec<f64>,
    max: Vec<f64>,
}

impl MinMaxScaler {
    pub fn fit(trace: &Trace) -> Result<Self> {
        if trace.is_empty() {
            return Err(Error::InvalidArgument("cannot fit scaler on empty trace".into()));
        }
        let n = trace.feature_count();
        let mut min = vec![f64::INFINITY; n];
        let mut max = vec![f64::NEG_INFINITY; n];
        for s in trace.samples() {
            for (j, &v) in s.features.iter().enumerate() {
                min[j] = min[j].min(v);
                max[j] = max[j].max(v);
            }
        }
        Ok(Self { min, max })
    }

    pub fn transform_row(&self, features: &[f64]) -> Vec<f64> {
        features
            .iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| {
                let range = hi - lo;
                // constant columns carry no information
                if range > 0.0 {
                    (v - lo) / range
                } else {
                    0.0
                }
            })
            .collect()
    }

    pub fn transform(&self, trace: &Trace) -> Trace {
        Trace {
            samples: trace
                .samples
                .iter()
                .map(|s| Sample {
                    index: s.index,
                    features: self.transform_row(&s.features),
                    label: s.label,
                })
                .collect(),
            feature_count: trace.feature_count,
        }
    }
}

/// A split trace scaled with statistics from its train part.
#[derive(Debug, Clone)]
pub struct PreparedData {
    pub train: Trace,
    pub test: Trace,
    pub scaler: MinMaxScaler,
}

/// Splits, then fits the scaler on the train part and applies it to both.
pub fn prepare(trace: &Trace, spec: SplitSpec) -> Result<PreparedData> {
    let (train, test) = split_initial(trace, spec)?;
    let scaler = MinMaxScaler::fit(&train)?;
    Ok(PreparedData {
        train: scaler.transform(&train),
        test: scaler.transform(&test),
        scaler,
    })
}

/// Parameters of the synthetic fault-trace generator.
#[derive(Debug, Clone, PartialEq)]
pub struct SynthConfig {
    pub features: usize,
    pub length: usize,
    pub fault_events: usize,
    /// Samples over which readings stay correlated; also the width of each
    /// fault event.
    pub coherence: usize,
    pub noise_scale: f64,
    /// Dimension of the latent process the sensors are driven by.
    pub latent_dim: usize,
    /// Number of operating-regime segments. Segments draw their latent
    /// offset from a small recurring pool.
    pub regimes: usize,
    pub regime_pool: usize,
    pub regime_scale: f64,
    /// Norm of the off-manifold displacement applied during a fault.
    pub fault_shift: f64,
    /// Faults are placed after this fraction of the trace when room allows.
    pub fault_start_fraction: f64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            features: 50,
            length: 12_000,
            fault_events: 6,
            coherence: 40,
            noise_scale: 0.05,
            latent_dim: 4,
            regimes: 8,
            regime_pool: 3,
            regime_scale: 1.0,
            fault_shift: 3.0,
            fault_start_fraction: 0.15,
        }
    }
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    rng.sample::<f64, _>(StandardNormal)
}

/// Generates a labelled trace, bit-for-bit reproducible for a given seed.
pub fn synth_trace(config: &SynthConfig, seed: u64) -> Result<Trace> {
    let SynthConfig {
        features: n,
        length,
        fault_events,
        coherence,
        ..
    } = *config;
    if length == 0 {
        return Err(Error::InvalidArgument("trace length must be positive".into()));
    }
    if n == 0 {
        return Err(Error::NoFeatures);
    }
    if coherence == 0 || config.latent_dim == 0 {
        return Err(Error::InvalidArgument(
            "coherence and latent_dim must be positive".into(),
        ));
    }
    let fault_span = fault_events
        .checked_mul(coherence)
        .filter(|span| *span <= length)
        .ok_or_else(|| {
            Error::InvalidArgument(format!(
                "{fault_events} fault events of width {coherence} do not fit in {length} samples"
            ))
        })?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = config.latent_dim;

    let loadings: Vec<f64> = (0..n * d)
        .map(|_| rng.gen_range(-1.0..1.0) / (d as f64).sqrt())
        .collect();
    let offsets: Vec<f64> = (0..n).map(|_| rng.gen_range(0.3..0.7)).collect();
    let pool = config.regime_pool.max(1);
    let regime_means: Vec<Vec<f64>> = (0..pool)
        .map(|r| {
            if r == 0 {
                vec![0.0; d]
            } else {
                (0..d).map(|_| config.regime_scale * normal(&mut rng)).collect()
            }
        })
        .collect();

    // Segment boundaries, evenly spaced with jitter; segment 0 uses regime 0.
    let segments = config.regimes.max(1);
    let seg_len = length as f64 / segments as f64;
    let mut regime_of = vec![0usize; length];
    let mut prev_regime = 0;
    let mut seg_start = 0;
    for seg in 0..segments {
        let jitter = if seg + 1 < segments {
            rng.gen_range(-0.25..0.25) * seg_len
        } else {
            0.0
        };
        let end = if seg + 1 == segments {
            length
        } else {
            ((seg as f64 + 1.0) * seg_len + jitter).round() as usize
        }
        .clamp(seg_start, length);
        let regime = if seg == 0 || pool == 1 {
            0
        } else {
            // never repeat the previous regime back to back
            let mut r = rng.gen_range(0..pool - 1);
            if r >= prev_regime {
                r += 1;
            }
            r
        };
        regime_of[seg_start..end].fill(regime);
        prev_regime = regime;
        seg_start = end;
    }

    // Fault placement: one event per equal-width slot of the fault region.
    let region_start = {
        let start = (config.fault_start_fraction.clamp(0.0, 1.0) * length as f64) as usize;
        if length - start >= fault_span {
            start
        } else {
            0
        }
    };
    let mut fault_shift = vec![None::<Vec<f64>>; length];
    if fault_events > 0 {
        let slot = (length - region_start) / fault_events;
        for e in 0..fault_events {
            let slot_start = region_start + e * slot;
            let room = slot - coherence;
            let start = slot_start + if room > 0 { rng.gen_range(0..=room) } else { 0 };
            let mut dir: Vec<f64> = (0..n).map(|_| normal(&mut rng)).collect();
            let norm = dir.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-12);
            dir.iter_mut().for_each(|v| *v *= config.fault_shift / norm);
            for slot in &mut fault_shift[start..start + coherence] {
                *slot = Some(dir.clone());
            }
        }
    }

    let rho = (-1.0 / coherence as f64).exp();
    let innovation = (1.0 - rho * rho).sqrt();
    let mut latent: Vec<f64> = (0..d).map(|_| normal(&mut rng)).collect();
    let mut samples = Vec::with_capacity(length);
    for k in 0..length {
        for z in latent.iter_mut() {
            *z = rho * *z + innovation * normal(&mut rng);
        }
        let mean = &regime_means[regime_of[k]];
        let mut features = Vec::with_capacity(n);
        for j in 0..n {
            let row = &loadings[j * d..(j + 1) * d];
            let signal: f64 = row
                .iter()
                .zip(latent.iter().zip(mean))
                .map(|(a, (z, m))| a * (z + m))
                .sum();
            let mut v = offsets[j] + signal + config.noise_scale * normal(&mut rng);
            if let Some(shift) = &fault_shift[k] {
                v += shift[j];
            }
            features.push(v);
        }
        samples.push(Sample {
            index: k,
            features,
            label: fault_shift[k].is_some(),
        });
    }
    Trace::new(samples, n)
}
