//! Model compression and payload sizing.
//!
//! Covers global magnitude pruning, 8-bit post-training quantization, the
//! checkpoint byte format, the lossless codec applied to every payload, and
//! the linear size models fitted from measured sweeps.
//!
//! # Checkpoint layout
//!
//! All integers and floats little-endian:
//!
//! ```text
//! magic      4 bytes  "ACRD"
//! version    u8       1
//! head       u8       0 = autoencoder, 1 = classifier
//! q_bits     u8       8 | 32
//! n_dims     u16
//! dims       n_dims x u32
//! e_ref      f64      0.0 when uncalibrated
//! prune      f64
//! per layer  q_bits = 32: weights f32 x (in*out), biases f32 x out
//!            q_bits = 8:  step f32, weight codes i8 x (in*out),
//!                         step f32, bias codes i8 x out
//! act_flag   u8       1 when activation steps follow
//! act_steps  (n_dims - 2) x f32
//! ```

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;

use crate::error::{Error, Result};
use crate::model::{quantize_activations, DenseModel, Head, QuantLevel};

const MAGIC: &[u8; 4] = b"ACRD";
const VERSION: u8 = 1;
const CODEC_DEFLATE: u8 = 1;

/// Zeroes the `floor(p * N_w)` smallest-magnitude weights across all
/// layers. Biases are left alone; ties go to the earlier weight.
pub fn prune(model: &DenseModel, prune_level: f64) -> Result<DenseModel> {
    if !(0.0..=1.0).contains(&prune_level) {
        return Err(Error::InvalidArgument(format!(
            "pruning level {prune_level} outside [0, 1]"
        )));
    }
    let mut out = model.clone();
    let count = (prune_level * model.weight_count() as f64).floor() as usize;
    if count > 0 {
        let mut ranked: Vec<(f64, usize, usize)> = model
            .layers()
            .iter()
            .enumerate()
            .flat_map(|(l, layer)| {
                layer.weights().iter().enumerate().map(move |(i, w)| (w.abs(), l, i))
            })
            .collect();
        ranked.sort_by(|a, b| a.0.total_cmp(&b.0).then((a.1, a.2).cmp(&(b.1, b.2))));
        for &(_, l, i) in &ranked[..count] {
            out.layers[l].weights[i] = 0.0;
        }
    }
    out.meta.prune_level = prune_level;
    Ok(out)
}

fn quant_step(values: &[f64]) -> f32 {
    let max = values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    (max / 127.0) as f32
}

fn quant_code(v: f64, step: f32) -> i8 {
    if step == 0.0 {
        return 0;
    }
    (v / step as f64).round().clamp(-127.0, 127.0) as i8
}

fn dequant(code: i8, step: f32) -> f64 {
    (code as f32 * step) as f64
}

fn quantize_tensor(values: &mut [f64]) -> f32 {
    let step = quant_step(values);
    for v in values.iter_mut() {
        *v = dequant(quant_code(*v, step), step);
    }
    step
}

/// Post-training quantization of weights and biases. `Q32` returns the
/// model unchanged; `Q8` snaps each tensor to a symmetric grid with step
/// `max|w| / 127`. An already 8-bit model is returned as is.
pub fn quantize(model: &DenseModel, level: QuantLevel) -> DenseModel {
    let mut out = model.clone();
    if level == QuantLevel::Q32 || model.meta.quant == QuantLevel::Q8 {
        return out;
    }
    for layer in out.layers.iter_mut() {
        let ws = quantize_tensor(&mut layer.weights);
        let bs = quantize_tensor(&mut layer.biases);
        layer.steps = Some((ws, bs));
    }
    out.meta.quant = QuantLevel::Q8;
    out
}

/// [`quantize`], plus an activation grid per hidden layer derived from the
/// largest activation the calibration inputs produce.
pub fn quantize_calibrated(model: &DenseModel, level: QuantLevel, calibration: &[Vec<f64>]) -> Result<DenseModel> {
    let mut out = quantize(model, level);
    if level == QuantLevel::Q32 || out.activation_steps.is_some() || calibration.is_empty() {
        return Ok(out);
    }
    let hidden = out.layers.len() - 1;
    let mut steps = Vec::with_capacity(hidden);
    let mut current: Vec<Vec<f64>> = calibration.to_vec();
    for l in 0..hidden {
        let layer = &out.layers[l];
        let mut max = 0.0f64;
        for x in current.iter_mut() {
            if x.len() != layer.inputs() {
                return Err(Error::DimensionMismatch {
                    expected: layer.inputs(),
                    actual: x.len(),
                });
            }
            let mut next = layer.biases().to_vec();
            for (o, row) in next.iter_mut().zip(layer.weights().chunks_exact(layer.inputs())) {
                *o += row.iter().zip(x.iter()).map(|(w, v)| w * v).sum::<f64>();
                *o = o.max(0.0);
                max = max.max(*o);
            }
            *x = next;
        }
        let step = (max / 127.0) as f32 as f64;
        for x in current.iter_mut() {
            quantize_activations(x, step);
        }
        steps.push(step);
    }
    out.activation_steps = Some(steps);
    Ok(out)
}

/// Canonical checkpoint bytes; see the module docs for the layout.
pub fn serialize(model: &DenseModel) -> Vec<u8> {
    let mut buf = Vec::with_capacity(32 + model.parameter_count() * 4);
    buf.extend_from_slice(MAGIC);
    buf.push(VERSION);
    buf.push(match model.head() {
        Head::Autoencoder => 0,
        Head::Classifier => 1,
    });
    let q = model.compression().quant;
    buf.push(q.bits() as u8);
    buf.extend_from_slice(&(model.dims().len() as u16).to_le_bytes());
    for &d in model.dims() {
        buf.extend_from_slice(&(d as u32).to_le_bytes());
    }
    buf.extend_from_slice(&model.e_ref().unwrap_or(0.0).to_le_bytes());
    buf.extend_from_slice(&model.compression().prune_level.to_le_bytes());
    for layer in model.layers() {
        match (q, layer.steps) {
            (QuantLevel::Q8, Some((ws, bs))) => {
                for (values, step) in [(layer.weights(), ws), (layer.biases(), bs)] {
                    buf.extend_from_slice(&step.to_le_bytes());
                    buf.extend(values.iter().map(|&v| quant_code(v, step) as u8));
                }
            }
            _ => {
                for &v in layer.weights().iter().chain(layer.biases()) {
                    buf.extend_from_slice(&(v as f32).to_le_bytes());
                }
            }
        }
    }
    match model.activation_steps() {
        Some(steps) if q == QuantLevel::Q8 => {
            buf.push(1);
            for &s in steps {
                buf.extend_from_slice(&(s as f32).to_le_bytes());
            }
        }
        _ => buf.push(0),
    }
    buf
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::Checkpoint("truncated checkpoint".into()))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f32(&mut self) -> Result<f32> {
        Ok(f32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}

/// Inverse of [`serialize`].
pub fn deserialize(bytes: &[u8]) -> Result<DenseModel> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.take(4)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = c.u8()?;
    if version != VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let head = match c.u8()? {
        0 => Head::Autoencoder,
        1 => Head::Classifier,
        other => return Err(Error::Checkpoint(format!("unknown head tag {other}"))),
    };
    let q = QuantLevel::from_bits(c.u8()? as u32).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let n_dims = c.u16()? as usize;
    let dims = (0..n_dims)
        .map(|_| c.u32().map(|d| d as usize))
        .collect::<Result<Vec<_>>>()?;
    let mut model = DenseModel::zeros(&dims, head).map_err(|e| Error::Checkpoint(e.to_string()))?;
    let e_ref = c.f64()?;
    model.e_ref = (e_ref > 0.0).then_some(e_ref);
    model.meta.prune_level = c.f64()?;
    model.meta.quant = q;
    for layer in model.layers.iter_mut() {
        match q {
            QuantLevel::Q32 => {
                for v in layer.weights.iter_mut().chain(layer.biases.iter_mut()) {
                    *v = c.f32()? as f64;
                }
            }
            QuantLevel::Q8 => {
                let ws = c.f32()?;
                let codes = c.take(layer.weights.len())?;
                for (v, &b) in layer.weights.iter_mut().zip(codes) {
                    *v = dequant(b as i8, ws);
                }
                let bs = c.f32()?;
                let codes = c.take(layer.biases.len())?;
                for (v, &b) in layer.biases.iter_mut().zip(codes) {
                    *v = dequant(b as i8, bs);
                }
                layer.steps = Some((ws, bs));
            }
        }
    }
    if c.u8()? == 1 {
        let steps = (0..dims.len() - 2)
            .map(|_| c.f32().map(|s| s as f64))
            .collect::<Result<Vec<_>>>()?;
        model.activation_steps = Some(steps);
    }
    if c.pos != bytes.len() {
        return Err(Error::Checkpoint("trailing bytes".into()));
    }
    Ok(model)
}

/// Deflate-codes `bytes` behind a one-byte codec id.
pub fn lossless_code(bytes: &[u8]) -> Result<Vec<u8>> {
    if bytes.is_empty() {
        return Err(Error::InvalidArgument("nothing to code".into()));
    }
    let mut out = vec![CODEC_DEFLATE];
    let mut enc = DeflateEncoder::new(&mut out, flate2::Compression::best());
    enc.write_all(bytes)?;
    enc.finish()?;
    Ok(out)
}

pub fn lossless_decode(coded: &[u8]) -> Result<Vec<u8>> {
    match coded.first() {
        Some(&CODEC_DEFLATE) => {
            let mut out = Vec::new();
            DeflateDecoder::new(&coded[1..])
                .read_to_end(&mut out)
                .map_err(|e| Error::CorruptStream(e.to_string()))?;
            Ok(out)
        }
        Some(other) => Err(Error::CorruptStream(format!("unknown codec id {other}"))),
        None => Err(Error::CorruptStream("empty stream".into())),
    }
}

/// What a payload carries.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PayloadKind {
    Data,
    Model,
}

impl PayloadKind {
    pub fn tag(self) -> u8 {
        match self {
            PayloadKind::Data => 0,
            PayloadKind::Model => 1,
        }
    }

    pub fn from_tag(tag: u8) -> Result<Self> {
        match tag {
            0 => Ok(PayloadKind::Data),
            1 => Ok(PayloadKind::Model),
            other => Err(Error::Transport(format!("unknown frame kind {other}"))),
        }
    }
}

/// Size bookkeeping for a coded payload.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PayloadMeta {
    Model { prune_level: f64, quant: QuantLevel },
    Data { window: usize, samples: usize },
}

/// A coded payload ready for the link.
#[derive(Debug, Clone, PartialEq)]
pub struct Payload {
    pub kind: PayloadKind,
    pub raw_bits: u64,
    pub coded_bits: u64,
    pub meta: PayloadMeta,
    pub bytes: Vec<u8>,
}

/// Checkpoint of a compressed model, lossless-coded.
pub fn model_payload(model: &DenseModel) -> Result<Payload> {
    let raw = serialize(model);
    let bytes = lossless_code(&raw)?;
    Ok(Payload {
        kind: PayloadKind::Model,
        raw_bits: 8 * raw.len() as u64,
        coded_bits: 8 * bytes.len() as u64,
        meta: PayloadMeta::Model {
            prune_level: model.compression().prune_level,
            quant: model.compression().quant,
        },
        bytes,
    })
}

pub fn decode_model_payload(bytes: &[u8]) -> Result<DenseModel> {
    deserialize(&lossless_decode(bytes)?)
}

/// Prunes then quantizes, the order the server applies before a downlink.
pub fn compress(model: &DenseModel, prune_level: f64, quant: QuantLevel, calibration: &[Vec<f64>]) -> Result<DenseModel> {
    quantize_calibrated(&prune(model, prune_level)?, quant, calibration)
}

/// Coded model size in bits for a compression setting.
pub fn measure_dl_bits(model: &DenseModel, prune_level: f64, quant: QuantLevel) -> Result<u64> {
    let compressed = quantize(&prune(model, prune_level)?, quant);
    Ok(8 * lossless_code(&serialize(&compressed))?.len() as u64)
}

/// Uplink block: `u32` sample count, `u32` feature count, then per sample a
/// `u32` index and `N` little-endian `f32` readings.
pub fn pack_samples(samples: &[(usize, &[f64])]) -> Result<Vec<u8>> {
    let n = samples.first().map(|(_, x)| x.len()).ok_or(Error::EmptyBatch)?;
    let mut buf = Vec::with_capacity(8 + samples.len() * (4 + 4 * n));
    buf.extend_from_slice(&(samples.len() as u32).to_le_bytes());
    buf.extend_from_slice(&(n as u32).to_le_bytes());
    for (index, x) in samples {
        if x.len() != n {
            return Err(Error::DimensionMismatch { expected: n, actual: x.len() });
        }
        buf.extend_from_slice(&(*index as u32).to_le_bytes());
        for &v in x.iter() {
            buf.extend_from_slice(&(v as f32).to_le_bytes());
        }
    }
    Ok(buf)
}

pub fn unpack_samples(bytes: &[u8]) -> Result<Vec<(usize, Vec<f64>)>> {
    let mut c = Cursor { bytes, pos: 0 };
    let count = c.u32()? as usize;
    let n = c.u32()? as usize;
    let mut out = Vec::with_capacity(count);
    for _ in 0..count {
        let index = c.u32()? as usize;
        let x = (0..n).map(|_| c.f32().map(f64::from)).collect::<Result<Vec<_>>>()?;
        out.push((index, x));
    }
    if c.pos != bytes.len() {
        return Err(Error::CorruptStream("trailing bytes in sample block".into()));
    }
    Ok(out)
}

/// Packs and codes an uplink event.
pub fn data_payload(samples: &[(usize, &[f64])], window: usize) -> Result<Payload> {
    let raw = pack_samples(samples)?;
    let bytes = lossless_code(&raw)?;
    Ok(Payload {
        kind: PayloadKind::Data,
        raw_bits: 8 * raw.len() as u64,
        coded_bits: 8 * bytes.len() as u64,
        meta: PayloadMeta::Data { window, samples: samples.len() },
        bytes,
    })
}

/// Pre-coding uplink size: `header + 32 * N * samples`.
pub fn uplink_bits(features: usize, sample_count: usize, header_bits: u64) -> u64 {
    header_bits + 32 * features as u64 * sample_count as u64
}

/// [`uplink_bits`] for a full `2W+1` window.
pub fn uplink_bits_for_window(window: usize, features: usize, header_bits: u64) -> u64 {
    uplink_bits(features, 2 * window + 1, header_bits)
}

/// Linear size model `bits = slope * x + intercept`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeModel {
    pub slope: f64,
    pub intercept: f64,
    /// Largest absolute residual over the fitted points.
    pub residual_max: f64,
}

impl SizeModel {
    pub fn predict(&self, x: f64) -> f64 {
        self.slope * x + self.intercept
    }
}

/// Ordinary least squares over `(x, bits)` points.
pub fn fit_size_model(points: &[(f64, f64)]) -> Result<SizeModel> {
    if points.len() < 2 {
        return Err(Error::DegenerateFit("need at least two points".into()));
    }
    let n = points.len() as f64;
    let mean_x = points.iter().map(|p| p.0).sum::<f64>() / n;
    let mean_y = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mean_x).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mean_x) * (p.1 - mean_y)).sum();
    if sxx <= 0.0 {
        return Err(Error::DegenerateFit("all x values identical".into()));
    }
    let slope = sxy / sxx;
    let intercept = mean_y - slope * mean_x;
    let residual_max = points
        .iter()
        .map(|p| (p.1 - (slope * p.0 + intercept)).abs())
        .fold(0.0, f64::max);
    Ok(SizeModel {
        slope,
        intercept,
        residual_max,
    })
}

/// One measured point of a model-size sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ModelSizePoint {
    pub prune_level: f64,
    pub quant: QuantLevel,
    pub raw_bits: u64,
    pub coded_bits: u64,
}

/// One measured point of a data-size sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DataSizePoint {
    pub window: usize,
    pub samples: usize,
    pub raw_bits: u64,
    pub coded_bits: u64,
}

/// Fitted size models for both directions. Fits are over bits on the wire,
/// so they include the per-message header.
#[derive(Debug, Clone, PartialEq)]
pub struct SizeCalibration {
    pub dl_q8: SizeModel,
    pub dl_q32: SizeModel,
    pub ul: SizeModel,
    pub header_bits: u64,
    pub model_points: Vec<ModelSizePoint>,
    pub data_points: Vec<DataSizePoint>,
}

impl SizeCalibration {
    pub fn downlink(&self, quant: QuantLevel) -> &SizeModel {
        match quant {
            QuantLevel::Q8 => &self.dl_q8,
            QuantLevel::Q32 => &self.dl_q32,
        }
    }
}

/// `{0, 0.1, ..., 1}`.
pub fn prune_grid() -> Vec<f64> {
    (0..=10).map(|k| k as f64 / 10.0).collect()
}

/// Measures coded model sizes over `prune_levels x {8, 32}`.
pub fn model_size_sweep(model: &DenseModel, prune_levels: &[f64]) -> Result<Vec<ModelSizePoint>> {
    let mut points = Vec::new();
    for quant in [QuantLevel::Q8, QuantLevel::Q32] {
        for &p in prune_levels {
            let compressed = quantize(&prune(model, p)?, quant);
            let raw = serialize(&compressed);
            points.push(ModelSizePoint {
                prune_level: p,
                quant,
                raw_bits: 8 * raw.len() as u64,
                coded_bits: 8 * lossless_code(&raw)?.len() as u64,
            });
        }
    }
    Ok(points)
}

/// Measures coded event sizes for windows `0, step, ..., w_max`, taking
/// windows at up to four evenly spaced centres of `samples`.
pub fn data_size_sweep(samples: &[Vec<f64>], w_max: usize, step: usize) -> Result<Vec<DataSizePoint>> {
    if samples.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut windows: Vec<usize> = (0..=w_max).step_by(step.max(1)).collect();
    if windows.last() != Some(&w_max) {
        windows.push(w_max);
    }
    let mut points = Vec::new();
    for w in windows {
        let width = (2 * w + 1).min(samples.len());
        let spare = samples.len() - width;
        let starts: Vec<usize> = if spare == 0 {
            vec![0]
        } else {
            (0..4).map(|i| i * spare / 3).collect()
        };
        for start in starts {
            let block: Vec<(usize, &[f64])> = (start..start + width)
                .map(|k| (k, samples[k].as_slice()))
                .collect();
            let raw = pack_samples(&block)?;
            points.push(DataSizePoint {
                window: w,
                samples: width,
                raw_bits: 8 * raw.len() as u64,
                coded_bits: 8 * lossless_code(&raw)?.len() as u64,
            });
        }
    }
    Ok(points)
}

/// Runs both sweeps and fits the three size models.
pub fn calibrate_sizes(
    model: &DenseModel,
    samples: &[Vec<f64>],
    w_max: usize,
    w_step: usize,
    header_bits: u64,
) -> Result<SizeCalibration> {
    let model_points = model_size_sweep(model, &prune_grid())?;
    let data_points = data_size_sweep(samples, w_max, w_step)?;
    let header = header_bits as f64;
    let fit_dl = |quant| {
        let pts: Vec<(f64, f64)> = model_points
            .iter()
            .filter(|p| p.quant == quant)
            .map(|p| (p.prune_level, p.coded_bits as f64 + header))
            .collect();
        fit_size_model(&pts)
    };
    let ul_points: Vec<(f64, f64)> = data_points
        .iter()
        .map(|p| (p.window as f64, p.coded_bits as f64 + header))
        .collect();
    Ok(SizeCalibration {
        dl_q8: fit_dl(QuantLevel::Q8)?,
        dl_q32: fit_dl(QuantLevel::Q32)?,
        ul: fit_size_model(&ul_points)?,
        header_bits,
        model_points,
        data_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn single_layer(weights: Vec<f64>) -> DenseModel {
        let n = weights.len();
        DenseModel::from_parts(&[n, 1], Head::Classifier, vec![(weights, vec![0.25])]).unwrap()
    }

    #[test]
    fn prune_examples() {
        let m = single_layer(vec![0.1, -0.2, 0.3, -0.05]);
        let p = prune(&m, 0.5).unwrap();
        let expect = single_layer(vec![0.0, -0.2, 0.3, 0.0]);
        assert_eq!(p.layers()[0].weights(), expect.layers()[0].weights());
        assert_eq!(p.layers()[0].biases(), m.layers()[0].biases());
        assert_eq!(p.compression().prune_level, 0.5);

        assert_eq!(prune(&m, 0.0).unwrap().layers(), m.layers());
        let all = prune(&m, 1.0).unwrap();
        assert!(all.layers()[0].weights().iter().all(|w| *w == 0.0));
        assert!(prune(&m, 1.5).is_err());
    }

    #[test]
    fn prune_is_idempotent() {
        let m = DenseModel::new(&[6, 5, 6], Head::Autoencoder, 3).unwrap();
        for p in [0.0, 0.3, 0.77, 1.0] {
            let once = prune(&m, p).unwrap();
            assert_eq!(prune(&once, p).unwrap(), once);
        }
    }

    #[test]
    fn quantize_grid_points_are_fixed() {
        let m = single_layer(vec![-1.0, 0.0, 1.0]);
        let q = quantize(&m, QuantLevel::Q8);
        let (ws, _) = q.layers()[0].steps.unwrap();
        assert_eq!(ws, (1.0f64 / 127.0) as f32);
        assert_eq!(q.layers()[0].weights(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn quantize_32_is_identity_and_8_is_idempotent() {
        let m = DenseModel::new(&[5, 4, 5], Head::Autoencoder, 11).unwrap();
        assert_eq!(quantize(&m, QuantLevel::Q32), m);
        let q = quantize(&m, QuantLevel::Q8);
        assert_eq!(quantize(&q, QuantLevel::Q8), q);
    }

    #[test]
    fn quantization_error_is_within_half_step() {
        let m = DenseModel::new(&[7, 9, 7], Head::Autoencoder, 2).unwrap();
        let q = quantize(&m, QuantLevel::Q8);
        for (a, b) in m.layers().iter().zip(q.layers()) {
            let (ws, _) = b.steps.unwrap();
            let half = ws as f64 / 2.0 * (1.0 + 1e-6);
            for (x, y) in a.weights().iter().zip(b.weights()) {
                assert!((x - y).abs() <= half, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn checkpoint_round_trips_at_both_levels() {
        let mut m = DenseModel::new(&[6, 4, 2, 4, 6], Head::Autoencoder, 5).unwrap();
        m.set_e_ref(0.0123).unwrap();
        assert_eq!(deserialize(&serialize(&m)).unwrap(), m);
        let calib: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64 / 10.0; 6]).collect();
        let q = compress(&m, 0.4, QuantLevel::Q8, &calib).unwrap();
        assert!(q.activation_steps().is_some());
        assert_eq!(deserialize(&serialize(&q)).unwrap(), q);
        assert_eq!(serialize(&q), serialize(&q.clone()));
    }

    #[test]
    fn checkpoint_rejects_garbage() {
        assert!(deserialize(b"nope").is_err());
        let mut bytes = serialize(&DenseModel::new(&[2, 2, 2], Head::Autoencoder, 1).unwrap());
        bytes.push(0);
        assert!(deserialize(&bytes).is_err());
        // a model with a single dimension (no layer) is refused
        let mut empty = Vec::from(&MAGIC[..]);
        empty.extend_from_slice(&[VERSION, 0, 32]);
        empty.extend_from_slice(&1u16.to_le_bytes());
        empty.extend_from_slice(&4u32.to_le_bytes());
        empty.extend_from_slice(&0f64.to_le_bytes());
        empty.extend_from_slice(&0f64.to_le_bytes());
        empty.push(0);
        assert!(matches!(deserialize(&empty), Err(Error::Checkpoint(_))));
    }

    #[test]
    fn codec_behaviour() {
        let zeros = vec![0u8; 10_000];
        let coded = lossless_code(&zeros).unwrap();
        assert!(coded.len() < 1000);
        assert_eq!(coded[0], CODEC_DEFLATE);
        assert_eq!(lossless_decode(&coded).unwrap(), zeros);
        assert!(lossless_code(&[]).is_err());
        assert!(lossless_decode(&[9, 1, 2]).is_err());
        assert!(lossless_decode(&[CODEC_DEFLATE, 0xff, 0xff, 0xff]).is_err());
    }

    #[test]
    fn pruned_models_code_smaller() {
        let m = DenseModel::new(&[50, 64, 16, 64, 50], Head::Autoencoder, 1).unwrap();
        for q in [QuantLevel::Q8, QuantLevel::Q32] {
            assert!(measure_dl_bits(&m, 0.5, q).unwrap() < measure_dl_bits(&m, 0.0, q).unwrap());
        }
        assert!(measure_dl_bits(&m, 0.0, QuantLevel::Q8).unwrap() < measure_dl_bits(&m, 0.0, QuantLevel::Q32).unwrap());
        // everything pruned: only header, biases and runs of zeros remain
        let full = measure_dl_bits(&m, 0.0, QuantLevel::Q32).unwrap();
        assert!(measure_dl_bits(&m, 1.0, QuantLevel::Q32).unwrap() * 20 < full);
    }

    #[test]
    fn uplink_formula() {
        assert_eq!(uplink_bits_for_window(200, 50, 0), 641_600);
        assert_eq!(uplink_bits_for_window(0, 1, 0), 32);
        assert_eq!(uplink_bits_for_window(0, 1, 512), 544);
    }

    #[test]
    fn sample_block_round_trip() {
        let a = [0.25, 0.5];
        let b = [1.0, -2.0];
        let bytes = pack_samples(&[(3, &a[..]), (4, &b[..])]).unwrap();
        assert_eq!(bytes.len(), 8 + 2 * (4 + 8));
        let back = unpack_samples(&bytes).unwrap();
        assert_eq!(back, vec![(3, a.to_vec()), (4, b.to_vec())]);
        assert!(pack_samples(&[]).is_err());
    }

    #[test]
    fn two_point_fit_is_exact() {
        let m = fit_size_model(&[(0.0, 7.0), (1.0, 7.0 - 3.0)]).unwrap();
        assert_eq!((m.slope, m.intercept, m.residual_max), (-3.0, 7.0, 0.0));
        let m = fit_size_model(&[(0.0, 1.0), (1.0, 3.0), (2.0, 5.0), (2.0, 5.0)]).unwrap();
        assert!((m.slope - 2.0).abs() < 1e-12 && (m.intercept - 1.0).abs() < 1e-12);
        assert!(fit_size_model(&[(1.0, 2.0), (1.0, 3.0)]).is_err());
        assert!(fit_size_model(&[(1.0, 2.0)]).is_err());
    }

    /// Normal equations `[n Σx; Σx Σx²] β = [Σy; Σxy]` solved by Cramer's
    /// rule, independent of the centred formulation.
    fn normal_equations(points: &[(f64, f64)]) -> (f64, f64) {
        let n = points.len() as f64;
        let sx: f64 = points.iter().map(|p| p.0).sum();
        let sxx: f64 = points.iter().map(|p| p.0 * p.0).sum();
        let sy: f64 = points.iter().map(|p| p.1).sum();
        let sxy: f64 = points.iter().map(|p| p.0 * p.1).sum();
        let det = n * sxx - sx * sx;
        let intercept = (sy * sxx - sx * sxy) / det;
        let slope = (n * sxy - sx * sy) / det;
        (slope, intercept)
    }

    proptest! {
        #[test]
        fn ols_matches_normal_equations(
            pts in proptest::collection::vec((0.0f64..1.0, -1e6f64..1e6), 3..40)
        ) {
            let spread = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max)
                - pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
            prop_assume!(spread > 1e-3);
            let fit = fit_size_model(&pts).unwrap();
            let (slope, intercept) = normal_equations(&pts);
            let scale = 1e6f64.max(slope.abs());
            prop_assert!((fit.slope - slope).abs() <= 1e-9 * scale);
            prop_assert!((fit.intercept - intercept).abs() <= 1e-9 * 1e6f64.max(intercept.abs()));
        }

        #[test]
        fn codec_round_trips(bytes in proptest::collection::vec(any::<u8>(), 1..4096)) {
            prop_assert_eq!(lossless_decode(&lossless_code(&bytes).unwrap()).unwrap(), bytes);
        }
    }
}
