//! Link timing, rate estimation and transports.
//!
//! Frames on a byte stream are `[kind: u8][len: u32 big-endian][payload]`.

use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream, ToSocketAddrs};
use std::thread::JoinHandle;
use std::time::Instant;

use crate::compression::PayloadKind;
use crate::error::{Error, Result};

/// Largest payload a frame may carry.
pub const MAX_FRAME_PAYLOAD: usize = 1 << 31;

/// Default per-message protocol overhead, bits.
pub const DEFAULT_HEADER_BITS: u64 = 512;

/// `bits / rate`.
pub fn transmission_time(bits: u64, rate: f64) -> Result<f64> {
    if !(rate > 0.0) {
        return Err(Error::InvalidArgument(format!("rate must be positive, got {rate}")));
    }
    Ok(bits as f64 / rate)
}

/// `bits / elapsed`.
pub fn estimate_rate(bits: u64, elapsed: f64) -> Result<f64> {
    if !(elapsed > 0.0) {
        return Err(Error::InvalidArgument(format!("elapsed time must be positive, got {elapsed}")));
    }
    Ok(bits as f64 / elapsed)
}

/// Shared estimate of the achievable rate in both directions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LinkEstimate {
    rate: f64,
    measured_in: Option<usize>,
}

impl LinkEstimate {
    pub fn new(initial_rate: f64) -> Self {
        Self {
            rate: initial_rate,
            measured_in: None,
        }
    }

    pub fn uplink_rate(&self) -> f64 {
        self.rate
    }

    pub fn downlink_rate(&self) -> f64 {
        self.rate
    }

    /// Round of the last measurement, if any.
    pub fn measured_in(&self) -> Option<usize> {
        self.measured_in
    }

    /// Replaces the estimate with the rate observed on a delivery.
    pub fn update(&mut self, bits: u64, elapsed: f64, round: usize) -> Result<f64> {
        self.rate = estimate_rate(bits, elapsed)?;
        self.measured_in = Some(round);
        Ok(self.rate)
    }
}

pub fn encode_frame(kind: PayloadKind, payload: &[u8]) -> Result<Vec<u8>> {
    if payload.len() > MAX_FRAME_PAYLOAD {
        return Err(Error::OversizeFrame(payload.len()));
    }
    let mut out = Vec::with_capacity(5 + payload.len());
    out.push(kind.tag());
    out.extend_from_slice(&(payload.len() as u32).to_be_bytes());
    out.extend_from_slice(payload);
    Ok(out)
}

pub fn write_frame<W: Write>(w: &mut W, kind: PayloadKind, payload: &[u8]) -> Result<()> {
    w.write_all(&encode_frame(kind, payload)?)?;
    w.flush()?;
    Ok(())
}

/// Reads one frame; `None` on a clean end of stream.
pub fn read_frame<R: Read>(r: &mut R) -> Result<Option<(PayloadKind, Vec<u8>)>> {
    let mut head = [0u8; 5];
    match r.read_exact(&mut head[..1]) {
        Ok(()) => {}
        Err(e) if e.kind() == std::io::ErrorKind::UnexpectedEof => return Ok(None),
        Err(e) => return Err(e.into()),
    }
    r.read_exact(&mut head[1..])
        .map_err(|e| Error::Transport(format!("truncated frame header: {e}")))?;
    let kind = PayloadKind::from_tag(head[0])?;
    let len = u32::from_be_bytes(head[1..].try_into().unwrap()) as usize;
    if len > MAX_FRAME_PAYLOAD {
        return Err(Error::OversizeFrame(len));
    }
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)
        .map_err(|e| Error::Transport(format!("truncated frame payload: {e}")))?;
    Ok(Some((kind, payload)))
}

/// Outcome of one transmission.
#[derive(Debug, Clone, PartialEq)]
pub struct Delivery {
    /// Seconds the radio was busy.
    pub elapsed: f64,
    /// Bits counted on the wire, header included.
    pub bits: u64,
    /// Bytes that arrived at the far end; empty when cut short.
    pub payload: Vec<u8>,
    /// `false` when the time cap ended the transmission early.
    pub completed: bool,
}

/// Something that carries payloads between device and server.
pub trait Transport {
    /// Called once at the start of each round.
    fn begin_round(&mut self, _round: usize) {}

    /// Sends `payload`. With `time_cap`, a transmission that would take
    /// longer is abandoned once the cap is reached.
    fn send(&mut self, kind: PayloadKind, payload: &[u8], time_cap: Option<f64>) -> Result<Delivery>;
}

/// Bandwidth seen by the simulated link.
#[derive(Debug, Clone, PartialEq)]
pub enum Bandwidth {
    Constant(f64),
    /// Per-round values; the last one holds after the schedule runs out.
    Schedule(Vec<f64>),
}

impl Bandwidth {
    pub fn at_round(&self, round: usize) -> f64 {
        match self {
            Bandwidth::Constant(b) => *b,
            Bandwidth::Schedule(v) => v[round.saturating_sub(1).min(v.len() - 1)],
        }
    }
}

/// Deterministic link: `elapsed = (header + 8 * bytes) / bandwidth` on a
/// virtual clock.
#[derive(Debug, Clone)]
pub struct SimulatedTransport {
    bandwidth: Bandwidth,
    header_bits: u64,
    round: usize,
    clock: f64,
}

impl SimulatedTransport {
    pub fn new(bandwidth: Bandwidth, header_bits: u64) -> Result<Self> {
        let ok = match &bandwidth {
            Bandwidth::Constant(b) => *b > 0.0,
            Bandwidth::Schedule(v) => !v.is_empty() && v.iter().all(|b| *b > 0.0),
        };
        if !ok {
            return Err(Error::InvalidArgument("bandwidth must be positive".into()));
        }
        Ok(Self {
            bandwidth,
            header_bits,
            round: 1,
            clock: 0.0,
        })
    }

    pub fn constant(bits_per_second: f64) -> Result<Self> {
        Self::new(Bandwidth::Constant(bits_per_second), DEFAULT_HEADER_BITS)
    }

    /// Total simulated transmit time so far.
    pub fn clock(&self) -> f64 {
        self.clock
    }
}

impl Transport for SimulatedTransport {
    fn begin_round(&mut self, round: usize) {
        self.round = round;
    }

    fn send(&mut self, _kind: PayloadKind, payload: &[u8], time_cap: Option<f64>) -> Result<Delivery> {
        if payload.len() > MAX_FRAME_PAYLOAD {
            return Err(Error::OversizeFrame(payload.len()));
        }
        let bits = self.header_bits + 8 * payload.len() as u64;
        let elapsed = transmission_time(bits, self.bandwidth.at_round(self.round))?;
        let delivery = match time_cap {
            Some(cap) if elapsed > cap => Delivery {
                elapsed: cap.max(0.0),
                bits,
                payload: Vec::new(),
                completed: false,
            },
            _ => Delivery {
                elapsed,
                bits,
                payload: payload.to_vec(),
                completed: true,
            },
        };
        self.clock += delivery.elapsed;
        Ok(delivery)
    }
}

/// Sends frames to a peer that echoes them back; elapsed time is wall
/// clock for the round trip.
pub struct SocketTransport {
    stream: TcpStream,
}

impl SocketTransport {
    pub fn connect<A: ToSocketAddrs>(addr: A) -> Result<Self> {
        let stream = TcpStream::connect(addr).map_err(|e| Error::Transport(e.to_string()))?;
        stream.set_nodelay(true)?;
        Ok(Self { stream })
    }
}

impl Transport for SocketTransport {
    fn send(&mut self, kind: PayloadKind, payload: &[u8], time_cap: Option<f64>) -> Result<Delivery> {
        let frame = encode_frame(kind, payload)?;
        let start = Instant::now();
        self.stream
            .write_all(&frame)
            .map_err(|e| Error::Transport(e.to_string()))?;
        let (back_kind, back) = read_frame(&mut self.stream)?
            .ok_or_else(|| Error::Transport("peer closed the connection".into()))?;
        let elapsed = start.elapsed().as_secs_f64();
        if back_kind != kind || back != payload {
            return Err(Error::Transport("echo does not match the frame sent".into()));
        }
        let bits = 8 * frame.len() as u64;
        Ok(match time_cap {
            Some(cap) if elapsed > cap => Delivery {
                elapsed: cap.max(0.0),
                bits,
                payload: Vec::new(),
                completed: false,
            },
            _ => Delivery {
                elapsed,
                bits,
                payload: back,
                completed: true,
            },
        })
    }
}

/// Echoes every frame on each accepted connection until the peer hangs up.
/// Serves `connections` clients, then returns.
pub fn serve_echo(listener: TcpListener, connections: usize) -> JoinHandle<Result<()>> {
    std::thread::spawn(move || {
        for stream in listener.incoming().take(connections) {
            let mut stream = stream?;
            stream.set_nodelay(true)?;
            while let Some((kind, payload)) = read_frame(&mut stream)? {
                write_frame(&mut stream, kind, &payload)?;
            }
        }
        Ok(())
    })
}
