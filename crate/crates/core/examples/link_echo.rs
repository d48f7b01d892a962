//! Sends frames over a simulated link and over a loopback TCP echo server,
//! and prints the delivery times and rate estimates.
//!
//! ```text
//! cargo run --release --example link_echo -- [PAYLOAD_BYTES]
//! ```

use std::net::TcpListener;

use acord::compression::PayloadKind;
use acord::link::{serve_echo, Bandwidth, LinkEstimate, SimulatedTransport, SocketTransport, Transport, DEFAULT_HEADER_BITS};

fn main() -> acord::Result<()> {
    let size: usize = std::env::args().nth(1).map_or(Ok(20_000), |s| s.parse()).expect("payload size");
    let payload: Vec<u8> = (0..size).map(|i| (i * 31 % 256) as u8).collect();

    let schedule = Bandwidth::Schedule(vec![1e6, 2.5e5, 1e5]);
    let mut sim = SimulatedTransport::new(schedule, DEFAULT_HEADER_BITS)?;
    let mut estimate = LinkEstimate::new(1e6);
    for round in 1..=4 {
        sim.begin_round(round);
        let d = sim.send(PayloadKind::Data, &payload, None)?;
        estimate.update(d.bits, d.elapsed, round)?;
        println!(
            "simulated round {round}: {} bits in {:.4} s, estimate {:.0} bit/s",
            d.bits,
            d.elapsed,
            estimate.uplink_rate()
        );
    }
    sim.begin_round(5);
    let capped = sim.send(PayloadKind::Model, &payload, Some(0.05))?;
    println!("capped at 0.05 s: completed {}, elapsed {:.4}", capped.completed, capped.elapsed);

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let server = serve_echo(listener, 1);
    let mut socket = SocketTransport::connect(addr)?;
    for round in 1..=3 {
        socket.begin_round(round);
        let d = socket.send(PayloadKind::Data, &payload, None)?;
        assert_eq!(d.payload, payload);
        println!(
            "socket round {round}: {} bits echoed in {:.6} s ({:.3e} bit/s)",
            d.bits,
            d.elapsed,
            d.bits as f64 / d.elapsed
        );
    }
    drop(socket);
    server.join().expect("echo thread")?;
    Ok(())
}
