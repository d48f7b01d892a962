use std::net::TcpListener;

use acord::experiment::{simulate, ExperimentConfig, Scenario, TauSetting};
use acord::compression::PayloadKind;
use acord::link::{serve_echo, SocketTransport, Transport};
use acord::model::Head;
use acord::runtime::{Policy, Simulation};

#[test]
fn echo_returns_the_payload() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = serve_echo(listener, 1);
    let mut link = SocketTransport::connect(addr).unwrap();
    link.begin_round(1);
    let payload: Vec<u8> = (0..10_000u32).map(|i| (i % 251) as u8).collect();
    let d = link.send(PayloadKind::Data, &payload, None).unwrap();
    assert!(d.completed);
    assert_eq!(d.payload, payload);
    assert!(d.elapsed > 0.0);
    drop(link);
    server.join().unwrap().unwrap();
}

#[test]
fn fast_socket_link_matches_fast_simulated_link() {
    let mut config = ExperimentConfig::default();
    config.synth.length = 1500;
    config.initial_epochs = 5;
    config.tau = TauSetting::Fixed(0.4);
    let scenario = Scenario::build(&config, 2).unwrap();
    let run = config.run_config(1e9, 0.4);

    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let server = serve_echo(listener, 1);
    let link = SocketTransport::connect(addr).unwrap();
    let (model, sizes) = scenario.detector(Head::Autoencoder);
    let over_socket = Simulation::new(Policy::Hawk, &run, &scenario.data.test, model, sizes, link, 4)
        .unwrap()
        .run()
        .unwrap();
    server.join().unwrap().unwrap();

    let simulated = simulate(&scenario, Head::Autoencoder, Policy::Hawk, &run, 1e12, config.header_bits, 4).unwrap();
    assert_eq!(over_socket.predictions, simulated.predictions);
    assert_eq!(over_socket.rehearsal, simulated.rehearsal);
    assert!(over_socket.metrics.rounds > 0);
}
