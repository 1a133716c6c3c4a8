//! Client and server as separate threads over localhost TCP, each loading its
//! own offline material from disk the way the command-line tool does.

use hermite_pi::field::{FieldParams, FixedPointCodec};
use hermite_pi::nn::fixed::quantize;
use hermite_pi::nn::{forward_float, zoo};
use hermite_pi::protocol::{offline_phase, run_client, run_server, OfflineMaterial, SessionConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

fn main() -> anyhow::Result<()> {
    let dir = std::env::temp_dir().join(format!("hermite-pi-tcp-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let model = zoo::calibrated(zoo::mlp3(2, 16, 2, 7), 64, 4.0, 1);
    let q = quantize(&model, &FixedPointCodec::new(FieldParams::default()))?;

    let (cm, sm, _) = offline_phase(&q, &mut ChaCha20Rng::seed_from_u64(5))?;
    for (m, name) in [(&cm, "client.bin"), (&sm, "server.bin")] {
        let mut w = BufWriter::new(File::create(dir.join(name))?);
        m.write_to(&mut w)?;
        w.flush()?;
        println!("{name}: {} field elements", m.elements());
    }
    let load = |name: &str| -> anyhow::Result<OfflineMaterial> {
        Ok(OfflineMaterial::read_from(&mut BufReader::new(File::open(dir.join(name))?))?)
    };

    let listener = TcpListener::bind("127.0.0.1:0")?;
    let addr = listener.local_addr()?;
    let server_material = load("server.bin")?;
    let server_q = q.clone();
    let server = thread::spawn(move || -> anyhow::Result<u64> {
        let (stream, _) = listener.accept()?;
        stream.set_nodelay(true)?;
        let run = run_server(&server_q, server_material, stream, SessionConfig::default())?;
        Ok(run.transcript.total_bytes_sent(hermite_pi::meter::Phase::Online))
    });

    let x = zoo::Init::new(11).uniform(&model.input_shape, 4.0);
    let stream = TcpStream::connect(addr)?;
    stream.set_nodelay(true)?;
    let run = run_client(&q.public_view(), load("client.bin")?, &x, stream, SessionConfig::default())?;
    let server_bytes = server.join().expect("server thread")?;

    let y = run.output.expect("client output");
    println!("input  {:?}", x.data());
    println!("output {:?}", y.data());
    println!("float  {:?}", forward_float(&model, &x)?.data());
    println!(
        "online bytes: client {}, server {}",
        run.transcript.total_bytes_sent(hermite_pi::meter::Phase::Online),
        server_bytes
    );
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
