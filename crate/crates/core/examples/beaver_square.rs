//! One secure squaring between two threads over an in-memory pipe, with the
//! bytes each party sent.

use hermite_pi::beaver::{deal_triples, secure_square, TripleKind};
use hermite_pi::field::{FieldParams, FixedPointCodec};
use hermite_pi::meter::{CommMeter, Phase};
use hermite_pi::sharing::{share, PartyId};
use hermite_pi::wire::{duplex, Channel};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use std::thread;

fn main() -> anyhow::Result<()> {
    let params = FieldParams::default();
    let codec = FixedPointCodec::new(params);
    let mut rng = ChaCha20Rng::seed_from_u64(1);

    let xs = [0.75, -1.5, 2.0];
    let mut client_x = Vec::new();
    let mut server_x = Vec::new();
    for &x in &xs {
        let (c, s) = share(codec.encode(x)?, &mut rng);
        client_x.push(c.value);
        server_x.push(s.value);
    }
    let (mut tc, mut ts) = deal_triples(TripleKind::Square, xs.len(), params, &mut rng);

    let (a, b) = duplex();
    let server = thread::spawn(move || {
        let mut ch = Channel::new(b, CommMeter::new(PartyId::Server));
        ch.enter_step(Phase::Online, 0, "square");
        let z = secure_square(PartyId::Server, &server_x, &mut ts, &mut ch).expect("server square");
        (z, ch.into_parts().1.transcript())
    });
    let mut ch = Channel::new(a, CommMeter::new(PartyId::Client));
    ch.enter_step(Phase::Online, 0, "square");
    let zc = secure_square(PartyId::Client, &client_x, &mut tc, &mut ch)?;
    let (zs, st) = server.join().expect("server thread");
    let ct = ch.into_parts().1.transcript();

    for (i, &x) in xs.iter().enumerate() {
        println!("{x:>6}^2 = {}", codec.decode_double(zc[i] + zs[i]));
    }
    println!(
        "client sent {} bytes, server sent {} bytes (5-byte header + 8 per element)",
        ct.party_bytes_sent(Phase::Online, PartyId::Client),
        st.party_bytes_sent(Phase::Online, PartyId::Server)
    );
    Ok(())
}
