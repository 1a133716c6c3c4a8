//! Full two-party inference of CNN-6 over an in-memory pipe, compared with
//! the plaintext float and fixed-point references.

use hermite_pi::field::{FieldParams, FixedPointCodec};
use hermite_pi::meter::Phase;
use hermite_pi::nn::fixed::{forward_fixed, quantize};
use hermite_pi::nn::{forward_float, zoo};
use hermite_pi::protocol::{analytic_online_bytes, loopback_run, SessionConfig};
use hermite_pi::sharing::PartyId;

fn main() -> anyhow::Result<()> {
    let model = zoo::calibrated(zoo::cnn6(0), 64, 1.0, 1);
    let q = quantize(&model, &FixedPointCodec::new(FieldParams::default()))?;
    let x = zoo::Init::new(42).uniform(&model.input_shape, 1.0);

    let run = loopback_run(&q, &x, 0xdea1, SessionConfig::default())?;
    println!(
        "dealer: {} triples, {} unguarded truncations",
        run.audit.triples(),
        run.audit.unguarded()
    );
    let (y, values, transcript) = run.into_result()?;
    let float = forward_float(&model, &x)?;
    let fixed = forward_fixed(&q, &x)?;
    println!("protocol {:?}", y.data());
    println!("float    {:?}", float.data());
    println!("max |protocol - float| = {:.4}", y.max_abs_diff(&float));
    for (i, (a, b)) in values.iter().zip(&fixed.values).enumerate() {
        println!("  output {i}: protocol - fixed = {:+} LSB (budget {})", a - b, fixed.budget[i]);
    }

    println!("\n{:>4} {:<10} {:>8} {:>8}", "step", "op", "client", "server");
    for s in analytic_online_bytes(&q) {
        let (c, sv) = (
            transcript.step_bytes(Phase::Online, s.step, PartyId::Client),
            transcript.step_bytes(Phase::Online, s.step, PartyId::Server),
        );
        assert_eq!((c, sv), (s.client, s.server));
        println!("{:>4} {:<10} {:>8} {:>8}", s.step, s.label, c, sv);
    }
    println!("online total {} bytes", transcript.total_bytes_sent(Phase::Online));
    Ok(())
}
