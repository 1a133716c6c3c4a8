//! Encode reals into the share field, multiply, truncate, and split into
//! additive shares.

use hermite_pi::beaver::truncate_share;
use hermite_pi::field::{FieldParams, FixedPointCodec};
use hermite_pi::sharing::{reconstruct, share, PartyId, Share};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> anyhow::Result<()> {
    let params = FieldParams::default();
    let codec = FixedPointCodec::new(params);
    println!(
        "p = {} ({} bits), f = {}, safe range +-{}",
        params.modulus(),
        64 - params.modulus().leading_zeros(),
        params.frac_bits(),
        codec.safe_range()
    );

    for x in [1.5, -0.3, 2.71, -1000.0] {
        let e = codec.encode(x)?;
        println!("{x:>10} -> {:>14} -> {}", e.value(), codec.decode(e));
    }

    let (a, b) = (codec.encode(-2.25)?, codec.encode(1.5)?);
    let prod = a * b;
    println!("-2.25 * 1.5 at scale 2f: {}", codec.decode_double(prod));
    println!("after plaintext truncation: {}", codec.decode(codec.truncate(prod)));

    // Truncate the same product share-wise: each party shifts its own share.
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let (c, s) = share(prod, &mut rng);
    let f = params.frac_bits();
    let t = reconstruct(
        Share::new(PartyId::Client, truncate_share(PartyId::Client, c.value, f)),
        Share::new(PartyId::Server, truncate_share(PartyId::Server, s.value, f)),
    )?;
    println!("after share truncation: {} (client share {})", codec.decode(t), c.value.value());
    Ok(())
}
