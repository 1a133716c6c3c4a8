use hermite_pi::beaver::truncate_share;
use hermite_pi::field::{FieldElement, FieldParams, FixedPointCodec};
use hermite_pi::herpn::{fold_to_quadratic, herpn_forward_infer, HerPNParams, Normalization};
use hermite_pi::sharing::{reconstruct, share, PartyId, Share};
use hermite_pi::tensor::Tensor;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

const P: u64 = 2061584302081;

proptest! {
    #[test]
    fn field_ops_match_wide_integers(a in 0..P, b in 0..P) {
        let (fa, fb) = (FieldElement::new(a, P), FieldElement::new(b, P));
        let (wa, wb, wp) = (a as u128, b as u128, P as u128);
        prop_assert_eq!((fa + fb).value() as u128, (wa + wb) % wp);
        prop_assert_eq!((fa - fb).value() as u128, (wa + wp - wb) % wp);
        prop_assert_eq!((fa * fb).value() as u128, wa * wb % wp);
        prop_assert_eq!((fa + (-fa)).value(), 0);
    }

    #[test]
    fn codec_round_trips_to_the_nearest_lsb(x in -1.0e6..1.0e6f64) {
        let c = FixedPointCodec::new(FieldParams::default());
        let back = c.decode(c.encode(x).unwrap());
        prop_assert_eq!(back, (x * 2048.0).round() / 2048.0);
    }

    #[test]
    fn shares_reconstruct_and_truncate_within_one_lsb(v in -(1i64 << 30)..(1i64 << 30), seed: u64) {
        let params = FieldParams::default();
        let x = params.from_signed(v as i128);
        let (c, s) = share(x, &mut ChaCha20Rng::seed_from_u64(seed));
        prop_assert_eq!(c.value + s.value, x);
        let t = reconstruct(
            Share::new(PartyId::Client, truncate_share(PartyId::Client, c.value, 11)),
            Share::new(PartyId::Server, truncate_share(PartyId::Server, s.value, 11)),
        ).unwrap();
        let got = t.to_signed();
        // Off by one LSB, or wrapped when the client share straddles zero.
        let wrapped = c.value.value() < (1 << 32) || c.value.value() > P - (1 << 32);
        prop_assert!((got - (v >> 11)).abs() <= 1 || wrapped, "{} vs {}", got, v >> 11);
    }

    #[test]
    fn folded_quadratic_equals_inference_herpn(
        mean in prop::collection::vec(-2.0..2.0f64, 3),
        var in prop::collection::vec(0.1..4.0f64, 3),
        gamma in -2.0..2.0f64,
        beta in -1.0..1.0f64,
        x in -5.0..5.0f64,
    ) {
        let mut p = HerPNParams::with_degree(1, 2, Normalization::BasisWise).unwrap();
        p.gamma = vec![gamma];
        p.beta = vec![beta];
        // The constant basis keeps its pinned statistics.
        let (m0, v0) = (p.running_mean[0], p.running_var[0]);
        p.set_stats(vec![m0, mean[1], mean[2]], vec![v0, var[1], var[2]]);
        let q = fold_to_quadratic(&p).unwrap();
        let y = herpn_forward_infer(&Tensor::new(vec![1, 1], vec![x]).unwrap(), &p).unwrap();
        prop_assert!((q.eval(0, x) - y.data()[0]).abs() <= 1e-9 * (1.0 + y.data()[0].abs()));
    }
}
