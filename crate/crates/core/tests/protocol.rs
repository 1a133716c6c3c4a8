use hermite_pi::beaver::{deal_triples, TripleKind};
use hermite_pi::field::{FieldElement, FieldParams, FixedPointCodec};
use hermite_pi::herpn::HerPNParams;
use hermite_pi::meter::{CommMeter, Phase};
use hermite_pi::nn::fixed::{forward_fixed, quantize, Op, QuantizedModel};
use hermite_pi::nn::{zoo, LayerSpec, ModelGraph};
use hermite_pi::protocol::{
    analytic_online_bytes, loopback_run, masked_linear, offline_phase, run_pair, secure_quadratic,
    tcp_run, OfflineMaterial, ProtocolError, SessionConfig,
};
use hermite_pi::sharing::PartyId;
use hermite_pi::tensor::Tensor;
use hermite_pi::wire::{duplex, Channel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::thread;

fn codec() -> FixedPointCodec {
    FixedPointCodec::new(FieldParams::default())
}

fn mlp() -> (ModelGraph, QuantizedModel) {
    let m = zoo::calibrated(zoo::mlp3(2, 16, 2, 7), 64, 4.0, 1);
    let q = quantize(&m, &codec()).unwrap();
    (m, q)
}

fn sample(shape: &[usize], r: f64, seed: u64) -> Tensor {
    zoo::Init::new(seed).uniform(shape, r)
}

#[test]
fn loopback_matches_fixed_reference() {
    let (m, q) = mlp();
    for seed in 0..10 {
        let x = sample(&m.input_shape, 4.0, 100 + seed);
        let fixed = forward_fixed(&q, &x).unwrap();
        let (_, values, _) = loopback_run(&q, &x, seed, SessionConfig::default())
            .unwrap()
            .into_result()
            .unwrap();
        for ((a, b), budget) in values.iter().zip(&fixed.values).zip(&fixed.budget) {
            assert!((a - b).unsigned_abs() <= *budget, "{a} vs {b} (budget {budget})");
        }
    }
}

#[test]
fn transports_are_byte_identical_and_deterministic() {
    let (m, q) = mlp();
    let x = sample(&m.input_shape, 4.0, 5);
    let a = loopback_run(&q, &x, 9, SessionConfig::default()).unwrap().into_result().unwrap();
    let b = tcp_run(&q, &x, 9, SessionConfig::default()).unwrap().into_result().unwrap();
    let c = loopback_run(&q, &x, 9, SessionConfig::default()).unwrap().into_result().unwrap();
    assert_eq!(a.2.fingerprint(), b.2.fingerprint());
    assert_eq!(a.2.fingerprint(), c.2.fingerprint());
    assert_eq!(a.1, b.1);
    let d = loopback_run(&q, &x, 10, SessionConfig::default()).unwrap().into_result().unwrap();
    assert_ne!(a.2.fingerprint(), d.2.fingerprint());
}

#[test]
fn metered_bytes_equal_the_closed_form() {
    let m = zoo::calibrated(zoo::cnn6(1), 16, 1.0, 2);
    let q = quantize(&m, &codec()).unwrap();
    let x = sample(&m.input_shape, 1.0, 3);
    let (_, _, t) = loopback_run(&q, &x, 1, SessionConfig::default()).unwrap().into_result().unwrap();
    for s in analytic_online_bytes(&q) {
        assert_eq!(t.step_bytes(Phase::Online, s.step, PartyId::Client), s.client, "{s:?}");
        assert_eq!(t.step_bytes(Phase::Online, s.step, PartyId::Server), s.server, "{s:?}");
        if matches!(s.label, "dense" | "conv" | "avgpool") {
            assert_eq!(s.client + s.server, 0);
        }
    }
}

#[test]
fn abort_is_reported_by_both_parties() {
    let (m, q) = mlp();
    let x = sample(&m.input_shape, 1.0, 1);
    for step in 0..q.program.len() + 1 {
        for party in [PartyId::Client, PartyId::Server] {
            let run = loopback_run(&q, &x, 1, SessionConfig::abort_at(party, step)).unwrap();
            let c = run.client.unwrap_err();
            let s = run.server.unwrap_err();
            assert_eq!(c.abort_step(), Some(step), "{party} at {step}: client {c}");
            assert_eq!(s.abort_step(), Some(step), "{party} at {step}: server {s}");
        }
    }
}

#[test]
fn abort_over_tcp() {
    let (m, q) = mlp();
    let x = sample(&m.input_shape, 1.0, 1);
    let run = tcp_run(&q, &x, 1, SessionConfig::abort_at(PartyId::Server, 3)).unwrap();
    assert!(matches!(run.client, Err(ProtocolError::PeerAbort(3))));
    assert!(matches!(run.server, Err(ProtocolError::Aborted(3))));
}

#[test]
fn hello_rejects_mismatched_models() {
    let (m, q) = mlp();
    let other = quantize(&zoo::calibrated(zoo::mlp3(2, 8, 2, 7), 64, 4.0, 1), &codec()).unwrap();
    let mut rng = ChaCha20Rng::seed_from_u64(0);
    let (cm, _, _) = offline_phase(&other, &mut rng).unwrap();
    let (_, sm, _) = offline_phase(&q, &mut rng).unwrap();
    let x = sample(&m.input_shape, 1.0, 1);
    let (a, b) = duplex();
    let public = other.public_view();
    let (client, server) = thread::scope(|s| {
        let srv = s.spawn(|| hermite_pi::protocol::run_server(&q, sm, b, SessionConfig::default()));
        let cl = hermite_pi::protocol::run_client(&public, cm, &x, a, SessionConfig::default());
        (cl, srv.join().unwrap())
    });
    assert!(matches!(server, Err(ProtocolError::Hello(_))), "{server:?}");
    assert!(matches!(client, Err(ProtocolError::PeerAbort(0))), "{client:?}");
}

#[test]
fn material_for_the_wrong_party_is_refused() {
    let (_, q) = mlp();
    let (cm, _, _) = offline_phase(&q, &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
    let err = hermite_pi::protocol::run_server(&q, cm, duplex().0, SessionConfig::default()).unwrap_err();
    assert!(err.to_string().contains("dealt to the client"), "{err}");
}

#[test]
fn identity_activation_is_a_no_op() {
    let mut h = HerPNParams::new(3);
    h.set_coeffs(vec![0.0, 1.0, 0.0]).unwrap();
    h.set_stats(vec![0.0; 9], vec![1.0; 9]);
    h.eps = 0.0;
    h.populated = true;
    let m = ModelGraph::new("id", vec![3], vec![LayerSpec::Herpn(h)]);
    let q = quantize(&m, &codec()).unwrap();
    let Op::Activation { scale, c1, c0, .. } = &q.program[1] else {
        panic!("{:?}", q.program)
    };
    assert_eq!((scale[0], c1[0], c0[0]), (0, 1 << 11, 0));
    let x = Tensor::from_vec(vec![1.25, -3.5, 0.0]);
    let (out, _, _) = loopback_run(&q, &x, 4, SessionConfig::default()).unwrap().into_result().unwrap();
    for (a, b) in out.data().iter().zip(x.data()) {
        assert!((a - b).abs() <= 2.0 / 2048.0, "{a} vs {b}");
    }
}

#[test]
fn quadratic_is_exact_mod_97() {
    let params = FieldParams::new(97, 1).unwrap();
    let fe = |v: u64| FieldElement::new(v % 97, 97);
    let (c2, c1, c0) = (fe(5), fe(90), fe(13));
    let mut rng = ChaCha20Rng::seed_from_u64(7);
    let (mut tc, mut ts) = deal_triples(TripleKind::Square, 97, params, &mut rng);
    let xs: Vec<FieldElement> = (0..97).map(fe).collect();
    let masks: Vec<FieldElement> = (0..97).map(|_| fe(rng.random_range(0..97))).collect();
    let client: Vec<FieldElement> = masks.clone();
    let server: Vec<FieldElement> = xs.iter().zip(&masks).map(|(&x, &r)| x - r).collect();
    let (a, b) = duplex();
    let (yc, ys) = thread::scope(|s| {
        let h = s.spawn(|| {
            let mut ch = Channel::new(b, CommMeter::new(PartyId::Server));
            secure_quadratic(PartyId::Server, &server, (c2, c1, c0), &mut ts, &mut ch).unwrap()
        });
        let mut ch = Channel::new(a, CommMeter::new(PartyId::Client));
        let yc = secure_quadratic(PartyId::Client, &client, (c2, c1, c0), &mut tc, &mut ch).unwrap();
        (yc, h.join().unwrap())
    });
    for (x, (a, b)) in xs.iter().zip(yc.iter().zip(&ys)) {
        assert_eq!(*a + *b, c2 * *x * *x + c1 * *x + c0, "x = {x}");
    }
}

#[test]
fn masked_linear_reconstructs_mod_97() {
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let fe = |v: i64| FieldElement::from_signed(v as i128, 97);
    for _ in 0..50 {
        let weight: Vec<i64> = (0..12).map(|_| rng.random_range(-40..40)).collect();
        let op = Op::Dense {
            in_features: 4,
            out_features: 3,
            weight: weight.clone(),
            bias: vec![0; 3],
        };
        let x: Vec<FieldElement> = (0..4).map(|_| fe(rng.random_range(0..97))).collect();
        let r: Vec<FieldElement> = (0..4).map(|_| fe(rng.random_range(0..97))).collect();
        let s: Vec<FieldElement> = (0..3).map(|_| fe(rng.random_range(0..97))).collect();
        let held: Vec<FieldElement> = x.iter().zip(&r).map(|(&x, &r)| x - r).collect();
        let wr = hermite_pi::nn::fixed::linear_map_field(&op, &r);
        let client_share: Vec<FieldElement> = wr.iter().zip(&s).map(|(&w, &s)| w - s).collect();
        let yc = masked_linear(PartyId::Client, &op, &[], &client_share);
        let ys = masked_linear(PartyId::Server, &op, &held, &s);
        let wx = hermite_pi::nn::fixed::linear_map_field(&op, &x);
        for o in 0..3 {
            assert_eq!(yc[o] + ys[o], wx[o]);
        }
    }
    // Identity weights, zero masks: the server alone holds x.
    let op = Op::Dense {
        in_features: 2,
        out_features: 2,
        weight: vec![1, 0, 0, 1],
        bias: vec![0; 2],
    };
    let x = vec![fe(5), fe(-3)];
    assert_eq!(masked_linear(PartyId::Server, &op, &x, &[fe(0), fe(0)]), x);
}

#[test]
fn server_view_is_rerandomized_across_dealer_seeds() {
    // Record everything the server receives for one input under two seeds.
    let (m, q) = mlp();
    let x = sample(&m.input_shape, 4.0, 8);
    let view = |seed: u64| -> Vec<u64> {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let (cm, sm, _) = offline_phase(&q, &mut rng).unwrap();
        let (a, b) = duplex();
        let tap = Tap::new(b);
        let seen = tap.seen.clone();
        let public = q.public_view();
        thread::scope(|s| {
            let h = s.spawn(|| hermite_pi::protocol::run_server(&q, sm, tap, SessionConfig::default()));
            hermite_pi::protocol::run_client(&public, cm, &x, a, SessionConfig::default()).unwrap();
            h.join().unwrap().unwrap();
        });
        let bytes = seen.lock().unwrap().clone();
        // Skip the hello frame: it is configuration, not data.
        bytes[37..].chunks(8).map(|c| u64::from_le_bytes(c.try_into().unwrap_or([0; 8]))).collect()
    };
    let (v1, v2) = (view(1), view(2));
    assert_eq!(v1.len(), v2.len());
    let equal = v1.iter().zip(&v2).filter(|(a, b)| a == b).count();
    // Frame headers repeat; payload words should essentially never collide.
    let frames = 1 + 2 * q.activation_elements().len();
    assert!(equal <= frames, "{equal} equal words of {}", v1.len());
}

/// Byte stream wrapper that records everything read.
struct Tap<S> {
    inner: S,
    seen: std::sync::Arc<std::sync::Mutex<Vec<u8>>>,
}

impl<S> Tap<S> {
    fn new(inner: S) -> Self {
        Tap {
            inner,
            seen: Default::default(),
        }
    }
}

impl<S: std::io::Read> std::io::Read for Tap<S> {
    fn read(&mut self, buf: &mut [u8]) -> std::io::Result<usize> {
        let n = self.inner.read(buf)?;
        self.seen.lock().unwrap().extend_from_slice(&buf[..n]);
        Ok(n)
    }
}

impl<S: std::io::Write> std::io::Write for Tap<S> {
    fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
        self.inner.write(buf)
    }
    fn flush(&mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

#[test]
fn material_files_drive_a_run() {
    let (m, q) = mlp();
    let (cm, sm, audit) = offline_phase(&q, &mut ChaCha20Rng::seed_from_u64(11)).unwrap();
    assert!(audit.identities_hold());
    let cm = OfflineMaterial::read_from(&mut cm.to_bytes().as_slice()).unwrap();
    let sm = OfflineMaterial::read_from(&mut sm.to_bytes().as_slice()).unwrap();
    let x = sample(&m.input_shape, 2.0, 2);
    let (a, b) = duplex();
    let public = q.public_view();
    let out = thread::scope(|s| {
        let h = s.spawn(|| hermite_pi::protocol::run_server(&q, sm, b, SessionConfig::default()));
        let c = hermite_pi::protocol::run_client(&public, cm, &x, a, SessionConfig::default()).unwrap();
        h.join().unwrap().unwrap();
        c.values.unwrap()
    });
    let direct = run_pair(&q, &x, 11, duplex(), SessionConfig::default())
        .unwrap()
        .into_result()
        .unwrap();
    assert_eq!(out, direct.1);
}
