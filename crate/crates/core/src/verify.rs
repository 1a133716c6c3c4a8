//! Self-check suites runnable from the command line.

use crate::beaver::{deal_triples, secure_mul, secure_square, TripleKind};
use crate::field::{FieldElement, FieldParams, FixedPointCodec};
use crate::hermite::{hermite_h, relu_hermite_coeff, HermiteBasis};
use crate::meter::{CommMeter, Phase};
use crate::nn::fixed::{forward_fixed, quantize};
use crate::nn::{forward_float, zoo};
use crate::protocol::{analytic_online_bytes, loopback_run, tcp_run, SessionConfig};
use crate::quadrature::{gauss_hermite, piecewise_gaussian_expectation};
use crate::sharing::{share, PartyId};
use crate::wire::{duplex, Channel};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use std::fmt;
use std::str::FromStr;
use std::thread;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Field,
    Hermite,
    Beaver,
    Protocol,
    All,
}

impl FromStr for Suite {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        Ok(match s {
            "field" => Suite::Field,
            "hermite" => Suite::Hermite,
            "beaver" => Suite::Beaver,
            "protocol" => Suite::Protocol,
            "all" => Suite::All,
            _ => return Err(format!("unknown suite {s:?} (field, hermite, beaver, protocol, all)")),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub suite: &'static str,
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "{tag} {}/{}: {}", self.suite, self.name, self.detail)
    }
}

fn check(suite: &'static str, name: &'static str, passed: bool, detail: String) -> Check {
    Check {
        suite,
        name,
        passed,
        detail,
    }
}

pub fn run(suite: Suite) -> Vec<Check> {
    match suite {
        Suite::Field => field(),
        Suite::Hermite => hermite(),
        Suite::Beaver => beaver(),
        Suite::Protocol => protocol(),
        Suite::All => [field(), hermite(), beaver(), protocol()].concat(),
    }
}

fn field() -> Vec<Check> {
    let params = FieldParams::default();
    let codec = FixedPointCodec::new(params);
    let p = params.modulus();
    let mut rng = ChaCha20Rng::seed_from_u64(0);

    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let x = rng.random_range(-1000.0..1000.0);
        let back = codec.decode(codec.encode(x).expect("in range"));
        worst = worst.max((back - x).abs());
    }
    let half_lsb = 0.5 / params.scale();

    let mut arith_ok = true;
    for _ in 0..10_000 {
        let (a, b) = (rng.random_range(0..p), rng.random_range(0..p));
        let (fa, fb) = (FieldElement::new(a, p), FieldElement::new(b, p));
        let (a, b, q) = (a as u128, b as u128, p as u128);
        arith_ok &= (fa * fb).value() as u128 == a * b % q
            && (fa + fb).value() as u128 == (a + b) % q
            && (fa - fb).value() as u128 == (a + q - b) % q;
    }

    let mut shares_ok = true;
    for _ in 0..1000 {
        let v = params.from_signed(rng.random_range(-1_000_000..1_000_000));
        let (c, s) = share(v, &mut rng);
        shares_ok &= c.value + s.value == v;
    }
    vec![
        check(
            "field",
            "codec_roundtrip",
            worst <= half_lsb,
            format!("max error {worst:.3e} <= {half_lsb:.3e}"),
        ),
        check("field", "arithmetic", arith_ok, format!("10000 random pairs mod {p}")),
        check("field", "sharing", shares_ok, "1000 share/reconstruct pairs".into()),
    ]
}

fn hermite() -> Vec<Check> {
    let mut worst_coeff = 0.0f64;
    for n in 0..=6 {
        let q = piecewise_gaussian_expectation(|x| x.max(0.0) * hermite_h(n, x).expect("n <= 6"), 16);
        worst_coeff = worst_coeff.max((q - relu_hermite_coeff(n)).abs());
    }
    let rule = gauss_hermite(128);
    let basis = HermiteBasis::new(4).expect("degree 4");
    let mut worst_orth = 0.0f64;
    for i in 0..=4 {
        for j in 0..=4 {
            let v = rule.integrate(|x| {
                let h = basis.eval(x);
                h[i] * h[j]
            });
            let target = if i == j { 1.0 } else { 0.0 };
            worst_orth = worst_orth.max((v - target).abs());
        }
    }
    vec![
        check(
            "hermite",
            "relu_coefficients",
            worst_coeff <= 1e-6,
            format!("n = 0..6, max |quadrature - closed form| = {worst_coeff:.2e}"),
        ),
        check(
            "hermite",
            "orthonormality",
            worst_orth <= 1e-6,
            format!("i, j <= 4, 128-point rule, max deviation {worst_orth:.2e}"),
        ),
    ]
}

/// Runs `op` for every `(x, y)` in `Z_97^2` on both parties, one protocol
/// operation per pair; returns (all results correct, elements opened per op).
fn exhaustive(kind: TripleKind) -> (bool, f64) {
    let params = FieldParams::new(97, 1).expect("97 is prime");
    let p = 97u64;
    let pairs: Vec<(u64, u64)> = (0..p).flat_map(|x| (0..p).map(move |y| (x, y))).collect();
    let mut rng = ChaCha20Rng::seed_from_u64(97);
    let (mut tc, mut ts) = deal_triples(kind, pairs.len(), params, &mut rng);
    let split: Vec<[(FieldElement, FieldElement); 2]> = pairs
        .iter()
        .map(|&(x, y)| {
            let (xc, xs) = share(params.element(x), &mut rng);
            let (yc, ys) = share(params.element(y), &mut rng);
            [(xc.value, xs.value), (yc.value, ys.value)]
        })
        .collect();
    let (a, b) = duplex();
    let run = |party: PartyId, stream, triples: &mut crate::beaver::TripleBatch| {
        let mut ch = Channel::new(stream, CommMeter::new(party));
        ch.enter_step(Phase::Online, 0, "exhaustive");
        let pick = |s: (FieldElement, FieldElement)| if party == PartyId::Client { s.0 } else { s.1 };
        let mut out = Vec::with_capacity(split.len());
        for [x, y] in &split {
            let z = match kind {
                TripleKind::Mul => secure_mul(party, &[pick(*x)], &[pick(*y)], triples, &mut ch),
                TripleKind::Square => secure_square(party, &[pick(*x)], triples, &mut ch),
            };
            out.push(z.expect("in-process channel")[0]);
        }
        (out, ch.into_parts().1.transcript())
    };
    let ((zc, tc_), (zs, ts_)) = thread::scope(|s| {
        let server = s.spawn(|| run(PartyId::Server, b, &mut ts));
        let client = run(PartyId::Client, a, &mut tc);
        (client, server.join().expect("server thread"))
    });
    let correct = pairs.iter().zip(zc.iter().zip(&zs)).all(|(&(x, y), (c, s))| {
        let want = match kind {
            TripleKind::Mul => x * y % p,
            TripleKind::Square => x * x % p,
        };
        (*c + *s).value() == want
    });
    let per_op = |t: &crate::meter::Transcript, party| {
        let msgs = t.step_messages(Phase::Online, 0, party);
        let bytes = t.step_bytes(Phase::Online, 0, party);
        // One 5-byte frame header per message, 8 bytes per element.
        (bytes - 5 * msgs) as f64 / 8.0 / pairs.len() as f64
    };
    let (oc, os) = (per_op(&tc_, PartyId::Client), per_op(&ts_, PartyId::Server));
    (correct && oc == os, oc)
}

fn beaver() -> Vec<Check> {
    let (mul_ok, mul_open) = exhaustive(TripleKind::Mul);
    let (sq_ok, sq_open) = exhaustive(TripleKind::Square);
    vec![
        check(
            "beaver",
            "exhaustive_mul_p97",
            mul_ok && mul_open == 2.0,
            format!("9409 products, {mul_open} elements opened per party per op"),
        ),
        check(
            "beaver",
            "exhaustive_square_p97",
            sq_ok && sq_open == 1.0,
            format!("9409 squares, {sq_open} elements opened per party per op"),
        ),
    ]
}

fn protocol() -> Vec<Check> {
    let codec = FixedPointCodec::new(FieldParams::default());
    let model = zoo::calibrated(zoo::mlp3(2, 16, 2, 7), 64, 4.0, 1);
    let q = match quantize(&model, &codec) {
        Ok(q) => q,
        Err(e) => return vec![check("protocol", "quantize", false, e.to_string())],
    };
    let mut budget_ok = true;
    let mut float_err = 0.0f64;
    let mut bytes_ok = true;
    let mut failure = None;
    for seed in 0..10 {
        let x = zoo::Init::new(1000 + seed).uniform(&model.input_shape, 4.0);
        let run = loopback_run(&q, &x, seed, SessionConfig::default()).and_then(|r| r.into_result());
        let (out, values, transcript) = match run {
            Ok(r) => r,
            Err(e) => {
                failure = Some(e.to_string());
                break;
            }
        };
        let (fixed, float) = match (forward_fixed(&q, &x), forward_float(&model, &x)) {
            (Ok(a), Ok(b)) => (a, b),
            (Err(e), _) | (_, Err(e)) => {
                failure = Some(e.to_string());
                break;
            }
        };
        for ((a, b), budget) in values.iter().zip(&fixed.values).zip(&fixed.budget) {
            budget_ok &= (a - b).unsigned_abs() <= *budget;
        }
        float_err = float_err.max(out.max_abs_diff(&float));
        for s in analytic_online_bytes(&q) {
            bytes_ok &= transcript.step_bytes(Phase::Online, s.step, PartyId::Client) == s.client
                && transcript.step_bytes(Phase::Online, s.step, PartyId::Server) == s.server;
        }
    }
    if let Some(e) = failure {
        return vec![check("protocol", "run", false, e)];
    }
    let x = zoo::Init::new(7).uniform(&model.input_shape, 4.0);
    let fp = |r: Result<crate::protocol::PairRun, _>| {
        r.and_then(|r: crate::protocol::PairRun| r.into_result())
            .map(|(_, _, t)| t.fingerprint())
            .map_err(|e| e.to_string())
    };
    let same = match (
        fp(loopback_run(&q, &x, 3, SessionConfig::default())),
        fp(tcp_run(&q, &x, 3, SessionConfig::default())),
    ) {
        (Ok(a), Ok(b)) => (a == b, "loopback and TCP fingerprints".to_string()),
        (Err(e), _) | (_, Err(e)) => (false, e),
    };
    vec![
        check(
            "protocol",
            "fixed_point_budget",
            budget_ok,
            "MLP-3, 10 inputs, |protocol - fixed| <= propagated budget".into(),
        ),
        check(
            "protocol",
            "float_reference",
            float_err <= 0.01,
            format!("max |protocol - float| = {float_err:.4}"),
        ),
        check("protocol", "metered_bytes", bytes_ok, "every step equals the closed form".into()),
        check("protocol", "transports_identical", same.0, same.1),
    ]
}
