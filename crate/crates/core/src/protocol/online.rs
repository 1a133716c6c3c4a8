//! Online phase: both parties' sessions, analytic traffic, and run drivers.

use super::dealer::{offline_phase, DealerAudit};
use super::material::{OfflineMaterial, StepMaterial};
use super::{ProtocolError, SessionConfig, PROTOCOL_VERSION};
use crate::beaver::{secure_square, truncate_share, BeaverError, TripleBatch};
use crate::field::{FieldElement, FixedPointCodec};
use crate::meter::{CommMeter, Phase, Transcript};
use crate::nn::fixed::{linear_map_field, op_bias, Op, QuantizedModel};
use crate::sharing::PartyId;
use crate::tensor::Tensor;
use crate::wire::{duplex, Channel, MessageType, WireError, WireMessage};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::Serialize;
use std::io::{self, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::thread;

/// Local half of a masked linear layer, before bias and truncation.
///
/// The server holds `x - r` and computes `W (x - r) + s`; the client's share
/// is its material `W r - s`. The shares sum to `W x`.
pub fn masked_linear(
    party: PartyId,
    op: &Op,
    held: &[FieldElement],
    share: &[FieldElement],
) -> Vec<FieldElement> {
    match party {
        PartyId::Client => share.to_vec(),
        PartyId::Server => linear_map_field(op, held)
            .into_iter()
            .zip(share)
            .map(|(w, &s)| w + s)
            .collect(),
    }
}

/// Shares of `c2 x^2 + c1 x + c0` with exact field arithmetic, one square
/// triple per element.
pub fn secure_quadratic<S: Read + Write>(
    party: PartyId,
    x: &[FieldElement],
    (c2, c1, c0): (FieldElement, FieldElement, FieldElement),
    triples: &mut TripleBatch,
    chan: &mut Channel<S>,
) -> Result<Vec<FieldElement>, BeaverError> {
    let sq = secure_square(party, x, triples, chan)?;
    Ok(sq
        .iter()
        .zip(x)
        .map(|(&s, &x)| {
            let y = c2 * s + c1 * x;
            if party.adds_constants() {
                y + c0
            } else {
                y
            }
        })
        .collect())
}

/// Predicted online bytes sent by each party at one step.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct StepBytes {
    pub step: usize,
    pub label: &'static str,
    pub client: u64,
    pub server: u64,
}

/// Closed-form online traffic: hello `5 + 32` each way; input `5 + 8n` from
/// the client; an `n`-element activation `2 (5 + 8n)` from the client (opening
/// and masked return) and `5 + 8n` from the server; output `5 + 8m` from the
/// server. Everything else is local.
pub fn analytic_online_bytes(q: &QuantizedModel) -> Vec<StepBytes> {
    let frame = |n: usize| WireMessage::frame_len(n) as u64;
    let mut out = vec![StepBytes {
        step: 0,
        label: "hello",
        client: frame(4),
        server: frame(4),
    }];
    for (i, op) in q.program.iter().enumerate() {
        let (client, server) = match op {
            Op::Input { len } => (frame(*len), 0),
            Op::Activation {
                channels, inner, ..
            } => {
                let n = channels * inner;
                (2 * frame(n), frame(n))
            }
            Op::Output { len } => (0, frame(*len)),
            _ => (0, 0),
        };
        out.push(StepBytes {
            step: i + 1,
            label: op.label(),
            client,
            server,
        });
    }
    out
}

/// What one party ends a session with.
#[derive(Debug, Clone)]
pub struct PartyRun {
    pub party: PartyId,
    /// Client only.
    pub output: Option<Tensor>,
    /// Client only: output at scale `f`.
    pub values: Option<Vec<i64>>,
    pub transcript: Transcript,
}

struct Session<'a, S> {
    party: PartyId,
    q: &'a QuantizedModel,
    steps: Vec<StepMaterial>,
    chan: Channel<S>,
    config: SessionConfig,
}

type Shares = Vec<FieldElement>;

impl<S: Read + Write> Session<'_, S> {
    fn p(&self) -> u64 {
        self.q.params.modulus()
    }

    fn f(&self) -> u32 {
        self.q.params.frac_bits()
    }

    fn fe(&self, v: i64) -> FieldElement {
        FieldElement::from_signed(v as i128, self.p())
    }

    /// Local share truncation. Unlike the plaintext twin, no rounding offset
    /// is added: the split point of the shares already rounds up with
    /// probability equal to the discarded fraction, so the result is an
    /// unbiased stochastic rounding within one LSB of round-to-nearest.
    fn trunc(&self, v: &[FieldElement]) -> Shares {
        v.iter().map(|&e| truncate_share(self.party, e, self.f())).collect()
    }

    fn wire(&self, step: usize, label: &'static str) -> impl Fn(WireError) -> ProtocolError {
        move |e| ProtocolError::from_wire(step, label, e)
    }

    fn send(&mut self, step: usize, label: &'static str, kind: MessageType, v: &[FieldElement]) -> Result<(), ProtocolError> {
        let msg = WireMessage::new(kind, v.iter().map(|e| e.value()).collect());
        self.chan.send_or_abort(&msg).map_err(self.wire(step, label))
    }

    fn expect(&mut self, step: usize, label: &'static str, kind: MessageType, n: usize) -> Result<Shares, ProtocolError> {
        let p = self.p();
        let words = self.chan.expect(kind, Some(n)).map_err(self.wire(step, label))?;
        words
            .into_iter()
            .map(|w| {
                if w < p {
                    Ok(FieldElement::new(w, p))
                } else {
                    Err(ProtocolError::Wire {
                        step,
                        label,
                        source: WireError::Io(io::Error::new(
                            io::ErrorKind::InvalidData,
                            format!("element {w} not reduced mod {p}"),
                        )),
                    })
                }
            })
            .collect()
    }

    fn hello(&mut self) -> Result<(), ProtocolError> {
        let mine = vec![
            PROTOCOL_VERSION,
            self.p(),
            self.f() as u64,
            self.q.hash(),
        ];
        let check = |theirs: &[u64]| -> Result<(), ProtocolError> {
            let names = ["protocol version", "modulus", "fractional bits", "model hash"];
            for ((name, a), b) in names.iter().zip(&mine).zip(theirs) {
                if a != b {
                    return Err(ProtocolError::Hello(format!("{name}: ours {a}, peer {b}")));
                }
            }
            Ok(())
        };
        let msg = WireMessage::new(MessageType::Hello, mine.clone());
        let w = self.wire(0, "hello");
        match self.party {
            PartyId::Client => {
                self.chan.send_or_abort(&msg).map_err(&w)?;
                let theirs = self.chan.expect(MessageType::Hello, Some(4)).map_err(&w)?;
                check(&theirs)
            }
            PartyId::Server => {
                let theirs = self.chan.expect(MessageType::Hello, Some(4)).map_err(&w)?;
                check(&theirs)?;
                self.chan.send_or_abort(&msg).map_err(&w)
            }
        }
    }

    fn material_error(step: usize, reason: impl Into<String>) -> ProtocolError {
        ProtocolError::Material {
            step,
            reason: reason.into(),
        }
    }

    fn linear_share(&self, step: usize, mat: StepMaterial, n: usize) -> Result<Shares, ProtocolError> {
        match mat {
            StepMaterial::LinearShare(v) if v.len() == n => Ok(v),
            _ => Err(Self::material_error(step, format!("lacks a {n}-element linear share"))),
        }
    }

    /// One program op. Returns the client's decoded output at the end.
    fn step(
        &mut self,
        i: usize,
        op: &Op,
        mat: StepMaterial,
        stack: &mut Vec<Shares>,
        input: Option<&[i64]>,
    ) -> Result<Option<Vec<i64>>, ProtocolError> {
        let step = i + 1;
        let label = op.label();
        let pop = |stack: &mut Vec<Shares>| {
            stack
                .pop()
                .ok_or_else(|| Self::material_error(step, "program stack underflow"))
        };
        match op {
            Op::Input { len } => match self.party {
                PartyId::Client => {
                    let x = input.ok_or_else(|| ProtocolError::Input("client has no input".into()))?;
                    let StepMaterial::InputMask(r) = mat else {
                        return Err(Self::material_error(step, "lacks the input mask"));
                    };
                    if r.len() != *len || x.len() != *len {
                        return Err(Self::material_error(step, "input mask length"));
                    }
                    let masked: Shares = x.iter().zip(&r).map(|(&x, &r)| self.fe(x) - r).collect();
                    self.send(step, label, MessageType::MaskedInput, &masked)?;
                    stack.push(r);
                }
                PartyId::Server => {
                    let v = self.expect(step, label, MessageType::MaskedInput, *len)?;
                    stack.push(v);
                }
            },
            Op::Dense { .. } | Op::Conv { .. } => {
                let x = pop(stack)?;
                let n = op.out_len().expect("linear op");
                let share = self.linear_share(step, mat, n)?;
                let mut y = masked_linear(self.party, op, &x, &share);
                if self.party.adds_constants() {
                    for (o, v) in y.iter_mut().enumerate() {
                        *v += self.fe(op_bias(op, o, n));
                    }
                }
                stack.push(self.trunc(&y));
            }
            Op::AvgPool { .. } => {
                let x = pop(stack)?;
                let y = linear_map_field(op, &x);
                stack.push(self.trunc(&y));
            }
            Op::Activation {
                channels,
                inner,
                scale,
                negative,
                c1,
                c0,
            } => {
                let x = pop(stack)?;
                let n = x.len();
                let StepMaterial::Activation {
                    mut triples,
                    return_mask,
                } = mat
                else {
                    return Err(Self::material_error(step, "lacks square triples"));
                };
                if triples.len() != n
                    || (self.party == PartyId::Client && return_mask.len() != n)
                {
                    return Err(Self::material_error(step, format!("not sized for {n} elements")));
                }
                let server = self.party.adds_constants();
                let z_pre: Shares = x
                    .iter()
                    .enumerate()
                    .map(|(j, &xj)| {
                        let k = scale[Op::channel_of(*channels, *inner, j)];
                        if k == 0 {
                            FieldElement::zero(self.p())
                        } else {
                            truncate_share(self.party, self.fe(k) * xj, self.f())
                        }
                    })
                    .collect();
                let sq = secure_square(self.party, &z_pre, &mut triples, &mut self.chan)
                    .map_err(|e| ProtocolError::from_beaver(step, label, e))?;
                let y2: Shares = (0..n)
                    .map(|j| {
                        let c = Op::channel_of(*channels, *inner, j);
                        let s = if negative[c] { -sq[j] } else { sq[j] };
                        let y = s + self.fe(c1[c]) * x[j];
                        if server {
                            y + self.fe(c0[c])
                        } else {
                            y
                        }
                    })
                    .collect();
                let held = match self.party {
                    PartyId::Client => {
                        let msg: Shares = y2.iter().zip(&return_mask).map(|(&y, &r)| y - r).collect();
                        self.send(step, label, MessageType::ActivationReturn, &msg)?;
                        return_mask
                    }
                    PartyId::Server => {
                        let msg = self.expect(step, label, MessageType::ActivationReturn, n)?;
                        y2.iter().zip(msg).map(|(&y, m)| y + m).collect()
                    }
                };
                stack.push(self.trunc(&held));
            }
            Op::Dup => {
                let top = stack
                    .last()
                    .cloned()
                    .ok_or_else(|| Self::material_error(step, "program stack underflow"))?;
                stack.push(top);
            }
            Op::Swap => {
                let n = stack.len();
                if n < 2 {
                    return Err(Self::material_error(step, "program stack underflow"));
                }
                stack.swap(n - 1, n - 2);
            }
            Op::Add => {
                let b = pop(stack)?;
                let mut a = pop(stack)?;
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                stack.push(a);
            }
            Op::Output { len } => {
                let mine = pop(stack)?;
                match self.party {
                    PartyId::Server => self.send(step, label, MessageType::Result, &mine)?,
                    PartyId::Client => {
                        let theirs = self.expect(step, label, MessageType::Result, *len)?;
                        return Ok(Some(
                            mine.iter().zip(theirs).map(|(&a, b)| (a + b).to_signed()).collect(),
                        ));
                    }
                }
            }
        }
        Ok(None)
    }

    /// Send `Abort(step)` and wait for the peer to hang up.
    fn abort(&mut self, step: usize) {
        let _ = self
            .chan
            .send(&WireMessage::new(MessageType::Abort, vec![step as u64]));
        while self.chan.recv().is_ok() {}
    }

    fn run(&mut self, input: Option<&[i64]>) -> Result<Option<Vec<i64>>, ProtocolError> {
        for (i, s) in self.steps.iter().enumerate() {
            let n = s.elements();
            if n > 0 {
                let label = self.q.program[i].label();
                self.chan
                    .meter_mut()
                    .record_offline(i + 1, label, 8 * n as u64);
            }
        }
        let (abort_cfg, me) = (self.config.abort, self.party);
        let injected = |step: usize| abort_cfg == Some((me, step));
        self.chan.enter_step(Phase::Online, 0, "hello");
        if injected(0) {
            self.abort(0);
            return Err(ProtocolError::Aborted(0));
        }
        if let Err(e) = self.hello() {
            if matches!(e, ProtocolError::Hello(_)) {
                self.abort(0);
            }
            return Err(e);
        }
        let mut stack = Vec::new();
        let mut result = None;
        for (i, op) in self.q.program.iter().enumerate() {
            let step = i + 1;
            self.chan.enter_step(Phase::Online, step, op.label());
            if injected(step) {
                self.abort(step);
                return Err(ProtocolError::Aborted(step));
            }
            let mat = std::mem::take(&mut self.steps[i]);
            match self.step(i, op, mat, &mut stack, input) {
                Ok(out) => result = result.or(out),
                Err(e) => {
                    if !matches!(
                        e,
                        ProtocolError::PeerAbort(_)
                            | ProtocolError::Wire {
                                source: WireError::Closed,
                                ..
                            }
                    ) {
                        self.abort(step);
                    }
                    return Err(e);
                }
            }
        }
        if self.party == PartyId::Server {
            // The client hangs up once it has the result; anything else is
            // a late abort.
            match self.chan.recv() {
                Ok(m) if m.kind == MessageType::Abort => {
                    return Err(ProtocolError::PeerAbort(
                        m.payload.first().copied().unwrap_or(0) as usize,
                    ))
                }
                Ok(m) => {
                    return Err(ProtocolError::Wire {
                        step: self.q.program.len(),
                        label: "output",
                        source: WireError::Unexpected {
                            expected: MessageType::Abort,
                            got: m.kind,
                        },
                    })
                }
                Err(_) => {}
            }
        }
        self.chan.meter_mut().finish();
        Ok(result)
    }

    fn finish(self) -> Transcript {
        let digest = self.chan.sent_digest();
        let (_, mut meter) = self.chan.into_parts();
        meter.finish();
        meter.set_digest(digest);
        meter.transcript()
    }
}

fn check_material(q: &QuantizedModel, m: &OfflineMaterial, party: PartyId) -> Result<(), ProtocolError> {
    let bad = |reason: String| ProtocolError::Material { step: 0, reason };
    if m.party != party {
        return Err(bad(format!("was dealt to the {}", m.party)));
    }
    if m.params != q.params || m.model_hash != q.hash() {
        return Err(bad("was dealt for a different model or field".into()));
    }
    if m.steps.len() != q.program.len() {
        return Err(bad(format!("covers {} steps, model has {}", m.steps.len(), q.program.len())));
    }
    Ok(())
}

/// Client side. `q` may be the public view.
pub fn run_client<S: Read + Write>(
    q: &QuantizedModel,
    material: OfflineMaterial,
    input: &Tensor,
    stream: S,
    config: SessionConfig,
) -> Result<PartyRun, ProtocolError> {
    check_material(q, &material, PartyId::Client)?;
    if input.shape() != q.input_shape.as_slice() {
        return Err(ProtocolError::Input(format!(
            "expected shape {:?}, got {:?}",
            q.input_shape,
            input.shape()
        )));
    }
    let codec = FixedPointCodec::new(q.params);
    let x = input
        .data()
        .iter()
        .map(|&v| codec.quantize(v))
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| ProtocolError::Input(e.to_string()))?;
    let mut s = Session {
        party: PartyId::Client,
        q,
        steps: material.steps,
        chan: Channel::new(stream, CommMeter::new(PartyId::Client)),
        config,
    };
    let values = s.run(Some(&x))?.ok_or_else(|| {
        ProtocolError::Format("program has no output step".into())
    })?;
    let output = Tensor::new(
        q.output_shape.clone(),
        values.iter().map(|&v| v as f64 / q.params.scale()).collect(),
    )
    .map_err(|e| ProtocolError::Format(e.to_string()))?;
    Ok(PartyRun {
        party: PartyId::Client,
        output: Some(output),
        values: Some(values),
        transcript: s.finish(),
    })
}

/// Server side; `q` must carry the weights.
pub fn run_server<S: Read + Write>(
    q: &QuantizedModel,
    material: OfflineMaterial,
    stream: S,
    config: SessionConfig,
) -> Result<PartyRun, ProtocolError> {
    check_material(q, &material, PartyId::Server)?;
    let mut s = Session {
        party: PartyId::Server,
        q,
        steps: material.steps,
        chan: Channel::new(stream, CommMeter::new(PartyId::Server)),
        config,
    };
    s.run(None)?;
    Ok(PartyRun {
        party: PartyId::Server,
        output: None,
        values: None,
        transcript: s.finish(),
    })
}

/// Both sides of one run, plus the dealer's audit.
#[derive(Debug)]
pub struct PairRun {
    pub client: Result<PartyRun, ProtocolError>,
    pub server: Result<PartyRun, ProtocolError>,
    pub audit: DealerAudit,
}

impl PairRun {
    /// Client output and the merged transcript, or the first error.
    pub fn into_result(self) -> Result<(Tensor, Vec<i64>, Transcript), ProtocolError> {
        let server = self.server?;
        let client = self.client?;
        Ok((
            client.output.expect("client output"),
            client.values.expect("client values"),
            client.transcript.merge(server.transcript),
        ))
    }
}

/// Deal from `seed` and run both parties over the given connected streams,
/// the server on its own thread.
pub fn run_pair<A, B>(
    q: &QuantizedModel,
    input: &Tensor,
    seed: u64,
    (client_end, server_end): (A, B),
    config: SessionConfig,
) -> Result<PairRun, ProtocolError>
where
    A: Read + Write,
    B: Read + Write + Send,
{
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let (cm, sm, audit) = offline_phase(q, &mut rng)?;
    let public = q.public_view();
    let (client, server) = thread::scope(|scope| {
        let server = scope.spawn(|| run_server(q, sm, server_end, config));
        let client = run_client(&public, cm, input, client_end, config);
        (client, server.join().expect("server thread panicked"))
    });
    Ok(PairRun {
        client,
        server,
        audit,
    })
}

/// Both parties in-process over a byte pipe.
pub fn loopback_run(
    q: &QuantizedModel,
    input: &Tensor,
    seed: u64,
    config: SessionConfig,
) -> Result<PairRun, ProtocolError> {
    run_pair(q, input, seed, duplex(), config)
}

/// Both parties over a localhost TCP connection.
pub fn tcp_run(
    q: &QuantizedModel,
    input: &Tensor,
    seed: u64,
    config: SessionConfig,
) -> Result<PairRun, ProtocolError> {
    let listener = TcpListener::bind("127.0.0.1:0")?;
    let client = TcpStream::connect(listener.local_addr()?)?;
    let (server, _) = listener.accept()?;
    client.set_nodelay(true)?;
    server.set_nodelay(true)?;
    run_pair(q, input, seed, (client, server), config)
}
