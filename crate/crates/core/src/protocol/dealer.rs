//! Trusted dealer: masks, masked-weight products and square triples.
//!
//! Every client share in the protocol is data-independent, so the dealer can
//! simulate them all. It uses that to keep local share truncation exact: a
//! truncated value `x` with `|x| < B` splits cleanly whenever its client
//! share lies in `[B, p - B]`. Fresh masks (input mask, linear-layer client
//! shares, activation return masks) are drawn from intervals chosen so that
//! every later truncation they feed sees such a client share. The intervals
//! come from a backward pass over the program; when two consumers of one
//! value disagree, one wins and the other's truncations are counted as
//! unguarded in the audit.

use super::material::{OfflineMaterial, StepMaterial};
use super::ProtocolError;
use crate::beaver::{deal_triples, TripleKind};
use crate::field::FieldElement;
use crate::nn::fixed::{linear_map_field, trunc_bound, Op, QuantizedModel};
use crate::sharing::PartyId;
use rand::Rng;
use serde::Serialize;

/// Inclusive interval of client-share values, `None` when unconstrained.
type Iv = Option<(u64, u64)>;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct AuditEntry {
    /// Online step (program op index + 1).
    pub step: usize,
    pub label: &'static str,
    pub elements: usize,
    /// `(W r - s) + s = W r` held for every element.
    pub identity_ok: bool,
    pub triples: usize,
    pub truncations: usize,
    /// Truncations whose client share falls outside `[B, p - B]`.
    pub unguarded: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DealerAudit {
    pub model_hash: u64,
    pub entries: Vec<AuditEntry>,
}

impl DealerAudit {
    pub fn identities_hold(&self) -> bool {
        self.entries.iter().all(|e| e.identity_ok)
    }

    pub fn triples(&self) -> usize {
        self.entries.iter().map(|e| e.triples).sum()
    }

    pub fn unguarded(&self) -> usize {
        self.entries.iter().map(|e| e.unguarded).sum()
    }
}

/// Which stack values each op pops and pushes, by value id.
struct Flow {
    consumes: Vec<Vec<usize>>,
    produces: Vec<Option<usize>>,
    lens: Vec<usize>,
}

fn flow(q: &QuantizedModel) -> Result<Flow, ProtocolError> {
    let mut stack: Vec<usize> = Vec::new();
    let mut f = Flow {
        consumes: Vec::new(),
        produces: Vec::new(),
        lens: Vec::new(),
    };
    let lens = q.step_lengths();
    for (i, op) in q.program.iter().enumerate() {
        let underflow = || ProtocolError::Material {
            step: i + 1,
            reason: "program stack underflow".into(),
        };
        let pop = |stack: &mut Vec<usize>| stack.pop().ok_or_else(underflow);
        let (consumes, produces) = match op {
            Op::Input { .. } => (vec![], true),
            Op::Dense { .. } | Op::Conv { .. } | Op::AvgPool { .. } | Op::Activation { .. } => {
                (vec![pop(&mut stack)?], true)
            }
            Op::Add => {
                let b = pop(&mut stack)?;
                (vec![pop(&mut stack)?, b], true)
            }
            Op::Output { .. } => (vec![pop(&mut stack)?], false),
            Op::Dup => {
                let top = *stack.last().ok_or_else(underflow)?;
                stack.push(top);
                (vec![], false)
            }
            Op::Swap => {
                let n = stack.len();
                if n < 2 {
                    return Err(underflow());
                }
                stack.swap(n - 1, n - 2);
                (vec![], false)
            }
        };
        let out = produces.then(|| {
            f.lens.push(lens[i]);
            stack.push(f.lens.len() - 1);
            f.lens.len() - 1
        });
        f.consumes.push(consumes);
        f.produces.push(out);
    }
    Ok(f)
}

/// Elementwise intersection; an empty intersection keeps the first.
fn combine(list: &[Vec<Iv>], n: usize) -> Vec<Iv> {
    (0..n)
        .map(|j| {
            let mut acc: Iv = None;
            for c in list {
                acc = match (acc, c[j]) {
                    (None, x) | (x, None) => x,
                    (Some((a, b)), Some((c, d))) => {
                        let (lo, hi) = (a.max(c), b.min(d));
                        Some(if lo <= hi { (lo, hi) } else { (a, b) })
                    }
                };
            }
            acc
        })
        .collect()
}

struct Bounds {
    p: u64,
    f: u32,
    b: u64,
}

impl Bounds {
    /// Pre-truncation client shares whose truncation lands in `iv` and
    /// stays guarded.
    fn pre_trunc(&self, iv: Iv) -> (u64, u64) {
        let (lo, hi) = (self.b, self.p - self.b);
        match iv {
            None => (lo, hi),
            Some((a, z)) => {
                let l = lo.max(((a as u128) << self.f).min(u64::MAX as u128) as u64);
                let h = hi.min((((z as u128) << self.f) + (1 << self.f) - 1).min(u64::MAX as u128) as u64);
                if l <= h {
                    (l, h)
                } else {
                    (lo, hi)
                }
            }
        }
    }

    fn guarded(&self, c: FieldElement) -> bool {
        (self.b..=self.p - self.b).contains(&c.value())
    }
}

fn constraints(q: &QuantizedModel, fl: &Flow, bd: &Bounds) -> Vec<Vec<Iv>> {
    let nvals = fl.lens.len();
    let mut cons: Vec<Vec<Vec<Iv>>> = vec![Vec::new(); nvals];
    let mut resolved: Vec<Vec<Iv>> = vec![Vec::new(); nvals];
    for (i, op) in q.program.iter().enumerate().rev() {
        let out = fl.produces[i].map(|v| {
            resolved[v] = combine(&cons[v], fl.lens[v]);
            resolved[v].clone()
        });
        let ins = &fl.consumes[i];
        match op {
            Op::AvgPool {
                in_shape,
                kernel,
                inv,
            } => {
                let out = out.expect("pool produces a value");
                let [c, h, w] = *in_shape;
                let k = *kernel;
                let div = (k * k) as u64 * (*inv).max(1) as u64;
                let mut iv = vec![None; c * h * w];
                for ch in 0..c {
                    for i in 0..h / k {
                        for j in 0..w / k {
                            let o = (ch * (h / k) + i) * (w / k) + j;
                            let (l, hh) = bd.pre_trunc(out[o]);
                            let each = (l.div_ceil(div), hh / div);
                            for di in 0..k {
                                for dj in 0..k {
                                    iv[(ch * h + i * k + di) * w + j * k + dj] =
                                        (each.0 <= each.1).then_some(each);
                                }
                            }
                        }
                    }
                }
                cons[ins[0]].push(iv);
            }
            Op::Activation {
                channels,
                inner,
                scale,
                ..
            } => {
                let n = channels * inner;
                let iv = (0..n)
                    .map(|j| {
                        let k = scale[Op::channel_of(*channels, *inner, j)].unsigned_abs();
                        (k != 0).then(|| (bd.b.div_ceil(k), (bd.p - bd.b) / k))
                    })
                    .collect();
                cons[ins[0]].push(iv);
            }
            Op::Add => {
                let half: Vec<Iv> = out
                    .expect("add produces a value")
                    .into_iter()
                    .map(|iv| iv.and_then(|(lo, hi)| {
                        let (a, b) = (lo.div_ceil(2), hi / 2);
                        (a <= b).then_some((a, b))
                    }))
                    .collect();
                cons[ins[0]].push(half.clone());
                cons[ins[1]].push(half);
            }
            // Dense and conv inputs are never truncated as client shares.
            _ => {}
        }
    }
    resolved
}

fn sample_in<R: Rng + ?Sized>(rng: &mut R, (lo, hi): (u64, u64), p: u64) -> FieldElement {
    FieldElement::new(rng.random_range(lo..=hi), p)
}

fn trunc_client(v: FieldElement, f: u32) -> FieldElement {
    FieldElement::new(v.value() >> f, v.modulus())
}

/// Deal both parties' material for `q`, which must carry its weights.
///
/// Returns `(client, server, audit)`. Material is indexed by program op.
pub fn offline_phase<R: Rng + ?Sized>(
    q: &QuantizedModel,
    rng: &mut R,
) -> Result<(OfflineMaterial, OfflineMaterial, DealerAudit), ProtocolError> {
    let params = q.params;
    let (p, f) = (params.modulus(), params.frac_bits());
    let bd = Bounds {
        p,
        f,
        b: trunc_bound(params),
    };
    let fl = flow(q)?;
    let cons = constraints(q, &fl, &bd);
    let hash = q.hash();
    let n_ops = q.program.len();
    let mut client = OfflineMaterial::empty(PartyId::Client, params, hash, n_ops);
    let mut server = OfflineMaterial::empty(PartyId::Server, params, hash, n_ops);
    let mut audit = DealerAudit {
        model_hash: hash,
        entries: Vec::new(),
    };
    let mut stack: Vec<Vec<FieldElement>> = Vec::new();
    let fresh = |rng: &mut R, v: usize| -> Vec<FieldElement> {
        cons[v]
            .iter()
            .map(|&iv| sample_in(rng, bd.pre_trunc(iv), p))
            .collect()
    };

    for (i, op) in q.program.iter().enumerate() {
        let mut entry = AuditEntry {
            step: i + 1,
            label: op.label(),
            elements: 0,
            identity_ok: true,
            triples: 0,
            truncations: 0,
            unguarded: 0,
        };
        match op {
            Op::Input { len } => {
                let v = fl.produces[i].expect("input produces a value");
                let r: Vec<FieldElement> = cons[v]
                    .iter()
                    .map(|&iv| sample_in(rng, iv.unwrap_or((0, p - 1)), p))
                    .collect();
                debug_assert_eq!(r.len(), *len);
                entry.elements = r.len();
                client.steps[i] = StepMaterial::InputMask(r.clone());
                stack.push(r);
            }
            Op::Dense {
                in_features,
                out_features,
                weight,
                ..
            } if weight.len() != in_features * out_features => {
                return Err(ProtocolError::Material {
                    step: i + 1,
                    reason: "needs the server's weights".into(),
                })
            }
            Op::Conv { weight, .. } if weight.is_empty() => {
                return Err(ProtocolError::Material {
                    step: i + 1,
                    reason: "needs the server's weights".into(),
                })
            }
            Op::Dense { .. } | Op::Conv { .. } => {
                let r = stack.pop().expect("flow checked");
                let wr = linear_map_field(op, &r);
                let c = fresh(rng, fl.produces[i].expect("linear produces a value"));
                let s: Vec<FieldElement> = wr.iter().zip(&c).map(|(&w, &c)| w - c).collect();
                entry.identity_ok = c.iter().zip(&s).zip(&wr).all(|((&c, &s), &w)| c + s == w);
                entry.elements = c.len();
                entry.truncations = c.len();
                stack.push(c.iter().map(|&v| trunc_client(v, f)).collect());
                client.steps[i] = StepMaterial::LinearShare(c);
                server.steps[i] = StepMaterial::LinearShare(s);
            }
            Op::AvgPool { .. } => {
                let r = stack.pop().expect("flow checked");
                let acc = linear_map_field(op, &r);
                entry.elements = acc.len();
                entry.truncations = acc.len();
                entry.unguarded = acc.iter().filter(|&&c| !bd.guarded(c)).count();
                stack.push(acc.iter().map(|&v| trunc_client(v, f)).collect());
            }
            Op::Activation {
                channels,
                inner,
                scale,
                ..
            } => {
                let x = stack.pop().expect("flow checked");
                let n = x.len();
                for (j, &xc) in x.iter().enumerate() {
                    let k = scale[Op::channel_of(*channels, *inner, j)];
                    if k != 0 {
                        entry.truncations += 1;
                        if !bd.guarded(FieldElement::from_signed(k as i128, p) * xc) {
                            entry.unguarded += 1;
                        }
                    }
                }
                let ret = fresh(rng, fl.produces[i].expect("activation produces a value"));
                entry.truncations += n;
                entry.elements = n;
                entry.triples = n;
                let (tc, ts) = deal_triples(TripleKind::Square, n, params, rng);
                stack.push(ret.iter().map(|&v| trunc_client(v, f)).collect());
                client.steps[i] = StepMaterial::Activation {
                    triples: tc,
                    return_mask: ret,
                };
                server.steps[i] = StepMaterial::Activation {
                    triples: ts,
                    return_mask: Vec::new(),
                };
            }
            Op::Dup => {
                let top = stack.last().expect("flow checked").clone();
                stack.push(top);
            }
            Op::Swap => {
                let n = stack.len();
                stack.swap(n - 1, n - 2);
            }
            Op::Add => {
                let b = stack.pop().expect("flow checked");
                let a = stack.last_mut().expect("flow checked");
                for (x, y) in a.iter_mut().zip(b) {
                    *x += y;
                }
                entry.elements = a.len();
            }
            Op::Output { len } => {
                stack.pop();
                entry.elements = *len;
            }
        }
        audit.entries.push(entry);
    }
    Ok((client, server, audit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::{FieldParams, FixedPointCodec};
    use crate::nn::fixed::quantize;
    use crate::nn::surgery::{herpnize, SurgeryMode};
    use crate::nn::{zoo, ModelGraph};
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn quantized(m: &ModelGraph) -> QuantizedModel {
        quantize(m, &FixedPointCodec::new(FieldParams::default())).unwrap()
    }

    #[test]
    fn zero_layer_model_has_no_server_material() {
        let q = quantized(&ModelGraph::new("empty", vec![3], vec![]));
        let (c, s, audit) = offline_phase(&q, &mut ChaCha20Rng::seed_from_u64(0)).unwrap();
        assert_eq!(s.elements(), 0);
        assert_eq!(c.triple_count() + s.triple_count(), 0);
        assert_eq!(audit.triples(), 0);
    }

    #[test]
    fn triple_counts_match_activation_sizes() {
        let q = quantized(&zoo::calibrated(zoo::cnn6(1), 16, 1.0, 2));
        let (c, s, audit) = offline_phase(&q, &mut ChaCha20Rng::seed_from_u64(1)).unwrap();
        let want: usize = q.activation_elements().iter().sum();
        assert_eq!(want, 4 * 64 + 8 * 16 + 16);
        assert_eq!(c.triple_count(), want);
        assert_eq!(s.triple_count(), want);
        assert!(audit.identities_hold());
        assert_eq!(audit.unguarded(), 0);
    }

    #[test]
    fn residual_models_stay_guarded() {
        for unit in [zoo::resnet_unit(4, 4, 3), zoo::pa_resnet_unit(4, 4, 3)] {
            let m = herpnize(&unit, SurgeryMode::Surgery).unwrap();
            let q = quantized(&zoo::calibrated(m, 8, 1.0, 4));
            let (_, _, audit) = offline_phase(&q, &mut ChaCha20Rng::seed_from_u64(2)).unwrap();
            assert!(audit.identities_hold());
            assert_eq!(audit.unguarded(), 0, "{audit:#?}");
        }
    }

    #[test]
    fn public_view_cannot_be_dealt() {
        let q = quantized(&zoo::calibrated(zoo::mlp3(2, 4, 2, 1), 16, 1.0, 2)).public_view();
        assert!(matches!(
            offline_phase(&q, &mut ChaCha20Rng::seed_from_u64(0)),
            Err(ProtocolError::Material { step: 2, .. })
        ));
    }

    #[test]
    fn material_file_roundtrip() {
        let q = quantized(&zoo::calibrated(zoo::mlp3(2, 4, 2, 1), 16, 1.0, 2));
        let (c, s, _) = offline_phase(&q, &mut ChaCha20Rng::seed_from_u64(3)).unwrap();
        for m in [c, s] {
            let bytes = m.to_bytes();
            let back = OfflineMaterial::read_from(&mut bytes.as_slice()).unwrap();
            assert_eq!(back, m);
        }
    }
}
