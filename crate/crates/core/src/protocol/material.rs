//! Per-party offline material and its file format.
//!
//! ```text
//! "AESP" | version u8 = 1 | kind u8 = 0x10 | party u8 | modulus u64
//! | frac_bits u8 | model hash u64 | steps u64 | sections u64
//! section: tag u8 | step u64 | count u64 | count * u64
//! ```
//!
//! Tags: 1 input mask, 2 linear share, 3 triple `a`, 4 triple `a^2`,
//! 5 activation return mask. Integers are little-endian.

use super::ProtocolError;
use crate::beaver::{SquareTriple, TripleBatch, FILE_VERSION, MAGIC};
use crate::field::{FieldElement, FieldParams};
use crate::sharing::PartyId;
use std::io::{Read, Write};

const KIND_MATERIAL: u8 = 0x10;

const TAG_INPUT: u8 = 1;
const TAG_LINEAR: u8 = 2;
const TAG_TRIPLE_A: u8 = 3;
const TAG_TRIPLE_A2: u8 = 4;
const TAG_RETURN: u8 = 5;

#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub enum StepMaterial {
    #[default]
    Empty,
    /// Client only: the input mask `r`.
    InputMask(Vec<FieldElement>),
    /// Client: `W r - s`. Server: `s`.
    LinearShare(Vec<FieldElement>),
    /// Square triples, one per element. The client also holds the return
    /// mask `R`; the server's `return_mask` is empty.
    Activation {
        triples: TripleBatch,
        return_mask: Vec<FieldElement>,
    },
}

impl StepMaterial {
    pub fn elements(&self) -> usize {
        match self {
            StepMaterial::Empty => 0,
            StepMaterial::InputMask(v) | StepMaterial::LinearShare(v) => v.len(),
            StepMaterial::Activation {
                triples,
                return_mask,
            } => 2 * triples.len() + return_mask.len(),
        }
    }
}

/// Everything one party receives from the dealer, indexed by program op.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OfflineMaterial {
    pub party: PartyId,
    pub params: FieldParams,
    pub model_hash: u64,
    pub steps: Vec<StepMaterial>,
}

fn party_tag(p: PartyId) -> u8 {
    match p {
        PartyId::Client => 0,
        PartyId::Server => 1,
    }
}

fn put_u64(w: &mut impl Write, v: u64) -> std::io::Result<()> {
    w.write_all(&v.to_le_bytes())
}

fn get_u64(r: &mut impl Read) -> Result<u64, ProtocolError> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    Ok(u64::from_le_bytes(b))
}

fn get_u8(r: &mut impl Read) -> Result<u8, ProtocolError> {
    let mut b = [0u8; 1];
    r.read_exact(&mut b)?;
    Ok(b[0])
}

impl OfflineMaterial {
    pub fn empty(party: PartyId, params: FieldParams, model_hash: u64, steps: usize) -> Self {
        OfflineMaterial {
            party,
            params,
            model_hash,
            steps: vec![StepMaterial::Empty; steps],
        }
    }

    /// Field elements held, over all steps.
    pub fn elements(&self) -> usize {
        self.steps.iter().map(StepMaterial::elements).sum()
    }

    pub fn triple_count(&self) -> usize {
        self.steps
            .iter()
            .map(|s| match s {
                StepMaterial::Activation { triples, .. } => triples.len(),
                _ => 0,
            })
            .sum()
    }

    fn sections(&self) -> Vec<(u8, usize, Vec<FieldElement>)> {
        let mut out = Vec::new();
        for (i, s) in self.steps.iter().enumerate() {
            match s {
                StepMaterial::Empty => {}
                StepMaterial::InputMask(v) => out.push((TAG_INPUT, i, v.clone())),
                StepMaterial::LinearShare(v) => out.push((TAG_LINEAR, i, v.clone())),
                StepMaterial::Activation {
                    triples,
                    return_mask,
                } => {
                    let (a, a2) = (0..triples.len())
                        .map(|j| {
                            let t = triples.square(j);
                            (t.a_share, t.a2_share)
                        })
                        .unzip();
                    out.push((TAG_TRIPLE_A, i, a));
                    out.push((TAG_TRIPLE_A2, i, a2));
                    if !return_mask.is_empty() {
                        out.push((TAG_RETURN, i, return_mask.clone()));
                    }
                }
            }
        }
        out
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        let sections = self.sections();
        w.write_all(MAGIC)?;
        w.write_all(&[FILE_VERSION, KIND_MATERIAL, party_tag(self.party)])?;
        put_u64(w, self.params.modulus())?;
        w.write_all(&[self.params.frac_bits() as u8])?;
        put_u64(w, self.model_hash)?;
        put_u64(w, self.steps.len() as u64)?;
        put_u64(w, sections.len() as u64)?;
        for (tag, step, v) in sections {
            w.write_all(&[tag])?;
            put_u64(w, step as u64)?;
            put_u64(w, v.len() as u64)?;
            for e in v {
                w.write_all(&e.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        self.write_to(&mut out).expect("writing to a Vec cannot fail");
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, ProtocolError> {
        let bad = |m: String| ProtocolError::Format(m);
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MAGIC {
            return Err(bad("bad magic".into()));
        }
        let (version, kind) = (get_u8(r)?, get_u8(r)?);
        if version != FILE_VERSION || kind != KIND_MATERIAL {
            return Err(bad(format!("unsupported version {version} / kind {kind:#x}")));
        }
        let party = match get_u8(r)? {
            0 => PartyId::Client,
            1 => PartyId::Server,
            t => return Err(bad(format!("unknown party {t}"))),
        };
        let modulus = get_u64(r)?;
        let frac_bits = get_u8(r)? as u32;
        let params =
            FieldParams::new(modulus, frac_bits).map_err(|e| bad(format!("field parameters: {e}")))?;
        let model_hash = get_u64(r)?;
        let steps = get_u64(r)? as usize;
        let sections = get_u64(r)?;
        let mut m = OfflineMaterial::empty(party, params, model_hash, steps);
        let mut pending_a: Option<(usize, Vec<FieldElement>)> = None;
        for _ in 0..sections {
            let tag = get_u8(r)?;
            let step = get_u64(r)? as usize;
            let count = get_u64(r)? as usize;
            if step >= steps {
                return Err(bad(format!("section for step {step} of {steps}")));
            }
            let mut v = Vec::with_capacity(count.min(1 << 24));
            for _ in 0..count {
                let x = get_u64(r)?;
                if x >= modulus {
                    return Err(bad(format!("element {x} not reduced mod {modulus}")));
                }
                v.push(FieldElement::new(x, modulus));
            }
            match tag {
                TAG_INPUT => m.steps[step] = StepMaterial::InputMask(v),
                TAG_LINEAR => m.steps[step] = StepMaterial::LinearShare(v),
                TAG_TRIPLE_A => pending_a = Some((step, v)),
                TAG_TRIPLE_A2 => {
                    let Some((s, a)) = pending_a.take().filter(|(s, a)| *s == step && a.len() == count)
                    else {
                        return Err(bad(format!("unpaired triple section at step {step}")));
                    };
                    let triples = a
                        .into_iter()
                        .zip(v)
                        .map(|(a_share, a2_share)| SquareTriple { a_share, a2_share })
                        .collect();
                    m.steps[s] = StepMaterial::Activation {
                        triples: TripleBatch::from_squares(triples),
                        return_mask: Vec::new(),
                    };
                }
                TAG_RETURN => match &mut m.steps[step] {
                    StepMaterial::Activation { return_mask, .. } => *return_mask = v,
                    _ => return Err(bad(format!("return mask without triples at step {step}"))),
                },
                t => return Err(bad(format!("unknown section tag {t}"))),
            }
        }
        Ok(m)
    }
}
