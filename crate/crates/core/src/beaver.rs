//! Dealer-issued correlated randomness and the online multiplication protocols.
//!
//! A multiplication triple is `(a, b, ab)`, a square triple `(a, a^2)`; each
//! party receives additive shares. Online, a product of shared values costs
//! one opening round: two field elements per party for `x * y`, one for `x^2`.

use crate::field::{FieldElement, FieldParams};
use crate::sharing::PartyId;
use crate::wire::{Channel, MessageType, WireError, WireMessage};
use rand::Rng;
use std::io::{self, Read, Write};
use thiserror::Error;

/// File magic shared by triple and offline-material files.
pub const MAGIC: &[u8; 4] = b"AESP";
pub const FILE_VERSION: u8 = 1;

#[derive(Debug, Error)]
pub enum BeaverError {
    #[error("triple batch exhausted: need {needed}, {available} left")]
    Exhausted { needed: usize, available: usize },
    #[error("expected {expected:?} triples, batch holds {got:?}")]
    WrongKind { expected: TripleKind, got: TripleKind },
    #[error("operand lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error(transparent)]
    Wire(#[from] WireError),
    #[error("triple file: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TripleKind {
    Square,
    Mul,
}

impl TripleKind {
    fn tag(self) -> u8 {
        match self {
            TripleKind::Square => 0,
            TripleKind::Mul => 1,
        }
    }

    fn arity(self) -> usize {
        match self {
            TripleKind::Square => 2,
            TripleKind::Mul => 3,
        }
    }
}

/// One party's shares of a square triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SquareTriple {
    pub a_share: FieldElement,
    pub a2_share: FieldElement,
}

/// One party's shares of a multiplication triple.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MulTriple {
    pub a_share: FieldElement,
    pub b_share: FieldElement,
    pub ab_share: FieldElement,
}

/// A party's ordered supply of triples. Consumed front to back, once.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TripleBatch {
    kind: TripleKind,
    a: Vec<FieldElement>,
    /// Empty for square batches.
    b: Vec<FieldElement>,
    /// `a^2` or `ab`.
    c: Vec<FieldElement>,
    cursor: usize,
}

impl TripleBatch {
    pub fn empty(kind: TripleKind) -> Self {
        TripleBatch {
            kind,
            a: Vec::new(),
            b: Vec::new(),
            c: Vec::new(),
            cursor: 0,
        }
    }

    pub fn from_squares(triples: Vec<SquareTriple>) -> Self {
        TripleBatch {
            kind: TripleKind::Square,
            a: triples.iter().map(|t| t.a_share).collect(),
            b: Vec::new(),
            c: triples.iter().map(|t| t.a2_share).collect(),
            cursor: 0,
        }
    }

    pub fn from_muls(triples: Vec<MulTriple>) -> Self {
        TripleBatch {
            kind: TripleKind::Mul,
            a: triples.iter().map(|t| t.a_share).collect(),
            b: triples.iter().map(|t| t.b_share).collect(),
            c: triples.iter().map(|t| t.ab_share).collect(),
            cursor: 0,
        }
    }

    pub fn kind(&self) -> TripleKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.a.len()
    }

    pub fn is_empty(&self) -> bool {
        self.a.is_empty()
    }

    pub fn remaining(&self) -> usize {
        self.a.len() - self.cursor
    }

    pub fn square(&self, i: usize) -> SquareTriple {
        SquareTriple {
            a_share: self.a[i],
            a2_share: self.c[i],
        }
    }

    pub fn mul(&self, i: usize) -> MulTriple {
        MulTriple {
            a_share: self.a[i],
            b_share: self.b[i],
            ab_share: self.c[i],
        }
    }

    fn take(&mut self, kind: TripleKind, n: usize) -> Result<std::ops::Range<usize>, BeaverError> {
        if self.kind != kind {
            return Err(BeaverError::WrongKind {
                expected: kind,
                got: self.kind,
            });
        }
        if self.remaining() < n {
            return Err(BeaverError::Exhausted {
                needed: n,
                available: self.remaining(),
            });
        }
        let r = self.cursor..self.cursor + n;
        self.cursor += n;
        Ok(r)
    }

    pub fn take_squares(&mut self, n: usize) -> Result<Vec<SquareTriple>, BeaverError> {
        let r = self.take(TripleKind::Square, n)?;
        Ok(r.map(|i| self.square(i)).collect())
    }

    pub fn take_muls(&mut self, n: usize) -> Result<Vec<MulTriple>, BeaverError> {
        let r = self.take(TripleKind::Mul, n)?;
        Ok(r.map(|i| self.mul(i)).collect())
    }

    /// Serialized size in bytes.
    pub fn file_len(&self) -> usize {
        4 + 1 + 1 + 8 + self.len() * self.kind.arity() * 8
    }

    /// `AESP | version | kind | count (u64 LE) | records`.
    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        w.write_all(MAGIC)?;
        w.write_all(&[FILE_VERSION, self.kind.tag()])?;
        w.write_all(&(self.len() as u64).to_le_bytes())?;
        for i in 0..self.len() {
            w.write_all(&self.a[i].to_le_bytes())?;
            if self.kind == TripleKind::Mul {
                w.write_all(&self.b[i].to_le_bytes())?;
            }
            w.write_all(&self.c[i].to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R, params: FieldParams) -> Result<Self, BeaverError> {
        let mut head = [0u8; 14];
        r.read_exact(&mut head)?;
        if &head[..4] != MAGIC {
            return Err(BeaverError::Format("bad magic".into()));
        }
        if head[4] != FILE_VERSION {
            return Err(BeaverError::Format(format!("unsupported version {}", head[4])));
        }
        let kind = match head[5] {
            0 => TripleKind::Square,
            1 => TripleKind::Mul,
            k => return Err(BeaverError::Format(format!("unknown triple kind {k}"))),
        };
        let count = u64::from_le_bytes(head[6..14].try_into().unwrap()) as usize;
        let p = params.modulus();
        let mut batch = TripleBatch::empty(kind);
        let mut word = [0u8; 8];
        let mut next = |r: &mut R| -> Result<FieldElement, BeaverError> {
            r.read_exact(&mut word)?;
            let v = u64::from_le_bytes(word);
            if v >= p {
                return Err(BeaverError::Format(format!("element {v} not reduced mod {p}")));
            }
            Ok(FieldElement::new(v, p))
        };
        for _ in 0..count {
            batch.a.push(next(r)?);
            if kind == TripleKind::Mul {
                batch.b.push(next(r)?);
            }
            batch.c.push(next(r)?);
        }
        Ok(batch)
    }
}

fn uniform<R: Rng + ?Sized>(p: u64, rng: &mut R) -> FieldElement {
    FieldElement::new(rng.random_range(0..p), p)
}

/// Deal `n` triples, returning the (client, server) batches.
pub fn deal_triples<R: Rng + ?Sized>(
    kind: TripleKind,
    n: usize,
    params: FieldParams,
    rng: &mut R,
) -> (TripleBatch, TripleBatch) {
    let p = params.modulus();
    match kind {
        TripleKind::Square => {
            let secrets: Vec<FieldElement> = (0..n).map(|_| uniform(p, rng)).collect();
            deal_squares_for(&secrets, rng)
        }
        TripleKind::Mul => {
            let mut client = Vec::with_capacity(n);
            let mut server = Vec::with_capacity(n);
            for _ in 0..n {
                let a = uniform(p, rng);
                let b = uniform(p, rng);
                let (ac, bc, cc) = (uniform(p, rng), uniform(p, rng), uniform(p, rng));
                client.push(MulTriple {
                    a_share: ac,
                    b_share: bc,
                    ab_share: cc,
                });
                server.push(MulTriple {
                    a_share: a - ac,
                    b_share: b - bc,
                    ab_share: a * b - cc,
                });
            }
            (TripleBatch::from_muls(client), TripleBatch::from_muls(server))
        }
    }
}

/// Square triples around caller-chosen secrets `a` (shares still random).
pub fn deal_squares_for<R: Rng + ?Sized>(
    secrets: &[FieldElement],
    rng: &mut R,
) -> (TripleBatch, TripleBatch) {
    let mut client = Vec::with_capacity(secrets.len());
    let mut server = Vec::with_capacity(secrets.len());
    for &a in secrets {
        let p = a.modulus();
        let ac = uniform(p, rng);
        let a2c = uniform(p, rng);
        client.push(SquareTriple {
            a_share: ac,
            a2_share: a2c,
        });
        server.push(SquareTriple {
            a_share: a - ac,
            a2_share: a * a - a2c,
        });
    }
    (
        TripleBatch::from_squares(client),
        TripleBatch::from_squares(server),
    )
}

/// Client sends first, server answers: keeps the stream strictly alternating.
fn exchange<S: Read + Write>(
    party: PartyId,
    mine: Vec<u64>,
    chan: &mut Channel<S>,
) -> Result<Vec<u64>, WireError> {
    let n = mine.len();
    let msg = WireMessage::new(MessageType::Open, mine);
    match party {
        PartyId::Client => {
            chan.send_or_abort(&msg)?;
            chan.expect(MessageType::Open, Some(n))
        }
        PartyId::Server => {
            let theirs = chan.expect(MessageType::Open, Some(n))?;
            chan.send_or_abort(&msg)?;
            Ok(theirs)
        }
    }
}

/// Open `mine + theirs` element-wise.
fn open<S: Read + Write>(
    party: PartyId,
    mine: &[FieldElement],
    chan: &mut Channel<S>,
) -> Result<Vec<FieldElement>, BeaverError> {
    let Some(first) = mine.first() else {
        return Ok(Vec::new());
    };
    let p = first.modulus();
    let theirs = exchange(party, mine.iter().map(|e| e.value()).collect(), chan)?;
    Ok(mine
        .iter()
        .zip(theirs)
        .map(|(&m, t)| m + FieldElement::new(t, p))
        .collect())
}

/// Element-wise product of shared vectors, one triple per element.
///
/// Each party sends one `Open` message carrying `2n` elements: its shares of
/// `e = x - a` followed by `d = y - b`.
pub fn secure_mul<S: Read + Write>(
    party: PartyId,
    x: &[FieldElement],
    y: &[FieldElement],
    triples: &mut TripleBatch,
    chan: &mut Channel<S>,
) -> Result<Vec<FieldElement>, BeaverError> {
    if x.len() != y.len() {
        return Err(BeaverError::LengthMismatch(x.len(), y.len()));
    }
    let ts = triples.take_muls(x.len())?;
    let mut masked: Vec<FieldElement> = x.iter().zip(&ts).map(|(&x, t)| x - t.a_share).collect();
    masked.extend(y.iter().zip(&ts).map(|(&y, t)| y - t.b_share));
    let opened = open(party, &masked, chan)?;
    let (e, d) = opened.split_at(x.len());
    Ok(ts
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut z = d[i] * t.a_share + e[i] * t.b_share + t.ab_share;
            if party.adds_constants() {
                z += e[i] * d[i];
            }
            z
        })
        .collect())
}

/// Element-wise square of a shared vector, one square triple per element.
///
/// Each party sends one `Open` message with `n` elements (its shares of
/// `e = x - a`); then `x^2 = e^2 + 2e<a> + <a^2>`.
pub fn secure_square<S: Read + Write>(
    party: PartyId,
    x: &[FieldElement],
    triples: &mut TripleBatch,
    chan: &mut Channel<S>,
) -> Result<Vec<FieldElement>, BeaverError> {
    let ts = triples.take_squares(x.len())?;
    let masked: Vec<FieldElement> = x.iter().zip(&ts).map(|(&x, t)| x - t.a_share).collect();
    let e = open(party, &masked, chan)?;
    Ok(square_from_opened(party, &e, &ts))
}

/// Local combination step of [`secure_square`] given the opened `e`.
pub fn square_from_opened(
    party: PartyId,
    opened: &[FieldElement],
    triples: &[SquareTriple],
) -> Vec<FieldElement> {
    opened
        .iter()
        .zip(triples)
        .map(|(&e, t)| {
            let mut z = (e + e) * t.a_share + t.a2_share;
            if party.adds_constants() {
                z += e * e;
            }
            z
        })
        .collect()
}

/// Local truncation of one share from scale `2f` to `f`.
///
/// Client: `floor(v / 2^f)`; server: `p - floor((p - v) / 2^f)`. The sum is
/// the plaintext floor or one LSB above it, unless the client share falls in
/// a window of width `|x|` next to the wrap point (probability `|x| / p`).
pub fn truncate_share(party: PartyId, v: FieldElement, frac_bits: u32) -> FieldElement {
    let p = v.modulus();
    match party {
        PartyId::Client => FieldElement::new(v.value() >> frac_bits, p),
        PartyId::Server => {
            let t = (p - v.value()) >> frac_bits;
            FieldElement::new(p - t, p)
        }
    }
}

pub fn truncate_shares(party: PartyId, v: &[FieldElement], frac_bits: u32) -> Vec<FieldElement> {
    v.iter().map(|&e| truncate_share(party, e, frac_bits)).collect()
}

/// Whether local truncation of `x = c + s` is exact to one LSB, given the
/// client share `c` and the signed secret `x`.
pub fn truncation_is_safe(client_share: FieldElement, secret: i64) -> bool {
    let c = client_share.value() as i128;
    let x = secret as i128;
    let p = client_share.modulus() as i128;
    c > x && c <= p + x
}
