//! Two-party additive secret sharing over `Z_p`.

use crate::field::{FieldElement, FieldError};
use rand::Rng;
use serde::{Deserialize, Serialize};
use std::fmt;
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PartyId {
    Client,
    Server,
}

impl PartyId {
    pub fn peer(self) -> PartyId {
        match self {
            PartyId::Client => PartyId::Server,
            PartyId::Server => PartyId::Client,
        }
    }

    /// Public constants are added by the server only.
    pub fn adds_constants(self) -> bool {
        self == PartyId::Server
    }
}

impl fmt::Display for PartyId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PartyId::Client => f.write_str("client"),
            PartyId::Server => f.write_str("server"),
        }
    }
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SharingError {
    #[error("both shares belong to the {0}")]
    SameOwner(PartyId),
    #[error("shares of different owners combined in one linear form")]
    MixedOwnership,
    #[error("{shares} shares but {publics} coefficients")]
    LengthMismatch { shares: usize, publics: usize },
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// One party's additive share of a secret.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Share {
    pub owner: PartyId,
    pub value: FieldElement,
}

impl Share {
    pub fn new(owner: PartyId, value: FieldElement) -> Self {
        Share { owner, value }
    }
}

/// Split `x` as `(r, x - r)` with `r` uniform; the client gets `r`.
pub fn share<R: Rng + ?Sized>(x: FieldElement, rng: &mut R) -> (Share, Share) {
    let r = FieldElement::new(rng.random_range(0..x.modulus()), x.modulus());
    share_with_mask(x, r)
}

/// Deterministic split with a caller-chosen first share.
pub fn share_with_mask(x: FieldElement, r: FieldElement) -> (Share, Share) {
    (
        Share::new(PartyId::Client, r),
        Share::new(PartyId::Server, x - r),
    )
}

pub fn reconstruct(s1: Share, s2: Share) -> Result<FieldElement, SharingError> {
    if s1.owner == s2.owner {
        return Err(SharingError::SameOwner(s1.owner));
    }
    s1.value.check_same_field(s2.value)?;
    Ok(s1.value + s2.value)
}

/// Local linear form `sum(publics[i] * shares[i]) + constant`, where only the
/// server adds the constant. `owner` decides who evaluates when `shares` is empty.
pub fn share_linear(
    owner: PartyId,
    shares: &[Share],
    publics: &[FieldElement],
    constant: FieldElement,
) -> Result<Share, SharingError> {
    if shares.len() != publics.len() {
        return Err(SharingError::LengthMismatch {
            shares: shares.len(),
            publics: publics.len(),
        });
    }
    let mut acc = FieldElement::zero(constant.modulus());
    for (s, &c) in shares.iter().zip(publics) {
        if s.owner != owner {
            return Err(SharingError::MixedOwnership);
        }
        s.value.check_same_field(c)?;
        acc += c * s.value;
    }
    if owner.adds_constants() {
        constant.check_same_field(acc)?;
        acc += constant;
    }
    Ok(Share::new(owner, acc))
}
