//! Two-party private inference over a [`QuantizedModel`].
//!
//! The client holds the input and the public view of the model; the server
//! holds the full model. A trusted dealer prepares correlated randomness for
//! both ahead of time ([`offline_phase`]). Online, linear steps run locally on
//! masked values and each activation costs one square-triple opening plus one
//! masked return from client to server.
//!
//! Online step `0` is the hello exchange; program op `i` runs as step `i + 1`.

mod dealer;
mod material;
mod online;

pub use dealer::{offline_phase, AuditEntry, DealerAudit};
pub use material::{OfflineMaterial, StepMaterial};
pub use online::{
    analytic_online_bytes, loopback_run, masked_linear, run_client, run_pair, run_server,
    secure_quadratic, tcp_run, PairRun, PartyRun, StepBytes,
};

use crate::beaver::BeaverError;
use crate::nn::NnError;
use crate::sharing::PartyId;
use crate::wire::WireError;
use std::io;
use thiserror::Error;

pub const PROTOCOL_VERSION: u64 = 1;

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("step {step} ({label}): {source}")]
    Wire {
        step: usize,
        label: &'static str,
        #[source]
        source: WireError,
    },
    #[error("step {step} ({label}): {source}")]
    Triples {
        step: usize,
        label: &'static str,
        #[source]
        source: BeaverError,
    },
    #[error("peer aborted at step {0}")]
    PeerAbort(usize),
    #[error("aborted locally at step {0}")]
    Aborted(usize),
    #[error("hello mismatch: {0}")]
    Hello(String),
    #[error("step {step}: offline material {reason}")]
    Material { step: usize, reason: String },
    #[error("input: {0}")]
    Input(String),
    #[error("material file: {0}")]
    Format(String),
    #[error(transparent)]
    Model(#[from] NnError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl ProtocolError {
    /// Step at which the session was aborted, by either side.
    pub fn abort_step(&self) -> Option<usize> {
        match self {
            ProtocolError::PeerAbort(k) | ProtocolError::Aborted(k) => Some(*k),
            _ => None,
        }
    }

    fn from_wire(step: usize, label: &'static str, e: WireError) -> Self {
        match e {
            WireError::PeerAbort(k) => ProtocolError::PeerAbort(k as usize),
            source => ProtocolError::Wire {
                step,
                label,
                source,
            },
        }
    }

    fn from_beaver(step: usize, label: &'static str, e: BeaverError) -> Self {
        match e {
            BeaverError::Wire(w) => Self::from_wire(step, label, w),
            source => ProtocolError::Triples {
                step,
                label,
                source,
            },
        }
    }
}

/// Knobs shared by both parties of a run.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionConfig {
    /// Make `party` abort at online step `k`.
    pub abort: Option<(PartyId, usize)>,
}

impl SessionConfig {
    pub fn abort_at(party: PartyId, step: usize) -> Self {
        SessionConfig {
            abort: Some((party, step)),
        }
    }
}
