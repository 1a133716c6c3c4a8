//! Length-prefixed message framing over an ordered byte stream.
//!
//! Frame layout (all little-endian):
//!
//! ```text
//! u32 length   total frame length, header included (= 5 + 8 * n)
//! u8  tag      message type
//! n * u64      payload words (field elements)
//! ```

use crate::meter::{CommMeter, Phase};
use sha2::{Digest, Sha256};
use std::collections::VecDeque;
use std::io::{self, Read, Write};
use std::sync::mpsc;
use std::time::Instant;
use thiserror::Error;

pub const HEADER_LEN: usize = 5;
/// Refuse frames above 1 GiB.
pub const MAX_FRAME: usize = 1 << 30;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum MessageType {
    Hello = 0,
    Open = 1,
    MaskedInput = 2,
    ActivationReturn = 3,
    Result = 4,
    Abort = 15,
}

impl MessageType {
    pub fn from_tag(tag: u8) -> Option<Self> {
        Some(match tag {
            0 => MessageType::Hello,
            1 => MessageType::Open,
            2 => MessageType::MaskedInput,
            3 => MessageType::ActivationReturn,
            4 => MessageType::Result,
            15 => MessageType::Abort,
            _ => return None,
        })
    }
}

#[derive(Debug, Error)]
pub enum WireError {
    #[error("i/o: {0}")]
    Io(#[from] io::Error),
    #[error("peer closed the connection")]
    Closed,
    #[error("unknown message tag {0}")]
    UnknownTag(u8),
    #[error("malformed frame length {0}")]
    BadLength(usize),
    #[error("expected {expected:?}, received {got:?}")]
    Unexpected {
        expected: MessageType,
        got: MessageType,
    },
    #[error("expected {expected} payload words, received {got}")]
    PayloadSize { expected: usize, got: usize },
    #[error("peer aborted at step {0}")]
    PeerAbort(u64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WireMessage {
    pub kind: MessageType,
    pub payload: Vec<u64>,
}

impl WireMessage {
    pub fn new(kind: MessageType, payload: Vec<u64>) -> Self {
        WireMessage { kind, payload }
    }

    /// Bytes on the wire for a payload of `words` elements.
    pub fn frame_len(words: usize) -> usize {
        HEADER_LEN + 8 * words
    }

    pub fn encode(&self) -> Vec<u8> {
        let len = Self::frame_len(self.payload.len());
        let mut out = Vec::with_capacity(len);
        out.extend_from_slice(&(len as u32).to_le_bytes());
        out.push(self.kind as u8);
        for w in &self.payload {
            out.extend_from_slice(&w.to_le_bytes());
        }
        out
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Self, WireError> {
        let mut header = [0u8; HEADER_LEN];
        if let Err(e) = r.read_exact(&mut header) {
            return Err(if e.kind() == io::ErrorKind::UnexpectedEof {
                WireError::Closed
            } else {
                WireError::Io(e)
            });
        }
        let len = u32::from_le_bytes(header[..4].try_into().unwrap()) as usize;
        if len < HEADER_LEN || !(len - HEADER_LEN).is_multiple_of(8) || len > MAX_FRAME {
            return Err(WireError::BadLength(len));
        }
        let kind = MessageType::from_tag(header[4]).ok_or(WireError::UnknownTag(header[4]))?;
        let mut body = vec![0u8; len - HEADER_LEN];
        r.read_exact(&mut body).map_err(|e| {
            if e.kind() == io::ErrorKind::UnexpectedEof {
                WireError::Closed
            } else {
                WireError::Io(e)
            }
        })?;
        let payload = body
            .chunks_exact(8)
            .map(|c| u64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(WireMessage { kind, payload })
    }
}

/// A metered, framed endpoint over any ordered duplex byte stream.
///
/// Every sent frame is hashed into a running digest, so two sessions with
/// identical traffic report identical digests regardless of transport.
pub struct Channel<S> {
    stream: S,
    meter: CommMeter,
    sent_digest: Sha256,
    recv_digest: Sha256,
}

impl<S: Read + Write> Channel<S> {
    pub fn new(stream: S, meter: CommMeter) -> Self {
        Channel {
            stream,
            meter,
            sent_digest: Sha256::new(),
            recv_digest: Sha256::new(),
        }
    }

    pub fn meter(&self) -> &CommMeter {
        &self.meter
    }

    pub fn meter_mut(&mut self) -> &mut CommMeter {
        &mut self.meter
    }

    /// Attribute subsequent traffic to `step`.
    pub fn enter_step(&mut self, phase: Phase, step: usize, label: &str) {
        self.meter.enter(phase, step, label);
    }

    pub fn send(&mut self, msg: &WireMessage) -> Result<(), WireError> {
        let bytes = msg.encode();
        let start = Instant::now();
        self.stream.write_all(&bytes).map_err(|e| match e.kind() {
            io::ErrorKind::BrokenPipe | io::ErrorKind::ConnectionReset => WireError::Closed,
            _ => WireError::Io(e),
        })?;
        self.stream.flush()?;
        self.sent_digest.update(&bytes);
        self.meter.record_sent(bytes.len(), start.elapsed());
        Ok(())
    }

    pub fn recv(&mut self) -> Result<WireMessage, WireError> {
        let start = Instant::now();
        let msg = WireMessage::read_from(&mut self.stream)?;
        self.recv_digest.update(msg.encode());
        self.meter
            .record_received(WireMessage::frame_len(msg.payload.len()), start.elapsed());
        Ok(msg)
    }

    /// Receive a message of the given kind (and payload size, when given).
    /// An `Abort` from the peer surfaces as [`WireError::PeerAbort`].
    pub fn expect(
        &mut self,
        kind: MessageType,
        words: Option<usize>,
    ) -> Result<Vec<u64>, WireError> {
        let msg = self.recv()?;
        if msg.kind == MessageType::Abort && kind != MessageType::Abort {
            return Err(WireError::PeerAbort(msg.payload.first().copied().unwrap_or(0)));
        }
        if msg.kind != kind {
            return Err(WireError::Unexpected {
                expected: kind,
                got: msg.kind,
            });
        }
        if let Some(n) = words {
            if msg.payload.len() != n {
                return Err(WireError::PayloadSize {
                    expected: n,
                    got: msg.payload.len(),
                });
            }
        }
        Ok(msg.payload)
    }

    /// Send, and if the peer is already gone, look for an abort it left behind.
    pub fn send_or_abort(&mut self, msg: &WireMessage) -> Result<(), WireError> {
        match self.send(msg) {
            Ok(()) => Ok(()),
            Err(WireError::Closed) => match self.recv() {
                Ok(m) if m.kind == MessageType::Abort => Err(WireError::PeerAbort(
                    m.payload.first().copied().unwrap_or(0),
                )),
                _ => Err(WireError::Closed),
            },
            Err(e) => Err(e),
        }
    }

    pub fn sent_digest(&self) -> [u8; 32] {
        self.sent_digest.clone().finalize().into()
    }

    pub fn received_digest(&self) -> [u8; 32] {
        self.recv_digest.clone().finalize().into()
    }

    pub fn into_parts(self) -> (S, CommMeter) {
        (self.stream, self.meter)
    }
}

/// One end of an in-process duplex byte pipe.
pub struct PipeEnd {
    tx: mpsc::Sender<Vec<u8>>,
    rx: mpsc::Receiver<Vec<u8>>,
    pending: VecDeque<u8>,
}

/// Connected pair of in-process byte streams.
pub fn duplex() -> (PipeEnd, PipeEnd) {
    let (tx_a, rx_b) = mpsc::channel();
    let (tx_b, rx_a) = mpsc::channel();
    (
        PipeEnd {
            tx: tx_a,
            rx: rx_a,
            pending: VecDeque::new(),
        },
        PipeEnd {
            tx: tx_b,
            rx: rx_b,
            pending: VecDeque::new(),
        },
    )
}

impl Read for PipeEnd {
    fn read(&mut self, buf: &mut [u8]) -> io::Result<usize> {
        if buf.is_empty() {
            return Ok(0);
        }
        if self.pending.is_empty() {
            match self.rx.recv() {
                Ok(chunk) => self.pending.extend(chunk),
                Err(_) => return Ok(0),
            }
        }
        let n = buf.len().min(self.pending.len());
        for (dst, src) in buf.iter_mut().zip(self.pending.drain(..n)) {
            *dst = src;
        }
        Ok(n)
    }
}

impl Write for PipeEnd {
    fn write(&mut self, buf: &[u8]) -> io::Result<usize> {
        self.tx
            .send(buf.to_vec())
            .map_err(|_| io::Error::from(io::ErrorKind::BrokenPipe))?;
        Ok(buf.len())
    }

    fn flush(&mut self) -> io::Result<()> {
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sharing::PartyId;

    #[test]
    fn frame_layout_is_exact() {
        let msg = WireMessage::new(MessageType::Open, vec![1, 0x0102030405060708]);
        let bytes = msg.encode();
        assert_eq!(bytes.len(), 21);
        assert_eq!(&bytes[..4], &21u32.to_le_bytes());
        assert_eq!(bytes[4], 1);
        assert_eq!(&bytes[5..13], &1u64.to_le_bytes());
        assert_eq!(&bytes[13..], &[8, 7, 6, 5, 4, 3, 2, 1]);
        let back = WireMessage::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, msg);
    }

    #[test]
    fn unknown_tag_and_bad_length() {
        let mut bytes = WireMessage::new(MessageType::Result, vec![]).encode();
        bytes[4] = 9;
        assert!(matches!(
            WireMessage::read_from(&mut bytes.as_slice()),
            Err(WireError::UnknownTag(9))
        ));
        let mut bytes = WireMessage::new(MessageType::Result, vec![3]).encode();
        bytes[0] = 6;
        assert!(matches!(
            WireMessage::read_from(&mut bytes.as_slice()),
            Err(WireError::BadLength(6))
        ));
        let empty: &[u8] = &[];
        assert!(matches!(
            WireMessage::read_from(&mut &*empty),
            Err(WireError::Closed)
        ));
    }

    #[test]
    fn pipe_carries_frames_and_meters() {
        let (a, b) = duplex();
        let mut ca = Channel::new(a, CommMeter::new(PartyId::Client));
        let mut cb = Channel::new(b, CommMeter::new(PartyId::Server));
        ca.enter_step(Phase::Online, 3, "test");
        ca.send(&WireMessage::new(MessageType::Open, vec![5, 6, 7]))
            .unwrap();
        let got = cb.expect(MessageType::Open, Some(3)).unwrap();
        assert_eq!(got, vec![5, 6, 7]);
        let t = ca.meter().transcript();
        assert_eq!(t.total_bytes_sent(Phase::Online), 29);
        assert_eq!(ca.sent_digest(), cb.received_digest());
    }

    #[test]
    fn abort_is_surfaced() {
        let (a, b) = duplex();
        let mut ca = Channel::new(a, CommMeter::new(PartyId::Client));
        let mut cb = Channel::new(b, CommMeter::new(PartyId::Server));
        ca.send(&WireMessage::new(MessageType::Abort, vec![4]))
            .unwrap();
        drop(ca);
        assert!(matches!(
            cb.expect(MessageType::Open, None),
            Err(WireError::PeerAbort(4))
        ));
        assert!(matches!(cb.recv(), Err(WireError::Closed)));
    }
}
