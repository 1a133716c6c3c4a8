//! Communication metering: per phase, per step, per party message and byte counts.

use crate::sharing::PartyId;
use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::time::{Duration, Instant};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Offline,
    Online,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
struct StepStats {
    label: String,
    messages_sent: u64,
    bytes_sent: u64,
    messages_received: u64,
    bytes_received: u64,
    elapsed: Duration,
}

/// Counts traffic as it is serialized. Never touches the bytes themselves.
#[derive(Debug, Clone)]
pub struct CommMeter {
    party: PartyId,
    current: Option<(Phase, usize)>,
    started: Option<Instant>,
    steps: BTreeMap<(Phase, usize), StepStats>,
    digest: Option<String>,
}

impl CommMeter {
    pub fn new(party: PartyId) -> Self {
        CommMeter {
            party,
            current: None,
            started: None,
            steps: BTreeMap::new(),
            digest: None,
        }
    }

    pub fn party(&self) -> PartyId {
        self.party
    }

    fn close_current(&mut self) {
        if let (Some(key), Some(t)) = (self.current, self.started.take()) {
            if let Some(s) = self.steps.get_mut(&key) {
                s.elapsed += t.elapsed();
            }
        }
    }

    pub fn enter(&mut self, phase: Phase, step: usize, label: &str) {
        self.close_current();
        let entry = self.steps.entry((phase, step)).or_default();
        if entry.label.is_empty() {
            entry.label = label.to_string();
        }
        self.current = Some((phase, step));
        self.started = Some(Instant::now());
    }

    /// Stop the wall clock of the current step.
    pub fn finish(&mut self) {
        self.close_current();
        self.current = None;
    }

    fn current_entry(&mut self) -> &mut StepStats {
        let key = self.current.unwrap_or((Phase::Online, usize::MAX));
        self.steps.entry(key).or_default()
    }

    pub fn record_sent(&mut self, bytes: usize, _elapsed: Duration) {
        let e = self.current_entry();
        e.messages_sent += 1;
        e.bytes_sent += bytes as u64;
    }

    pub fn record_received(&mut self, bytes: usize, _elapsed: Duration) {
        let e = self.current_entry();
        e.messages_received += 1;
        e.bytes_received += bytes as u64;
    }

    /// Record bytes for a step without a live channel (offline material).
    pub fn record_offline(&mut self, step: usize, label: &str, bytes: u64) {
        let e = self.steps.entry((Phase::Offline, step)).or_default();
        if e.label.is_empty() {
            e.label = label.to_string();
        }
        e.messages_sent += 1;
        e.bytes_sent += bytes;
    }

    pub fn set_digest(&mut self, digest: [u8; 32]) {
        self.digest = Some(hex(&digest));
    }

    pub fn transcript(&self) -> Transcript {
        let records = self
            .steps
            .iter()
            .map(|(&(phase, step), s)| TranscriptRecord {
                phase,
                step,
                label: s.label.clone(),
                party: self.party,
                messages_sent: s.messages_sent,
                bytes_sent: s.bytes_sent,
                messages_received: s.messages_received,
                bytes_received: s.bytes_received,
                millis: s.elapsed.as_secs_f64() * 1e3,
            })
            .collect();
        let mut digests = BTreeMap::new();
        if let Some(d) = &self.digest {
            digests.insert(self.party, d.clone());
        }
        Transcript { records, digests }
    }
}

pub(crate) fn hex(bytes: &[u8]) -> String {
    let mut s = String::with_capacity(bytes.len() * 2);
    for b in bytes {
        let _ = write!(s, "{b:02x}");
    }
    s
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptRecord {
    pub phase: Phase,
    pub step: usize,
    pub label: String,
    pub party: PartyId,
    pub messages_sent: u64,
    pub bytes_sent: u64,
    pub messages_received: u64,
    pub bytes_received: u64,
    pub millis: f64,
}

/// Traffic record for one or both parties of a session.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Transcript {
    pub records: Vec<TranscriptRecord>,
    /// SHA-256 of every byte each party sent, hex encoded.
    pub digests: BTreeMap<PartyId, String>,
}

impl Transcript {
    pub fn merge(mut self, other: Transcript) -> Transcript {
        self.records.extend(other.records);
        self.records
            .sort_by_key(|a| (a.phase, a.step, a.party));
        self.digests.extend(other.digests);
        self
    }

    pub fn total_bytes_sent(&self, phase: Phase) -> u64 {
        self.records
            .iter()
            .filter(|r| r.phase == phase)
            .map(|r| r.bytes_sent)
            .sum()
    }

    pub fn party_bytes_sent(&self, phase: Phase, party: PartyId) -> u64 {
        self.records
            .iter()
            .filter(|r| r.phase == phase && r.party == party)
            .map(|r| r.bytes_sent)
            .sum()
    }

    /// Bytes sent by `party` while executing `step`.
    pub fn step_bytes(&self, phase: Phase, step: usize, party: PartyId) -> u64 {
        self.records
            .iter()
            .filter(|r| r.phase == phase && r.step == step && r.party == party)
            .map(|r| r.bytes_sent)
            .sum()
    }

    pub fn step_messages(&self, phase: Phase, step: usize, party: PartyId) -> u64 {
        self.records
            .iter()
            .filter(|r| r.phase == phase && r.step == step && r.party == party)
            .map(|r| r.messages_sent)
            .sum()
    }

    /// Everything except wall-clock timings; equal fingerprints mean
    /// byte-identical traffic.
    pub fn fingerprint(&self) -> String {
        let mut s = String::new();
        for r in &self.records {
            let _ = writeln!(
                s,
                "{:?} {} {} {} {} {} {} {}",
                r.phase,
                r.step,
                r.label,
                r.party,
                r.messages_sent,
                r.bytes_sent,
                r.messages_received,
                r.bytes_received
            );
        }
        for (p, d) in &self.digests {
            let _ = writeln!(s, "{p} {d}");
        }
        s
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("record serializes"));
            out.push('\n');
        }
        let summary = serde_json::json!({
            "summary": true,
            "offline_bytes": self.total_bytes_sent(Phase::Offline),
            "online_bytes": self.total_bytes_sent(Phase::Online),
            "digests": self.digests,
        });
        out.push_str(&summary.to_string());
        out.push('\n');
        out
    }
}
