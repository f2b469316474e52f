//! Communication accounting derived from a transcript.

use std::collections::BTreeMap;
use std::time::Duration;

use serde::Serialize;

use crate::protocol::Phase;
use crate::transport::{Link, Timings, Transcript, TranscriptEntry};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize)]
pub struct PhaseMetrics {
    /// Whole frames put on the wire, prefix and header included.
    pub bytes_sent: u64,
    /// Payload bytes only.
    pub payload_bytes: u64,
    /// Frames put on the wire.
    pub messages: u64,
    /// Self-addressed messages that never left the party.
    pub local_messages: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub wall_ms: Option<f64>,
}

impl PhaseMetrics {
    fn add_entry(&mut self, e: &TranscriptEntry) {
        match e.link {
            Link::Wire { .. } => {
                self.bytes_sent += e.wire_bytes() as u64;
                self.payload_bytes += e.msg.payload.len() as u64;
                self.messages += 1;
            }
            Link::Local(_) => self.local_messages += 1,
        }
    }

    fn absorb(&mut self, o: &PhaseMetrics) {
        self.bytes_sent += o.bytes_sent;
        self.payload_bytes += o.payload_bytes;
        self.messages += o.messages;
        self.local_messages += o.local_messages;
        if let Some(w) = o.wall_ms {
            *self.wall_ms.get_or_insert(0.0) += w;
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PartyMetrics {
    pub party: u16,
    pub phases: BTreeMap<Phase, PhaseMetrics>,
    pub total: PhaseMetrics,
    /// Input-independent precomputation, part of the wall time.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub offline_ms: Option<f64>,
}

impl PartyMetrics {
    pub fn phase(&self, p: Phase) -> PhaseMetrics {
        self.phases.get(&p).copied().unwrap_or_default()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunMetrics {
    /// Server first, then clients in id order.
    pub parties: Vec<PartyMetrics>,
    pub phases: BTreeMap<Phase, PhaseMetrics>,
    pub total: PhaseMetrics,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl RunMetrics {
    /// Accounts every entry of `transcript` to its emitter. Parties `0..=n`
    /// always appear, even when silent.
    pub fn from_transcript(transcript: &Transcript, n: usize) -> Self {
        Self::from_entries(transcript.entries.iter(), n)
    }

    /// As `from_transcript`, restricted to the entries of one round.
    pub fn for_round(transcript: &Transcript, n: usize, round: u32) -> Self {
        Self::from_entries(transcript.entries.iter().filter(|e| e.msg.round == round), n)
    }

    fn from_entries<'a>(entries: impl Iterator<Item = &'a TranscriptEntry>, n: usize) -> Self {
        let mut parties: Vec<PartyMetrics> = (0..=n as u16)
            .map(|party| PartyMetrics {
                party,
                phases: Phase::ALL.iter().map(|&p| (p, PhaseMetrics::default())).collect(),
                total: PhaseMetrics::default(),
                offline_ms: None,
            })
            .collect();
        for e in entries {
            if let Some(pm) = parties.get_mut(usize::from(e.emitter())) {
                pm.phases.entry(e.phase()).or_default().add_entry(e);
            }
        }
        let mut m = Self {
            parties,
            phases: BTreeMap::new(),
            total: PhaseMetrics::default(),
        };
        m.retotal();
        m
    }

    /// Attaches wall-clock and offline times.
    pub fn with_timings(mut self, timings: &Timings, offline: &BTreeMap<u16, Duration>) -> Self {
        for pm in &mut self.parties {
            for (&p, ph) in pm.phases.iter_mut() {
                ph.wall_ms = Some(timings.get(&(pm.party, p)).map_or(0.0, |&d| ms(d)));
            }
            pm.offline_ms = Some(offline.get(&pm.party).map_or(0.0, |&d| ms(d)));
        }
        self.retotal();
        self
    }

    fn retotal(&mut self) {
        self.phases.clear();
        self.total = PhaseMetrics::default();
        for pm in &mut self.parties {
            pm.total = PhaseMetrics::default();
            for (&p, ph) in &pm.phases {
                pm.total.absorb(ph);
                self.phases.entry(p).or_default().absorb(ph);
            }
            self.total.absorb(&pm.total);
        }
    }

    pub fn party(&self, id: u16) -> &PartyMetrics {
        &self.parties[usize::from(id)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::frame::{MsgType, WireMessage};

    fn msg(t: MsgType, sender: u16, receiver: u16, len: usize) -> WireMessage {
        WireMessage::new(t, 1, sender, receiver, 0, vec![0; len])
    }

    #[test]
    fn totals_match_transcript() {
        let mut tr = Transcript::default();
        tr.push(Link::Wire { from: 1, to: 0 }, msg(MsgType::ShareUpload, 1, 2, 10));
        tr.push(Link::Wire { from: 0, to: 2 }, msg(MsgType::ShareForward, 1, 2, 10));
        tr.push(Link::Local(1), msg(MsgType::ShareUpload, 1, 1, 10));
        tr.push(Link::Wire { from: 2, to: 0 }, msg(MsgType::ResponseUpload, 2, 1, 7));
        let m = RunMetrics::from_transcript(&tr, 2);
        assert_eq!(m.total.bytes_sent as usize, tr.wire_bytes());
        assert_eq!(m.total.messages, 3);
        assert_eq!(m.total.local_messages, 1);
        assert_eq!(m.party(1).phase(Phase::Share).payload_bytes, 10);
        assert_eq!(m.party(1).phase(Phase::Share).bytes_sent, 28);
        assert_eq!(m.party(0).phase(Phase::Share).messages, 1);
        assert_eq!(m.party(2).phase(Phase::Response).payload_bytes, 7);
        assert_eq!(m.phases[&Phase::Share].messages, 2);
        assert!(m.total.wall_ms.is_none());
    }

    #[test]
    fn timings_attach() {
        let tr = Transcript::default();
        let mut t = Timings::new();
        t.insert((1, Phase::Share), Duration::from_millis(3));
        let mut off = BTreeMap::new();
        off.insert(0u16, Duration::from_millis(2));
        let m = RunMetrics::from_transcript(&tr, 1).with_timings(&t, &off);
        assert_eq!(m.party(1).total.wall_ms, Some(3.0));
        assert_eq!(m.party(0).offline_ms, Some(2.0));
        assert_eq!(m.party(1).offline_ms, Some(0.0));
    }
}
