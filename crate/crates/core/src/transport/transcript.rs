use std::collections::BTreeMap;
use std::time::Duration;

use sha2::{Digest, Sha256};

use super::frame::{encode_frame, WireMessage};
use crate::protocol::Phase;

/// Where a transcript entry travelled.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Link {
    Wire { from: u16, to: u16 },
    /// A client's message to itself; never transmitted.
    Local(u16),
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub link: Link,
    pub msg: WireMessage,
}

impl TranscriptEntry {
    /// Bytes on the wire: the whole frame, or zero for local entries.
    pub fn wire_bytes(&self) -> usize {
        match self.link {
            Link::Wire { .. } => self.msg.frame_len(),
            Link::Local(_) => 0,
        }
    }

    /// The party that emitted the entry.
    pub fn emitter(&self) -> u16 {
        match self.link {
            Link::Wire { from, .. } => from,
            Link::Local(p) => p,
        }
    }

    pub fn phase(&self) -> Phase {
        Phase::of(self.msg.msg_type)
    }
}

/// Every message of a run in emission order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Transcript {
    pub entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn push(&mut self, link: Link, msg: WireMessage) {
        self.entries.push(TranscriptEntry { link, msg });
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn wire_bytes(&self) -> usize {
        self.entries.iter().map(TranscriptEntry::wire_bytes).sum()
    }

    /// SHA-256 over every entry's link and frame, in order.
    pub fn digest(&self) -> String {
        let mut h = Sha256::new();
        for e in &self.entries {
            match e.link {
                Link::Wire { from, to } => {
                    h.update([0]);
                    h.update(from.to_be_bytes());
                    h.update(to.to_be_bytes());
                }
                Link::Local(p) => {
                    h.update([1]);
                    h.update(p.to_be_bytes());
                }
            }
            h.update(encode_frame(&e.msg));
        }
        hex_string(&h.finalize())
    }

    /// Wire frames keyed by link, in a canonical order that does not depend on
    /// delivery interleaving.
    pub fn canonical_frames(&self) -> Vec<(Link, Vec<u8>)> {
        let mut v: Vec<(Link, Vec<u8>)> = self
            .entries
            .iter()
            .map(|e| (e.link, encode_frame(&e.msg)))
            .collect();
        v.sort();
        v
    }

    /// SHA-256 over `canonical_frames`. Equal for any two runs that sent the
    /// same frames over the same links, whatever the interleaving.
    pub fn canonical_digest(&self) -> String {
        let mut h = Sha256::new();
        for (link, frame) in self.canonical_frames() {
            match link {
                Link::Wire { from, to } => {
                    h.update([0]);
                    h.update(from.to_be_bytes());
                    h.update(to.to_be_bytes());
                }
                Link::Local(p) => {
                    h.update([1]);
                    h.update(p.to_be_bytes());
                }
            }
            h.update((frame.len() as u32).to_be_bytes());
            h.update(frame);
        }
        hex_string(&h.finalize())
    }

    pub fn wire_only(&self) -> Transcript {
        Transcript {
            entries: self
                .entries
                .iter()
                .filter(|e| matches!(e.link, Link::Wire { .. }))
                .cloned()
                .collect(),
        }
    }
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

/// Wall time each party spent handling messages, by phase.
pub type Timings = BTreeMap<(u16, Phase), Duration>;

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::MsgType;

    #[test]
    fn canonical_digest_ignores_interleaving() {
        let a = WireMessage::new(MsgType::ShareUpload, 1, 1, 0, 0, vec![1, 2]);
        let b = WireMessage::new(MsgType::ShareUpload, 1, 2, 0, 0, vec![3]);
        let mut x = Transcript::default();
        x.push(Link::Wire { from: 1, to: 0 }, a.clone());
        x.push(Link::Wire { from: 2, to: 0 }, b.clone());
        let mut y = Transcript::default();
        y.push(Link::Wire { from: 2, to: 0 }, b);
        y.push(Link::Wire { from: 1, to: 0 }, a.clone());
        assert_ne!(x.digest(), y.digest());
        assert_eq!(x.canonical_digest(), y.canonical_digest());
        y.push(Link::Local(1), a);
        assert_ne!(x.canonical_digest(), y.canonical_digest());
        assert_eq!(x.canonical_digest(), y.wire_only().canonical_digest());
    }
}
