use serde::{Deserialize, Serialize};

use crate::transport::frame::MsgType;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Setup,
    Union,
    Share,
    Query,
    Response,
}

impl Phase {
    pub const ALL: [Phase; 5] = [Phase::Setup, Phase::Union, Phase::Share, Phase::Query, Phase::Response];

    pub fn of(t: MsgType) -> Phase {
        match t {
            MsgType::Setup | MsgType::Abort => Phase::Setup,
            MsgType::UnionShare | MsgType::UnionPartialSum | MsgType::UnionBroadcast => Phase::Union,
            MsgType::ShareUpload | MsgType::ShareForward => Phase::Share,
            MsgType::QueryUpload | MsgType::QueryForward => Phase::Query,
            MsgType::ResponseUpload | MsgType::MaskedResponseDeliver => Phase::Response,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Phase::Setup => "setup",
            Phase::Union => "union",
            Phase::Share => "share",
            Phase::Query => "query",
            Phase::Response => "response",
        }
    }
}

impl std::fmt::Display for Phase {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// A round abort, tagged with the party and phase it happened in.
#[derive(Clone, Debug, PartialEq, Eq, thiserror::Error)]
#[error("party {party} aborted in {phase} phase: {detail}")]
pub struct ProtocolError {
    pub party: u16,
    pub phase: Phase,
    pub detail: String,
}

impl ProtocolError {
    pub fn new(party: u16, phase: Phase, detail: impl std::fmt::Display) -> Self {
        Self {
            party,
            phase,
            detail: detail.to_string(),
        }
    }
}
