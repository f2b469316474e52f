//! Client and server state machines for one deployment: key setup, entity
//! union, then per round the sharing, coded query and blinded response phases.

pub mod client;
pub mod context;
mod error;
pub mod expand;
pub mod oracle;
pub mod payload;
pub mod server;
pub mod session;
pub mod update;

pub use client::{Client, ClientInput, ClientRound};
pub use context::SessionContext;
pub use error::{Phase, ProtocolError};
pub use oracle::{oracle_aggregate, GlobalEmbedding};
pub use server::Server;
pub use session::{Deployment, RoundOutcome, SessionError, SessionOutcome};

use crate::transport::frame::WireMessage;

/// Party id of the relay server. Clients are `1..=N`.
pub const SERVER: u16 = 0;

/// A message produced by a party.
#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Outgoing {
    /// Goes on the wire: client frames go to the server, server frames to
    /// the client named in the header.
    Send(WireMessage),
    /// A message a client addresses to itself. Never transmitted; recorded
    /// in the transcript with zero wire cost.
    Local(WireMessage),
}

/// A sequential participant driven by message delivery.
pub trait Party {
    fn id(&self) -> u16;
    fn start(&mut self) -> Result<Vec<Outgoing>, ProtocolError>;
    fn handle(&mut self, msg: &WireMessage) -> Result<Vec<Outgoing>, ProtocolError>;
    fn is_finished(&self) -> bool;
    /// One-line state summary for deadlock reports.
    fn status(&self) -> String;
    /// Time spent on precomputation that does not depend on client input.
    fn offline_time(&self) -> std::time::Duration {
        std::time::Duration::ZERO
    }
}
