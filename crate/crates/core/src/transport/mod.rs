//! Framing, the deterministic in-process network and the TCP star network.

pub mod frame;
pub mod sim;
pub mod tcp;
mod transcript;

pub use frame::{decode_frame, encode_frame, MsgType, WireMessage};
pub use sim::{DeliverySchedule, SchedulePolicy, SimError, SimRun};
pub use transcript::{Link, Timings, Transcript, TranscriptEntry};
