//! Single-threaded simulated network.
//!
//! Every directed link is a FIFO queue. At each step the schedule picks one
//! non-empty link and delivers its head, so messages on one link keep their
//! order while links interleave arbitrarily.

use std::collections::{BTreeMap, VecDeque};
use std::time::{Duration, Instant};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::frame::WireMessage;
use super::transcript::{Link, Timings, Transcript};
use crate::protocol::{Outgoing, Party, Phase, ProtocolError, SERVER};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum SchedulePolicy {
    /// Uniformly random choice among non-empty links.
    #[default]
    FifoRandom,
    /// Cycle through links in a fixed order.
    RoundRobin,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
pub struct DeliverySchedule {
    pub seed: u64,
    pub policy: SchedulePolicy,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error("deadlock: no deliverable message but parties unfinished:\n{0}")]
    Deadlock(String),
    #[error("frame from {from} addressed to unknown party {to}")]
    Unroutable { from: u16, to: u16 },
    #[error("step budget of {0} deliveries exhausted")]
    Budget(usize),
}

pub struct SimRun {
    pub transcript: Transcript,
    pub timings: Timings,
    pub steps: usize,
}

const STEP_BUDGET: usize = 50_000_000;

/// Runs `parties` to completion. Party ids must be distinct; the server is 0.
pub fn run(parties: &mut [&mut dyn Party], schedule: DeliverySchedule) -> Result<SimRun, SimError> {
    let index: BTreeMap<u16, usize> = parties.iter().enumerate().map(|(i, p)| (p.id(), i)).collect();
    let mut queues: BTreeMap<(u16, u16), VecDeque<WireMessage>> = BTreeMap::new();
    let mut transcript = Transcript::default();
    let mut timings: Timings = BTreeMap::new();
    let mut rng = ChaCha20Rng::seed_from_u64(schedule.seed);
    let mut cursor: Option<(u16, u16)> = None;

    let dispatch = |from: u16,
                        outs: Vec<Outgoing>,
                        queues: &mut BTreeMap<(u16, u16), VecDeque<WireMessage>>,
                        transcript: &mut Transcript|
     -> Result<(), SimError> {
        for o in outs {
            match o {
                Outgoing::Local(m) => transcript.push(Link::Local(from), m),
                Outgoing::Send(m) => {
                    let to = if from == SERVER { m.receiver } else { SERVER };
                    if to == from || !index.contains_key(&to) {
                        return Err(SimError::Unroutable { from, to });
                    }
                    transcript.push(Link::Wire { from, to }, m.clone());
                    queues.entry((from, to)).or_default().push_back(m);
                }
            }
        }
        Ok(())
    };

    let mut order: Vec<usize> = (0..parties.len()).collect();
    order.sort_by_key(|&i| parties[i].id());
    for i in order {
        let started = Instant::now();
        let outs = parties[i].start()?;
        add_time(&mut timings, parties[i].id(), Phase::Setup, started.elapsed());
        dispatch(parties[i].id(), outs, &mut queues, &mut transcript)?;
    }

    let mut steps = 0;
    loop {
        let ready: Vec<(u16, u16)> = queues.iter().filter(|(_, q)| !q.is_empty()).map(|(k, _)| *k).collect();
        if ready.is_empty() {
            if parties.iter().all(|p| p.is_finished()) {
                break;
            }
            let dump: Vec<String> = parties.iter().map(|p| format!("  {}", p.status())).collect();
            return Err(SimError::Deadlock(dump.join("\n")));
        }
        steps += 1;
        if steps > STEP_BUDGET {
            return Err(SimError::Budget(STEP_BUDGET));
        }
        let link = match schedule.policy {
            SchedulePolicy::FifoRandom => ready[rng.gen_range(0..ready.len())],
            SchedulePolicy::RoundRobin => {
                let next = cursor
                    .and_then(|c| ready.iter().copied().find(|&l| l > c))
                    .unwrap_or(ready[0]);
                cursor = Some(next);
                next
            }
        };
        let msg = queues.get_mut(&link).unwrap().pop_front().unwrap();
        let target = &mut parties[index[&link.1]];
        let started = Instant::now();
        let outs = target.handle(&msg)?;
        add_time(&mut timings, link.1, Phase::of(msg.msg_type), started.elapsed());
        dispatch(link.1, outs, &mut queues, &mut transcript)?;
    }
    Ok(SimRun {
        transcript,
        timings,
        steps,
    })
}

fn add_time(t: &mut Timings, party: u16, phase: Phase, d: Duration) {
    *t.entry((party, phase)).or_default() += d;
}
