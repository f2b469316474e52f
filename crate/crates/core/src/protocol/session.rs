//! A whole deployment: one server and N clients, run in-process over the
//! simulator or over loopback TCP, checked against the plaintext oracle.

use std::collections::BTreeMap;
use std::net::TcpListener;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use super::client::{Client, ClientInput};
use super::context::SessionContext;
use super::oracle::{oracle_aggregate, GlobalEmbedding};
use super::server::Server;
use super::update::UpdateKind;
use super::{Party, ProtocolError, SERVER};
use crate::rng::party_seed;
use crate::transport::sim::{self, DeliverySchedule, SimError};
use crate::transport::tcp::{self, TcpError, TcpOptions};
use crate::transport::{Link, Timings, Transcript};

#[derive(Debug, thiserror::Error)]
pub enum SessionError {
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Tcp(#[from] TcpError),
    #[error("inconsistent outcome: {0}")]
    Inconsistent(String),
}

#[derive(Debug)]
pub struct Deployment {
    pub ctx: Arc<SessionContext>,
    /// Input of client `i + 1` at index `i`.
    pub inputs: Vec<ClientInput>,
    pub update: UpdateKind,
    pub seed: u64,
}

#[derive(Clone, Debug)]
pub struct RoundOutcome {
    pub round: u32,
    /// What client `i + 1` recovered, at index `i`.
    pub clients: Vec<BTreeMap<String, GlobalEmbedding>>,
    /// Local embeddings client `i + 1` contributed this round.
    pub inputs: Vec<BTreeMap<String, Vec<f64>>>,
    pub oracle: BTreeMap<String, GlobalEmbedding>,
    /// Every client recovered exactly the oracle average of every entity it holds.
    pub matches_oracle: bool,
}

pub struct SessionOutcome {
    pub union: Vec<String>,
    pub union_attempts: u32,
    pub rounds: Vec<RoundOutcome>,
    pub transcript: Transcript,
    pub timings: Timings,
    /// Precomputation time per party.
    pub offline: BTreeMap<u16, Duration>,
}

impl Deployment {
    pub fn server(&self) -> Server {
        Server::new(self.ctx.clone(), party_seed(self.seed, SERVER))
    }

    /// Client `id` in `1..=N`.
    pub fn client(&self, id: u16) -> Result<Client, ProtocolError> {
        let input = self
            .inputs
            .get(usize::from(id).wrapping_sub(1))
            .cloned()
            .ok_or_else(|| ProtocolError::new(id, super::Phase::Setup, "no input for this client"))?;
        let seed = party_seed(self.seed, id);
        Client::new(id, self.ctx.clone(), seed, input, self.update.build(seed))
    }

    pub fn clients(&self) -> Result<Vec<Client>, ProtocolError> {
        (1..=self.ctx.n as u16).map(|id| self.client(id)).collect()
    }

    pub fn run_simulated(&self, schedule: DeliverySchedule) -> Result<SessionOutcome, SessionError> {
        let mut server = self.server();
        let mut clients = self.clients()?;
        let run = {
            let mut parties: Vec<&mut dyn Party> = vec![&mut server];
            parties.extend(clients.iter_mut().map(|c| c as &mut dyn Party));
            sim::run(&mut parties, schedule)?
        };
        outcome(&self.ctx, &server, &clients, run.transcript, run.timings)
    }

    /// Runs every party on its own thread over loopback TCP.
    pub fn run_loopback(&self, opts: TcpOptions) -> Result<SessionOutcome, SessionError> {
        let listener = TcpListener::bind("127.0.0.1:0").map_err(TcpError::from)?;
        let addr = listener.local_addr().map_err(TcpError::from)?.to_string();
        let mut server = self.server();
        let clients = self.clients()?;
        let n = clients.len();
        let (server_run, client_runs) = thread::scope(|s| {
            let server_handle = s.spawn(|| tcp::serve(listener, &mut server, n, opts));
            let handles: Vec<_> = clients
                .into_iter()
                .map(|mut c| {
                    let addr = addr.clone();
                    s.spawn(move || tcp::run_client(&addr, &mut c, opts).map(|run| (c, run)))
                })
                .collect();
            let client_runs: Vec<_> = handles.into_iter().map(|h| h.join().expect("client thread panicked")).collect();
            (server_handle.join().expect("server thread panicked"), client_runs)
        });
        let server_run = server_run?;
        let mut transcript = server_run.transcript;
        let mut timings = server_run.timings;
        let mut finished = Vec::with_capacity(n);
        for r in client_runs {
            let (c, run) = r?;
            for e in run.transcript.entries {
                if matches!(e.link, Link::Local(_)) {
                    transcript.entries.push(e);
                }
            }
            timings.extend(run.timings);
            finished.push(c);
        }
        outcome(&self.ctx, &server, &finished, transcript, timings)
    }
}

/// Assembles the outcome of a finished run and checks it against the oracle.
pub fn outcome(
    ctx: &SessionContext,
    server: &Server,
    clients: &[Client],
    transcript: Transcript,
    timings: Timings,
) -> Result<SessionOutcome, SessionError> {
    let union: Vec<String> = server.union().iter().map(|e| e.raw.clone()).collect();
    for c in clients {
        let mine: Vec<&str> = c.union().iter().map(|e| e.raw.as_str()).collect();
        if mine != union {
            return Err(SessionError::Inconsistent(format!("client {} extracted a different union", c.id())));
        }
        if c.history().len() != ctx.rounds as usize {
            return Err(SessionError::Inconsistent(format!(
                "client {} completed {} of {} rounds",
                c.id(),
                c.history().len(),
                ctx.rounds
            )));
        }
    }
    let mut rounds = Vec::new();
    for t in 0..ctx.rounds as usize {
        let inputs: Vec<_> = clients.iter().map(|c| c.history()[t].inputs.clone()).collect();
        let recovered: Vec<_> = clients.iter().map(|c| c.history()[t].recovered.clone()).collect();
        let oracle = oracle_aggregate(&ctx.codec, &inputs)
            .map_err(|e| SessionError::Inconsistent(format!("oracle failed: {e}")))?;
        let matches_oracle = inputs.iter().zip(&recovered).all(|(own, got)| {
            own.len() == got.len()
                && own
                    .keys()
                    .all(|e| matches!((got.get(e), oracle.get(e)), (Some(a), Some(b)) if a.exact == b.exact))
        });
        rounds.push(RoundOutcome {
            round: t as u32 + 1,
            clients: recovered,
            inputs,
            oracle,
            matches_oracle,
        });
    }
    let mut offline = BTreeMap::new();
    offline.insert(SERVER, server.offline_time());
    Ok(SessionOutcome {
        union,
        union_attempts: clients.first().map_or(0, |c| c.union_attempts()),
        rounds,
        transcript,
        timings,
        offline,
    })
}
