//! JSON documents written by the subcommands.

use std::collections::BTreeMap;

use serde::Serialize;

use embagg_core::config::DeploymentConfig;
use embagg_core::metrics::RunMetrics;
use embagg_core::poly::check_threshold;
use embagg_core::protocol::oracle::GlobalEmbedding;
use embagg_core::protocol::{Client, Deployment, SessionOutcome};
use embagg_core::transport::Transcript;

#[derive(Serialize)]
pub struct Params {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub d: usize,
    pub block_len: usize,
    pub modulus: u64,
    pub scale: u64,
    pub paillier_bits: u64,
    pub dh_group: String,
}

impl Params {
    pub fn of(dep: &Deployment) -> Self {
        let ctx = &dep.ctx;
        let k = check_threshold(ctx.n, ctx.t).expect("deployment parameters are validated");
        Self {
            n: ctx.n,
            t: ctx.t,
            k,
            d: ctx.d,
            block_len: (ctx.d + 1).div_ceil(k),
            modulus: ctx.field.modulus(),
            scale: ctx.codec.scale(),
            paillier_bits: ctx.paillier_bits,
            dh_group: ctx.group.name().to_string(),
        }
    }
}

#[derive(Serialize)]
pub struct ClientResult {
    pub client: u16,
    pub recovered: BTreeMap<String, GlobalEmbedding>,
}

#[derive(Serialize)]
pub struct RoundReport {
    pub round: u32,
    pub matches_oracle: bool,
    pub clients: Vec<ClientResult>,
    pub oracle: BTreeMap<String, GlobalEmbedding>,
    pub metrics: RunMetrics,
}

#[derive(Serialize)]
pub struct RunReport {
    pub transport: String,
    pub params: Params,
    pub union: Vec<String>,
    pub union_attempts: u32,
    pub matches_oracle: bool,
    pub rounds: Vec<RoundReport>,
    pub metrics: RunMetrics,
    pub frames: usize,
    /// Order-independent digest over every entry, local ones included.
    pub transcript_digest: String,
    /// Order-independent digest over the frames that crossed the wire.
    pub wire_digest: String,
}

pub fn metrics(cfg: &DeploymentConfig, out: &SessionOutcome, m: RunMetrics) -> RunMetrics {
    if cfg.timing {
        m.with_timings(&out.timings, &out.offline)
    } else {
        m
    }
}

impl RunReport {
    pub fn new(cfg: &DeploymentConfig, dep: &Deployment, transport: &str, out: &SessionOutcome) -> Self {
        let n = dep.ctx.n;
        let rounds = out
            .rounds
            .iter()
            .map(|r| RoundReport {
                round: r.round,
                matches_oracle: r.matches_oracle,
                clients: r
                    .clients
                    .iter()
                    .enumerate()
                    .map(|(i, rec)| ClientResult {
                        client: i as u16 + 1,
                        recovered: rec.clone(),
                    })
                    .collect(),
                oracle: r.oracle.clone(),
                metrics: RunMetrics::for_round(&out.transcript, n, r.round),
            })
            .collect();
        Self {
            transport: transport.into(),
            params: Params::of(dep),
            union: out.union.clone(),
            union_attempts: out.union_attempts,
            matches_oracle: out.rounds.iter().all(|r| r.matches_oracle),
            rounds,
            metrics: metrics(cfg, out, RunMetrics::from_transcript(&out.transcript, n)),
            frames: out.transcript.wire_only().len(),
            transcript_digest: out.transcript.canonical_digest(),
            wire_digest: out.transcript.wire_only().canonical_digest(),
        }
    }
}

#[derive(Serialize)]
pub struct ServerReport {
    pub role: &'static str,
    pub params: Params,
    pub union: Vec<String>,
    pub frames: usize,
    pub wire_digest: String,
    pub metrics: RunMetrics,
}

impl ServerReport {
    pub fn new(dep: &Deployment, union: Vec<String>, transcript: &Transcript) -> Self {
        let wire = transcript.wire_only();
        Self {
            role: "server",
            params: Params::of(dep),
            union,
            frames: wire.len(),
            wire_digest: wire.canonical_digest(),
            metrics: RunMetrics::from_transcript(transcript, dep.ctx.n),
        }
    }
}

#[derive(Serialize)]
pub struct ClientRoundReport {
    pub round: u32,
    pub inputs: BTreeMap<String, Vec<f64>>,
    pub recovered: BTreeMap<String, GlobalEmbedding>,
}

#[derive(Serialize)]
pub struct ClientReport {
    pub role: &'static str,
    pub client: u16,
    pub union: Vec<String>,
    pub union_attempts: u32,
    pub rounds: Vec<ClientRoundReport>,
    pub metrics: embagg_core::metrics::PartyMetrics,
}

impl ClientReport {
    pub fn new(dep: &Deployment, id: u16, client: &Client, transcript: &Transcript) -> Self {
        let m = RunMetrics::from_transcript(transcript, dep.ctx.n);
        Self {
            role: "client",
            client: id,
            union: client.union().iter().map(|e| e.raw.clone()).collect(),
            union_attempts: client.union_attempts(),
            rounds: client
                .history()
                .iter()
                .map(|r| ClientRoundReport {
                    round: r.round,
                    inputs: r.inputs.clone(),
                    recovered: r.recovered.clone(),
                })
                .collect(),
            metrics: m.party(id).clone(),
        }
    }
}
