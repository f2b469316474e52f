//! Parameter sweeps with measured and analytic communication per client.

use std::io;

use serde::{Deserialize, Serialize};

use crate::config::{Assignment, ConfigErrors, DeploymentConfig};
use crate::metrics::RunMetrics;
use crate::poly::check_threshold;
use crate::protocol::{Phase, ProtocolError, SessionError};

fn default_density() -> f64 {
    1.0
}
fn default_seed() -> u64 {
    1
}
fn default_true() -> bool {
    true
}

/// Cartesian product of shapes to measure. Clients hold each of the `M`
/// entities with probability `density`, so `density = 1` gives `|E_v| = M`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepSpec {
    pub clients: Vec<usize>,
    pub privacy: Vec<usize>,
    pub dims: Vec<usize>,
    pub entities: Vec<usize>,
    #[serde(default = "default_density")]
    pub density: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default = "default_true")]
    pub precompute: bool,
    #[serde(default = "default_true")]
    pub timing: bool,
    #[serde(default)]
    pub paillier_bits: Option<u64>,
    /// Toy keys and DH group. Needed to sweep anything quickly.
    #[serde(default = "default_true")]
    pub insecure_toy_crypto: bool,
}

impl Default for SweepSpec {
    fn default() -> Self {
        Self {
            clients: vec![5, 9],
            privacy: vec![1, 2],
            dims: vec![4, 8],
            entities: vec![2, 4],
            density: 1.0,
            seed: 1,
            precompute: true,
            timing: true,
            paillier_bits: None,
            insecure_toy_crypto: true,
        }
    }
}

/// One measured configuration. Byte counts are payload bytes averaged over
/// clients; `*_analytic_bytes` are the leading-order predictions
/// `d*M*N/K` field elements and `d*sum|E_v|/K` ciphertexts.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BenchRow {
    pub n: usize,
    pub t: usize,
    pub k: usize,
    pub d: usize,
    pub m: usize,
    pub block_len: usize,
    pub modulus: u64,
    pub share_payload_bytes: f64,
    pub share_analytic_bytes: f64,
    pub share_ratio: f64,
    pub query_payload_bytes: f64,
    pub response_payload_bytes: f64,
    pub response_analytic_bytes: f64,
    pub response_ratio: f64,
    pub client_wire_bytes: f64,
    pub server_wire_bytes: u64,
    pub messages: u64,
    /// Share payload bytes per client scaled by `K / (d*M*N)`; flat in
    /// `T` when communication tracks `1/K`.
    pub bytes_k_over_dmn: f64,
    pub offline_ms: f64,
    pub online_ms: f64,
}

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("sweep spec: {0}")]
    Spec(String),
    #[error("N={n}, T={t}, d={d}, M={m}: {source}")]
    Config { n: usize, t: usize, d: usize, m: usize, source: ConfigErrors },
    #[error("N={n}, T={t}, d={d}, M={m}: {source}")]
    Session { n: usize, t: usize, d: usize, m: usize, source: SessionError },
}

#[derive(Clone, Debug, Default)]
pub struct Sweep {
    pub rows: Vec<BenchRow>,
    /// `(N, T)` pairs left out because `T >= N/2`.
    pub skipped: Vec<(usize, usize)>,
}

pub fn run_sweep(spec: &SweepSpec) -> Result<Sweep, BenchError> {
    if [&spec.clients, &spec.privacy, &spec.dims, &spec.entities].iter().any(|v| v.is_empty()) {
        return Err(BenchError::Spec("every axis needs at least one value".into()));
    }
    let mut out = Sweep::default();
    for &n in &spec.clients {
        for &t in &spec.privacy {
            if check_threshold(n, t).is_err() {
                out.skipped.push((n, t));
                continue;
            }
            for &d in &spec.dims {
                for &m in &spec.entities {
                    out.rows.push(measure(spec, n, t, d, m)?);
                }
            }
        }
    }
    Ok(out)
}

pub fn config_for(spec: &SweepSpec, n: usize, t: usize, d: usize, m: usize) -> DeploymentConfig {
    let mut cfg = DeploymentConfig::new(n, t, d, Assignment::Random { entities: m, density: spec.density });
    cfg.vocabulary = Some((1..=m).map(|i| format!("e{i}")).collect());
    cfg.insecure_toy_crypto = spec.insecure_toy_crypto;
    cfg.paillier_bits = spec.paillier_bits;
    cfg.precompute = spec.precompute;
    cfg.timing = spec.timing;
    cfg.seed = spec.seed;
    cfg
}

fn measure(spec: &SweepSpec, n: usize, t: usize, d: usize, m: usize) -> Result<BenchRow, BenchError> {
    let cfg = config_for(spec, n, t, d, m);
    let dep = cfg.deployment().map_err(|source| BenchError::Config { n, t, d, m, source })?;
    let run = dep
        .run_simulated(cfg.schedule())
        .map_err(|source| BenchError::Session { n, t, d, m, source })?;
    let params = dep.ctx.params(m).map_err(|e| BenchError::Session {
        n,
        t,
        d,
        m,
        source: SessionError::Protocol(ProtocolError::new(0, Phase::Setup, e)),
    })?;
    let metrics = RunMetrics::from_transcript(&run.transcript, n).with_timings(&run.timings, &run.offline);

    let per_client = |p: Phase| -> f64 {
        let sum: u64 = (1..=n as u16).map(|c| metrics.party(c).phase(p).payload_bytes).sum();
        sum as f64 / n as f64
    };
    let k = params.k;
    let held: usize = dep.inputs.iter().map(|i| i.embeddings.len()).sum();
    let elem = dep.ctx.field.byte_width() as f64;
    let ct = (8 + (2 * dep.ctx.paillier_bits).div_ceil(8)) as f64;
    let share_analytic = (d * m * n) as f64 / k as f64 * elem;
    let response_analytic = (d * held) as f64 / k as f64 * ct;
    let share = per_client(Phase::Share);
    let response = per_client(Phase::Response);
    let client_wire: u64 = (1..=n as u16).map(|c| metrics.party(c).total.bytes_sent).sum();
    let offline_ms: f64 = metrics.parties.iter().filter_map(|p| p.offline_ms).sum();
    let wall_ms: f64 = metrics.total.wall_ms.unwrap_or(0.0);

    Ok(BenchRow {
        n,
        t,
        k,
        d,
        m,
        block_len: params.block_len,
        modulus: dep.ctx.field.modulus(),
        share_payload_bytes: share,
        share_analytic_bytes: share_analytic,
        share_ratio: ratio(share, share_analytic),
        query_payload_bytes: per_client(Phase::Query),
        response_payload_bytes: response,
        response_analytic_bytes: response_analytic,
        response_ratio: ratio(response, response_analytic),
        client_wire_bytes: client_wire as f64 / n as f64,
        server_wire_bytes: metrics.party(0).total.bytes_sent,
        messages: metrics.total.messages,
        bytes_k_over_dmn: share * k as f64 / (d * m * n) as f64,
        offline_ms,
        online_ms: (wall_ms - offline_ms).max(0.0),
    })
}

fn ratio(measured: f64, analytic: f64) -> f64 {
    if analytic == 0.0 {
        0.0
    } else {
        measured / analytic
    }
}

pub fn write_csv<W: io::Write>(rows: &[BenchRow], out: W) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}
