//! Adversary views and the privacy audits run over them: exhaustive
//! distribution comparisons at desk scale and a structural check of
//! everything the server handles.

pub mod enumerate;
pub mod colluder;
pub mod ownership;
pub mod threshold;

use std::collections::{BTreeMap, BTreeSet};

use serde::Serialize;

use crate::config::{Assignment, DeploymentConfig};
use crate::field::PrimeField;
use crate::poly::{ParamError, ProtocolParams};
use crate::protocol::payload::{Payload, PayloadClass};
use crate::protocol::{SessionError, SessionOutcome};
use crate::transport::{Link, MsgType, Transcript, TranscriptEntry};
use enumerate::DistributionTable;
use colluder::{QueryModel, RoundModel};

pub const LIMITATION: &str = "Enumeration results are exact but hold only at the enumerated scale \
(tiny fields, minimal dimensions, Paillier bypassed). Computational security of Paillier and of the \
pad generator is not covered by enumeration; the structural server-view audit covers it instead.";

#[derive(Debug, thiserror::Error)]
pub enum AuditError {
    #[error(
        "enumeration needs {} draws over {variables} variables at p={modulus}, budget is {budget}; \
         shrink p or the number of random values",
        draws.map_or("more than 2^64".to_string(), |d| d.to_string())
    )]
    Budget { draws: Option<u64>, budget: u64, variables: usize, modulus: u64 },
    #[error("invalid corrupt set: {0}")]
    CorruptSet(String),
    #[error("secret pair is not comparable: {0}")]
    InvalidPair(String),
    #[error(transparent)]
    Params(#[from] ParamError),
    #[error("audit session failed: {0}")]
    Session(String),
    #[error("the leak-raw-shares hook needs a build with the sabotage feature")]
    SabotageUnavailable,
}

impl From<SessionError> for AuditError {
    fn from(e: SessionError) -> Self {
        AuditError::Session(e.to_string())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Verdict {
    Pass,
    Fail,
}

#[derive(Clone, Debug, Serialize)]
pub struct PropertyReport {
    pub name: String,
    pub scale: String,
    pub enumerated_draws: u64,
    pub verdict: Verdict,
    pub detail: String,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub tables: Vec<DistributionTable>,
}

impl PropertyReport {
    pub fn new(name: String, scale: String, enumerated_draws: u64, ok: bool, detail: String) -> Self {
        Self {
            name,
            scale,
            enumerated_draws,
            verdict: if ok { Verdict::Pass } else { Verdict::Fail },
            detail,
            tables: Vec::new(),
        }
    }

    pub fn with_tables(mut self, tables: Vec<DistributionTable>) -> Self {
        self.tables = tables;
        self
    }

    pub fn passed(&self) -> bool {
        self.verdict == Verdict::Pass
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub properties: Vec<PropertyReport>,
    pub limitation: &'static str,
    pub passed: bool,
}

impl AuditReport {
    pub fn new(properties: Vec<PropertyReport>) -> Self {
        let passed = properties.iter().all(PropertyReport::passed);
        Self {
            properties,
            limitation: LIMITATION,
            passed,
        }
    }

    pub fn property(&self, name: &str) -> Option<&PropertyReport> {
        self.properties.iter().find(|p| p.name == name)
    }
}

/// All `k`-subsets of `0..n` in lexicographic order.
pub fn combinations(n: usize, k: usize) -> Vec<Vec<usize>> {
    fn go(start: usize, n: usize, k: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if cur.len() == k {
            out.push(cur.clone());
            return;
        }
        for i in start..n {
            cur.push(i);
            go(i + 1, n, k, cur, out);
            cur.pop();
        }
    }
    let mut out = Vec::new();
    go(0, n, k, &mut Vec::new(), &mut out);
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Corrupt {
    Server,
    Clients(BTreeSet<u16>),
}

/// The messages a corrupt set receives.
#[derive(Clone, Debug)]
pub struct AdversaryView {
    pub corrupt: Corrupt,
    pub entries: Vec<TranscriptEntry>,
}

/// For a corrupt server, every frame on the wire (all of them pass through
/// it). For corrupt clients, every frame delivered to them and their own
/// local entries. More than `t` clients is refused unless `force` is set.
pub fn capture_view(transcript: &Transcript, corrupt: &Corrupt, t: usize, force: bool) -> Result<AdversaryView, AuditError> {
    let entries = match corrupt {
        Corrupt::Server => transcript
            .entries
            .iter()
            .filter(|e| matches!(e.link, Link::Wire { .. }))
            .cloned()
            .collect(),
        Corrupt::Clients(set) => {
            if set.contains(&crate::protocol::SERVER) {
                return Err(AuditError::CorruptSet("the server is not a client".into()));
            }
            if set.len() > t && !force {
                return Err(AuditError::CorruptSet(format!("{} clients exceed T={t}", set.len())));
            }
            transcript
                .entries
                .iter()
                .filter(|e| match e.link {
                    Link::Wire { to, .. } => set.contains(&to),
                    Link::Local(p) => set.contains(&p),
                })
                .cloned()
                .collect()
        }
    };
    Ok(AdversaryView {
        corrupt: corrupt.clone(),
        entries,
    })
}

/// Shares, queries and blinded responses one client receives in a round.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RoundCounts {
    pub shares: usize,
    pub queries: usize,
    pub responses: usize,
}

impl AdversaryView {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn round_counts(&self, round: u32) -> RoundCounts {
        let mut c = RoundCounts {
            shares: 0,
            queries: 0,
            responses: 0,
        };
        for e in self.entries.iter().filter(|e| e.msg.round == round) {
            let local = matches!(e.link, Link::Local(_));
            match e.msg.msg_type {
                MsgType::ShareForward => c.shares += 1,
                MsgType::ShareUpload if local => c.shares += 1,
                MsgType::QueryForward => c.queries += 1,
                MsgType::QueryUpload if local => c.queries += 1,
                MsgType::MaskedResponseDeliver => c.responses += 1,
                _ => {}
            }
        }
        c
    }
}

/// Payload classes allowed for each message type on a server link.
pub fn allowed_classes(t: MsgType) -> &'static [PayloadClass] {
    use PayloadClass::*;
    match t {
        MsgType::Setup => &[Setup],
        MsgType::Abort => &[Text],
        MsgType::UnionShare => &[Masked],
        MsgType::UnionPartialSum => &[ShareSum],
        MsgType::UnionBroadcast => &[PublicAggregate],
        MsgType::ShareUpload | MsgType::ShareForward | MsgType::QueryUpload | MsgType::QueryForward => &[Masked],
        MsgType::ResponseUpload | MsgType::MaskedResponseDeliver => &[Cipher],
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct StructuralReport {
    pub frames: usize,
    /// Share, query and response frames.
    pub round_payloads: usize,
    /// Of those, the ones carrying masked vectors or ciphertexts.
    pub protected: usize,
    pub violations: Vec<String>,
}

impl StructuralReport {
    pub fn passed(&self) -> bool {
        self.violations.is_empty() && self.protected == self.round_payloads
    }
}

/// Checks every frame the server handles against the allowed payload classes.
pub fn server_view_audit(view: &AdversaryView) -> StructuralReport {
    let mut r = StructuralReport {
        frames: 0,
        round_payloads: 0,
        protected: 0,
        violations: Vec::new(),
    };
    for e in &view.entries {
        r.frames += 1;
        let t = e.msg.msg_type;
        let class = Payload::peek_class(&e.msg.payload);
        let round_msg = allowed_classes(t).iter().any(|c| matches!(c, PayloadClass::Masked | PayloadClass::Cipher))
            && !matches!(t, MsgType::UnionShare);
        if round_msg {
            r.round_payloads += 1;
            if matches!(class, Some(PayloadClass::Masked | PayloadClass::Cipher)) {
                r.protected += 1;
            }
        }
        if !class.is_some_and(|c| allowed_classes(t).contains(&c)) {
            let (from, to) = match e.link {
                Link::Wire { from, to } => (from, to),
                Link::Local(p) => (p, p),
            };
            r.violations.push(format!(
                "{t:?} round {} {from}->{to} carries {}",
                e.msg.round,
                class.map_or("an unknown class".to_string(), |c| c.to_string())
            ));
        }
    }
    r
}

fn structural_property(name: &str, outcome: &SessionOutcome, scale: String) -> PropertyReport {
    let view = capture_view(&outcome.transcript, &Corrupt::Server, 0, false).expect("server view");
    let r = server_view_audit(&view);
    let mut detail = format!(
        "{}/{} share, query and response payloads masked or encrypted; {} frames checked",
        r.protected, r.round_payloads, r.frames
    );
    if let Some(v) = r.violations.first() {
        detail.push_str(&format!("; {} violations, first: {v}", r.violations.len()));
    }
    PropertyReport::new(name.into(), scale, 0, r.passed(), detail)
}

/// Per-client view counts: `N` shares, `sum_v |E_v|` queries and
/// `N * |E_n|` responses each round.
fn view_count_property(outcome: &SessionOutcome, n: usize, t: usize, scale: String) -> PropertyReport {
    let mut bad = Vec::new();
    for r in &outcome.rounds {
        let total: usize = r.inputs.iter().map(BTreeMap::len).sum();
        for c in 1..=n as u16 {
            let view = capture_view(&outcome.transcript, &Corrupt::Clients([c].into()), t, false).expect("one client");
            let got = view.round_counts(r.round);
            let want = RoundCounts {
                shares: n,
                queries: total,
                responses: n * r.inputs[usize::from(c - 1)].len(),
            };
            if got != want {
                bad.push(format!("round {} client {c}: {got:?} != {want:?}", r.round));
            }
        }
    }
    let ok = bad.is_empty();
    let detail = if ok {
        "every client view holds N shares, sum |E_v| queries and N |E_n| responses per round".to_string()
    } else {
        bad.join("; ")
    };
    PropertyReport::new("view/client-message-counts".into(), scale, 0, ok, detail)
}

#[derive(Clone, Debug, Default)]
pub struct SuiteOptions {
    /// Run the server-view audit on a session whose clients leak raw shares.
    pub leak_raw_shares: bool,
}

fn structural_config(leak: bool) -> Result<DeploymentConfig, AuditError> {
    let mut c = DeploymentConfig::new(5, 2, 3, Assignment::Random { entities: 4, density: 0.6 }).insecure();
    c.rounds = 2;
    c.seed = 17;
    if leak {
        #[cfg(feature = "sabotage")]
        {
            c.leak_raw_shares = true;
        }
        #[cfg(not(feature = "sabotage"))]
        return Err(AuditError::SabotageUnavailable);
    }
    Ok(c)
}

fn run_structural(leak: bool) -> Result<(SessionOutcome, String), AuditError> {
    let cfg = structural_config(leak)?;
    let dep = cfg.deployment().map_err(|e| AuditError::Session(e.to_string()))?;
    let scale = format!("N={} T={} d={} rounds={} p={}", cfg.clients, cfg.privacy, cfg.dim, cfg.rounds, dep.ctx.field.modulus());
    Ok((dep.run_simulated(cfg.schedule())?, scale))
}

fn f(p: u64) -> PrimeField {
    PrimeField::new(p).expect("audit moduli are prime")
}

/// Share and full-round secret pairs for `N = 3`, `T = 1`.
fn colluder_properties() -> Result<Vec<PropertyReport>, AuditError> {
    let mut out = Vec::new();

    // Shares: the honest clients' embeddings of the colluder's entity
    // change but keep their sum.
    let p17 = ProtocolParams::new(f(17), 3, 1, 1, 1)?;
    let a = RoundModel::new(p17.clone(), &[&[Some(&[4])], &[Some(&[3])], &[Some(&[5])]]);
    let b = RoundModel::new(p17.clone(), &[&[Some(&[4])], &[Some(&[1])], &[Some(&[7])]]);
    out.push(colluder::shares_only("colluder-view/shares-only", &a, &b, &[0], true)?);

    // Queries: which entity each honest client retrieves.
    let q17 = ProtocolParams::new(f(17), 3, 1, 2, 1)?;
    let qa = QueryModel { params: q17.clone(), targets: vec![vec![0], vec![0], vec![1]] };
    let qb = QueryModel { params: q17.clone(), targets: vec![vec![0], vec![1], vec![0]] };
    out.push(colluder::queries_only("colluder-view/queries-only", &qa, &qb, &[0], true)?);

    // Full round, ownership as the secret: the colluder holds e1 and
    // recovers the same aggregate either way.
    let p7 = ProtocolParams::new(f(7), 3, 1, 2, 0)?;
    let e1: Option<&[u64]> = Some(&[]);
    let none: Option<&[u64]> = None;
    let a = RoundModel::new(p7.clone(), &[&[e1, none], &[none, e1], &[e1, none]]);
    let b = RoundModel::new(p7.clone(), &[&[e1, none], &[e1, none], &[none, e1]]);
    out.push(colluder::full_round("colluder-view/full-round-colluder-holds", &a, &b, &[0], true)?);

    // Full round where the colluder holds nothing, reported separately.
    let a = RoundModel::new(p7.clone(), &[&[none, none], &[e1, none], &[none, e1]]);
    let b = RoundModel::new(p7.clone(), &[&[none, none], &[none, e1], &[e1, none]]);
    out.push(colluder::full_round("colluder-view/full-round-colluder-holds-nothing", &a, &b, &[0], true)?);

    // T + 1 colluders: the honest client's data leaks.
    let n7 = ProtocolParams::new(f(7), 3, 1, 1, 1)?;
    let a = RoundModel::new(n7.clone(), &[&[None], &[None], &[Some(&[1])]]);
    let b = RoundModel::new(n7.clone(), &[&[None], &[None], &[Some(&[2])]]);
    out.push(colluder::shares_only("colluder-view/shares-only-t-plus-one-negative-control", &a, &b, &[0, 1], false)?);
    out.push(colluder::full_round("colluder-view/full-round-t-plus-one-negative-control", &a, &b, &[0, 1], false)?);
    let q7 = ProtocolParams::new(f(7), 3, 1, 2, 0)?;
    let qa = QueryModel { params: q7.clone(), targets: vec![vec![], vec![], vec![0]] };
    let qb = QueryModel { params: q7, targets: vec![vec![], vec![], vec![1]] };
    out.push(colluder::queries_only("colluder-view/queries-only-t-plus-one-negative-control", &qa, &qb, &[0, 1], false)?);
    Ok(out)
}

pub fn threshold_properties(p: u64) -> Result<Vec<PropertyReport>, AuditError> {
    let mut out = Vec::new();
    for (n, t) in [(3, 1), (5, 2), (7, 2)] {
        out.push(threshold::any_t_uniform(f(p), n, t)?);
        out.push(threshold::k_plus_t_determine(f(p), n, t)?);
    }
    Ok(out)
}

pub fn colluder_suite() -> Result<Vec<PropertyReport>, AuditError> {
    colluder_properties()
}

pub fn union_properties(p: u64) -> Result<Vec<PropertyReport>, AuditError> {
    Ok(vec![
        ownership::shares_received(f(p), 3)?,
        ownership::aggregate_colluder_holds(f(p))?,
        ownership::aggregate_colluder_lacks(f(p))?,
        ownership::aggregate_unblinded(f(p))?,
    ])
}

/// Server-view audit and view counts on a small session, plus the
/// leak-raw-shares negative control when that hook is compiled in.
pub fn structural_properties(opts: &SuiteOptions) -> Result<Vec<PropertyReport>, AuditError> {
    let (outcome, scale) = run_structural(opts.leak_raw_shares)?;
    let mut out = vec![structural_property("server-view/structural", &outcome, scale.clone())];
    out.push(view_count_property(&outcome, 5, 2, scale));
    #[cfg(feature = "sabotage")]
    if !opts.leak_raw_shares {
        let (leaky, scale) = run_structural(true)?;
        let probe = structural_property("x", &leaky, scale.clone());
        out.push(PropertyReport::new(
            "server-view/leak-raw-shares-negative-control".into(),
            scale,
            0,
            !probe.passed(),
            format!("audit on a leaking session: {}", probe.detail),
        ));
    }
    Ok(out)
}

/// Every audit property.
pub fn run_suite(opts: &SuiteOptions) -> Result<AuditReport, AuditError> {
    let mut props = threshold_properties(17)?;
    props.extend(colluder_suite()?);
    props.extend(union_properties(17)?);
    props.extend(structural_properties(opts)?);
    Ok(AuditReport::new(props))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::transport::DeliverySchedule;

    #[test]
    fn combinations_count() {
        assert_eq!(combinations(5, 2).len(), 10);
        assert_eq!(combinations(3, 0), vec![Vec::<usize>::new()]);
        assert_eq!(combinations(4, 4), vec![vec![0, 1, 2, 3]]);
    }

    fn session() -> SessionOutcome {
        let c = DeploymentConfig::new(3, 1, 2, Assignment::Random { entities: 3, density: 0.6 }).insecure();
        c.deployment().unwrap().run_simulated(DeliverySchedule::default()).unwrap()
    }

    #[test]
    fn capture_rules() {
        let out = session();
        let server = capture_view(&out.transcript, &Corrupt::Server, 1, false).unwrap();
        assert_eq!(server.entries.len(), out.transcript.wire_only().len());
        assert!(server_view_audit(&server).passed());
        let empty = capture_view(&out.transcript, &Corrupt::Clients(BTreeSet::new()), 1, false).unwrap();
        assert!(empty.is_empty());
        assert!(capture_view(&out.transcript, &Corrupt::Clients([1, 2].into()), 1, false).is_err());
        assert!(capture_view(&out.transcript, &Corrupt::Clients([1, 2].into()), 1, true).is_ok());
        assert!(view_count_property(&out, 3, 1, String::new()).passed());
    }

    #[test]
    fn plain_share_flagged() {
        let mut out = session();
        let e = out.transcript.entries.iter_mut().find(|e| e.msg.msg_type == MsgType::ShareUpload && matches!(e.link, Link::Wire { .. })).unwrap();
        e.msg.payload[0] = PayloadClass::Plain as u8;
        let view = capture_view(&out.transcript, &Corrupt::Server, 1, false).unwrap();
        let r = server_view_audit(&view);
        assert!(!r.passed());
        assert_eq!(r.violations.len(), 1);
    }
}
