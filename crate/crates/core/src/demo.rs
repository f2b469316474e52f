//! The three-client worked example: N = 3, T = K = 1, two entities, with
//! block points (1, 2) and client points (3, 4, 5). Every printed quantity is checked.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::config::{Assignment, DeploymentConfig, PointsConfig};
use crate::field::{FieldElement, PrimeField, Rational};
use crate::poly::{
    answer_query, noise_poly_evals, noise_propagation_weights, query_encode, recovery_weights, share_weights,
    ProtocolParams, SharePoly,
};
use crate::protocol::expand::expand_entity;
use crate::protocol::{SessionError, SessionOutcome};
use crate::transport::{DeliverySchedule, MsgType};

#[derive(Clone, Debug, Serialize)]
pub struct DemoCheck {
    pub name: String,
    pub expected: String,
    pub actual: String,
    pub ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrameLine {
    pub msg_type: String,
    pub round: u32,
    pub from: u16,
    pub to: u16,
    pub slot: u32,
    pub bytes: usize,
    pub local: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct DemoReport {
    pub checks: Vec<DemoCheck>,
    pub transcript_digest: String,
    pub transcript: Vec<FrameLine>,
    pub passed: bool,
}

#[derive(Debug, thiserror::Error)]
pub enum DemoError {
    #[error("{0}")]
    Config(#[from] crate::config::ConfigErrors),
    #[error(transparent)]
    Session(#[from] SessionError),
}

/// Local embeddings: client 1 and 3 hold e1, client 2 holds e2.
pub fn demo_config() -> DeploymentConfig {
    let one = |e: &str, h: [f64; 2]| BTreeMap::from([(e.to_string(), h.to_vec())]);
    let embeddings = vec![one("e1", [0.5, -0.25]), one("e2", [0.75, 0.125]), one("e1", [0.25, 1.0])];
    let mut c = DeploymentConfig::new(3, 1, 2, Assignment::Explicit { embeddings }).insecure();
    c.vocabulary = Some(vec!["e1".into(), "e2".into()]);
    c.points = Some(PointsConfig {
        block_points: vec![1, 2],
        client_points: vec![3, 4, 5],
    });
    c
}

fn signed(v: &[FieldElement]) -> String {
    let parts: Vec<String> = v.iter().map(|x| x.to_signed().to_string()).collect();
    format!("({})", parts.join(", "))
}

fn check(name: &str, expected: String, actual: String) -> DemoCheck {
    DemoCheck {
        name: name.into(),
        ok: expected == actual,
        expected,
        actual,
    }
}

/// `c + a*z1 + b*z2` rendered the way the example writes query entries.
fn affine(c: i128, a: i128, b: i128) -> String {
    let mut s = String::new();
    for (coef, var) in [(c, ""), (a, "z1"), (b, "z2")] {
        if coef == 0 {
            continue;
        }
        if !s.is_empty() && coef > 0 {
            s.push('+');
        }
        s.push_str(&coef.to_string());
        s.push_str(var);
    }
    if s.is_empty() {
        s.push('0');
    }
    s
}

/// The coded query to client `v` rendered symbolically in `z1`, `z2`.
fn symbolic_query(params: &ProtocolParams, v: usize) -> String {
    let f = params.field;
    let at = |z1: u64, z2: u64| query_encode(0, &[vec![f.elem(z1)], vec![f.elem(z2)]], params, params.client_point(v)).unwrap();
    let (c, e1, e2) = (at(0, 0), at(1, 0), at(0, 1));
    let entries: Vec<String> = (0..2)
        .map(|m| affine(c[m].to_signed(), (e1[m] - c[m]).to_signed(), (e2[m] - c[m]).to_signed()))
        .collect();
    format!("({})", entries.join(", "))
}

fn structural_checks(params: &ProtocolParams) -> Vec<DemoCheck> {
    let f = params.field;
    let mut out = Vec::new();
    let table: Vec<String> = (0..3).map(|v| signed(&share_weights(params, params.client_point(v)))).collect();
    out.push(check("share coefficients (h, z) at client points 3, 4, 5", "(-1, 2) (-2, 3) (-3, 4)".into(), table.join(" ")));
    let queries: Vec<String> = (0..3).map(|v| symbolic_query(params, v)).collect();
    out.push(check(
        "queries of client 1 for e1",
        "(-1+2z1, 2z2) (-2+3z1, 3z2) (-3+4z1, 4z2)".into(),
        queries.join(" "),
    ));
    out.push(check("recovery weights", "(6, -8, 3)".into(), signed(&recovery_weights(params, 0))));
    // The example's server noise is pre-scaled by 3: noise(x_v) for v = 1, 2
    // are 3 s1 and 3 s2.
    let three = f.elem(3);
    let scaled: Vec<String> = (0..3)
        .map(|v| signed(&noise_propagation_weights(params, v).into_iter().map(|w| w * three).collect::<Vec<_>>()))
        .collect();
    out.push(check(
        "server noise exponents of (s1, s2) in Y1, Y2, Y3",
        "(3, 0) (0, 3) (-6, 8)".into(),
        scaled.join(" "),
    ));
    out
}

/// `6 Y1 - 8 Y2 + 3 Y3 = (r (h1 + h3), 2 r)` for concrete values, computed
/// with the same routines the clients and server use.
fn identity_check(params: &ProtocolParams, h: [[i64; 2]; 3]) -> DemoCheck {
    let f = params.field;
    let e = |x: i64| f.from_i64(x);
    let owned = [(0usize, 0usize), (1, 1), (2, 0)];
    let mut agg: Vec<Vec<Vec<FieldElement>>> = vec![vec![f.zeros(params.block_len); 2]; 3];
    for (n, &(client, entity)) in owned.iter().enumerate() {
        let coords = [e(h[n][0]), e(h[n][1])];
        for m in 0..2 {
            let held = (m == entity).then_some(&coords[..]);
            let blocks = expand_entity(params, m, held).blocks;
            let noise = vec![vec![e(11 + client as i64 * 5 + m as i64); params.block_len]];
            let poly = SharePoly::new(params, &blocks, &noise).unwrap();
            for v in 0..3 {
                for (a, x) in agg[v][m].iter_mut().zip(poly.eval(params.client_point(v))) {
                    *a += x;
                }
            }
        }
    }
    let (z1, z2, r) = (e(29), e(31), e(37));
    let s = [vec![e(41); params.block_len], vec![e(43); params.block_len]];
    let three = e(3);
    let noise_at = noise_poly_evals(&[s[0].iter().map(|&x| x * three).collect(), s[1].iter().map(|&x| x * three).collect()], params)
        .unwrap();
    let w = recovery_weights(params, 0);
    let mut combo = f.zeros(params.block_len);
    for v in 0..3 {
        let q = query_encode(0, &[vec![z1], vec![z2]], params, params.client_point(v)).unwrap();
        let a = answer_query(&q, &agg[v], params);
        let y: Vec<FieldElement> = a.iter().zip(&noise_at[v]).map(|(&x, &p)| r * x + p).collect();
        crate::field::axpy(&mut combo, w[v], &y);
    }
    let expected = vec![r * e(h[0][0] + h[2][0]), r * e(h[0][1] + h[2][1]), r * e(2)];
    check("6 Y1 - 8 Y2 + 3 Y3 = (r (h1 + h3), 2r)", signed(&expected), signed(&combo))
}

fn frames(outcome: &SessionOutcome) -> Vec<FrameLine> {
    outcome
        .transcript
        .entries
        .iter()
        .map(|e| {
            let (from, to, local) = match e.link {
                crate::transport::Link::Wire { from, to } => (from, to, false),
                crate::transport::Link::Local(p) => (p, p, true),
            };
            FrameLine {
                msg_type: format!("{:?}", e.msg.msg_type),
                round: e.msg.round,
                from,
                to,
                slot: e.msg.slot,
                bytes: e.wire_bytes(),
                local,
            }
        })
        .collect()
}

fn rational(q: &Rational) -> String {
    q.to_string()
}

fn outcome_checks(cfg: &DeploymentConfig, outcome: &SessionOutcome) -> Vec<DemoCheck> {
    let scale = cfg.scale as i64;
    let Assignment::Explicit { embeddings } = &cfg.assignment else { unreachable!() };
    let q = |c: usize, e: &str, i: usize| (embeddings[c][e][i] * scale as f64).round() as i64;
    let avg = |i: usize| Rational::new(q(0, "e1", i) + q(2, "e1", i), 2);
    let mut out = Vec::new();
    let round = &outcome.rounds[0];
    for c in [0usize, 2] {
        let got = round.clients[c].get("e1").map(|g| g.exact.iter().map(rational).collect::<Vec<_>>().join(", "));
        out.push(check(
            &format!("client {} output for e1 = (h1 + h3) / 2", c + 1),
            format!("{}, {}", rational(&avg(0)), rational(&avg(1))),
            got.unwrap_or_else(|| "missing".into()),
        ));
    }
    let got = round.clients[1].get("e2").map(|g| g.exact.iter().map(rational).collect::<Vec<_>>().join(", "));
    out.push(check(
        "client 2 output for e2 = h2",
        format!("{}, {}", Rational::new(q(1, "e2", 0), 1), Rational::new(q(1, "e2", 1), 1)),
        got.unwrap_or_else(|| "missing".into()),
    ));
    out.push(check("outputs equal the plaintext oracle", "true".into(), round.matches_oracle.to_string()));
    let uploads = outcome.transcript.entries.iter().filter(|e| e.msg.msg_type == MsgType::ShareUpload).count();
    out.push(check("ShareUpload messages (N^2)", "9".into(), uploads.to_string()));
    out.push(check("entity union", "e1, e2".into(), outcome.union.join(", ")));
    out
}

pub fn run_demo() -> Result<DemoReport, DemoError> {
    let cfg = demo_config();
    let dep = cfg.deployment()?;
    let params = dep.ctx.params(2).expect("demo parameters are valid");
    let mut checks = structural_checks(&params);
    checks.push(identity_check(&params, [[3, -1], [5, 2], [7, 4]]));
    let outcome = dep.run_simulated(DeliverySchedule::default())?;
    checks.extend(outcome_checks(&cfg, &outcome));
    let passed = checks.iter().all(|c| c.ok);
    Ok(DemoReport {
        checks,
        transcript_digest: outcome.transcript.digest(),
        transcript: frames(&outcome),
        passed,
    })
}

/// The example's parameters over an arbitrary field, for tests.
pub fn example_params(field: PrimeField) -> ProtocolParams {
    let e = |v: &[u64]| v.iter().map(|&x| field.elem(x)).collect();
    let points = crate::poly::EvaluationPoints::new(e(&[1, 2]), e(&[3, 4, 5])).unwrap();
    ProtocolParams::with_points(field, 3, 1, 2, 2, points).unwrap()
}
