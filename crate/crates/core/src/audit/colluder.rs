//! Desk-scale views of colluding clients, built from the protocol's own
//! encoding functions with every random value read from an explicit draw.
//! Paillier is bypassed: the server's blinding `r * A + noise` is applied in F.

use super::enumerate::{enumerate, values, Cursor, Distribution, Domain, Space};
use super::{AuditError, PropertyReport};
use crate::field::FieldElement;
use crate::poly::{answer_query, noise_poly_evals, query_encode, share_weights, ProtocolParams, SharePoly};
use crate::protocol::expand::expand_entity;

/// One round's plaintext inputs.
#[derive(Clone, Debug)]
pub struct RoundModel {
    pub params: ProtocolParams,
    /// `holdings[n][m]` is client `n`'s coordinates for entity `m` (both
    /// 0-based), or `None` if it does not hold the entity.
    pub holdings: Vec<Vec<Option<Vec<FieldElement>>>>,
}

/// Who queries what: `targets[v]` lists the entities client `v` retrieves.
#[derive(Clone, Debug)]
pub struct QueryModel {
    pub params: ProtocolParams,
    pub targets: Vec<Vec<usize>>,
}

impl RoundModel {
    /// Builds a model from small integer coordinates.
    pub fn new(params: ProtocolParams, holdings: &[&[Option<&[u64]>]]) -> Self {
        let f = params.field;
        let holdings = holdings
            .iter()
            .map(|row| row.iter().map(|h| h.map(|v| v.iter().map(|&x| f.elem(x)).collect())).collect())
            .collect();
        Self { params, holdings }
    }

    fn blocks(&self, n: usize, m: usize) -> Vec<Vec<FieldElement>> {
        expand_entity(&self.params, m, self.holdings[n][m].as_deref()).blocks
    }

    /// Entities client `n` retrieves, in slot order.
    pub fn slots(&self, n: usize) -> Vec<usize> {
        (0..self.params.m).filter(|&m| self.holdings[n][m].is_some()).collect()
    }

    /// `sum_n` of the expanded embeddings of entity `m`: the aggregate a
    /// holder of `m` learns, as numerator and count.
    pub fn aggregate(&self, m: usize) -> Vec<FieldElement> {
        let f = self.params.field;
        let mut acc = f.zeros(self.params.padded_len());
        for n in 0..self.params.n {
            for (a, x) in acc.iter_mut().zip(self.blocks(n, m).concat()) {
                *a += x;
            }
        }
        acc
    }

    pub fn queries(&self) -> QueryModel {
        QueryModel {
            params: self.params.clone(),
            targets: (0..self.params.n).map(|n| self.slots(n)).collect(),
        }
    }

    /// The public outcome and the colluders' own data must agree between
    /// the two secrets for a comparison to be meaningful.
    fn check_pair(&self, other: &RoundModel, corrupt: &[usize]) -> Result<(), AuditError> {
        let bad = |why: String| Err(AuditError::InvalidPair(why));
        if self.params != other.params {
            return bad("parameters differ".into());
        }
        for m in 0..self.params.m {
            let held = |r: &RoundModel| (0..r.params.n).any(|n| r.holdings[n][m].is_some());
            if !held(self) || !held(other) {
                return bad(format!("entity {m} is not in the union of both secrets"));
            }
        }
        for n in 0..self.params.n {
            if self.slots(n).len() != other.slots(n).len() {
                return bad(format!("client {} holds a different number of entities", n + 1));
            }
        }
        for &c in corrupt {
            if self.holdings[c] != other.holdings[c] {
                return bad(format!("colluder {} holds different data", c + 1));
            }
            for m in self.slots(c) {
                if self.aggregate(m) != other.aggregate(m) {
                    return bad(format!("colluder {} would recover a different aggregate for entity {m}", c + 1));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic stand-in for randomness the colluders generated themselves.
fn fixed(params: &ProtocolParams, salt: usize, rows: usize, len: usize) -> Vec<Vec<FieldElement>> {
    (0..rows)
        .map(|i| (0..len).map(|j| params.field.elem((salt * 7 + i * 3 + j + 1) as u64)).collect())
        .collect()
}

fn check_corrupt(params: &ProtocolParams, corrupt: &[usize], force: bool) -> Result<(), AuditError> {
    if corrupt.iter().any(|&c| c >= params.n) {
        return Err(AuditError::CorruptSet(format!("colluder outside 1..={}", params.n)));
    }
    if corrupt.len() > params.t && !force {
        return Err(AuditError::CorruptSet(format!(
            "{} colluders exceed T={}; only allowed as a negative control",
            corrupt.len(),
            params.t
        )));
    }
    Ok(())
}

fn honest(params: &ProtocolParams, corrupt: &[usize]) -> Vec<usize> {
    (0..params.n).filter(|n| !corrupt.contains(n)).collect()
}

/// Share polynomials of every (client, entity); honest noise read from `c`.
fn share_polys(model: &RoundModel, corrupt: &[usize], c: &mut Cursor<'_>) -> Vec<Vec<SharePoly>> {
    let p = &model.params;
    (0..p.n)
        .map(|n| {
            (0..p.m)
                .map(|m| {
                    let noise = if corrupt.contains(&n) {
                        fixed(p, n * p.m + m, p.t, p.block_len)
                    } else {
                        c.rows(p.t, p.block_len)
                    };
                    SharePoly::new(p, &model.blocks(n, m), &noise).expect("shapes follow params")
                })
                .collect()
        })
        .collect()
}

fn share_space(model: &RoundModel, corrupt: &[usize]) -> Space {
    let p = &model.params;
    Space::new(p.field).with(honest(p, corrupt).len() * p.m * p.t * p.block_len, Domain::Any)
}

/// Shares received by the colluders: `f_{n,m}(x_c)` for all `n`, `m`.
fn share_view(model: &RoundModel, corrupt: &[usize], draw: &[FieldElement]) -> Vec<u64> {
    let mut c = Cursor::new(draw);
    let polys = share_polys(model, corrupt, &mut c);
    collect_shares(&model.params, &polys, corrupt)
}

fn collect_shares(p: &ProtocolParams, polys: &[Vec<SharePoly>], corrupt: &[usize]) -> Vec<u64> {
    let mut view = Vec::new();
    for &c in corrupt {
        let w = share_weights(p, p.client_point(c));
        for row in polys {
            for poly in row {
                view.extend(values(&poly.eval_with(&w)));
            }
        }
    }
    view
}

fn query_space(model: &QueryModel, corrupt: &[usize]) -> Space {
    let p = &model.params;
    let slots: usize = honest(p, corrupt).iter().map(|&v| model.targets[v].len()).sum();
    Space::new(p.field).with(slots * p.m * p.t, Domain::Any)
}

/// Honest clients' queries as evaluated at the colluders' points.
fn query_view(model: &QueryModel, corrupt: &[usize], draw: &[FieldElement]) -> Vec<u64> {
    let p = &model.params;
    let mut c = Cursor::new(draw);
    let mut view = Vec::new();
    for v in honest(p, corrupt) {
        for &target in &model.targets[v] {
            let noise = c.rows(p.m, p.t);
            for &k in corrupt {
                view.extend(values(&query_encode(target, &noise, p, p.client_point(k)).expect("shapes follow params")));
            }
        }
    }
    view
}

fn response_space(model: &RoundModel, corrupt: &[usize]) -> Space {
    let p = &model.params;
    let slots: usize = corrupt.iter().map(|&c| model.slots(c).len()).sum();
    share_space(model, corrupt)
        .with(slots, Domain::NonZero)
        .with(slots * p.k_tilde() * p.block_len, Domain::Any)
}

/// Shares received by the colluders plus the blinded responses `Y_v` to
/// every colluder query. Layout of the draw: honest share noise, then per
/// colluder slot the randomizer `r` and the server noise.
fn response_view(model: &RoundModel, corrupt: &[usize], draw: &[FieldElement]) -> Vec<u64> {
    let p = &model.params;
    let mut c = Cursor::new(draw);
    let polys = share_polys(model, corrupt, &mut c);
    let mut view = collect_shares(p, &polys, corrupt);
    let slots: Vec<(usize, usize, usize)> = corrupt
        .iter()
        .flat_map(|&k| model.slots(k).into_iter().enumerate().map(move |(s, m)| (k, s, m)))
        .collect();
    let rs: Vec<FieldElement> = slots.iter().map(|_| c.next()).collect();
    let aggregates: Vec<Vec<Vec<FieldElement>>> = (0..p.n)
        .map(|v| {
            let w = share_weights(p, p.client_point(v));
            (0..p.m)
                .map(|m| {
                    let mut acc = p.field.zeros(p.block_len);
                    for row in &polys {
                        for (a, x) in acc.iter_mut().zip(row[m].eval_with(&w)) {
                            *a += x;
                        }
                    }
                    acc
                })
                .collect()
        })
        .collect();
    for (&(k, s, target), &r) in slots.iter().zip(&rs) {
        let noise_at = noise_poly_evals(&c.rows(p.k_tilde(), p.block_len), p).expect("shapes follow params");
        let qnoise = fixed(p, 100 + k * p.m + s, p.m, p.t);
        for v in 0..p.n {
            let q = query_encode(target, &qnoise, p, p.client_point(v)).expect("shapes follow params");
            let a = answer_query(&q, &aggregates[v], p);
            view.extend(a.iter().zip(&noise_at[v]).map(|(&x, &z)| (r * x + z).value()));
        }
    }
    debug_assert!(c.is_exhausted());
    view
}

pub struct Part {
    pub label: String,
    pub a: Distribution,
    pub b: Distribution,
}

fn scale_of(p: &ProtocolParams, corrupt: &[usize]) -> String {
    let ids: Vec<String> = corrupt.iter().map(|c| (c + 1).to_string()).collect();
    format!(
        "p={} N={} T={} K={} M={} d={} colluders={{{}}}",
        p.field.modulus(),
        p.n,
        p.t,
        p.k,
        p.m,
        p.d,
        ids.join(",")
    )
}

/// Compares the parts and reports against the expectation.
pub fn pair_report(name: &str, scale: String, expect_identical: bool, parts: Vec<Part>, note: &str) -> PropertyReport {
    let draws = parts.iter().map(|p| p.a.draws + p.b.draws).sum();
    let identical = parts.iter().all(|p| p.a.same_as(&p.b));
    let observed = if identical { "identical" } else { "different" };
    let expected = if expect_identical { "identical" } else { "different" };
    let mut detail = format!("distributions {observed} under the two secrets (expected {expected})");
    if !note.is_empty() {
        detail.push_str("; ");
        detail.push_str(note);
    }
    let tables = parts
        .iter()
        .flat_map(|p| [p.a.table(&format!("{} / secret 0", p.label), 16), p.b.table(&format!("{} / secret 1", p.label), 16)])
        .collect();
    PropertyReport::new(name.to_string(), scale, draws, identical == expect_identical, detail).with_tables(tables)
}

pub fn shares_only(
    name: &str,
    a: &RoundModel,
    b: &RoundModel,
    corrupt: &[usize],
    expect_identical: bool,
) -> Result<PropertyReport, AuditError> {
    check_corrupt(&a.params, corrupt, !expect_identical)?;
    a.check_pair(b, corrupt)?;
    let space = share_space(a, corrupt);
    let part = Part {
        label: "shares".into(),
        a: enumerate(&space, |d| Some(share_view(a, corrupt, d)))?,
        b: enumerate(&space, |d| Some(share_view(b, corrupt, d)))?,
    };
    Ok(pair_report(name, scale_of(&a.params, corrupt), expect_identical, vec![part], "colluders' own noise fixed"))
}

pub fn queries_only(
    name: &str,
    a: &QueryModel,
    b: &QueryModel,
    corrupt: &[usize],
    expect_identical: bool,
) -> Result<PropertyReport, AuditError> {
    check_corrupt(&a.params, corrupt, !expect_identical)?;
    if a.targets.iter().map(Vec::len).ne(b.targets.iter().map(Vec::len)) {
        return Err(AuditError::InvalidPair("query counts differ".into()));
    }
    let space = query_space(a, corrupt);
    let part = Part {
        label: "queries".into(),
        a: enumerate(&space, |d| Some(query_view(a, corrupt, d)))?,
        b: enumerate(&space, |d| Some(query_view(b, corrupt, d)))?,
    };
    Ok(pair_report(
        name,
        scale_of(&a.params, corrupt),
        expect_identical,
        vec![part],
        "query counts per client held fixed",
    ))
}

/// Everything the colluders receive in one round. The view factors into
/// the honest queries, which depend only on honest query noise, and the
/// shares together with the responses; each factor is enumerated exactly.
pub fn full_round(
    name: &str,
    a: &RoundModel,
    b: &RoundModel,
    corrupt: &[usize],
    expect_identical: bool,
) -> Result<PropertyReport, AuditError> {
    check_corrupt(&a.params, corrupt, !expect_identical)?;
    a.check_pair(b, corrupt)?;
    let (qa, qb) = (a.queries(), b.queries());
    let qspace = query_space(&qa, corrupt);
    let rspace = response_space(a, corrupt);
    let parts = vec![
        Part {
            label: "queries".into(),
            a: enumerate(&qspace, |d| Some(query_view(&qa, corrupt, d)))?,
            b: enumerate(&qspace, |d| Some(query_view(&qb, corrupt, d)))?,
        },
        Part {
            label: "shares and responses".into(),
            a: enumerate(&rspace, |d| Some(response_view(a, corrupt, d)))?,
            b: enumerate(&rspace, |d| Some(response_view(b, corrupt, d)))?,
        },
    ];
    Ok(pair_report(
        name,
        scale_of(&a.params, corrupt),
        expect_identical,
        parts,
        "Paillier bypassed; colluders' own noise fixed; factored as queries x (shares, responses)",
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::PrimeField;
    use crate::poly::reconstruct_recover;

    fn params(p: u64, m: usize, d: usize) -> ProtocolParams {
        ProtocolParams::new(PrimeField::new(p).unwrap(), 3, 1, m, d).unwrap()
    }

    #[test]
    fn model_responses_recover_blinded_aggregate() {
        let p = params(101, 2, 1);
        let model = RoundModel::new(p.clone(), &[&[Some(&[5]), None], &[None, Some(&[9])], &[Some(&[7]), None]]);
        let space = response_space(&model, &[0]);
        let draw: Vec<FieldElement> = (0..space.len()).map(|i| p.field.elem(i as u64 * 13 + 2)).collect();
        let view = response_view(&model, &[0], &draw);
        let shares = 3 * 2 * p.block_len;
        let y: Vec<Vec<FieldElement>> = view[shares..]
            .chunks(p.block_len)
            .map(|c| c.iter().map(|&x| p.field.elem(x)).collect())
            .collect();
        let rec = reconstruct_recover(&y, &p).unwrap().concat();
        // r is the first draw after the 8 honest share noise values.
        let r = draw[2 * 2 * p.block_len];
        let expect: Vec<FieldElement> = model.aggregate(0).iter().map(|&x| r * x).collect();
        assert_eq!(rec, expect);
        assert_eq!(model.aggregate(0), vec![p.field.elem(12), p.field.elem(2)]);
    }

    #[test]
    fn invalid_pairs_rejected() {
        let p = params(7, 2, 0);
        let a = RoundModel::new(p.clone(), &[&[Some(&[]), None], &[None, Some(&[])], &[Some(&[]), None]]);
        let b = RoundModel::new(p.clone(), &[&[Some(&[]), None], &[None, Some(&[])], &[None, Some(&[])]]);
        assert!(matches!(full_round("x", &a, &b, &[0], true), Err(AuditError::InvalidPair(_))));
        assert!(matches!(shares_only("x", &a, &a, &[0, 1], true), Err(AuditError::CorruptSet(_))));
    }
}
