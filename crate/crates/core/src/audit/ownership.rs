//! Ownership hiding of the entity union with a single bucket.

use super::enumerate::{enumerate, values, Cursor, Domain, Space};
use super::colluder::{pair_report, Part};
use super::{AuditError, PropertyReport};
use crate::field::{FieldElement, PrimeField};
use crate::union::{blind_with, contribution_with, extract_union, split_with, sum_tables, EntityId, Extraction, UnionParams, UnionTable, Vocabulary};

struct Setup {
    field: PrimeField,
    params: UnionParams,
    vocab: Vocabulary,
    id: FieldElement,
    n: usize,
}

impl Setup {
    fn new(field: PrimeField, n: usize) -> Result<Self, AuditError> {
        let vocab = Vocabulary::new(&["e"], field).map_err(|e| AuditError::InvalidPair(e.to_string()))?;
        let id = field.elem(EntityId::new("e", field).image);
        Ok(Self {
            field,
            params: UnionParams::with_buckets(1, [7; 32]),
            vocab,
            id,
            n,
        })
    }

    fn contribution(&self, owns: bool, tag: FieldElement) -> UnionTable {
        let held: &[FieldElement] = if owns { std::slice::from_ref(&self.id) } else { &[] };
        contribution_with(held, &self.params, self.field, || tag)
    }

    fn scale(&self) -> String {
        format!("p={} N={} buckets=1 colluder=1", self.field.modulus(), self.n)
    }

    /// The blinded aggregate as the colluder (client 1) sees it, together
    /// with its own `tag`, conditioned on the public union being `{e}`.
    fn aggregate_view(&self, owners: &[bool], blinded: bool, draw: &[FieldElement]) -> Option<Vec<u64>> {
        let mut c = Cursor::new(draw);
        let rhos: Vec<FieldElement> = (0..self.n).map(|_| c.next()).collect();
        let blinder = c.next();
        let tables: Vec<UnionTable> = owners.iter().zip(&rhos).map(|(&o, &r)| self.contribution(o, r)).collect();
        let total = sum_tables(self.field, 1, &tables);
        let public = if blinded { blind_with(&total, || blinder) } else { total };
        if extract_union(&public, &self.params, Some(&self.vocab)) != Extraction::Union(vec![self.id]) {
            return None;
        }
        let mut view = Vec::new();
        if owners[0] {
            view.push(rhos[0].value());
        }
        view.extend(values(&public.to_flat()));
        Some(view)
    }

    fn aggregate_space(&self) -> Space {
        Space::new(self.field).with(self.n + 1, Domain::NonZero)
    }
}

/// Client `sender`'s union share as received by client 1, when the sender
/// holds `e` and when it does not.
pub fn shares_received(field: PrimeField, n: usize) -> Result<PropertyReport, AuditError> {
    let s = Setup::new(field, n)?;
    let sender = 1;
    let space = Space::new(field).with(1, Domain::NonZero).with(2 * (n - 1), Domain::Any);
    let view = |owns: bool| {
        let s = &s;
        move |draw: &[FieldElement]| {
            let mut c = Cursor::new(draw);
            let table = s.contribution(owns, c.next());
            let shares = split_with(&table, s.n, sender, s.field, || c.next());
            Some(values(&shares[0].to_flat()).collect())
        }
    };
    let part = Part {
        label: "share from client 2".into(),
        a: enumerate(&space, view(true))?,
        b: enumerate(&space, view(false))?,
    };
    Ok(pair_report("union/shares-received", s.scale(), true, vec![part], ""))
}

fn aggregate_pairs(
    name: &str,
    field: PrimeField,
    n: usize,
    pairs: &[(Vec<bool>, Vec<bool>)],
    blinded: bool,
    expect_identical: bool,
    note: &str,
) -> Result<PropertyReport, AuditError> {
    let s = Setup::new(field, n)?;
    let space = s.aggregate_space();
    let mut parts = Vec::new();
    for (a, b) in pairs {
        let fmt = |o: &[bool]| {
            let ids: Vec<String> = o.iter().enumerate().filter(|(_, &x)| x).map(|(i, _)| (i + 1).to_string()).collect();
            format!("{{{}}}", ids.join(","))
        };
        parts.push(Part {
            label: format!("holders {} vs {}", fmt(a), fmt(b)),
            a: enumerate(&space, |d| s.aggregate_view(a, blinded, d))?,
            b: enumerate(&space, |d| s.aggregate_view(b, blinded, d))?,
        });
    }
    Ok(pair_report(name, s.scale(), expect_identical, parts, note))
}

const CONDITIONED: &str = "conditioned on the public union being {e}";

/// The colluder holds `e`: whether anyone else does is hidden.
pub fn aggregate_colluder_holds(field: PrimeField) -> Result<PropertyReport, AuditError> {
    let pairs = [
        (vec![true, false, false], vec![true, true, false]),
        (vec![true, true, false], vec![true, true, true]),
    ];
    aggregate_pairs("union/aggregate-colluder-holds", field, 3, &pairs, true, true, CONDITIONED)
}

/// The colluder does not hold `e`: how many others do is hidden.
pub fn aggregate_colluder_lacks(field: PrimeField) -> Result<PropertyReport, AuditError> {
    let pairs = [(vec![false, true, false], vec![false, true, true])];
    aggregate_pairs("union/aggregate-colluder-lacks", field, 3, &pairs, true, true, CONDITIONED)
}

/// Negative control: without the server's blinding the colluder can tell
/// whether it is the only holder.
pub fn aggregate_unblinded(field: PrimeField) -> Result<PropertyReport, AuditError> {
    let pairs = [(vec![true, false, false], vec![true, true, false])];
    aggregate_pairs(
        "union/aggregate-unblinded-negative-control",
        field,
        3,
        &pairs,
        false,
        false,
        CONDITIONED,
    )
}
