//! Exhaustive enumeration of small randomness spaces into exact distributions.

use std::collections::HashMap;

use num_rational::Ratio;
use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use super::AuditError;
use crate::field::{FieldElement, PrimeField};

/// Hard cap on the number of draws a single enumeration may visit.
pub const ENUMERATION_BUDGET: u64 = 1 << 27;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Domain {
    Any,
    NonZero,
}

/// A product of field-valued random variables, each uniform on its domain.
#[derive(Clone, Debug)]
pub struct Space {
    field: PrimeField,
    dims: Vec<Domain>,
}

impl Space {
    pub fn new(field: PrimeField) -> Self {
        Self { field, dims: Vec::new() }
    }

    pub fn with(mut self, count: usize, domain: Domain) -> Self {
        self.dims.extend(std::iter::repeat_n(domain, count));
        self
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    fn radix(&self, d: Domain) -> u64 {
        match d {
            Domain::Any => self.field.modulus(),
            Domain::NonZero => self.field.modulus() - 1,
        }
    }

    /// Number of equally likely draws, if it fits in a `u64`.
    pub fn size(&self) -> Option<u64> {
        self.dims.iter().try_fold(1u64, |acc, &d| acc.checked_mul(self.radix(d)))
    }

    fn decode(&self, mut index: u64, out: &mut Vec<FieldElement>) {
        out.clear();
        for &d in &self.dims {
            let r = self.radix(d);
            let digit = index % r;
            index /= r;
            out.push(self.field.elem(if d == Domain::NonZero { digit + 1 } else { digit }));
        }
    }
}

/// Exact distribution of a view: occurrence counts over all draws that
/// satisfy the conditioning event.
#[derive(Clone, Debug, Default)]
pub struct Distribution {
    pub draws: u64,
    /// Draws excluded by the conditioning event.
    pub excluded: u64,
    pub counts: HashMap<Vec<u64>, u64>,
}

impl Distribution {
    /// Draws that satisfied the conditioning event.
    pub fn kept(&self) -> u64 {
        self.draws - self.excluded
    }

    /// Exact equality of the conditional distributions.
    pub fn same_as(&self, other: &Distribution) -> bool {
        let (a, b) = (u128::from(self.kept()), u128::from(other.kept()));
        if a == 0 || b == 0 {
            return a == b;
        }
        self.counts.len() == other.counts.len()
            && self
                .counts
                .iter()
                .all(|(v, &c)| other.counts.get(v).is_some_and(|&d| u128::from(c) * b == u128::from(d) * a))
    }

    /// True when every view in the support has the same probability.
    pub fn is_uniform_over(&self, support: u64) -> bool {
        self.counts.len() as u64 == support && self.kept().is_multiple_of(support) && {
            let each = self.kept() / support;
            self.counts.values().all(|&c| c == each)
        }
    }

    /// Sum of every entry's probability, in exact arithmetic.
    pub fn probability_sum(&self) -> Ratio<u128> {
        let kept = u128::from(self.kept().max(1));
        self.counts
            .values()
            .fold(Ratio::from_integer(0), |acc, &c| acc + Ratio::new(u128::from(c), kept))
    }

    /// Tabulates the distribution, listing at most `limit` entries in view order.
    pub fn table(&self, label: &str, limit: usize) -> DistributionTable {
        let mut entries: Vec<(&Vec<u64>, u64)> = self.counts.iter().map(|(v, &c)| (v, c)).collect();
        entries.sort_unstable();
        let mut h = Sha256::new();
        for (v, c) in &entries {
            for x in v.iter() {
                h.update(x.to_be_bytes());
            }
            h.update(b";");
            h.update(c.to_be_bytes());
            h.update(b"\n");
        }
        let kept = self.kept().max(1);
        DistributionTable {
            label: label.to_string(),
            draws: self.draws,
            excluded: self.excluded,
            support: entries.len(),
            probability_sum: self.probability_sum().to_string(),
            digest: hex::encode(h.finalize()),
            entries: entries
                .iter()
                .take(limit)
                .map(|(v, c)| TableEntry {
                    view: v.to_vec(),
                    probability: Ratio::new(u128::from(*c), u128::from(kept)).to_string(),
                })
                .collect(),
            truncated: entries.len() > limit,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct TableEntry {
    pub view: Vec<u64>,
    pub probability: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct DistributionTable {
    pub label: String,
    pub draws: u64,
    pub excluded: u64,
    pub support: usize,
    pub probability_sum: String,
    /// SHA-256 over the full sorted table.
    pub digest: String,
    pub entries: Vec<TableEntry>,
    pub truncated: bool,
}

/// Visits every draw of `space` and counts the views. `view` returns `None`
/// for draws outside the conditioning event.
pub fn enumerate<F>(space: &Space, view: F) -> Result<Distribution, AuditError>
where
    F: Fn(&[FieldElement]) -> Option<Vec<u64>> + Sync,
{
    let size = match space.size() {
        Some(s) if s <= ENUMERATION_BUDGET => s,
        other => {
            return Err(AuditError::Budget {
                draws: other,
                budget: ENUMERATION_BUDGET,
                variables: space.len(),
                modulus: space.field.modulus(),
            })
        }
    };
    const CHUNK: u64 = 1 << 12;
    let chunks = size.div_ceil(CHUNK);
    let merged = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut d = Distribution::default();
            let mut buf = Vec::with_capacity(space.len());
            for i in c * CHUNK..((c + 1) * CHUNK).min(size) {
                space.decode(i, &mut buf);
                d.draws += 1;
                match view(&buf) {
                    Some(v) => *d.counts.entry(v).or_default() += 1,
                    None => d.excluded += 1,
                }
            }
            d
        })
        .reduce(Distribution::default, |mut a, b| {
            a.draws += b.draws;
            a.excluded += b.excluded;
            for (v, c) in b.counts {
                *a.counts.entry(v).or_default() += c;
            }
            a
        });
    Ok(merged)
}

pub fn values(v: &[FieldElement]) -> impl Iterator<Item = u64> + '_ {
    v.iter().map(|x| x.value())
}

/// Sequential reader over one draw.
pub struct Cursor<'a> {
    draw: &'a [FieldElement],
}

impl<'a> Cursor<'a> {
    pub fn new(draw: &'a [FieldElement]) -> Self {
        Self { draw }
    }

    pub fn next(&mut self) -> FieldElement {
        let (first, rest) = self.draw.split_first().expect("draw shorter than its layout");
        self.draw = rest;
        *first
    }

    pub fn rows(&mut self, rows: usize, len: usize) -> Vec<Vec<FieldElement>> {
        (0..rows).map(|_| (0..len).map(|_| self.next()).collect()).collect()
    }

    pub fn is_exhausted(&self) -> bool {
        self.draw.is_empty()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn f7() -> PrimeField {
        PrimeField::new(7).unwrap()
    }

    #[test]
    fn space_visits_every_draw_once() {
        let s = Space::new(f7()).with(2, Domain::Any).with(1, Domain::NonZero);
        assert_eq!(s.size(), Some(7 * 7 * 6));
        let d = enumerate(&s, |x| Some(values(x).collect())).unwrap();
        assert_eq!(d.draws, 294);
        assert_eq!(d.counts.len(), 294);
        assert!(d.counts.keys().all(|v| v[2] != 0));
        assert_eq!(d.probability_sum(), Ratio::from_integer(1));
    }

    #[test]
    fn sum_of_two_uniform_is_uniform() {
        let s = Space::new(f7()).with(2, Domain::Any);
        let d = enumerate(&s, |x| Some(vec![(x[0] + x[1]).value()])).unwrap();
        assert!(d.is_uniform_over(7));
        let prod = enumerate(&s, |x| Some(vec![(x[0] * x[1]).value()])).unwrap();
        assert!(!prod.is_uniform_over(7));
        assert!(!d.same_as(&prod));
    }

    #[test]
    fn conditioning_renormalizes() {
        let s = Space::new(f7()).with(1, Domain::Any);
        let a = enumerate(&s, |x| (!x[0].is_zero()).then(|| vec![1])).unwrap();
        let b = enumerate(&s, |_| Some(vec![1])).unwrap();
        assert_eq!(a.excluded, 1);
        assert!(a.same_as(&b));
        assert_eq!(a.table("t", 10).probability_sum, "1");
    }

    #[test]
    fn budget_enforced() {
        let s = Space::new(PrimeField::new(17).unwrap()).with(8, Domain::Any);
        assert!(matches!(enumerate(&s, |_| None), Err(AuditError::Budget { .. })));
    }
}
