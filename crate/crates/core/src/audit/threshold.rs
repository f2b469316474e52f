//! Threshold sharpness of the share polynomial with one-element blocks.

use super::enumerate::{enumerate, values, Cursor, Domain, Space};
use super::{combinations, AuditError, PropertyReport};
use crate::field::PrimeField;
use crate::poly::{check_threshold, share_weights, ProtocolParams, SharePoly};

fn params(field: PrimeField, n: usize, t: usize) -> Result<ProtocolParams, AuditError> {
    let k = check_threshold(n, t)?;
    // d + 1 = K gives one-element blocks.
    Ok(ProtocolParams::new(field, n, t, 1, k - 1)?)
}

fn scale(p: &ProtocolParams) -> String {
    format!("p={} N={} T={} K={} block_len=1", p.field.modulus(), p.n, p.t, p.k)
}

/// Every set of `T` evaluations is uniform and independent of the `K`
/// data values: the pair (secret, evaluations) is uniform over F^(K+T).
pub fn any_t_uniform(field: PrimeField, n: usize, t: usize) -> Result<PropertyReport, AuditError> {
    let params = params(field, n, t)?;
    let space = Space::new(field).with(params.k + params.t, Domain::Any);
    let support = space.size().unwrap_or(u64::MAX);
    let mut draws = 0;
    let mut failures = Vec::new();
    let subsets = combinations(n, t);
    for subset in &subsets {
        let weights: Vec<_> = subset.iter().map(|&i| share_weights(&params, params.client_point(i))).collect();
        let dist = enumerate(&space, |draw| {
            let mut c = Cursor::new(draw);
            let blocks = c.rows(params.k, 1);
            let noise = c.rows(params.t, 1);
            let poly = SharePoly::new(&params, &blocks, &noise).ok()?;
            let mut view: Vec<u64> = blocks.iter().flat_map(|b| values(b)).collect();
            for w in &weights {
                view.extend(values(&poly.eval_with(w)));
            }
            Some(view)
        })?;
        draws += dist.draws;
        if !dist.is_uniform_over(support) {
            failures.push(format!("{subset:?}"));
        }
    }
    let ok = failures.is_empty();
    let detail = if ok {
        format!("all {} sets of {t} evaluations are uniform for every secret", subsets.len())
    } else {
        format!("non-uniform evaluation sets: {}", failures.join(", "))
    };
    Ok(PropertyReport::new(format!("threshold/any-{t}-evaluations-uniform"), scale(&params), draws, ok, detail))
}

/// Every set of `K + T` evaluations determines the data values (the map
/// from data and noise to those evaluations is injective).
pub fn k_plus_t_determine(field: PrimeField, n: usize, t: usize) -> Result<PropertyReport, AuditError> {
    let params = params(field, n, t)?;
    let width = params.k + params.t;
    let space = Space::new(field).with(width, Domain::Any);
    let total = space.size().unwrap_or(u64::MAX);
    let mut draws = 0;
    let mut failures = Vec::new();
    let subsets = combinations(n, width);
    for subset in &subsets {
        let weights: Vec<_> = subset.iter().map(|&i| share_weights(&params, params.client_point(i))).collect();
        let dist = enumerate(&space, |draw| {
            let mut c = Cursor::new(draw);
            let blocks = c.rows(params.k, 1);
            let noise = c.rows(params.t, 1);
            let poly = SharePoly::new(&params, &blocks, &noise).ok()?;
            Some(weights.iter().flat_map(|w| poly.eval_with(w)).map(|x| x.value()).collect())
        })?;
        draws += dist.draws;
        if dist.counts.len() as u64 != total {
            failures.push(format!("{subset:?}"));
        }
    }
    let ok = failures.is_empty();
    let detail = if ok {
        format!("all {} sets of {width} evaluations determine the secret (negative control)", subsets.len())
    } else {
        format!("ambiguous evaluation sets: {}", failures.join(", "))
    };
    Ok(PropertyReport::new(format!("threshold/any-{width}-evaluations-determine"), scale(&params), draws, ok, detail))
}
