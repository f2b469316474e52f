//! Plaintext reference aggregation, quantized exactly like the protocol path.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::field::{FieldError, FixedPointCodec, Rational};

/// Average embedding of one entity over its owners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GlobalEmbedding {
    pub entity: String,
    /// Exact average in quantized units.
    pub exact: Vec<Rational>,
    pub values: Vec<f64>,
}

impl GlobalEmbedding {
    pub fn from_exact(entity: &str, exact: Vec<Rational>, codec: &FixedPointCodec) -> Self {
        Self {
            entity: entity.to_string(),
            values: exact.iter().map(|&q| codec.to_real(q)).collect(),
            exact,
        }
    }
}

/// Averages every entity over the clients holding it. Entities owned by
/// nobody do not appear.
pub fn oracle_aggregate(
    codec: &FixedPointCodec,
    clients: &[BTreeMap<String, Vec<f64>>],
) -> Result<BTreeMap<String, GlobalEmbedding>, FieldError> {
    let mut sums: BTreeMap<&str, (Vec<i64>, u64)> = BTreeMap::new();
    for local in clients {
        for (entity, h) in local {
            let q = h.iter().map(|&x| codec.quantize(x)).collect::<Result<Vec<_>, _>>()?;
            let (s, c) = sums.entry(entity).or_insert_with(|| (vec![0; q.len()], 0));
            for (a, b) in s.iter_mut().zip(&q) {
                *a += b;
            }
            *c += 1;
        }
    }
    Ok(sums
        .into_iter()
        .map(|(e, (s, c))| {
            let exact = s.into_iter().map(|x| Rational::new(x, c)).collect();
            (e.to_string(), GlobalEmbedding::from_exact(e, exact, codec))
        })
        .collect())
}
