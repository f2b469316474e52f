//! Expanded embeddings: `(h, zero padding, 1)` for owned entities, all
//! zeros otherwise, cut into `K` blocks of `block_len`.

use crate::field::{FieldElement, FieldError, FixedPointCodec};
use crate::poly::ProtocolParams;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ExpandedEmbedding {
    /// Index of the entity in the agreed union.
    pub entity: usize,
    pub blocks: Vec<Vec<FieldElement>>,
    pub owned: bool,
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ExpandError {
    #[error("embedding of {entity:?} has {got} coordinates, expected {expected}")]
    Dimension { entity: String, expected: usize, got: usize },
    #[error("embedding of {entity:?}: {source}")]
    Range { entity: String, source: FieldError },
}

/// Expands one entity from its quantized coordinates, or `None` if not owned.
pub fn expand_entity(params: &ProtocolParams, entity: usize, coords: Option<&[FieldElement]>) -> ExpandedEmbedding {
    let f = params.field;
    let mut flat = f.zeros(params.padded_len());
    let owned = coords.is_some();
    if let Some(c) = coords {
        assert_eq!(c.len(), params.d);
        flat[..params.d].copy_from_slice(c);
        *flat.last_mut().unwrap() = f.one();
    }
    ExpandedEmbedding {
        entity,
        blocks: flat.chunks(params.block_len).map(<[_]>::to_vec).collect(),
        owned,
    }
}

/// Expands every entity of the union. `local(m)` is the real embedding of
/// entity `m` if this client owns it.
pub fn expand<'a>(
    params: &ProtocolParams,
    codec: &FixedPointCodec,
    names: &[String],
    local: impl Fn(usize) -> Option<&'a [f64]>,
) -> Result<Vec<ExpandedEmbedding>, ExpandError> {
    (0..params.m)
        .map(|m| {
            let coords = match local(m) {
                None => None,
                Some(h) => {
                    if h.len() != params.d {
                        return Err(ExpandError::Dimension {
                            entity: names[m].clone(),
                            expected: params.d,
                            got: h.len(),
                        });
                    }
                    let q = h
                        .iter()
                        .map(|&x| codec.encode(x))
                        .collect::<Result<Vec<_>, _>>()
                        .map_err(|source| ExpandError::Range {
                            entity: names[m].clone(),
                            source,
                        })?;
                    Some(q)
                }
            };
            Ok(expand_entity(params, m, coords.as_deref()))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::field::PrimeField;

    fn f() -> PrimeField {
        PrimeField::new(1_000_003).unwrap()
    }

    #[test]
    fn unowned_rows_are_zero() {
        let params = ProtocolParams::new(f(), 3, 1, 2, 1).unwrap();
        let codec = FixedPointCodec::new(f(), 100, 1000);
        let names = vec!["e1".to_string(), "e2".to_string()];
        let h = [2.5];
        let rows = expand(&params, &codec, &names, |m| (m == 1).then_some(&h[..])).unwrap();
        assert!(!rows[0].owned);
        assert!(rows[0].blocks.iter().flatten().all(|x| x.is_zero()));
        assert_eq!(rows[1].blocks, vec![vec![f().elem(250), f().one()]]);
    }

    #[test]
    fn zero_embedding_keeps_indicator() {
        let params = ProtocolParams::new(f(), 5, 1, 1, 3).unwrap();
        let row = expand_entity(&params, 0, Some(&f().zeros(3)));
        let flat: Vec<_> = row.blocks.concat();
        assert_eq!(flat.last().copied(), Some(f().one()));
        assert!(flat[..flat.len() - 1].iter().all(|x| x.is_zero()));
    }

    #[test]
    fn padding_sits_before_indicator() {
        // N = 7, T = 2 gives K = 2; d = 3 pads 4 coordinates into two blocks of 2
        let params = ProtocolParams::new(f(), 7, 2, 1, 3).unwrap();
        assert_eq!((params.k, params.block_len), (2, 2));
        let c = [f().elem(7), f().elem(8), f().elem(9)];
        let row = expand_entity(&params, 0, Some(&c));
        assert_eq!(row.blocks, vec![vec![f().elem(7), f().elem(8)], vec![f().elem(9), f().one()]]);

        // N = 9, T = 1 gives K = 4; d = 3 fits exactly
        let params = ProtocolParams::new(f(), 9, 1, 1, 4).unwrap();
        assert_eq!((params.k, params.block_len, params.padded_len()), (4, 2, 8));
        let c: Vec<_> = (1..=4).map(|i| f().elem(i)).collect();
        let flat = expand_entity(&params, 0, Some(&c)).blocks.concat();
        assert_eq!(flat[4..7], f().zeros(3)[..]);
        assert_eq!(flat[7], f().one());
    }

    #[test]
    fn dimension_and_range_errors() {
        let params = ProtocolParams::new(f(), 3, 1, 1, 2).unwrap();
        let codec = FixedPointCodec::new(f(), 100, 1000);
        let names = vec!["e".to_string()];
        let short = [1.0];
        assert!(matches!(
            expand(&params, &codec, &names, |_| Some(&short[..])),
            Err(ExpandError::Dimension { expected: 2, got: 1, .. })
        ));
        let big = [1.0, 11.0];
        assert!(matches!(expand(&params, &codec, &names, |_| Some(&big[..])), Err(ExpandError::Range { .. })));
    }
}
