//! One-time private entity union.
//!
//! Each client hashes its entities into a table of `L` buckets and adds
//! `(tag, tag * id)` to the bucket of every entity it owns, with a fresh
//! nonzero `tag`. The tables are summed under N-of-N additive sharing, the
//! server multiplies every bucket of the sum by its own nonzero scalar and
//! broadcasts the result. A bucket holding one distinct entity then reads
//! `W / U = id`, and nothing in `(U, W)` depends on how many parties own it.

use std::collections::HashMap;

use rand::RngCore;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::field::{FieldElement, PrimeField};
use crate::masking::{uniform_element, uniform_nonzero};

/// Number of union attempts before giving up.
pub const RETRY_BUDGET: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum UnionError {
    #[error("identifiers {0:?} and {1:?} hash to the same field element")]
    ImageCollision(String, String),
    #[error("entity {0:?} is not in the public vocabulary")]
    UnknownEntity(String),
    #[error("union failed after {0} attempts")]
    RetryBudget(u32),
    #[error("union table length {got}, expected {expected}")]
    Length { expected: usize, got: usize },
}

/// An entity: its raw identifier and its nonzero image in the field.
#[derive(Clone, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct EntityId {
    pub raw: String,
    pub image: u64,
}

impl EntityId {
    pub fn new(raw: &str, field: PrimeField) -> Self {
        Self {
            raw: raw.to_string(),
            image: hash_to_field(raw.as_bytes(), field).value(),
        }
    }
}

/// Collision-resistant hash into `F \ {0}`; rehashes with a counter on zero.
pub fn hash_to_field(raw: &[u8], field: PrimeField) -> FieldElement {
    for counter in 0u32.. {
        let mut h = Sha256::new();
        h.update(b"embagg/entity/v1");
        h.update(counter.to_be_bytes());
        h.update(raw);
        let digest = h.finalize();
        let wide = u128::from_be_bytes(digest[..16].try_into().unwrap());
        let x = field.from_i128((wide % u128::from(field.modulus())) as i128);
        if !x.is_zero() {
            return x;
        }
    }
    unreachable!()
}

/// Public list of every identifier that may appear in the union.
#[derive(Clone, Debug)]
pub struct Vocabulary {
    ids: Vec<EntityId>,
    by_image: HashMap<u64, usize>,
}

impl Vocabulary {
    pub fn new<S: AsRef<str>>(raw: &[S], field: PrimeField) -> Result<Self, UnionError> {
        let mut ids = Vec::with_capacity(raw.len());
        let mut by_image: HashMap<u64, usize> = HashMap::new();
        for r in raw {
            let id = EntityId::new(r.as_ref(), field);
            if let Some(&j) = by_image.get(&id.image) {
                if ids[j] == id {
                    continue;
                }
                let prev: &EntityId = &ids[j];
                return Err(UnionError::ImageCollision(prev.raw.clone(), id.raw));
            }
            by_image.insert(id.image, ids.len());
            ids.push(id);
        }
        Ok(Self { ids, by_image })
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn ids(&self) -> &[EntityId] {
        &self.ids
    }

    pub fn position(&self, image: u64) -> Option<usize> {
        self.by_image.get(&image).copied()
    }

    pub fn lookup(&self, raw: &str) -> Result<&EntityId, UnionError> {
        self.ids
            .iter()
            .find(|e| e.raw == raw)
            .ok_or_else(|| UnionError::UnknownEntity(raw.to_string()))
    }
}

/// Table geometry for one attempt.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnionParams {
    pub buckets: usize,
    pub salt: [u8; 32],
    pub attempt: u32,
}

impl UnionParams {
    /// Parameters of attempt `attempt`: a fresh salt and `2^attempt` times the
    /// initial `max(4 M^2, 4)` buckets.
    pub fn for_attempt(base_salt: &[u8], estimated_entities: usize, attempt: u32) -> Self {
        let initial = (4 * estimated_entities * estimated_entities).max(4);
        let mut h = Sha256::new();
        h.update(b"embagg/union-salt/v1");
        h.update(base_salt);
        h.update(attempt.to_be_bytes());
        Self {
            buckets: initial << attempt,
            salt: h.finalize().into(),
            attempt,
        }
    }

    pub fn with_buckets(buckets: usize, salt: [u8; 32]) -> Self {
        Self {
            buckets,
            salt,
            attempt: 0,
        }
    }

    pub fn bucket_of(&self, image: FieldElement) -> usize {
        let mut h = Sha256::new();
        h.update(b"embagg/bucket/v1");
        h.update(self.salt);
        h.update(image.value().to_be_bytes());
        let digest = h.finalize();
        (u64::from_be_bytes(digest[..8].try_into().unwrap()) % self.buckets as u64) as usize
    }

    /// Number of field elements in a flattened table.
    pub fn table_len(&self) -> usize {
        2 * self.buckets
    }
}

/// `(U_b, W_b)` for every bucket.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct UnionTable {
    pub u: Vec<FieldElement>,
    pub w: Vec<FieldElement>,
}

impl UnionTable {
    pub fn zero(field: PrimeField, buckets: usize) -> Self {
        Self {
            u: field.zeros(buckets),
            w: field.zeros(buckets),
        }
    }

    pub fn buckets(&self) -> usize {
        self.u.len()
    }

    pub fn is_zero(&self) -> bool {
        self.u.iter().chain(&self.w).all(|x| x.is_zero())
    }

    pub fn add_assign(&mut self, other: &UnionTable) {
        for (a, b) in self.u.iter_mut().zip(&other.u) {
            *a += *b;
        }
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a += *b;
        }
    }

    pub fn sub_assign(&mut self, other: &UnionTable) {
        for (a, b) in self.u.iter_mut().zip(&other.u) {
            *a -= *b;
        }
        for (a, b) in self.w.iter_mut().zip(&other.w) {
            *a -= *b;
        }
    }

    /// `U` coordinates followed by `W` coordinates.
    pub fn to_flat(&self) -> Vec<FieldElement> {
        self.u.iter().chain(&self.w).copied().collect()
    }

    pub fn from_flat(flat: &[FieldElement], buckets: usize) -> Result<Self, UnionError> {
        if flat.len() != 2 * buckets {
            return Err(UnionError::Length {
                expected: 2 * buckets,
                got: flat.len(),
            });
        }
        Ok(Self {
            u: flat[..buckets].to_vec(),
            w: flat[buckets..].to_vec(),
        })
    }
}

/// One client's table: `(tag, tag * id)` in the bucket of each owned entity.
pub fn build_contribution(
    entities: &[FieldElement],
    params: &UnionParams,
    field: PrimeField,
    rng: &mut impl RngCore,
) -> UnionTable {
    contribution_with(entities, params, field, || uniform_nonzero(rng, field))
}

/// `build_contribution` with the nonzero `tag` values supplied by `tag`.
pub fn contribution_with(
    entities: &[FieldElement],
    params: &UnionParams,
    field: PrimeField,
    mut tag: impl FnMut() -> FieldElement,
) -> UnionTable {
    let mut table = UnionTable::zero(field, params.buckets);
    for &id in entities {
        let b = params.bucket_of(id);
        let r = tag();
        table.u[b] += r;
        table.w[b] += r * id;
    }
    table
}

/// Splits a table into `parties` additive shares. Every share except the
/// one at `keep` is uniform; the kept share makes the sum exact.
pub fn split_shares(
    table: &UnionTable,
    parties: usize,
    keep: usize,
    field: PrimeField,
    rng: &mut impl RngCore,
) -> Vec<UnionTable> {
    split_with(table, parties, keep, field, || uniform_element(rng, field))
}

/// `split_shares` with the free share entries supplied by `draw`, bucket
/// `u` values before `w` values, shares in index order.
pub fn split_with(
    table: &UnionTable,
    parties: usize,
    keep: usize,
    field: PrimeField,
    mut draw: impl FnMut() -> FieldElement,
) -> Vec<UnionTable> {
    let buckets = table.buckets();
    let mut shares: Vec<UnionTable> = (0..parties)
        .map(|i| {
            if i == keep {
                UnionTable::zero(field, buckets)
            } else {
                let u = (0..buckets).map(|_| draw()).collect();
                let w = (0..buckets).map(|_| draw()).collect();
                UnionTable { u, w }
            }
        })
        .collect();
    let mut own = table.clone();
    for (i, s) in shares.iter().enumerate() {
        if i != keep {
            own.sub_assign(s);
        }
    }
    shares[keep] = own;
    shares
}

pub fn sum_tables<'a>(field: PrimeField, buckets: usize, parts: impl IntoIterator<Item = &'a UnionTable>) -> UnionTable {
    let mut acc = UnionTable::zero(field, buckets);
    for p in parts {
        acc.add_assign(p);
    }
    acc
}

/// Server-side rerandomization: bucket `b` is multiplied by a uniform nonzero scalar.
pub fn blind(table: &UnionTable, field: PrimeField, rng: &mut impl RngCore) -> UnionTable {
    blind_with(table, || uniform_nonzero(rng, field))
}

/// `blind` with the per-bucket scalars supplied by `scalar`.
pub fn blind_with(table: &UnionTable, mut scalar: impl FnMut() -> FieldElement) -> UnionTable {
    let mut out = table.clone();
    for b in 0..table.buckets() {
        let s = scalar();
        out.u[b] *= s;
        out.w[b] *= s;
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum Extraction {
    /// Field images of the union, in canonical order.
    Union(Vec<FieldElement>),
    /// Some bucket did not decode to a single registered entity.
    CollisionRetry { bucket: usize },
}

/// Reads the union off an aggregate table. With a vocabulary, every
/// candidate must be registered and the result is in vocabulary order;
/// without one, the result is sorted by field image.
pub fn extract_union(table: &UnionTable, params: &UnionParams, vocabulary: Option<&Vocabulary>) -> Extraction {
    let mut found = Vec::new();
    for b in 0..table.buckets() {
        let (u, w) = (table.u[b], table.w[b]);
        if u.is_zero() {
            if !w.is_zero() {
                return Extraction::CollisionRetry { bucket: b };
            }
            continue;
        }
        let id = w * u.inv().expect("nonzero");
        let registered = vocabulary.is_none_or(|v| v.position(id.value()).is_some());
        if id.is_zero() || !registered || params.bucket_of(id) != b {
            return Extraction::CollisionRetry { bucket: b };
        }
        found.push(id);
    }
    match vocabulary {
        Some(v) => found.sort_by_key(|id| v.position(id.value())),
        None => found.sort_by_key(|id| id.value()),
    }
    Extraction::Union(found)
}

/// In-memory union over plaintext entity sets, running every attempt until
/// one extracts. Used by tests and audits as the reference execution of the
/// same arithmetic the networked parties perform.
pub fn local_union(
    sets: &[Vec<FieldElement>],
    vocabulary: Option<&Vocabulary>,
    base_salt: &[u8],
    estimated_entities: usize,
    field: PrimeField,
    rng: &mut impl RngCore,
) -> Result<(Vec<FieldElement>, u32), UnionError> {
    for attempt in 0..RETRY_BUDGET {
        let params = UnionParams::for_attempt(base_salt, estimated_entities, attempt);
        let n = sets.len();
        let shares: Vec<Vec<UnionTable>> = sets
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let c = build_contribution(s, &params, field, rng);
                split_shares(&c, n, i, field, rng)
            })
            .collect();
        let partials: Vec<UnionTable> = (0..n)
            .map(|v| sum_tables(field, params.buckets, shares.iter().map(|row| &row[v])))
            .collect();
        let aggregate = blind(&sum_tables(field, params.buckets, &partials), field, rng);
        if let Extraction::Union(u) = extract_union(&aggregate, &params, vocabulary) {
            return Ok((u, attempt));
        }
    }
    Err(UnionError::RetryBudget(RETRY_BUDGET))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;
    use std::collections::BTreeSet;

    fn field() -> PrimeField {
        PrimeField::new(1_000_000_007).unwrap()
    }

    fn rng(seed: u64) -> ChaCha20Rng {
        ChaCha20Rng::seed_from_u64(seed)
    }

    fn vocab(n: usize) -> Vocabulary {
        let names: Vec<String> = (1..=n).map(|i| format!("e{i}")).collect();
        Vocabulary::new(&names, field()).unwrap()
    }

    #[test]
    fn images_are_nonzero_and_deterministic() {
        let f = PrimeField::new(17).unwrap();
        for i in 0..200 {
            let raw = format!("id{i}");
            let a = hash_to_field(raw.as_bytes(), f);
            assert!(!a.is_zero());
            assert_eq!(a, hash_to_field(raw.as_bytes(), f));
        }
    }

    #[test]
    fn empty_set_gives_zero_table() {
        let p = UnionParams::for_attempt(b"s", 5, 0);
        let t = build_contribution(&[], &p, field(), &mut rng(1));
        assert!(t.is_zero());
        assert_eq!(t.buckets(), 100);
    }

    #[test]
    fn single_entity_fills_one_bucket() {
        let f = field();
        let v = vocab(3);
        let id = f.elem(v.ids()[1].image);
        let p = UnionParams::for_attempt(b"s", 3, 0);
        let t = build_contribution(&[id], &p, f, &mut rng(2));
        let nonzero: Vec<_> = (0..t.buckets()).filter(|&b| !t.u[b].is_zero()).collect();
        assert_eq!(nonzero, vec![p.bucket_of(id)]);
        let b = nonzero[0];
        assert_eq!(t.w[b] * t.u[b].inv().unwrap(), id);
    }

    #[test]
    fn two_owners_of_one_entity_decode_to_it() {
        let f = field();
        let id = f.elem(v_image(&vocab(1), 0));
        let p = UnionParams::for_attempt(b"s", 1, 0);
        let mut r = rng(3);
        let (rho1, rho2) = (f.elem(r.gen_range(1..1000)), f.elem(r.gen_range(1..1000)));
        let b = p.bucket_of(id);
        let mut t = UnionTable::zero(f, p.buckets);
        t.u[b] = rho1 + rho2;
        t.w[b] = rho1 * id + rho2 * id;
        assert_eq!(t.w[b] * t.u[b].inv().unwrap(), id);
        assert_eq!(extract_union(&t, &p, None), Extraction::Union(vec![id]));
    }

    fn v_image(v: &Vocabulary, i: usize) -> u64 {
        v.ids()[i].image
    }

    #[test]
    fn additive_shares_sum_to_contributions() {
        let f = field();
        let v = vocab(6);
        let p = UnionParams::for_attempt(b"x", 6, 0);
        let mut r = rng(4);
        let sets: Vec<Vec<FieldElement>> = vec![
            vec![f.elem(v_image(&v, 0))],
            vec![f.elem(v_image(&v, 1)), f.elem(v_image(&v, 2))],
            vec![],
        ];
        let contribs: Vec<_> = sets.iter().map(|s| build_contribution(s, &p, f, &mut r)).collect();
        let shares: Vec<_> = contribs.iter().enumerate().map(|(i, c)| split_shares(c, 3, i, f, &mut r)).collect();
        let partials: Vec<_> = (0..3).map(|v| sum_tables(f, p.buckets, shares.iter().map(|s| &s[v]))).collect();
        assert_eq!(sum_tables(f, p.buckets, &partials), sum_tables(f, p.buckets, &contribs));
        let zero = vec![UnionTable::zero(f, p.buckets); 3];
        assert!(sum_tables(f, p.buckets, &zero).is_zero());
    }

    #[test]
    fn partial_sum_is_uniform_on_one_bucket() {
        // client 1's partial sum is s_{1,1} + s_{2,1} + s_{3,1}; the shares it
        // receives from the others are uniform, so enumerate them.
        let f = PrimeField::new(17).unwrap();
        let mut counts = HashMap::new();
        let own = f.elem(5);
        for a in 0..17 {
            for b in 0..17 {
                *counts.entry((own + f.elem(a) + f.elem(b)).value()).or_insert(0u32) += 1;
            }
        }
        assert_eq!(counts.len(), 17);
        assert!(counts.values().all(|&c| c == 17));
    }

    #[test]
    fn worked_example_layout() {
        let f = field();
        let v = Vocabulary::new(&["e1", "e2"], f).unwrap();
        let e = |i| f.elem(v_image(&v, i));
        let sets = vec![vec![e(0)], vec![e(1)], vec![e(0)]];
        let (u, attempt) = local_union(&sets, Some(&v), b"demo", 2, f, &mut rng(5)).unwrap();
        assert_eq!(u, vec![e(0), e(1)]);
        assert_eq!(attempt, 0);
    }

    #[test]
    fn forced_collision_retries() {
        let f = field();
        let v = vocab(2);
        let ids = [f.elem(v_image(&v, 0)), f.elem(v_image(&v, 1))];
        let p = UnionParams::with_buckets(1, [0; 32]);
        let mut r = rng(6);
        let t = sum_tables(
            f,
            1,
            &[
                build_contribution(&ids[..1], &p, f, &mut r),
                build_contribution(&ids[1..], &p, f, &mut r),
            ],
        );
        assert_eq!(extract_union(&t, &p, Some(&v)), Extraction::CollisionRetry { bucket: 0 });
    }

    #[test]
    fn retry_recovers_from_a_collision() {
        // pick a salt under which two entities share a bucket, then check the
        // next attempt separates them
        let f = field();
        let v = vocab(2);
        let ids = [f.elem(v_image(&v, 0)), f.elem(v_image(&v, 1))];
        let salt = (0u32..)
            .map(|i| i.to_be_bytes())
            .find(|s| {
                let p = UnionParams::for_attempt(s, 2, 0);
                p.bucket_of(ids[0]) == p.bucket_of(ids[1])
            })
            .unwrap();
        let sets = vec![vec![ids[0]], vec![ids[1]], vec![]];
        let (u, attempt) = local_union(&sets, Some(&v), &salt, 2, f, &mut rng(7)).unwrap();
        assert!(attempt >= 1);
        assert_eq!(u, ids.to_vec());
    }

    #[test]
    fn random_instances_match_plaintext_union() {
        let f = field();
        let mut r = rng(8);
        for inst in 0..200 {
            let n = r.gen_range(3..=7);
            let m = r.gen_range(1..=20);
            let v = vocab(m);
            let sets: Vec<Vec<FieldElement>> = (0..n)
                .map(|_| (0..m).filter(|_| r.gen_bool(0.3)).map(|i| f.elem(v_image(&v, i))).collect())
                .collect();
            let expected: BTreeSet<u64> = sets.iter().flatten().map(|x| x.value()).collect();
            let salt = (inst as u32).to_be_bytes();
            let (u, _) = local_union(&sets, Some(&v), &salt, m, f, &mut r).unwrap();
            assert_eq!(u.iter().map(|x| x.value()).collect::<BTreeSet<_>>(), expected);
            let positions: Vec<_> = u.iter().map(|x| v.position(x.value()).unwrap()).collect();
            assert!(positions.windows(2).all(|w| w[0] < w[1]));
        }
    }

    #[test]
    fn union_without_vocabulary_orders_by_image() {
        let f = field();
        let v = vocab(5);
        let sets: Vec<Vec<FieldElement>> = vec![(0..5).map(|i| f.elem(v_image(&v, i))).collect()];
        let (u, _) = local_union(&sets, None, b"n", 5, f, &mut rng(9)).unwrap();
        assert!(u.windows(2).all(|w| w[0].value() < w[1].value()));
        assert_eq!(u.len(), 5);
    }

    #[test]
    fn count_hiding_before_blinding() {
        // U for one contributor is uniform on F*, for two it is uniform on F*
        // except a cancellation mass of 1/p at zero
        let f = PrimeField::new(17).unwrap();
        let mut one = [0u32; 17];
        let mut two = [0u32; 17];
        for a in 1..17 {
            one[a as usize] += 16;
            for b in 1..17 {
                two[(f.elem(a) + f.elem(b)).value() as usize] += 1;
            }
        }
        assert_eq!(one[0], 0);
        assert_eq!(two[0], 16);
        assert!(one[1..].iter().all(|&c| c == 16));
        assert!(two[1..].iter().all(|&c| c == 15));
    }

    #[test]
    fn table_flattening_round_trips() {
        let f = field();
        let p = UnionParams::for_attempt(b"f", 2, 0);
        let v = vocab(2);
        let t = build_contribution(&[f.elem(v_image(&v, 1))], &p, f, &mut rng(10));
        assert_eq!(UnionTable::from_flat(&t.to_flat(), p.buckets).unwrap(), t);
        assert!(UnionTable::from_flat(&t.to_flat()[1..], p.buckets).is_err());
    }
}
