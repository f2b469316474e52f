//! Pairwise Diffie-Hellman agreement and one-time pads over the field.
//!
//! Every relayed share, query and union share is masked with a pad that
//! only the two endpoints can regenerate. Pads are keyed per
//! (pair, purpose, round) and split into one stream per (direction, slot),
//! so no stream position is ever used for two messages.

use std::collections::HashSet;

use num_bigint::{BigUint, RandBigInt};
use num_traits::One;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

use crate::field::{FieldElement, PrimeField};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MaskError {
    #[error("public value is not an element of the prime-order subgroup")]
    BadPublic,
    #[error("unknown key-agreement group {0:?}")]
    UnknownGroup(String),
    #[error("pad stream reused: {0}")]
    PadReuse(String),
    #[error("pad length {got} does not match payload length {expected}")]
    Length { expected: usize, got: usize },
}

const MODP_2048: &str = "\
FFFFFFFFFFFFFFFFC90FDAA22168C234C4C6628B80DC1CD129024E088A67CC74\
020BBEA63B139B22514A08798E3404DDEF9519B3CD3A431B302B0A6DF25F1437\
4FE1356D6D51C245E485B576625E7EC6F44C42E9A637ED6B0BFF5CB6F406B7ED\
EE386BFB5A899FA5AE9F24117C4B1FE649286651ECE45B3DC2007CB8A163BF05\
98DA48361C55D39A69163FA8FD24CF5F83655D23DCA3AD961C62F356208552BB\
9ED529077096966D670C354E4ABC9804F1746C08CA18217C32905E462E36CE3B\
E39E772C180E86039B2783A2EC07A28FB5C55DF06F4C52C9DE2BCBF695581718\
3995497CEA956AE515D2261898FA051015728E5A8AACAA68FFFFFFFFFFFFFFFF";

/// A safe-prime group `p = 2q + 1` with a generator of the order-`q` subgroup.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DhGroup {
    name: &'static str,
    modulus: BigUint,
    order: BigUint,
    generator: BigUint,
    insecure: bool,
}

impl DhGroup {
    /// The 2048-bit MODP group of RFC 3526.
    pub fn modp2048() -> Self {
        let modulus = BigUint::parse_bytes(MODP_2048.as_bytes(), 16).expect("valid hex");
        let order = (&modulus - 1u8) >> 1;
        Self {
            name: "modp2048",
            modulus,
            order,
            generator: BigUint::from(2u8),
            insecure: false,
        }
    }

    /// 64-bit safe prime. Fast, not secure.
    pub fn toy64() -> Self {
        Self::small("toy64", 9_223_372_036_854_778_487, 4)
    }

    /// `p = 2039`, small enough to check by hand.
    pub fn tiny() -> Self {
        Self::small("tiny", 2039, 4)
    }

    fn small(name: &'static str, p: u64, g: u64) -> Self {
        Self {
            name,
            modulus: BigUint::from(p),
            order: BigUint::from((p - 1) / 2),
            generator: BigUint::from(g),
            insecure: true,
        }
    }

    pub fn by_name(name: &str) -> Result<Self, MaskError> {
        match name {
            "modp2048" => Ok(Self::modp2048()),
            "toy64" => Ok(Self::toy64()),
            "tiny" => Ok(Self::tiny()),
            other => Err(MaskError::UnknownGroup(other.to_string())),
        }
    }

    pub fn name(&self) -> &'static str {
        self.name
    }

    pub fn is_insecure(&self) -> bool {
        self.insecure
    }

    pub fn modulus(&self) -> &BigUint {
        &self.modulus
    }

    pub fn generator(&self) -> &BigUint {
        &self.generator
    }

    pub fn element_len(&self) -> usize {
        self.modulus.bits().div_ceil(8) as usize
    }

    pub fn generate(&self, rng: &mut impl Rng) -> DhKeypair {
        let exponent = rng.gen_biguint_range(&BigUint::one(), &self.order);
        let public = self.generator.modpow(&exponent, &self.modulus);
        DhKeypair { exponent, public }
    }

    pub fn validate_public(&self, y: &BigUint) -> Result<(), MaskError> {
        let one = BigUint::one();
        if y <= &one || y >= &(&self.modulus - &one) || !y.modpow(&self.order, &self.modulus).is_one() {
            return Err(MaskError::BadPublic);
        }
        Ok(())
    }

    /// Fixed-width big-endian encoding of a group element.
    pub fn encode(&self, y: &BigUint) -> Vec<u8> {
        let bytes = y.to_bytes_be();
        let mut out = vec![0u8; self.element_len().saturating_sub(bytes.len())];
        out.extend_from_slice(&bytes);
        out
    }
}

#[derive(Clone, Debug)]
pub struct DhKeypair {
    exponent: BigUint,
    pub public: BigUint,
}

/// 32-byte secret shared by one pair of clients.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct MasterSecret(pub [u8; 32]);

/// Computes the pair's master secret from our exponent and the peer's public value.
pub fn agree_master(
    group: &DhGroup,
    own: &DhKeypair,
    peer_public: &BigUint,
) -> Result<MasterSecret, MaskError> {
    group.validate_public(peer_public)?;
    let shared = peer_public.modpow(&own.exponent, &group.modulus);
    let mut h = Sha256::new();
    h.update(b"embagg/master/v1");
    h.update(group.encode(&shared));
    Ok(MasterSecret(h.finalize().into()))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Purpose {
    Share,
    Query,
    Union,
}

impl Purpose {
    fn tag(self) -> &'static [u8] {
        match self {
            Purpose::Share => b"share",
            Purpose::Query => b"query",
            Purpose::Union => b"union",
        }
    }
}

/// Seed for one (pair, purpose, round).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairwiseSeed {
    bytes: [u8; 32],
    pair: (u16, u16),
    purpose: Purpose,
    round: u32,
}

impl PairwiseSeed {
    pub fn derive(master: &MasterSecret, a: u16, b: u16, purpose: Purpose, round: u32) -> Self {
        let pair = (a.min(b), a.max(b));
        let mut h = Sha256::new();
        h.update(b"embagg/pad/v1");
        h.update(master.0);
        h.update(pair.0.to_be_bytes());
        h.update(pair.1.to_be_bytes());
        h.update([purpose.tag().len() as u8]);
        h.update(purpose.tag());
        h.update(round.to_be_bytes());
        Self {
            bytes: h.finalize().into(),
            pair,
            purpose,
            round,
        }
    }

    pub fn bytes(&self) -> &[u8; 32] {
        &self.bytes
    }

    pub fn pair(&self) -> (u16, u16) {
        self.pair
    }

    pub fn purpose(&self) -> Purpose {
        self.purpose
    }

    pub fn round(&self) -> u32 {
        self.round
    }

    /// Stream for the message from `sender` to the other endpoint in `slot`.
    /// Each direction gets its own stream so the two endpoints never pad
    /// different messages with the same bytes.
    pub fn stream(&self, sender: u16, slot: u32, field: PrimeField) -> PadStream {
        debug_assert!(sender == self.pair.0 || sender == self.pair.1);
        let direction = u64::from(sender != self.pair.0);
        let mut rng = ChaCha20Rng::from_seed(self.bytes);
        rng.set_stream((direction << 32) | u64::from(slot));
        PadStream {
            rng,
            field,
            position: 0,
            key: PadKey {
                pair: self.pair,
                purpose: self.purpose,
                round: self.round,
                sender,
                slot,
            },
        }
    }
}

/// Identifies one stream, for reuse tracking.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct PadKey {
    pub pair: (u16, u16),
    pub purpose: Purpose,
    pub round: u32,
    pub sender: u16,
    pub slot: u32,
}

/// Uniform field elements drawn from a seeded ChaCha20 stream by rejection sampling.
pub struct PadStream {
    rng: ChaCha20Rng,
    field: PrimeField,
    position: u64,
    key: PadKey,
}

impl PadStream {
    pub fn key(&self) -> PadKey {
        self.key
    }

    /// Number of field elements drawn so far.
    pub fn position(&self) -> u64 {
        self.position
    }

    pub fn next_element(&mut self) -> FieldElement {
        self.position += 1;
        uniform_element(&mut self.rng, self.field)
    }

    pub fn take(&mut self, len: usize) -> Vec<FieldElement> {
        (0..len).map(|_| self.next_element()).collect()
    }
}

/// Uniform element of the field by rejection sampling on `bits(p)`-bit words.
pub fn uniform_element(rng: &mut impl RngCore, field: PrimeField) -> FieldElement {
    let p = field.modulus();
    let mask = u64::MAX >> (64 - field.bit_length());
    loop {
        let x = rng.next_u64() & mask;
        if x < p {
            return field.elem(x);
        }
    }
}

/// Uniform nonzero element of the field.
pub fn uniform_nonzero(rng: &mut impl RngCore, field: PrimeField) -> FieldElement {
    loop {
        let x = uniform_element(rng, field);
        if !x.is_zero() {
            return x;
        }
    }
}

pub fn otp_mask(payload: &[FieldElement], stream: &mut PadStream) -> Vec<FieldElement> {
    payload.iter().map(|&x| x + stream.next_element()).collect()
}

pub fn otp_unmask(masked: &[FieldElement], stream: &mut PadStream) -> Vec<FieldElement> {
    masked.iter().map(|&x| x - stream.next_element()).collect()
}

/// Masking with an explicit pad, used by audits that substitute true randomness.
pub fn mask_with(payload: &[FieldElement], pad: &[FieldElement]) -> Result<Vec<FieldElement>, MaskError> {
    if payload.len() != pad.len() {
        return Err(MaskError::Length {
            expected: payload.len(),
            got: pad.len(),
        });
    }
    Ok(payload.iter().zip(pad).map(|(&x, &z)| x + z).collect())
}

/// Records every stream a party opens; a second open of the same stream is an error.
#[derive(Debug, Default)]
pub struct PadLedger {
    used: HashSet<PadKey>,
}

impl PadLedger {
    pub fn claim(&mut self, key: PadKey) -> Result<(), MaskError> {
        if self.used.insert(key) {
            Ok(())
        } else {
            Err(MaskError::PadReuse(format!("{key:?}")))
        }
    }

    pub fn len(&self) -> usize {
        self.used.len()
    }

    pub fn is_empty(&self) -> bool {
        self.used.is_empty()
    }
}
