//! Paillier additively homomorphic encryption with generator `g = n + 1`.
//!
//! Ciphertext multiplication adds plaintexts and ciphertext exponentiation
//! scales them; the server uses both to blind responses it cannot read.

use num_bigint::{BigUint, RandBigInt};
use num_integer::Integer;
use num_prime::RandPrime;
use num_traits::{One, Zero};
use rand::Rng;

/// Identifier of the key a ciphertext was produced under (the owner's id).
pub type KeyId = u32;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PaillierError {
    #[error("ciphertext under key {got} used with key {expected}")]
    KeyMismatch { expected: KeyId, got: KeyId },
    #[error("plaintext must be below the key modulus")]
    PlaintextRange,
    #[error("ciphertext is not an element of Z*_(n^2)")]
    InvalidCiphertext,
    #[error("invalid key material: {0}")]
    Key(String),
    #[error("truncated ciphertext encoding")]
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PublicKey {
    n: BigUint,
    n_squared: BigUint,
    key_id: KeyId,
}

#[derive(Clone, Debug)]
pub struct SecretKey {
    lambda: BigUint,
    mu: BigUint,
    public: PublicKey,
}

#[derive(Clone, Debug)]
pub struct Keypair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Ciphertext {
    value: BigUint,
    key_id: KeyId,
}

impl Keypair {
    /// Generates a key whose modulus has exactly `bits` bits.
    pub fn generate(bits: u64, key_id: KeyId, rng: &mut impl Rng) -> Result<Self, PaillierError> {
        if bits < 8 {
            return Err(PaillierError::Key(format!("{bits}-bit modulus is too small")));
        }
        let half = bits.div_ceil(2) as usize;
        loop {
            let p: BigUint = rng.gen_prime(half, None);
            let q: BigUint = rng.gen_prime((bits as usize) - half, None);
            if p == q || (&p * &q).bits() != bits {
                continue;
            }
            if let Ok(key) = Self::from_primes(&p, &q, key_id) {
                return Ok(key);
            }
        }
    }

    /// Builds a key from explicit primes. Used for toy keys in tests.
    pub fn from_primes(p: &BigUint, q: &BigUint, key_id: KeyId) -> Result<Self, PaillierError> {
        if p == q {
            return Err(PaillierError::Key("primes must be distinct".into()));
        }
        for x in [p, q] {
            if !num_prime::nt_funcs::is_prime(x, None).probably() {
                return Err(PaillierError::Key(format!("{x} is not prime")));
            }
        }
        let one = BigUint::one();
        let n = p * q;
        let phi = (p - &one) * (q - &one);
        if !n.gcd(&phi).is_one() {
            return Err(PaillierError::Key("gcd(n, phi(n)) != 1".into()));
        }
        let lambda = (p - &one).lcm(&(q - &one));
        let mu = lambda
            .modinv(&n)
            .ok_or_else(|| PaillierError::Key("lambda not invertible mod n".into()))?;
        let public = PublicKey {
            n_squared: &n * &n,
            n,
            key_id,
        };
        Ok(Self {
            secret: SecretKey {
                lambda,
                mu,
                public: public.clone(),
            },
            public,
        })
    }
}

impl PublicKey {
    /// Rebuilds a public key received from the wire.
    pub fn from_modulus(n: BigUint, key_id: KeyId) -> Result<Self, PaillierError> {
        if n < BigUint::from(6u8) {
            return Err(PaillierError::Key("modulus too small".into()));
        }
        Ok(Self {
            n_squared: &n * &n,
            n,
            key_id,
        })
    }

    pub fn modulus(&self) -> &BigUint {
        &self.n
    }

    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn bits(&self) -> u64 {
        self.n.bits()
    }

    /// Encoded size in bytes of every ciphertext under this key.
    pub fn ciphertext_len(&self) -> usize {
        8 + self.n_squared.bits().div_ceil(8) as usize
    }

    /// `(1 + n)^m * r^n mod n^2` with `r` uniform in `Z*_n`.
    pub fn encrypt(&self, m: &BigUint, rng: &mut impl Rng) -> Result<Ciphertext, PaillierError> {
        if m >= &self.n {
            return Err(PaillierError::PlaintextRange);
        }
        let r = loop {
            let r = rng.gen_biguint_range(&BigUint::one(), &self.n);
            if r.gcd(&self.n).is_one() {
                break r;
            }
        };
        let gm = (BigUint::one() + m * &self.n) % &self.n_squared;
        let value = gm * r.modpow(&self.n, &self.n_squared) % &self.n_squared;
        Ok(Ciphertext {
            value,
            key_id: self.key_id,
        })
    }

    fn check(&self, c: &Ciphertext) -> Result<(), PaillierError> {
        if c.key_id != self.key_id {
            return Err(PaillierError::KeyMismatch {
                expected: self.key_id,
                got: c.key_id,
            });
        }
        if c.value >= self.n_squared {
            return Err(PaillierError::InvalidCiphertext);
        }
        Ok(())
    }

    /// Homomorphic addition: decrypts to `m1 + m2 mod n`.
    pub fn add(&self, c1: &Ciphertext, c2: &Ciphertext) -> Result<Ciphertext, PaillierError> {
        self.check(c1)?;
        self.check(c2)?;
        Ok(Ciphertext {
            value: &c1.value * &c2.value % &self.n_squared,
            key_id: self.key_id,
        })
    }

    /// Homomorphic scaling: decrypts to `k * m mod n`.
    pub fn scale(&self, c: &Ciphertext, k: &BigUint) -> Result<Ciphertext, PaillierError> {
        self.check(c)?;
        Ok(Ciphertext {
            value: c.value.modpow(k, &self.n_squared),
            key_id: self.key_id,
        })
    }

    /// Fixed-width encoding: 4-byte key id, 4-byte length, big-endian value.
    pub fn encode_ciphertext(&self, c: &Ciphertext, out: &mut Vec<u8>) {
        c.encode(self.ciphertext_len() - 8, out);
    }
}

impl SecretKey {
    pub fn public(&self) -> &PublicKey {
        &self.public
    }

    pub fn decrypt(&self, c: &Ciphertext) -> Result<BigUint, PaillierError> {
        self.public.check(c)?;
        let n = &self.public.n;
        let u = c.value.modpow(&self.lambda, &self.public.n_squared);
        if u.is_zero() {
            return Err(PaillierError::InvalidCiphertext);
        }
        let l = (u - BigUint::one()) / n;
        Ok(l * &self.mu % n)
    }
}

impl Ciphertext {
    pub fn key_id(&self) -> KeyId {
        self.key_id
    }

    pub fn value(&self) -> &BigUint {
        &self.value
    }

    /// Writes the key id, the width and the value left-padded to `width` bytes.
    pub fn encode(&self, width: usize, out: &mut Vec<u8>) {
        let bytes = self.value.to_bytes_be();
        out.extend_from_slice(&self.key_id.to_be_bytes());
        out.extend_from_slice(&(width.max(bytes.len()) as u32).to_be_bytes());
        out.extend(std::iter::repeat_n(0u8, width.saturating_sub(bytes.len())));
        out.extend_from_slice(&bytes);
    }

    /// Decodes one ciphertext, returning it with the number of bytes read.
    pub fn decode(bytes: &[u8]) -> Result<(Self, usize), PaillierError> {
        if bytes.len() < 8 {
            return Err(PaillierError::Truncated);
        }
        let key_id = u32::from_be_bytes(bytes[0..4].try_into().unwrap());
        let len = u32::from_be_bytes(bytes[4..8].try_into().unwrap()) as usize;
        let body = bytes.get(8..8 + len).ok_or(PaillierError::Truncated)?;
        Ok((
            Ciphertext {
                value: BigUint::from_bytes_be(body),
                key_id,
            },
            8 + len,
        ))
    }
}

/// True when every server-side value `r * A + noise` with `r, A, noise < p`
/// stays below the Paillier modulus, i.e. `n > p^2 + p`.
pub fn no_wrap(n: &BigUint, field_modulus: u64) -> bool {
    let p = BigUint::from(field_modulus);
    n > &(&p * &p + &p)
}

/// Smallest admissible key size for a field modulus: `n > p^2 + p` is
/// guaranteed by `2 * bits(p) + 2` bits.
pub fn min_key_bits(field_modulus: u64) -> u64 {
    2 * (64 - field_modulus.leading_zeros()) as u64 + 2
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    fn toy() -> Keypair {
        Keypair::from_primes(&BigUint::from(5u8), &BigUint::from(7u8), 1).unwrap()
    }

    fn big(x: u64) -> BigUint {
        BigUint::from(x)
    }

    #[test]
    fn toy_key_round_trips_every_plaintext() {
        let key = toy();
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        for m in 0..35u64 {
            let c = key.public.encrypt(&big(m), &mut rng).unwrap();
            assert_eq!(key.secret.decrypt(&c).unwrap(), big(m));
        }
        assert_eq!(key.public.encrypt(&big(35), &mut rng), Err(PaillierError::PlaintextRange));
    }

    #[test]
    fn encryption_is_randomized() {
        let mut rng = ChaCha20Rng::seed_from_u64(2);
        let key = Keypair::generate(128, 7, &mut rng).unwrap();
        assert_eq!(key.public.bits(), 128);
        let a = key.public.encrypt(&big(42), &mut rng).unwrap();
        let b = key.public.encrypt(&big(42), &mut rng).unwrap();
        assert_ne!(a, b);
        let zero = key.public.encrypt(&big(0), &mut rng).unwrap();
        assert_eq!(key.secret.decrypt(&zero).unwrap(), big(0));
    }

    #[test]
    fn homomorphic_examples_on_toy_key() {
        let key = toy();
        let pk = &key.public;
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let enc = |m: u64, rng: &mut ChaCha20Rng| pk.encrypt(&big(m), rng).unwrap();
        let dec = |c: &Ciphertext| key.secret.decrypt(c).unwrap();

        let sum = pk.add(&enc(2, &mut rng), &enc(3, &mut rng)).unwrap();
        assert_eq!(dec(&sum), big(5));
        let with_zero = pk.add(&enc(11, &mut rng), &enc(0, &mut rng)).unwrap();
        assert_eq!(dec(&with_zero), big(11));
        for m in 0..35 {
            let wrap = pk.add(&enc(m, &mut rng), &enc((35 - m) % 35, &mut rng)).unwrap();
            assert_eq!(dec(&wrap), big(0));
        }
        assert_eq!(dec(&pk.scale(&enc(4, &mut rng), &big(1)).unwrap()), big(4));
        assert_eq!(dec(&pk.scale(&enc(4, &mut rng), &big(6)).unwrap()), big(24));
        assert_eq!(dec(&pk.scale(&enc(3, &mut rng), &big(8)).unwrap()), big(24));
    }

    #[test]
    fn key_mismatch_is_rejected() {
        let a = toy();
        let b = Keypair::from_primes(&big(11), &big(13), 2).unwrap();
        let mut rng = ChaCha20Rng::seed_from_u64(4);
        let ca = a.public.encrypt(&big(1), &mut rng).unwrap();
        let cb = b.public.encrypt(&big(1), &mut rng).unwrap();
        assert_eq!(
            a.public.add(&ca, &cb),
            Err(PaillierError::KeyMismatch { expected: 1, got: 2 })
        );
        assert!(b.secret.decrypt(&ca).is_err());
    }

    #[test]
    fn from_primes_validates() {
        assert!(Keypair::from_primes(&big(5), &big(5), 0).is_err());
        assert!(Keypair::from_primes(&big(5), &big(9), 0).is_err());
        // 3 divides phi(n) = 2 * 6 and also n = 3 * 7
        assert!(Keypair::from_primes(&big(3), &big(7), 0).is_err());
    }

    #[test]
    fn ciphertext_encoding_round_trip() {
        let mut rng = ChaCha20Rng::seed_from_u64(5);
        let key = Keypair::generate(96, 0xabcd, &mut rng).unwrap();
        let c = key.public.encrypt(&big(77), &mut rng).unwrap();
        let mut out = Vec::new();
        key.public.encode_ciphertext(&c, &mut out);
        assert_eq!(out.len(), key.public.ciphertext_len());
        assert_eq!(&out[..4], &0xabcdu32.to_be_bytes());
        let (back, used) = Ciphertext::decode(&out).unwrap();
        assert_eq!(used, out.len());
        assert_eq!(back, c);
        assert_eq!(Ciphertext::decode(&out[..out.len() - 1]), Err(PaillierError::Truncated));
    }

    #[test]
    fn no_wrap_rule() {
        let p = 10007u64;
        let bits = min_key_bits(p);
        assert!(no_wrap(&(BigUint::one() << (bits - 1)), p));
        assert!(!no_wrap(&big(p * p + p), p));
        assert!(no_wrap(&big(p * p + p + 1), p));
    }

    #[test]
    fn random_identities_on_generated_key() {
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let key = Keypair::generate(256, 3, &mut rng).unwrap();
        let n = key.public.modulus().clone();
        for _ in 0..50 {
            let a = rng.gen_biguint_below(&n);
            let b = rng.gen_biguint_below(&n);
            let k = rng.gen_biguint_below(&n);
            let ca = key.public.encrypt(&a, &mut rng).unwrap();
            let cb = key.public.encrypt(&b, &mut rng).unwrap();
            let c = key.public.scale(&key.public.add(&ca, &cb).unwrap(), &k).unwrap();
            assert_eq!(key.secret.decrypt(&c).unwrap(), (a + b) * k % &n);
        }
    }
}
