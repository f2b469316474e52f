//! Deterministic randomness. Every random draw in a deployment comes from a
//! ChaCha20 stream keyed by a party seed, a label and a tuple of indices, so
//! a run is reproducible regardless of message interleaving.

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use sha2::{Digest, Sha256};

pub type PartySeed = [u8; 32];

/// Seed of party `party` (0 is the server) under a deployment seed.
pub fn party_seed(deployment_seed: u64, party: u16) -> PartySeed {
    let mut h = Sha256::new();
    h.update(b"embagg/party/v1");
    h.update(deployment_seed.to_be_bytes());
    h.update(party.to_be_bytes());
    h.finalize().into()
}

/// Public value every party can derive from the deployment seed.
pub fn public_seed(deployment_seed: u64, label: &str) -> PartySeed {
    let mut h = Sha256::new();
    h.update(b"embagg/public/v1");
    h.update(deployment_seed.to_be_bytes());
    h.update(label.as_bytes());
    h.finalize().into()
}

pub fn derive_rng(seed: &PartySeed, label: &str, indices: &[u64]) -> ChaCha20Rng {
    let mut h = Sha256::new();
    h.update(b"embagg/rng/v1");
    h.update(seed);
    h.update((label.len() as u32).to_be_bytes());
    h.update(label.as_bytes());
    for i in indices {
        h.update(i.to_be_bytes());
    }
    ChaCha20Rng::from_seed(h.finalize().into())
}
