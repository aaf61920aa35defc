//! Pluggable digest / cipher / signature seam.
//!
//! [`SimCrypto`] is simulation grade: SHA-256 keyed constructions standing in
//! for a block cipher, the trusted unit's public-key encryption and node
//! signatures. The secrets live in the suite itself, so whoever holds the
//! suite plays every role. Swap in real primitives by implementing
//! [`CryptoSuite`].

use sha2::{Digest as _, Sha256};

use crate::NodeId;

pub type Digest = [u8; 32];

/// Signature-like attestation produced by [`CryptoSuite::sign`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Attestation(pub [u8; 32]);

/// Symmetric session key chosen by a leader for one transaction.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SessionKey(pub [u8; 32]);

pub trait CryptoSuite {
    fn digest(&self, bytes: &[u8]) -> Digest;
    fn sym_encrypt(&self, key: &SessionKey, plain: &[u8]) -> Vec<u8>;
    fn sym_decrypt(&self, key: &SessionKey, cipher: &[u8]) -> Vec<u8>;
    /// Encrypts so that only the trusted unit can read the result.
    fn encrypt_for_tu(&self, plain: &[u8]) -> Vec<u8>;
    /// `None` if the ciphertext was not produced by [`Self::encrypt_for_tu`].
    fn decrypt_by_tu(&self, cipher: &[u8]) -> Option<Vec<u8>>;
    fn sign(&self, signer: NodeId, bytes: &[u8]) -> Attestation;
    fn verify(&self, signer: NodeId, bytes: &[u8], attestation: &Attestation) -> bool;
}

#[derive(Debug, Clone)]
pub struct SimCrypto {
    secret: [u8; 32],
}

impl SimCrypto {
    pub fn new(seed: u64) -> Self {
        let mut h = Sha256::new();
        h.update(b"mcloud-sim-crypto");
        h.update(seed.to_be_bytes());
        SimCrypto { secret: h.finalize().into() }
    }

    fn keyed(&self, domain: &[u8], parts: &[&[u8]]) -> [u8; 32] {
        let mut h = Sha256::new();
        h.update(self.secret);
        h.update((domain.len() as u64).to_be_bytes());
        h.update(domain);
        for p in parts {
            h.update((p.len() as u64).to_be_bytes());
            h.update(p);
        }
        h.finalize().into()
    }
}

impl Default for SimCrypto {
    fn default() -> Self {
        SimCrypto::new(0)
    }
}

fn keystream_xor(seed: &[u8], data: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(data.len());
    for (block, chunk) in data.chunks(32).enumerate() {
        let mut h = Sha256::new();
        h.update(seed);
        h.update((block as u64).to_be_bytes());
        let pad: [u8; 32] = h.finalize().into();
        out.extend(chunk.iter().zip(pad.iter()).map(|(a, b)| a ^ b));
    }
    out
}

impl CryptoSuite for SimCrypto {
    fn digest(&self, bytes: &[u8]) -> Digest {
        Sha256::digest(bytes).into()
    }

    fn sym_encrypt(&self, key: &SessionKey, plain: &[u8]) -> Vec<u8> {
        keystream_xor(&key.0, plain)
    }

    fn sym_decrypt(&self, key: &SessionKey, cipher: &[u8]) -> Vec<u8> {
        keystream_xor(&key.0, cipher)
    }

    fn encrypt_for_tu(&self, plain: &[u8]) -> Vec<u8> {
        // tag || body; the tag doubles as the keystream nonce
        let tag = self.keyed(b"tu-tag", &[plain]);
        let pad_seed = self.keyed(b"tu-pad", &[&tag]);
        let mut out = tag.to_vec();
        out.extend(keystream_xor(&pad_seed, plain));
        out
    }

    fn decrypt_by_tu(&self, cipher: &[u8]) -> Option<Vec<u8>> {
        if cipher.len() < 32 {
            return None;
        }
        let (tag, body) = cipher.split_at(32);
        let pad_seed = self.keyed(b"tu-pad", &[tag]);
        let plain = keystream_xor(&pad_seed, body);
        (self.keyed(b"tu-tag", &[&plain]) == tag).then_some(plain)
    }

    fn sign(&self, signer: NodeId, bytes: &[u8]) -> Attestation {
        Attestation(self.keyed(b"sign", &[&signer.to_be_bytes(), bytes]))
    }

    fn verify(&self, signer: NodeId, bytes: &[u8], attestation: &Attestation) -> bool {
        self.sign(signer, bytes) == *attestation
    }
}
