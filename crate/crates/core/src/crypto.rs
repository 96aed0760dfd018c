//! Digests and symbolic signatures.
//!
//! Signatures are keyed SHA-256 tags over the message bytes. A [`KeyRing`]
//! holds one secret per principal and acts as the trusted verifier; a
//! signature produced with any other secret fails verification.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};

/// 32-byte SHA-256 output.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Digest> {
        let bytes = hex::decode(s).ok()?;
        let arr: [u8; 32] = bytes.try_into().ok()?;
        Some(Digest(arr))
    }

    /// First 8 hex chars, for traces and logs.
    pub fn short(&self) -> String {
        hex::encode(&self.0[..4])
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", self.short())
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

pub fn sha256(data: &[u8]) -> Digest {
    Digest(Sha256::digest(data).into())
}

/// Hash of several byte strings, each prefixed by its little-endian length.
pub fn hash_parts(parts: &[&[u8]]) -> Digest {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p);
    }
    Digest(h.finalize().into())
}

/// Principal name: a party (`ves`, `client`), an NSB peer, or the ISC.
pub type PrincipalId = String;

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Signature(pub [u8; 32]);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Sig({})", hex::encode(&self.0[..4]))
    }
}

/// A signing secret. Kept separate from the ring so a forger can hold one
/// without being able to register it.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct SecretKey([u8; 32]);

impl SecretKey {
    pub fn derive(seed: &[u8], principal: &str) -> SecretKey {
        SecretKey(hash_parts(&[b"key", seed, principal.as_bytes()]).0)
    }

    pub fn sign(&self, msg: &[u8]) -> Signature {
        Signature(hash_parts(&[b"sig", &self.0, msg]).0)
    }
}

/// Per-session key registry issued by the harness.
#[derive(Clone, Debug, Default)]
pub struct KeyRing {
    keys: BTreeMap<PrincipalId, SecretKey>,
}

impl KeyRing {
    pub fn new() -> Self {
        Self::default()
    }

    /// Ring with a key derived from `seed` for each principal.
    pub fn issue<'a>(seed: &[u8], principals: impl IntoIterator<Item = &'a str>) -> Self {
        let mut ring = KeyRing::new();
        for p in principals {
            ring.keys.insert(p.to_string(), SecretKey::derive(seed, p));
        }
        ring
    }

    pub fn insert(&mut self, principal: &str, key: SecretKey) {
        self.keys.insert(principal.to_string(), key);
    }

    pub fn contains(&self, principal: &str) -> bool {
        self.keys.contains_key(principal)
    }

    pub fn secret(&self, principal: &str) -> Option<SecretKey> {
        self.keys.get(principal).copied()
    }

    pub fn sign(&self, principal: &str, msg: &[u8]) -> Option<Signature> {
        self.keys.get(principal).map(|k| k.sign(msg))
    }

    pub fn verify(&self, principal: &str, msg: &[u8], sig: &Signature) -> bool {
        match self.keys.get(principal) {
            Some(k) => k.sign(msg) == *sig,
            None => false,
        }
    }
}
