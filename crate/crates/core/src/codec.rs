//! Canonical binary encoding: fixed-width little-endian integers and
//! `u64` little-endian length prefixes. Decoding rejects trailing bytes.

use bincode::Options;
use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::crypto::{sha256, Digest};

fn options() -> impl Options {
    bincode::DefaultOptions::new().with_fixint_encoding().with_little_endian().reject_trailing_bytes()
}

#[derive(Debug, thiserror::Error)]
#[error("decode: {0}")]
pub struct DecodeError(String);

pub fn encode<T: Serialize + ?Sized>(value: &T) -> Vec<u8> {
    options().serialize(value).expect("in-memory encoding cannot fail")
}

pub fn decode<T: DeserializeOwned>(bytes: &[u8]) -> Result<T, DecodeError> {
    options().deserialize(bytes).map_err(|e| DecodeError(e.to_string()))
}

/// Digest of the canonical encoding.
pub fn digest_of<T: Serialize + ?Sized>(value: &T) -> Digest {
    sha256(&encode(value))
}
