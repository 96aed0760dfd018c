//! The nine unified types and the per-language native type map.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum UnifiedType {
    Boolean,
    Numeric,
    Address,
    String,
    Array,
    Map,
    Struct,
    Function,
    Contract,
}

impl fmt::Display for UnifiedType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Language {
    Solidity,
    Vyper,
    Go,
}

impl FromStr for Language {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "solidity" => Ok(Language::Solidity),
            "vyper" => Ok(Language::Vyper),
            "go" => Ok(Language::Go),
            other => Err(other.to_string()),
        }
    }
}

impl fmt::Display for Language {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Language::Solidity => "solidity",
            Language::Vyper => "vyper",
            Language::Go => "go",
        })
    }
}

/// Result of mapping a native type. Only Go `string` is ambiguous.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TypeMapping {
    Exact(UnifiedType),
    AddressOrString,
}

impl TypeMapping {
    pub fn admits(&self, t: UnifiedType) -> bool {
        match self {
            TypeMapping::Exact(u) => *u == t,
            TypeMapping::AddressOrString => matches!(t, UnifiedType::Address | UnifiedType::String),
        }
    }

    pub fn candidates(&self) -> Vec<UnifiedType> {
        match self {
            TypeMapping::Exact(u) => vec![*u],
            TypeMapping::AddressOrString => vec![UnifiedType::Address, UnifiedType::String],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("{language} type {native:?} has no unified mapping")]
pub struct UnmappedType {
    pub language: Language,
    pub native: String,
}

pub fn map_type(language: Language, native: &str) -> Result<TypeMapping, UnmappedType> {
    use UnifiedType::*;
    let exact = |t| Ok(TypeMapping::Exact(t));
    let unmapped = || Err(UnmappedType { language, native: native.to_string() });
    match language {
        Language::Solidity => match native {
            "bool" => exact(Boolean),
            "int" | "uint" => exact(Numeric),
            "address" => exact(Address),
            "string" => exact(String),
            "array" | "bytes" => exact(Array),
            "mapping" => exact(Map),
            "struct" => exact(Struct),
            "function" | "enum" => exact(Function),
            "Contract" => exact(Contract),
            _ => unmapped(),
        },
        Language::Vyper => match native {
            "bool" => exact(Boolean),
            "int128" | "uint256" | "decimal" | "unit" => exact(Numeric),
            "address" => exact(Address),
            "string" => exact(String),
            "array" | "bytes" => exact(Array),
            "map" => exact(Map),
            "struct" => exact(Struct),
            "def" => exact(Function),
            "file" => exact(Contract),
            // Vyper strings are declared with a fixed size.
            s if is_sized(s, "string") => exact(String),
            s if is_sized(s, "bytes") => exact(Array),
            _ => unmapped(),
        },
        Language::Go => match native {
            "bool" => exact(Boolean),
            "int" | "uint" | "uintptr" | "float" => exact(Numeric),
            "string" => Ok(TypeMapping::AddressOrString),
            "array" | "slice" => exact(Array),
            "map" => exact(Map),
            "struct" => exact(Struct),
            "func" => exact(Function),
            "type" => exact(Contract),
            _ => unmapped(),
        },
    }
}

fn is_sized(s: &str, base: &str) -> bool {
    s.strip_prefix(base)
        .and_then(|r| r.strip_prefix('['))
        .and_then(|r| r.strip_suffix(']'))
        .is_some_and(|n| !n.is_empty() && n.bytes().all(|b| b.is_ascii_digit()))
}
