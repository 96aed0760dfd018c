use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::value::Decimal;

/// The two protocol parties.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Party {
    Ves,
    Client,
}

impl Party {
    pub fn other(self) -> Party {
        match self {
            Party::Ves => Party::Client,
            Party::Client => Party::Ves,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Party::Ves => "ves",
            Party::Client => "client",
        }
    }

    pub fn parse(s: &str) -> Option<Party> {
        match s {
            "ves" | "VES" => Some(Party::Ves),
            "client" | "dapp" => Some(Party::Client),
            _ => None,
        }
    }
}

impl std::fmt::Display for Party {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// VES-side compilation parameters, loaded from TOML.
///
/// ```toml
/// isc_chain = "ChainN"
/// isc_unit = "ncoin"
/// default_deadline_blocks = 30
/// blocks_per_minute = "6"
/// fee_allowance = 0
/// reachable = ["ChainX", "ChainY", "ChainN"]
/// [relay]
/// ChainX = "0xee01"
/// [refund]
/// ves = "0xee00"
/// client = "0xc100"
/// [rates]        # ISC-chain units per unit
/// xcoin = "1"
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VesConfig {
    pub isc_chain: String,
    pub isc_unit: String,
    pub default_deadline_blocks: u64,
    pub blocks_per_minute: Decimal,
    #[serde(default)]
    pub fee_allowance: u64,
    #[serde(default = "default_cap")]
    pub enumeration_cap: usize,
    pub reachable: BTreeSet<String>,
    /// Relay account address per chain, owned by the VES.
    pub relay: BTreeMap<String, String>,
    /// Refund account per party on the ISC hosting chain.
    pub refund: BTreeMap<Party, String>,
    pub rates: BTreeMap<String, Decimal>,
}

fn default_cap() -> usize {
    20
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("reading {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("parsing {path}: {source}")]
    Toml { path: String, source: toml::de::Error },
}

impl VesConfig {
    pub fn from_toml(text: &str) -> Result<Self, toml::de::Error> {
        toml::from_str(text)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::from_toml(&text).map_err(|source| ConfigError::Toml { path: path.display().to_string(), source })
    }

    pub fn refund_account(&self, p: Party) -> Option<&str> {
        self.refund.get(&p).map(String::as_str)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn option_fixture_config_loads() {
        let c = VesConfig::from_toml(include_str!("../../fixtures/option/ves.toml")).unwrap();
        assert_eq!(c.default_deadline_blocks, 30);
        assert_eq!(c.blocks_per_minute, Decimal::from_int(6));
        assert_eq!(c.refund_account(Party::Client), Some("0xc1a0"));
        assert_eq!(c.enumeration_cap, 20);
        assert_eq!(c.rates["ycoin"], Decimal::from_int(2));
    }

    #[test]
    fn party_names() {
        assert_eq!(Party::parse("ves"), Some(Party::Ves));
        assert_eq!(Party::Client.other(), Party::Ves);
        assert_eq!(Party::parse("miner"), None);
    }
}
