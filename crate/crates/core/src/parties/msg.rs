use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::chain::{Chain, OnChainTx};
use crate::codec;
use crate::compiler::{Party, Tdg};
use crate::crypto::Digest;
use crate::isc::cert::{Attestation, Certificate};
use crate::isc::Isc;
use crate::nsb::{Nsb, StatusClaim};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Actor {
    Party(Party),
    Chain(String),
    Nsb,
    Isc,
}

impl fmt::Display for Actor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Actor::Party(p) => write!(f, "{p}"),
            Actor::Chain(c) => write!(f, "chain:{c}"),
            Actor::Nsb => f.write_str("nsb"),
            Actor::Isc => f.write_str("isc"),
        }
    }
}

impl Actor {
    pub fn parse(s: &str) -> Option<Actor> {
        match s {
            "nsb" => Some(Actor::Nsb),
            "isc" => Some(Actor::Isc),
            _ => match s.strip_prefix("chain:") {
                Some(c) => Some(Actor::Chain(c.to_string())),
                None => Party::parse(s).map(Actor::Party),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Msg {
    /// Off-chain channel between the parties.
    Cert(Certificate),
    Exec(OnChainTx),
    AddAction(Certificate),
    ClosureClaim(StatusClaim),
    Create {
        tdg: Box<Tdg>,
        refund: BTreeMap<Party, String>,
    },
    Created {
        cid: Digest,
    },
    /// Stake notice; `tx` is the finalized escrow deposit, `None` for a zero stake.
    Deposit {
        cid: Digest,
        tx: Option<Digest>,
    },
    Claim {
        cid: Digest,
        atte: Box<Attestation>,
    },
}

impl Msg {
    pub fn digest(&self) -> Digest {
        codec::digest_of(self)
    }
}

/// Read access to the public ledgers.
#[derive(Clone, Copy)]
pub struct View<'a> {
    pub tick: u64,
    pub chains: &'a BTreeMap<String, Chain>,
    pub nsb: &'a Nsb,
    pub isc: &'a Isc,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Out {
    pub to: Actor,
    pub msg: Msg,
}
