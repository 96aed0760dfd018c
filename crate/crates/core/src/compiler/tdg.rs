//! Transaction dependency graph: the executable handed to the parties and
//! the ISC.
//!
//! The text form is pretty-printed JSON with a fixed field order (struct
//! declaration order below) and `Decimal`s as canonical strings, so the
//! same program and config always serialize to the same bytes.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::config::Party;
use crate::codec;
use crate::crypto::Digest;
use crate::value::{Decimal, Value};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct AccountRef {
    pub chain: String,
    pub address: String,
    /// Owning party; `None` for contracts and third-party accounts.
    pub owner: Option<Party>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum WrapperArg {
    Literal(Value),
    /// Value of `var` on contract `contract` after transaction `seq`.
    State {
        seq: u32,
        contract: String,
        var: String,
    },
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateSlot {
    pub seq: u32,
    pub contract: String,
    pub var: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Payload {
    Payment { value: u64, unit: String },
    Invocation { method: String, args: Vec<WrapperArg> },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Meta {
    /// Reversion value in ISC-chain units.
    pub amt: u64,
    /// Reversion account on the ISC hosting chain.
    pub dst: AccountRef,
    /// ISC-chain units per payload unit used for `amt`; `None` for invocations.
    pub rate: Option<Decimal>,
    pub payload: Payload,
    pub state_proof_slots: Vec<StateSlot>,
    pub deadline_blocks: u64,
    pub chain: String,
    /// Sender nonce the on-chain transaction must carry.
    pub nonce: u64,
    /// Source operation name.
    pub op: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TransactionWrapper {
    pub from: AccountRef,
    pub to: AccountRef,
    pub seq: u32,
    pub meta: Meta,
}

impl TransactionWrapper {
    /// Transaction id: digest of the canonical wrapper bytes.
    pub fn tid(&self) -> Digest {
        codec::digest_of(self)
    }

    pub fn name(&self) -> String {
        format!("T{}", self.seq)
    }

    /// Party that computes and posts the on-chain transaction.
    pub fn originator(&self) -> Party {
        self.from.owner.expect("wrapper senders are party-owned")
    }

    /// The other party: answers the originator's certificates.
    pub fn counterparty(&self) -> Party {
        self.originator().other()
    }

    /// Party that receives the value for staking and reversion purposes:
    /// the owner of `to`, or the counterparty when `to` is unowned.
    pub fn fund_recipient(&self) -> Party {
        self.to.owner.unwrap_or_else(|| self.counterparty())
    }

    pub fn value(&self) -> u64 {
        match &self.meta.payload {
            Payload::Payment { value, .. } => *value,
            Payload::Invocation { .. } => 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionParams {
    pub isc_chain: String,
    pub isc_unit: String,
    pub default_deadline_blocks: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Tdg {
    pub session: SessionParams,
    pub wrappers: Vec<TransactionWrapper>,
    /// Precedence pairs `(pred seq, succ seq)`, sorted.
    pub edges: Vec<(u32, u32)>,
}

#[derive(Debug, thiserror::Error)]
pub enum TdgError {
    #[error("tdg json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("tdg invalid: {0}")]
    Invalid(String),
}

impl Tdg {
    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("tdg serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> Result<Self, TdgError> {
        let tdg: Tdg = serde_json::from_str(text)?;
        tdg.check()?;
        Ok(tdg)
    }

    /// Structural checks for graphs that did not come from the compiler.
    pub fn check(&self) -> Result<(), TdgError> {
        for (i, w) in self.wrappers.iter().enumerate() {
            if w.seq as usize != i + 1 {
                return Err(TdgError::Invalid(format!("wrapper {i} has seq {}", w.seq)));
            }
            if w.from.owner.is_none() {
                return Err(TdgError::Invalid(format!("{} sender has no owning party", w.name())));
            }
            if w.meta.deadline_blocks == 0 {
                return Err(TdgError::Invalid(format!("{} has a zero deadline", w.name())));
            }
        }
        let n = self.wrappers.len() as u32;
        for &(a, b) in &self.edges {
            // Seq order is topological, so every edge points forward.
            if a == 0 || b > n || a >= b {
                return Err(TdgError::Invalid(format!("edge T{a} -> T{b}")));
            }
        }
        for w in &self.wrappers {
            let ancestors = self.ancestors(w.seq);
            for slot in &w.meta.state_proof_slots {
                if !ancestors.contains(&slot.seq) {
                    return Err(TdgError::Invalid(format!("{} reads state of non-ancestor T{}", w.name(), slot.seq)));
                }
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.wrappers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.wrappers.is_empty()
    }

    pub fn wrapper(&self, seq: u32) -> Option<&TransactionWrapper> {
        seq.checked_sub(1).and_then(|i| self.wrappers.get(i as usize))
    }

    pub fn preds(&self, seq: u32) -> Vec<u32> {
        self.edges.iter().filter(|e| e.1 == seq).map(|e| e.0).collect()
    }

    pub fn succs(&self, seq: u32) -> Vec<u32> {
        self.edges.iter().filter(|e| e.0 == seq).map(|e| e.1).collect()
    }

    /// Transitive predecessors.
    pub fn ancestors(&self, seq: u32) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        let mut stack = self.preds(seq);
        while let Some(s) = stack.pop() {
            if out.insert(s) {
                stack.extend(self.preds(s));
            }
        }
        out
    }

    pub fn tids(&self) -> BTreeMap<u32, Digest> {
        self.wrappers.iter().map(|w| (w.seq, w.tid())).collect()
    }

    /// Seqs whose state some later wrapper consumes, with the consumed vars.
    pub fn state_producers(&self) -> BTreeMap<u32, BTreeSet<(String, String)>> {
        let mut out: BTreeMap<u32, BTreeSet<(String, String)>> = BTreeMap::new();
        for w in &self.wrappers {
            for s in &w.meta.state_proof_slots {
                out.entry(s.seq).or_default().insert((s.contract.clone(), s.var.clone()));
            }
        }
        out
    }

    /// Canonical bytes used for the insurance contract id.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        codec::encode(self)
    }
}
