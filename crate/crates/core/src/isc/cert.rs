//! Certificates, Merkle attestations and the wrapper/transaction
//! association check shared by the parties and the ISC.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chain::{var_key, Call, OnChainTx, Receipt};
use crate::codec;
use crate::compiler::{Party, Payload, StateSlot, TransactionWrapper, WrapperArg};
use crate::crypto::{Digest, KeyRing, PrincipalId, SecretKey, Signature};
use crate::merkle::{verify_membership, MembershipProof};
use crate::nsb::{StatusProof, StatusRecord};
use crate::value::Value;

/// Transaction lifecycle; later variants are more advanced. `Correct` is
/// only ever assigned by the ISC at settlement.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TransState {
    Unknown,
    Init,
    Inited,
    Open,
    Opened,
    Closed,
    Correct,
}

impl TransState {
    pub fn as_str(self) -> &'static str {
        match self {
            TransState::Unknown => "unknown",
            TransState::Init => "init",
            TransState::Inited => "inited",
            TransState::Open => "open",
            TransState::Opened => "opened",
            TransState::Closed => "closed",
            TransState::Correct => "correct",
        }
    }
}

impl std::fmt::Display for TransState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

/// State tag carried in a certificate payload. A dual-signed `Open`
/// payload is the opened certificate; a dual-signed `Closed` payload is the
/// closed certificate, single-signed it is only a closing request.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum CertKind {
    Init,
    Inited,
    Open,
    Closed,
}

/// Post-state of a finalized transaction, as consumed downstream.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Closing {
    /// Chain block that included the transaction.
    pub height: u64,
    pub values: Vec<(StateSlot, Value)>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CertPayload {
    pub sid: Digest,
    pub tid: Digest,
    pub kind: CertKind,
    pub wrapper: TransactionWrapper,
    pub trans: Option<OnChainTx>,
    /// `ts_open` for `Open`, `ts_closed` for `Closed`, otherwise 0.
    pub ts: u64,
    pub closing: Option<Closing>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Certificate {
    pub payload: CertPayload,
    pub sigs: Vec<(PrincipalId, Signature)>,
}

pub fn principal(p: Party) -> PrincipalId {
    p.as_str().to_string()
}

impl Certificate {
    pub fn signed(payload: CertPayload, signer: Party, key: &SecretKey) -> Certificate {
        let sig = key.sign(&codec::encode(&payload));
        Certificate { payload, sigs: vec![(principal(signer), sig)] }
    }

    /// Adds a second signature over the same payload.
    pub fn cosign(&self, signer: Party, key: &SecretKey) -> Certificate {
        let mut c = self.clone();
        c.sigs.retain(|(p, _)| *p != principal(signer));
        c.sigs.push((principal(signer), key.sign(&codec::encode(&c.payload))));
        c.sigs.sort_by(|a, b| a.0.cmp(&b.0));
        c
    }

    /// Every signature verifies and signers are distinct.
    pub fn verify(&self, keys: &KeyRing) -> bool {
        let msg = codec::encode(&self.payload);
        let distinct: BTreeSet<&str> = self.sigs.iter().map(|(p, _)| p.as_str()).collect();
        !self.sigs.is_empty() && distinct.len() == self.sigs.len() && self.sigs.iter().all(|(p, s)| keys.verify(p, &msg, s))
    }

    pub fn signed_by(&self, p: Party) -> bool {
        self.sigs.iter().any(|(s, _)| *s == principal(p))
    }

    pub fn sole_signer(&self) -> Option<Party> {
        match self.sigs.as_slice() {
            [(p, _)] => Party::parse(p),
            _ => None,
        }
    }

    pub fn is_dual(&self) -> bool {
        self.sigs.len() == 2 && self.signed_by(Party::Ves) && self.signed_by(Party::Client)
    }

    /// State this certificate attests, or `None` for a closing request.
    pub fn state(&self) -> Option<TransState> {
        Some(match (self.payload.kind, self.is_dual()) {
            (CertKind::Init, _) => TransState::Init,
            (CertKind::Inited, _) => TransState::Inited,
            (CertKind::Open, false) => TransState::Open,
            (CertKind::Open, true) => TransState::Opened,
            (CertKind::Closed, true) => TransState::Closed,
            (CertKind::Closed, false) => return None,
        })
    }

    /// ActionMT key.
    pub fn key(&self) -> Digest {
        codec::digest_of(self)
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        codec::encode(self)
    }

    pub fn short_name(&self) -> &'static str {
        match self.state() {
            Some(TransState::Init) => "Cert^i",
            Some(TransState::Inited) => "Cert^id",
            Some(TransState::Open) => "Cert^o",
            Some(TransState::Opened) => "Cert^od",
            Some(TransState::Closed) => "Cert^c",
            _ => "C_closed",
        }
    }
}

/// A staked certificate with its ActionMT proof.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ActionProof {
    pub cert: Certificate,
    pub nsb_height: u64,
    pub proof: MembershipProof,
}

/// The complete on-chain closing proof: chain finalization (left side)
/// plus the NSB status linkage (right side).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClosureProof {
    pub sid: Digest,
    pub wrapper: TransactionWrapper,
    pub trans: OnChainTx,
    /// Inclusion of `trans` under the chain block's TxRoot.
    pub tx_proof: MembershipProof,
    /// Entries for the consumed variables under the same block's StateRoot.
    pub state_proofs: Vec<MembershipProof>,
    pub record: StatusRecord,
    pub status: StatusProof,
    pub nsb_height: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Attestation {
    Cert(Certificate),
    Action(ActionProof),
    Closure(ClosureProof),
}

impl Attestation {
    pub fn wrapper(&self) -> &TransactionWrapper {
        match self {
            Attestation::Cert(c) => &c.payload.wrapper,
            Attestation::Action(a) => &a.cert.payload.wrapper,
            Attestation::Closure(m) => &m.wrapper,
        }
    }

    pub fn sid(&self) -> Digest {
        match self {
            Attestation::Cert(c) => c.payload.sid,
            Attestation::Action(a) => a.cert.payload.sid,
            Attestation::Closure(m) => m.sid,
        }
    }

    /// State the attestation claims, if it claims one.
    pub fn state(&self) -> Option<TransState> {
        match self {
            Attestation::Cert(c) => c.state(),
            Attestation::Action(a) => a.cert.state(),
            Attestation::Closure(_) => Some(TransState::Closed),
        }
    }

    pub fn label(&self) -> String {
        match self {
            Attestation::Cert(c) => c.short_name().to_string(),
            Attestation::Action(a) => a.cert.short_name().replace("Cert", "Merk"),
            Attestation::Closure(_) => "Merk^c".to_string(),
        }
    }
}

impl ClosureProof {
    /// Consumed values proven under the record's StateRoot.
    pub fn proven_values(&self, slots: &[StateSlot]) -> Option<Vec<(StateSlot, Value)>> {
        let mut out = Vec::new();
        for slot in slots {
            let key = var_key(&slot.contract, &slot.var);
            let p = self.state_proofs.iter().find(|p| p.key == key)?;
            if !verify_membership(&self.record.state_root, p) {
                return None;
            }
            out.push((slot.clone(), codec::decode(&p.value).ok()?));
        }
        Some(out)
    }

    /// Checks the left side against the record and the record against the
    /// given StatusRoot. Association and state are checked by the caller.
    pub fn verify_links(&self, status_root: &Digest) -> Result<(), String> {
        if self.tx_proof.key != self.trans.digest().0 {
            return Err("inclusion proof is for another transaction".into());
        }
        if !verify_membership(&self.record.tx_root, &self.tx_proof) {
            return Err("inclusion proof does not reach the recorded TxRoot".into());
        }
        match codec::decode::<Receipt>(&self.tx_proof.value) {
            Ok(r) if r.ok => {}
            _ => return Err("transaction failed on chain".into()),
        }
        if self.record.chain != self.trans.chain {
            return Err("status record is for another chain".into());
        }
        if !self.status.verify(status_root, &self.record) {
            return Err("status proof does not reach the StatusRoot".into());
        }
        Ok(())
    }
}

/// The unsigned fields the on-chain transaction for `w` must carry, given
/// the consumed upstream values.
fn expected_call(w: &TransactionWrapper, upstream: &dyn Fn(&StateSlot) -> Option<Value>) -> Result<Option<Call>, String> {
    match &w.meta.payload {
        Payload::Payment { .. } => Ok(None),
        Payload::Invocation { method, args } => {
            let mut out = Vec::with_capacity(args.len());
            for a in args {
                out.push(match a {
                    WrapperArg::Literal(v) => v.clone(),
                    WrapperArg::State { seq, contract, var } => {
                        let slot = StateSlot { seq: *seq, contract: contract.clone(), var: var.clone() };
                        upstream(&slot).ok_or_else(|| format!("no proven value for T{seq} {contract}.{var}"))?
                    }
                });
            }
            Ok(Some(Call { method: method.clone(), args: out }))
        }
    }
}

fn value_and_unit(w: &TransactionWrapper) -> (u64, String) {
    match &w.meta.payload {
        Payload::Payment { value, unit } => (*value, unit.clone()),
        Payload::Invocation { .. } => (0, String::new()),
    }
}

/// Computes and signs the on-chain transaction for `w`.
pub fn build_trans(w: &TransactionWrapper, upstream: &dyn Fn(&StateSlot) -> Option<Value>, key: &SecretKey) -> Result<OnChainTx, String> {
    let call = expected_call(w, upstream)?;
    let (value, unit) = value_and_unit(w);
    let signer = principal(w.originator());
    Ok(OnChainTx::signed(&w.meta.chain, &w.from.address, &w.to.address, value, &unit, call, w.meta.nonce, &signer, key))
}

/// Association of an on-chain transaction with its wrapper: every field
/// matches, consumed state equals the proven upstream values, and the
/// originator signed it.
pub fn associate(
    w: &TransactionWrapper,
    trans: &OnChainTx,
    upstream: &dyn Fn(&StateSlot) -> Option<Value>,
    keys: &KeyRing,
) -> Result<(), String> {
    let (value, unit) = value_and_unit(w);
    let signer = principal(w.originator());
    let checks = [
        (trans.chain == w.meta.chain, "chain"),
        (trans.from == w.from.address, "sender"),
        (trans.to == w.to.address, "receiver"),
        (trans.value == value && trans.unit == unit, "value"),
        (trans.nonce == w.meta.nonce, "nonce"),
        (trans.signer == signer, "signer"),
    ];
    if let Some((_, what)) = checks.iter().find(|(ok, _)| !ok) {
        return Err(format!("{what} does not match {}", w.name()));
    }
    if expected_call(w, upstream)? != trans.call {
        return Err(format!("invocation of {} does not use the proven upstream state", w.name()));
    }
    if !keys.verify(&trans.signer, &trans.signing_bytes(), &trans.sig) {
        return Err("bad transaction signature".into());
    }
    Ok(())
}

/// Lookup table from the closing values recorded for upstream wrappers.
pub fn upstream_table(closings: &BTreeMap<u32, Vec<(StateSlot, Value)>>) -> impl Fn(&StateSlot) -> Option<Value> + '_ {
    move |slot| closings.get(&slot.seq)?.iter().find(|(s, _)| s.contract == slot.contract && s.var == slot.var).map(|(_, v)| v.clone())
}
