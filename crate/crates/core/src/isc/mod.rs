//! Insurance contract: session creation, staking, attestation claims and
//! timeout settlement with fund reversion and blame.

pub mod cert;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chain::{Chain, TxStatus};
use crate::compiler::{stake_requirement, AccountRef, CapExceeded, Party, StateSlot, Tdg};
use crate::crypto::{hash_parts, Digest, KeyRing};
use crate::merkle::verify_membership;
use crate::nsb::{block_key, claim_key, Nsb};
use crate::value::Value;
use cert::{associate, upstream_table, ActionProof, Attestation, CertKind, Certificate, Closing, ClosureProof, TransState};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct IscConfig {
    /// Freshness bound on certificate timestamps, in NSB blocks.
    pub delta: u64,
    /// NSB blocks from activation to settlement.
    pub timeout: u64,
    /// NSB blocks from creation after which an unactivated session refunds.
    pub setup_timeout: u64,
    pub enumeration_cap: usize,
}

impl Default for IscConfig {
    fn default() -> Self {
        IscConfig { delta: 5, timeout: 60, setup_timeout: 20, enumeration_cap: 20 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TxRecord {
    pub state: TransState,
    pub ts_open: u64,
    pub ts_closed: u64,
    /// Post-state of the finalized transaction, once closed.
    pub closing: Option<Closing>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Phase {
    Staking,
    Active,
    Settled,
    Aborted,
}

/// Outcome of settlement, kept after the session's bookkeeping is erased.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Settlement {
    pub states: BTreeMap<u32, TransState>,
    pub dirty: BTreeSet<u32>,
    pub resp: BTreeMap<u32, Party>,
    /// `(seq, dst, amt)` for every reverted transaction.
    pub reversions: Vec<(u32, AccountRef, u64)>,
    pub staked: BTreeMap<Party, u64>,
    /// Net escrow payout per party's refund account.
    pub payouts: BTreeMap<Party, u64>,
}

impl Settlement {
    pub fn succeeded(&self) -> bool {
        self.dirty.is_empty()
    }
}

#[derive(Debug, Clone)]
pub struct Session {
    pub cid: Digest,
    pub tdg: Tdg,
    pub refund: BTreeMap<Party, String>,
    pub required: BTreeMap<Party, u64>,
    pub f_stake: BTreeMap<Party, u64>,
    pub st: BTreeMap<u32, TxRecord>,
    /// `seq -> (amt, dst)`; amt is filled at settlement.
    pub a_revs: BTreeMap<u32, (u64, AccountRef)>,
    pub phase: Phase,
    pub created_at: u64,
    pub activated_at: Option<u64>,
    pub settlement: Option<Settlement>,
    tids: BTreeMap<Digest, u32>,
    credited: BTreeSet<Digest>,
}

impl Session {
    pub fn timer(&self, cfg: &IscConfig) -> Option<u64> {
        self.activated_at.map(|a| a + cfg.timeout)
    }

    pub fn seq_of(&self, tid: &Digest) -> Option<u32> {
        self.tids.get(tid).copied()
    }

    pub fn state(&self, seq: u32) -> TransState {
        self.st.get(&seq).map(|r| r.state).unwrap_or(TransState::Unknown)
    }

    fn upstream(&self) -> BTreeMap<u32, Vec<(StateSlot, Value)>> {
        self.st.iter().filter_map(|(s, r)| r.closing.as_ref().map(|c| (*s, c.values.clone()))).collect()
    }

    /// Slots of `seq` that later wrappers consume.
    pub fn produced_slots(&self, seq: u32) -> Vec<StateSlot> {
        self.tdg
            .state_producers()
            .get(&seq)
            .map(|vars| vars.iter().map(|(c, v)| StateSlot { seq, contract: c.clone(), var: v.clone() }).collect())
            .unwrap_or_default()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum IscError {
    #[error("unknown session")]
    UnknownSession,
    #[error("session is {0:?}")]
    WrongPhase(Phase),
    #[error("unknown transaction")]
    UnknownTid,
    #[error("claimed {claimed} is not above recorded {current}")]
    Stale { current: TransState, claimed: TransState },
    #[error("only dual-signed opened or closed certificates are accepted directly")]
    NotAccepted,
    #[error("bad signature")]
    BadSignature,
    #[error("bad proof: {0}")]
    BadProof(String),
    #[error("wrong signer")]
    WrongSigner,
    #[error("association: {0}")]
    Association(String),
    #[error("timestamp: {0}")]
    Timestamp(String),
    #[error("stake: {0}")]
    Stake(String),
    #[error("timer has not expired")]
    NotExpired,
    #[error(transparent)]
    Cap(#[from] CapExceeded),
}

#[derive(Debug, Clone)]
pub struct Isc {
    cfg: IscConfig,
    verifier: KeyRing,
    /// Escrow account on the hosting chain holding staked funds.
    pub escrow: String,
    pub unit: String,
    sessions: BTreeMap<Digest, Session>,
    nonce: u64,
}

impl Isc {
    pub fn new(cfg: IscConfig, verifier: KeyRing, escrow: &str, unit: &str) -> Isc {
        Isc { cfg, verifier, escrow: escrow.to_string(), unit: unit.to_string(), sessions: BTreeMap::new(), nonce: 0 }
    }

    pub fn config(&self) -> &IscConfig {
        &self.cfg
    }

    pub fn session(&self, cid: &Digest) -> Option<&Session> {
        self.sessions.get(cid)
    }

    pub fn sessions(&self) -> impl Iterator<Item = &Session> {
        self.sessions.values()
    }

    fn session_mut(&mut self, cid: &Digest) -> Result<&mut Session, IscError> {
        self.sessions.get_mut(cid).ok_or(IscError::UnknownSession)
    }

    pub fn create_contract(&mut self, tdg: Tdg, refund: BTreeMap<Party, String>, nsb_height: u64) -> Result<Digest, IscError> {
        let required = [Party::Ves, Party::Client]
            .into_iter()
            .map(|p| Ok((p, stake_requirement(&tdg, p, self.cfg.enumeration_cap)?)))
            .collect::<Result<BTreeMap<_, _>, CapExceeded>>()?;
        self.nonce += 1;
        let cid = hash_parts(&[&self.nonce.to_be_bytes(), &tdg.canonical_bytes()]);
        let blank = TxRecord { state: TransState::Unknown, ts_open: 0, ts_closed: 0, closing: None };
        let session = Session {
            cid,
            st: tdg.wrappers.iter().map(|w| (w.seq, blank.clone())).collect(),
            a_revs: tdg.wrappers.iter().map(|w| (w.seq, (0, w.meta.dst.clone()))).collect(),
            tids: tdg.tids().into_iter().map(|(s, t)| (t, s)).collect(),
            tdg,
            refund,
            required,
            f_stake: BTreeMap::new(),
            phase: Phase::Staking,
            created_at: nsb_height,
            activated_at: None,
            settlement: None,
            credited: BTreeSet::new(),
        };
        self.sessions.insert(cid, session);
        Ok(cid)
    }

    /// Credits a stake; activates once both parties meet their requirement.
    pub fn stake_fund(&mut self, cid: &Digest, party: Party, value: u64, nsb_height: u64) -> Result<(), IscError> {
        let s = self.session_mut(cid)?;
        if s.phase != Phase::Staking {
            return Err(IscError::WrongPhase(s.phase));
        }
        *s.f_stake.entry(party).or_insert(0) += value;
        // Each party has to deposit, even when its requirement is zero.
        if s.required.iter().all(|(p, r)| s.f_stake.get(p).is_some_and(|v| v >= r)) {
            s.phase = Phase::Active;
            s.activated_at = Some(nsb_height);
        }
        Ok(())
    }

    /// Credits a finalized escrow deposit from the party's refund account.
    pub fn stake_fund_onchain(&mut self, cid: &Digest, party: Party, tx: &Digest, host: &Chain, nsb_height: u64) -> Result<(), IscError> {
        let escrow = self.escrow.clone();
        let unit = self.unit.clone();
        let s = self.session_mut(cid)?;
        if s.credited.contains(tx) {
            return Err(IscError::Stake("deposit already credited".into()));
        }
        let Some(from) = s.refund.get(&party).cloned() else {
            return Err(IscError::Stake(format!("no refund account for {party}")));
        };
        let TxStatus::Finalized { height, ok: true } = host.query_status(tx) else {
            return Err(IscError::Stake("deposit not finalized".into()));
        };
        let t = host
            .block(height)
            .and_then(|b| b.txs.iter().find(|(t, _)| t.digest() == *tx))
            .map(|(t, _)| t.clone())
            .ok_or_else(|| IscError::Stake("deposit not found".into()))?;
        if t.from != from || t.to != escrow || t.unit != unit || t.call.is_some() {
            return Err(IscError::Stake("deposit is not a transfer from the refund account to escrow".into()));
        }
        s.credited.insert(*tx);
        self.stake_fund(cid, party, t.value, nsb_height)
    }

    /// Applies an attestation; returns the new state of its transaction.
    pub fn insurance_claim(&mut self, cid: &Digest, atte: &Attestation, nsb: &Nsb) -> Result<TransState, IscError> {
        let delta = self.cfg.delta;
        let verifier = &self.verifier;
        let s = self.sessions.get_mut(cid).ok_or(IscError::UnknownSession)?;
        if s.phase != Phase::Active {
            return Err(IscError::WrongPhase(s.phase));
        }
        if atte.sid() != s.cid {
            return Err(IscError::UnknownSession);
        }
        let w = atte.wrapper();
        let seq = s.seq_of(&w.tid()).ok_or(IscError::UnknownTid)?;
        let claimed = atte.state().ok_or(IscError::NotAccepted)?;
        let current = s.state(seq);
        if claimed <= current {
            return Err(IscError::Stale { current, claimed });
        }
        let upstream = s.upstream();
        let lookup = upstream_table(&upstream);
        let now = nsb.height();
        let mut rec = s.st[&seq].clone();
        match atte {
            Attestation::Cert(c) => {
                if !c.is_dual() || !matches!(c.payload.kind, CertKind::Open | CertKind::Closed) {
                    return Err(IscError::NotAccepted);
                }
                check_cert(c, s, verifier, &lookup)?;
                if c.payload.ts > now {
                    return Err(IscError::Timestamp(format!("ts {} is ahead of NSB height {now}", c.payload.ts)));
                }
                apply_cert(&mut rec, c, s)?;
            }
            Attestation::Action(a) => {
                let ActionProof { cert: c, nsb_height, proof } = a;
                let header = nsb.header(*nsb_height).ok_or_else(|| IscError::BadProof("unknown NSB block".into()))?;
                if proof.key != c.key().0 || proof.value != c.to_bytes() || !verify_membership(&header.action_root, proof) {
                    return Err(IscError::BadProof("certificate is not under the cited ActionRoot".into()));
                }
                check_cert(c, s, verifier, &lookup)?;
                let signer_ok = match claimed {
                    TransState::Init => c.sole_signer() == Some(Party::Ves) && w.originator() == Party::Client,
                    TransState::Inited => c.sole_signer() == Some(w.originator()),
                    TransState::Open => c.sole_signer() == Some(w.counterparty()),
                    _ => c.is_dual(),
                };
                if !signer_ok {
                    return Err(IscError::WrongSigner);
                }
                if matches!(c.payload.kind, CertKind::Open | CertKind::Closed) && c.payload.ts.abs_diff(*nsb_height) > delta {
                    return Err(IscError::Timestamp(format!(
                        "ts {} is more than {delta} blocks from attaching height {nsb_height}",
                        c.payload.ts
                    )));
                }
                apply_cert(&mut rec, c, s)?;
            }
            Attestation::Closure(m) => {
                let header = nsb.header(m.nsb_height).ok_or_else(|| IscError::BadProof("unknown NSB block".into()))?;
                m.verify_links(&header.status_root).map_err(IscError::BadProof)?;
                let key = m.status.key();
                if key != claim_key(&m.trans.digest()).as_slice() && key != block_key(m.record.height).as_slice() {
                    return Err(IscError::BadProof("status entry does not cover the transaction".into()));
                }
                associate(w, &m.trans, &lookup, verifier).map_err(IscError::Association)?;
                let values = closure_values(m, s)?;
                rec.closing = Some(Closing { height: m.record.height, values });
                rec.ts_closed = m.nsb_height;
            }
        }
        rec.state = claimed;
        s.st.insert(seq, rec);
        Ok(claimed)
    }

    /// Settles every active session whose timer has expired and aborts
    /// sessions that never activated. Returns the affected cids.
    pub fn tick(&mut self, nsb_height: u64) -> Vec<Digest> {
        let cfg = self.cfg.clone();
        let mut due = Vec::new();
        for s in self.sessions.values_mut() {
            match s.phase {
                Phase::Active if s.timer(&cfg).is_some_and(|t| nsb_height >= t) => due.push(s.cid),
                Phase::Staking if nsb_height >= s.created_at + cfg.setup_timeout => {
                    s.phase = Phase::Aborted;
                    s.settlement = Some(Settlement {
                        states: s.st.iter().map(|(k, r)| (*k, r.state)).collect(),
                        dirty: BTreeSet::new(),
                        resp: BTreeMap::new(),
                        reversions: Vec::new(),
                        staked: s.f_stake.clone(),
                        payouts: s.f_stake.clone(),
                    });
                    due.push(s.cid);
                }
                _ => {}
            }
        }
        for cid in &due {
            if self.sessions[cid].phase == Phase::Active {
                self.settle_contract(cid, nsb_height).expect("timer checked");
            }
        }
        due
    }

    pub fn settle_contract(&mut self, cid: &Digest, nsb_height: u64) -> Result<&Settlement, IscError> {
        let cfg = self.cfg.clone();
        let s = self.session_mut(cid)?;
        if s.phase != Phase::Active {
            return Err(IscError::WrongPhase(s.phase));
        }
        if !s.timer(&cfg).is_some_and(|t| nsb_height >= t) {
            return Err(IscError::NotExpired);
        }
        let seqs: Vec<u32> = s.tdg.wrappers.iter().map(|w| w.seq).collect();
        for &seq in &seqs {
            if s.state(seq) == TransState::Closed {
                s.a_revs.get_mut(&seq).expect("initialized").0 = s.tdg.wrapper(seq).expect("seq").meta.amt;
                if deadline_verify(&s.tdg, &s.st, seq, s.activated_at.unwrap_or(0)) {
                    s.st.get_mut(&seq).expect("initialized").state = TransState::Correct;
                }
            }
        }
        let states: BTreeMap<u32, TransState> = s.st.iter().map(|(k, r)| (*k, r.state)).collect();
        let dirty = dirty_trans(&s.tdg, &states);
        let resp: BTreeMap<u32, Party> =
            dirty.iter().map(|&seq| (seq, responsible(s.tdg.wrapper(seq).expect("seq"), states[&seq]))).collect();
        let mut reversions = Vec::new();
        if !dirty.is_empty() {
            for (&seq, (amt, dst)) in &s.a_revs {
                if *amt > 0 {
                    reversions.push((seq, dst.clone(), *amt));
                }
            }
        }
        let payouts = net_payouts(&s.tdg, &s.f_stake, &reversions, &s.refund);
        let settlement = Settlement { states, dirty, resp, reversions, staked: s.f_stake.clone(), payouts };
        s.phase = Phase::Settled;
        s.st.clear();
        s.a_revs.clear();
        s.settlement = Some(settlement);
        Ok(s.settlement.as_ref().expect("just set"))
    }
}

/// Signature, session and association checks shared by both certificate paths.
fn check_cert(c: &Certificate, s: &Session, keys: &KeyRing, upstream: &dyn Fn(&StateSlot) -> Option<Value>) -> Result<(), IscError> {
    if !c.verify(keys) {
        return Err(IscError::BadSignature);
    }
    if c.payload.sid != s.cid || c.payload.tid != c.payload.wrapper.tid() {
        return Err(IscError::Association("certificate names another session or transaction".into()));
    }
    match (&c.payload.trans, c.payload.kind) {
        (None, CertKind::Init) => Ok(()),
        (Some(t), k) if k != CertKind::Init => associate(&c.payload.wrapper, t, upstream, keys).map_err(IscError::Association),
        _ => Err(IscError::Association("certificate carries the wrong transaction content".into())),
    }
}

fn apply_cert(rec: &mut TxRecord, c: &Certificate, s: &Session) -> Result<(), IscError> {
    match c.payload.kind {
        CertKind::Open => rec.ts_open = c.payload.ts,
        CertKind::Closed => {
            if c.payload.ts < rec.ts_open {
                return Err(IscError::Timestamp(format!("ts_closed {} precedes ts_open {}", c.payload.ts, rec.ts_open)));
            }
            let closing = c.payload.closing.clone().ok_or_else(|| IscError::Association("closed certificate without post-state".into()))?;
            let wanted = s.produced_slots(c.payload.wrapper.seq);
            if !wanted.iter().all(|w| closing.values.iter().any(|(s, _)| s == w)) {
                return Err(IscError::Association("closed certificate lacks consumed state".into()));
            }
            rec.ts_closed = c.payload.ts;
            rec.closing = Some(closing);
        }
        CertKind::Init | CertKind::Inited => {}
    }
    Ok(())
}

fn closure_values(m: &ClosureProof, s: &Session) -> Result<Vec<(StateSlot, Value)>, IscError> {
    m.proven_values(&s.produced_slots(m.wrapper.seq))
        .ok_or_else(|| IscError::BadProof("state proofs do not cover the consumed variables".into()))
}

/// Party blamed for a dirty transaction in the given state.
pub fn responsible(w: &crate::compiler::TransactionWrapper, state: TransState) -> Party {
    match state {
        TransState::Unknown => Party::Ves,
        TransState::Init => Party::Client,
        TransState::Inited => w.counterparty(),
        TransState::Open | TransState::Opened | TransState::Closed | TransState::Correct => w.originator(),
    }
}

/// Closed within `deadline_blocks` of the latest predecessor closing, or of
/// activation for roots.
pub fn deadline_verify(tdg: &Tdg, st: &BTreeMap<u32, TxRecord>, seq: u32, activation: u64) -> bool {
    let Some(rec) = st.get(&seq) else { return false };
    if rec.state < TransState::Closed {
        return false;
    }
    let preds = tdg.preds(seq);
    let mut anchor = if preds.is_empty() { activation } else { 0 };
    for p in preds {
        match st.get(&p) {
            Some(r) if r.state >= TransState::Closed => anchor = anchor.max(r.ts_closed),
            _ => return false,
        }
    }
    let w = tdg.wrapper(seq).expect("seq");
    rec.ts_closed >= anchor && rec.ts_closed - anchor <= w.meta.deadline_blocks
}

/// Transactions eligible to open (all predecessors correct) but not correct.
pub fn dirty_trans(tdg: &Tdg, states: &BTreeMap<u32, TransState>) -> BTreeSet<u32> {
    let st = |s: u32| states.get(&s).copied().unwrap_or(TransState::Unknown);
    tdg.wrappers
        .iter()
        .map(|w| w.seq)
        .filter(|&s| st(s) != TransState::Correct && tdg.preds(s).iter().all(|&p| st(p) == TransState::Correct))
        .collect()
}

/// Net payout per party: stake plus reversions owed to it minus reversions
/// it is charged for (as fund recipient). Conserves the staked total; a
/// shortfall is taken from the other party's surplus.
fn net_payouts(
    tdg: &Tdg,
    staked: &BTreeMap<Party, u64>,
    reversions: &[(u32, AccountRef, u64)],
    refund: &BTreeMap<Party, String>,
) -> BTreeMap<Party, u64> {
    let mut net: BTreeMap<Party, i128> =
        [Party::Ves, Party::Client].into_iter().map(|p| (p, staked.get(&p).copied().unwrap_or(0) as i128)).collect();
    for (seq, dst, amt) in reversions {
        let w = tdg.wrapper(*seq).expect("seq");
        let to = dst.owner.or_else(|| refund.iter().find(|(_, a)| **a == dst.address).map(|(p, _)| *p)).unwrap_or(w.originator());
        *net.get_mut(&w.fund_recipient()).expect("party") -= *amt as i128;
        *net.get_mut(&to).expect("party") += *amt as i128;
    }
    let total: i128 = staked.values().map(|v| *v as i128).sum();
    let ves = net[&Party::Ves].clamp(0, total);
    BTreeMap::from([(Party::Ves, ves as u64), (Party::Client, (total - ves) as u64)])
}
