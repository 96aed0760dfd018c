//! The VES and the dApp client: one protocol engine parameterized by role,
//! with an optional Byzantine behaviour table.
//!
//! Each party keeps a local view per transaction and advances it from
//! certificates arriving over the channel or found on the NSB. Every
//! certificate it issues goes over both media, except the closing request,
//! which is channel-only; a missing closed certificate is replaced by the
//! on-chain closing proof once the NSB has attested the transaction.

mod msg;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

pub use msg::{Actor, Msg, Out, View};

use crate::chain::{var_key, OnChainTx, TxStatus};
use crate::compiler::{Party, StateSlot, Tdg, TransactionWrapper};
use crate::crypto::{Digest, KeyRing, SecretKey};
use crate::isc::cert::{
    associate, build_trans, upstream_table, ActionProof, Attestation, CertKind, CertPayload, Certificate, Closing, ClosureProof, TransState,
};
use crate::isc::Phase;
use crate::nsb::{StatusClaim, StatusRecord};
use crate::value::Value;

/// Deviations from the honest protocol.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum Fault {
    /// VES never starts the transaction.
    WithholdInit,
    /// Client ignores the init certificate.
    WithholdInited,
    /// Counterparty never answers the inited certificate.
    WithholdOpen,
    /// Originator neither co-signs the open certificate nor posts.
    WithholdOpened,
    /// Originator sends the opened certificate but never posts.
    SkipPost,
    /// Originator posts `ticks` after opening.
    DelayPost { ticks: u64 },
    /// VES sends an init certificate for its own transaction, then stalls.
    SpuriousInit,
    /// Shift of the timestamp in open certificates and closing requests.
    TsSkew { offset: i64 },
    /// Signs with a key nobody knows.
    WrongKey,
    /// Stops acting at the given tick.
    Crash { at: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaultEntry {
    pub party: Party,
    /// Transaction the fault applies to; every transaction when absent.
    #[serde(default)]
    pub seq: Option<u32>,
    #[serde(flatten)]
    pub fault: Fault,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PartyParams {
    pub delta: u64,
    /// Ticks to wait for a closed certificate before using the NSB.
    pub patience: u64,
    /// Whether the NSB watches chains itself (no closure claims).
    pub watching: bool,
    pub faults: Vec<(Option<u32>, Fault)>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    Init,
    Inited,
    Open,
    Opened,
    ClosingRequest,
    Closed,
}

fn slot_of(c: &Certificate) -> Slot {
    match (c.payload.kind, c.is_dual()) {
        (CertKind::Init, _) => Slot::Init,
        (CertKind::Inited, _) => Slot::Inited,
        (CertKind::Open, false) => Slot::Open,
        (CertKind::Open, true) => Slot::Opened,
        (CertKind::Closed, false) => Slot::ClosingRequest,
        (CertKind::Closed, true) => Slot::Closed,
    }
}

/// A party's view of one transaction.
#[derive(Debug, Clone)]
pub struct Local {
    pub state: TransState,
    pub trans: Option<OnChainTx>,
    pub ts_open: u64,
    pub ts_closed: u64,
    pub closing: Option<Closing>,
    certs: BTreeMap<Slot, Certificate>,
    rejected: BTreeSet<Slot>,
    post_at: Option<u64>,
    posted: bool,
    final_seen: Option<u64>,
    request_sent: bool,
    status_claimed: bool,
    merk_c: Option<ClosureProof>,
}

impl Default for Local {
    fn default() -> Self {
        Local {
            state: TransState::Unknown,
            trans: None,
            ts_open: 0,
            ts_closed: 0,
            closing: None,
            certs: BTreeMap::new(),
            rejected: BTreeSet::new(),
            post_at: None,
            posted: false,
            final_seen: None,
            request_sent: false,
            status_claimed: false,
            merk_c: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
enum Setup {
    Idle,
    Requested,
    Depositing(Digest),
    Notified,
}

/// Ticks between resubmissions of an unaccepted insurance claim.
const CLAIM_RETRY: u64 = 4;
const CLAIM_ATTEMPTS: u32 = 3;

#[derive(Debug, Clone)]
pub struct ProtocolParty {
    pub role: Party,
    params: PartyParams,
    key: SecretKey,
    keys: KeyRing,
    tdg: Tdg,
    refund: String,
    refunds: BTreeMap<Party, String>,
    escrow: String,
    isc_chain: String,
    isc_unit: String,
    pub cid: Option<Digest>,
    setup: Setup,
    pub activated_at: Option<u64>,
    pub local: BTreeMap<u32, Local>,
    seen: BTreeSet<Digest>,
    nsb_cursor: u64,
    claims: BTreeMap<(u32, TransState), (u64, u32)>,
    /// Certificates and requests this party refused, with the reason.
    pub rejections: Vec<String>,
    crashed: bool,
}

impl ProtocolParty {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        role: Party,
        params: PartyParams,
        keys: KeyRing,
        tdg: Tdg,
        refunds: &BTreeMap<Party, String>,
        escrow: &str,
        isc_chain: &str,
        isc_unit: &str,
    ) -> ProtocolParty {
        let honest = keys.secret(role.as_str()).expect("party key issued");
        let key = if params.faults.iter().any(|(_, f)| *f == Fault::WrongKey) {
            SecretKey::derive(b"unregistered", role.as_str())
        } else {
            honest
        };
        ProtocolParty {
            role,
            params,
            key,
            keys,
            local: tdg.wrappers.iter().map(|w| (w.seq, Local::default())).collect(),
            tdg,
            refund: refunds.get(&role).cloned().unwrap_or_default(),
            refunds: refunds.clone(),
            escrow: escrow.to_string(),
            isc_chain: isc_chain.to_string(),
            isc_unit: isc_unit.to_string(),
            cid: None,
            setup: Setup::Idle,
            activated_at: None,
            seen: BTreeSet::new(),
            nsb_cursor: 0,
            claims: BTreeMap::new(),
            rejections: Vec::new(),
            crashed: false,
        }
    }

    pub fn tdg(&self) -> &Tdg {
        &self.tdg
    }

    pub fn crashed(&self) -> bool {
        self.crashed
    }

    fn fault(&self, seq: u32, pick: impl Fn(&Fault) -> bool) -> Option<&Fault> {
        self.params.faults.iter().find(|(s, f)| s.is_none_or(|s| s == seq) && pick(f)).map(|(_, f)| f)
    }

    fn has(&self, seq: u32, f: Fault) -> bool {
        self.fault(seq, |g| *g == f).is_some()
    }

    fn skew(&self, seq: u32) -> i64 {
        match self.fault(seq, |f| matches!(f, Fault::TsSkew { .. })) {
            Some(Fault::TsSkew { offset }) => *offset,
            _ => 0,
        }
    }

    fn ts_now(&self, seq: u32, view: &View) -> u64 {
        view.nsb.height().saturating_add_signed(self.skew(seq))
    }

    fn reject(&mut self, tick: u64, seq: u32, what: &str, why: impl std::fmt::Display) {
        self.rejections.push(format!("t={tick} {} rejects {what} for T{seq}: {why}", self.role));
    }

    pub fn on_message(&mut self, from: &Actor, msg: Msg, view: &View) -> Vec<Out> {
        if self.crashed {
            return Vec::new();
        }
        match (from, msg) {
            (Actor::Isc, Msg::Created { cid }) if self.role == Party::Ves && self.cid.is_none() => self.cid = Some(cid),
            (Actor::Party(p), Msg::Cert(c)) if *p != self.role => self.ingest(c, view.tick),
            _ => {}
        }
        Vec::new()
    }

    /// Verifies and files a certificate; reactions happen on the next tick.
    fn ingest(&mut self, c: Certificate, tick: u64) {
        let key = c.key();
        if !self.seen.insert(key) {
            return;
        }
        let seq = c.payload.wrapper.seq;
        let known = self.tdg.wrapper(seq).is_some_and(|w| *w == c.payload.wrapper);
        if Some(c.payload.sid) != self.cid || !known || c.payload.tid != c.payload.wrapper.tid() {
            return;
        }
        if !c.verify(&self.keys) {
            self.reject(tick, seq, c.short_name(), "bad signature");
            return;
        }
        let slot = slot_of(&c);
        let l = self.local.get_mut(&seq).expect("seq");
        l.certs.entry(slot).or_insert(c);
    }

    pub fn on_tick(&mut self, view: &View) -> Vec<Out> {
        let crash = self.params.faults.iter().any(|(_, f)| matches!(f, Fault::Crash { at } if view.tick >= *at));
        if self.crashed || crash {
            self.crashed = true;
            return Vec::new();
        }
        let mut out = Vec::new();
        self.setup(view, &mut out);
        if self.activated_at.is_none() {
            return out;
        }
        if self.session_phase(view) != Some(Phase::Active) {
            return out;
        }
        self.scan_nsb(view);
        for _ in 0..4 {
            let before = out.len();
            let states: Vec<TransState> = self.local.values().map(|l| l.state).collect();
            for seq in 1..=self.tdg.len() as u32 {
                self.progress(seq, view, &mut out);
            }
            if out.len() == before && states == self.local.values().map(|l| l.state).collect::<Vec<_>>() {
                break;
            }
        }
        self.claim(view, &mut out);
        out
    }

    fn session_phase(&self, view: &View) -> Option<Phase> {
        self.cid.and_then(|c| view.isc.session(&c)).map(|s| s.phase)
    }

    fn setup(&mut self, view: &View, out: &mut Vec<Out>) {
        if self.role == Party::Ves && self.setup == Setup::Idle && self.cid.is_none() {
            out.push(Out { to: Actor::Isc, msg: Msg::Create { tdg: Box::new(self.tdg.clone()), refund: self.refunds.clone() } });
            self.setup = Setup::Requested;
            return;
        }
        if self.role == Party::Client && self.cid.is_none() {
            // The client discovers the session by reading the contract and
            // accepts it only for the graph it compiled itself.
            self.cid = view
                .isc
                .sessions()
                .find(|s| s.phase == Phase::Staking && s.tdg == self.tdg && s.refund.get(&self.role) == Some(&self.refund))
                .map(|s| s.cid);
        }
        let Some(cid) = self.cid else { return };
        let Some(session) = view.isc.session(&cid) else { return };
        match self.setup.clone() {
            Setup::Idle | Setup::Requested => {
                let need = session.required.get(&self.role).copied().unwrap_or(0);
                if need == 0 {
                    out.push(Out { to: Actor::Isc, msg: Msg::Deposit { cid, tx: None } });
                    self.setup = Setup::Notified;
                } else if let Some(chain) = view.chains.get(&self.isc_chain) {
                    let nonce = chain.state().nonces.get(&self.refund).copied().unwrap_or(0)
                        + chain.pending().iter().filter(|t| t.from == self.refund).count() as u64;
                    let tx = OnChainTx::signed(
                        &self.isc_chain,
                        &self.refund,
                        &self.escrow,
                        need,
                        &self.isc_unit,
                        None,
                        nonce,
                        self.role.as_str(),
                        &self.key,
                    );
                    self.setup = Setup::Depositing(tx.digest());
                    out.push(Out { to: Actor::Chain(self.isc_chain.clone()), msg: Msg::Exec(tx) });
                }
            }
            Setup::Depositing(tx) => {
                let status = view.chains.get(&self.isc_chain).map(|c| c.query_status(&tx));
                if matches!(status, Some(TxStatus::Finalized { ok: true, .. })) {
                    out.push(Out { to: Actor::Isc, msg: Msg::Deposit { cid, tx: Some(tx) } });
                    self.setup = Setup::Notified;
                }
            }
            Setup::Notified => {
                if session.phase == Phase::Active {
                    self.activated_at = session.activated_at;
                }
            }
        }
    }

    fn scan_nsb(&mut self, view: &View) {
        let top = view.nsb.height();
        while self.nsb_cursor <= top {
            let block = view.nsb.block(self.nsb_cursor).expect("height in range");
            for c in block.actions.clone() {
                self.ingest(c, view.tick);
            }
            self.nsb_cursor += 1;
        }
    }

    fn upstream(&self) -> BTreeMap<u32, Vec<(StateSlot, Value)>> {
        self.local.iter().filter_map(|(s, l)| l.closing.as_ref().map(|c| (*s, c.values.clone()))).collect()
    }

    fn eligible(&self, seq: u32) -> bool {
        self.tdg.preds(seq).iter().all(|p| self.local[p].state >= TransState::Closed && self.local[p].closing.is_some())
    }

    fn produced_slots(&self, seq: u32) -> Vec<StateSlot> {
        self.tdg
            .state_producers()
            .get(&seq)
            .map(|vars| vars.iter().map(|(c, v)| StateSlot { seq, contract: c.clone(), var: v.clone() }).collect())
            .unwrap_or_default()
    }

    fn payload(&self, w: &TransactionWrapper, kind: CertKind, trans: Option<OnChainTx>, ts: u64, closing: Option<Closing>) -> CertPayload {
        CertPayload { sid: self.cid.expect("active"), tid: w.tid(), kind, wrapper: w.clone(), trans, ts, closing }
    }

    /// Sends over the channel and, unless `channel_only`, stakes on the NSB.
    fn issue(&mut self, seq: u32, c: Certificate, channel_only: bool, out: &mut Vec<Out>) {
        self.seen.insert(c.key());
        out.push(Out { to: Actor::Party(self.role.other()), msg: Msg::Cert(c.clone()) });
        if !channel_only {
            out.push(Out { to: Actor::Nsb, msg: Msg::AddAction(c.clone()) });
        }
        let slot = slot_of(&c);
        self.local.get_mut(&seq).expect("seq").certs.insert(slot, c);
    }

    fn build(&self, w: &TransactionWrapper) -> Result<OnChainTx, String> {
        let up = self.upstream();
        let table = upstream_table(&up);
        build_trans(w, &table, &self.key)
    }

    fn associated(&self, w: &TransactionWrapper, t: &OnChainTx) -> Result<(), String> {
        let up = self.upstream();
        let table = upstream_table(&up);
        associate(w, t, &table, &self.keys)
    }

    fn closing_from_chain(&self, seq: u32, view: &View, chain: &str, height: u64) -> Closing {
        let c = &view.chains[chain];
        let values =
            self.produced_slots(seq).into_iter().filter_map(|s| c.var_at(height, &s.contract, &s.var).cloned().map(|v| (s, v))).collect();
        Closing { height, values }
    }

    fn finalized(view: &View, t: &OnChainTx) -> Option<u64> {
        match view.chains.get(&t.chain)?.query_status(&t.digest()) {
            TxStatus::Finalized { height, ok: true } => Some(height),
            _ => None,
        }
    }

    fn progress(&mut self, seq: u32, view: &View, out: &mut Vec<Out>) {
        let w = self.tdg.wrapper(seq).expect("seq").clone();
        let (me, o, c) = (self.role, w.originator(), w.counterparty());
        let tick = view.tick;
        let eligible = self.eligible(seq);
        let st = self.local[&seq].state;

        // Start the transaction.
        if me == Party::Ves && st == TransState::Unknown && eligible && !self.has(seq, Fault::WithholdInit) {
            if o == Party::Client || self.has(seq, Fault::SpuriousInit) {
                let cert = Certificate::signed(self.payload(&w, CertKind::Init, None, 0, None), me, &self.key);
                self.issue(seq, cert, false, out);
                self.local.get_mut(&seq).unwrap().state = TransState::Init;
                return;
            }
            match self.build(&w) {
                Ok(t) => {
                    let cert = Certificate::signed(self.payload(&w, CertKind::Inited, Some(t.clone()), 0, None), me, &self.key);
                    self.issue(seq, cert, false, out);
                    let l = self.local.get_mut(&seq).unwrap();
                    l.trans = Some(t);
                    l.state = TransState::Inited;
                }
                Err(e) => self.reject(tick, seq, "own transaction", e),
            }
            return;
        }

        // Client answers an init certificate with the computed transaction.
        if me == Party::Client && st <= TransState::Init && self.take_valid(seq, Slot::Init, tick, |c| c.sole_signer() == Some(Party::Ves))
        {
            if o != Party::Client {
                self.drop_slot(seq, Slot::Init, tick, "Cert^i", "init for a VES-originated transaction");
                return;
            }
            self.local.get_mut(&seq).unwrap().state = TransState::Init;
            if eligible && !self.has(seq, Fault::WithholdInited) {
                match self.build(&w) {
                    Ok(t) => {
                        let cert = Certificate::signed(self.payload(&w, CertKind::Inited, Some(t.clone()), 0, None), me, &self.key);
                        self.issue(seq, cert, false, out);
                        let l = self.local.get_mut(&seq).unwrap();
                        l.trans = Some(t);
                        l.state = TransState::Inited;
                    }
                    Err(e) => self.reject(tick, seq, "own transaction", e),
                }
            }
            return;
        }

        // Counterparty answers an inited certificate with a timestamped open.
        if me == c && st < TransState::Open && eligible && self.take_valid(seq, Slot::Inited, tick, |x| x.sole_signer() == Some(o)) {
            let cert = self.local[&seq].certs[&Slot::Inited].clone();
            let t = cert.payload.trans.clone().expect("inited carries the transaction");
            if let Err(e) = self.associated(&w, &t) {
                self.drop_slot(seq, Slot::Inited, tick, "Cert^id", e);
                return;
            }
            let l = self.local.get_mut(&seq).unwrap();
            l.trans = Some(t.clone());
            l.state = l.state.max(TransState::Inited);
            if !self.has(seq, Fault::WithholdOpen) {
                let ts = self.ts_now(seq, view);
                let open = Certificate::signed(self.payload(&w, CertKind::Open, Some(t), ts, None), me, &self.key);
                self.issue(seq, open, false, out);
                let l = self.local.get_mut(&seq).unwrap();
                l.state = TransState::Open;
                l.ts_open = ts;
            }
            return;
        }

        // Originator checks the open certificate, co-signs and posts.
        if me == o
            && (TransState::Inited..TransState::Opened).contains(&st)
            && self.take_valid(seq, Slot::Open, tick, |x| x.sole_signer() == Some(c))
        {
            let cert = self.local[&seq].certs[&Slot::Open].clone();
            if cert.payload.trans != self.local[&seq].trans {
                self.drop_slot(seq, Slot::Open, tick, "Cert^o", "transaction differs from the one initiated");
                return;
            }
            let now = view.nsb.height();
            if cert.payload.ts.abs_diff(now) > self.params.delta {
                self.drop_slot(seq, Slot::Open, tick, "Cert^o", format!("ts_open {} outside {now}±{}", cert.payload.ts, self.params.delta));
                return;
            }
            let l = self.local.get_mut(&seq).unwrap();
            l.state = TransState::Open;
            l.ts_open = cert.payload.ts;
            if self.has(seq, Fault::WithholdOpened) {
                return;
            }
            let od = cert.cosign(me, &self.key);
            self.issue(seq, od, false, out);
            let delay = match self.fault(seq, |f| matches!(f, Fault::DelayPost { .. } | Fault::SkipPost)) {
                Some(Fault::DelayPost { ticks }) => Some(*ticks),
                Some(_) => None,
                None => Some(0),
            };
            let l = self.local.get_mut(&seq).unwrap();
            l.state = TransState::Opened;
            l.post_at = delay.map(|d| tick + d);
        }

        let l = &self.local[&seq];
        if me == o && l.state == TransState::Opened && !l.posted && l.post_at.is_some_and(|at| tick >= at) {
            let t = l.trans.clone().expect("opened has the transaction");
            out.push(Out { to: Actor::Chain(t.chain.clone()), msg: Msg::Exec(t) });
            self.local.get_mut(&seq).unwrap().posted = true;
        }

        // Counterparty learns the opened certificate.
        if me == c && self.local[&seq].state < TransState::Opened && self.take_valid(seq, Slot::Opened, tick, |x| x.is_dual()) {
            let cert = self.local[&seq].certs[&Slot::Opened].clone();
            if self.local[&seq].trans.is_some() && cert.payload.trans != self.local[&seq].trans {
                self.drop_slot(seq, Slot::Opened, tick, "Cert^od", "transaction differs");
                return;
            }
            let l = self.local.get_mut(&seq).unwrap();
            l.trans = cert.payload.trans.clone();
            l.state = TransState::Opened;
            l.ts_open = cert.payload.ts;
        }

        // Either side accepts a dual-signed closed certificate.
        if self.local[&seq].state < TransState::Closed && self.take_valid(seq, Slot::Closed, tick, |x| x.is_dual()) {
            let cert = self.local[&seq].certs[&Slot::Closed].clone();
            if cert.payload.trans.is_some() && cert.payload.trans == self.local[&seq].trans {
                let l = self.local.get_mut(&seq).unwrap();
                l.state = TransState::Closed;
                l.ts_closed = cert.payload.ts;
                l.closing = cert.payload.closing.clone();
                return;
            }
        }

        let l = &self.local[&seq];
        if l.state != TransState::Opened {
            return;
        }
        let t = l.trans.clone().expect("opened has the transaction");
        let Some(height) = Self::finalized(view, &t) else { return };
        if l.final_seen.is_none() {
            self.local.get_mut(&seq).unwrap().final_seen = Some(tick);
        }

        // Originator announces finality.
        if me == o && !self.local[&seq].request_sent {
            let closing = self.closing_from_chain(seq, view, &t.chain, height);
            let ts = self.ts_now(seq, view);
            let req = Certificate::signed(self.payload(&w, CertKind::Closed, Some(t.clone()), ts, Some(closing)), me, &self.key);
            self.issue(seq, req, true, out);
            self.local.get_mut(&seq).unwrap().request_sent = true;
            self.claim_status(seq, &w, &t, height, view, out);
        }

        // Counterparty confirms finality itself and co-signs.
        if me == c && self.take_valid(seq, Slot::ClosingRequest, tick, |x| x.sole_signer() == Some(o)) {
            let req = self.local[&seq].certs[&Slot::ClosingRequest].clone();
            let now = view.nsb.height();
            let expect = self.closing_from_chain(seq, view, &t.chain, height);
            let problem = if req.payload.trans.as_ref() != Some(&t) {
                Some("transaction differs".to_string())
            } else if req.payload.closing.as_ref() != Some(&expect) {
                Some("post-state does not match the chain".to_string())
            } else if req.payload.ts.abs_diff(now) > self.params.delta {
                Some(format!("ts_closed {} outside {now}±{}", req.payload.ts, self.params.delta))
            } else if req.payload.ts < self.local[&seq].ts_open {
                Some("ts_closed precedes ts_open".to_string())
            } else {
                None
            };
            if let Some(p) = problem {
                self.drop_slot(seq, Slot::ClosingRequest, tick, "C_closed", p);
            } else {
                let cc = req.cosign(me, &self.key);
                self.issue(seq, cc, false, out);
                let l = self.local.get_mut(&seq).unwrap();
                l.state = TransState::Closed;
                l.ts_closed = req.payload.ts;
                l.closing = Some(expect);
                return;
            }
        }

        // No closed certificate in time: assemble the on-chain proof.
        let waited = tick - self.local[&seq].final_seen.unwrap_or(tick);
        if waited >= self.params.patience {
            // The originator may have vanished before claiming.
            self.claim_status(seq, &w, &t, height, view, out);
            if let Some(proof) = self.closure_proof(seq, &w, &t, height, view) {
                let values = proof.proven_values(&self.produced_slots(seq)).unwrap_or_default();
                let l = self.local.get_mut(&seq).unwrap();
                l.state = TransState::Closed;
                l.ts_closed = proof.nsb_height;
                l.closing = Some(Closing { height, values });
                l.merk_c = Some(proof);
            }
        }
    }

    fn claim_status(&mut self, seq: u32, w: &TransactionWrapper, t: &OnChainTx, height: u64, view: &View, out: &mut Vec<Out>) {
        if self.params.watching || self.local[&seq].status_claimed {
            return;
        }
        let hd = &view.chains[&t.chain].block(height).expect("finalized block").header;
        let record = StatusRecord { chain: t.chain.clone(), height, tx_root: hd.tx_root, state_root: hd.state_root };
        out.push(Out { to: Actor::Nsb, msg: Msg::ClosureClaim(StatusClaim { tx: t.digest(), record, tid: Some(w.tid()) }) });
        self.local.get_mut(&seq).unwrap().status_claimed = true;
    }

    fn closure_proof(&self, seq: u32, w: &TransactionWrapper, t: &OnChainTx, height: u64, view: &View) -> Option<ClosureProof> {
        let (nsb_height, record, status) = view.nsb.status_for_tx(&t.chain, &t.digest(), height)?;
        let chain = &view.chains[&t.chain];
        let (_, tx_proof) = chain.tx_proof(&t.digest()).ok()?;
        let state_proofs = self
            .produced_slots(seq)
            .iter()
            .map(|s| chain.state_proof(height, &var_key(&s.contract, &s.var)).ok())
            .collect::<Option<Vec<_>>>()?;
        Some(ClosureProof { sid: self.cid?, wrapper: w.clone(), trans: t.clone(), tx_proof, state_proofs, record, status, nsb_height })
    }

    /// True when a certificate sits in `slot`, passes `ok` and was not
    /// refused before.
    fn take_valid(&mut self, seq: u32, slot: Slot, tick: u64, ok: impl Fn(&Certificate) -> bool) -> bool {
        let l = &self.local[&seq];
        if l.rejected.contains(&slot) {
            return false;
        }
        match l.certs.get(&slot) {
            Some(c) if ok(c) => true,
            Some(c) => {
                let name = c.short_name();
                self.drop_slot(seq, slot, tick, name, "wrong signer");
                false
            }
            None => false,
        }
    }

    fn drop_slot(&mut self, seq: u32, slot: Slot, tick: u64, what: &str, why: impl std::fmt::Display) {
        self.reject(tick, seq, what, why);
        let l = self.local.get_mut(&seq).expect("seq");
        l.certs.remove(&slot);
        l.rejected.insert(slot);
    }

    /// Highest-ranked attestation this party can present for `seq`.
    fn best_attestation(&self, seq: u32, view: &View) -> Option<Attestation> {
        let l = &self.local[&seq];
        if let Some(c) = l.certs.get(&Slot::Closed) {
            return Some(Attestation::Cert(c.clone()));
        }
        if let Some(m) = &l.merk_c {
            return Some(Attestation::Closure(m.clone()));
        }
        if let Some(c) = l.certs.get(&Slot::Opened) {
            return Some(Attestation::Cert(c.clone()));
        }
        for slot in [Slot::Open, Slot::Inited, Slot::Init] {
            if let Some(c) = l.certs.get(&slot) {
                if let Ok((nsb_height, proof)) = view.nsb.action_proof(&c.key()) {
                    return Some(Attestation::Action(ActionProof { cert: c.clone(), nsb_height, proof }));
                }
            }
        }
        None
    }

    fn claim(&mut self, view: &View, out: &mut Vec<Out>) {
        let Some(cid) = self.cid else { return };
        let Some(session) = view.isc.session(&cid) else { return };
        for seq in 1..=self.tdg.len() as u32 {
            let Some(atte) = self.best_attestation(seq, view) else { continue };
            let Some(state) = atte.state() else { continue };
            if state <= session.state(seq) {
                continue;
            }
            let entry = self.claims.entry((seq, state)).or_insert((0, 0));
            if entry.1 >= CLAIM_ATTEMPTS || (entry.1 > 0 && view.tick < entry.0 + CLAIM_RETRY) {
                continue;
            }
            *entry = (view.tick, entry.1 + 1);
            out.push(Out { to: Actor::Isc, msg: Msg::Claim { cid, atte: Box::new(atte) } });
        }
    }
}

#[cfg(test)]
mod tests;
