//! Wires chains, the NSB, the ISC and both parties onto one event bus and
//! runs a scenario to settlement.
//!
//! Each tick fires, in order: message deliveries, chain blocks, the NSB
//! epoch (every `nsb_interval` ticks) followed by the ISC timer, then the
//! VES and the client. The ISC is co-located with its host chain: it reads
//! the chains and the NSB directly and posts payouts from the escrow.

use std::collections::{BTreeMap, BTreeSet};

use anyhow::{anyhow, Result};
use rand::Rng;

use super::app::App;
use super::report::{self, AtomicityInput, Reversion, RunReport, TidReport};
use super::scenario::Scenario;
use crate::chain::{Chain, ChainState, OnChainTx, TxStatus};
use crate::compiler::Party;
use crate::crypto::{sha256, Digest, KeyRing, SecretKey};
use crate::isc::cert::TransState;
use crate::isc::{Isc, IscConfig, IscError, Phase};
use crate::netsim::{EventKind, Net};
use crate::nsb::{claim_key, peer_principal, Nsb, NsbConfig, QuorumConfig, StatusClaim, StatusRecord};
use crate::parties::{Actor, Msg, Out, PartyParams, ProtocolParty, View};

const CHAINS: u8 = 1;
const NSB: u8 = 2;
const ISC: u8 = 3;
const VES: u8 = 4;
const CLIENT: u8 = 5;

pub struct World {
    pub scenario: Scenario,
    pub app: App,
    pub chains: BTreeMap<String, Chain>,
    pub nsb: Nsb,
    pub isc: Isc,
    pub parties: BTreeMap<Party, ProtocolParty>,
    pub net: Net<Msg>,
    isc_key: SecretKey,
    initial: BTreeMap<String, ChainState>,
    payouts: Vec<(String, Digest)>,
    /// ISC and chain decisions, one line each.
    pub log: Vec<String>,
    unsound: u64,
    tick: u64,
}

/// Key material is fixed per scenario name so runs replay exactly.
fn keyring(scenario: &Scenario) -> KeyRing {
    let peers: Vec<String> = (0..scenario.nsb.n).map(peer_principal).collect();
    let names = ["ves", "client", "isc"].into_iter().chain(peers.iter().map(String::as_str));
    KeyRing::issue(scenario.name.as_bytes(), names)
}

impl World {
    pub fn new(scenario: Scenario, app: App) -> Result<World> {
        scenario.validate(&app.tdg)?;
        let keys = keyring(&scenario);
        let chains = app
            .genesis
            .iter()
            .map(|g| Ok((g.id.clone(), Chain::new(g, keys.clone()).map_err(|e| anyhow!("{}: {e}", g.id))?)))
            .collect::<Result<BTreeMap<_, _>>>()?;
        let t = &scenario.timers;
        let mut nsb = Nsb::new(
            NsbConfig {
                quorum: QuorumConfig { n: scenario.nsb.n, k: scenario.nsb.k, byzantine: scenario.nsb.byzantine.clone() },
                capacity: scenario.nsb.capacity,
                watching: scenario.nsb.watching,
                ..NsbConfig::default()
            },
            keys.clone(),
        );
        if scenario.nsb.watching {
            for w in &app.tdg.wrappers {
                nsb.watch(&w.meta.chain, &w.from.address);
                nsb.watch(&w.meta.chain, &w.to.address);
            }
        }
        let cfg = &app.config;
        let isc = Isc::new(
            IscConfig { delta: t.delta, timeout: t.isc_timeout, setup_timeout: t.setup_timeout, enumeration_cap: cfg.enumeration_cap },
            keys.clone(),
            &app.escrow,
            &cfg.isc_unit,
        );
        let parties = [Party::Ves, Party::Client]
            .into_iter()
            .map(|p| {
                let params = PartyParams {
                    delta: t.delta,
                    patience: t.patience,
                    watching: scenario.nsb.watching,
                    faults: scenario.faults.iter().filter(|f| f.party == p).map(|f| (f.seq, f.fault.clone())).collect(),
                };
                let party =
                    ProtocolParty::new(p, params, keys.clone(), app.tdg.clone(), &cfg.refund, &app.escrow, &cfg.isc_chain, &cfg.isc_unit);
                (p, party)
            })
            .collect();
        let mut net = Net::new(scenario.seed, t.message_delay, scenario.links.clone());
        for (class, first) in [(CHAINS, 1), (NSB, t.nsb_interval), (ISC, t.nsb_interval), (VES, 1), (CLIENT, 1)] {
            net.schedule(first, class, tag(class));
        }
        let initial = chains.iter().map(|(id, c)| (id.clone(), c.state().clone())).collect();
        Ok(World {
            isc_key: keys.secret("isc").expect("issued"),
            scenario,
            app,
            chains,
            nsb,
            isc,
            parties,
            net,
            initial,
            payouts: Vec::new(),
            log: Vec::new(),
            unsound: 0,
            tick: 0,
        })
    }

    pub fn run(mut self) -> (RunReport, World) {
        let max = self.scenario.max_ticks();
        while let Some(ev) = self.net.pop() {
            if ev.time > max {
                break;
            }
            self.tick = ev.time;
            match ev.kind {
                EventKind::Deliver { from, to, msg, .. } => self.deliver(&from, &to, msg),
                EventKind::Timer { .. } => {
                    self.fire(ev.class);
                    if ev.class == CLIENT && self.finished() {
                        break;
                    }
                }
            }
        }
        (self.report(), self)
    }

    fn fire(&mut self, class: u8) {
        let t = self.tick;
        let interval = self.scenario.timers.nsb_interval;
        match class {
            CHAINS => {
                for c in self.chains.values_mut() {
                    c.advance_epoch();
                }
                self.net.schedule(t + 1, CHAINS, tag(CHAINS));
            }
            NSB => {
                if self.scenario.nsb.false_claims {
                    self.inject_false_claims();
                }
                let block = self.nsb.advance_epoch(&self.chains);
                let entries = block.status.clone();
                for (key, record) in entries {
                    if !sound(&self.chains, &key, &record) {
                        self.unsound += 1;
                        self.log.push(format!("t={t} nsb committed unsound status for {} at {}", record.chain, record.height));
                    }
                }
                self.net.schedule(t + interval, NSB, tag(NSB));
            }
            ISC => {
                let h = self.nsb.height();
                for cid in self.isc.tick(h) {
                    self.pay_out(&cid);
                }
                self.net.schedule(t + interval, ISC, tag(ISC));
            }
            VES | CLIENT => {
                let p = if class == VES { Party::Ves } else { Party::Client };
                let view = View { tick: t, chains: &self.chains, nsb: &self.nsb, isc: &self.isc };
                let outs = self.parties.get_mut(&p).expect("party").on_tick(&view);
                self.send_all(&Actor::Party(p), outs);
                self.net.schedule(t + 1, class, tag(class));
            }
            _ => unreachable!("unknown timer class"),
        }
    }

    fn send_all(&mut self, from: &Actor, outs: Vec<Out>) {
        let from = from.to_string();
        for o in outs {
            let digest = o.msg.digest();
            self.net.send(&from, &o.to.to_string(), o.msg, digest);
        }
    }

    fn deliver(&mut self, from: &str, to: &str, msg: Msg) {
        let t = self.tick;
        let (Some(src), Some(dst)) = (Actor::parse(from), Actor::parse(to)) else { return };
        match dst {
            Actor::Party(p) => {
                let view = View { tick: t, chains: &self.chains, nsb: &self.nsb, isc: &self.isc };
                let outs = self.parties.get_mut(&p).expect("party").on_message(&src, msg, &view);
                self.send_all(&dst, outs);
            }
            Actor::Chain(c) => {
                if let (Msg::Exec(tx), Some(chain)) = (msg, self.chains.get_mut(&c)) {
                    if let Err(e) = chain.exec(tx) {
                        self.log.push(format!("t={t} chain:{c} rejects a transaction from {src}: {e}"));
                    }
                }
            }
            Actor::Nsb => match msg {
                Msg::AddAction(cert) => {
                    if let Err(e) = self.nsb.add_action(cert) {
                        self.log.push(format!("t={t} nsb rejects an action from {src}: {e}"));
                    }
                }
                Msg::ClosureClaim(claim) => self.nsb.closure_claim(claim),
                _ => {}
            },
            Actor::Isc => self.isc_message(&src, msg),
        }
    }

    fn isc_message(&mut self, src: &Actor, msg: Msg) {
        let t = self.tick;
        let h = self.nsb.height();
        let Actor::Party(p) = *src else { return };
        match msg {
            Msg::Create { tdg, refund } if p == Party::Ves => match self.isc.create_contract(*tdg, refund, h) {
                Ok(cid) => {
                    self.log.push(format!("t={t} isc creates session {}", cid.short()));
                    let m = Msg::Created { cid };
                    let d = m.digest();
                    self.net.send("isc", "ves", m, d);
                }
                Err(e) => self.log.push(format!("t={t} isc refuses session: {e}")),
            },
            Msg::Deposit { cid, tx } => {
                let r = match tx {
                    Some(tx) => self.isc.stake_fund_onchain(&cid, p, &tx, &self.chains[&self.app.config.isc_chain], h),
                    None => self.isc.stake_fund(&cid, p, 0, h),
                };
                match r {
                    Ok(()) => self.log.push(format!("t={t} isc credits stake from {p}")),
                    Err(e) => self.log.push(format!("t={t} isc rejects stake from {p}: {e}")),
                }
            }
            Msg::Claim { cid, atte } => {
                let seq = atte.wrapper().seq;
                match self.isc.insurance_claim(&cid, &atte, &self.nsb) {
                    Ok(st) => self.log.push(format!("t={t} isc accepts {} for T{seq} from {p}: {st}", atte.label())),
                    Err(e @ IscError::Stale { .. }) => {
                        self.log.push(format!("t={t} isc ignores {} for T{seq} from {p}: {e}", atte.label()))
                    }
                    Err(e) => self.log.push(format!("t={t} isc rejects {} for T{seq} from {p}: {e}", atte.label())),
                }
            }
            _ => {}
        }
    }

    /// Posts the settlement payouts from the escrow to the refund accounts.
    fn pay_out(&mut self, cid: &Digest) {
        let t = self.tick;
        let Some(s) = self.isc.session(cid) else { return };
        let Some(settlement) = &s.settlement else { return };
        let cfg = &self.app.config;
        let chain = self.chains.get_mut(&cfg.isc_chain).expect("isc chain");
        self.log.push(format!("t={t} isc settles session {} ({:?})", cid.short(), s.phase));
        for (p, v) in &settlement.payouts {
            if *v == 0 {
                continue;
            }
            let to = s.refund.get(p).cloned().unwrap_or_default();
            let nonce = chain.state().nonces.get(&self.app.escrow).copied().unwrap_or(0)
                + chain.pending().iter().filter(|x| x.from == self.app.escrow).count() as u64;
            let tx = OnChainTx::signed(&cfg.isc_chain, &self.app.escrow, &to, *v, &cfg.isc_unit, None, nonce, "isc", &self.isc_key);
            match chain.exec(tx) {
                Ok(d) => self.payouts.push((cfg.isc_chain.clone(), d)),
                Err(e) => self.log.push(format!("t={t} payout to {p} rejected: {e}")),
            }
        }
    }

    fn session_phase(&self) -> Option<Phase> {
        self.isc.sessions().next().map(|s| s.phase)
    }

    fn payouts_final(&self) -> bool {
        self.payouts.iter().all(|(c, d)| matches!(self.chains[c].query_status(d), TxStatus::Finalized { ok: true, .. }))
    }

    fn finished(&self) -> bool {
        matches!(self.session_phase(), Some(Phase::Settled | Phase::Aborted)) && self.payouts_final()
    }

    /// Forged and premature status claims, as a dishonest NSB peer would
    /// propose them.
    fn inject_false_claims(&mut self) {
        let ids: Vec<String> = self.chains.keys().cloned().collect();
        let id = ids[self.net.rng().gen_range(0..ids.len())].clone();
        let chain = &self.chains[&id];
        let top = chain.block_height();
        let forged = Digest(self.net.rng().gen());
        let mut claims = vec![StatusClaim {
            tx: forged,
            record: StatusRecord { chain: id.clone(), height: top, tx_root: forged, state_root: forged },
            tid: None,
        }];
        // A transaction still in the pool, claimed at the next height.
        if let Some(tx) = chain.pending().first() {
            claims.push(StatusClaim {
                tx: tx.digest(),
                record: StatusRecord { chain: id.clone(), height: top + 1, tx_root: sha256(b"guess"), state_root: sha256(b"guess") },
                tid: None,
            });
        }
        // Included but not yet final, with the real roots.
        if let Some(b) = chain.block(top).filter(|_| chain.confirm_depth() > 0) {
            if let Some((tx, _)) = b.txs.first() {
                let record = StatusRecord { chain: id.clone(), height: top, tx_root: b.header.tx_root, state_root: b.header.state_root };
                claims.push(StatusClaim { tx: tx.digest(), record, tid: None });
            }
        }
        for c in claims {
            self.nsb.closure_claim(c);
        }
    }

    /// On-chain transactions of the session that executed successfully.
    fn executed(&self) -> BTreeSet<u32> {
        let mut out = BTreeSet::new();
        for w in &self.app.tdg.wrappers {
            let Some(chain) = self.chains.get(&w.meta.chain) else { continue };
            let hit = chain
                .blocks()
                .iter()
                .flat_map(|b| &b.txs)
                .any(|(t, r)| r.ok && t.from == w.from.address && t.to == w.to.address && t.nonce == w.meta.nonce);
            if hit {
                out.insert(w.seq);
            }
        }
        out
    }

    pub fn report(&self) -> RunReport {
        let tdg = &self.app.tdg;
        let session = self.isc.sessions().next();
        let settlement = session.and_then(|s| s.settlement.as_ref());
        let outcome = match (session.map(|s| s.phase), settlement) {
            (Some(Phase::Settled), Some(s)) if s.succeeded() => "committed",
            (Some(Phase::Settled), _) => "reverted",
            (Some(Phase::Aborted), _) => "aborted",
            _ => "unsettled",
        };
        let state = |seq: u32| -> TransState {
            match (settlement, session) {
                (Some(st), _) => st.states.get(&seq).copied().unwrap_or(TransState::Unknown),
                (None, Some(s)) => s.state(seq),
                _ => TransState::Unknown,
            }
        };
        let tids = tdg
            .wrappers
            .iter()
            .map(|w| {
                let tid = w.tid();
                let r = TidReport { tid: tid.to_hex(), state: state(w.seq).to_string(), nsb_txs: self.nsb.submissions(&tid) };
                (w.name(), r)
            })
            .collect();
        let owners = report::owners(&self.chains);
        let now: BTreeMap<String, ChainState> = self.chains.iter().map(|(id, c)| (id.clone(), c.state().clone())).collect();
        let before = report::holdings(&self.initial, &owners);
        let after = report::holdings(&now, &owners);
        let cfg = &self.app.config;
        let escrow_bal =
            |m: &BTreeMap<String, ChainState>| m.get(&cfg.isc_chain).map(|s| s.balance(&self.app.escrow, &cfg.isc_unit)).unwrap_or(0);
        let executed = self.executed();
        let atomicity = report::atomicity(&AtomicityInput {
            tdg,
            config: cfg,
            settlement,
            before: &before,
            after: &after,
            escrow: (escrow_bal(&self.initial), escrow_bal(&now)),
            payouts_final: self.payouts_final(),
            executed: &executed,
        });
        let by_party = |m: &BTreeMap<Party, u64>| m.iter().map(|(p, v)| (p.to_string(), *v)).collect();
        let mut rejections: Vec<String> = self.parties.values().flat_map(|p| p.rejections.iter().cloned()).collect();
        rejections.extend(self.log.iter().filter(|l| l.contains(" rejects ")).cloned());
        let (delivered, dropped) = self.net.counts();
        let mut r = RunReport {
            scenario: self.scenario.name.clone(),
            seed: self.scenario.seed,
            outcome: outcome.to_string(),
            ticks: self.tick,
            nsb_height: self.nsb.height(),
            activated_at: session.and_then(|s| s.activated_at),
            tids,
            resp: settlement.map(|s| s.resp.iter().map(|(k, p)| (format!("T{k}"), p.to_string())).collect()).unwrap_or_default(),
            reversions: settlement
                .map(|s| s.reversions.iter().map(|(k, d, a)| Reversion { tx: format!("T{k}"), dst: d.address.clone(), amt: *a }).collect())
                .unwrap_or_default(),
            staked: settlement.map(|s| by_party(&s.staked)).unwrap_or_default(),
            payouts: settlement.map(|s| by_party(&s.payouts)).unwrap_or_default(),
            balance_deltas: report::deltas(&before, &after),
            atomicity,
            nsb_unsound_commits: self.unsound,
            rejections,
            delivered,
            dropped,
            trace_digest: self.net.trace_digest().to_hex(),
            expectation_failures: Vec::new(),
        };
        r.expectation_failures = expectation_failures(&self.scenario, &r);
        r
    }
}

fn tag(class: u8) -> &'static str {
    match class {
        CHAINS => "chains",
        NSB => "nsb",
        ISC => "isc",
        VES => "ves",
        _ => "client",
    }
}

/// Whether a committed status entry describes a finalized block with its
/// real roots and, for a per-transaction claim, a transaction in it.
fn sound(chains: &BTreeMap<String, Chain>, key: &[u8], r: &StatusRecord) -> bool {
    let Some(c) = chains.get(&r.chain) else { return false };
    let finalized = c.finalized_height().is_some_and(|h| r.height <= h);
    let roots = c.block(r.height).is_some_and(|b| b.header.tx_root == r.tx_root && b.header.state_root == r.state_root);
    let tx_ok = match key.strip_prefix(b"tx".as_slice()).filter(|k| k.len() == 32) {
        Some(d) => {
            let tx = Digest(d.try_into().expect("32 bytes"));
            key == claim_key(&tx).as_slice() && matches!(c.query_status(&tx), TxStatus::Finalized { height, .. } if height == r.height)
        }
        None => true,
    };
    finalized && roots && tx_ok
}

fn expectation_failures(s: &Scenario, r: &RunReport) -> Vec<String> {
    let e = &s.expect;
    let mut out = Vec::new();
    if let Some(o) = &e.outcome {
        if *o != r.outcome {
            out.push(format!("outcome {} != expected {o}", r.outcome));
        }
    }
    if let Some(resp) = &e.resp {
        if *resp != r.resp {
            out.push(format!("resp {:?} != expected {resp:?}", r.resp));
        }
    }
    if let Some(states) = &e.states {
        for (t, want) in states {
            let got = r.tids.get(t).map(|x| x.state.as_str()).unwrap_or("missing");
            if got != want {
                out.push(format!("{t} is {got}, expected {want}"));
            }
        }
    }
    if let Some(max) = e.max_nsb_txs_per_tid {
        for (t, x) in &r.tids {
            if x.nsb_txs > max {
                out.push(format!("{t} used {} NSB transactions, limit {max}", x.nsb_txs));
            }
        }
    }
    for needle in &e.rejections {
        if !r.rejections.iter().any(|l| l.contains(needle.as_str())) {
            out.push(format!("no rejection mentions {needle:?}"));
        }
    }
    out
}

/// Loads the app and runs the scenario.
pub fn run(scenario: &Scenario) -> Result<RunReport> {
    let app = App::load(&scenario.app_dir())?;
    run_with(scenario.clone(), app)
}

pub fn run_with(scenario: Scenario, app: App) -> Result<RunReport> {
    Ok(World::new(scenario, app)?.run().0)
}
