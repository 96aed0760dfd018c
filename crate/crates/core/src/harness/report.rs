//! Run reports and the atomicity verdict, recomputed from chain state and
//! the settlement record.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::chain::{Chain, ChainState};
use crate::compiler::{Party, Tdg, VesConfig};
use crate::isc::cert::TransState;
use crate::isc::Settlement;
use crate::value::Decimal;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TidReport {
    pub tid: String,
    pub state: String,
    /// NSB transactions submitted for this tid.
    pub nsb_txs: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Reversion {
    pub tx: String,
    pub dst: String,
    pub amt: u64,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Atomicity {
    pub holds: bool,
    pub violations: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    /// `committed`, `reverted`, `aborted` or `unsettled`.
    pub outcome: String,
    pub ticks: u64,
    pub nsb_height: u64,
    pub activated_at: Option<u64>,
    pub tids: BTreeMap<String, TidReport>,
    pub resp: BTreeMap<String, String>,
    pub reversions: Vec<Reversion>,
    pub staked: BTreeMap<String, u64>,
    pub payouts: BTreeMap<String, u64>,
    /// Party -> `Chain:unit` -> change over the run.
    pub balance_deltas: BTreeMap<String, BTreeMap<String, i64>>,
    pub atomicity: Atomicity,
    /// Status entries committed for transactions or blocks that were not
    /// finalized with those roots.
    pub nsb_unsound_commits: u64,
    pub rejections: Vec<String>,
    pub delivered: u64,
    pub dropped: u64,
    pub trace_digest: String,
    /// Mismatches against the scenario's declared expectations.
    pub expectation_failures: Vec<String>,
}

impl RunReport {
    /// Canonical JSON with sorted keys.
    pub fn to_json(&self) -> String {
        let v = serde_json::to_value(self).expect("report serializes");
        serde_json::to_string_pretty(&v).expect("value serializes") + "\n"
    }

    pub fn passed(&self) -> bool {
        self.atomicity.holds && self.nsb_unsound_commits == 0 && self.expectation_failures.is_empty()
    }

    pub fn state_of(&self, seq: u32) -> Option<&str> {
        self.tids.get(&format!("T{seq}")).map(|t| t.state.as_str())
    }
}

/// Who owns each account, per chain, read from genesis.
pub type Owners = BTreeMap<String, BTreeMap<String, String>>;

pub fn owners(chains: &BTreeMap<String, Chain>) -> Owners {
    chains
        .iter()
        .map(|(id, c)| (id.clone(), c.addresses().into_iter().filter_map(|a| Some((a.to_string(), c.owner(a)?.to_string()))).collect()))
        .collect()
}

/// Per principal, per `Chain:unit`, balances summed over owned accounts.
pub fn holdings(states: &BTreeMap<String, ChainState>, owners: &Owners) -> BTreeMap<String, BTreeMap<String, i128>> {
    let mut out: BTreeMap<String, BTreeMap<String, i128>> = BTreeMap::new();
    for (chain, st) in states {
        for ((addr, unit), bal) in &st.balances {
            if let Some(owner) = owners.get(chain).and_then(|m| m.get(addr)) {
                *out.entry(owner.clone()).or_default().entry(format!("{chain}:{unit}")).or_insert(0) += *bal as i128;
            }
        }
    }
    out
}

pub fn deltas(
    before: &BTreeMap<String, BTreeMap<String, i128>>,
    after: &BTreeMap<String, BTreeMap<String, i128>>,
) -> BTreeMap<String, BTreeMap<String, i64>> {
    let mut out: BTreeMap<String, BTreeMap<String, i64>> = BTreeMap::new();
    for who in before.keys().chain(after.keys()) {
        let (b, a) = (before.get(who), after.get(who));
        let keys = b.into_iter().flat_map(|m| m.keys()).chain(a.into_iter().flat_map(|m| m.keys()));
        for k in keys {
            let d = a.and_then(|m| m.get(k)).copied().unwrap_or(0) - b.and_then(|m| m.get(k)).copied().unwrap_or(0);
            out.entry(who.clone()).or_default().insert(k.clone(), d as i64);
        }
    }
    out
}

/// Value of a holdings table in ISC units.
fn valuation(h: Option<&BTreeMap<String, i128>>, rates: &BTreeMap<String, Decimal>) -> Result<Decimal, String> {
    let mut total = Decimal::zero();
    for (key, amount) in h.into_iter().flatten() {
        let unit = key.split_once(':').map(|(_, u)| u).unwrap_or(key);
        let rate = rates.get(unit).ok_or_else(|| format!("no rate for unit {unit}"))?;
        total = total.add(&rate.mul(&Decimal::from_int(*amount)));
    }
    Ok(total)
}

/// Inputs to the atomicity verdict.
pub struct AtomicityInput<'a> {
    pub tdg: &'a Tdg,
    pub config: &'a VesConfig,
    pub settlement: Option<&'a Settlement>,
    pub before: &'a BTreeMap<String, BTreeMap<String, i128>>,
    pub after: &'a BTreeMap<String, BTreeMap<String, i128>>,
    /// Escrow balance before the run and now.
    pub escrow: (u64, u64),
    pub payouts_final: bool,
    /// Transactions whose on-chain form executed successfully.
    pub executed: &'a BTreeSet<u32>,
}

/// Checks, with exact arithmetic:
/// - staked value is paid back in full and the escrow returns to its
///   initial balance;
/// - a successful settlement reverts nothing and refunds every stake;
/// - a failed settlement reverts exactly `meta.amt` to `meta.dst` for every
///   closed transaction and nothing else;
/// - each payout is stake plus reversions received minus reversions charged;
/// - no party ends below its initial holdings less its own outgoing
///   payments that executed and the reversions it was charged, valued in
///   ISC units;
/// - after a failed settlement each party's holdings are worth exactly what
///   they were worth before, except for the fee allowance on reverted
///   payments and payments that executed but were never attested closed.
pub fn atomicity(input: &AtomicityInput) -> Atomicity {
    let mut v = Vec::new();
    let AtomicityInput { tdg, config, settlement, before, after, escrow, payouts_final, executed } = *input;
    let Some(s) = settlement else {
        return Atomicity { holds: true, violations: v };
    };
    let staked: u64 = s.staked.values().sum();
    let paid: u64 = s.payouts.values().sum();
    if staked != paid {
        v.push(format!("payouts {paid} differ from stakes {staked}"));
    }
    if !payouts_final {
        v.push("payouts not finalized".into());
    } else if escrow.0 != escrow.1 {
        v.push(format!("escrow holds {} after settlement, {} before", escrow.1, escrow.0));
    }

    let mut expected: Vec<(u32, String, u64)> = s
        .states
        .iter()
        .filter(|(_, st)| **st >= TransState::Closed)
        .map(|(seq, _)| {
            let w = tdg.wrapper(*seq).expect("seq");
            (*seq, w.meta.dst.address.clone(), w.meta.amt)
        })
        .filter(|(_, _, amt)| *amt > 0)
        .collect();
    let mut got: Vec<(u32, String, u64)> = s.reversions.iter().map(|(seq, dst, amt)| (*seq, dst.address.clone(), *amt)).collect();
    expected.sort();
    got.sort();
    if s.dirty.is_empty() {
        if !got.is_empty() {
            v.push("reversions on a successful settlement".into());
        }
        if s.payouts != s.staked {
            v.push("stakes not refunded in full".into());
        }
        if s.states.values().any(|st| *st != TransState::Correct) {
            v.push("successful settlement with a transaction not correct".into());
        }
    } else if expected != got {
        v.push(format!("reversions {got:?} differ from closed transactions {expected:?}"));
    }

    let owner_of = |dst: &crate::compiler::AccountRef, fallback: Party| {
        dst.owner.or_else(|| config.refund.iter().find(|(_, a)| **a == dst.address).map(|(p, _)| *p)).unwrap_or(fallback)
    };
    for p in [Party::Ves, Party::Client] {
        let mut net = s.staked.get(&p).copied().unwrap_or(0) as i128;
        for (seq, dst, amt) in &s.reversions {
            let w = tdg.wrapper(*seq).expect("seq");
            if owner_of(dst, w.originator()) == p {
                net += *amt as i128;
            }
            if w.fund_recipient() == p {
                net -= *amt as i128;
            }
        }
        let payout = s.payouts.get(&p).copied().unwrap_or(0) as i128;
        if payout != net {
            v.push(format!("{p} payout {payout} differs from stake plus net reversions {net}"));
        }
    }

    if payouts_final {
        let rate_of = |unit: &str| config.rates.get(unit).cloned();
        for p in [Party::Ves, Party::Client] {
            let (b, a) = match (valuation(before.get(p.as_str()), &config.rates), valuation(after.get(p.as_str()), &config.rates)) {
                (Ok(b), Ok(a)) => (b, a),
                (Err(e), _) | (_, Err(e)) => {
                    v.push(e);
                    continue;
                }
            };
            let mut outgoing = Decimal::zero();
            let charged: u64 = s
                .reversions
                .iter()
                .filter(|(seq, _, _)| tdg.wrapper(*seq).is_some_and(|w| w.fund_recipient() == p))
                .map(|(_, _, amt)| *amt)
                .sum();
            let mut expected_move = Decimal::zero();
            for w in &tdg.wrappers {
                let st = s.states.get(&w.seq).copied().unwrap_or(TransState::Unknown);
                let worth = match &w.meta.payload {
                    crate::compiler::Payload::Payment { value, unit } => match rate_of(unit) {
                        Some(r) => r.mul(&Decimal::from_int(*value as i128)),
                        None => {
                            v.push(format!("no rate for unit {unit}"));
                            continue;
                        }
                    },
                    crate::compiler::Payload::Invocation { .. } => Decimal::zero(),
                };
                let pays = w.originator() == p && w.to.owner != Some(p);
                let gets = w.to.owner == Some(p) && w.originator() != p;
                if executed.contains(&w.seq) && pays {
                    outgoing = outgoing.add(&worth);
                }
                if s.dirty.is_empty() {
                    continue;
                }
                if st >= TransState::Closed && w.meta.amt > 0 {
                    // Reverted: the payment is undone at `amt`.
                    let extra = Decimal::from_int(w.meta.amt as i128).sub(&worth);
                    if owner_of(&w.meta.dst, w.originator()) == p {
                        expected_move = expected_move.add(&extra);
                    }
                    if w.fund_recipient() == p {
                        expected_move = expected_move.sub(&extra);
                    }
                } else if st < TransState::Closed && executed.contains(&w.seq) {
                    if gets {
                        expected_move = expected_move.add(&worth);
                    }
                    if pays {
                        expected_move = expected_move.sub(&worth);
                    }
                }
            }
            if a.add(&outgoing).add(&Decimal::from_int(charged as i128)) < b {
                v.push(format!("{p} holds {a} after the run, below {b} less outgoing {outgoing} and charged {charged}"));
            }
            if !s.dirty.is_empty() && a.sub(&b) != expected_move {
                v.push(format!("{p} net position moved by {} on a failed run, expected {expected_move}", a.sub(&b)));
            }
        }
    }
    Atomicity { holds: v.is_empty(), violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::tests::{config, option_tdg};

    type Holdings = BTreeMap<String, BTreeMap<String, i128>>;

    fn holdings_of(entries: &[(&str, &str, i128)]) -> Holdings {
        let mut m = Holdings::new();
        for (who, key, v) in entries {
            m.entry(who.to_string()).or_default().insert(key.to_string(), *v);
        }
        m
    }

    /// T1 and T2 closed, T3 stalled: the client paid 50 xcoin to the VES
    /// relay and gets 50 ncoin back out of the VES stake.
    fn failed() -> (Settlement, Holdings, Holdings) {
        let tdg = option_tdg();
        let w2 = tdg.wrapper(2).unwrap();
        let states = BTreeMap::from([
            (1, TransState::Correct),
            (2, TransState::Closed),
            (3, TransState::Inited),
            (4, TransState::Unknown),
            (5, TransState::Correct),
        ]);
        let s = Settlement {
            states,
            dirty: [3].into(),
            resp: BTreeMap::from([(3, Party::Client)]),
            reversions: vec![(2, w2.meta.dst.clone(), w2.meta.amt)],
            staked: BTreeMap::from([(Party::Ves, 50), (Party::Client, 0)]),
            payouts: BTreeMap::from([(Party::Ves, 0), (Party::Client, 50)]),
        };
        let before =
            holdings_of(&[("ves", "N:ncoin", 1000), ("client", "N:ncoin", 1000), ("client", "X:xcoin", 100), ("ves", "X:xcoin", 0)]);
        let after = holdings_of(&[("ves", "N:ncoin", 950), ("client", "N:ncoin", 1050), ("client", "X:xcoin", 50), ("ves", "X:xcoin", 50)]);
        (s, before, after)
    }

    fn check(s: &Settlement, before: &Holdings, after: &Holdings) -> Atomicity {
        let tdg = option_tdg();
        let cfg = config();
        atomicity(&AtomicityInput {
            tdg: &tdg,
            config: &cfg,
            settlement: Some(s),
            before,
            after,
            escrow: (0, 0),
            payouts_final: true,
            executed: &[1, 2, 5].into(),
        })
    }

    #[test]
    fn exact_reversion_is_atomic() {
        let (s, b, a) = failed();
        let v = check(&s, &b, &a);
        assert!(v.holds, "{:?}", v.violations);
    }

    #[test]
    fn short_reversion_is_caught() {
        let (mut s, b, mut a) = failed();
        s.reversions[0].2 = 49;
        s.payouts = BTreeMap::from([(Party::Ves, 1), (Party::Client, 49)]);
        a.get_mut("client").unwrap().insert("N:ncoin".into(), 1049);
        a.get_mut("ves").unwrap().insert("N:ncoin".into(), 951);
        let v = check(&s, &b, &a);
        assert!(!v.holds);
        assert!(v.violations.iter().any(|m| m.contains("differ from closed transactions")));
        assert!(v.violations.iter().any(|m| m.contains("net position")));
    }

    #[test]
    fn missing_reversion_and_leaky_payouts_are_caught() {
        let (mut s, b, a) = failed();
        s.reversions.clear();
        s.payouts = BTreeMap::from([(Party::Ves, 50), (Party::Client, 1)]);
        let v = check(&s, &b, &a);
        assert!(v.violations.iter().any(|m| m.contains("differ from stakes")));
        assert!(v.violations.iter().any(|m| m.contains("differ from closed transactions")));
    }

    #[test]
    fn success_must_refund_stakes() {
        let (mut s, b, _) = failed();
        s.states.values_mut().for_each(|x| *x = TransState::Correct);
        s.dirty.clear();
        s.resp.clear();
        s.reversions.clear();
        let v = check(&s, &b, &b);
        assert!(v.violations.iter().any(|m| m.contains("not refunded")));
        s.payouts = s.staked.clone();
        assert!(check(&s, &b, &b).holds);
    }

    #[test]
    fn deltas_cover_both_sides() {
        let b = holdings_of(&[("ves", "X:xcoin", 5)]);
        let a = holdings_of(&[("client", "X:xcoin", 5)]);
        let d = deltas(&b, &a);
        assert_eq!(d["ves"]["X:xcoin"], -5);
        assert_eq!(d["client"]["X:xcoin"], 5);
    }
}
