use std::collections::BTreeSet;

use proptest::prelude::*;

use super::*;
use crate::hsl::ast::{DeadlineSpec, TimeUnit};
use crate::hsl::validate::tests::{option_interfaces, OPTION_HSL};
use crate::hsl::{parse_hsl, validate, Code};
use crate::value::{Decimal, Value};

pub(crate) fn config() -> VesConfig {
    VesConfig::from_toml(include_str!("../../fixtures/option/ves.toml")).unwrap()
}

fn compile_src(src: &str, config: &VesConfig) -> Result<Tdg, crate::hsl::Diagnostics> {
    let v = validate(&parse_hsl(src).unwrap(), &option_interfaces()).unwrap();
    compile(&v, config)
}

pub(crate) fn option_tdg() -> Tdg {
    compile_src(OPTION_HSL, &config()).unwrap()
}

#[test]
fn option_program_lowers_to_five_wrappers() {
    let t = option_tdg();
    assert_eq!(t.len(), 5);
    let ops: Vec<&str> = t.wrappers.iter().map(|w| w.meta.op.as_str()).collect();
    assert_eq!(ops, ["op1", "op2", "op2", "op3", "op4"]);
    let chains: Vec<&str> = t.wrappers.iter().map(|w| w.meta.chain.as_str()).collect();
    assert_eq!(chains, ["ChainX", "ChainX", "ChainY", "ChainY", "ChainZ"]);
    assert_eq!(t.edges, vec![(1, 2), (1, 3), (1, 5), (2, 3), (2, 4), (3, 4)]);

    let t1 = t.wrapper(1).unwrap();
    assert_eq!(t1.meta.payload, Payload::Invocation { method: "GetStrikePrice".into(), args: vec![] });
    assert_eq!(t1.to.address, "0xbba7");
    assert_eq!(t1.to.owner, None);

    let t2 = t.wrapper(2).unwrap();
    assert_eq!(t2.meta.payload, Payload::Payment { value: 50, unit: "xcoin".into() });
    assert_eq!((t2.from.address.as_str(), t2.to.address.as_str()), ("0x7019", "0xee01"));
    assert_eq!(t2.to.owner, Some(Party::Ves));

    let t3 = t.wrapper(3).unwrap();
    assert_eq!(t3.meta.payload, Payload::Payment { value: 25, unit: "ycoin".into() });
    assert_eq!((t3.from.address.as_str(), t3.to.address.as_str()), ("0xee02", "0x47a1"));
    assert_eq!(t3.originator(), Party::Ves);

    for seq in [4, 5] {
        let w = t.wrapper(seq).unwrap();
        let slot = StateSlot { seq: 1, contract: "0xbba7".into(), var: "StrikePrice".into() };
        assert_eq!(w.meta.state_proof_slots, vec![slot]);
        let Payload::Invocation { method, args } = &w.meta.payload else { panic!() };
        assert_eq!(method, "CashSettle");
        assert_eq!(args[1], WrapperArg::State { seq: 1, contract: "0xbba7".into(), var: "StrikePrice".into() });
    }
    assert_eq!(
        t.wrapper(4).unwrap().meta.payload,
        Payload::Invocation {
            method: "CashSettle".into(),
            args: vec![
                WrapperArg::Literal(Value::int(10)),
                WrapperArg::State { seq: 1, contract: "0xbba7".into(), var: "StrikePrice".into() }
            ]
        }
    );
}

#[test]
fn option_amounts_deadlines_and_nonces() {
    let t = option_tdg();
    let amt: Vec<u64> = t.wrappers.iter().map(|w| w.meta.amt).collect();
    // 25 ycoin at 2 ncoin per ycoin.
    assert_eq!(amt, [0, 50, 50, 0, 0]);
    let dl: Vec<u64> = t.wrappers.iter().map(|w| w.meta.deadline_blocks).collect();
    assert_eq!(dl, [10, 30, 30, 30, 120]);
    assert_eq!(t.wrapper(3).unwrap().meta.rate, Some(Decimal::from_int(2)));
    assert_eq!(t.wrapper(1).unwrap().meta.rate, None);
    // a1 sends T1 then T2.
    let nonces: Vec<u64> = t.wrappers.iter().map(|w| w.meta.nonce).collect();
    assert_eq!(nonces, [0, 1, 0, 0, 0]);
    assert_eq!(t.wrapper(2).unwrap().meta.dst.address, "0xc1a0");
    assert_eq!(t.wrapper(3).unwrap().meta.dst.address, "0xee00");
    assert_eq!(t.wrapper(2).unwrap().meta.dst.chain, "ChainN");
}

#[test]
fn option_stakes() {
    let t = option_tdg();
    assert_eq!(stake_requirement(&t, Party::Ves, 20).unwrap(), 50);
    assert_eq!(stake_requirement(&t, Party::Client, 20).unwrap(), 0);
}

#[test]
fn fee_allowance_is_added_per_wrapper() {
    let mut c = config();
    c.fee_allowance = 3;
    let t = compile_src(OPTION_HSL, &c).unwrap();
    let amt: Vec<u64> = t.wrappers.iter().map(|w| w.meta.amt).collect();
    assert_eq!(amt, [3, 53, 53, 3, 3]);
}

#[test]
fn compilation_is_deterministic_and_round_trips() {
    let a = option_tdg();
    let b = option_tdg();
    assert_eq!(a.canonical_bytes(), b.canonical_bytes());
    assert_eq!(a.to_json(), b.to_json());
    let back = Tdg::from_json(&a.to_json()).unwrap();
    assert_eq!(back, a);
    assert_eq!(a.tids(), back.tids());
}

#[test]
fn golden_tdg() {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/golden/option.tdg.json");
    let json = option_tdg().to_json();
    if std::env::var_os("BLESS").is_some() {
        std::fs::write(path, &json).unwrap();
    }
    assert_eq!(json, std::fs::read_to_string(path).unwrap());
}

#[test]
fn precedence_is_sound() {
    let t = option_tdg();
    let by_op = |op: &str| t.wrappers.iter().filter(|w| w.meta.op == op).map(|w| w.seq).collect::<Vec<_>>();
    for (a, b) in [("op1", "op2"), ("op1", "op4"), ("op2", "op3")] {
        for &x in &by_op(a) {
            for &y in &by_op(b) {
                assert!(t.ancestors(y).contains(&x), "{a} -> {b}");
            }
        }
    }
}

#[test]
fn same_chain_payment_is_one_wrapper() {
    let src = "import(\"broker.sol\")\n\
        account a = ChainX::Account(0x01, 100, xcoin)\n\
        account b = ChainX::Account(0x02, 0, xcoin)\n\
        op p payment 10 xcoin from a to b with 1 xcoin as 1 xcoin\n";
    let t = compile_src(src, &config()).unwrap();
    assert_eq!(t.len(), 1);
    assert!(t.edges.is_empty());
    assert_eq!(t.wrappers[0].to.owner, Some(Party::Client));
    assert_eq!(t.wrappers[0].fund_recipient(), Party::Client);
}

#[test]
fn compile_errors() {
    let mut c = config();
    c.reachable.remove("ChainZ");
    let e = compile_src(OPTION_HSL, &c).unwrap_err();
    assert!(e.codes().contains(&Code::UnreachableChain));

    let mut c = config();
    c.relay.remove("ChainY");
    assert_eq!(compile_src(OPTION_HSL, &c).unwrap_err().codes(), vec![Code::MissingRelay]);

    let mut c = config();
    c.rates.remove("ycoin");
    assert_eq!(compile_src(OPTION_HSL, &c).unwrap_err().codes(), vec![Code::MissingRate]);

    let mut c = config();
    c.rates.insert("ycoin".into(), "0.3".parse().unwrap());
    assert_eq!(compile_src(OPTION_HSL, &c).unwrap_err().codes(), vec![Code::NonIntegralAmount]);

    let mut c = config();
    c.refund.clear();
    assert!(compile_src(OPTION_HSL, &c).unwrap_err().codes().contains(&Code::MissingRefundAccount));

    // Reading c1's state without an upstream invocation of c1.
    let src = OPTION_HSL.replace("op1 before op2, op4; op3 after op2", "op3 after op2");
    let e = compile_src(&src, &config()).unwrap_err();
    assert_eq!(e.codes(), vec![Code::UnanchoredStateRef, Code::UnanchoredStateRef]);

    let src = OPTION_HSL.replace("50 xcoin from a1 to a2 with 1 xcoin as 0.5 ycoin", "5 xcoin from a1 to a2 with 2 xcoin as 1 ycoin");
    assert_eq!(compile_src(&src, &config()).unwrap_err().codes(), vec![Code::NonIntegralAmount]);
}

#[test]
fn deadline_conversion() {
    let c = config();
    assert_eq!(deadline_to_blocks(&DeadlineSpec::Blocks(Decimal::from_int(10)), &c), Ok(10));
    assert_eq!(deadline_to_blocks(&DeadlineSpec::Default, &c), Ok(30));
    let secs = DeadlineSpec::Time { amount: Decimal::from_int(90), unit: TimeUnit::Seconds };
    assert_eq!(deadline_to_blocks(&secs, &c), Ok(9));
    let mins = DeadlineSpec::Time { amount: Decimal::from_int(20), unit: TimeUnit::Minutes };
    assert_eq!(deadline_to_blocks(&mins, &c), Ok(120));
    let hrs = DeadlineSpec::Time { amount: Decimal::ratio(1, 2), unit: TimeUnit::Hours };
    assert_eq!(deadline_to_blocks(&hrs, &c), Ok(180));
    let tiny = DeadlineSpec::Time { amount: Decimal::from_int(1), unit: TimeUnit::Seconds };
    assert_eq!(deadline_to_blocks(&tiny, &c), Ok(1));
    assert!(deadline_to_blocks(&DeadlineSpec::Blocks(Decimal::zero()), &c).is_err());
    assert!(deadline_to_blocks(&DeadlineSpec::Blocks(Decimal::ratio(3, 2)), &c).is_err());
}

/// A synthetic graph: wrapper i is sent by `from[i]` to `to[i]` (None for
/// a contract) with the given amt.
pub(crate) fn synthetic(edges: &[(u32, u32)], legs: &[(Party, Option<Party>, u64)]) -> Tdg {
    let acct = |owner: Option<Party>| AccountRef { chain: "C".into(), address: "0x1".into(), owner };
    Tdg {
        session: SessionParams { isc_chain: "C".into(), isc_unit: "u".into(), default_deadline_blocks: 5 },
        wrappers: legs
            .iter()
            .enumerate()
            .map(|(i, &(from, to, amt))| TransactionWrapper {
                from: acct(Some(from)),
                to: acct(to),
                seq: i as u32 + 1,
                meta: Meta {
                    amt,
                    dst: acct(Some(from)),
                    rate: None,
                    payload: Payload::Payment { value: amt, unit: "u".into() },
                    state_proof_slots: vec![],
                    deadline_blocks: 5,
                    chain: "C".into(),
                    nonce: i as u64,
                    op: format!("op{i}"),
                },
            })
            .collect(),
        edges: edges.to_vec(),
    }
}

fn shape(n: usize, edges: &[(u32, u32)]) -> Tdg {
    synthetic(edges, &vec![(Party::Client, Some(Party::Ves), 1); n])
}

#[test]
fn subset_counts() {
    assert_eq!(committable_subsets(&shape(0, &[]), 20).unwrap().len(), 1);
    let chain = committable_subsets(&shape(2, &[(1, 2)]), 20).unwrap();
    assert_eq!(chain, vec![BTreeSet::new(), BTreeSet::from([1]), BTreeSet::from([1, 2])]);
    assert_eq!(committable_subsets(&shape(2, &[]), 20).unwrap().len(), 4);
    let diamond = shape(4, &[(1, 2), (1, 3), (2, 4), (3, 4)]);
    // Oracle: filter all 16 subsets by the closure predicate.
    let closed = (0u32..16).filter(|m| diamond.edges.iter().all(|&(a, b)| m >> (b - 1) & 1 == 0 || m >> (a - 1) & 1 == 1)).count();
    assert_eq!(closed, 6);
    assert_eq!(committable_subsets(&diamond, 20).unwrap().len(), closed);
    assert_eq!(committable_subsets(&shape(3, &[]), 2), Err(CapExceeded { len: 3, cap: 2 }));
}

#[test]
fn trivial_stakes() {
    assert_eq!(stake_requirement(&shape(0, &[]), Party::Ves, 20), Ok(0));
    let one = synthetic(&[], &[(Party::Client, Some(Party::Ves), 10)]);
    assert_eq!(stake_requirement(&one, Party::Ves, 20), Ok(10));
    assert_eq!(stake_requirement(&one, Party::Client, 20), Ok(0));
    // An unowned receiver counts for the counterparty.
    let invoke = synthetic(&[], &[(Party::Client, None, 4)]);
    assert_eq!(stake_requirement(&invoke, Party::Ves, 20), Ok(4));
}

fn arb_graph() -> impl Strategy<Value = Tdg> {
    (1usize..=12).prop_flat_map(|n| {
        let pairs: Vec<(u32, u32)> = (1..=n as u32).flat_map(|a| (a + 1..=n as u32).map(move |b| (a, b))).collect();
        let np = pairs.len();
        let leg = (any::<bool>(), prop::option::of(any::<bool>()), 0u64..100);
        (prop::collection::vec(any::<bool>(), np), prop::collection::vec(leg, n)).prop_map(move |(keep, legs)| {
            let party = |b: bool| if b { Party::Ves } else { Party::Client };
            let edges: Vec<(u32, u32)> = pairs.iter().zip(&keep).filter(|(_, k)| **k).map(|(p, _)| *p).collect();
            let legs: Vec<_> = legs.into_iter().map(|(f, t, a)| (party(f), t.map(party), a)).collect();
            synthetic(&edges, &legs)
        })
    })
}

/// Brute force over all 2^n subsets, filtered by the closure predicate.
fn oracle_stake(t: &Tdg, party: Party) -> i128 {
    let n = t.len();
    let mut best = 0i128;
    for m in 0u32..(1 << n) {
        let closed = t.edges.iter().all(|&(a, b)| m >> (b - 1) & 1 == 0 || m >> (a - 1) & 1 == 1);
        if !closed {
            continue;
        }
        let mut v = 0i128;
        for w in &t.wrappers {
            if m >> (w.seq - 1) & 1 == 1 {
                let to = w.to.owner.unwrap_or(w.from.owner.unwrap().other());
                if to == party {
                    v += w.meta.amt as i128;
                }
                if w.from.owner == Some(party) {
                    v -= w.meta.amt as i128;
                }
            }
        }
        best = best.max(v);
    }
    best
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn stake_matches_brute_force(t in arb_graph()) {
        for p in [Party::Ves, Party::Client] {
            prop_assert_eq!(stake_requirement(&t, p, 20).unwrap() as i128, oracle_stake(&t, p));
        }
    }

    #[test]
    fn subsets_match_closure_filter(t in arb_graph()) {
        let n = t.len();
        let expected = (0u32..(1 << n))
            .filter(|m| t.edges.iter().all(|&(a, b)| m >> (b - 1) & 1 == 0 || m >> (a - 1) & 1 == 1))
            .count();
        prop_assert_eq!(committable_subsets(&t, 20).unwrap().len(), expected);
    }

    #[test]
    fn stake_monotone_under_incoming(t in arb_graph(), amt in 0u64..100) {
        let before = stake_requirement(&t, Party::Ves, 20).unwrap();
        let mut legs: Vec<_> = t.wrappers.iter().map(|w| (w.from.owner.unwrap(), w.to.owner, w.meta.amt)).collect();
        legs.push((Party::Client, Some(Party::Ves), amt));
        let grown = synthetic(&t.edges, &legs);
        prop_assert!(stake_requirement(&grown, Party::Ves, 20).unwrap() >= before);
    }
}
