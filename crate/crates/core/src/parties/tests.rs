use std::path::PathBuf;

use super::*;
use crate::harness::{App, Scenario, World};
use crate::netsim::LinkRule;

fn option_app() -> App {
    App::load(&PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/option")).unwrap()
}

fn scenario(name: &str, faults: Vec<FaultEntry>, links: Vec<LinkRule>) -> Scenario {
    let mut s = Scenario::from_toml(&format!("name = \"{name}\"\napp = \"option\"\nseed = 1\n")).unwrap();
    s.faults = faults;
    s.links = links;
    s
}

fn run(s: Scenario) -> World {
    World::new(s, option_app()).unwrap().run().1
}

fn dead_channel() -> LinkRule {
    LinkRule { from: "ves".into(), to: "client".into(), both: true, drop: 1.0, ..LinkRule::default() }
}

#[test]
fn fault_entries_read_from_toml() {
    let s = Scenario::from_toml(
        r#"
        name = "f"
        app = "option"
        [[faults]]
        party = "client"
        seq = 3
        kind = "delay-post"
        ticks = 9
        [[faults]]
        party = "ves"
        kind = "ts-skew"
        offset = -4
        [[faults]]
        party = "ves"
        kind = "crash"
        at = 12
        "#,
    )
    .unwrap();
    assert_eq!(s.faults[0], FaultEntry { party: Party::Client, seq: Some(3), fault: Fault::DelayPost { ticks: 9 } });
    assert_eq!(s.faults[1].fault, Fault::TsSkew { offset: -4 });
    assert_eq!(s.faults[2], FaultEntry { party: Party::Ves, seq: None, fault: Fault::Crash { at: 12 } });
    assert!(Scenario::from_toml("name = \"f\"\napp = \"o\"\n[[faults]]\nparty = \"ves\"\nkind = \"teleport\"\n").is_err());
}

#[test]
fn honest_parties_agree_on_every_state() {
    let w = run(scenario("agree", vec![], vec![]));
    for p in w.parties.values() {
        for (seq, l) in &p.local {
            assert_eq!(l.state, TransState::Closed, "{} T{seq}", p.role);
            assert!(l.closing.is_some());
        }
        assert!(p.rejections.is_empty(), "{:?}", p.rejections);
    }
    let (v, c) = (&w.parties[&Party::Ves], &w.parties[&Party::Client]);
    for seq in 1..=5 {
        assert_eq!(v.local[&seq].trans, c.local[&seq].trans);
        assert_eq!(v.local[&seq].ts_closed, c.local[&seq].ts_closed);
    }
}

#[test]
fn dead_channel_falls_back_to_the_nsb() {
    let w = run(scenario("fallback", vec![], vec![dead_channel()]));
    // The counterparty learns every opened certificate from the NSB and
    // closure comes from on-chain proofs.
    assert!(w.parties.values().all(|p| p.local.values().all(|l| l.state == TransState::Closed)));
    assert!(w.log.iter().any(|l| l.contains("accepts Merk^c")));
    assert!(!w.log.iter().any(|l| l.contains("accepts Cert^c")));
}

#[test]
fn wrong_key_certificates_are_refused() {
    let f = FaultEntry { party: Party::Client, seq: None, fault: Fault::WrongKey };
    let w = run(scenario("wrong-key", vec![f], vec![]));
    assert!(w.parties[&Party::Ves].rejections.iter().any(|r| r.contains("bad signature")));
    assert!(w.log.iter().any(|l| l.starts_with("t=") && l.contains("nsb rejects an action from client")));
    let r = w.report();
    assert_eq!(r.resp.get("T1").map(String::as_str), Some("client"));
}

#[test]
fn client_refuses_init_for_ves_transaction() {
    let f = FaultEntry { party: Party::Ves, seq: Some(3), fault: Fault::SpuriousInit };
    let w = run(scenario("spurious", vec![f], vec![]));
    let c = &w.parties[&Party::Client];
    assert!(c.rejections.iter().any(|r| r.contains("Cert^i for T3")), "{:?}", c.rejections);
    assert_eq!(c.local[&3].state, TransState::Unknown);
}

#[test]
fn originator_rejects_skewed_open() {
    let f = FaultEntry { party: Party::Ves, seq: Some(1), fault: Fault::TsSkew { offset: 9 } };
    let w = run(scenario("skew", vec![f], vec![]));
    let c = &w.parties[&Party::Client];
    assert!(c.rejections.iter().any(|r| r.contains("Cert^o for T1") && r.contains("outside")));
    assert_eq!(c.local[&1].state, TransState::Inited);
}

#[test]
fn delayed_post_closes_late() {
    let f = FaultEntry { party: Party::Client, seq: Some(1), fault: Fault::DelayPost { ticks: 60 } };
    let w = run(scenario("late", vec![f], vec![]));
    let v = &w.parties[&Party::Ves];
    assert_eq!(v.local[&1].state, TransState::Closed);
    assert!(v.local[&1].ts_closed - v.local[&1].ts_open >= 20);
}

#[test]
fn crashed_party_goes_silent() {
    let f = FaultEntry { party: Party::Ves, seq: None, fault: Fault::Crash { at: 1 } };
    let w = run(scenario("crash", vec![f], vec![]));
    let v = &w.parties[&Party::Ves];
    assert!(v.crashed());
    assert!(v.cid.is_none());
    assert_eq!(w.net.sent_on("ves", "isc"), 0);
}
