//! Accountability grid and randomized adversarial runs.

use std::collections::BTreeMap;
use std::fmt;

use anyhow::Result;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use super::app::App;
use super::report::RunReport;
use super::scenario::Scenario;
use super::world::run_with;
use crate::compiler::{Party, Tdg};
use crate::isc::cert::TransState;
use crate::isc::responsible;
use crate::netsim::LinkRule;
use crate::parties::{Fault, FaultEntry};

/// Where a transaction is made to stop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stall {
    Unknown,
    Init,
    Inited,
    Open,
    Opened,
    ClosedLate,
}

impl Stall {
    pub const ALL: [Stall; 6] = [Stall::Unknown, Stall::Init, Stall::Inited, Stall::Open, Stall::Opened, Stall::ClosedLate];

    pub fn as_str(self) -> &'static str {
        match self {
            Stall::Unknown => "unknown",
            Stall::Init => "init",
            Stall::Inited => "inited",
            Stall::Open => "open",
            Stall::Opened => "opened",
            Stall::ClosedLate => "closed-late",
        }
    }
}

impl fmt::Display for Stall {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// The fault that stops `seq` at `stall`, and the state the ISC should
/// record for it.
///
/// A VES-originated transaction has no client-side init: the init stall is
/// a VES that sends a spurious init certificate and stops, which the ISC
/// refuses, so the recorded state stays unknown.
pub fn stall_fault(tdg: &Tdg, seq: u32, stall: Stall, nsb_interval: u64) -> (FaultEntry, TransState) {
    let w = tdg.wrapper(seq).expect("seq");
    let (o, c) = (w.originator(), w.counterparty());
    let entry = |party, fault| FaultEntry { party, seq: Some(seq), fault };
    match stall {
        Stall::Unknown => (entry(Party::Ves, Fault::WithholdInit), TransState::Unknown),
        Stall::Init if o == Party::Client => (entry(Party::Client, Fault::WithholdInited), TransState::Init),
        Stall::Init => (entry(Party::Ves, Fault::SpuriousInit), TransState::Unknown),
        Stall::Inited => (entry(c, Fault::WithholdOpen), TransState::Inited),
        Stall::Open => (entry(o, Fault::WithholdOpened), TransState::Open),
        Stall::Opened => (entry(o, Fault::SkipPost), TransState::Opened),
        Stall::ClosedLate => {
            let ticks = (w.meta.deadline_blocks + 3) * nsb_interval;
            (entry(o, Fault::DelayPost { ticks }), TransState::Closed)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MatrixCell {
    pub tx: String,
    pub stall: Stall,
    pub expected_state: String,
    pub expected_resp: BTreeMap<String, String>,
    pub state: String,
    pub resp: BTreeMap<String, String>,
    pub atomic: bool,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Matrix {
    pub scenario: String,
    pub control_pass: bool,
    pub cells: Vec<MatrixCell>,
}

impl Matrix {
    pub fn all_pass(&self) -> bool {
        self.control_pass && self.cells.iter().all(|c| c.pass)
    }

    /// One row per transaction, one column per stall class.
    pub fn grid(&self) -> String {
        let mut out = format!("{:<4}", "");
        for s in Stall::ALL {
            out += &format!(" {:<18}", s.as_str());
        }
        out.push('\n');
        let mut rows: BTreeMap<&str, Vec<&MatrixCell>> = BTreeMap::new();
        for c in &self.cells {
            rows.entry(&c.tx).or_default().push(c);
        }
        for (tx, cells) in rows {
            out += &format!("{tx:<4}");
            for c in cells {
                let who = c.resp.get(&c.tx).map(String::as_str).unwrap_or("-");
                out += &format!(" {:<18}", format!("{} {who}", if c.pass { "ok" } else { "FAIL" }));
            }
            out.push('\n');
        }
        out += &format!("control (no faults): {}\n", if self.control_pass { "ok" } else { "FAIL" });
        out
    }
}

/// Runs the control scenario and every transaction x stall cell.
pub fn fault_matrix(base: &Scenario, app: &App) -> Result<Matrix> {
    let mut control = base.clone();
    control.faults.clear();
    let ctl = run_with(control, app.clone())?;
    let control_pass = ctl.outcome == "committed" && ctl.resp.is_empty() && ctl.atomicity.holds;

    let mut cells = Vec::new();
    for w in &app.tdg.wrappers {
        for stall in Stall::ALL {
            let (fault, want) = stall_fault(&app.tdg, w.seq, stall, base.timers.nsb_interval);
            let mut s = base.clone();
            s.name = format!("{}-{}-{}", base.name, w.name(), stall);
            s.faults = vec![fault];
            s.expect = Default::default();
            let r = run_with(s, app.clone())?;
            cells.push(cell(&r, w.seq, stall, want, responsible(w, want)));
        }
    }
    Ok(Matrix { scenario: base.name.clone(), control_pass, cells })
}

fn cell(r: &RunReport, seq: u32, stall: Stall, want: TransState, blamed: Party) -> MatrixCell {
    let tx = format!("T{seq}");
    let expected_resp = BTreeMap::from([(tx.clone(), blamed.to_string())]);
    let state = r.state_of(seq).unwrap_or("missing").to_string();
    let pass = r.outcome == "reverted" && r.resp == expected_resp && state == want.as_str() && r.atomicity.holds;
    MatrixCell {
        tx,
        stall,
        expected_state: want.as_str().to_string(),
        expected_resp,
        state,
        resp: r.resp.clone(),
        atomic: r.atomicity.holds,
        pass,
    }
}

/// A seeded mix of link chaos, stalls, crashes and timestamp skew on top
/// of `base`.
pub fn random_scenario(base: &Scenario, tdg: &Tdg, seed: u64) -> Scenario {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut s = base.clone();
    s.name = format!("{}-random-{seed}", base.name);
    s.seed = seed;
    s.expect = Default::default();
    s.faults.clear();
    s.links.clear();
    if rng.gen_bool(0.5) {
        let drop = *[0.3, 0.6, 1.0].choose(&mut rng).expect("non-empty");
        s.links.push(LinkRule { from: "ves".into(), to: "client".into(), both: true, drop, ..LinkRule::default() });
    }
    if rng.gen_bool(0.3) {
        s.links.push(LinkRule { from: "*".into(), to: "*".into(), jitter: rng.gen_range(1..=3), ..LinkRule::default() });
    }
    if rng.gen_bool(0.6) {
        let seq = rng.gen_range(1..=tdg.len() as u32);
        let stall = *Stall::ALL.choose(&mut rng).expect("non-empty");
        s.faults.push(stall_fault(tdg, seq, stall, s.timers.nsb_interval).0);
    }
    if rng.gen_bool(0.25) {
        let party = if rng.gen_bool(0.5) { Party::Ves } else { Party::Client };
        s.faults.push(FaultEntry { party, seq: None, fault: Fault::Crash { at: rng.gen_range(10..150) } });
    }
    if rng.gen_bool(0.1) {
        let party = if rng.gen_bool(0.5) { Party::Ves } else { Party::Client };
        let offset = if rng.gen_bool(0.5) { 20 } else { -20 };
        let seq = rng.gen_range(1..=tdg.len() as u32);
        s.faults.push(FaultEntry { party, seq: Some(seq), fault: Fault::TsSkew { offset } });
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::tests::option_tdg;

    #[test]
    fn stall_faults_target_the_right_party() {
        let tdg = option_tdg();
        // T1 is client-originated, T3 VES-originated.
        let f = |seq, stall| stall_fault(&tdg, seq, stall, 3);
        assert_eq!(f(1, Stall::Unknown).0.party, Party::Ves);
        assert_eq!(f(1, Stall::Init), (FaultEntry { party: Party::Client, seq: Some(1), fault: Fault::WithholdInited }, TransState::Init));
        assert_eq!(f(3, Stall::Init).0.fault, Fault::SpuriousInit);
        assert_eq!(f(3, Stall::Init).1, TransState::Unknown);
        assert_eq!(f(1, Stall::Inited).0.party, Party::Ves);
        assert_eq!(f(3, Stall::Inited).0.party, Party::Client);
        assert_eq!(f(3, Stall::Opened).0, FaultEntry { party: Party::Ves, seq: Some(3), fault: Fault::SkipPost });
        assert_eq!(f(1, Stall::ClosedLate).0.fault, Fault::DelayPost { ticks: 39 });
    }

    #[test]
    fn expected_blame_follows_the_decision_tree() {
        let tdg = option_tdg();
        let blamed = |seq, stall| {
            let (_, st) = stall_fault(&tdg, seq, stall, 3);
            responsible(tdg.wrapper(seq).unwrap(), st)
        };
        for seq in [1, 3] {
            let w = tdg.wrapper(seq).unwrap();
            assert_eq!(blamed(seq, Stall::Unknown), Party::Ves);
            assert_eq!(blamed(seq, Stall::Inited), w.counterparty());
            for s in [Stall::Open, Stall::Opened, Stall::ClosedLate] {
                assert_eq!(blamed(seq, s), w.originator());
            }
        }
        assert_eq!(blamed(1, Stall::Init), Party::Client);
        assert_eq!(blamed(3, Stall::Init), Party::Ves);
    }

    #[test]
    fn random_scenarios_are_reproducible() {
        let tdg = option_tdg();
        let base = Scenario::from_toml("name = \"b\"\napp = \"option\"\n").unwrap();
        let a: Vec<_> = (0..20).map(|s| random_scenario(&base, &tdg, s)).collect();
        let b: Vec<_> = (0..20).map(|s| random_scenario(&base, &tdg, s)).collect();
        assert_eq!(a, b);
        assert!(a.iter().any(|s| !s.faults.is_empty()) && a.iter().any(|s| !s.links.is_empty()));
        assert!(a.iter().all(|s| s.validate(&tdg).is_ok()));
    }
}
