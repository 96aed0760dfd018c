use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use crate::compiler::{Party, Tdg};
use crate::netsim::LinkRule;
use crate::parties::{Actor, FaultEntry};

/// Environment variable naming the directory that `app` paths resolve
/// against; defaults to the scenario file's directory.
pub const CONFIG_DIR_ENV: &str = "INTERCHAIN_CONFIG_DIR";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Timers {
    /// Timestamp freshness window, NSB blocks.
    pub delta: u64,
    /// NSB blocks from activation to settlement.
    pub isc_timeout: u64,
    pub setup_timeout: u64,
    /// Ticks per NSB block.
    pub nsb_interval: u64,
    /// Ticks a party waits for Cert^c before building the on-chain proof.
    pub patience: u64,
    pub message_delay: u64,
}

impl Default for Timers {
    fn default() -> Self {
        Timers { delta: 5, isc_timeout: 150, setup_timeout: 20, nsb_interval: 3, patience: 4, message_delay: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NsbSection {
    pub n: usize,
    pub k: usize,
    pub byzantine: BTreeSet<usize>,
    pub capacity: usize,
    /// Closure by watching instead of per-transaction claims.
    pub watching: bool,
    /// Inject forged and premature status claims every epoch.
    pub false_claims: bool,
}

impl Default for NsbSection {
    fn default() -> Self {
        NsbSection { n: 4, k: 3, byzantine: BTreeSet::new(), capacity: 64, watching: false, false_claims: false }
    }
}

/// Verdicts the run must produce; absent fields are not checked.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Expect {
    pub outcome: Option<String>,
    /// `T<seq>` -> blamed party; an empty table means no blame.
    pub resp: Option<BTreeMap<String, String>>,
    pub states: Option<BTreeMap<String, String>>,
    pub max_nsb_txs_per_tid: Option<usize>,
    /// Substrings that must each appear in some rejection line.
    #[serde(default)]
    pub rejections: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// Application directory, relative to the config directory.
    pub app: String,
    #[serde(default)]
    pub seed: u64,
    /// Hard stop; derived from the timers when absent.
    pub max_ticks: Option<u64>,
    #[serde(default)]
    pub timers: Timers,
    #[serde(default)]
    pub nsb: NsbSection,
    #[serde(default)]
    pub links: Vec<LinkRule>,
    #[serde(default)]
    pub faults: Vec<FaultEntry>,
    #[serde(default)]
    pub expect: Expect,
    /// Directory `app` resolves against; not part of the file.
    #[serde(skip)]
    pub config_dir: PathBuf,
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Scenario> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Scenario> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        let mut s = Scenario::from_toml(&text).with_context(|| format!("parsing {}", path.display()))?;
        s.config_dir = match std::env::var_os(CONFIG_DIR_ENV) {
            Some(d) => PathBuf::from(d),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        Ok(s)
    }

    pub fn app_dir(&self) -> PathBuf {
        self.config_dir.join(&self.app)
    }

    pub fn max_ticks(&self) -> u64 {
        self.max_ticks.unwrap_or((self.timers.setup_timeout + self.timers.isc_timeout + 10) * self.timers.nsb_interval + 20)
    }

    /// Checks references against the compiled graph and the timer budget.
    pub fn validate(&self, tdg: &Tdg) -> Result<()> {
        let t = &self.timers;
        if t.nsb_interval == 0 || t.message_delay == 0 {
            bail!("nsb_interval and message_delay must be positive");
        }
        if self.nsb.k == 0 || self.nsb.k > self.nsb.n || self.nsb.byzantine.iter().any(|&b| b >= self.nsb.n) {
            bail!("NSB quorum needs 1 <= k <= n and byzantine peers below n");
        }
        for f in &self.faults {
            if let Some(seq) = f.seq {
                if tdg.wrapper(seq).is_none() {
                    bail!("fault for {} names unknown transaction T{seq}", f.party);
                }
            }
        }
        for l in &self.links {
            for end in [&l.from, &l.to] {
                if end != "*" && Actor::parse(end).is_none() {
                    bail!("link endpoint {end:?} is not an actor");
                }
            }
            if !(0.0..=1.0).contains(&l.drop) {
                bail!("drop probability {} outside [0, 1]", l.drop);
            }
        }
        let path = critical_path(tdg);
        let expects_commit = self.expect.outcome.as_deref().is_none_or(|o| o == "committed");
        if expects_commit && self.faults.is_empty() && t.isc_timeout <= path {
            bail!("isc_timeout {} does not exceed the critical path of {path} blocks", t.isc_timeout);
        }
        Ok(())
    }

    pub fn parse_resp(&self) -> Option<BTreeMap<u32, Party>> {
        let resp = self.expect.resp.as_ref()?;
        resp.iter().map(|(k, v)| Some((k.strip_prefix('T')?.parse().ok()?, Party::parse(v)?))).collect()
    }
}

/// Longest chain of deadlines through the graph, in NSB blocks.
pub fn critical_path(tdg: &Tdg) -> u64 {
    let mut best: BTreeMap<u32, u64> = BTreeMap::new();
    let mut order: Vec<u32> = tdg.wrappers.iter().map(|w| w.seq).collect();
    order.sort_by_key(|&s| tdg.ancestors(s).len());
    for s in order {
        let own = tdg.wrapper(s).map(|w| w.meta.deadline_blocks).unwrap_or(0);
        let before = tdg.preds(s).iter().map(|p| best.get(p).copied().unwrap_or(0)).max().unwrap_or(0);
        best.insert(s, before + own);
    }
    best.values().copied().max().unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::compiler::tests::option_tdg;

    fn base() -> Scenario {
        Scenario::from_toml("name = \"s\"\napp = \"option\"\n").unwrap()
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let s = base();
        assert_eq!(s.timers, Timers::default());
        assert_eq!((s.nsb.n, s.nsb.k), (4, 3));
        assert_eq!(s.max_ticks(), (20 + 150 + 10) * 3 + 20);
        assert!(s.validate(&option_tdg()).is_ok());
    }

    #[test]
    fn unknown_fields_are_errors() {
        assert!(Scenario::from_toml("name = \"s\"\napp = \"a\"\ncolour = 1\n").is_err());
        assert!(Scenario::from_toml("name = \"s\"\napp = \"a\"\n[timers]\ndelay = 1\n").is_err());
    }

    #[test]
    fn critical_path_follows_the_longest_chain() {
        // T1 (10) then T5 (120) beats T1, T2, T3, T4 (10 + 30 * 3).
        assert_eq!(critical_path(&option_tdg()), 130);
    }

    #[test]
    fn validation_catches_bad_references() {
        let tdg = option_tdg();
        let mut s = base();
        s.timers.isc_timeout = 100;
        assert!(s.validate(&tdg).unwrap_err().to_string().contains("critical path"));
        s.expect.outcome = Some("reverted".into());
        assert!(s.validate(&tdg).is_ok());

        let mut s = base();
        s.links.push(LinkRule { from: "mallory".into(), to: "*".into(), ..LinkRule::default() });
        assert!(s.validate(&tdg).is_err());

        let mut s = base();
        s.faults.push(FaultEntry { party: Party::Ves, seq: Some(9), fault: crate::parties::Fault::WithholdInit });
        assert!(s.validate(&tdg).is_err());

        let mut s = base();
        s.nsb.byzantine.insert(4);
        assert!(s.validate(&tdg).is_err());
    }

    #[test]
    fn expected_resp_parses() {
        let s = Scenario::from_toml("name = \"s\"\napp = \"a\"\n[expect]\nresp = { T3 = \"client\" }\n").unwrap();
        assert_eq!(s.parse_resp(), Some(BTreeMap::from([(3, Party::Client)])));
    }
}
