//! Application fixtures: an HSL program, its contract interfaces, the VES
//! configuration and the chain genesis files.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use anyhow::{anyhow, bail, Context, Result};
use serde::Deserialize;

use crate::chain::Genesis;
use crate::compiler::{compile, Tdg, VesConfig};
use crate::hsl::{parse_contract_interface, parse_hsl, validate, ContractInterface};

/// `app.toml` in an application directory.
///
/// ```toml
/// program = "option.hsl"
/// ves = "ves.toml"
/// genesis = ["chain_n.toml", "chain_x.toml"]
/// escrow = "0x15c0"
/// ```
#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
struct Manifest {
    program: String,
    ves: String,
    genesis: Vec<String>,
    escrow: String,
}

#[derive(Debug, Clone)]
pub struct App {
    pub dir: PathBuf,
    pub config: VesConfig,
    pub tdg: Tdg,
    pub genesis: Vec<Genesis>,
    /// ISC escrow account on the ISC chain.
    pub escrow: String,
}

impl App {
    pub fn load(dir: &Path) -> Result<App> {
        let path = dir.join("app.toml");
        let text = std::fs::read_to_string(&path).with_context(|| format!("reading {}", path.display()))?;
        let m: Manifest = toml::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
        let config = VesConfig::load(&dir.join(&m.ves)).map_err(|e| anyhow!("{e}"))?;
        let tdg = compile_program(&dir.join(&m.program), dir, &config)?;
        let genesis = m.genesis.iter().map(|g| Genesis::load(&dir.join(g))).collect::<Result<Vec<_>>>()?;
        for w in &tdg.wrappers {
            if !genesis.iter().any(|g| g.id == w.meta.chain) {
                bail!("{}: no genesis for chain {}", dir.display(), w.meta.chain);
            }
        }
        if !genesis.iter().any(|g| g.id == config.isc_chain && g.accounts.iter().any(|a| a.address == m.escrow)) {
            bail!("{}: escrow {} is not an account on {}", dir.display(), m.escrow, config.isc_chain);
        }
        Ok(App { dir: dir.to_path_buf(), config, tdg, genesis, escrow: m.escrow })
    }
}

/// Every `<name>.iface` in `dir`, keyed by `<name>` as used in `import(...)`.
pub fn load_interfaces(dir: &Path) -> Result<BTreeMap<String, ContractInterface>> {
    let mut out = BTreeMap::new();
    let entries = std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))?;
    let mut paths: Vec<PathBuf> = entries.filter_map(|e| e.ok().map(|e| e.path())).collect();
    paths.sort();
    for p in paths {
        let Some(name) = p.file_name().and_then(|n| n.to_str()).and_then(|n| n.strip_suffix(".iface")) else {
            continue;
        };
        let text = std::fs::read_to_string(&p).with_context(|| format!("reading {}", p.display()))?;
        let iface = parse_contract_interface(&text).map_err(|d| anyhow!("{}", d.render(&p.display().to_string())))?;
        out.insert(name.to_string(), iface);
    }
    Ok(out)
}

pub fn compile_program(program: &Path, ifaces: &Path, config: &VesConfig) -> Result<Tdg> {
    let file = program.display().to_string();
    let text = std::fs::read_to_string(program).with_context(|| format!("reading {file}"))?;
    let ast = parse_hsl(&text).map_err(|d| anyhow!("{}", d.render(&file)))?;
    let validated = validate(&ast, &load_interfaces(ifaces)?).map_err(|d| anyhow!("{}", d.render(&file)))?;
    compile(&validated, config).map_err(|d| anyhow!("{}", d.render(&file)))
}
