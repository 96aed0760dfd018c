use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context, Result};
use clap::{Parser, Subcommand};

use interchain::compiler::{stake_requirement, Party, Tdg, VesConfig};
use interchain::harness::{compile_program, fault_matrix, App, Scenario, World, CONFIG_DIR_ENV};

#[derive(Parser)]
#[command(name = "interchain", about = "Compile HSL programs and run cross-chain sessions")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Compile an HSL program into a transaction dependency graph.
    Compile {
        program: PathBuf,
        /// Directory of `<name>.iface` contract interfaces.
        #[arg(long)]
        ifaces: PathBuf,
        #[arg(short = 'o', long = "out")]
        out: PathBuf,
        /// VES configuration; defaults to `ves.toml` in the config directory
        /// or, failing that, the interface directory.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a scenario and write its report.
    Run {
        scenario: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Run the accountability grid for a scenario.
    Matrix {
        scenario: PathBuf,
        #[arg(long)]
        report: Option<PathBuf>,
    },
    /// Stake a party must lock for a compiled graph.
    Stake {
        tdg: PathBuf,
        #[arg(long)]
        party: String,
        #[arg(long, default_value_t = 20)]
        cap: usize,
    },
}

/// Writes through a sibling temporary file so readers never see a partial
/// output.
fn write_atomic(path: &Path, text: &str) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).with_context(|| format!("writing {}", path.display()))?;
    std::io::Write::write_all(&mut tmp, text.as_bytes())?;
    tmp.persist(path).map_err(|e| anyhow!("writing {}: {e}", path.display()))?;
    Ok(())
}

fn load_scenario(path: &Path) -> Result<Option<Scenario>> {
    if !path.is_file() {
        eprintln!("error: no scenario at {}", path.display());
        return Ok(None);
    }
    Scenario::load(path).map(Some)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.cmd) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn dispatch(cmd: Cmd) -> Result<ExitCode> {
    match cmd {
        Cmd::Compile { program, ifaces, out, config } => {
            let config = config.unwrap_or_else(|| {
                let from_env = std::env::var_os(CONFIG_DIR_ENV).map(|d| PathBuf::from(d).join("ves.toml"));
                from_env.filter(|p| p.is_file()).unwrap_or_else(|| ifaces.join("ves.toml"))
            });
            let cfg = VesConfig::load(&config).map_err(|e| anyhow!("{e}"))?;
            let tdg = compile_program(&program, &ifaces, &cfg)?;
            write_atomic(&out, &tdg.to_json())?;
            println!("{} wrappers, {} edges -> {}", tdg.len(), tdg.edges.len(), out.display());
            Ok(ExitCode::SUCCESS)
        }
        Cmd::Run { scenario, seed, report } => {
            let Some(mut s) = load_scenario(&scenario)? else { return Ok(ExitCode::from(2)) };
            if let Some(seed) = seed {
                s.seed = seed;
            }
            let app = App::load(&s.app_dir())?;
            let (r, _) = World::new(s, app)?.run();
            match report {
                Some(p) => write_atomic(&p, &r.to_json())?,
                None => print!("{}", r.to_json()),
            }
            for f in r.expectation_failures.iter().chain(&r.atomicity.violations) {
                eprintln!("{}: {f}", r.scenario);
            }
            eprintln!("{}: {} ({})", r.scenario, r.outcome, if r.passed() { "pass" } else { "FAIL" });
            Ok(if r.passed() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Matrix { scenario, report } => {
            let Some(s) = load_scenario(&scenario)? else { return Ok(ExitCode::from(2)) };
            let app = App::load(&s.app_dir())?;
            let m = fault_matrix(&s, &app)?;
            print!("{}", m.grid());
            if let Some(p) = report {
                let v = serde_json::to_value(&m)?;
                write_atomic(&p, &(serde_json::to_string_pretty(&v)? + "\n"))?;
            }
            Ok(if m.all_pass() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
        }
        Cmd::Stake { tdg, party, cap } => {
            let text = std::fs::read_to_string(&tdg).with_context(|| format!("reading {}", tdg.display()))?;
            let g = Tdg::from_json(&text).map_err(|e| anyhow!("{}: {e}", tdg.display()))?;
            let p = Party::parse(&party).ok_or_else(|| anyhow!("unknown party {party:?}; use ves or client"))?;
            let v = stake_requirement(&g, p, cap).map_err(|e| anyhow!("{e}"))?;
            println!("{v}");
            Ok(ExitCode::SUCCESS)
        }
    }
}
