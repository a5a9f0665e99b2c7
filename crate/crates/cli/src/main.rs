//! `ftdir`: run directory scenarios, check bounds, generate workloads.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use ftdir_core::generate::WeightRange;
use ftdir_core::metrics::{check_bounds, check_structure, BoundReport};
use ftdir_core::partition::verify_partition;
use ftdir_core::scenario::{generate_scenario, run_scenario, GenParams, GraphKind, Scenario};
use ftdir_core::sim::{CostLedger, EventLog, LedgerEntry};
use ftdir_core::{CostKey, Hierarchy, Mode};

#[derive(Parser)]
#[command(name = "ftdir", version, about = "Fault-tolerant mobile-object directory simulator")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Default)]
struct Overrides {
    /// weak or strong
    #[arg(long)]
    mode: Option<Mode>,
    #[arg(long)]
    rho: Option<u64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a scenario file and write the event log, ledgers and structure checks.
    Run {
        scenario: PathBuf,
        #[command(flatten)]
        over: Overrides,
        #[arg(long, default_value = "out")]
        out_dir: PathBuf,
        /// Stop processing events after this time.
        #[arg(long)]
        horizon: Option<u64>,
    },
    /// Check a run directory's logs against the bounds. Exit status 1 on any failure.
    Check {
        dir: PathBuf,
        /// Write report.json here instead of into the run directory.
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
    /// Generate a scenario file.
    Gen {
        /// ring, grid or random
        #[arg(long, default_value = "random")]
        kind: GraphKind,
        #[arg(long, default_value_t = 16)]
        n: usize,
        /// Edge probability in percent (random graphs).
        #[arg(long, default_value_t = 20)]
        p: u32,
        #[arg(long, default_value_t = 1)]
        wmin: u64,
        #[arg(long, default_value_t = 4)]
        wmax: u64,
        #[arg(long, default_value_t = 8)]
        moves: usize,
        #[arg(long, default_value_t = 8)]
        lookups: usize,
        #[arg(long, default_value_t = 1)]
        failures: usize,
        /// Issue requests at random times instead of one after another.
        #[arg(long)]
        concurrent: bool,
        #[command(flatten)]
        over: Overrides,
        /// Output file; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the hierarchy for a scenario's graph and print it with its partition report.
    PartitionStats {
        scenario: PathBuf,
        #[command(flatten)]
        over: Overrides,
        #[arg(long)]
        out_dir: Option<PathBuf>,
    },
}

fn load_scenario(path: &Path, over: &Overrides) -> Result<Scenario> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut sc: Scenario = serde_json::from_str(&text).with_context(|| format!("parsing {}", path.display()))?;
    if let Some(m) = over.mode {
        sc.mode = m;
    }
    if let Some(r) = over.rho {
        sc.rho = r;
    }
    if let Some(s) = over.seed {
        sc.seed = s;
    }
    Ok(sc)
}

fn write(dir: &Path, name: &str, text: &str) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))?;
    let p = dir.join(name);
    fs::write(&p, text).with_context(|| format!("writing {}", p.display()))
}

fn run(sc_path: &Path, over: &Overrides, out: &Path, horizon: Option<u64>) -> Result<ExitCode> {
    let mut sc = load_scenario(sc_path, over)?;
    if horizon.is_some() {
        sc.horizon = horizon;
    }
    let res = run_scenario(&sc)?;
    let sim = &res.sim;
    write(out, "events.jsonl", &sim.log.to_jsonl())?;
    write(out, "ledger.csv", &sim.ledger.to_csv())?;
    write(out, "ledger.json", &serde_json::to_string_pretty(&sim.ledger.rows())?)?;
    let mut structure = BoundReport::default();
    check_structure(sim, &mut structure);
    write(out, "structure.json", &serde_json::to_string_pretty(&structure.checks)?)?;
    write(out, "scenario.json", &serde_json::to_string_pretty(&sc)?)?;
    let done = sim.ops.iter().filter(|o| o.done()).count();
    println!(
        "{}: {} of {} operations completed, {} failures, final time {}, path {}",
        sc.name,
        done,
        sim.ops.len(),
        sim.fail.records.len(),
        sim.now(),
        match &res.path {
            Ok(p) => format!("intact ({} entries)", p.len()),
            Err(e) => format!("broken: {e}"),
        }
    );
    println!("wrote {}", out.display());
    Ok(if res.all_completed() && res.path.is_ok() { ExitCode::SUCCESS } else { ExitCode::from(2) })
}

fn check(dir: &Path, out: Option<&Path>) -> Result<ExitCode> {
    let text = fs::read_to_string(dir.join("events.jsonl")).context("reading events.jsonl")?;
    let log = EventLog::from_jsonl(&text).context("parsing events.jsonl")?;
    let ledger = match fs::read_to_string(dir.join("ledger.json")) {
        Ok(t) => {
            let rows: Vec<(CostKey, LedgerEntry)> = serde_json::from_str(&t).context("parsing ledger.json")?;
            Some(CostLedger::from_rows(rows))
        }
        Err(_) => None,
    };
    let mut rep = check_bounds(&log.events, ledger.as_ref());
    if let Ok(t) = fs::read_to_string(dir.join("structure.json")) {
        rep.checks.extend(serde_json::from_str::<Vec<_>>(&t).context("parsing structure.json")?);
    }
    write(out.unwrap_or(dir), "report.json", &serde_json::to_string_pretty(&rep)?)?;
    print!("{}", rep.to_text());
    Ok(if rep.pass() { ExitCode::SUCCESS } else { ExitCode::FAILURE })
}

#[allow(clippy::too_many_arguments)]
fn gen(
    kind: GraphKind,
    n: usize,
    p: u32,
    wmin: u64,
    wmax: u64,
    moves: usize,
    lookups: usize,
    failures: usize,
    concurrent: bool,
    over: &Overrides,
    out: Option<&Path>,
) -> Result<()> {
    if wmin == 0 || wmax < wmin {
        bail!("weights need 1 <= wmin <= wmax");
    }
    let params = GenParams {
        n,
        p_percent: p,
        weights: WeightRange { min: wmin, max: wmax },
        mode: over.mode.unwrap_or(Mode::Strong),
        rho: over.rho.unwrap_or(2),
        moves,
        lookups,
        failures,
        sequential: !concurrent,
    };
    let sc = generate_scenario(kind, &params, over.seed.unwrap_or(0))?;
    let text = serde_json::to_string_pretty(&sc)?;
    match out {
        Some(p) => fs::write(p, text + "\n").with_context(|| format!("writing {}", p.display()))?,
        None => println!("{text}"),
    }
    Ok(())
}

fn partition_stats(sc_path: &Path, over: &Overrides, out: Option<&Path>) -> Result<()> {
    let sc = load_scenario(sc_path, over)?;
    let g = sc.graph()?;
    let h = Hierarchy::build(&g, sc.rho, sc.mode, sc.seed)?;
    let dump = serde_json::json!({
        "hierarchy": h.dump(),
        "report": verify_partition(&h, &g, false),
    });
    let text = serde_json::to_string_pretty(&dump)?;
    match out {
        Some(d) => write(d, "partition.json", &text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let res = match &cli.cmd {
        Cmd::Run { scenario, over, out_dir, horizon } => run(scenario, over, out_dir, *horizon),
        Cmd::Check { dir, out_dir } => check(dir, out_dir.as_deref()),
        Cmd::Gen { kind, n, p, wmin, wmax, moves, lookups, failures, concurrent, over, out } => gen(
            *kind,
            *n,
            *p,
            *wmin,
            *wmax,
            *moves,
            *lookups,
            *failures,
            *concurrent,
            over,
            out.as_deref(),
        )
        .map(|_| ExitCode::SUCCESS),
        Cmd::PartitionStats { scenario, over, out_dir } => {
            partition_stats(scenario, over, out_dir.as_deref()).map(|_| ExitCode::SUCCESS)
        }
    };
    match res {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(3)
        }
    }
}
