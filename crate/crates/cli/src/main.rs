//! `autobox`: run vehicle audit scenarios and inspect what they leave behind.
//!
//! Exit codes: 0 success, 1 findings (or a broken/corrupt artifact), 2 usage,
//! parse or I/O error.

mod report;

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use autobox::ledger::{verify_chain, ChainStatus, Ledger};
use autobox::parity::{ParityCluster, ScrubReport};
use autobox::vehiclesim::{Scenario, ScenarioResult, Simulation};
use autobox::Digest;
use clap::{Parser, Subcommand};

use report::RunReport;

#[derive(Parser, Debug)]
#[command(
    name = "autobox",
    version,
    about = "Vehicle module audit trail simulator and verifier"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Run a scenario file and write its artifacts
    Run {
        scenario: PathBuf,
        /// Output directory
        #[arg(short, long, env = "AUTOBOX_OUT")]
        out: PathBuf,
        /// Override the scenario's seed
        #[arg(long)]
        seed: Option<u64>,
        /// Succeed only if the run produces findings
        #[arg(long)]
        expect_findings: bool,
    },
    /// Check a ledger file's hash chain
    Verify { ledger: PathBuf },
    /// Print one vehicle's checkpoint history from a ledger file
    History {
        ledger: PathBuf,
        /// Vehicle key, 64 lowercase hex characters
        vehicle_key: String,
        /// One tab-separated line per checkpoint
        #[arg(long)]
        machine: bool,
    },
    /// Scrub a parity cluster snapshot
    Audit { snapshot: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Run {
            scenario,
            out,
            seed,
            expect_findings,
        } => cmd_run(&scenario, &out, seed, expect_findings),
        Command::Verify { ledger } => cmd_verify(&ledger),
        Command::History {
            ledger,
            vehicle_key,
            machine,
        } => cmd_history(&ledger, &vehicle_key, machine),
        Command::Audit { snapshot } => cmd_audit(&snapshot),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn cmd_run(path: &Path, out: &Path, seed: Option<u64>, expect_findings: bool) -> Result<u8> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut scenario = Scenario::from_json(&text).with_context(|| format!("{}", path.display()))?;
    if let Some(seed) = seed {
        scenario.seed = seed;
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let ledger_path = out.join("ledger.log");
    if ledger_path.exists() {
        fs::remove_file(&ledger_path)?;
    }

    let started = Instant::now();
    let result = Simulation::with_ledger_file(scenario, &ledger_path)?.finish()?;
    let elapsed = started.elapsed().as_millis();

    let report = RunReport::new(&result, expect_findings);
    write_artifacts(out, &result, &report)?;
    print!("{}", report.summary(elapsed));
    println!("artifacts in {}", out.display());
    Ok(report.exit_status)
}

fn write_artifacts(out: &Path, result: &ScenarioResult, report: &RunReport) -> Result<()> {
    fs::write(out.join("verdicts.tsv"), result.verdict_text())?;
    fs::write(out.join("ground_truth.jsonl"), result.ground_truth.to_jsonl())?;
    fs::write(out.join("approved_library.tsv"), result.library.to_file())?;
    fs::write(out.join("report.json"), report.to_json())?;
    for v in &result.vehicles {
        let dir = out.join("vehicles").join(v.vin());
        fs::create_dir_all(&dir)?;
        fs::write(dir.join("mirror.dump"), v.master().mirror_dump())?;
        for m in v.modules() {
            if let Some(node) = v.network().node(&m.node_id) {
                fs::write(dir.join(format!("node-{}.dump", m.metadata.module_id)), node.dump())?;
            }
        }
        for (i, c) in v.clusters().iter().enumerate() {
            fs::write(dir.join(format!("cluster-{i}.parity")), c.cluster.to_snapshot())?;
        }
    }
    Ok(())
}

fn cmd_verify(path: &Path) -> Result<u8> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    match verify_chain(&bytes) {
        Ok(ChainStatus::Valid { blocks }) => {
            println!("valid ({blocks} blocks)");
            Ok(0)
        }
        Ok(status @ ChainStatus::BrokenAt(_)) => {
            println!("{status}");
            Ok(1)
        }
        Err(e) => {
            println!("format error: {e}");
            Ok(1)
        }
    }
}

fn cmd_history(path: &Path, key: &str, machine: bool) -> Result<u8> {
    let key: Digest = match key.parse() {
        Ok(k) => k,
        Err(e) => bail!("vehicle key `{key}`: {e}"),
    };
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let ledger = match Ledger::from_file_bytes(&bytes) {
        Ok(l) => l,
        Err(e) => {
            println!("ledger rejected: {e}");
            return Ok(1);
        }
    };
    let history = ledger.query_history(&key);
    let mut out = String::new();
    if machine {
        for h in &history {
            out.push_str(&h.to_machine_line());
            out.push('\n');
        }
    } else {
        out.push_str(&format!(
            "{:>5}  {:>10}  {:<16}  {:>5}  {}\n",
            "seq", "sim_time", "trigger", "block", "meta_digest"
        ));
        for h in &history {
            out.push_str(&format!(
                "{:>5}  {:>10}  {:<16}  {:>5}  {}\n",
                h.checkpoint_seq,
                h.sim_time,
                h.trigger.as_str(),
                h.block_index,
                h.meta_digest
            ));
        }
        out.push_str(&format!("{} checkpoints\n", history.len()));
    }
    write_stdout(&out)?;
    Ok(0)
}

/// Writes to stdout, treating a closed pipe as success.
fn write_stdout(text: &str) -> Result<()> {
    match std::io::stdout().lock().write_all(text.as_bytes()) {
        Err(e) if e.kind() != std::io::ErrorKind::BrokenPipe => Err(e.into()),
        _ => Ok(()),
    }
}

fn cmd_audit(path: &Path) -> Result<u8> {
    let bytes = fs::read(path).with_context(|| format!("reading {}", path.display()))?;
    let cluster = ParityCluster::from_snapshot(&bytes).with_context(|| format!("{}", path.display()))?;
    match cluster.scrub() {
        Ok(ScrubReport::Clean) => {
            println!(
                "clean ({} data devices, {} records indexed)",
                cluster.data_count(),
                cluster.index().len()
            );
            Ok(0)
        }
        Ok(ScrubReport::Corrupt { device, records }) => {
            println!("corrupt: device {device}, {} records affected", records.len());
            for r in records {
                println!("  {r}");
            }
            Ok(1)
        }
        Err(e) => {
            println!("uncorrectable: {e}");
            Ok(1)
        }
    }
}
