//! `trialmesh`: build a multi-site trial network, play scenario
//! scripts against it, and audit the chains it leaves behind.

mod config;
mod scenario;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::Serialize;

use trialmesh_core::audit;
use trialmesh_core::exec::{run_bench_load, BenchReport};
use trialmesh_core::identity::IdentityError;
use trialmesh_core::ledger::{Ledger, LedgerError};
use trialmesh_core::network::NetError;
use trialmesh_core::protocol::{ProtocolError, TrialProtocol};
use trialmesh_core::trial::{DriverError, TrialDriver};

use config::{load_json, NetworkConfig};
use scenario::{run_scenario, Scenario};

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("bad JSON in {path}: {err}")]
    Json { path: String, err: serde_json::Error },
    #[error(transparent)]
    Protocol(#[from] ProtocolError),
    #[error(transparent)]
    Net(#[from] NetError),
    #[error(transparent)]
    Driver(#[from] DriverError),
    #[error(transparent)]
    Ledger(#[from] LedgerError),
    #[error(transparent)]
    Identity(#[from] IdentityError),
    #[error("{0}")]
    BadInput(String),
}

#[derive(Parser)]
#[command(name = "trialmesh", version, about = "Permissioned ledger harness for multi-site clinical trials")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Validate configs, build the network, and persist its state
    Init {
        /// Trial protocol JSON
        #[arg(long)]
        protocol: PathBuf,
        /// Identity roster JSON
        #[arg(long)]
        network: PathBuf,
        /// Output directory for ledgers and identities
        #[arg(long)]
        out: PathBuf,
        /// Blob store directory (defaults to <out>/blobs)
        #[arg(long)]
        blob_dir: Option<PathBuf>,
    },
    /// Play a scenario script against a fresh network
    Run {
        #[arg(long)]
        protocol: PathBuf,
        #[arg(long)]
        network: PathBuf,
        /// Scenario script JSON
        #[arg(long)]
        scenario: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        blob_dir: Option<PathBuf>,
    },
    /// Recompute hashes and links over saved block files
    Verify {
        /// A .blocks file or a directory of them
        path: PathBuf,
    },
    /// Fold saved ledgers into a study report
    Audit {
        /// Directory of .blocks files
        #[arg(long)]
        ledgers: PathBuf,
        #[arg(long, default_value_t = 0)]
        from: u64,
        #[arg(long, default_value_t = u64::MAX)]
        to: u64,
        /// Write the report here instead of stdout
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the committed history of one key
    History {
        #[arg(long)]
        ledgers: PathBuf,
        #[arg(long)]
        channel: String,
        #[arg(long)]
        key: String,
    },
    /// Time the multi-channel commit path
    Bench {
        #[arg(long, default_value_t = 4)]
        channels: usize,
        #[arg(long, default_value_t = 250)]
        txs: usize,
        #[arg(long, value_enum, default_value_t = BenchMode::Both)]
        mode: BenchMode,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum BenchMode {
    Sequential,
    Parallel,
    Both,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error: {err}");
            ExitCode::from(2)
        }
    }
}

fn dispatch(command: Command) -> Result<ExitCode, CliError> {
    match command {
        Command::Init { protocol, network, out, blob_dir } => init(&protocol, &network, &out, blob_dir),
        Command::Run { protocol, network, scenario, out, blob_dir } => {
            run(&protocol, &network, &scenario, &out, blob_dir)
        }
        Command::Verify { path } => verify(&path),
        Command::Audit { ledgers, from, to, out } => audit_cmd(&ledgers, from, to, out),
        Command::History { ledgers, channel, key } => history(&ledgers, &channel, &key),
        Command::Bench { channels, txs, mode } => bench(channels, txs, mode),
    }
}

fn build_driver(
    protocol_path: &Path,
    network_path: &Path,
    out: &Path,
    blob_dir: Option<PathBuf>,
) -> Result<TrialDriver, CliError> {
    let protocol: TrialProtocol = load_json(protocol_path)?;
    protocol.validate()?;
    let network: NetworkConfig = load_json(network_path)?;
    let blob_dir = blob_dir.unwrap_or_else(|| out.join("blobs"));
    fs::create_dir_all(&blob_dir)?;
    Ok(TrialDriver::standard(&network.roster_tuples(), &blob_dir, &protocol)?)
}

/// Writes the orderer's replicas plus the identity directory under
/// `out`, returning the per-channel index.
fn persist(driver: &TrialDriver, out: &Path) -> Result<(), CliError> {
    let ledger_dir = out.join("ledgers");
    fs::create_dir_all(&ledger_dir)?;
    let index = driver.net.save_ledgers(&ledger_dir)?;
    let index_json = serde_json::to_string_pretty(&index).expect("index serializes");
    fs::write(ledger_dir.join("index.json"), index_json + "\n")?;
    driver.net.msp.export_directory(&out.join("identities.json"))?;
    Ok(())
}

fn init(
    protocol_path: &Path,
    network_path: &Path,
    out: &Path,
    blob_dir: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    fs::create_dir_all(out)?;
    let driver = build_driver(protocol_path, network_path, out, blob_dir)?;
    persist(&driver, out)?;
    for channel_id in driver.net.channel_ids() {
        let ledger = driver.net.node_ledger(trialmesh_core::network::ORDERER_ID, &channel_id)?;
        println!(
            "{channel_id}: height={} head={}",
            ledger.height(),
            hex::encode(ledger.head_hash())
        );
    }
    println!("state written to {}", out.display());
    Ok(ExitCode::SUCCESS)
}

fn run(
    protocol_path: &Path,
    network_path: &Path,
    scenario_path: &Path,
    out: &Path,
    blob_dir: Option<PathBuf>,
) -> Result<ExitCode, CliError> {
    fs::create_dir_all(out)?;
    let mut driver = build_driver(protocol_path, network_path, out, blob_dir)?;
    let scenario: Scenario = load_json(scenario_path)?;
    let summary = run_scenario(&mut driver, &scenario, out)?;
    persist(&driver, out)?;

    for record in &summary.events {
        let first_line = record.detail.lines().next().unwrap_or("");
        let mark = match record.matched {
            Some(true) => " ",
            Some(false) => "!",
            None => " ",
        };
        println!("{mark}[{:02}] {:<14} {:<8} {first_line}", record.index, record.op, record.outcome);
    }
    let summary_json = serde_json::to_string_pretty(&summary).expect("summary serializes");
    fs::write(out.join("summary.json"), summary_json + "\n")?;
    println!(
        "scenario '{}': {} events, {} mismatches, final day {}",
        summary.scenario,
        summary.events.len(),
        summary.mismatches,
        summary.final_day
    );
    println!("summary written to {}", out.join("summary.json").display());
    if summary.mismatches == 0 {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(1))
    }
}

fn block_files(path: &Path) -> Result<Vec<PathBuf>, CliError> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = fs::read_dir(path)?
        .filter_map(|entry| entry.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|ext| ext == "blocks"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(CliError::BadInput(format!("no .blocks files under {}", path.display())));
    }
    Ok(files)
}

fn verify(path: &Path) -> Result<ExitCode, CliError> {
    let mut all_valid = true;
    for file in block_files(path)? {
        let name = file.file_name().unwrap_or_default().to_string_lossy().to_string();
        let verdict = Ledger::verify_blocks_file(&file)?;
        if verdict.valid {
            let channel = file.file_stem().unwrap_or_default().to_string_lossy().to_string();
            let ledger = Ledger::load_blocks(&file, &channel)?;
            println!("{name}: OK height={} head={}", ledger.height(), hex::encode(ledger.head_hash()));
        } else {
            all_valid = false;
            println!(
                "{name}: INVALID at height {}: {}",
                verdict.first_bad_height.unwrap_or(0),
                verdict.reason
            );
        }
    }
    Ok(if all_valid { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn load_ledger_dir(dir: &Path) -> Result<BTreeMap<String, Ledger>, CliError> {
    let mut ledgers = BTreeMap::new();
    for file in block_files(dir)? {
        let channel = file
            .file_stem()
            .ok_or_else(|| CliError::BadInput(format!("bad file name {}", file.display())))?
            .to_string_lossy()
            .to_string();
        ledgers.insert(channel.clone(), Ledger::load_blocks(&file, &channel)?);
    }
    Ok(ledgers)
}

fn audit_cmd(dir: &Path, from: u64, to: u64, out: Option<PathBuf>) -> Result<ExitCode, CliError> {
    let ledgers = load_ledger_dir(dir)?;
    let refs: BTreeMap<String, &Ledger> =
        ledgers.iter().map(|(id, l)| (id.clone(), l)).collect();
    let report = audit::from_ledgers(&refs, from, to);
    let json = report.to_json() + "\n";
    match out {
        Some(path) => {
            fs::write(&path, json)?;
            println!("report written to {}", path.display());
        }
        None => print!("{json}"),
    }
    Ok(ExitCode::SUCCESS)
}

fn history(dir: &Path, channel: &str, key: &str) -> Result<ExitCode, CliError> {
    let file = dir.join(format!("{channel}.blocks"));
    if !file.is_file() {
        return Err(CliError::BadInput(format!("no such channel file {}", file.display())));
    }
    let ledger = Ledger::load_blocks(&file, channel)?;
    let entries = ledger.query_history(key);
    if entries.is_empty() {
        println!("no history for '{key}' on '{channel}'");
        return Ok(ExitCode::SUCCESS);
    }
    for entry in entries {
        let value = match &entry.value {
            Some(bytes) => match std::str::from_utf8(bytes) {
                Ok(text) => text.to_string(),
                Err(_) => format!("0x{}", hex::encode(bytes)),
            },
            None => "(deleted)".to_string(),
        };
        println!("height={} tx={} value={value}", entry.block_height, entry.tx_id);
    }
    Ok(ExitCode::SUCCESS)
}

#[derive(Serialize)]
struct BenchComparison {
    parallel: BenchReport,
    sequential: BenchReport,
    speedup: f64,
}

fn bench(channels: usize, txs: usize, mode: BenchMode) -> Result<ExitCode, CliError> {
    let pretty = |report: &BenchReport| {
        serde_json::to_string_pretty(report).expect("report serializes")
    };
    match mode {
        BenchMode::Sequential => println!("{}", pretty(&run_bench_load(channels, txs, false))),
        BenchMode::Parallel => println!("{}", pretty(&run_bench_load(channels, txs, true))),
        BenchMode::Both => {
            let parallel = run_bench_load(channels, txs, true);
            let sequential = run_bench_load(channels, txs, false);
            let speedup = sequential.elapsed_secs / parallel.elapsed_secs.max(1e-9);
            let comparison = BenchComparison { parallel, sequential, speedup };
            println!("{}", serde_json::to_string_pretty(&comparison).expect("report serializes"));
        }
    }
    Ok(ExitCode::SUCCESS)
}
