use std::fs;
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use flc_core::cryptokit::Address;
use flc_core::harness::{
    check_run, read_key_file, read_worker_envelopes, run_scenario, RunArtifacts, ScenarioConfig, CHAIN_FILE,
    DEFAULT_ADVERSARY_KEYS,
};
use flc_core::ledger::{export_audit_trail, filter_view, read_chain, Observer};
use flc_core::nodes::match_audit;
use flc_core::Error;

/// Federated learning consortium simulator.
#[derive(Parser)]
#[command(name = "flc", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run a scenario and write its artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Print the audit trail as one observer sees it.
    Audit {
        #[arg(long)]
        run: PathBuf,
        #[command(flatten)]
        observer: ObserverArgs,
    },
    /// Match a worker's saved anon-id envelopes against the audit trail.
    Verify {
        #[arg(long)]
        run: PathBuf,
        /// File holding the worker's hex secret key.
        #[arg(long)]
        worker_key: PathBuf,
    },
    /// Run the eavesdropper and re-identification checks.
    Check {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value_t = DEFAULT_ADVERSARY_KEYS)]
        adversary_keys: usize,
    },
}

#[derive(Args)]
#[group(multiple = false)]
struct ObserverArgs {
    /// View as a member address (hex).
    #[arg(long = "as", value_name = "HEX_ADDRESS")]
    member: Option<String>,
    /// View as the public (default).
    #[arg(long)]
    public: bool,
}

fn load_chain(run: &Path) -> Result<Vec<flc_core::ledger::AuditEvent>> {
    let path = run.join(CHAIN_FILE);
    let f = fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
    Ok(read_chain(BufReader::new(f))?)
}

fn cmd_run(config: &Path, out: &Path) -> Result<ExitCode> {
    let text = fs::read_to_string(config).with_context(|| format!("reading {}", config.display()))?;
    let cfg = ScenarioConfig::from_toml(&text)?;
    match run_scenario(&cfg, out) {
        Ok(report) => {
            let mut stdout = io::stdout().lock();
            for m in &report.per_round {
                writeln!(
                    stdout,
                    "round {:>4}  model {}  loss {:.6} -> {:.6}  received {}",
                    m.round_id, m.model_id, m.loss_before, m.loss_after, m.num_received
                )?;
            }
            writeln!(stdout, "final checkpoint {}", report.final_pointer)?;
            writeln!(stdout, "artifacts in {}", out.display())?;
            Ok(ExitCode::SUCCESS)
        }
        Err(e @ Error::NoEligibleWorkers { .. }) => {
            eprintln!("run aborted: {e}");
            eprintln!("partial artifacts in {}", out.display());
            Ok(ExitCode::from(2))
        }
        Err(e) => Err(e.into()),
    }
}

fn cmd_audit(run: &Path, observer: &ObserverArgs) -> Result<ExitCode> {
    let observer = match &observer.member {
        Some(hex) => Observer::Member(Address::from_hex(hex.trim_start_matches("0x"))?),
        None => Observer::Public,
    };
    let events = load_chain(run)?;
    let mut stdout = io::stdout().lock();
    export_audit_trail(&events, observer, &mut stdout)?;
    stdout.flush()?;
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(run: &Path, key_file: &Path) -> Result<ExitCode> {
    let keypair = read_key_file(key_file)?;
    let address = keypair.address();
    let art = RunArtifacts::load(run)?;
    let sa_pub = art.directory.aggregator()?.public_key;
    let envelopes = read_worker_envelopes(run, &address)?;
    let view = filter_view(&art.events, Observer::Member(address));
    let mut stdout = io::stdout().lock();
    let mut flagged = false;
    for m in match_audit(keypair.secret(), &envelopes, &sa_pub, &view) {
        flagged |= m.flagged.is_some();
        let line = json!({
            "round_id": m.round_id,
            "matched": m.matched,
            "anon_id": m.anon_id.map(|a| a.to_hex()),
            "flagged": m.flagged,
        });
        writeln!(stdout, "{line}")?;
    }
    Ok(if flagged { ExitCode::from(1) } else { ExitCode::SUCCESS })
}

fn cmd_check(run: &Path, adversary_keys: usize) -> Result<ExitCode> {
    let out = check_run(run, adversary_keys)?;
    let e = &out.eavesdrop;
    let r = &out.reidentify;
    println!(
        "eavesdrop: {} ({} envelopes x {} keys, {} openings, {} leaks)",
        if e.pass { "PASS" } else { "FAIL" },
        e.envelopes_checked,
        e.adversary_keys,
        e.openings.len(),
        e.leaks.len()
    );
    if let Some(first) = e.first_offense() {
        println!("  first offense: {first}");
    }
    println!(
        "reidentify: {} ({} anon ids, {} guesses, {} public matches, distinct {}, cross-claims {})",
        if r.pass { "PASS" } else { "FAIL" },
        r.published_ids,
        r.guesses_tested,
        r.public_matches,
        r.ids_pairwise_distinct,
        r.cross_claims
    );
    for w in r.workers.iter().filter(|w| !w.exact) {
        println!("  worker {} recovered {:?}, expected {:?}", w.address, w.recovered, w.expected);
    }
    Ok(if out.pass() { ExitCode::SUCCESS } else { ExitCode::from(1) })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Run { config, out } => cmd_run(config, out),
        Command::Audit { run, observer } => cmd_audit(run, observer),
        Command::Verify { run, worker_key } => cmd_verify(run, worker_key),
        Command::Check { run, adversary_keys } => cmd_check(run, *adversary_keys),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
