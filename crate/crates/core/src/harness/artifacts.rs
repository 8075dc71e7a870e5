//! Run directory layout.
//!
//! ```text
//! <out>/config.toml          scenario that produced the run
//! <out>/audit_trail.jsonl    public view of the audit trail
//! <out>/chain.jsonl          full chain, including privacy-group events
//! <out>/public_keys.json     directory of every party's address and public key
//! <out>/metrics.csv          round, loss_before, loss_after, num_received
//! <out>/transcript.bin       every wire message, length-prefixed
//! <out>/store/               blobs by hex digest + store_index.jsonl
//! <out>/workers/<addr>.jsonl each worker's saved anon-id envelopes
//! <out>/keys/<role>-<i>.key  local keystore (hex secret scalars)
//! ```

use std::fs;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ScenarioConfig;
use super::run::Simulation;
use super::transcript::Transcript;
use crate::cryptokit::{Address, EncryptedEnvelope, KeyPair, PublicKey, SecretKey};
use crate::error::{Error, Result};
use crate::ledger::{export_audit_trail, read_chain, write_chain, AuditEvent, Observer};
use crate::store::Store;

pub const CONFIG_FILE: &str = "config.toml";
pub const AUDIT_FILE: &str = "audit_trail.jsonl";
pub const CHAIN_FILE: &str = "chain.jsonl";
pub const DIRECTORY_FILE: &str = "public_keys.json";
pub const METRICS_FILE: &str = "metrics.csv";
pub const TRANSCRIPT_FILE: &str = "transcript.bin";
pub const STORE_DIR: &str = "store";
pub const WORKERS_DIR: &str = "workers";
pub const KEYS_DIR: &str = "keys";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Orchestrator,
    Owner,
    Worker,
    Aggregator,
}

impl Role {
    pub fn label(&self) -> &'static str {
        match self {
            Role::Orchestrator => "orchestrator",
            Role::Owner => "owner",
            Role::Worker => "worker",
            Role::Aggregator => "aggregator",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartyInfo {
    pub role: Role,
    pub index: usize,
    pub address: Address,
    pub public_key: PublicKey,
}

/// Public information about every party of a run.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PublicDirectory {
    pub parties: Vec<PartyInfo>,
}

impl PublicDirectory {
    pub fn aggregator(&self) -> Result<&PartyInfo> {
        self.parties
            .iter()
            .find(|p| p.role == Role::Aggregator)
            .ok_or_else(|| Error::NotFound("aggregator in public directory".into()))
    }

    pub fn with_role(&self, role: Role) -> impl Iterator<Item = &PartyInfo> {
        self.parties.iter().filter(move |p| p.role == role)
    }
}

#[derive(Serialize, Deserialize)]
struct SavedEnvelope {
    round_id: u64,
    envelope: EncryptedEnvelope,
}

#[derive(Serialize)]
struct MetricsRow {
    round: u64,
    loss_before: f64,
    loss_after: f64,
    num_received: usize,
}

pub fn key_file_name(role: Role, index: usize) -> String {
    format!("{}-{index}.key", role.label())
}

/// Writes every artifact of `sim` under `dir`.
pub fn write_run(sim: &Simulation, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join(CONFIG_FILE), sim.config.to_toml())?;

    let mut audit = BufWriter::new(fs::File::create(dir.join(AUDIT_FILE))?);
    export_audit_trail(&sim.events, Observer::Public, &mut audit)?;
    audit.flush()?;
    let mut chain = BufWriter::new(fs::File::create(dir.join(CHAIN_FILE))?);
    write_chain(&sim.events, &mut chain)?;
    chain.flush()?;

    fs::write(dir.join(DIRECTORY_FILE), serde_json::to_string_pretty(&sim.directory)?)?;

    let mut csv = csv::Writer::from_path(dir.join(METRICS_FILE))?;
    for m in &sim.report.per_round {
        csv.serialize(MetricsRow {
            round: m.round_id,
            loss_before: m.loss_before,
            loss_after: m.loss_after,
            num_received: m.num_received,
        })?;
    }
    csv.flush()?;

    fs::write(dir.join(TRANSCRIPT_FILE), sim.report.transcript.to_bytes())?;
    sim.store.persist(&dir.join(STORE_DIR))?;

    let workers_dir = dir.join(WORKERS_DIR);
    fs::create_dir_all(&workers_dir)?;
    for w in &sim.workers {
        let mut f = BufWriter::new(fs::File::create(workers_dir.join(format!("{}.jsonl", w.address())))?);
        for (round_id, env) in w.anon_envelopes() {
            serde_json::to_writer(
                &mut f,
                &SavedEnvelope {
                    round_id: *round_id,
                    envelope: env.clone(),
                },
            )?;
            f.write_all(b"\n")?;
        }
        f.flush()?;
    }

    let keys_dir = dir.join(KEYS_DIR);
    fs::create_dir_all(&keys_dir)?;
    for (role, index, k) in &sim.party_keys {
        fs::write(keys_dir.join(key_file_name(*role, *index)), k.secret().expose_hex() + "\n")?;
    }
    Ok(())
}

pub fn read_key_file(path: &Path) -> Result<KeyPair> {
    let text = fs::read_to_string(path)?;
    let bytes = hex::decode(text.trim().trim_start_matches("0x"))
        .map_err(|e| Error::Input(format!("key file {}: {e}", path.display())))?;
    let arr: [u8; 32] = bytes
        .try_into()
        .map_err(|_| Error::Input(format!("key file {} must hold 32 bytes", path.display())))?;
    Ok(KeyPair::from_secret(SecretKey::from_bytes(arr)))
}

pub fn read_worker_envelopes(dir: &Path, worker: &Address) -> Result<Vec<(u64, EncryptedEnvelope)>> {
    let path = dir.join(WORKERS_DIR).join(format!("{worker}.jsonl"));
    let f = fs::File::open(&path).map_err(|e| Error::NotFound(format!("{}: {e}", path.display())))?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let saved: SavedEnvelope = serde_json::from_str(&line)?;
        out.push((saved.round_id, saved.envelope));
    }
    Ok(out)
}

/// Everything an outside observer can read back from a run directory.
pub struct RunArtifacts {
    pub config: ScenarioConfig,
    pub events: Vec<AuditEvent>,
    pub directory: PublicDirectory,
    pub transcript: Transcript,
    pub store: Store,
}

impl RunArtifacts {
    pub fn load(dir: &Path) -> Result<Self> {
        let config = ScenarioConfig::from_toml(&fs::read_to_string(dir.join(CONFIG_FILE))?)?;
        let events = read_chain(BufReader::new(fs::File::open(dir.join(CHAIN_FILE))?))?;
        let directory = serde_json::from_str(&fs::read_to_string(dir.join(DIRECTORY_FILE))?)?;
        let transcript = Transcript::from_bytes(&fs::read(dir.join(TRANSCRIPT_FILE))?)?;
        let store = Store::load(&dir.join(STORE_DIR))?;
        Ok(Self {
            config,
            events,
            directory,
            transcript,
            store,
        })
    }
}
