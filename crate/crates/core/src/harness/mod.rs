//! Scenario runner and adversary test bench.
//!
//! [`run_scenario`] drives the full round loop (publish, eligibility,
//! scheduling, anon-id issuance, local training, sealed delivery,
//! sampling, recording) from one master seed and writes every artifact to a
//! run directory. [`eavesdrop_check`] and [`reidentify_check`] then play the
//! network eavesdropper and the audit-trail re-identifier against those
//! artifacts.

mod artifacts;
mod checks;
mod config;
mod run;
mod transcript;

use std::path::Path;

pub use artifacts::{
    key_file_name, read_key_file, read_worker_envelopes, write_run, PartyInfo, PublicDirectory,
    Role, RunArtifacts, AUDIT_FILE, CHAIN_FILE, CONFIG_FILE, DIRECTORY_FILE, KEYS_DIR,
    METRICS_FILE, STORE_DIR, TRANSCRIPT_FILE, WORKERS_DIR,
};
pub use checks::{
    checkpoint_ids, eavesdrop_check, public_guess_values, reidentify_check, EavesdropReport,
    ReidentifyReport, WorkerEvidence, WorkerRecovery, DEFAULT_ADVERSARY_KEYS, MIN_DISTINCTIVE_LEN,
};
pub use config::{BlacklistRule, ScenarioConfig};
pub use run::{
    derive_seed, party_key, simulate, true_weights, Execution, GroundTruth, RoundMetrics,
    RunOptions, RunReport, Simulation, Transit,
};
pub use transcript::{Transcript, TranscriptEntry};

use crate::error::{Error, Result};

/// Runs an honest scenario and writes its artifacts to `out_dir`. If a model
/// runs out of eligible workers the artifacts so far are still written and
/// the permissioning error is returned.
pub fn run_scenario(config: &ScenarioConfig, out_dir: &Path) -> Result<RunReport> {
    run_scenario_with(config, out_dir, &RunOptions::default()).map(|sim| sim.report)
}

pub fn run_scenario_with(config: &ScenarioConfig, out_dir: &Path, opts: &RunOptions) -> Result<Simulation> {
    let mut sim = simulate(config, opts)?;
    write_run(&sim, out_dir)?;
    match sim.aborted.take() {
        Some(e) => Err(e),
        None => Ok(sim),
    }
}

/// Worker evidence for [`reidentify_check`] taken from a simulation.
pub fn worker_evidence(sim: &Simulation) -> Vec<WorkerEvidence> {
    sim.workers
        .iter()
        .map(|w| WorkerEvidence {
            keypair: w.keypair().clone(),
            envelopes: w.anon_envelopes().to_vec(),
            contributed: sim.truth.contributed.get(&w.address()).cloned().unwrap_or_default(),
        })
        .collect()
}

pub struct CheckOutcome {
    pub eavesdrop: EavesdropReport,
    pub reidentify: ReidentifyReport,
}

impl CheckOutcome {
    pub fn pass(&self) -> bool {
        self.eavesdrop.pass && self.reidentify.pass
    }
}

/// Runs both adversary checks against a run directory. The plaintext
/// updates and contribution sets the checks need are regenerated by
/// re-simulating the stored config, which must reproduce the stored chain.
/// Worker evidence comes from the directory's keystore and saved envelopes.
pub fn check_run(dir: &Path, adversary_keys: usize) -> Result<CheckOutcome> {
    let art = RunArtifacts::load(dir)?;
    let sim = simulate(&art.config, &RunOptions::default())?;
    if sim.events != art.events {
        return Err(Error::Integrity(
            "chain in run directory does not match a replay of its config".into(),
        ));
    }
    let known: Vec<Vec<u8>> = sim.truth.updates.iter().map(|(_, _, u)| u.clone()).collect();
    let eavesdrop = eavesdrop_check(
        &art.transcript,
        &art.directory,
        &art.events,
        &art.store,
        &known,
        adversary_keys,
        art.config.seed ^ 0xeaf5_d409,
    );

    let mut evidence = Vec::new();
    for p in art.directory.with_role(Role::Worker) {
        let keypair = read_key_file(&dir.join(KEYS_DIR).join(key_file_name(Role::Worker, p.index)))?;
        if keypair.address() != p.address {
            return Err(Error::Integrity(format!("key file for worker {} does not match", p.index)));
        }
        evidence.push(WorkerEvidence {
            envelopes: read_worker_envelopes(dir, &p.address)?,
            contributed: sim.truth.contributed.get(&p.address).cloned().unwrap_or_default(),
            keypair,
        });
    }
    let reidentify = reidentify_check(&art.events, &art.directory, &evidence);
    Ok(CheckOutcome {
        eavesdrop,
        reidentify,
    })
}
