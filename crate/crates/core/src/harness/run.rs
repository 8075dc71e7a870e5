use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

use super::artifacts::{PartyInfo, PublicDirectory, Role};
use super::config::ScenarioConfig;
use super::transcript::Transcript;
use crate::aggregator::{SecureAggregator, TransitPolicy};
use crate::cryptokit::{
    keccak256, keygen, seal_ephemeral, Address, EncryptedEnvelope, KeyPair,
};
use crate::error::{Error, Result};
use crate::flcore::{loss, synthesize_dataset, Dataset, WeightVector};
use crate::ledger::{AuditEvent, Ledger};
use crate::nodes::{DataWorker, ModelOwner};
use crate::store::{ContentId, Store};

/// Order in which workers run their local training. Results are always
/// collected by worker index, so this never changes the outputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Parallel,
    Sequential,
    Shuffled(u64),
}

/// How update envelopes cross the wire.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Transit {
    #[default]
    Sealed,
    /// Negative control: updates travel unencrypted.
    Cleartext,
}

/// Knobs for the test bench. The default is an honest run.
#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    pub execution: Execution,
    /// Permute the order in which the aggregator receives updates.
    pub delivery_shuffle: Option<u64>,
    pub transit: Transit,
    /// Instrumented leak: also put the first plaintext update into the store.
    pub leak_update_into_store: bool,
    /// `(training round index, worker index)` pairs whose update is never sent.
    pub withheld: BTreeSet<(u32, usize)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundMetrics {
    pub round_id: u64,
    pub model_id: u64,
    pub loss_before: f64,
    pub loss_after: f64,
    pub num_received: usize,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub per_round: Vec<RoundMetrics>,
    /// Final checkpoint of the first model.
    pub final_pointer: ContentId,
    pub final_pointers: Vec<ContentId>,
    pub transcript: Transcript,
}

/// What only the test bench knows: plaintext updates, worker secrets and
/// which rounds each worker really contributed to.
#[derive(Debug, Clone, Default)]
pub struct GroundTruth {
    /// `(round_id, worker, serialized update)` for every update a worker produced.
    pub updates: Vec<(u64, Address, Vec<u8>)>,
    pub worker_keys: Vec<KeyPair>,
    /// Rounds in which the aggregator accepted each worker's update.
    pub contributed: BTreeMap<Address, BTreeSet<u64>>,
    /// Rounds each worker was invited to.
    pub invited: BTreeMap<Address, BTreeSet<u64>>,
    pub leaked_blob: Option<ContentId>,
}

/// In-memory result of a simulation, before anything touches disk.
pub struct Simulation {
    pub config: ScenarioConfig,
    pub report: RunReport,
    pub truth: GroundTruth,
    pub store: Arc<Store>,
    pub events: Vec<AuditEvent>,
    pub directory: PublicDirectory,
    pub workers: Vec<DataWorker>,
    pub party_keys: Vec<(Role, usize, KeyPair)>,
    /// Set when the run stopped because a model had no eligible worker.
    pub aborted: Option<Error>,
}

/// `keccak256(seed_be ‖ role ‖ index_be…)`: every per-party seed of a run.
pub fn derive_seed(master: u64, role: &str, index: &[u64]) -> [u8; 32] {
    let mut buf = Vec::with_capacity(8 + role.len() + 8 * index.len());
    buf.extend_from_slice(&master.to_be_bytes());
    buf.extend_from_slice(role.as_bytes());
    for i in index {
        buf.extend_from_slice(&i.to_be_bytes());
    }
    keccak256(&buf)
}

fn seed_u64(master: u64, role: &str, index: &[u64]) -> u64 {
    let s = derive_seed(master, role, index);
    u64::from_be_bytes(s[..8].try_into().expect("8 bytes"))
}

pub fn party_key(master: u64, role: Role, index: usize) -> KeyPair {
    keygen(&derive_seed(master, role.label(), &[index as u64])).expect("32-byte seed")
}

/// The hidden generator every worker's data is drawn from.
pub fn true_weights(config: &ScenarioConfig) -> WeightVector {
    let mut rng = ChaCha20Rng::from_seed(derive_seed(config.seed, "truth", &[]));
    let v = (0..config.input_dim).map(|_| StandardNormal.sample(&mut rng)).collect();
    WeightVector::from_vec(v).expect("finite normals")
}

fn permission_report(ledger: &Ledger, workers: &[DataWorker], model_id: u64) -> String {
    let owner = ledger.model(model_id).map(|m| m.owner.to_hex()).unwrap_or_default();
    let blocked: Vec<String> = workers
        .iter()
        .filter(|w| matches!(ledger.assigned_dataset(model_id, &w.address()), Ok(None)))
        .map(|w| w.address().to_hex())
        .collect();
    format!(
        "owner {owner} is blacklisted on every dataset of {} of {} workers: [{}]",
        blocked.len(),
        workers.len(),
        blocked.join(", ")
    )
}

struct Job {
    worker_index: usize,
    dataset_id: String,
}

/// Runs the whole scenario in memory.
pub fn simulate(config: &ScenarioConfig, opts: &RunOptions) -> Result<Simulation> {
    config.validate()?;
    let seed = config.seed;
    let plan = config.plan.clone();
    let store = Arc::new(Store::new());

    let orchestrator = party_key(seed, Role::Orchestrator, 0);
    let sa_key = party_key(seed, Role::Aggregator, 0);
    let owner_keys: Vec<KeyPair> = (0..config.num_owners).map(|i| party_key(seed, Role::Owner, i)).collect();
    let worker_keys: Vec<KeyPair> = (0..config.num_workers).map(|i| party_key(seed, Role::Worker, i)).collect();

    let mut party_keys = vec![(Role::Orchestrator, 0, orchestrator.clone())];
    party_keys.extend(owner_keys.iter().enumerate().map(|(i, k)| (Role::Owner, i, k.clone())));
    party_keys.extend(worker_keys.iter().enumerate().map(|(i, k)| (Role::Worker, i, k.clone())));
    party_keys.push((Role::Aggregator, 0, sa_key.clone()));
    let directory = PublicDirectory {
        parties: party_keys
            .iter()
            .map(|(role, index, k)| PartyInfo {
                role: *role,
                index: *index,
                address: k.address(),
                public_key: k.public(),
            })
            .collect(),
    };

    let truth_w = true_weights(config);
    let mut workers = Vec::with_capacity(config.num_workers);
    for (i, k) in worker_keys.iter().enumerate() {
        let mut datasets = BTreeMap::new();
        for j in 0..config.datasets_per_worker {
            let ds_seed = seed_u64(seed, "dataset", &[i as u64, j as u64]);
            let d = synthesize_dataset(
                ds_seed,
                config.samples_per_worker,
                config.input_dim,
                &truth_w,
                config.noise_sigma,
            )?;
            datasets.insert(ScenarioConfig::dataset_id(j), d);
        }
        workers.push(DataWorker::new(k.clone(), datasets));
    }
    let pooled = Dataset::concat(workers.iter().flat_map(|w| w.datasets().map(|(_, d)| d)))?;

    let mut ledger = Ledger::new(store.clone(), orchestrator.address());
    for w in &workers {
        ledger.register_worker(w.public_key(), w.dataset_ids())?;
    }
    for rule in &config.blacklists {
        let w = workers[rule.worker_index].address();
        let blocked = rule
            .blocked_owner_indices
            .iter()
            .map(|&o| owner_keys[o].address())
            .collect();
        ledger.set_blacklist(w, w, &rule.dataset_id, blocked)?;
    }
    let owners: Vec<ModelOwner> = owner_keys.iter().cloned().map(ModelOwner::new).collect();
    let mut models = Vec::with_capacity(owners.len());
    for o in &owners {
        models.push(o.publish(&store, &mut ledger, &WeightVector::zeros(config.input_dim), &plan)?);
    }

    let policy = match opts.transit {
        Transit::Sealed => TransitPolicy::RequireSealed,
        Transit::Cleartext => TransitPolicy::AllowCleartext,
    };
    let mut sa = SecureAggregator::new(sa_key.clone(), derive_seed(seed, "aggregator-rng", &[]), store.clone())
        .with_policy(policy);
    let sa_addr = sa.address();
    let sa_pub = sa.public_key();

    let index_of: HashMap<Address, usize> =
        workers.iter().enumerate().map(|(i, w)| (w.address(), i)).collect();
    let mut transcript = Transcript::new();
    let mut truth = GroundTruth {
        worker_keys: worker_keys.clone(),
        ..GroundTruth::default()
    };
    let mut per_round = Vec::new();
    let mut aborted = None;

    'rounds: for r in 0..plan.rounds {
        for &model_id in &models {
            let eligible = ledger.eligible_workers(model_id)?;
            if eligible.is_empty() {
                aborted = Some(Error::NoEligibleWorkers {
                    model_id,
                    report: permission_report(&ledger, &workers, model_id),
                });
                break 'rounds;
            }
            let round_id = ledger.schedule_round(model_id, &eligible, sa_addr)?;
            let invitations = ledger.invitations(round_id)?.to_vec();
            let roster: Vec<_> = eligible
                .iter()
                .map(|a| (*a, workers[index_of[a]].public_key()))
                .collect();
            for (addr, env) in sa.begin_round(round_id, &plan, &roster)? {
                transcript.push(sa_addr, addr, env.to_bytes());
                truth.invited.entry(addr).or_default().insert(round_id);
                workers[index_of[&addr]].accept_anon_envelope(round_id, env);
            }

            let pointer = ledger.model(model_id)?.pointer;
            let checkpoint = WeightVector::from_bytes(&store.get(&pointer)?)?;
            let loss_before = loss(&checkpoint, &pooled)?;

            let jobs: Vec<Job> = invitations
                .iter()
                .map(|inv| Job {
                    worker_index: index_of[&inv.worker],
                    dataset_id: inv.dataset_id.clone(),
                })
                .filter(|j| !opts.withheld.contains(&(r, j.worker_index)))
                .collect();

            let run_job = |job: &Job| -> Result<(WeightVector, EncryptedEnvelope)> {
                let w = &workers[job.worker_index];
                let update = w.local_update(&store, &pointer, &plan, &job.dataset_id)?;
                let env = match opts.transit {
                    Transit::Sealed => {
                        let mut rng = ChaCha20Rng::from_seed(derive_seed(
                            seed,
                            "worker-rng",
                            &[round_id, job.worker_index as u64],
                        ));
                        seal_ephemeral(&mut rng, &sa_pub, &update.to_bytes())?
                    }
                    Transit::Cleartext => EncryptedEnvelope::cleartext(w.public_key(), &update.to_bytes()),
                };
                Ok((update, env))
            };
            let results: Vec<(WeightVector, EncryptedEnvelope)> = match opts.execution {
                Execution::Parallel => jobs.par_iter().map(run_job).collect::<Result<_>>()?,
                Execution::Sequential => jobs.iter().map(run_job).collect::<Result<_>>()?,
                Execution::Shuffled(s) => {
                    let mut order: Vec<usize> = (0..jobs.len()).collect();
                    order.shuffle(&mut ChaCha20Rng::seed_from_u64(s ^ round_id));
                    let mut slots: Vec<Option<(WeightVector, EncryptedEnvelope)>> = vec![None; jobs.len()];
                    for i in order {
                        slots[i] = Some(run_job(&jobs[i])?);
                    }
                    slots.into_iter().map(|s| s.expect("every job ran")).collect()
                }
            };

            let mut delivery: Vec<usize> = (0..jobs.len()).collect();
            if let Some(s) = opts.delivery_shuffle {
                delivery.shuffle(&mut ChaCha20Rng::seed_from_u64(s ^ round_id));
            }
            for i in delivery {
                let (update, env) = &results[i];
                let worker = &workers[jobs[i].worker_index];
                let bytes = update.to_bytes();
                if opts.leak_update_into_store && truth.leaked_blob.is_none() {
                    truth.leaked_blob = Some(store.put(&bytes)?);
                }
                truth.updates.push((round_id, worker.address(), bytes));
                transcript.push(worker.address(), sa_addr, env.to_bytes());
                match sa.receive_update(round_id, worker.address(), env) {
                    Ok(()) => {
                        truth.contributed.entry(worker.address()).or_default().insert(round_id);
                    }
                    Err(Error::Rejected(_)) => {}
                    Err(e) => return Err(e),
                }
            }
            let num_received = truth
                .contributed
                .values()
                .filter(|rounds| rounds.contains(&round_id))
                .count();

            let outcome = sa.finalize_round(round_id)?;
            ledger.record_round(round_id, outcome.new_pointer, outcome.anon_ids)?;
            let after = WeightVector::from_bytes(&store.get(&outcome.new_pointer)?)?;
            per_round.push(RoundMetrics {
                round_id,
                model_id,
                loss_before,
                loss_after: loss(&after, &pooled)?,
                num_received,
            });
        }
    }

    let final_pointers = models
        .iter()
        .map(|&m| ledger.model(m).map(|r| r.pointer))
        .collect::<Result<Vec<_>>>()?;
    Ok(Simulation {
        config: config.clone(),
        report: RunReport {
            per_round,
            final_pointer: final_pointers[0],
            final_pointers,
            transcript,
        },
        truth,
        store,
        events: ledger.events().to_vec(),
        directory,
        workers,
        party_keys,
        aborted,
    })
}
