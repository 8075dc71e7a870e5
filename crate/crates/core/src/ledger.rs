//! Simulated consortium chain.
//!
//! [`Ledger`] holds the orchestrator contract state (model registry, worker
//! registry, blacklist table, round records) and an append-only event log.
//! Every mutation appends exactly one event per block. Round scheduling is
//! written twice: a private event readable only by the round's privacy
//! group, and a public stub carrying nothing but the round and model ids.

use std::collections::{BTreeMap, BTreeSet};
use std::io::{BufRead, Write};
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::cryptokit::{derive_address, Address, AnonId, PublicKey};
use crate::error::{Error, Result};
use crate::flcore::TrainingDescription;
use crate::store::{ContentId, Store};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EventKind {
    ModelRegistered,
    WorkerRegistered,
    BlacklistUpdated,
    RoundScheduled,
    RoundCompleted,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Visibility {
    Public,
    PrivacyGroup(BTreeSet<Address>),
}

impl Visibility {
    pub fn admits(&self, observer: &Observer) -> bool {
        match (self, observer) {
            (Visibility::Public, _) => true,
            (Visibility::PrivacyGroup(members), Observer::Member(a)) => members.contains(a),
            (Visibility::PrivacyGroup(_), Observer::Public) => false,
        }
    }

    pub fn is_public(&self) -> bool {
        matches!(self, Visibility::Public)
    }
}

/// Who is reading the audit trail.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Observer {
    Public,
    Member(Address),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditEvent {
    pub block_no: u64,
    pub kind: EventKind,
    pub visibility: Visibility,
    pub payload: Vec<u8>,
}

impl AuditEvent {
    pub fn decode(&self) -> Result<EventPayload> {
        EventPayload::decode(self.kind, &self.payload)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelRecord {
    pub model_id: u64,
    pub owner: Address,
    pub pointer: ContentId,
    pub plan: TrainingDescription,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerRecord {
    pub address: Address,
    pub encryption_pub: PublicKey,
    pub dataset_ids: BTreeSet<String>,
}

/// Contents of a completed round as published on chain. Carries no
/// address and nothing about which updates were aggregated.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundRecord {
    pub round_id: u64,
    pub model_id: u64,
    pub anon_ids: Vec<AnonId>,
    pub new_pointer: ContentId,
}

/// A worker's slot in a scheduled round: the dataset it was asked to train on.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Invitation {
    pub worker: Address,
    pub dataset_id: String,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EventPayload {
    ModelRegistered {
        model_id: u64,
        owner: Address,
        pointer: ContentId,
        plan: TrainingDescription,
    },
    WorkerRegistered {
        address: Address,
        encryption_pub: PublicKey,
        dataset_ids: BTreeSet<String>,
    },
    BlacklistUpdated {
        worker: Address,
        dataset_id: String,
        blocked: BTreeSet<Address>,
    },
    RoundScheduled {
        round_id: u64,
        model_id: u64,
        aggregator: Address,
        invitations: Vec<Invitation>,
    },
    RoundStub {
        round_id: u64,
        model_id: u64,
    },
    RoundCompleted(RoundRecord),
}

struct Enc(Vec<u8>);

impl Enc {
    fn u32(&mut self, v: u32) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn u64(&mut self, v: u64) -> &mut Self {
        self.0.extend_from_slice(&v.to_be_bytes());
        self
    }
    fn raw(&mut self, b: &[u8]) -> &mut Self {
        self.0.extend_from_slice(b);
        self
    }
    fn bytes(&mut self, b: &[u8]) -> &mut Self {
        self.u32(b.len() as u32).raw(b)
    }
}

struct Dec<'a>(&'a [u8]);

impl<'a> Dec<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.0.len() < n {
            return Err(Error::Format("truncated event payload".into()));
        }
        let (head, tail) = self.0.split_at(n);
        self.0 = tail;
        Ok(head)
    }
    fn arr<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("exact length"))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_be_bytes(self.arr()?))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_be_bytes(self.arr()?))
    }
    fn bytes(&mut self) -> Result<&'a [u8]> {
        let n = self.u32()? as usize;
        self.take(n)
    }
    fn string(&mut self) -> Result<String> {
        String::from_utf8(self.bytes()?.to_vec())
            .map_err(|_| Error::Format("event string is not utf-8".into()))
    }
    fn finish(self) -> Result<()> {
        if self.0.is_empty() {
            Ok(())
        } else {
            Err(Error::Format("trailing bytes in event payload".into()))
        }
    }
}

const ROUND_STUB_LEN: usize = 16;

impl EventPayload {
    pub fn kind(&self) -> EventKind {
        match self {
            EventPayload::ModelRegistered { .. } => EventKind::ModelRegistered,
            EventPayload::WorkerRegistered { .. } => EventKind::WorkerRegistered,
            EventPayload::BlacklistUpdated { .. } => EventKind::BlacklistUpdated,
            EventPayload::RoundScheduled { .. } | EventPayload::RoundStub { .. } => {
                EventKind::RoundScheduled
            }
            EventPayload::RoundCompleted(_) => EventKind::RoundCompleted,
        }
    }

    /// Canonical big-endian encoding; strings and lists are u32-length-prefixed.
    pub fn encode(&self) -> Vec<u8> {
        let mut e = Enc(Vec::new());
        match self {
            EventPayload::ModelRegistered {
                model_id,
                owner,
                pointer,
                plan,
            } => {
                e.u64(*model_id).raw(&owner.0).raw(&pointer.0).bytes(&plan.to_bytes());
            }
            EventPayload::WorkerRegistered {
                address,
                encryption_pub,
                dataset_ids,
            } => {
                e.raw(&address.0).raw(&encryption_pub.0).u32(dataset_ids.len() as u32);
                for d in dataset_ids {
                    e.bytes(d.as_bytes());
                }
            }
            EventPayload::BlacklistUpdated {
                worker,
                dataset_id,
                blocked,
            } => {
                e.raw(&worker.0).bytes(dataset_id.as_bytes()).u32(blocked.len() as u32);
                for b in blocked {
                    e.raw(&b.0);
                }
            }
            EventPayload::RoundScheduled {
                round_id,
                model_id,
                aggregator,
                invitations,
            } => {
                e.u64(*round_id)
                    .u64(*model_id)
                    .raw(&aggregator.0)
                    .u32(invitations.len() as u32);
                for inv in invitations {
                    e.raw(&inv.worker.0).bytes(inv.dataset_id.as_bytes());
                }
            }
            EventPayload::RoundStub { round_id, model_id } => {
                e.u64(*round_id).u64(*model_id);
            }
            EventPayload::RoundCompleted(r) => {
                e.u64(r.round_id)
                    .u64(r.model_id)
                    .raw(&r.new_pointer.0)
                    .u32(r.anon_ids.len() as u32);
                for id in &r.anon_ids {
                    e.raw(&id.0);
                }
            }
        }
        e.0
    }

    pub fn decode(kind: EventKind, payload: &[u8]) -> Result<Self> {
        let mut d = Dec(payload);
        let out = match kind {
            EventKind::ModelRegistered => EventPayload::ModelRegistered {
                model_id: d.u64()?,
                owner: Address(d.arr()?),
                pointer: ContentId(d.arr()?),
                plan: TrainingDescription::from_bytes(d.bytes()?)?,
            },
            EventKind::WorkerRegistered => {
                let address = Address(d.arr()?);
                let encryption_pub = PublicKey(d.arr()?);
                let n = d.u32()?;
                let dataset_ids = (0..n).map(|_| d.string()).collect::<Result<_>>()?;
                EventPayload::WorkerRegistered {
                    address,
                    encryption_pub,
                    dataset_ids,
                }
            }
            EventKind::BlacklistUpdated => {
                let worker = Address(d.arr()?);
                let dataset_id = d.string()?;
                let n = d.u32()?;
                let blocked = (0..n).map(|_| d.arr().map(Address)).collect::<Result<_>>()?;
                EventPayload::BlacklistUpdated {
                    worker,
                    dataset_id,
                    blocked,
                }
            }
            EventKind::RoundScheduled if payload.len() == ROUND_STUB_LEN => EventPayload::RoundStub {
                round_id: d.u64()?,
                model_id: d.u64()?,
            },
            EventKind::RoundScheduled => {
                let round_id = d.u64()?;
                let model_id = d.u64()?;
                let aggregator = Address(d.arr()?);
                let n = d.u32()?;
                let invitations = (0..n)
                    .map(|_| {
                        Ok(Invitation {
                            worker: Address(d.arr()?),
                            dataset_id: d.string()?,
                        })
                    })
                    .collect::<Result<_>>()?;
                EventPayload::RoundScheduled {
                    round_id,
                    model_id,
                    aggregator,
                    invitations,
                }
            }
            EventKind::RoundCompleted => {
                let round_id = d.u64()?;
                let model_id = d.u64()?;
                let new_pointer = ContentId(d.arr()?);
                let n = d.u32()?;
                let anon_ids = (0..n).map(|_| d.arr().map(AnonId)).collect::<Result<_>>()?;
                EventPayload::RoundCompleted(RoundRecord {
                    round_id,
                    model_id,
                    anon_ids,
                    new_pointer,
                })
            }
        };
        d.finish()?;
        Ok(out)
    }
}

struct RoundState {
    model_id: u64,
    invitations: Vec<Invitation>,
    completed: bool,
}

/// Orchestrator contract plus event log. Mutations take `&mut self`, so a
/// single owner serializes them and fixes the block order.
pub struct Ledger {
    store: Arc<Store>,
    operator: Address,
    events: Vec<AuditEvent>,
    models: Vec<ModelRecord>,
    workers: BTreeMap<Address, WorkerRecord>,
    blacklist: BTreeMap<(Address, String), BTreeSet<Address>>,
    rounds: Vec<RoundState>,
}

impl Ledger {
    /// `operator` is the orchestration account; it joins every round's privacy group.
    pub fn new(store: Arc<Store>, operator: Address) -> Self {
        Self {
            store,
            operator,
            events: Vec::new(),
            models: Vec::new(),
            workers: BTreeMap::new(),
            blacklist: BTreeMap::new(),
            rounds: Vec::new(),
        }
    }

    pub fn operator(&self) -> Address {
        self.operator
    }

    fn append(&mut self, payload: EventPayload, visibility: Visibility) {
        let block_no = self.events.len() as u64;
        self.events.push(AuditEvent {
            block_no,
            kind: payload.kind(),
            visibility,
            payload: payload.encode(),
        });
    }

    fn require_resolves(&self, pointer: &ContentId) -> Result<()> {
        if self.store.contains(pointer) {
            Ok(())
        } else {
            Err(Error::Integrity(format!("pointer {pointer} does not resolve in the store")))
        }
    }

    pub fn register_model(
        &mut self,
        owner: Address,
        pointer: ContentId,
        plan: TrainingDescription,
    ) -> Result<u64> {
        self.require_resolves(&pointer)?;
        plan.validate()?;
        let model_id = self.models.len() as u64;
        self.models.push(ModelRecord {
            model_id,
            owner,
            pointer,
            plan: plan.clone(),
        });
        self.append(
            EventPayload::ModelRegistered {
                model_id,
                owner,
                pointer,
                plan,
            },
            Visibility::Public,
        );
        Ok(model_id)
    }

    pub fn register_worker(
        &mut self,
        encryption_pub: PublicKey,
        dataset_ids: BTreeSet<String>,
    ) -> Result<Address> {
        let address = derive_address(&encryption_pub.0)?;
        if self.workers.contains_key(&address) {
            return Err(Error::AlreadyRegistered(format!("worker {address}")));
        }
        self.workers.insert(
            address,
            WorkerRecord {
                address,
                encryption_pub,
                dataset_ids: dataset_ids.clone(),
            },
        );
        self.append(
            EventPayload::WorkerRegistered {
                address,
                encryption_pub,
                dataset_ids,
            },
            Visibility::Public,
        );
        Ok(address)
    }

    /// Replaces the blocked owner set of one of `worker`'s datasets.
    /// Only the worker itself (`caller`) may do this.
    pub fn set_blacklist(
        &mut self,
        caller: Address,
        worker: Address,
        dataset_id: &str,
        blocked: BTreeSet<Address>,
    ) -> Result<()> {
        if caller != worker {
            return Err(Error::Authorization(format!(
                "{caller} cannot edit the blacklist of {worker}"
            )));
        }
        let record = self
            .workers
            .get(&worker)
            .ok_or_else(|| Error::NotFound(format!("worker {worker}")))?;
        if !record.dataset_ids.contains(dataset_id) {
            return Err(Error::NotFound(format!("dataset {dataset_id:?} of worker {worker}")));
        }
        let key = (worker, dataset_id.to_string());
        if blocked.is_empty() {
            self.blacklist.remove(&key);
        } else {
            self.blacklist.insert(key, blocked.clone());
        }
        self.append(
            EventPayload::BlacklistUpdated {
                worker,
                dataset_id: dataset_id.to_string(),
                blocked,
            },
            Visibility::Public,
        );
        Ok(())
    }

    pub fn model(&self, model_id: u64) -> Result<&ModelRecord> {
        self.models
            .get(model_id as usize)
            .ok_or_else(|| Error::NotFound(format!("model {model_id}")))
    }

    pub fn worker(&self, address: &Address) -> Option<&WorkerRecord> {
        self.workers.get(address)
    }

    fn dataset_allowed(&self, worker: Address, dataset_id: &str, owner: &Address) -> bool {
        self.blacklist
            .get(&(worker, dataset_id.to_string()))
            .map_or(true, |blocked| !blocked.contains(owner))
    }

    /// First dataset (lexicographic) of `worker` that the model's owner may use.
    pub fn assigned_dataset(&self, model_id: u64, worker: &Address) -> Result<Option<String>> {
        let owner = self.model(model_id)?.owner;
        let record = self
            .workers
            .get(worker)
            .ok_or_else(|| Error::NotFound(format!("worker {worker}")))?;
        Ok(record
            .dataset_ids
            .iter()
            .find(|d| self.dataset_allowed(*worker, d, &owner))
            .cloned())
    }

    /// Workers holding at least one dataset not blacklisted for the model's owner.
    pub fn eligible_workers(&self, model_id: u64) -> Result<BTreeSet<Address>> {
        let owner = self.model(model_id)?.owner;
        Ok(self
            .workers
            .values()
            .filter(|w| {
                w.dataset_ids
                    .iter()
                    .any(|d| self.dataset_allowed(w.address, d, &owner))
            })
            .map(|w| w.address)
            .collect())
    }

    pub fn schedule_round(
        &mut self,
        model_id: u64,
        workers: &BTreeSet<Address>,
        aggregator: Address,
    ) -> Result<u64> {
        if workers.is_empty() {
            return Err(Error::Input("cannot schedule a round with no workers".into()));
        }
        let eligible = self.eligible_workers(model_id)?;
        if let Some(bad) = workers.iter().find(|w| !eligible.contains(w)) {
            return Err(Error::Permission(format!(
                "worker {bad} is not eligible for model {model_id}"
            )));
        }
        let mut invitations = Vec::with_capacity(workers.len());
        for w in workers {
            let dataset_id = self
                .assigned_dataset(model_id, w)?
                .expect("eligible worker has an allowed dataset");
            invitations.push(Invitation {
                worker: *w,
                dataset_id,
            });
        }

        let round_id = self.rounds.len() as u64;
        self.rounds.push(RoundState {
            model_id,
            invitations: invitations.clone(),
            completed: false,
        });

        let mut group: BTreeSet<Address> = workers.clone();
        group.insert(aggregator);
        group.insert(self.operator);
        self.append(
            EventPayload::RoundScheduled {
                round_id,
                model_id,
                aggregator,
                invitations,
            },
            Visibility::PrivacyGroup(group),
        );
        self.append(EventPayload::RoundStub { round_id, model_id }, Visibility::Public);
        Ok(round_id)
    }

    pub fn invitations(&self, round_id: u64) -> Result<&[Invitation]> {
        self.rounds
            .get(round_id as usize)
            .map(|r| r.invitations.as_slice())
            .ok_or_else(|| Error::NotFound(format!("round {round_id}")))
    }

    pub fn record_round(
        &mut self,
        round_id: u64,
        new_pointer: ContentId,
        anon_ids: Vec<AnonId>,
    ) -> Result<()> {
        let round = self
            .rounds
            .get(round_id as usize)
            .ok_or_else(|| Error::State(format!("round {round_id} was never scheduled")))?;
        if round.completed {
            return Err(Error::State(format!("round {round_id} already completed")));
        }
        let model_id = round.model_id;
        self.require_resolves(&new_pointer)?;
        if anon_ids.is_empty() {
            return Err(Error::Integrity("round record needs at least one anonymous id".into()));
        }
        let distinct: BTreeSet<_> = anon_ids.iter().collect();
        if distinct.len() != anon_ids.len() {
            return Err(Error::Integrity("duplicate anonymous id in round record".into()));
        }

        self.rounds[round_id as usize].completed = true;
        self.models[model_id as usize].pointer = new_pointer;
        self.append(
            EventPayload::RoundCompleted(RoundRecord {
                round_id,
                model_id,
                anon_ids,
                new_pointer,
            }),
            Visibility::Public,
        );
        Ok(())
    }

    /// Every event visible to `observer`, in block order.
    pub fn audit_trail(&self, observer: Observer) -> Vec<AuditEvent> {
        filter_view(&self.events, observer)
    }

    /// The full, unfiltered chain.
    pub fn events(&self) -> &[AuditEvent] {
        &self.events
    }
}

pub fn filter_view(events: &[AuditEvent], observer: Observer) -> Vec<AuditEvent> {
    events
        .iter()
        .filter(|e| e.visibility.admits(&observer))
        .cloned()
        .collect()
}

/// Completed-round records found in `events`.
pub fn round_records(events: &[AuditEvent]) -> Vec<RoundRecord> {
    events
        .iter()
        .filter(|e| e.kind == EventKind::RoundCompleted)
        .filter_map(|e| match e.decode() {
            Ok(EventPayload::RoundCompleted(r)) => Some(r),
            _ => None,
        })
        .collect()
}

#[derive(Serialize, Deserialize)]
struct ExportRecord {
    block_no: u64,
    kind: EventKind,
    visibility: String,
    payload_hex: String,
}

#[derive(Serialize, Deserialize)]
struct ChainRecord {
    block_no: u64,
    kind: EventKind,
    visibility: String,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    members: Vec<Address>,
    payload_hex: String,
}

fn visibility_label(v: &Visibility) -> &'static str {
    if v.is_public() {
        "public"
    } else {
        "private"
    }
}

/// Audit trail export: one JSON object per line with `block_no`, `kind`,
/// `visibility` and `payload_hex`, restricted to what `observer` may read.
pub fn export_audit_trail<W: Write>(events: &[AuditEvent], observer: Observer, mut out: W) -> Result<()> {
    for e in events.iter().filter(|e| e.visibility.admits(&observer)) {
        serde_json::to_writer(
            &mut out,
            &ExportRecord {
                block_no: e.block_no,
                kind: e.kind,
                visibility: visibility_label(&e.visibility).to_string(),
                payload_hex: hex::encode(&e.payload),
            },
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// Full chain dump including privacy-group membership; the simulated node database.
pub fn write_chain<W: Write>(events: &[AuditEvent], mut out: W) -> Result<()> {
    for e in events {
        let members = match &e.visibility {
            Visibility::Public => Vec::new(),
            Visibility::PrivacyGroup(m) => m.iter().copied().collect(),
        };
        serde_json::to_writer(
            &mut out,
            &ChainRecord {
                block_no: e.block_no,
                kind: e.kind,
                visibility: visibility_label(&e.visibility).to_string(),
                members,
                payload_hex: hex::encode(&e.payload),
            },
        )?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_chain<R: BufRead>(input: R) -> Result<Vec<AuditEvent>> {
    let mut events = Vec::new();
    for line in input.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: ChainRecord = serde_json::from_str(&line)?;
        let visibility = match rec.visibility.as_str() {
            "public" => Visibility::Public,
            "private" => Visibility::PrivacyGroup(rec.members.into_iter().collect()),
            other => return Err(Error::Format(format!("unknown visibility {other:?}"))),
        };
        let payload = hex::decode(&rec.payload_hex)
            .map_err(|e| Error::Format(format!("payload hex: {e}")))?;
        if rec.block_no != events.len() as u64 {
            return Err(Error::Integrity(format!(
                "chain block {} out of sequence",
                rec.block_no
            )));
        }
        events.push(AuditEvent {
            block_no: rec.block_no,
            kind: rec.kind,
            visibility,
            payload,
        });
    }
    Ok(events)
}
