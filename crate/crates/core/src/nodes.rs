//! Model owners and data workers.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use rand::{CryptoRng, RngCore};

use crate::cryptokit::{
    open, seal_ephemeral, Address, AnonId, EncryptedEnvelope, KeyPair, PublicKey, SecretKey,
};
use crate::error::{Error, Result};
use crate::flcore::{local_train, Dataset, TrainingDescription, WeightVector};
use crate::ledger::{round_records, AuditEvent, Ledger};
use crate::store::{ContentId, Store};

pub struct ModelOwner {
    keypair: KeyPair,
    address: Address,
}

impl ModelOwner {
    pub fn new(keypair: KeyPair) -> Self {
        let address = keypair.address();
        Self { keypair, address }
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public()
    }

    /// Uploads the initial checkpoint and registers the model. The plan is
    /// validated before anything is written.
    pub fn publish(
        &self,
        store: &Store,
        ledger: &mut Ledger,
        initial: &WeightVector,
        plan: &TrainingDescription,
    ) -> Result<u64> {
        plan.validate()?;
        if initial.shape() != [plan.input_dim] {
            return Err(Error::Input(format!(
                "initial weights have shape {:?}, plan expects [{}]",
                initial.shape(),
                plan.input_dim
            )));
        }
        let pointer = store.put(&initial.to_bytes())?;
        ledger.register_model(self.address, pointer, plan.clone())
    }
}

/// Outcome of checking one stored anon-id envelope against the chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditMatch {
    pub round_id: u64,
    pub matched: bool,
    /// Set when the envelope could not be trusted or opened.
    pub flagged: Option<String>,
    pub anon_id: Option<AnonId>,
}

pub struct DataWorker {
    keypair: KeyPair,
    address: Address,
    datasets: BTreeMap<String, Dataset>,
    received_anon_envelopes: Vec<(u64, EncryptedEnvelope)>,
}

impl DataWorker {
    pub fn new(keypair: KeyPair, datasets: BTreeMap<String, Dataset>) -> Self {
        let address = keypair.address();
        Self {
            keypair,
            address,
            datasets,
            received_anon_envelopes: Vec::new(),
        }
    }

    pub fn address(&self) -> Address {
        self.address
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn keypair(&self) -> &KeyPair {
        &self.keypair
    }

    pub fn dataset_ids(&self) -> BTreeSet<String> {
        self.datasets.keys().cloned().collect()
    }

    pub fn dataset(&self, id: &str) -> Option<&Dataset> {
        self.datasets.get(id)
    }

    pub fn datasets(&self) -> impl Iterator<Item = (&String, &Dataset)> {
        self.datasets.iter()
    }

    /// Keeps an anon-id envelope so the worker can find its entries later.
    pub fn accept_anon_envelope(&mut self, round_id: u64, env: EncryptedEnvelope) {
        self.received_anon_envelopes.push((round_id, env));
    }

    pub fn anon_envelopes(&self) -> &[(u64, EncryptedEnvelope)] {
        &self.received_anon_envelopes
    }

    /// Pulls the checkpoint and trains on `dataset_id`. The result stays in
    /// the caller's hands; [`DataWorker::execute`] is the sealed variant.
    pub fn local_update(
        &self,
        store: &Store,
        model_pointer: &ContentId,
        plan: &TrainingDescription,
        dataset_id: &str,
    ) -> Result<WeightVector> {
        let data = self
            .datasets
            .get(dataset_id)
            .ok_or_else(|| Error::NotFound(format!("dataset {dataset_id:?} on worker {}", self.address)))?;
        let blob = store.get(model_pointer)?;
        let weights = WeightVector::from_bytes(&blob)?;
        if weights.shape() != [plan.input_dim] {
            return Err(Error::Integrity(format!(
                "checkpoint shape {:?} does not match plan input_dim {}",
                weights.shape(),
                plan.input_dim
            )));
        }
        local_train(&weights, data, plan)
    }

    /// Trains and seals the serialized update to the aggregator.
    pub fn execute<R: RngCore + CryptoRng>(
        &self,
        store: &Store,
        model_pointer: &ContentId,
        plan: &TrainingDescription,
        sa_pub: &PublicKey,
        dataset_id: &str,
        rng: &mut R,
    ) -> Result<EncryptedEnvelope> {
        let update = self.local_update(store, model_pointer, plan, dataset_id)?;
        seal_ephemeral(rng, sa_pub, &update.to_bytes())
    }

    /// Checks each stored envelope's anon id against the completed-round
    /// records in `chain`.
    pub fn match_audit(&self, sa_pub: &PublicKey, chain: &[AuditEvent]) -> Vec<AuditMatch> {
        match_audit(self.keypair.secret(), &self.received_anon_envelopes, sa_pub, chain)
    }
}

/// The worker-side recognition procedure, usable with any key and envelope set.
pub fn match_audit(
    secret: &SecretKey,
    envelopes: &[(u64, EncryptedEnvelope)],
    sa_pub: &PublicKey,
    chain: &[AuditEvent],
) -> Vec<AuditMatch> {
    let records: HashMap<u64, Vec<AnonId>> = round_records(chain)
        .into_iter()
        .map(|r| (r.round_id, r.anon_ids))
        .collect();
    envelopes
        .iter()
        .map(|(round_id, env)| {
            let flag = |why: String| AuditMatch {
                round_id: *round_id,
                matched: false,
                flagged: Some(why),
                anon_id: None,
            };
            if env.ephemeral_public != *sa_pub {
                return flag("envelope not sealed by the aggregator".into());
            }
            let id = match open(secret, env).and_then(|p| AnonId::from_slice(&p)) {
                Ok(id) => id,
                Err(e) => return flag(e.to_string()),
            };
            let matched = records
                .get(round_id)
                .is_some_and(|ids| ids.contains(&id));
            AuditMatch {
                round_id: *round_id,
                matched,
                flagged: None,
                anon_id: Some(id),
            }
        })
        .collect()
}
