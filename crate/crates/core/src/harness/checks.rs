//! Adversary checks run against the artifacts of a finished run.

use std::collections::{BTreeMap, BTreeSet, HashSet};

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;

use super::artifacts::PublicDirectory;
use super::transcript::Transcript;
use crate::cryptokit::{
    keccak256_concat, open, Address, AnonId, EncryptedEnvelope, KeyPair, SecretKey,
};
use crate::ledger::{round_records, AuditEvent, EventPayload};
use crate::nodes::match_audit;
use crate::store::{ContentId, Store};

/// Updates shorter than this are not distinctive enough to search for.
pub const MIN_DISTINCTIVE_LEN: usize = 16;
pub const DEFAULT_ADVERSARY_KEYS: usize = 1_000;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EavesdropReport {
    pub pass: bool,
    pub envelopes_checked: usize,
    pub adversary_keys: usize,
    /// Transcript entries an adversary key managed to open.
    pub openings: Vec<String>,
    /// Places where a plaintext update was found, in scan order.
    pub leaks: Vec<String>,
}

impl EavesdropReport {
    pub fn first_offense(&self) -> Option<&str> {
        self.openings.first().or(self.leaks.first()).map(String::as_str)
    }
}

fn contains(haystack: &[u8], needle: &[u8]) -> bool {
    needle.len() <= haystack.len() && haystack.windows(needle.len()).any(|w| w == needle)
}

/// Checkpoint blobs: every model pointer that ever appeared on chain.
pub fn checkpoint_ids(events: &[AuditEvent]) -> BTreeSet<ContentId> {
    events
        .iter()
        .filter_map(|e| match e.decode() {
            Ok(EventPayload::ModelRegistered { pointer, .. }) => Some(pointer),
            Ok(EventPayload::RoundCompleted(r)) => Some(r.new_pointer),
            _ => None,
        })
        .collect()
}

/// An eavesdropper with every public artifact but no private key.
///
/// Passes iff no transcript envelope opens under `adversary_keys` random
/// keys (plus every public key tried as a scalar), and no `known_updates`
/// entry occurs in any transcript entry, non-checkpoint store blob or event
/// payload.
pub fn eavesdrop_check(
    transcript: &Transcript,
    directory: &PublicDirectory,
    events: &[AuditEvent],
    store: &Store,
    known_updates: &[Vec<u8>],
    adversary_keys: usize,
    seed: u64,
) -> EavesdropReport {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    let mut keys: Vec<SecretKey> = (0..adversary_keys)
        .map(|_| KeyPair::generate(&mut rng).secret().clone())
        .collect();
    keys.extend(directory.parties.iter().map(|p| SecretKey::from_bytes(p.public_key.0)));

    let envelopes: Vec<(u64, EncryptedEnvelope)> = transcript
        .entries()
        .iter()
        .filter_map(|e| EncryptedEnvelope::from_bytes(&e.bytes).ok().map(|env| (e.tick, env)))
        .collect();
    let mut openings: Vec<(u64, String)> = envelopes
        .par_iter()
        .filter_map(|(tick, env)| {
            keys.iter()
                .position(|k| open(k, env).is_ok())
                .map(|i| (*tick, format!("transcript entry {tick} opened by adversary key #{i}")))
        })
        .collect();
    openings.sort();

    let needles: Vec<&[u8]> = known_updates
        .iter()
        .map(Vec::as_slice)
        .filter(|u| u.len() >= MIN_DISTINCTIVE_LEN)
        .collect();
    let hit = |bytes: &[u8]| needles.iter().any(|n| contains(bytes, n));
    let mut leaks = Vec::new();
    for e in transcript.entries() {
        if hit(&e.bytes) {
            leaks.push(format!(
                "transcript entry {} ({} -> {}) carries a plaintext update",
                e.tick, e.sender, e.recipient
            ));
        }
    }
    let checkpoints = checkpoint_ids(events);
    for (cid, blob) in store.entries() {
        if !checkpoints.contains(&cid) && hit(&blob.content) {
            leaks.push(format!("store blob {cid} contains a plaintext update"));
        }
    }
    for e in events {
        if hit(&e.payload) {
            leaks.push(format!("event at block {} contains a plaintext update", e.block_no));
        }
    }

    EavesdropReport {
        pass: openings.is_empty() && leaks.is_empty(),
        envelopes_checked: envelopes.len(),
        adversary_keys: keys.len(),
        openings: openings.into_iter().map(|(_, s)| s).collect(),
        leaks,
    }
}

/// Material a worker holds locally: its key, its saved anon-id envelopes,
/// and (from the test bench) the rounds it actually contributed to.
#[derive(Debug, Clone)]
pub struct WorkerEvidence {
    pub keypair: KeyPair,
    pub envelopes: Vec<(u64, EncryptedEnvelope)>,
    pub contributed: BTreeSet<u64>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkerRecovery {
    pub address: Address,
    pub recovered: BTreeSet<u64>,
    pub expected: BTreeSet<u64>,
    pub exact: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ReidentifyReport {
    pub pass: bool,
    pub published_ids: usize,
    pub ids_pairwise_distinct: bool,
    pub guesses_tested: usize,
    pub public_matches: usize,
    pub workers: Vec<WorkerRecovery>,
    /// Anon ids claimed by more than one worker key.
    pub cross_claims: usize,
}

/// Values an adversary without private keys can build guesses from:
/// every public key, every address, and every round id as 32-byte big-endian.
pub fn public_guess_values(events: &[AuditEvent], directory: &PublicDirectory) -> Vec<Vec<u8>> {
    let mut values: Vec<Vec<u8>> = Vec::new();
    let mut seen = HashSet::new();
    let mut add = |v: Vec<u8>, values: &mut Vec<Vec<u8>>| {
        if seen.insert(v.clone()) {
            values.push(v);
        }
    };
    for p in &directory.parties {
        add(p.public_key.0.to_vec(), &mut values);
        add(p.address.0.to_vec(), &mut values);
    }
    let mut round_ids = BTreeSet::new();
    for e in events {
        match e.decode() {
            Ok(EventPayload::WorkerRegistered {
                address,
                encryption_pub,
                ..
            }) => {
                add(encryption_pub.0.to_vec(), &mut values);
                add(address.0.to_vec(), &mut values);
            }
            Ok(EventPayload::ModelRegistered { owner, .. }) => add(owner.0.to_vec(), &mut values),
            Ok(EventPayload::RoundStub { round_id, .. }) => {
                round_ids.insert(round_id);
            }
            Ok(EventPayload::RoundCompleted(r)) => {
                round_ids.insert(r.round_id);
            }
            _ => {}
        }
    }
    for r in round_ids {
        let mut b = [0u8; 32];
        b[24..].copy_from_slice(&r.to_be_bytes());
        add(b.to_vec(), &mut values);
    }
    values
}

/// Re-identification attempt against the published anonymous ids.
///
/// Without keys, every `keccak256(a ‖ b)` over ordered pairs of public
/// values must miss. With a worker's key and saved envelopes, exactly the
/// rounds it contributed to must be recovered, and no id may be claimed by
/// two workers.
pub fn reidentify_check(
    events: &[AuditEvent],
    directory: &PublicDirectory,
    evidence: &[WorkerEvidence],
) -> ReidentifyReport {
    let records = round_records(events);
    let published: Vec<AnonId> = records.iter().flat_map(|r| r.anon_ids.iter().copied()).collect();
    let published_set: HashSet<AnonId> = published.iter().copied().collect();
    let ids_pairwise_distinct = published_set.len() == published.len();

    let values = public_guess_values(events, directory);
    let public_matches = values
        .par_iter()
        .map(|a| {
            values
                .iter()
                .filter(|b| published_set.contains(&AnonId(keccak256_concat(&[a, b]))))
                .count()
        })
        .sum();

    let sa_pub = directory.aggregator().map(|p| p.public_key).ok();
    let mut claims: BTreeMap<AnonId, usize> = BTreeMap::new();
    let mut workers = Vec::new();
    for ev in evidence {
        let matches = match sa_pub {
            Some(pk) => match_audit(ev.keypair.secret(), &ev.envelopes, &pk, events),
            None => Vec::new(),
        };
        let mut recovered = BTreeSet::new();
        for m in matches.iter().filter(|m| m.matched) {
            recovered.insert(m.round_id);
            if let Some(id) = m.anon_id {
                *claims.entry(id).or_default() += 1;
            }
        }
        workers.push(WorkerRecovery {
            address: ev.keypair.address(),
            exact: recovered == ev.contributed,
            recovered,
            expected: ev.contributed.clone(),
        });
    }
    let cross_claims = claims.values().filter(|&&c| c > 1).count();

    ReidentifyReport {
        pass: public_matches == 0
            && ids_pairwise_distinct
            && cross_claims == 0
            && workers.iter().all(|w| w.exact),
        published_ids: published.len(),
        ids_pairwise_distinct,
        guesses_tested: values.len() * values.len(),
        public_matches,
        workers,
        cross_claims,
    }
}
