//! The secure aggregator.
//!
//! Everything inside [`SecureAggregator`] stands for the memory of a
//! hardware-protected VM: nonces, anonymous ids and decrypted updates are
//! private fields with no accessor. What leaves the boundary is limited to
//! sealed anon-id envelopes, the plaintext aggregated checkpoint (written to
//! the shared store) and the sorted list of anonymous ids for the ledger.
//!
//! Per round the aggregator draws a fresh nonce for each invited worker and
//! derives `anon = keccak256(DH(sa, worker) ‖ nonce)`. At finalization it
//! samples `k = max(1, ceil(fraction · n))` of the `n` received updates,
//! averages them, publishes the result, and drops the whole round context
//! including the unselected updates and the selection itself.

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::cryptokit::{
    address_of, anon_id, open, seal, shared_secret, Address, AnonId, EncryptedEnvelope, KeyPair,
    Nonce32, PublicKey, CLEARTEXT_VERSION,
};
use crate::error::{Error, Rejection, Result};
use crate::flcore::{aggregate, TrainingDescription, WeightVector};
use crate::store::{ContentId, Store};

/// Whether update envelopes must be sealed. `AllowCleartext` exists only to
/// build the eavesdropper negative control.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum TransitPolicy {
    #[default]
    RequireSealed,
    AllowCleartext,
}

struct RoundContext {
    plan: TrainingDescription,
    expected: BTreeMap<Address, PublicKey>,
    nonces: BTreeMap<Address, Nonce32>,
    anon: BTreeMap<Address, AnonId>,
    received: BTreeMap<Address, WeightVector>,
}

impl Drop for RoundContext {
    fn drop(&mut self) {
        for n in self.nonces.values_mut() {
            n.0 = [0u8; 32];
        }
    }
}

/// Result of a finalized round: what goes on chain.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RoundOutcome {
    pub new_pointer: ContentId,
    /// Ids of every worker whose update was received, sorted ascending.
    pub anon_ids: Vec<AnonId>,
}

pub struct SecureAggregator {
    keypair: KeyPair,
    rng: ChaCha20Rng,
    store: Arc<Store>,
    policy: TransitPolicy,
    rounds: BTreeMap<u64, RoundContext>,
    retired: BTreeSet<u64>,
    rejections: u64,
}

impl SecureAggregator {
    pub fn new(keypair: KeyPair, rng_seed: [u8; 32], store: Arc<Store>) -> Self {
        Self {
            keypair,
            rng: ChaCha20Rng::from_seed(rng_seed),
            store,
            policy: TransitPolicy::RequireSealed,
            rounds: BTreeMap::new(),
            retired: BTreeSet::new(),
            rejections: 0,
        }
    }

    pub fn with_policy(mut self, policy: TransitPolicy) -> Self {
        self.policy = policy;
        self
    }

    pub fn public_key(&self) -> PublicKey {
        self.keypair.public()
    }

    pub fn address(&self) -> Address {
        self.keypair.address()
    }

    /// Number of update envelopes refused so far.
    pub fn rejection_count(&self) -> u64 {
        self.rejections
    }

    /// Opens a round and returns one sealed anon-id envelope per worker, in
    /// address order. Envelopes are sealed with the aggregator's long-term
    /// key so workers can check where they came from.
    pub fn begin_round(
        &mut self,
        round_id: u64,
        plan: &TrainingDescription,
        workers: &[(Address, PublicKey)],
    ) -> Result<Vec<(Address, EncryptedEnvelope)>> {
        if self.rounds.contains_key(&round_id) || self.retired.contains(&round_id) {
            return Err(Error::State(format!("round {round_id} already used by this aggregator")));
        }
        plan.validate()?;
        let mut expected = BTreeMap::new();
        for (addr, pk) in workers {
            if address_of(pk) != *addr {
                return Err(Error::Input(format!("address {addr} does not match its public key")));
            }
            if expected.insert(*addr, *pk).is_some() {
                return Err(Error::Input(format!("worker {addr} listed twice")));
            }
        }

        let mut nonces = BTreeMap::new();
        let mut anon = BTreeMap::new();
        let mut out = Vec::with_capacity(expected.len());
        for (addr, pk) in &expected {
            let nonce = Nonce32::random(&mut self.rng);
            let ss = shared_secret(self.keypair.secret(), pk)?;
            let id = anon_id(&ss, &nonce);
            let mut env_nonce = [0u8; 24];
            self.rng.fill_bytes(&mut env_nonce);
            out.push((*addr, seal(self.keypair.secret(), pk, &env_nonce, &id.0)?));
            nonces.insert(*addr, nonce);
            anon.insert(*addr, id);
        }

        self.rounds.insert(
            round_id,
            RoundContext {
                plan: plan.clone(),
                expected,
                nonces,
                anon,
                received: BTreeMap::new(),
            },
        );
        Ok(out)
    }

    fn reject(&mut self, why: Rejection) -> Result<()> {
        self.rejections += 1;
        Err(Error::Rejected(why))
    }

    /// Decrypts an update inside the boundary. Bad envelopes are counted and
    /// refused; the round carries on.
    pub fn receive_update(
        &mut self,
        round_id: u64,
        sender: Address,
        env: &EncryptedEnvelope,
    ) -> Result<()> {
        let policy = self.policy;
        let sk = self.keypair.secret().clone();
        let ctx = self
            .rounds
            .get(&round_id)
            .ok_or_else(|| Error::State(format!("round {round_id} is not active")))?;
        if !ctx.expected.contains_key(&sender) {
            return self.reject(Rejection::Unexpected);
        }
        if ctx.received.contains_key(&sender) {
            return self.reject(Rejection::Duplicate);
        }
        let plaintext = if policy == TransitPolicy::AllowCleartext && env.version == CLEARTEXT_VERSION {
            env.ciphertext.clone()
        } else {
            match open(&sk, env) {
                Ok(p) => p,
                Err(_) => return self.reject(Rejection::Undecryptable),
            }
        };
        let update = match WeightVector::from_bytes(&plaintext) {
            Ok(w) if w.shape() == [ctx.plan.input_dim] => w,
            _ => return self.reject(Rejection::Malformed),
        };
        self.rounds
            .get_mut(&round_id)
            .expect("round checked above")
            .received
            .insert(sender, update);
        Ok(())
    }

    /// Samples, aggregates and publishes, then erases the round.
    pub fn finalize_round(&mut self, round_id: u64) -> Result<RoundOutcome> {
        let ctx = self
            .rounds
            .get(&round_id)
            .ok_or_else(|| Error::State(format!("round {round_id} is not active")))?;
        if ctx.received.is_empty() {
            return Err(Error::State(format!("round {round_id} has no updates")));
        }
        let ctx = self.rounds.remove(&round_id).expect("present");
        self.retired.insert(round_id);

        let n = ctx.received.len();
        let k = selection_size(ctx.plan.selection_fraction, n);
        // BTreeMap iteration is ascending by sender address.
        let updates: Vec<&WeightVector> = ctx.received.values().collect();
        let mut picked = sample_indices(&mut self.rng, n, k);
        picked.sort_unstable();
        let chosen: Vec<WeightVector> = picked.iter().map(|&i| updates[i].clone()).collect();
        let checkpoint = aggregate(&chosen)?;
        let new_pointer = self.store.put(&checkpoint.to_bytes())?;

        let mut anon_ids: Vec<AnonId> = ctx.received.keys().map(|a| ctx.anon[a]).collect();
        anon_ids.sort_unstable();
        drop(chosen);
        drop(picked);
        drop(ctx);
        Ok(RoundOutcome {
            new_pointer,
            anon_ids,
        })
    }
}

/// `k = max(1, ceil(fraction · n))`, never more than `n`.
pub fn selection_size(fraction: f64, n: usize) -> usize {
    ((fraction * n as f64).ceil() as usize).clamp(1, n.max(1))
}

/// Unbiased integer in `[0, bound)` by rejection on 64-bit draws.
fn uniform_below<R: RngCore>(rng: &mut R, bound: u64) -> u64 {
    debug_assert!(bound > 0);
    let zone = u64::MAX - (u64::MAX % bound);
    loop {
        let x = rng.next_u64();
        if x < zone {
            return x % bound;
        }
    }
}

/// Partial Fisher-Yates over `0..n`; returns the first `k` positions in draw order.
fn sample_indices<R: RngCore>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = i + uniform_below(rng, (n - i) as u64) as usize;
        idx.swap(i, j);
    }
    idx.truncate(k);
    idx
}

/// Read-only view of one round's enclave memory, for tests.
#[cfg(any(test, feature = "test-hooks"))]
#[derive(Debug, Clone, Default)]
pub struct RoundMemory {
    pub nonces: Vec<(Address, Nonce32)>,
    pub anon_ids: Vec<(Address, AnonId)>,
    pub received: Vec<(Address, WeightVector)>,
}

#[cfg(any(test, feature = "test-hooks"))]
impl RoundMemory {
    pub fn is_empty(&self) -> bool {
        self.nonces.is_empty() && self.anon_ids.is_empty() && self.received.is_empty()
    }
}

#[cfg(any(test, feature = "test-hooks"))]
impl SecureAggregator {
    /// Everything the enclave still holds for `round_id`.
    pub fn inspect_round(&self, round_id: u64) -> RoundMemory {
        match self.rounds.get(&round_id) {
            None => RoundMemory::default(),
            Some(ctx) => RoundMemory {
                nonces: ctx.nonces.iter().map(|(a, n)| (*a, *n)).collect(),
                anon_ids: ctx.anon.iter().map(|(a, n)| (*a, *n)).collect(),
                received: ctx.received.iter().map(|(a, w)| (*a, w.clone())).collect(),
            },
        }
    }

    /// Copy of the enclave generator in its current state.
    pub fn rng_snapshot(&self) -> ChaCha20Rng {
        self.rng.clone()
    }
}
