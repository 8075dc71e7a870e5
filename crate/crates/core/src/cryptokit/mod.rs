//! Cryptographic primitives: X25519 key pairs and Diffie-Hellman secrets,
//! sealed envelopes for transit encryption, Keccak-256, account addresses and
//! anonymous round identifiers.
//!
//! Every function here is pure over its inputs. Randomness enters only
//! through caller-supplied generators.

mod envelope;
mod keccak;
mod keys;

pub use envelope::{
    open, seal, seal_ephemeral, seal_slices, EncryptedEnvelope, CLEARTEXT_VERSION,
    ENVELOPE_VERSION, TAG_LEN,
};
pub use keccak::{keccak256, keccak256_concat, Keccak256};
pub use keys::{
    address_of, anon_id, anon_id_from_slices, derive_address, keygen, shared_secret,
    shared_secret_from_slices, Address, AnonId, KeyPair, Nonce32, PublicKey, SecretKey,
    SharedSecret,
};
