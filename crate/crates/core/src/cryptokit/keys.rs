use std::fmt;

use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use x25519_dalek::{x25519, X25519_BASEPOINT_BYTES};

use super::keccak::{keccak256, keccak256_concat};
use crate::error::{Error, Result};

pub(crate) fn to_array<const N: usize>(bytes: &[u8], what: &str) -> Result<[u8; N]> {
    bytes
        .try_into()
        .map_err(|_| Error::Input(format!("{what} must be {N} bytes, got {}", bytes.len())))
}

macro_rules! hex_bytes_type {
    ($(#[$meta:meta])* $name:ident, $len:expr) => {
        $(#[$meta])*
        #[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
        pub struct $name(pub [u8; $len]);

        impl $name {
            pub const LEN: usize = $len;

            pub fn from_slice(bytes: &[u8]) -> Result<Self> {
                Ok(Self(to_array(bytes, stringify!($name))?))
            }

            pub fn from_hex(s: &str) -> Result<Self> {
                let s = s.trim().trim_start_matches("0x");
                let bytes = hex::decode(s)
                    .map_err(|e| Error::Input(format!("bad hex for {}: {e}", stringify!($name))))?;
                Self::from_slice(&bytes)
            }

            pub fn as_bytes(&self) -> &[u8; $len] {
                &self.0
            }

            pub fn to_hex(&self) -> String {
                hex::encode(self.0)
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.to_hex())
            }
        }

        impl fmt::Debug for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                write!(f, "{}({})", stringify!($name), self.to_hex())
            }
        }

        impl Serialize for $name {
            fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
                s.serialize_str(&self.to_hex())
            }
        }

        impl<'de> Deserialize<'de> for $name {
            fn deserialize<D: Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
                let s = String::deserialize(d)?;
                Self::from_hex(&s).map_err(serde::de::Error::custom)
            }
        }
    };
}

hex_bytes_type!(
    /// X25519 public key.
    PublicKey,
    32
);
hex_bytes_type!(
    /// Account address: the last 20 bytes of `keccak256(public key)`.
    Address,
    20
);
hex_bytes_type!(
    /// Per-round, per-worker random value held by the aggregator.
    Nonce32,
    32
);
hex_bytes_type!(
    /// Anonymous per-round worker identifier, `keccak256(shared secret ‖ nonce)`.
    AnonId,
    32
);

/// Clamped X25519 scalar. Deliberately not `Serialize`; use
/// [`SecretKey::expose_hex`] for the few places that write a local keystore.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey([u8; 32]);

impl SecretKey {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(clamp(bytes))
    }

    pub fn expose_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn expose_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn public_key(&self) -> PublicKey {
        PublicKey(x25519(self.0, X25519_BASEPOINT_BYTES))
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SecretKey(..)")
    }
}

fn clamp(mut s: [u8; 32]) -> [u8; 32] {
    s[0] &= 248;
    s[31] &= 127;
    s[31] |= 64;
    s
}

/// An X25519 key pair. The same pair identifies a party (through its
/// address) and receives its encrypted traffic.
#[derive(Clone, PartialEq, Eq)]
pub struct KeyPair {
    secret: SecretKey,
    public: PublicKey,
}

impl fmt::Debug for KeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("KeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

impl KeyPair {
    pub fn from_secret(secret: SecretKey) -> Self {
        let public = secret.public_key();
        Self { secret, public }
    }

    pub fn generate<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut seed = [0u8; 32];
        rng.fill_bytes(&mut seed);
        Self::from_secret(SecretKey::from_bytes(seed))
    }

    pub fn secret(&self) -> &SecretKey {
        &self.secret
    }

    pub fn public(&self) -> PublicKey {
        self.public
    }

    pub fn address(&self) -> Address {
        address_of(&self.public)
    }
}

/// Deterministic key pair from a 32-byte seed (the seed is clamped into the scalar).
pub fn keygen(seed: &[u8]) -> Result<KeyPair> {
    let seed: [u8; 32] = to_array(seed, "key seed")?;
    Ok(KeyPair::from_secret(SecretKey::from_bytes(seed)))
}

pub fn derive_address(public: &[u8]) -> Result<Address> {
    let pk: [u8; 32] = to_array(public, "public key")?;
    Ok(address_of(&PublicKey(pk)))
}

pub fn address_of(public: &PublicKey) -> Address {
    let digest = keccak256(&public.0);
    let mut out = [0u8; 20];
    out.copy_from_slice(&digest[12..]);
    Address(out)
}

/// Raw X25519 output shared between two key pairs.
#[derive(Clone, PartialEq, Eq)]
pub struct SharedSecret(pub(crate) [u8; 32]);

impl SharedSecret {
    pub fn from_bytes(bytes: [u8; 32]) -> Self {
        Self(bytes)
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }
}

impl fmt::Debug for SharedSecret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SharedSecret(..)")
    }
}

pub fn shared_secret(secret: &SecretKey, peer: &PublicKey) -> Result<SharedSecret> {
    let out = x25519(secret.0, peer.0);
    if out == [0u8; 32] {
        return Err(Error::LowOrderPoint);
    }
    Ok(SharedSecret(out))
}

/// Byte-slice form of [`shared_secret`] that validates lengths.
pub fn shared_secret_from_slices(secret: &[u8], peer: &[u8]) -> Result<SharedSecret> {
    let sk: [u8; 32] = to_array(secret, "secret key")?;
    let pk: [u8; 32] = to_array(peer, "public key")?;
    shared_secret(&SecretKey::from_bytes(sk), &PublicKey(pk))
}

impl Nonce32 {
    pub fn random<R: RngCore + CryptoRng>(rng: &mut R) -> Self {
        let mut b = [0u8; 32];
        rng.fill_bytes(&mut b);
        Self(b)
    }
}

/// Secret first, nonce second.
pub fn anon_id(secret: &SharedSecret, nonce: &Nonce32) -> AnonId {
    AnonId(keccak256_concat(&[&secret.0, &nonce.0]))
}

/// Byte-slice form of [`anon_id`] that validates lengths.
pub fn anon_id_from_slices(secret: &[u8], nonce: &[u8]) -> Result<AnonId> {
    let ss: [u8; 32] = to_array(secret, "shared secret")?;
    let n = Nonce32::from_slice(nonce)?;
    Ok(anon_id(&SharedSecret(ss), &n))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn keygen_is_deterministic_and_injective() {
        let a = keygen(&[1u8; 32]).unwrap();
        let b = keygen(&[1u8; 32]).unwrap();
        let c = keygen(&[2u8; 32]).unwrap();
        assert_eq!(a, b);
        assert_ne!(a.public(), c.public());
    }

    #[test]
    fn keygen_rejects_bad_seed_length() {
        assert!(matches!(keygen(&[0u8; 31]), Err(Error::Input(_))));
        assert!(matches!(keygen(&[0u8; 33]), Err(Error::Input(_))));
    }

    #[test]
    fn keygen_clamps_seed() {
        let kp = keygen(&[0xffu8; 32]).unwrap();
        let s = kp.secret().expose_bytes();
        assert_eq!(s[0] & 7, 0);
        assert_eq!(s[31] & 0x80, 0);
        assert_eq!(s[31] & 0x40, 0x40);
    }

    #[test]
    fn address_is_keccak_tail() {
        let zero = derive_address(&[0u8; 32]).unwrap();
        let digest = keccak256(&[0u8; 32]);
        assert_eq!(&zero.0[..], &digest[12..]);
        assert!(derive_address(&[0u8; 20]).is_err());
        let a = derive_address(&[1u8; 32]).unwrap();
        assert_eq!(a, derive_address(&[1u8; 32]).unwrap());
        assert_ne!(a, zero);
    }

    #[test]
    fn dh_is_symmetric_and_peer_specific() {
        let mut rng = ChaCha20Rng::seed_from_u64(3);
        let a = KeyPair::generate(&mut rng);
        let b = KeyPair::generate(&mut rng);
        let c = KeyPair::generate(&mut rng);
        let ab = shared_secret(a.secret(), &b.public()).unwrap();
        let ba = shared_secret(b.secret(), &a.public()).unwrap();
        let ac = shared_secret(a.secret(), &c.public()).unwrap();
        assert_eq!(ab, ba);
        assert_ne!(ab, ac);
    }

    #[test]
    fn low_order_point_rejected() {
        let a = keygen(&[9u8; 32]).unwrap();
        assert!(matches!(
            shared_secret(a.secret(), &PublicKey([0u8; 32])),
            Err(Error::LowOrderPoint)
        ));
    }

    #[test]
    fn anon_id_layout() {
        let id = anon_id(&SharedSecret([0u8; 32]), &Nonce32([0u8; 32]));
        assert_eq!(id.0, keccak256(&[0u8; 64]));
        let ss = SharedSecret([5u8; 32]);
        assert_ne!(anon_id(&ss, &Nonce32([1u8; 32])), anon_id(&ss, &Nonce32([2u8; 32])));
        assert!(anon_id_from_slices(&[0u8; 31], &[0u8; 32]).is_err());
        assert!(anon_id_from_slices(&[0u8; 32], &[0u8; 33]).is_err());
    }

    #[test]
    fn hex_types_roundtrip_through_serde() {
        let a = Address([0xab; 20]);
        let json = serde_json::to_string(&a).unwrap();
        assert_eq!(json, format!("\"{}\"", "ab".repeat(20)));
        assert_eq!(serde_json::from_str::<Address>(&json).unwrap(), a);
        assert!(Address::from_hex("0x1234").is_err());
    }
}
