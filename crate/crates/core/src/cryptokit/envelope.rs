//! Sealed envelopes in the `x25519-xsalsa20-poly1305` shape used by
//! Ethereum's `eth_getEncryptionPublicKey` / `eth_decrypt` flow.

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use crypto_box::aead::generic_array::GenericArray;
use crypto_box::aead::Aead;
use crypto_box::SalsaBox;
use rand::{CryptoRng, RngCore};
use serde::{Deserialize, Serialize};

use super::keys::{to_array, KeyPair, PublicKey, SecretKey};
use crate::error::{Error, Result};

pub const ENVELOPE_VERSION: &str = "x25519-xsalsa20-poly1305";
pub const TAG_LEN: usize = 16;

#[derive(Clone, PartialEq, Eq, Debug)]
pub struct EncryptedEnvelope {
    pub version: String,
    pub nonce: [u8; 24],
    /// Public key of the sending key pair (ephemeral unless a long-term key was supplied).
    pub ephemeral_public: PublicKey,
    pub ciphertext: Vec<u8>,
}

fn salsa_box(public: &PublicKey, secret: &SecretKey) -> SalsaBox {
    SalsaBox::new(
        &crypto_box::PublicKey::from(public.0),
        &crypto_box::SecretKey::from(*secret.expose_bytes()),
    )
}

/// Seals `plaintext` from `sender` to `recipient` under an explicit nonce.
pub fn seal(
    sender: &SecretKey,
    recipient: &PublicKey,
    nonce: &[u8; 24],
    plaintext: &[u8],
) -> Result<EncryptedEnvelope> {
    let ciphertext = salsa_box(recipient, sender)
        .encrypt(GenericArray::from_slice(nonce), plaintext)
        .map_err(|_| Error::Input("encryption failed".into()))?;
    Ok(EncryptedEnvelope {
        version: ENVELOPE_VERSION.to_string(),
        nonce: *nonce,
        ephemeral_public: sender.public_key(),
        ciphertext,
    })
}

/// Byte-slice form of [`seal`] that validates lengths.
pub fn seal_slices(
    sender_secret: &[u8],
    recipient_public: &[u8],
    nonce: &[u8],
    plaintext: &[u8],
) -> Result<EncryptedEnvelope> {
    let sk = SecretKey::from_bytes(to_array(sender_secret, "sender secret key")?);
    let pk = PublicKey(to_array(recipient_public, "recipient public key")?);
    let n: [u8; 24] = to_array(nonce, "envelope nonce")?;
    seal(&sk, &pk, &n, plaintext)
}

/// Seals with a fresh ephemeral sender key and nonce drawn from `rng`.
pub fn seal_ephemeral<R: RngCore + CryptoRng>(
    rng: &mut R,
    recipient: &PublicKey,
    plaintext: &[u8],
) -> Result<EncryptedEnvelope> {
    let ephemeral = KeyPair::generate(rng);
    let mut nonce = [0u8; 24];
    rng.fill_bytes(&mut nonce);
    seal(ephemeral.secret(), recipient, &nonce, plaintext)
}

/// Opens an envelope addressed to `recipient`. Fails without partial output.
pub fn open(recipient: &SecretKey, env: &EncryptedEnvelope) -> Result<Vec<u8>> {
    if env.version != ENVELOPE_VERSION {
        return Err(Error::Format(format!("unknown envelope version {:?}", env.version)));
    }
    if env.ciphertext.len() < TAG_LEN {
        return Err(Error::Decryption);
    }
    salsa_box(&env.ephemeral_public, recipient)
        .decrypt(GenericArray::from_slice(&env.nonce), env.ciphertext.as_slice())
        .map_err(|_| Error::Decryption)
}

#[derive(Serialize, Deserialize)]
struct EnvelopeJson {
    version: String,
    nonce: String,
    #[serde(rename = "ephemPublicKey")]
    ephem_public_key: String,
    ciphertext: String,
}

impl Serialize for EncryptedEnvelope {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        EnvelopeJson {
            version: self.version.clone(),
            nonce: B64.encode(self.nonce),
            ephem_public_key: B64.encode(self.ephemeral_public.0),
            ciphertext: B64.encode(&self.ciphertext),
        }
        .serialize(s)
    }
}

impl<'de> Deserialize<'de> for EncryptedEnvelope {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        use serde::de::Error as _;
        let j = EnvelopeJson::deserialize(d)?;
        let nonce = B64.decode(&j.nonce).map_err(D::Error::custom)?;
        let ephem = B64.decode(&j.ephem_public_key).map_err(D::Error::custom)?;
        let ciphertext = B64.decode(&j.ciphertext).map_err(D::Error::custom)?;
        Ok(EncryptedEnvelope {
            version: j.version,
            nonce: to_array(&nonce, "nonce").map_err(D::Error::custom)?,
            ephemeral_public: PublicKey(to_array(&ephem, "ephemPublicKey").map_err(D::Error::custom)?),
            ciphertext,
        })
    }
}

impl EncryptedEnvelope {
    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("envelope serializes")
    }

    pub fn from_json(s: &str) -> Result<Self> {
        serde_json::from_str(s).map_err(|e| Error::Format(format!("envelope json: {e}")))
    }

    /// Binary wire framing: `u8 version length ‖ version ‖ nonce(24) ‖
    /// ephemeral public(32) ‖ u32le ciphertext length ‖ ciphertext`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let v = self.version.as_bytes();
        let mut out = Vec::with_capacity(1 + v.len() + 24 + 32 + 4 + self.ciphertext.len());
        out.push(v.len() as u8);
        out.extend_from_slice(v);
        out.extend_from_slice(&self.nonce);
        out.extend_from_slice(&self.ephemeral_public.0);
        out.extend_from_slice(&(self.ciphertext.len() as u32).to_le_bytes());
        out.extend_from_slice(&self.ciphertext);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let short = || Error::Format("truncated envelope".into());
        let (&vlen, rest) = bytes.split_first().ok_or_else(short)?;
        let vlen = vlen as usize;
        if rest.len() < vlen + 24 + 32 + 4 {
            return Err(short());
        }
        let version = std::str::from_utf8(&rest[..vlen])
            .map_err(|_| Error::Format("envelope version is not utf-8".into()))?
            .to_string();
        let rest = &rest[vlen..];
        let nonce: [u8; 24] = rest[..24].try_into().expect("length checked");
        let ephem: [u8; 32] = rest[24..56].try_into().expect("length checked");
        let ct_len = u32::from_le_bytes(rest[56..60].try_into().expect("length checked")) as usize;
        let ct = &rest[60..];
        if ct.len() != ct_len {
            return Err(Error::Format(format!(
                "envelope ciphertext length {} does not match header {ct_len}",
                ct.len()
            )));
        }
        Ok(Self {
            version,
            nonce,
            ephemeral_public: PublicKey(ephem),
            ciphertext: ct.to_vec(),
        })
    }

    /// An unencrypted carrier with the plaintext in the ciphertext field.
    /// Only used by the harness negative control; [`open`] refuses it.
    pub fn cleartext(sender: PublicKey, plaintext: &[u8]) -> Self {
        Self {
            version: CLEARTEXT_VERSION.to_string(),
            nonce: [0u8; 24],
            ephemeral_public: sender,
            ciphertext: plaintext.to_vec(),
        }
    }
}

pub const CLEARTEXT_VERSION: &str = "none";
