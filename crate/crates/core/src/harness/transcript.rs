use crate::cryptokit::Address;
use crate::error::{Error, Result};

/// One message on the wire, captured byte-exact.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TranscriptEntry {
    pub tick: u64,
    pub sender: Address,
    pub recipient: Address,
    pub bytes: Vec<u8>,
}

/// Every inter-party message of a run, in send order. This is what an
/// honest-but-curious eavesdropper on the consortium network would see.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, sender: Address, recipient: Address, bytes: Vec<u8>) {
        let tick = self.entries.len() as u64;
        self.entries.push(TranscriptEntry {
            tick,
            sender,
            recipient,
            bytes,
        });
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Messages addressed to `recipient`.
    pub fn to_recipient(&self, recipient: &Address) -> impl Iterator<Item = &TranscriptEntry> {
        let recipient = *recipient;
        self.entries.iter().filter(move |e| e.recipient == recipient)
    }

    /// `transcript.bin`: per entry `u64le tick ‖ sender(20) ‖ recipient(20) ‖ u32le len ‖ bytes`.
    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        for e in &self.entries {
            out.extend_from_slice(&e.tick.to_le_bytes());
            out.extend_from_slice(&e.sender.0);
            out.extend_from_slice(&e.recipient.0);
            out.extend_from_slice(&(e.bytes.len() as u32).to_le_bytes());
            out.extend_from_slice(&e.bytes);
        }
        out
    }

    pub fn from_bytes(mut b: &[u8]) -> Result<Self> {
        let mut entries = Vec::new();
        while !b.is_empty() {
            if b.len() < 52 {
                return Err(Error::Format("truncated transcript entry header".into()));
            }
            let tick = u64::from_le_bytes(b[..8].try_into().expect("8 bytes"));
            let sender = Address(b[8..28].try_into().expect("20 bytes"));
            let recipient = Address(b[28..48].try_into().expect("20 bytes"));
            let len = u32::from_le_bytes(b[48..52].try_into().expect("4 bytes")) as usize;
            b = &b[52..];
            if b.len() < len {
                return Err(Error::Format("truncated transcript entry body".into()));
            }
            entries.push(TranscriptEntry {
                tick,
                sender,
                recipient,
                bytes: b[..len].to_vec(),
            });
            b = &b[len..];
        }
        Ok(Self { entries })
    }
}
