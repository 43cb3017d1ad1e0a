//! Ledger wire messages: `tag: u8 || len: u32 || body`.

use crate::codec::{CodecError, Decode, Encode, Frame, Reader, Writer};
use crate::crypto::Ciphertext;

use super::{EndorsedResponse, EntryKind, LedgerEntry, ProposalEndorsement, Query};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WireMsg {
    Propose { kind: EntryKind, payload: Ciphertext },
    Endorse(ProposalEndorsement),
    Commit { entry: LedgerEntry, endorsements: Vec<ProposalEndorsement> },
    Get { nonce: [u8; 32], query: Query },
    Response(EndorsedResponse),
}

impl WireMsg {
    pub fn tag(&self) -> u8 {
        match self {
            WireMsg::Propose { .. } => 1,
            WireMsg::Endorse(_) => 2,
            WireMsg::Commit { .. } => 3,
            WireMsg::Get { .. } => 4,
            WireMsg::Response(_) => 5,
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            WireMsg::Propose { .. } => "PROPOSE",
            WireMsg::Endorse(_) => "ENDORSE",
            WireMsg::Commit { .. } => "COMMIT",
            WireMsg::Get { .. } => "GET",
            WireMsg::Response(_) => "RESPONSE",
        }
    }

    fn body(&self) -> Frame {
        let mut w = Writer::new();
        match self {
            WireMsg::Propose { kind, payload } => w.put(kind).put(payload),
            WireMsg::Endorse(e) => w.put(e),
            WireMsg::Commit { entry, endorsements } => w.put(entry).list(endorsements),
            WireMsg::Get { nonce, query } => w.raw(nonce).put(query),
            WireMsg::Response(r) => w.put(r),
        };
        w.into_frame()
    }
}

impl Encode for WireMsg {
    fn encode(&self, w: &mut Writer) {
        let body = self.body();
        w.u8(self.tag()).u32(body.len() as u32).frame(&body);
    }
}

impl Decode for WireMsg {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let tag = r.u8()?;
        let body = r.bytes()?;
        let mut b = Reader::new(body);
        let msg = match tag {
            1 => WireMsg::Propose { kind: b.get()?, payload: b.get()? },
            2 => WireMsg::Endorse(b.get()?),
            3 => WireMsg::Commit { entry: b.get()?, endorsements: b.list()? },
            4 => WireMsg::Get { nonce: b.array()?, query: b.get()? },
            5 => WireMsg::Response(b.get()?),
            _ => return Err(CodecError::Invalid("wire tag")),
        };
        b.finish()?;
        Ok(msg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::{aead_encrypt, derive_rng, SymmetricKey};

    #[test]
    fn frames_are_tag_length_body() {
        let mut rng = derive_rng(3, "wire");
        let key = SymmetricKey::random(&mut rng);
        let payload = aead_encrypt(&key, b"hello", b"", &mut rng);
        for msg in [
            WireMsg::Propose { kind: EntryKind::Complaint, payload: payload.clone() },
            WireMsg::Get { nonce: [7; 32], query: Query::BySeq(9) },
            WireMsg::Commit { entry: LedgerEntry::new(0, EntryKind::ScanMarker, payload), endorsements: vec![] },
        ] {
            let bytes = msg.to_bytes();
            assert_eq!(bytes[0], msg.tag());
            assert_eq!(u32::from_be_bytes(bytes[1..5].try_into().unwrap()) as usize, bytes.len() - 5);
            assert_eq!(WireMsg::from_bytes(&bytes).unwrap(), msg);
        }
        assert_eq!(WireMsg::from_bytes(&[9, 0, 0, 0, 0]), Err(CodecError::Invalid("wire tag")));
    }
}
