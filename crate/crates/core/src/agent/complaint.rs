//! Complaint records, identifier canonicalization and the client plaintext format.

use crate::codec::{CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{hash, HashDigest};
use crate::enclave::TrustedTime;

/// Whitespace-trimmed, Unicode default case-folded form.
pub fn canonicalize(identifier: &str) -> String {
    caseless::default_case_fold_str(identifier.trim())
}

pub fn identifier_digest(identifier: &str) -> HashDigest {
    hash(canonicalize(identifier).as_bytes())
}

/// What a client encrypts to a writer agent.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ClientComplaint {
    pub perpetrator: String,
    pub user: String,
    pub body: Vec<u8>,
}

impl Encode for ClientComplaint {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.perpetrator).str(&self.user).bytes(&self.body);
    }
}

impl Decode for ClientComplaint {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ClientComplaint { perpetrator: r.string()?, user: r.string()?, body: r.vec()? })
    }
}

/// The ledger-resident form, only ever stored encrypted under the cluster key.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Complaint {
    pub perpetrator_id: HashDigest,
    pub user_id: HashDigest,
    pub body: Vec<u8>,
    pub submitted_at: TrustedTime,
}

impl Complaint {
    pub fn from_client(c: &ClientComplaint, submitted_at: TrustedTime) -> Self {
        Complaint {
            perpetrator_id: identifier_digest(&c.perpetrator),
            user_id: identifier_digest(&c.user),
            body: c.body.clone(),
            submitted_at,
        }
    }
}

impl Encode for Complaint {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.perpetrator_id).put(&self.user_id).bytes(&self.body).put(&self.submitted_at);
    }
}

impl Decode for Complaint {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Complaint { perpetrator_id: r.get()?, user_id: r.get()?, body: r.vec()?, submitted_at: r.get()? })
    }
}

/// Restart notice appended to the ledger after recovery.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RestartNotice {
    pub agent_id: HashDigest,
    pub machine_id: u32,
    pub t: TrustedTime,
}

impl Encode for RestartNotice {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.agent_id).u32(self.machine_id).put(&self.t);
    }
}

impl Decode for RestartNotice {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(RestartNotice { agent_id: r.get()?, machine_id: r.u32()?, t: r.get()? })
    }
}
