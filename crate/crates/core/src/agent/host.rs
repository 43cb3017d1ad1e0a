//! Untrusted host process around one agent enclave: disk files, log export, ledger round-trips.

use thiserror::Error;

use crate::admin::{AgentEndpoint, Lease, Publication, Role};
use crate::attestation::{AttestationAuthority, PubInfo};
use crate::bus::Bus;
use crate::codec::{Decode, Encode, Reader, Writer};
use crate::crypto::{Ciphertext, HashDigest, PublicKey, Signature};
use crate::enclave::{Enclave, Machine, SealedBlob, TrustedTime};
use crate::ledger::{merkle, payload_hash, EndorsedResponse, EntryKind, LedgerNetwork, Query, StateView};

use super::config::AgentConfig;
use super::log::{LogHead, LogRecord};
use super::program::{AgentError, AgentProgram, Reply, Request};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HostError {
    #[error("agent: {0}")]
    Agent(#[from] AgentError),
    #[error("attestation service refused the quote")]
    Attestation,
    #[error("agent has not completed attestation")]
    NotAttested,
    #[error("no sealed state on this machine")]
    NoSealedState,
    #[error("unexpected reply to {0}")]
    UnexpectedReply(&'static str),
    #[error("message dropped in transit")]
    Dropped,
}

pub fn sealed_file_name(agent_id: &HashDigest) -> String {
    format!("agent-{}.sealed", &agent_id.to_hex()[..16])
}

pub fn lease_file_name(agent_id: &HashDigest) -> String {
    format!("agent-{}.leases", &agent_id.to_hex()[..16])
}

/// Response an enclave will reject, standing in for a GET that reached no quorum.
fn unreachable_response() -> EndorsedResponse {
    EndorsedResponse { view: StateView::Head { root: merkle::empty_root(), count: 0 }, endorsements: Vec::new() }
}

pub struct AgentHost {
    name: String,
    enclave: Enclave<AgentProgram>,
    publication: Option<Publication>,
    leases: Vec<Lease>,
    log: Vec<LogRecord>,
    acked: Vec<HashDigest>,
}

impl AgentHost {
    pub fn new(name: impl Into<String>, machine: Machine, config: AgentConfig) -> Self {
        AgentHost { name: name.into(), enclave: Enclave::launch(machine, config), publication: None, leases: Vec::new(), log: Vec::new(), acked: Vec::new() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn enclave(&self) -> &Enclave<AgentProgram> {
        &self.enclave
    }

    pub fn enclave_mut(&mut self) -> &mut Enclave<AgentProgram> {
        &mut self.enclave
    }

    pub fn machine(&self) -> &Machine {
        self.enclave.machine()
    }

    /// One ecall; the returned log record is appended to the host's export.
    pub fn call(&mut self, request: &Request) -> Result<Reply, AgentError> {
        let response = self.enclave.call(request);
        if !response.record.signature.0.is_empty() {
            self.log.push(response.record);
        }
        response.result
    }

    pub fn attest(&mut self, ias: &mut AttestationAuthority) -> Result<Publication, HostError> {
        let Reply::Quote { quote, .. } = self.call(&Request::AttestBegin)? else {
            return Err(HostError::UnexpectedReply("attest-begin"));
        };
        let report = ias.sign_quote_bytes(&quote.to_bytes()).map_err(|_| HostError::Attestation)?;
        let Reply::Published(p) = self.call(&Request::AttestComplete { report })? else {
            return Err(HostError::UnexpectedReply("attest-complete"));
        };
        self.publication = Some(p.clone());
        Ok(p)
    }

    pub fn publication_ref(&self) -> Option<&Publication> {
        self.publication.as_ref()
    }

    pub fn agent_id(&self) -> Option<HashDigest> {
        self.publication.as_ref().map(Publication::agent_id)
    }

    pub fn agent_pk(&self) -> Option<PublicKey> {
        self.publication.as_ref().map(|p| p.agent_pk.clone())
    }

    pub fn pub_info(&self) -> Option<PubInfo> {
        let p = self.publication.as_ref()?;
        Some(PubInfo { agent_pk: p.agent_pk.clone(), report: p.report.clone(), leases: self.leases.clone() })
    }

    pub fn leases(&self) -> &[Lease] {
        &self.leases
    }

    fn write_leases(&mut self) {
        let Some(id) = self.agent_id() else { return };
        let mut w = Writer::new();
        for l in &self.leases {
            w.bytes(&l.to_wire());
        }
        self.enclave.machine_mut().write_file(&lease_file_name(&id), &w.into_bytes());
    }

    /// Stores leases in the clear on disk and hands the ordinary ones to the enclave.
    pub fn install_leases(&mut self, new: Vec<Lease>) -> Result<Role, AgentError> {
        for l in new {
            self.leases.retain(|old| !(old.admin_id == l.admin_id && old.is_upgrade() == l.is_upgrade()));
            self.leases.push(l);
        }
        self.leases.sort_by_key(|l| (l.is_upgrade(), l.admin_id));
        self.write_leases();
        self.push_leases()
    }

    fn push_leases(&mut self) -> Result<Role, AgentError> {
        let ordinary: Vec<Lease> = self.leases.iter().filter(|l| !l.is_upgrade()).cloned().collect();
        match self.call(&Request::AcceptLeases { leases: ordinary })? {
            Reply::Role(r) => Ok(r),
            _ => Err(AgentError::Malformed("accept-leases reply".into())),
        }
    }

    /// Reloads the lease file written before a reboot.
    pub fn reload_leases(&mut self) -> Result<Role, AgentError> {
        let id = self.agent_id().ok_or(AgentError::NotAttested)?;
        let Some(bytes) = self.enclave.machine().read_file(&lease_file_name(&id)).map(<[u8]>::to_vec) else {
            return Err(AgentError::NoPending);
        };
        let mut r = Reader::new(&bytes);
        let mut leases = Vec::new();
        while r.remaining() > 0 {
            match r.bytes().ok().and_then(|b| Lease::from_wire(b).ok()) {
                Some(l) => leases.push(l),
                None => break,
            }
        }
        self.leases = leases;
        self.push_leases()
    }

    pub fn role(&mut self) -> Result<Role, AgentError> {
        self.push_leases()
    }

    /// Payload hashes of complaints this host saw acknowledged.
    pub fn acked_payloads(&self) -> &[HashDigest] {
        &self.acked
    }

    pub fn log_len(&self) -> u64 {
        self.log.len() as u64
    }

    pub fn export_log(&self, from: u64) -> &[LogRecord] {
        &self.log[(from as usize).min(self.log.len())..]
    }

    /// Untrusted-host tampering with its own export (log-mutation scenarios).
    pub fn log_mut(&mut self) -> &mut Vec<LogRecord> {
        &mut self.log
    }

    pub fn log_head(&mut self, nonce: [u8; 32]) -> Result<LogHead, AgentError> {
        match self.call(&Request::LogHead { nonce })? {
            Reply::Head(h) => Ok(h),
            _ => Err(AgentError::Malformed("log-head reply".into())),
        }
    }

    pub fn tick(&mut self) -> Result<(), AgentError> {
        self.call(&Request::PeriodicTick).map(|_| ())
    }

    pub fn seal(&mut self) -> Result<(), HostError> {
        let id = self.agent_id().ok_or(HostError::NotAttested)?;
        let Reply::Sealed(blob) = self.call(&Request::SealState)? else {
            return Err(HostError::UnexpectedReply("seal-state"));
        };
        self.enclave.machine_mut().write_file(&sealed_file_name(&id), &blob.to_bytes());
        Ok(())
    }

    pub fn sealed_blob(&self) -> Option<Vec<u8>> {
        let id = self.agent_id()?;
        self.enclave.machine().read_file(&sealed_file_name(&id)).map(<[u8]>::to_vec)
    }

    /// AbortAll: erases the enclave's volatile key and the sealed file.
    pub fn abort(&mut self) {
        let _ = self.call(&Request::Abort);
        if let Some(id) = self.agent_id() {
            self.enclave.machine_mut().delete_file(&sealed_file_name(&id));
        }
    }

    pub fn reboot(&mut self) {
        self.enclave.reboot();
    }

    /// Restores sealed state and appends the restart notice to the ledger.
    pub fn recover(&mut self, ledger: &mut LedgerNetwork) -> Result<(), HostError> {
        let bytes = self.sealed_blob().ok_or(HostError::NoSealedState)?;
        let blob = SealedBlob::from_bytes(&bytes).map_err(|_| HostError::NoSealedState)?;
        self.recover_from(blob, ledger)
    }

    pub fn recover_from(&mut self, blob: SealedBlob, ledger: &mut LedgerNetwork) -> Result<(), HostError> {
        let Reply::Recovered { critical } = self.call(&Request::Recover { blob })? else {
            return Err(HostError::UnexpectedReply("recover"));
        };
        ledger.update(&self.name, EntryKind::CriticalLog, critical);
        Ok(())
    }

    fn fetch(&mut self, ledger: &mut LedgerNetwork, nonce: [u8; 32], query: Query) -> EndorsedResponse {
        ledger.get(&self.name, nonce, query).unwrap_or_else(|_| unreachable_response())
    }

    /// UPDATE, then nonce-fresh GETs until the enclave confirms or gives up.
    fn commit_and_confirm(
        &mut self,
        ledger: &mut LedgerNetwork,
        kind: EntryKind,
        payload: Ciphertext,
        mut nonce: [u8; 32],
        confirm: impl Fn(EndorsedResponse) -> Request,
    ) -> Result<Reply, AgentError> {
        let receipt = ledger.update(&self.name, kind, payload);
        let query = receipt.seq.map_or(Query::Head, Query::BySeq);
        loop {
            let response = self.fetch(ledger, nonce, query);
            match self.call(&confirm(response)) {
                Err(AgentError::NotCommitted { retry_nonce: Some(n) }) => nonce = n,
                other => return other,
            }
        }
    }

    /// Writer flow after the client's encrypted complaint arrives; returns `enc_ack`.
    pub fn submit_complaint(
        &mut self,
        ledger: &mut LedgerNetwork,
        client_pk: PublicKey,
        data: Ciphertext,
    ) -> Result<Ciphertext, AgentError> {
        let Reply::Staged { payload, nonce } = self.call(&Request::SubmitComplaint { client_pk, data })? else {
            return Err(AgentError::Malformed("submit reply".into()));
        };
        let ph = payload_hash(&payload);
        match self.commit_and_confirm(ledger, EntryKind::Complaint, payload, nonce, |response| Request::ConfirmUpdate {
            payload_hash: ph,
            response,
        })? {
            Reply::Acked(ack) => {
                self.acked.push(ph);
                Ok(ack)
            }
            _ => Err(AgentError::Malformed("confirm reply".into())),
        }
    }

    /// Scanner flow: verified GET-ALL, marker commit, then the fixed-size report.
    pub fn scan(&mut self, ledger: &mut LedgerNetwork) -> Result<Vec<u8>, AgentError> {
        let Reply::ScanNonce(n) = self.call(&Request::BeginScan)? else {
            return Err(AgentError::Malformed("begin-scan reply".into()));
        };
        let response = self.fetch(ledger, n, Query::All);
        let Reply::Staged { payload, nonce } = self.call(&Request::ScanLedger { response })? else {
            return Err(AgentError::Malformed("scan reply".into()));
        };
        match self.commit_and_confirm(ledger, EntryKind::ScanMarker, payload, nonce, |response| Request::ConfirmScan { response })? {
            Reply::Report(r) => Ok(r),
            _ => Err(AgentError::Malformed("confirm-scan reply".into())),
        }
    }
}

impl AgentEndpoint for AgentHost {
    fn publication(&mut self) -> Option<Publication> {
        self.publication.clone()
    }

    fn signed_trusted_time(&mut self) -> Option<(TrustedTime, Signature)> {
        match self.call(&Request::GetTrustedTime) {
            Ok(Reply::Time { t, sig }) => Some((t, sig)),
            _ => None,
        }
    }

    fn log_anchor(&mut self, nonce: [u8; 32]) -> Option<(LogHead, u64)> {
        let head = self.log_head(nonce).ok()?;
        Some((head, self.log_len()))
    }
}

/// Key hand-off between two hosts: receiver vets sender, sender vets receiver, key crosses encrypted.
pub fn transfer_key(sender: &mut AgentHost, receiver: &mut AgentHost, bus: &mut Bus) -> Result<(), HostError> {
    let s_info = sender.pub_info().ok_or(HostError::NotAttested)?;
    let r_info = receiver.pub_info().ok_or(HostError::NotAttested)?;
    if !bus.send(&receiver.name, &sender.name, "PUB_INFO", r_info.to_frame())
        || !bus.send(&sender.name, &receiver.name, "PUB_INFO", s_info.to_frame())
    {
        return Err(HostError::Dropped);
    }
    receiver.call(&Request::TransferKeyExpect { sender: s_info.clone() })?;
    let Reply::KeyCiphertext(ct) = sender.call(&Request::TransferKeySend { receiver: r_info })? else {
        return Err(HostError::UnexpectedReply("transfer-key-send"));
    };
    if !bus.send(&sender.name, &receiver.name, "ENC_KEY", ct.to_frame()) {
        return Err(HostError::Dropped);
    }
    receiver.call(&Request::TransferKeyReceive { sender_pk: s_info.agent_pk, ct })?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{Cluster, ScenarioConfig};

    fn cluster() -> Cluster {
        let mut cfg = ScenarioConfig::baseline(4, 3, 2, 3);
        cfg.tick_seconds = 0;
        cfg.scan_period_seconds = 0;
        let mut c = Cluster::new(cfg).unwrap();
        c.inception().unwrap();
        c
    }

    #[test]
    fn unattested_host_has_no_identity() {
        let c = cluster();
        let mut h = AgentHost::new("fresh", Machine::new(9, 3, c.clock.clone(), c.trace.clone(), c.registry.clone()), c.agent_config.clone());
        assert!(h.pub_info().is_none());
        assert_eq!(h.seal(), Err(HostError::NotAttested));
        assert!(matches!(h.call(&Request::GenerateClusterKey), Err(AgentError::NotLeased(_))));
    }

    #[test]
    fn sealed_state_survives_reboot() {
        let mut c = cluster();
        let id = c.hosts[1].agent_id().unwrap();
        let before = c.key_digests();
        c.hosts[1].seal().unwrap();
        assert!(c.hosts[1].sealed_blob().is_some());
        c.hosts[1].reboot();
        c.hosts[1].recover(&mut c.ledger).unwrap();
        assert!(matches!(c.hosts[1].reload_leases(), Err(AgentError::NotLeased(_))));
        assert_eq!(c.hosts[1].agent_id(), Some(id));
        assert_eq!(c.key_digests(), before);
    }

    #[test]
    fn abort_erases_sealed_file() {
        let mut c = cluster();
        c.hosts[1].seal().unwrap();
        c.hosts[1].abort();
        assert!(c.hosts[1].sealed_blob().is_none());
        c.hosts[1].reboot();
        assert_eq!(c.hosts[1].recover(&mut c.ledger), Err(HostError::NoSealedState));
    }

    #[test]
    fn file_names_are_per_agent() {
        let a = HashDigest([1; 32]);
        let b = HashDigest([2; 32]);
        assert_ne!(sealed_file_name(&a), sealed_file_name(&b));
        assert_ne!(sealed_file_name(&a), lease_file_name(&a));
    }
}
