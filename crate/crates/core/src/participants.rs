//! Non-enclave endpoints: the complaint-submitting client and the authority inbox.

use std::collections::BTreeSet;

use serde::Serialize;
use thiserror::Error;

use crate::agent::complaint::ClientComplaint;
use crate::agent::host::AgentHost;
use crate::agent::program::{ack_ad, complaint_ad, ACK_SUCCESS, REPORT_AD};
use crate::agent::scanner::{unpack_report, MatchRecord};
use crate::attestation::{distinct_valid_leases, verify_attested, PubInfo};
use crate::bus::Bus;
use crate::codec::{Decode, Encode, Writer};
use crate::crypto::{
    aead_decrypt, aead_encrypt, generate_keypair, open_sealed, shared_key, HashDigest, PublicKey, Scheme, SealedBox,
    SigningKeyPair, SimRng, SymmetricKey,
};
use crate::enclave::{Measurement, SimClock, TrustedTime};
use crate::ledger::LedgerNetwork;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Error)]
#[serde(rename_all = "kebab-case")]
pub enum SubmitFailure {
    #[error("attestation")]
    Attestation,
    #[error("leases")]
    Leases,
    #[error("transport")]
    Transport,
    #[error("no-ack")]
    NoAck,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SubmitOutcome {
    Acked,
    Failed(SubmitFailure),
}

/// Verification parameters a client is configured with.
#[derive(Debug, Clone)]
pub struct ClientConfig {
    pub econf_mr: Measurement,
    pub ias_pk: PublicKey,
    pub admin_pks: Vec<PublicKey>,
    pub k: usize,
}

/// One ephemeral channel to one verified agent.
pub struct ClientSession {
    pub keypair: SigningKeyPair,
    pub session_key: SymmetricKey,
    pub target: PubInfo,
}

pub struct Client {
    name: String,
    config: ClientConfig,
    clock: SimClock,
    rng: SimRng,
    receipts: Vec<HashDigest>,
}

impl Client {
    pub fn new(name: impl Into<String>, config: ClientConfig, clock: SimClock, rng: SimRng) -> Self {
        Client { name: name.into(), config, clock, rng, receipts: Vec::new() }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    /// Digests of acknowledged complaint ciphertexts.
    pub fn receipts(&self) -> &[HashDigest] {
        &self.receipts
    }

    /// Attestation first, then k distinct admins with leases not yet past `creation_time + ttl`.
    pub fn verify(&self, info: &PubInfo) -> Result<(), SubmitFailure> {
        let cfg = &self.config;
        verify_attested(info, &cfg.econf_mr, &cfg.ias_pk).map_err(|_| SubmitFailure::Attestation)?;
        let now = self.clock.now();
        let fresh: Vec<_> = info.leases.iter().filter(|l| l.creation_time.saturating_add(l.ttl()) >= now).cloned().collect();
        if distinct_valid_leases(&fresh, &info.agent_id(), &cfg.admin_pks) < cfg.k {
            return Err(SubmitFailure::Leases);
        }
        Ok(())
    }

    pub fn open_session(&mut self, info: PubInfo) -> Result<ClientSession, SubmitFailure> {
        self.verify(&info)?;
        let keypair = generate_keypair(Scheme::Agent, &mut self.rng);
        let session_key = shared_key(&keypair.secret, &info.agent_pk).map_err(|_| SubmitFailure::Attestation)?;
        Ok(ClientSession { keypair, session_key, target: info })
    }

    /// Full client flow against one writer host; nothing but public keys leaves before verification.
    pub fn submit(
        &mut self,
        host: &mut AgentHost,
        ledger: &mut LedgerNetwork,
        bus: &mut Bus,
        complaint: &ClientComplaint,
    ) -> SubmitOutcome {
        match self.try_submit(host, ledger, bus, complaint) {
            Ok(()) => SubmitOutcome::Acked,
            Err(f) => SubmitOutcome::Failed(f),
        }
    }

    fn try_submit(
        &mut self,
        host: &mut AgentHost,
        ledger: &mut LedgerNetwork,
        bus: &mut Bus,
        complaint: &ClientComplaint,
    ) -> Result<(), SubmitFailure> {
        let info = host.pub_info().ok_or(SubmitFailure::Attestation)?;
        if !bus.send(host.name(), &self.name, "PUB_INFO", info.to_frame()) {
            return Err(SubmitFailure::Transport);
        }
        let session = self.open_session(info)?;
        let agent_id = session.target.agent_id();
        let data = aead_encrypt(&session.session_key, &complaint.to_bytes(), &complaint_ad(&agent_id), &mut self.rng);
        let mut w = Writer::new();
        w.put(&session.keypair.public).put(&data);
        if !bus.send(&self.name, host.name(), "COMPLAINT", w.into_frame()) {
            return Err(SubmitFailure::Transport);
        }
        let receipt = crate::crypto::hash(&data.to_bytes());
        let ack = host.submit_complaint(ledger, session.keypair.public.clone(), data).map_err(|_| SubmitFailure::NoAck)?;
        if !bus.send(host.name(), &self.name, "ACK", ack.to_frame()) {
            return Err(SubmitFailure::Transport);
        }
        match aead_decrypt(&session.session_key, &ack, &ack_ad(&agent_id)) {
            Ok(p) if p == ACK_SUCCESS => {
                self.receipts.push(receipt);
                Ok(())
            }
            _ => Err(SubmitFailure::NoAck),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InboxError {
    #[error("report is {got} bytes, expected {expected}")]
    BadLength { got: usize, expected: usize },
    #[error("report failed authentication")]
    AuthFailure,
}

/// Authority side of the periodic report channel.
pub struct AuthorityInbox {
    keypair: SigningKeyPair,
    report_size: usize,
    received: Vec<(TrustedTime, usize)>,
    matches: Vec<MatchRecord>,
}

impl AuthorityInbox {
    pub fn new(keypair: SigningKeyPair, report_size: usize) -> Self {
        AuthorityInbox { keypair, report_size, received: Vec::new(), matches: Vec::new() }
    }

    pub fn generate(rng: &mut SimRng, report_size: usize) -> Self {
        Self::new(generate_keypair(Scheme::Agent, rng), report_size)
    }

    pub fn public_key(&self) -> &PublicKey {
        &self.keypair.public
    }

    /// Appends and returns the matches carried by one report.
    pub fn receive(&mut self, at: TrustedTime, report: &[u8]) -> Result<Vec<MatchRecord>, InboxError> {
        if report.len() != self.report_size {
            return Err(InboxError::BadLength { got: report.len(), expected: self.report_size });
        }
        let sealed = SealedBox::from_bytes(report).map_err(|_| InboxError::AuthFailure)?;
        let plain = open_sealed(&self.keypair.secret, &sealed, REPORT_AD).map_err(|_| InboxError::AuthFailure)?;
        let records = unpack_report(&plain).map_err(|_| InboxError::AuthFailure)?;
        self.received.push((at, report.len()));
        self.matches.extend(records.iter().cloned());
        Ok(records)
    }

    /// (arrival time, byte length) of every accepted report.
    pub fn received(&self) -> &[(TrustedTime, usize)] {
        &self.received
    }

    pub fn matches(&self) -> &[MatchRecord] {
        &self.matches
    }

    /// Perpetrators reported so far.
    pub fn matched_perpetrators(&self) -> BTreeSet<HashDigest> {
        self.matches.iter().map(|m| m.perpetrator_id).collect()
    }

    /// Arrival gaps longer than `period`.
    pub fn cadence_gaps(&self, period: u64) -> Vec<(u64, u64)> {
        self.received.windows(2).filter(|w| w[1].0.time - w[0].0.time > period).map(|w| (w[0].0.time, w[1].0.time)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::agent::complaint::Complaint;
    use crate::agent::scanner::pack_report;
    use crate::attestation::{AttestationAuthority, Quote};
    use crate::crypto::{derive_rng, hash, seal_to};

    fn t(time: u64) -> TrustedTime {
        TrustedTime { time, nonce: [7; 32] }
    }

    fn report(inbox: &AuthorityInbox, records: &[MatchRecord], rng: &mut SimRng) -> Vec<u8> {
        let (plain, rest) = pack_report(records, inbox.report_size - SealedBox::encoded_len(0));
        assert!(rest.is_empty());
        seal_to(inbox.public_key(), &plain, REPORT_AD, rng).unwrap().to_bytes()
    }

    #[test]
    fn inbox_decrypts_empty_and_matching_reports_at_equal_length() {
        let mut rng = derive_rng(1, "inbox");
        let mut inbox = AuthorityInbox::generate(&mut rng, 1024);
        let empty = report(&inbox, &[], &mut rng);
        let c = |u: u8| Complaint { perpetrator_id: hash(b"p"), user_id: hash(&[u]), body: vec![u; 4], submitted_at: t(0) };
        let one = report(&inbox, &[MatchRecord { perpetrator_id: hash(b"p"), complaints: vec![c(1), c(2)] }], &mut rng);
        assert_eq!(empty.len(), one.len());
        assert!(inbox.receive(t(10), &empty).unwrap().is_empty());
        let got = inbox.receive(t(20), &one).unwrap();
        assert_eq!(got[0].complaints.len(), 2);
        assert_eq!(inbox.matched_perpetrators().len(), 1);
        assert_eq!(inbox.cadence_gaps(5), vec![(10, 20)]);
    }

    #[test]
    fn inbox_rejects_truncated_and_tampered_reports() {
        let mut rng = derive_rng(2, "inbox");
        let mut inbox = AuthorityInbox::generate(&mut rng, 512);
        let mut r = report(&inbox, &[], &mut rng);
        assert_eq!(inbox.receive(t(0), &r[..511]), Err(InboxError::BadLength { got: 511, expected: 512 }));
        r[300] ^= 1;
        assert_eq!(inbox.receive(t(0), &r), Err(InboxError::AuthFailure));
        assert!(inbox.received().is_empty());
    }

    #[test]
    fn client_refuses_impostor_before_sending_anything() {
        let mut rng = derive_rng(3, "client");
        let ias = AttestationAuthority::new(&mut rng);
        let mut rogue = AttestationAuthority::new(&mut rng);
        let agent = generate_keypair(Scheme::Agent, &mut rng);
        let quote = Quote { measurement: Measurement::default(), user_data: agent.public.fingerprint().0, platform_info: vec![] };
        let forged = rogue.sign_quote(&quote);
        let cfg = ClientConfig { econf_mr: Measurement::default(), ias_pk: ias.public_key(), admin_pks: vec![], k: 0 };
        let client = Client::new("client", cfg, SimClock::new(0), rng);
        let info = PubInfo { agent_pk: agent.public, report: forged, leases: vec![] };
        assert_eq!(client.verify(&info), Err(SubmitFailure::Attestation));
    }
}
