//! The agent enclave program: every request it serves and the state it keeps inside the boundary.

use std::collections::BTreeMap;

use thiserror::Error;

use crate::admin::{trusted_time_message, Lease, Publication, Role};
use crate::attestation::{create_quote, upgrade_approvals, verify_pub_info, verify_report, AttestationReport, PubInfo, Quote, RejectReason};
use crate::codec::{CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{
    aead_decrypt, aead_encrypt, generate_keypair, seal_to, shared_key, sign, Ciphertext, HashDigest, PublicKey, Scheme,
    SecretKey, Signature, SigningKeyPair, SymmetricKey,
};
use crate::enclave::{EnclaveEnv, EnclaveProgram, SealError, SealedBlob, TrustedTime};
use crate::ledger::{payload_hash, verify_endorsed, CertCache, EndorsedResponse, EntryKind, LedgerReject, StateView};
use rand::RngCore;

use super::complaint::{ClientComplaint, Complaint, RestartNotice};
use super::config::AgentConfig;
use super::log::{LogHead, LogKind, LogRecord, LogWriter};
use super::scanner::{compute_matches, pack_report, ScanItem, ScanMarker};

pub const ACK_SUCCESS: &[u8] = b"success";

pub fn complaint_ad(agent_id: &HashDigest) -> Vec<u8> {
    [b"confid/complaint".as_slice(), agent_id.as_bytes()].concat()
}

pub fn ack_ad(agent_id: &HashDigest) -> Vec<u8> {
    [b"confid/ack".as_slice(), agent_id.as_bytes()].concat()
}

pub fn key_transfer_ad(sender: &HashDigest, receiver: &HashDigest) -> Vec<u8> {
    [b"confid/key-transfer".as_slice(), sender.as_bytes(), receiver.as_bytes()].concat()
}

pub const REPORT_AD: &[u8] = b"confid/report";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Error)]
pub enum NotLeasedReason {
    #[error("insufficient")]
    Insufficient,
    #[error("expired")]
    Expired,
    #[error("conflict")]
    Conflict,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("not leased ({0})")]
    NotLeased(NotLeasedReason),
    #[error("lease role lacks {0}")]
    WrongRole(String),
    #[error("agent not attested")]
    NotAttested,
    #[error("cluster key missing")]
    MissingKey,
    #[error("peer rejected: {0}")]
    Rejected(RejectReason),
    #[error("leader conflict")]
    LeaderConflict,
    #[error("ledger response rejected: {0}")]
    Ledger(LedgerReject),
    #[error("update not committed")]
    NotCommitted { retry_nonce: Option<[u8; 32]> },
    #[error("authentication failure")]
    AuthFailure,
    #[error("no pending operation")]
    NoPending,
    #[error("unseal failed: {0}")]
    Seal(SealError),
    #[error("malformed input: {0}")]
    Malformed(String),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Request {
    AttestBegin,
    AttestComplete { report: AttestationReport },
    GetTrustedTime,
    LogHead { nonce: [u8; 32] },
    AcceptLeases { leases: Vec<Lease> },
    PeriodicTick,
    Recover { blob: SealedBlob },
    Abort,
    GenerateClusterKey,
    TransferKeyExpect { sender: PubInfo },
    TransferKeySend { receiver: PubInfo },
    TransferKeyReceive { sender_pk: PublicKey, ct: Ciphertext },
    SealState,
    SubmitComplaint { client_pk: PublicKey, data: Ciphertext },
    ConfirmUpdate { payload_hash: HashDigest, response: EndorsedResponse },
    BeginScan,
    ScanLedger { response: EndorsedResponse },
    ConfirmScan { response: EndorsedResponse },
}

impl Request {
    pub fn tag(&self) -> u8 {
        use Request::*;
        match self {
            AttestBegin => 0,
            AttestComplete { .. } => 1,
            GetTrustedTime => 2,
            LogHead { .. } => 3,
            AcceptLeases { .. } => 4,
            PeriodicTick => 5,
            Recover { .. } => 6,
            Abort => 7,
            GenerateClusterKey => 8,
            TransferKeyExpect { .. } => 9,
            TransferKeySend { .. } => 10,
            TransferKeyReceive { .. } => 11,
            SealState => 12,
            SubmitComplaint { .. } => 13,
            ConfirmUpdate { .. } => 14,
            BeginScan => 15,
            ScanLedger { .. } => 16,
            ConfirmScan { .. } => 17,
        }
    }

    pub fn name(&self) -> &'static str {
        use Request::*;
        match self {
            AttestBegin => "attest-begin",
            AttestComplete { .. } => "attest-complete",
            GetTrustedTime => "get-trusted-time",
            LogHead { .. } => "log-head",
            AcceptLeases { .. } => "accept-leases",
            PeriodicTick => "periodic-tick",
            Recover { .. } => "recover",
            Abort => "abort",
            GenerateClusterKey => "generate-cluster-key",
            TransferKeyExpect { .. } => "transfer-key-expect",
            TransferKeySend { .. } => "transfer-key-send",
            TransferKeyReceive { .. } => "transfer-key-receive",
            SealState => "seal-state",
            SubmitComplaint { .. } => "submit-complaint",
            ConfirmUpdate { .. } => "confirm-update",
            BeginScan => "begin-scan",
            ScanLedger { .. } => "scan-ledger",
            ConfirmScan { .. } => "confirm-scan",
        }
    }

    /// Calls served regardless of lease state: attestation, time, lease and log management, recovery.
    pub fn is_ungated(&self) -> bool {
        self.tag() <= 7
    }
}

impl Encode for Request {
    fn encode(&self, w: &mut Writer) {
        use Request::*;
        w.u8(self.tag());
        match self {
            AttestBegin | GetTrustedTime | PeriodicTick | Abort | GenerateClusterKey | SealState | BeginScan => {}
            AttestComplete { report } => {
                w.put(report);
            }
            LogHead { nonce } => {
                w.raw(nonce);
            }
            AcceptLeases { leases } => {
                w.list(leases);
            }
            Recover { blob } => {
                w.put(blob);
            }
            TransferKeyExpect { sender: info } | TransferKeySend { receiver: info } => {
                w.put(info);
            }
            TransferKeyReceive { sender_pk, ct } => {
                w.put(sender_pk).put(ct);
            }
            SubmitComplaint { client_pk, data } => {
                w.put(client_pk).put(data);
            }
            ConfirmUpdate { payload_hash, response } => {
                w.put(payload_hash).put(response);
            }
            ScanLedger { response } | ConfirmScan { response } => {
                w.put(response);
            }
        }
    }
}

impl Decode for Request {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        use Request::*;
        Ok(match r.u8()? {
            0 => AttestBegin,
            1 => AttestComplete { report: r.get()? },
            2 => GetTrustedTime,
            3 => LogHead { nonce: r.array()? },
            4 => AcceptLeases { leases: r.list()? },
            5 => PeriodicTick,
            6 => Recover { blob: r.get()? },
            7 => Abort,
            8 => GenerateClusterKey,
            9 => TransferKeyExpect { sender: r.get()? },
            10 => TransferKeySend { receiver: r.get()? },
            11 => TransferKeyReceive { sender_pk: r.get()?, ct: r.get()? },
            12 => SealState,
            13 => SubmitComplaint { client_pk: r.get()?, data: r.get()? },
            14 => ConfirmUpdate { payload_hash: r.get()?, response: r.get()? },
            15 => BeginScan,
            16 => ScanLedger { response: r.get()? },
            17 => ConfirmScan { response: r.get()? },
            _ => return Err(CodecError::Invalid("agent request tag")),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Reply {
    Quote { quote: Quote, agent_pk: PublicKey },
    Published(Publication),
    Time { t: TrustedTime, sig: Signature },
    Head(LogHead),
    Role(Role),
    Ticked,
    Recovered { critical: Ciphertext },
    Aborted,
    KeyGenerated,
    Expecting,
    KeyCiphertext(Ciphertext),
    KeyInstalled,
    Sealed(SealedBlob),
    Staged { payload: Ciphertext, nonce: [u8; 32] },
    Acked(Ciphertext),
    ScanNonce([u8; 32]),
    Report(Vec<u8>),
}

impl Encode for Reply {
    fn encode(&self, w: &mut Writer) {
        use Reply::*;
        match self {
            Quote { quote, agent_pk } => w.u8(0).put(quote).put(agent_pk),
            Published(p) => w.u8(1).put(p),
            Time { t, sig } => w.u8(2).put(t).put(sig),
            Head(h) => w.u8(3).put(h),
            Role(r) => w.u8(4).u32(r.bits()),
            Ticked => w.u8(5),
            Recovered { critical } => w.u8(6).put(critical),
            Aborted => w.u8(7),
            KeyGenerated => w.u8(8),
            Expecting => w.u8(9),
            KeyCiphertext(ct) => w.u8(10).put(ct),
            KeyInstalled => w.u8(11),
            Sealed(b) => w.u8(12).put(b),
            Staged { payload, nonce } => w.u8(13).put(payload).raw(nonce),
            Acked(ct) => w.u8(14).put(ct),
            ScanNonce(n) => w.u8(15).raw(n),
            Report(bytes) => w.u8(16).opaque_bytes(bytes),
        };
    }
}

impl Decode for Reply {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        use Reply::*;
        Ok(match r.u8()? {
            0 => Quote { quote: r.get()?, agent_pk: r.get()? },
            1 => Published(r.get()?),
            2 => Time { t: r.get()?, sig: r.get()? },
            3 => Head(r.get()?),
            4 => Role(crate::admin::Role::from_bits(r.u32()?).ok_or(CodecError::Invalid("role"))?),
            5 => Ticked,
            6 => Recovered { critical: r.get()? },
            7 => Aborted,
            8 => KeyGenerated,
            9 => Expecting,
            10 => KeyCiphertext(r.get()?),
            11 => KeyInstalled,
            12 => Sealed(r.get()?),
            13 => Staged { payload: r.get()?, nonce: r.array()? },
            14 => Acked(r.get()?),
            15 => ScanNonce(r.array()?),
            16 => Report(r.vec()?),
            _ => return Err(CodecError::Invalid("agent reply tag")),
        })
    }
}

fn seal_error_tag(e: SealError) -> u8 {
    match e {
        SealError::WrongMachine => 0,
        SealError::WrongMeasurement => 1,
        SealError::AuthFailure => 2,
        SealError::Malformed => 3,
    }
}

impl Encode for AgentError {
    fn encode(&self, w: &mut Writer) {
        use AgentError::*;
        match self {
            NotLeased(r) => w.u8(0).u8(*r as u8),
            WrongRole(s) => w.u8(1).str(s),
            NotAttested => w.u8(2),
            MissingKey => w.u8(3),
            Rejected(r) => w.u8(4).u8(r.tag()),
            LeaderConflict => w.u8(5),
            Ledger(r) => w.u8(6).u8(r.tag()),
            NotCommitted { retry_nonce } => {
                w.u8(7);
                match retry_nonce {
                    Some(n) => w.u8(1).raw(n),
                    None => w.u8(0),
                }
            }
            AuthFailure => w.u8(8),
            NoPending => w.u8(9),
            Seal(e) => w.u8(10).u8(seal_error_tag(*e)),
            Malformed(s) => w.u8(11).str(s),
        };
    }
}

impl Decode for AgentError {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        use AgentError::*;
        Ok(match r.u8()? {
            0 => NotLeased(match r.u8()? {
                0 => NotLeasedReason::Insufficient,
                1 => NotLeasedReason::Expired,
                2 => NotLeasedReason::Conflict,
                _ => return Err(CodecError::Invalid("not-leased reason")),
            }),
            1 => WrongRole(r.string()?),
            2 => NotAttested,
            3 => MissingKey,
            4 => Rejected(RejectReason::from_tag(r.u8()?).ok_or(CodecError::Invalid("reject reason"))?),
            5 => LeaderConflict,
            6 => Ledger(LedgerReject::from_tag(r.u8()?).ok_or(CodecError::Invalid("ledger reject"))?),
            7 => NotCommitted { retry_nonce: if r.bool()? { Some(r.array()?) } else { None } },
            8 => AuthFailure,
            9 => NoPending,
            10 => Seal(match r.u8()? {
                0 => SealError::WrongMachine,
                1 => SealError::WrongMeasurement,
                2 => SealError::AuthFailure,
                3 => SealError::Malformed,
                _ => return Err(CodecError::Invalid("seal error")),
            }),
            11 => Malformed(r.string()?),
            _ => return Err(CodecError::Invalid("agent error tag")),
        })
    }
}

/// Every ecall returns the log record it produced alongside its result.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Response {
    pub record: LogRecord,
    pub result: Result<Reply, AgentError>,
}

impl Encode for Response {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.record);
        match &self.result {
            Ok(reply) => w.u8(0).put(reply),
            Err(e) => w.u8(1).put(e),
        };
    }
}

impl Decode for Response {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let record = r.get()?;
        let result = match r.u8()? {
            0 => Ok(r.get()?),
            1 => Err(r.get()?),
            _ => return Err(CodecError::Invalid("result tag")),
        };
        Ok(Response { record, result })
    }
}

/// Leased view at one instant.
pub fn lease_role(
    leases: &BTreeMap<u32, Lease>,
    agent_id: &HashDigest,
    k: usize,
    now: &TrustedTime,
) -> Result<Role, NotLeasedReason> {
    let matching: Vec<&Lease> = leases.values().filter(|l| l.agent_id == *agent_id && !l.is_upgrade()).collect();
    let current: Vec<&Lease> = matching.iter().copied().filter(|l| l.is_current(now)).collect();
    if current.len() < k {
        return Err(if matching.len() >= k { NotLeasedReason::Expired } else { NotLeasedReason::Insufficient });
    }
    let mut by_role: BTreeMap<Role, usize> = BTreeMap::new();
    for l in &current {
        *by_role.entry(l.role).or_default() += 1;
    }
    let mut agreeing = by_role.into_iter().filter(|(_, c)| *c >= k).map(|(r, _)| r);
    match (agreeing.next(), agreeing.next()) {
        (Some(role), None) => Ok(role),
        _ => Err(NotLeasedReason::Conflict),
    }
}

struct Pending {
    nonce: [u8; 32],
    retries: u32,
}

struct PendingAck {
    session: SymmetricKey,
    pending: Pending,
}

struct PendingMarker {
    payload_hash: HashDigest,
    report: Vec<u8>,
    /// Perpetrators carried by `report`.
    due: Vec<HashDigest>,
    pending: Pending,
}

struct SealedState {
    secret: SecretKey,
    econf_key: SymmetricKey,
    report: Option<AttestationReport>,
}

impl Encode for SealedState {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.secret).opaque_raw(self.econf_key.as_bytes()).put(&self.report);
    }
}

impl Decode for SealedState {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(SealedState { secret: r.get()?, econf_key: SymmetricKey(r.array()?), report: r.get()? })
    }
}

pub struct AgentProgram {
    config: AgentConfig,
    keypair: SigningKeyPair,
    agent_id: HashDigest,
    report: Option<AttestationReport>,
    leases: BTreeMap<u32, Lease>,
    econf_key: Option<SymmetricKey>,
    log: LogWriter,
    expected_sender: Option<PublicKey>,
    acks: BTreeMap<HashDigest, PendingAck>,
    scan: Option<[u8; 32]>,
    marker: Option<PendingMarker>,
    /// Perpetrators of reports that were built but never released.
    carry: Vec<HashDigest>,
    certs: CertCache,
}

/// What the ecall writes into its log record.
struct Outcome {
    kind: LogKind,
    note: String,
    result: Result<Reply, AgentError>,
}

impl Outcome {
    fn ok(reply: Reply) -> Self {
        Outcome { kind: LogKind::Info, note: String::new(), result: Ok(reply) }
    }

    fn err(e: AgentError) -> Self {
        Outcome { kind: LogKind::Info, note: String::new(), result: Err(e) }
    }

    fn kind(mut self, kind: LogKind) -> Self {
        self.kind = kind;
        self
    }

    fn note(mut self, note: impl Into<String>) -> Self {
        self.note = note.into();
        self
    }
}

impl From<Result<Reply, AgentError>> for Outcome {
    fn from(result: Result<Reply, AgentError>) -> Self {
        Outcome { kind: LogKind::Info, note: String::new(), result }
    }
}

fn fresh_nonce(env: &mut EnclaveEnv<'_>) -> [u8; 32] {
    let mut n = [0u8; 32];
    env.rng().fill_bytes(&mut n);
    n
}

impl AgentProgram {
    fn holder(env: &EnclaveEnv<'_>) -> String {
        format!("agent-m{}", env.machine_id())
    }

    fn k(&self) -> usize {
        self.config.policy.k as usize
    }

    fn role(&self, env: &mut EnclaveEnv<'_>) -> Result<Role, AgentError> {
        let now = env.trusted_time();
        lease_role(&self.leases, &self.agent_id, self.k(), &now).map_err(AgentError::NotLeased)
    }

    fn require(&self, env: &mut EnclaveEnv<'_>, needed: Role) -> Result<Role, AgentError> {
        let role = self.role(env)?;
        if !role.contains(needed) {
            return Err(AgentError::WrongRole(needed.name()));
        }
        Ok(role)
    }

    fn key(&self) -> Result<&SymmetricKey, AgentError> {
        self.econf_key.as_ref().ok_or(AgentError::MissingKey)
    }

    fn install_key(&mut self, env: &mut EnclaveEnv<'_>, key: SymmetricKey) {
        env.register_secret("econf_key", key.as_bytes());
        env.publish_key_digest(Self::holder(env), key.digest());
        self.econf_key = Some(key);
    }

    fn encrypt_entry(&self, env: &mut EnclaveEnv<'_>, kind: EntryKind, plaintext: &[u8]) -> Result<Ciphertext, AgentError> {
        let key = self.key()?;
        Ok(aead_encrypt(key, plaintext, &kind.associated_data(), env.rng()))
    }

    fn own_pub_info_ok(&self, info: &PubInfo, env: &EnclaveEnv<'_>, accept_predecessors: bool) -> Result<(), RejectReason> {
        let cfg = &self.config;
        let own = env.measurement();
        let quote = verify_report(&cfg.ias_pk, &info.report).map_err(|_| RejectReason::Report);
        let expected = match &quote {
            Ok(q) if q.measurement != own => {
                let sanctioned = if accept_predecessors {
                    cfg.accepted_predecessors.contains(&q.measurement)
                } else {
                    upgrade_approvals(info, &q.measurement, &cfg.admin_pks) >= cfg.policy.upgrade_threshold as usize
                };
                if sanctioned { q.measurement } else { own }
            }
            _ => own,
        };
        verify_pub_info(info, &expected, &cfg.admin_pks, &cfg.ias_pk, self.k()).map(|_| ())
    }

    fn confirm(
        &mut self,
        nonce: [u8; 32],
        retries: u32,
        response: &EndorsedResponse,
        kind: EntryKind,
        ph: &HashDigest,
        env: &mut EnclaveEnv<'_>,
    ) -> Result<(), (Option<[u8; 32]>, Option<LedgerReject>)> {
        let rq = self.config.policy.read_quorum as usize;
        let verdict = verify_endorsed(response, &nonce, &self.config.admin_pks, rq, &mut self.certs);
        let present = match (&verdict, &response.view) {
            (Ok(_), StateView::Full(entries)) => entries.iter().any(|e| e.kind == kind && e.payload_hash == *ph),
            (Ok(_), StateView::Single { entry, .. }) => entry.kind == kind && entry.payload_hash == *ph,
            _ => false,
        };
        if present {
            return Ok(());
        }
        let retry = (retries > 0).then(|| fresh_nonce(env));
        Err((retry, verdict.err()))
    }

    fn handle(&mut self, env: &mut EnclaveEnv<'_>, req: Request) -> Outcome {
        if !req.is_ungated() {
            if let Err(e) = self.role(env) {
                return Outcome::err(e);
            }
        }
        match req {
            Request::AttestBegin => match create_quote(env, self.agent_id.as_bytes()) {
                Ok(quote) => Outcome::ok(Reply::Quote { quote, agent_pk: self.keypair.public.clone() }),
                Err(e) => Outcome::err(AgentError::Malformed(e.to_string())),
            },
            Request::AttestComplete { report } => {
                let quote = match verify_report(&self.config.ias_pk, &report) {
                    Ok(q) => q,
                    Err(_) => return Outcome::err(AgentError::Rejected(RejectReason::Report)),
                };
                if quote.user_data != self.agent_id.0 {
                    return Outcome::err(AgentError::Rejected(RejectReason::UserData));
                }
                if quote.measurement != env.measurement() {
                    return Outcome::err(AgentError::Rejected(RejectReason::Measurement));
                }
                self.report = Some(report.clone());
                let t = env.trusted_time();
                let t_sig = sign(&self.keypair.secret, &trusted_time_message(&t));
                Outcome::ok(Reply::Published(Publication { t, t_sig, agent_pk: self.keypair.public.clone(), report }))
            }
            Request::GetTrustedTime => {
                let t = env.trusted_time();
                Outcome::ok(Reply::Time { t, sig: sign(&self.keypair.secret, &trusted_time_message(&t)) })
            }
            Request::LogHead { .. } => unreachable!("served after the record is emitted"),
            Request::AcceptLeases { leases } => {
                for l in leases {
                    if l.is_upgrade() || l.agent_id != self.agent_id || !l.verify_against(&self.config.admin_pks) {
                        continue;
                    }
                    let newer = self.leases.get(&l.admin_id).is_none_or(|old| {
                        (l.base_trusted_time.time, l.creation_time, l.expiration)
                            >= (old.base_trusted_time.time, old.creation_time, old.expiration)
                    });
                    if newer {
                        self.leases.insert(l.admin_id, l);
                    }
                }
                self.role(env).map(Reply::Role).into()
            }
            Request::PeriodicTick => Outcome::ok(Reply::Ticked).kind(LogKind::Periodic),
            Request::Recover { blob } => self.recover(env, blob),
            Request::Abort => {
                if let Some(mut k) = self.econf_key.take() {
                    k.0 = [0; 32];
                }
                env.forget_key_digest(&Self::holder(env));
                self.expected_sender = None;
                self.acks.clear();
                self.scan = None;
                self.marker = None;
                self.carry.clear();
                Outcome::ok(Reply::Aborted).kind(LogKind::Warning).note("abort")
            }
            Request::GenerateClusterKey => {
                if let Err(e) = self.require(env, Role::LEADER) {
                    return Outcome::err(e);
                }
                if self.econf_key.is_some() {
                    return Outcome::err(AgentError::LeaderConflict);
                }
                let key = SymmetricKey::random(env.rng());
                self.install_key(env, key);
                Outcome::ok(Reply::KeyGenerated)
            }
            Request::TransferKeyExpect { sender } => {
                let role = match self.role(env) {
                    Ok(r) => r,
                    Err(e) => return Outcome::err(e),
                };
                if role.contains(Role::LEADER) || self.econf_key.is_some() {
                    return Outcome::err(AgentError::LeaderConflict);
                }
                if let Err(r) = self.own_pub_info_ok(&sender, env, true) {
                    return Outcome::err(AgentError::Rejected(r)).kind(LogKind::Warning).note("sender rejected");
                }
                self.expected_sender = Some(sender.agent_pk);
                Outcome::ok(Reply::Expecting)
            }
            Request::TransferKeySend { receiver } => {
                let key = match self.key() {
                    Ok(k) => k.clone(),
                    Err(e) => return Outcome::err(e),
                };
                if receiver.leases.iter().any(|l| l.role.contains(Role::LEADER) && l.agent_id == receiver.agent_id()) {
                    return Outcome::err(AgentError::LeaderConflict);
                }
                if let Err(r) = self.own_pub_info_ok(&receiver, env, false) {
                    return Outcome::err(AgentError::Rejected(r)).kind(LogKind::Warning).note("receiver rejected");
                }
                let k = match shared_key(&self.keypair.secret, &receiver.agent_pk) {
                    Ok(k) => k,
                    Err(e) => return Outcome::err(AgentError::Malformed(e.to_string())),
                };
                let ad = key_transfer_ad(&self.agent_id, &receiver.agent_id());
                Outcome::ok(Reply::KeyCiphertext(aead_encrypt(&k, key.as_bytes(), &ad, env.rng())))
            }
            Request::TransferKeyReceive { sender_pk, ct } => {
                if self.expected_sender.as_ref() != Some(&sender_pk) {
                    return Outcome::err(AgentError::NoPending);
                }
                let k = match shared_key(&self.keypair.secret, &sender_pk) {
                    Ok(k) => k,
                    Err(e) => return Outcome::err(AgentError::Malformed(e.to_string())),
                };
                let ad = key_transfer_ad(&sender_pk.fingerprint(), &self.agent_id);
                let Ok(plain) = aead_decrypt(&k, &ct, &ad) else {
                    return Outcome::err(AgentError::AuthFailure).kind(LogKind::Error).note("key transfer auth failure");
                };
                let Ok(bytes) = <[u8; 32]>::try_from(plain.as_slice()) else {
                    return Outcome::err(AgentError::Malformed("key length".into()));
                };
                self.expected_sender = None;
                self.install_key(env, SymmetricKey(bytes));
                Outcome::ok(Reply::KeyInstalled)
            }
            Request::SealState => {
                let Some(key) = self.econf_key.clone() else {
                    return Outcome::err(AgentError::MissingKey);
                };
                let state = SealedState { secret: self.keypair.secret.clone(), econf_key: key, report: self.report.clone() };
                Outcome::ok(Reply::Sealed(env.seal(&state.to_bytes())))
            }
            Request::SubmitComplaint { client_pk, data } => self.submit(env, client_pk, data),
            Request::ConfirmUpdate { payload_hash, response } => {
                let Some(p) = self.acks.remove(&payload_hash) else {
                    return Outcome::err(AgentError::NoPending);
                };
                match self.confirm(p.pending.nonce, p.pending.retries, &response, EntryKind::Complaint, &payload_hash, env) {
                    Ok(()) => {
                        let ack = aead_encrypt(&p.session, ACK_SUCCESS, &ack_ad(&self.agent_id), env.rng());
                        Outcome::ok(Reply::Acked(ack)).note("complaint committed")
                    }
                    Err((retry, why)) => {
                        if let Some(n) = retry {
                            self.acks.insert(payload_hash, PendingAck { session: p.session, pending: Pending { nonce: n, retries: p.pending.retries - 1 } });
                        }
                        let note = why.map_or("entry absent".to_string(), |w| w.to_string());
                        Outcome::err(AgentError::NotCommitted { retry_nonce: retry }).kind(LogKind::Warning).note(note)
                    }
                }
            }
            Request::BeginScan => {
                if let Err(e) = self.require(env, Role::SCANNER).and_then(|_| self.key().map(|_| ())) {
                    return Outcome::err(e);
                }
                let n = fresh_nonce(env);
                self.scan = Some(n);
                Outcome::ok(Reply::ScanNonce(n))
            }
            Request::ScanLedger { response } => self.scan_ledger(env, response),
            Request::ConfirmScan { response } => {
                let Some(m) = self.marker.take() else {
                    return Outcome::err(AgentError::NoPending);
                };
                match self.confirm(m.pending.nonce, m.pending.retries, &response, EntryKind::ScanMarker, &m.payload_hash, env) {
                    Ok(()) => {
                        self.carry.clear();
                        Outcome::ok(Reply::Report(m.report)).note("report released")
                    }
                    Err((retry, why)) => {
                        match retry {
                            Some(n) => {
                                self.marker = Some(PendingMarker { pending: Pending { nonce: n, retries: m.pending.retries - 1 }, ..m })
                            }
                            None => self.carry_over(m.due),
                        }
                        let note = why.map_or("marker absent".to_string(), |w| w.to_string());
                        Outcome::err(AgentError::NotCommitted { retry_nonce: retry }).kind(LogKind::Warning).note(note)
                    }
                }
            }
        }
    }

    fn carry_over(&mut self, due: Vec<HashDigest>) {
        for p in due {
            if !self.carry.contains(&p) {
                self.carry.push(p);
            }
        }
    }

    fn recover(&mut self, env: &mut EnclaveEnv<'_>, blob: SealedBlob) -> Outcome {
        let state = match env.unseal(&blob) {
            Ok(bytes) => match SealedState::from_bytes(&bytes) {
                Ok(s) => s,
                Err(_) => return Outcome::err(AgentError::Seal(SealError::Malformed)),
            },
            Err(e) => return Outcome::err(AgentError::Seal(e)),
        };
        let Ok(keypair) = SigningKeyPair::from_secret(state.secret) else {
            return Outcome::err(AgentError::Seal(SealError::Malformed));
        };
        env.register_secret("agent_sk", keypair.secret.expose_scalar());
        self.agent_id = keypair.public.fingerprint();
        self.keypair = keypair;
        self.report = state.report;
        self.leases.clear();
        self.log = LogWriter::new(&self.agent_id);
        self.install_key(env, state.econf_key);
        let notice = RestartNotice { agent_id: self.agent_id, machine_id: env.machine_id(), t: env.trusted_time() };
        match self.encrypt_entry(env, EntryKind::CriticalLog, &notice.to_bytes()) {
            Ok(critical) => Outcome::ok(Reply::Recovered { critical }).kind(LogKind::Warning).note("restart recovered"),
            Err(e) => Outcome::err(e),
        }
    }

    fn submit(&mut self, env: &mut EnclaveEnv<'_>, client_pk: PublicKey, data: Ciphertext) -> Outcome {
        if let Err(e) = self.require(env, Role::WRITER).and_then(|_| self.key().map(|_| ())) {
            return Outcome::err(e);
        }
        let session = match shared_key(&self.keypair.secret, &client_pk) {
            Ok(k) => k,
            Err(e) => return Outcome::err(AgentError::Malformed(e.to_string())),
        };
        let Ok(plain) = aead_decrypt(&session, &data, &complaint_ad(&self.agent_id)) else {
            return Outcome::err(AgentError::AuthFailure).kind(LogKind::Error).note("complaint auth failure");
        };
        let Ok(client) = ClientComplaint::from_bytes(&plain) else {
            return Outcome::err(AgentError::Malformed("complaint plaintext".into())).kind(LogKind::Warning);
        };
        env.register_secret("complaint_body", &client.body);
        let complaint = Complaint::from_client(&client, env.trusted_time());
        let payload = match self.encrypt_entry(env, EntryKind::Complaint, &complaint.to_bytes()) {
            Ok(p) => p,
            Err(e) => return Outcome::err(e),
        };
        let nonce = fresh_nonce(env);
        let retries = self.config.confirm_retries;
        self.acks.insert(payload_hash(&payload), PendingAck { session, pending: Pending { nonce, retries } });
        let note = if self.config.debug_leak { String::from_utf8_lossy(&client.body).into_owned() } else { String::new() };
        Outcome::ok(Reply::Staged { payload, nonce }).note(note)
    }

    fn scan_ledger(&mut self, env: &mut EnclaveEnv<'_>, response: EndorsedResponse) -> Outcome {
        let Some(nonce) = self.scan.take() else {
            return Outcome::err(AgentError::NoPending);
        };
        let rq = self.config.policy.read_quorum as usize;
        let state = match verify_endorsed(&response, &nonce, &self.config.admin_pks, rq, &mut self.certs) {
            Ok(s) => s,
            Err(r) => return Outcome::err(AgentError::Ledger(r)).kind(LogKind::Warning).note(format!("scan aborted: {r}")),
        };
        let StateView::Full(entries) = &response.view else {
            return Outcome::err(AgentError::Malformed("scan needs full view".into())).kind(LogKind::Warning);
        };
        let key = match self.key() {
            Ok(k) => k.clone(),
            Err(e) => return Outcome::err(e),
        };
        let mut undecryptable = 0usize;
        let items: Vec<ScanItem> = entries
            .iter()
            .map(|e| {
                let plain = aead_decrypt(&key, &e.payload, &e.kind.associated_data());
                match (e.kind, plain) {
                    (EntryKind::Complaint, Ok(p)) => Complaint::from_bytes(&p).map(ScanItem::Complaint).unwrap_or(ScanItem::Other),
                    (EntryKind::ScanMarker, Ok(p)) => ScanMarker::from_bytes(&p).map(ScanItem::Marker).unwrap_or(ScanItem::Other),
                    (EntryKind::CriticalLog, Ok(_)) => ScanItem::Other,
                    (_, Err(_)) => {
                        undecryptable += 1;
                        ScanItem::Other
                    }
                }
            })
            .collect();
        if let Some(old) = self.marker.take() {
            self.carry_over(old.due);
        }
        let matches = compute_matches(&items, &self.carry);
        let (plaintext, overflow) = pack_report(&matches, self.config.report_capacity());
        let due: Vec<HashDigest> = matches[..matches.len() - overflow.len()].iter().map(|m| m.perpetrator_id).collect();
        let sealed = match seal_to(&self.config.authority_pk, &plaintext, REPORT_AD, env.rng()) {
            Ok(s) => s,
            Err(e) => return Outcome::err(AgentError::Malformed(e.to_string())),
        };
        let report = sealed.to_bytes();
        debug_assert_eq!(report.len(), self.config.report_size as usize);
        let marker = ScanMarker {
            scanned_count: state.count,
            deferred: overflow.iter().map(|m| m.perpetrator_id).collect(),
            time: env.trusted_time(),
        };
        let payload = match self.encrypt_entry(env, EntryKind::ScanMarker, &marker.to_bytes()) {
            Ok(p) => p,
            Err(e) => return Outcome::err(e),
        };
        let confirm_nonce = fresh_nonce(env);
        self.marker = Some(PendingMarker {
            payload_hash: payload_hash(&payload),
            report,
            due,
            pending: Pending { nonce: confirm_nonce, retries: self.config.confirm_retries },
        });
        let out = Outcome::ok(Reply::Staged { payload, nonce: confirm_nonce });
        match (overflow.is_empty(), undecryptable) {
            (true, 0) => out,
            (false, _) => out.kind(LogKind::Warning).note("report overflow deferred"),
            (true, _) => out.kind(LogKind::Warning).note("undecryptable entries skipped"),
        }
    }
}

impl EnclaveProgram for AgentProgram {
    type Config = AgentConfig;
    type Request = Request;
    type Response = Response;

    fn code_identity(config: &AgentConfig) -> String {
        config.code_identity()
    }

    fn launch(config: &AgentConfig, env: &mut EnclaveEnv<'_>) -> Self {
        let keypair = generate_keypair(Scheme::Agent, env.rng());
        env.register_secret("agent_sk", keypair.secret.expose_scalar());
        env.forget_key_digest(&Self::holder(env));
        let agent_id = keypair.public.fingerprint();
        AgentProgram {
            config: config.clone(),
            keypair,
            agent_id,
            report: None,
            leases: BTreeMap::new(),
            econf_key: None,
            log: LogWriter::new(&agent_id),
            expected_sender: None,
            acks: BTreeMap::new(),
            scan: None,
            marker: None,
            carry: Vec::new(),
            certs: CertCache::default(),
        }
    }

    fn ecall(&mut self, env: &mut EnclaveEnv<'_>, request: Request) -> Response {
        let name = request.name();
        let head_nonce = match &request {
            Request::LogHead { nonce } => Some(*nonce),
            _ => None,
        };
        let outcome = if head_nonce.is_some() { Outcome::ok(Reply::Ticked) } else { self.handle(env, request) };
        let status = match &outcome.result {
            Ok(_) => "ok".to_string(),
            Err(e) => format!("err {e}"),
        };
        let message = if outcome.note.is_empty() { format!("{name}: {status}") } else { format!("{name}: {status}; {}", outcome.note) };
        let t = env.trusted_time();
        let record = self.log.emit(&self.keypair.secret, t, outcome.kind, message.as_bytes());
        let result = match head_nonce {
            Some(n) => Ok(Reply::Head(self.log.head(&self.keypair.secret, n))),
            None => outcome.result,
        };
        Response { record, result }
    }

    fn malformed(err: CodecError) -> Response {
        // No keys are reachable here; the record is unsigned and fails verification.
        let t = TrustedTime { time: 0, nonce: [0; 32] };
        let record = LogRecord {
            t,
            kind: LogKind::Warning,
            message: format!("malformed request: {err}").into_bytes(),
            state: HashDigest([0; 32]),
            signature: Signature(Vec::new()),
        };
        Response { record, result: Err(AgentError::Malformed(err.to_string())) }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::codec::{Decode, Encode};
    use crate::harness::{Cluster, ScenarioConfig};

    fn cluster() -> Cluster {
        let mut cfg = ScenarioConfig::baseline(4, 3, 2, 4);
        cfg.tick_seconds = 0;
        cfg.scan_period_seconds = 0;
        let mut c = Cluster::new(cfg).unwrap();
        c.inception().unwrap();
        c
    }

    #[test]
    fn gated_tags_follow_ungated_ones() {
        let simple = [
            Request::AttestBegin,
            Request::GetTrustedTime,
            Request::LogHead { nonce: [0; 32] },
            Request::PeriodicTick,
            Request::Abort,
            Request::GenerateClusterKey,
            Request::SealState,
            Request::BeginScan,
        ];
        for r in &simple {
            assert_eq!(r.is_ungated(), r.tag() <= 7, "{}", r.name());
            assert_eq!(Request::from_bytes(&r.to_bytes()).as_ref(), Ok(r));
        }
    }

    #[test]
    fn errors_round_trip() {
        let errs = [
            AgentError::NotLeased(NotLeasedReason::Expired),
            AgentError::WrongRole("leader".into()),
            AgentError::MissingKey,
            AgentError::LeaderConflict,
            AgentError::NotCommitted { retry_nonce: Some([5; 32]) },
            AgentError::AuthFailure,
            AgentError::Malformed("x".into()),
        ];
        for e in errs {
            assert_eq!(AgentError::from_bytes(&e.to_bytes()), Ok(e));
        }
    }

    #[test]
    fn roles_restrict_calls() {
        let mut c = cluster();
        assert!(matches!(c.call(1, &Request::GenerateClusterKey), Err(AgentError::WrongRole(_))));
        assert_eq!(c.call(0, &Request::GenerateClusterKey), Err(AgentError::LeaderConflict));
        let info = c.hosts[0].pub_info().unwrap();
        assert_eq!(c.call(1, &Request::TransferKeyExpect { sender: info }), Err(AgentError::LeaderConflict));
    }

    #[test]
    fn unsolicited_key_is_refused() {
        let mut c = cluster();
        let pk = c.hosts[0].agent_pk().unwrap();
        let ct = Ciphertext { nonce: [0; 12], body: vec![0; 32], tag: [0; 16] };
        assert_eq!(c.call(1, &Request::TransferKeyReceive { sender_pk: pk, ct }), Err(AgentError::NoPending));
    }

    #[test]
    fn tampered_complaint_logs_error() {
        let mut c = cluster();
        let pk = c.hosts[1].agent_pk().unwrap();
        let ct = Ciphertext { nonce: [0; 12], body: vec![9; 48], tag: [0; 16] };
        assert_eq!(c.call(0, &Request::SubmitComplaint { client_pk: pk, data: ct }), Err(AgentError::AuthFailure));
        assert_eq!(c.hosts[0].export_log(0).last().map(|r| r.kind), Some(LogKind::Error));
    }
}
