//! Simulated attestation service, quotes, reports and published-info verification.

use thiserror::Error;

use crate::admin::lease::Lease;
use crate::codec::{CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{generate_keypair, hash, sign, verify, HashDigest, PublicKey, Scheme, Signature, SigningKeyPair, SimRng};
use crate::enclave::{EnclaveEnv, Measurement};

pub const USER_DATA_LEN: usize = 32;
pub const CERT_CHAIN_DEPTH: usize = 2;
const REPORT_VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Quote {
    pub measurement: Measurement,
    pub user_data: [u8; USER_DATA_LEN],
    pub platform_info: Vec<u8>,
}

impl Encode for Quote {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.measurement).opaque_raw(&self.user_data).bytes(&self.platform_info);
    }
}

impl Decode for Quote {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Quote { measurement: r.get()?, user_data: r.array()?, platform_info: r.vec()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum QuoteError {
    #[error("user data must be exactly 32 bytes, got {0}")]
    UserDataLength(usize),
}

/// Builds a quote for the calling enclave. Only enclave code holds an [`EnclaveEnv`].
pub fn create_quote(env: &EnclaveEnv<'_>, user_data: &[u8]) -> Result<Quote, QuoteError> {
    let user_data: [u8; USER_DATA_LEN] =
        user_data.try_into().map_err(|_| QuoteError::UserDataLength(user_data.len()))?;
    Ok(Quote { measurement: env.measurement(), user_data, platform_info: env.platform_info() })
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Certificate {
    pub subject: String,
    pub public_key: PublicKey,
    pub signature: Signature,
}

impl Certificate {
    fn tbs(subject: &str, pk: &PublicKey) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"confid/cert").str(subject).put(pk);
        w.into_bytes()
    }

    pub fn issue(subject: &str, public_key: PublicKey, issuer: &SigningKeyPair) -> Self {
        let signature = sign(&issuer.secret, &Self::tbs(subject, &public_key));
        Certificate { subject: subject.to_string(), public_key, signature }
    }

    pub fn verify_issued_by(&self, issuer_pk: &PublicKey) -> bool {
        verify(issuer_pk, &Self::tbs(&self.subject, &self.public_key), &self.signature)
    }
}

impl Encode for Certificate {
    fn encode(&self, w: &mut Writer) {
        w.str(&self.subject).put(&self.public_key).put(&self.signature);
    }
}

impl Decode for Certificate {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Certificate { subject: r.string()?, public_key: r.get()?, signature: r.get()? })
    }
}

/// `cert_chain[0]` is the report-signing certificate, `cert_chain[1]` the self-signed root.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AttestationReport {
    pub report_body: Vec<u8>,
    pub cert_chain: Vec<Certificate>,
    pub signature: Signature,
}

impl Encode for AttestationReport {
    fn encode(&self, w: &mut Writer) {
        w.bytes(&self.report_body).list(&self.cert_chain).put(&self.signature);
    }
}

impl Decode for AttestationReport {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(AttestationReport { report_body: r.vec()?, cert_chain: r.list()?, signature: r.get()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
struct ReportBody {
    version: u16,
    id: u64,
    quote: Quote,
}

impl Encode for ReportBody {
    fn encode(&self, w: &mut Writer) {
        w.u16(self.version).u64(self.id).put(&self.quote);
    }
}

impl Decode for ReportBody {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let version = r.u16()?;
        if version != REPORT_VERSION {
            return Err(CodecError::Invalid("report version"));
        }
        Ok(ReportBody { version, id: r.u64()?, quote: r.get()? })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AttestationError {
    #[error("malformed quote: {0}")]
    MalformedQuote(CodecError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
#[error("attestation report invalid: {0}")]
pub struct ReportInvalid(pub &'static str);

/// The attestation authority: a root key certifying a report-signing key.
pub struct AttestationAuthority {
    root: SigningKeyPair,
    signer: SigningKeyPair,
    signer_cert: Certificate,
    root_cert: Certificate,
    issued: Vec<AttestationReport>,
}

impl AttestationAuthority {
    pub fn new(rng: &mut SimRng) -> Self {
        let root = generate_keypair(Scheme::Admin, rng);
        let signer = generate_keypair(Scheme::Admin, rng);
        let root_cert = Certificate::issue("sim-ias-root", root.public.clone(), &root);
        let signer_cert = Certificate::issue("sim-ias-report-signing", signer.public.clone(), &root);
        AttestationAuthority { root, signer, signer_cert, root_cert, issued: Vec::new() }
    }

    /// `ias_pk`: the root every report chains to.
    pub fn public_key(&self) -> PublicKey {
        self.root.public.clone()
    }

    pub fn issued(&self) -> &[AttestationReport] {
        &self.issued
    }

    /// Signs an encoded quote; rejects anything that does not parse as one.
    pub fn sign_quote_bytes(&mut self, quote: &[u8]) -> Result<AttestationReport, AttestationError> {
        let quote = Quote::from_bytes(quote).map_err(AttestationError::MalformedQuote)?;
        Ok(self.sign_quote(&quote))
    }

    pub fn sign_quote(&mut self, quote: &Quote) -> AttestationReport {
        let body = ReportBody { version: REPORT_VERSION, id: self.issued.len() as u64, quote: quote.clone() };
        let report_body = body.to_bytes();
        let signature = sign(&self.signer.secret, &report_body);
        let report = AttestationReport {
            report_body,
            cert_chain: vec![self.signer_cert.clone(), self.root_cert.clone()],
            signature,
        };
        self.issued.push(report.clone());
        report
    }
}

/// Returns the embedded quote iff the chain roots at `ias_pk` and every signature holds.
pub fn verify_report(ias_pk: &PublicKey, report: &AttestationReport) -> Result<Quote, ReportInvalid> {
    let [signing, root] = report.cert_chain.as_slice() else {
        return Err(ReportInvalid("certificate chain depth"));
    };
    if root.public_key != *ias_pk {
        return Err(ReportInvalid("chain not rooted at authority key"));
    }
    if !root.verify_issued_by(ias_pk) {
        return Err(ReportInvalid("root certificate signature"));
    }
    if !signing.verify_issued_by(ias_pk) {
        return Err(ReportInvalid("signing certificate signature"));
    }
    if !verify(&signing.public_key, &report.report_body, &report.signature) {
        return Err(ReportInvalid("report signature"));
    }
    let body = ReportBody::from_bytes(&report.report_body).map_err(|_| ReportInvalid("report body"))?;
    Ok(body.quote)
}

/// Publicly verifiable agent information exchanged before any trust decision.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PubInfo {
    pub agent_pk: PublicKey,
    pub report: AttestationReport,
    pub leases: Vec<Lease>,
}

impl PubInfo {
    pub fn agent_id(&self) -> HashDigest {
        self.agent_pk.fingerprint()
    }
}

impl Encode for PubInfo {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.agent_pk).put(&self.report).list(&self.leases);
    }
}

impl Decode for PubInfo {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(PubInfo { agent_pk: r.get()?, report: r.get()?, leases: r.list()? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Error)]
pub enum RejectReason {
    #[error("fewer than k valid leases")]
    Leases,
    #[error("attestation report does not verify")]
    Report,
    #[error("quote user data is not the agent id")]
    UserData,
    #[error("unexpected enclave measurement")]
    Measurement,
}

impl RejectReason {
    pub fn tag(self) -> u8 {
        self as u8
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        [Self::Leases, Self::Report, Self::UserData, Self::Measurement].into_iter().find(|r| r.tag() == tag)
    }
}

/// Distinct admins whose ordinary (non-upgrade) lease for `agent_id` verifies.
pub fn distinct_valid_leases(leases: &[Lease], agent_id: &HashDigest, admin_pks: &[PublicKey]) -> usize {
    let mut admins: Vec<u32> = leases
        .iter()
        .filter(|l| !l.is_upgrade() && l.agent_id == *agent_id && l.verify_against(admin_pks))
        .map(|l| l.admin_id)
        .collect();
    admins.sort_unstable();
    admins.dedup();
    admins.len()
}

/// Checks, in order: k leases, report signature, user data, measurement.
pub fn verify_pub_info(
    info: &PubInfo,
    expected_measurement: &Measurement,
    admin_pks: &[PublicKey],
    ias_pk: &PublicKey,
    quorum_k: usize,
) -> Result<Quote, RejectReason> {
    let agent_id = hash(&info.agent_pk.to_bytes());
    if distinct_valid_leases(&info.leases, &agent_id, admin_pks) < quorum_k {
        return Err(RejectReason::Leases);
    }
    verify_attested(info, expected_measurement, ias_pk)
}

/// The non-lease checks of [`verify_pub_info`]: report signature, user data, measurement.
pub fn verify_attested(info: &PubInfo, expected_measurement: &Measurement, ias_pk: &PublicKey) -> Result<Quote, RejectReason> {
    let quote = verify_report(ias_pk, &info.report).map_err(|_| RejectReason::Report)?;
    if quote.user_data != info.agent_id().0 {
        return Err(RejectReason::UserData);
    }
    if quote.measurement != *expected_measurement {
        return Err(RejectReason::Measurement);
    }
    Ok(quote)
}

/// Distinct admins that sanctioned `measurement` for `agent_id` via upgrade leases.
pub fn upgrade_approvals(info: &PubInfo, measurement: &Measurement, admin_pks: &[PublicKey]) -> usize {
    let agent_id = info.agent_id();
    let mut admins: Vec<u32> = info
        .leases
        .iter()
        .filter(|l| {
            l.is_upgrade()
                && l.upgrade_measurement.as_ref() == Some(measurement)
                && l.agent_id == agent_id
                && l.verify_against(admin_pks)
        })
        .map(|l| l.admin_id)
        .collect();
    admins.sort_unstable();
    admins.dedup();
    admins.len()
}
