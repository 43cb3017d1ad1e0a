//! Simulated enclave runtime.
//!
//! An [`Enclave`] owns its program state privately. The only way in is
//! [`Enclave::ecall`], which takes and returns encoded bytes; both directions
//! are appended to the machine's boundary trace. Program code reaches
//! measurement, sealing, trusted time and randomness through [`EnclaveEnv`],
//! which untrusted code cannot construct.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;

use rand_core::RngCore;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode, Frame, Reader, Writer};
use crate::crypto::{aead_decrypt, aead_encrypt, derive_rng, hash, kdf, Ciphertext, HashDigest, SimRng, SymmetricKey};
use crate::trace::{Channel, SecretRegistry, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Default, Serialize, Deserialize)]
pub struct Measurement(pub HashDigest);

impl Measurement {
    pub fn to_hex(&self) -> String {
        self.0.to_hex()
    }
}

impl Encode for Measurement {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.0);
    }
}

impl Decode for Measurement {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(Measurement(r.get()?))
    }
}

/// `hash(u32 length || utf-8 identity)`.
pub fn measure(code_identity: &str) -> Measurement {
    let mut w = Writer::new();
    w.str(code_identity);
    Measurement(hash(&w.into_bytes()))
}

/// Logical seconds counter shared by every actor in a simulation.
#[derive(Debug, Clone, Default)]
pub struct SimClock(Arc<AtomicU64>);

impl SimClock {
    pub fn new(start: u64) -> Self {
        SimClock(Arc::new(AtomicU64::new(start)))
    }

    pub fn now(&self) -> u64 {
        self.0.load(Ordering::SeqCst)
    }

    pub fn advance(&self, secs: u64) -> u64 {
        self.0.fetch_add(secs, Ordering::SeqCst) + secs
    }

    /// Moves the clock forward to `t`; never moves it back.
    pub fn advance_to(&self, t: u64) {
        self.0.fetch_max(t, Ordering::SeqCst);
    }
}

pub const TRUSTED_TIME_LEN: usize = 40;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct TrustedTime {
    pub time: u64,
    pub nonce: [u8; 32],
}

impl TrustedTime {
    /// 8-byte big-endian seconds followed by the 32-byte epoch nonce.
    pub fn to_wire(&self) -> [u8; TRUSTED_TIME_LEN] {
        let mut out = [0u8; TRUSTED_TIME_LEN];
        out[..8].copy_from_slice(&self.time.to_be_bytes());
        out[8..].copy_from_slice(&self.nonce);
        out
    }

    pub fn from_wire(bytes: &[u8; TRUSTED_TIME_LEN]) -> Self {
        let mut nonce = [0u8; 32];
        nonce.copy_from_slice(&bytes[8..]);
        TrustedTime { time: u64::from_be_bytes(bytes[..8].try_into().expect("8 bytes")), nonce }
    }

    pub fn same_epoch(&self, other: &TrustedTime) -> bool {
        self.nonce == other.nonce
    }
}

impl Encode for TrustedTime {
    fn encode(&self, w: &mut Writer) {
        w.raw(&self.to_wire());
    }
}

impl Decode for TrustedTime {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(TrustedTime::from_wire(&r.array()?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum SealError {
    #[error("sealed on a different machine")]
    WrongMachine,
    #[error("sealed by a different enclave measurement")]
    WrongMeasurement,
    #[error("sealed blob failed authentication")]
    AuthFailure,
    #[error("malformed sealed blob")]
    Malformed,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBlob {
    pub machine_id: u32,
    pub measurement: Measurement,
    pub ct: Ciphertext,
}

impl SealedBlob {
    fn associated_data(machine_id: u32, measurement: &Measurement) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"confid/seal").u32(machine_id).put(measurement);
        w.into_bytes()
    }
}

impl Encode for SealedBlob {
    fn encode(&self, w: &mut Writer) {
        w.u32(self.machine_id).put(&self.measurement).put(&self.ct);
    }
}

impl Decode for SealedBlob {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(SealedBlob { machine_id: r.u32()?, measurement: r.get()?, ct: r.get()? })
    }
}

/// One simulated physical machine: identity, sealing root, trusted clock and
/// untrusted disk. The machine secret never leaves this struct.
#[derive(Debug)]
pub struct Machine {
    id: u32,
    secret: [u8; 32],
    clock: SimClock,
    time_nonce: [u8; 32],
    last_time: u64,
    boots: u32,
    rng: SimRng,
    trace: Trace,
    registry: SecretRegistry,
    disk: BTreeMap<String, Vec<u8>>,
}

impl Machine {
    pub fn new(id: u32, seed: u64, clock: SimClock, trace: Trace, registry: SecretRegistry) -> Self {
        let mut rng = derive_rng(seed, &format!("machine/{id}"));
        let mut secret = [0u8; 32];
        rng.fill_bytes(&mut secret);
        let mut time_nonce = [0u8; 32];
        rng.fill_bytes(&mut time_nonce);
        Machine { id, secret, clock, time_nonce, last_time: 0, boots: 0, rng, trace, registry, disk: BTreeMap::new() }
    }

    pub fn id(&self) -> u32 {
        self.id
    }

    pub fn boots(&self) -> u32 {
        self.boots
    }

    pub fn clock(&self) -> &SimClock {
        &self.clock
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn registry(&self) -> &SecretRegistry {
        &self.registry
    }

    /// Monotone within an epoch; the nonce changes only on reboot.
    pub fn trusted_time(&mut self) -> TrustedTime {
        self.last_time = self.last_time.max(self.clock.now());
        TrustedTime { time: self.last_time, nonce: self.time_nonce }
    }

    fn reboot(&mut self) {
        self.rng.fill_bytes(&mut self.time_nonce);
        self.boots += 1;
    }

    fn sealing_key(&self, measurement: &Measurement) -> SymmetricKey {
        let mut ikm = self.secret.to_vec();
        ikm.extend_from_slice(measurement.0.as_bytes());
        SymmetricKey(kdf(&ikm, b"confid/seal/v1"))
    }

    fn seal(&mut self, measurement: &Measurement, state: &[u8]) -> SealedBlob {
        let key = self.sealing_key(measurement);
        let ad = SealedBlob::associated_data(self.id, measurement);
        let ct = aead_encrypt(&key, state, &ad, &mut self.rng);
        SealedBlob { machine_id: self.id, measurement: *measurement, ct }
    }

    fn unseal(&self, measurement: &Measurement, blob: &SealedBlob) -> Result<Vec<u8>, SealError> {
        if blob.machine_id != self.id {
            return Err(SealError::WrongMachine);
        }
        if blob.measurement != *measurement {
            return Err(SealError::WrongMeasurement);
        }
        let ad = SealedBlob::associated_data(blob.machine_id, &blob.measurement);
        aead_decrypt(&self.sealing_key(measurement), &blob.ct, &ad).map_err(|_| SealError::AuthFailure)
    }

    fn platform_info(&self) -> Vec<u8> {
        let mut w = Writer::new();
        w.raw(b"sim-platform").u32(self.id);
        w.into_bytes()
    }

    /// Untrusted storage. Every write is visible to administrators.
    pub fn write_file(&mut self, name: &str, bytes: &[u8]) {
        self.trace.record(Channel::Disk { path: format!("m{}/{name}", self.id) }, Frame::clear(bytes.to_vec()));
        self.disk.insert(name.to_string(), bytes.to_vec());
    }

    pub fn read_file(&self, name: &str) -> Option<&[u8]> {
        self.disk.get(name).map(Vec::as_slice)
    }

    pub fn delete_file(&mut self, name: &str) -> bool {
        self.disk.remove(name).is_some()
    }

    pub fn files(&self) -> impl Iterator<Item = (&String, &Vec<u8>)> {
        self.disk.iter()
    }
}

/// Capabilities available to code running inside an enclave.
pub struct EnclaveEnv<'a> {
    machine: &'a mut Machine,
    measurement: Measurement,
}

impl EnclaveEnv<'_> {
    pub fn measurement(&self) -> Measurement {
        self.measurement
    }

    pub fn machine_id(&self) -> u32 {
        self.machine.id
    }

    pub fn trusted_time(&mut self) -> TrustedTime {
        self.machine.trusted_time()
    }

    pub fn rng(&mut self) -> &mut SimRng {
        &mut self.machine.rng
    }

    pub fn platform_info(&self) -> Vec<u8> {
        self.machine.platform_info()
    }

    pub fn seal(&mut self, state: &[u8]) -> SealedBlob {
        let m = self.measurement;
        self.machine.seal(&m, state)
    }

    pub fn unseal(&self, blob: &SealedBlob) -> Result<Vec<u8>, SealError> {
        self.machine.unseal(&self.measurement, blob)
    }

    pub fn register_secret(&self, label: impl Into<String>, secret: &[u8]) {
        self.machine.registry.register(label, secret);
    }

    pub fn publish_key_digest(&self, holder: impl Into<String>, digest: HashDigest) {
        self.machine.registry.publish_key_digest(holder, digest);
    }

    pub fn forget_key_digest(&self, holder: &str) {
        self.machine.registry.forget_key_digest(holder);
    }
}

/// Trusted code loaded into an [`Enclave`].
pub trait EnclaveProgram: Sized {
    /// Construction-time constants; part of the measured code identity.
    type Config: Clone;
    type Request: Encode + Decode;
    type Response: Encode + Decode;

    fn code_identity(config: &Self::Config) -> String;

    fn launch(config: &Self::Config, env: &mut EnclaveEnv<'_>) -> Self;

    fn ecall(&mut self, env: &mut EnclaveEnv<'_>, request: Self::Request) -> Self::Response;

    /// Response for a request that failed to decode at the boundary.
    fn malformed(err: CodecError) -> Self::Response;
}

pub struct Enclave<P: EnclaveProgram> {
    machine: Machine,
    config: P::Config,
    measurement: Measurement,
    program: P,
}

impl<P: EnclaveProgram> Enclave<P> {
    pub fn launch(mut machine: Machine, config: P::Config) -> Self {
        let measurement = measure(&P::code_identity(&config));
        let program = P::launch(&config, &mut EnclaveEnv { machine: &mut machine, measurement });
        Enclave { machine, config, measurement, program }
    }

    pub fn measurement(&self) -> Measurement {
        self.measurement
    }

    pub fn config(&self) -> &P::Config {
        &self.config
    }

    pub fn machine(&self) -> &Machine {
        &self.machine
    }

    /// Untrusted host access to the machine (disk, identity).
    pub fn machine_mut(&mut self) -> &mut Machine {
        &mut self.machine
    }

    /// The single entry point. Requests and responses are recorded verbatim.
    pub fn ecall(&mut self, request: &Frame) -> Frame {
        let id = self.machine.id;
        self.machine.trace.record(Channel::Ecall { machine: id }, request.clone());
        let response = match P::Request::from_bytes(&request.bytes) {
            Ok(req) => {
                let mut env = EnclaveEnv { machine: &mut self.machine, measurement: self.measurement };
                self.program.ecall(&mut env, req)
            }
            Err(e) => P::malformed(e),
        };
        let frame = response.to_frame();
        self.machine.trace.record(Channel::Eret { machine: id }, frame.clone());
        frame
    }

    /// Typed convenience over [`Enclave::ecall`]; still crosses as bytes.
    pub fn call(&mut self, request: &P::Request) -> P::Response {
        let out = self.ecall(&request.to_frame());
        P::Response::from_bytes(&out.bytes).expect("enclave responses always decode")
    }

    /// Volatile state is lost, the time nonce changes, disk survives.
    pub fn reboot(&mut self) {
        self.machine.reboot();
        let mut env = EnclaveEnv { machine: &mut self.machine, measurement: self.measurement };
        self.program = P::launch(&self.config, &mut env);
    }

    /// Moves the machine (and its disk) under a different program build.
    pub fn relaunch_with<Q: EnclaveProgram>(self, config: Q::Config) -> Enclave<Q> {
        Enclave::launch(self.machine, config)
    }

    pub fn into_machine(self) -> Machine {
        self.machine
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Sealer {
        secret: Vec<u8>,
    }

    #[derive(Debug)]
    enum Req {
        Seal,
        Unseal(SealedBlob),
        Time,
    }

    #[derive(Debug, PartialEq)]
    enum Resp {
        Blob(SealedBlob),
        Opened(Result<Vec<u8>, String>),
        Time(TrustedTime),
        Bad,
    }

    impl Encode for Req {
        fn encode(&self, w: &mut Writer) {
            match self {
                Req::Seal => w.u8(0),
                Req::Unseal(b) => w.u8(1).put(b),
                Req::Time => w.u8(2),
            };
        }
    }

    impl Decode for Req {
        fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
            match r.u8()? {
                0 => Ok(Req::Seal),
                1 => Ok(Req::Unseal(r.get()?)),
                2 => Ok(Req::Time),
                _ => Err(CodecError::Invalid("tag")),
            }
        }
    }

    impl Encode for Resp {
        fn encode(&self, w: &mut Writer) {
            match self {
                Resp::Blob(b) => w.u8(0).put(b),
                Resp::Opened(Ok(v)) => w.u8(1).bytes(v),
                Resp::Opened(Err(e)) => w.u8(2).str(e),
                Resp::Time(t) => w.u8(3).put(t),
                Resp::Bad => w.u8(4),
            };
        }
    }

    impl Decode for Resp {
        fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
            Ok(match r.u8()? {
                0 => Resp::Blob(r.get()?),
                1 => Resp::Opened(Ok(r.vec()?)),
                2 => Resp::Opened(Err(r.string()?)),
                3 => Resp::Time(r.get()?),
                _ => Resp::Bad,
            })
        }
    }

    impl EnclaveProgram for Sealer {
        type Config = String;
        type Request = Req;
        type Response = Resp;

        fn code_identity(config: &String) -> String {
            config.clone()
        }

        fn launch(_: &String, env: &mut EnclaveEnv<'_>) -> Self {
            let mut secret = vec![0u8; 16];
            env.rng().fill_bytes(&mut secret);
            Sealer { secret }
        }

        fn ecall(&mut self, env: &mut EnclaveEnv<'_>, request: Req) -> Resp {
            match request {
                Req::Seal => Resp::Blob(env.seal(&self.secret)),
                Req::Unseal(b) => Resp::Opened(env.unseal(&b).map_err(|e| format!("{e:?}"))),
                Req::Time => Resp::Time(env.trusted_time()),
            }
        }

        fn malformed(_: CodecError) -> Resp {
            Resp::Bad
        }
    }

    fn machine(id: u32, clock: &SimClock) -> Machine {
        Machine::new(id, 42, clock.clone(), Trace::new(), SecretRegistry::new())
    }

    #[test]
    fn measurement_is_hash_of_length_prefixed_identity() {
        let id = "econf/1.0";
        let mut encoded = (id.len() as u32).to_be_bytes().to_vec();
        encoded.extend_from_slice(id.as_bytes());
        assert_eq!(measure(id).0, hash(&encoded));
        assert_eq!(measure(id), measure("econf/1.0"));
        assert_ne!(measure(id), measure("econf/1.1"));
    }

    #[test]
    fn trusted_time_is_monotone_and_rekeyed_on_reboot() {
        let clock = SimClock::new(100);
        let mut e = Enclave::<Sealer>::launch(machine(1, &clock), "p/1".into());
        let Resp::Time(t1) = e.call(&Req::Time) else { panic!() };
        clock.advance(5);
        let Resp::Time(t2) = e.call(&Req::Time) else { panic!() };
        assert!(t2.time >= t1.time);
        assert_eq!(t1.nonce, t2.nonce);
        assert_eq!(t1.to_bytes().len(), TRUSTED_TIME_LEN);
        e.reboot();
        let Resp::Time(t3) = e.call(&Req::Time) else { panic!() };
        assert_ne!(t3.nonce, t2.nonce);
        assert!(t3.time >= t2.time);
    }

    #[test]
    fn sealing_cross_matrix() {
        let clock = SimClock::new(0);
        let mut a = Enclave::<Sealer>::launch(machine(1, &clock), "p/1".into());
        let Resp::Blob(blob) = a.call(&Req::Seal) else { panic!() };
        let secret = a.program.secret.clone();

        assert_eq!(a.call(&Req::Unseal(blob.clone())), Resp::Opened(Ok(secret.clone())));
        a.reboot();
        assert_eq!(a.call(&Req::Unseal(blob.clone())), Resp::Opened(Ok(secret)));

        let mut other_machine = Enclave::<Sealer>::launch(machine(2, &clock), "p/1".into());
        assert_eq!(other_machine.call(&Req::Unseal(blob.clone())), Resp::Opened(Err("WrongMachine".into())));

        let mut other_code = a.relaunch_with::<Sealer>("p/2".into());
        assert_eq!(other_code.call(&Req::Unseal(blob.clone())), Resp::Opened(Err("WrongMeasurement".into())));

        // Claiming the current measurement does not help: the key differs.
        let mut forged = blob.clone();
        forged.measurement = other_code.measurement();
        assert_eq!(other_code.call(&Req::Unseal(forged)), Resp::Opened(Err("AuthFailure".into())));

        let mut neither = Enclave::<Sealer>::launch(machine(3, &clock), "p/3".into());
        assert_eq!(neither.call(&Req::Unseal(blob)), Resp::Opened(Err("WrongMachine".into())));
    }

    #[test]
    fn every_crossing_is_traced() {
        let clock = SimClock::new(0);
        let trace = Trace::new();
        let m = Machine::new(9, 1, clock, trace.clone(), SecretRegistry::new());
        let mut e = Enclave::<Sealer>::launch(m, "p/1".into());
        e.call(&Req::Time);
        assert_eq!(e.ecall(&Frame::clear(vec![0xee])), Resp::Bad.to_frame());
        let snap = trace.snapshot();
        assert_eq!(snap.len(), 4);
        assert_eq!(snap[0].channel, Channel::Ecall { machine: 9 });
        assert_eq!(snap[1].channel, Channel::Eret { machine: 9 });
    }
}
