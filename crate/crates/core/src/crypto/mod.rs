//! Semantic wrappers over the cryptographic primitives.
//!
//! * hashing: SHA-256
//! * agent-strength keys: NIST P-521, used for both ECDSA and ECDH
//! * admin-strength keys: NIST P-256 ECDSA
//! * symmetric: AES-256-GCM with 12-byte nonces drawn from a caller-supplied CSPRNG
//!
//! Signing is deterministic (nonces derived from key and digest), so a fixed seed
//! reproduces every byte a simulation emits. Signatures use the fixed-width `r || s` form.

mod ec;

use std::fmt;

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use hkdf::Hkdf;
use rand_chacha::ChaCha20Rng;
use rand_core::{CryptoRngCore, SeedableRng};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::{CodecError, Decode, Encode, Reader, Writer};

pub const DIGEST_LEN: usize = 32;
pub const KEY_LEN: usize = 32;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CryptoError {
    #[error("authentication failed")]
    AuthFailure,
    #[error("malformed key")]
    MalformedKey,
    #[error("key scheme {0:?} cannot perform key agreement")]
    NotKeyAgreement(Scheme),
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct HashDigest(pub [u8; DIGEST_LEN]);

impl HashDigest {
    pub fn as_bytes(&self) -> &[u8; DIGEST_LEN] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    pub fn from_hex(s: &str) -> Option<Self> {
        let bytes = hex::decode(s).ok()?;
        Some(HashDigest(bytes.try_into().ok()?))
    }
}

impl fmt::Debug for HashDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "HashDigest({})", &self.to_hex()[..16])
    }
}

impl fmt::Display for HashDigest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl Encode for HashDigest {
    fn encode(&self, w: &mut Writer) {
        w.opaque_raw(&self.0);
    }
}

impl Decode for HashDigest {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(HashDigest(r.array()?))
    }
}

pub fn hash(data: &[u8]) -> HashDigest {
    HashDigest(Sha256::digest(data).into())
}

/// Hash of the plain concatenation of `parts`.
pub fn hash_parts(parts: &[&[u8]]) -> HashDigest {
    let mut h = Sha256::new();
    for p in parts {
        h.update(p);
    }
    HashDigest(h.finalize().into())
}

/// HKDF-SHA256 expansion to a 32-byte key.
pub fn kdf(ikm: &[u8], info: &[u8]) -> [u8; KEY_LEN] {
    let hk = Hkdf::<Sha256>::new(None, ikm);
    let mut out = [0u8; KEY_LEN];
    hk.expand(info, &mut out).expect("32 bytes is a valid HKDF length");
    out
}

/// Seedable CSPRNG used by every simulated actor.
pub type SimRng = ChaCha20Rng;

/// Derives an independent, reproducible RNG stream for `label` under `seed`.
pub fn derive_rng(seed: u64, label: &str) -> SimRng {
    let digest = hash_parts(&[b"confid/rng", &seed.to_be_bytes(), label.as_bytes()]);
    ChaCha20Rng::from_seed(digest.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Scheme {
    /// P-521: signatures and key agreement.
    Agent,
    /// P-256: signatures only.
    Admin,
}

impl Scheme {
    pub fn tag(self) -> u8 {
        match self {
            Scheme::Agent => 1,
            Scheme::Admin => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            1 => Some(Scheme::Agent),
            2 => Some(Scheme::Admin),
            _ => None,
        }
    }

    pub fn signature_len(self) -> usize {
        match self {
            Scheme::Agent => 132,
            Scheme::Admin => 64,
        }
    }
}

/// Signature-verification (and, for agent keys, key-agreement) public key.
///
/// Encoded as `scheme tag (1) || u16 length || SEC1 uncompressed point`.
#[derive(Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PublicKey {
    scheme: Scheme,
    point: Vec<u8>,
}

impl PublicKey {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    pub fn point(&self) -> &[u8] {
        &self.point
    }

    /// Builds a key from a SEC1 point, validating it lies on the curve.
    pub fn from_sec1(scheme: Scheme, point: &[u8]) -> Result<Self, CryptoError> {
        if !ec::point_valid(scheme, point) {
            return Err(CryptoError::MalformedKey);
        }
        Ok(PublicKey { scheme, point: point.to_vec() })
    }

    /// `hash(encoding)`; for agent keys this is the agent id.
    pub fn fingerprint(&self) -> HashDigest {
        hash(&self.to_bytes())
    }
}

impl fmt::Debug for PublicKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "PublicKey({:?}, {})", self.scheme, &self.fingerprint().to_hex()[..12])
    }
}

impl Encode for PublicKey {
    fn encode(&self, w: &mut Writer) {
        w.u8(self.scheme.tag()).u16(self.point.len() as u16).raw(&self.point);
    }
}

impl Decode for PublicKey {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let scheme = Scheme::from_tag(r.u8()?).ok_or(CodecError::Invalid("key scheme"))?;
        let len = r.u16()? as usize;
        let point = r.take(len)?;
        PublicKey::from_sec1(scheme, point).map_err(|_| CodecError::Invalid("public key point"))
    }
}

/// Signing scalar. Never printed; zeroed on drop.
#[derive(Clone, PartialEq, Eq)]
pub struct SecretKey {
    scheme: Scheme,
    scalar: Vec<u8>,
}

impl SecretKey {
    pub fn scheme(&self) -> Scheme {
        self.scheme
    }

    /// Raw scalar bytes. Only enclave code and sealing should touch these.
    pub fn expose_scalar(&self) -> &[u8] {
        &self.scalar
    }

    pub fn public_key(&self) -> Result<PublicKey, CryptoError> {
        let point = ec::public_point(self.scheme, &self.scalar).ok_or(CryptoError::MalformedKey)?;
        Ok(PublicKey { scheme: self.scheme, point })
    }
}

impl Drop for SecretKey {
    fn drop(&mut self) {
        self.scalar.iter_mut().for_each(|b| *b = 0);
    }
}

impl fmt::Debug for SecretKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "SecretKey({:?}, <redacted>)", self.scheme)
    }
}

impl Encode for SecretKey {
    fn encode(&self, w: &mut Writer) {
        w.u8(self.scheme.tag()).u16(self.scalar.len() as u16).opaque_raw(&self.scalar);
    }
}

impl Decode for SecretKey {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let scheme = Scheme::from_tag(r.u8()?).ok_or(CodecError::Invalid("key scheme"))?;
        let len = r.u16()? as usize;
        let scalar = r.take(len)?.to_vec();
        let key = SecretKey { scheme, scalar };
        key.public_key().map_err(|_| CodecError::Invalid("secret scalar"))?;
        Ok(key)
    }
}

#[derive(Clone)]
pub struct SigningKeyPair {
    pub public: PublicKey,
    pub secret: SecretKey,
}

impl SigningKeyPair {
    pub fn scheme(&self) -> Scheme {
        self.public.scheme
    }

    pub fn from_secret(secret: SecretKey) -> Result<Self, CryptoError> {
        Ok(SigningKeyPair { public: secret.public_key()?, secret })
    }
}

impl fmt::Debug for SigningKeyPair {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("SigningKeyPair").field("public", &self.public).finish_non_exhaustive()
    }
}

pub fn generate_keypair(scheme: Scheme, rng: &mut impl CryptoRngCore) -> SigningKeyPair {
    let scalar = ec::random_scalar(scheme, rng);
    SigningKeyPair::from_secret(SecretKey { scheme, scalar }).expect("freshly generated scalar is valid")
}

/// Fixed-width ECDSA signature (`r || s`).
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Signature(pub Vec<u8>);

impl fmt::Debug for Signature {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Signature({} bytes)", self.0.len())
    }
}

impl Signature {
    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }
}

impl Encode for Signature {
    fn encode(&self, w: &mut Writer) {
        w.opaque_bytes(&self.0);
    }
}

impl Decode for Signature {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let bytes = r.vec()?;
        if bytes.len() > 256 {
            return Err(CodecError::Invalid("signature length"));
        }
        Ok(Signature(bytes))
    }
}

pub fn sign(secret: &SecretKey, msg: &[u8]) -> Signature {
    Signature(ec::sign(secret.scheme, &secret.scalar, msg).expect("validated scalar"))
}

/// Never panics: malformed keys or signatures simply fail verification.
pub fn verify(public: &PublicKey, msg: &[u8], sig: &Signature) -> bool {
    ec::verify(public.scheme, &public.point, msg, &sig.0)
}

#[derive(Clone, PartialEq, Eq)]
pub struct SymmetricKey(pub [u8; KEY_LEN]);

impl SymmetricKey {
    pub fn random(rng: &mut impl CryptoRngCore) -> Self {
        let mut k = [0u8; KEY_LEN];
        rng.fill_bytes(&mut k);
        SymmetricKey(k)
    }

    pub fn as_bytes(&self) -> &[u8; KEY_LEN] {
        &self.0
    }

    /// Digest used to compare keys across enclaves without revealing them.
    pub fn digest(&self) -> HashDigest {
        hash_parts(&[b"confid/key-digest", &self.0])
    }
}

impl Drop for SymmetricKey {
    fn drop(&mut self) {
        self.0 = [0u8; KEY_LEN];
    }
}

impl fmt::Debug for SymmetricKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("SymmetricKey(<redacted>)")
    }
}

/// ECDH over agent-strength keys, expanded with HKDF-SHA256 to 256 bits.
pub fn shared_key(my_secret: &SecretKey, their_public: &PublicKey) -> Result<SymmetricKey, CryptoError> {
    if my_secret.scheme != Scheme::Agent {
        return Err(CryptoError::NotKeyAgreement(my_secret.scheme));
    }
    if their_public.scheme != Scheme::Agent {
        return Err(CryptoError::NotKeyAgreement(their_public.scheme));
    }
    let shared = ec::ecdh(Scheme::Agent, &my_secret.scalar, &their_public.point).ok_or(CryptoError::MalformedKey)?;
    Ok(SymmetricKey(kdf(&shared, b"confid/ecdh/v1")))
}

/// AES-256-GCM output: `nonce (12) || u32 length || body || tag (16)` on the wire.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Ciphertext {
    pub nonce: [u8; NONCE_LEN],
    pub body: Vec<u8>,
    pub tag: [u8; TAG_LEN],
}

impl Ciphertext {
    /// Encoded size for a plaintext of `len` bytes.
    pub const fn encoded_len(len: usize) -> usize {
        NONCE_LEN + 4 + len + TAG_LEN
    }
}

impl fmt::Debug for Ciphertext {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Ciphertext({} bytes)", self.body.len())
    }
}

impl Encode for Ciphertext {
    fn encode(&self, w: &mut Writer) {
        w.opaque_raw(&self.nonce);
        w.u32(self.body.len() as u32);
        w.opaque_raw(&self.body);
        w.opaque_raw(&self.tag);
    }
}

impl Decode for Ciphertext {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        let nonce = r.array()?;
        let len = r.u32()? as usize;
        let body = r.take(len)?.to_vec();
        let tag = r.array()?;
        Ok(Ciphertext { nonce, body, tag })
    }
}

pub fn aead_encrypt(
    key: &SymmetricKey,
    plaintext: &[u8],
    associated_data: &[u8],
    rng: &mut impl CryptoRngCore,
) -> Ciphertext {
    let mut nonce = [0u8; NONCE_LEN];
    rng.fill_bytes(&mut nonce);
    let cipher = Aes256Gcm::new(&key.0.into());
    let mut body = plaintext.to_vec();
    let tag = cipher
        .encrypt_in_place_detached(&Nonce::from(nonce), associated_data, &mut body)
        .expect("plaintext within AES-GCM limits");
    Ciphertext { nonce, body, tag: tag.into() }
}

pub fn aead_decrypt(key: &SymmetricKey, ct: &Ciphertext, associated_data: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let cipher = Aes256Gcm::new(&key.0.into());
    let mut body = ct.body.clone();
    cipher
        .decrypt_in_place_detached(&Nonce::from(ct.nonce), associated_data, &mut body, &Tag::from(ct.tag))
        .map_err(|_| CryptoError::AuthFailure)?;
    Ok(body)
}

/// Public-key encryption to an agent-strength key: ephemeral ECDH then AES-GCM.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SealedBox {
    pub ephemeral: PublicKey,
    pub ct: Ciphertext,
}

impl SealedBox {
    /// Encoded size for a plaintext of `len` bytes.
    pub const fn encoded_len(len: usize) -> usize {
        // tag + u16 + 133-byte P-521 point
        1 + 2 + 133 + Ciphertext::encoded_len(len)
    }
}

impl Encode for SealedBox {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.ephemeral).put(&self.ct);
    }
}

impl Decode for SealedBox {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(SealedBox { ephemeral: r.get()?, ct: r.get()? })
    }
}

pub fn seal_to(
    recipient: &PublicKey,
    plaintext: &[u8],
    associated_data: &[u8],
    rng: &mut impl CryptoRngCore,
) -> Result<SealedBox, CryptoError> {
    let eph = generate_keypair(Scheme::Agent, rng);
    let key = shared_key(&eph.secret, recipient)?;
    let ct = aead_encrypt(&key, plaintext, associated_data, rng);
    Ok(SealedBox { ephemeral: eph.public, ct })
}

pub fn open_sealed(recipient: &SecretKey, sealed: &SealedBox, associated_data: &[u8]) -> Result<Vec<u8>, CryptoError> {
    let key = shared_key(recipient, &sealed.ephemeral)?;
    aead_decrypt(&key, &sealed.ct, associated_data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Straight-line FIPS 180-4 SHA-256, independent of the `sha2` crate.
    fn reference_sha256(msg: &[u8]) -> [u8; 32] {
        const K: [u32; 64] = [
            0x428a2f98, 0x71374491, 0xb5c0fbcf, 0xe9b5dba5, 0x3956c25b, 0x59f111f1, 0x923f82a4, 0xab1c5ed5,
            0xd807aa98, 0x12835b01, 0x243185be, 0x550c7dc3, 0x72be5d74, 0x80deb1fe, 0x9bdc06a7, 0xc19bf174,
            0xe49b69c1, 0xefbe4786, 0x0fc19dc6, 0x240ca1cc, 0x2de92c6f, 0x4a7484aa, 0x5cb0a9dc, 0x76f988da,
            0x983e5152, 0xa831c66d, 0xb00327c8, 0xbf597fc7, 0xc6e00bf3, 0xd5a79147, 0x06ca6351, 0x14292967,
            0x27b70a85, 0x2e1b2138, 0x4d2c6dfc, 0x53380d13, 0x650a7354, 0x766a0abb, 0x81c2c92e, 0x92722c85,
            0xa2bfe8a1, 0xa81a664b, 0xc24b8b70, 0xc76c51a3, 0xd192e819, 0xd6990624, 0xf40e3585, 0x106aa070,
            0x19a4c116, 0x1e376c08, 0x2748774c, 0x34b0bcb5, 0x391c0cb3, 0x4ed8aa4a, 0x5b9cca4f, 0x682e6ff3,
            0x748f82ee, 0x78a5636f, 0x84c87814, 0x8cc70208, 0x90befffa, 0xa4506ceb, 0xbef9a3f7, 0xc67178f2,
        ];
        let mut h: [u32; 8] = [
            0x6a09e667, 0xbb67ae85, 0x3c6ef372, 0xa54ff53a, 0x510e527f, 0x9b05688c, 0x1f83d9ab, 0x5be0cd19,
        ];
        let mut data = msg.to_vec();
        data.push(0x80);
        while data.len() % 64 != 56 {
            data.push(0);
        }
        data.extend_from_slice(&((msg.len() as u64) * 8).to_be_bytes());
        for block in data.chunks(64) {
            let mut w = [0u32; 64];
            for i in 0..16 {
                w[i] = u32::from_be_bytes(block[i * 4..i * 4 + 4].try_into().unwrap());
            }
            for i in 16..64 {
                let s0 = w[i - 15].rotate_right(7) ^ w[i - 15].rotate_right(18) ^ (w[i - 15] >> 3);
                let s1 = w[i - 2].rotate_right(17) ^ w[i - 2].rotate_right(19) ^ (w[i - 2] >> 10);
                w[i] = w[i - 16].wrapping_add(s0).wrapping_add(w[i - 7]).wrapping_add(s1);
            }
            let mut v = h;
            for i in 0..64 {
                let s1 = v[4].rotate_right(6) ^ v[4].rotate_right(11) ^ v[4].rotate_right(25);
                let ch = (v[4] & v[5]) ^ (!v[4] & v[6]);
                let t1 = v[7].wrapping_add(s1).wrapping_add(ch).wrapping_add(K[i]).wrapping_add(w[i]);
                let s0 = v[0].rotate_right(2) ^ v[0].rotate_right(13) ^ v[0].rotate_right(22);
                let maj = (v[0] & v[1]) ^ (v[0] & v[2]) ^ (v[1] & v[2]);
                let t2 = s0.wrapping_add(maj);
                v = [t1.wrapping_add(t2), v[0], v[1], v[2], v[3].wrapping_add(t1), v[4], v[5], v[6]];
            }
            for i in 0..8 {
                h[i] = h[i].wrapping_add(v[i]);
            }
        }
        let mut out = [0u8; 32];
        for (i, word) in h.iter().enumerate() {
            out[i * 4..i * 4 + 4].copy_from_slice(&word.to_be_bytes());
        }
        out
    }

    #[test]
    fn hash_of_empty_input() {
        assert_eq!(hash(b"").to_hex(), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }

    #[test]
    fn hash_matches_reference_implementation() {
        assert_eq!(hash(b"abc").0, reference_sha256(b"abc"));
        let long: Vec<u8> = (0..1000u32).map(|i| (i * 7 % 251) as u8).collect();
        assert_eq!(hash(&long).0, reference_sha256(&long));
    }

    proptest! {
        #[test]
        fn hash_is_deterministic_and_agrees_with_reference(data in proptest::collection::vec(any::<u8>(), 0..300)) {
            prop_assert_eq!(hash(&data), hash(&data));
            prop_assert_eq!(hash(&data).0, reference_sha256(&data));
        }
    }

    #[test]
    fn sign_verify_round_trip_and_binding() {
        let mut rng = derive_rng(1, "sig");
        for scheme in [Scheme::Agent, Scheme::Admin] {
            let a = generate_keypair(scheme, &mut rng);
            let b = generate_keypair(scheme, &mut rng);
            let sig = sign(&a.secret, b"message");
            assert_eq!(sig.0.len(), scheme.signature_len());
            assert!(verify(&a.public, b"message", &sig));
            assert!(!verify(&a.public, b"messagf", &sig));
            assert!(!verify(&b.public, b"message", &sig));
        }
    }

    #[test]
    fn single_bit_flips_break_verification() {
        let mut rng = derive_rng(2, "flip");
        let kp = generate_keypair(Scheme::Admin, &mut rng);
        let msg = b"lease body".to_vec();
        let sig = sign(&kp.secret, &msg);
        for bit in 0..msg.len() * 8 {
            let mut m = msg.clone();
            m[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify(&kp.public, &m, &sig));
        }
        for bit in 0..sig.0.len() * 8 {
            let mut s = sig.clone();
            s.0[bit / 8] ^= 1 << (bit % 8);
            assert!(!verify(&kp.public, &msg, &s));
        }
    }

    #[test]
    fn malformed_signatures_and_keys_fail_quietly() {
        let mut rng = derive_rng(3, "bad");
        let kp = generate_keypair(Scheme::Agent, &mut rng);
        assert!(!verify(&kp.public, b"m", &Signature(vec![])));
        assert!(!verify(&kp.public, b"m", &Signature(vec![0xff; 132])));
        let wrong_scheme = generate_keypair(Scheme::Admin, &mut rng);
        let sig = sign(&kp.secret, b"m");
        assert!(!verify(&wrong_scheme.public, b"m", &sig));
        assert!(PublicKey::from_sec1(Scheme::Agent, &[4, 1, 2, 3]).is_err());
    }

    #[test]
    fn shared_key_is_symmetric_and_secret_dependent() {
        let mut rng = derive_rng(4, "ecdh");
        let a = generate_keypair(Scheme::Agent, &mut rng);
        let b = generate_keypair(Scheme::Agent, &mut rng);
        let c = generate_keypair(Scheme::Agent, &mut rng);
        let ab = shared_key(&a.secret, &b.public).unwrap();
        assert_eq!(ab, shared_key(&b.secret, &a.public).unwrap());
        assert_eq!(ab.0.len(), 32);
        assert_ne!(shared_key(&a.secret, &c.public).unwrap(), shared_key(&b.secret, &c.public).unwrap());
        let admin = generate_keypair(Scheme::Admin, &mut rng);
        assert_eq!(
            shared_key(&a.secret, &admin.public),
            Err(CryptoError::NotKeyAgreement(Scheme::Admin))
        );
    }

    #[test]
    fn aead_round_trip_tamper_and_nonce_freshness() {
        let mut rng = derive_rng(5, "aead");
        let key = SymmetricKey::random(&mut rng);
        let ct = aead_encrypt(&key, b"plaintext", b"ad", &mut rng);
        assert_eq!(aead_decrypt(&key, &ct, b"ad").unwrap(), b"plaintext");
        let mut flipped = ct.clone();
        flipped.body[0] ^= 1;
        assert_eq!(aead_decrypt(&key, &flipped, b"ad"), Err(CryptoError::AuthFailure));
        assert_eq!(aead_decrypt(&key, &ct, b"other"), Err(CryptoError::AuthFailure));
        let other = SymmetricKey::random(&mut rng);
        assert_eq!(aead_decrypt(&other, &ct, b"ad"), Err(CryptoError::AuthFailure));
        let again = aead_encrypt(&key, b"plaintext", b"ad", &mut rng);
        assert_ne!(ct.nonce, again.nonce);
        assert_ne!(ct, again);
    }

    #[test]
    fn random_forgeries_never_authenticate() {
        use rand::{Rng, RngCore};
        let mut rng = derive_rng(6, "forge");
        let key = SymmetricKey::random(&mut rng);
        let genuine = aead_encrypt(&key, b"0123456789abcdef", b"ad", &mut rng);
        for i in 0..10_000 {
            let mut forged = genuine.clone();
            match i % 3 {
                0 => rng.fill_bytes(&mut forged.tag),
                1 => {
                    let idx = rng.gen_range(0..forged.body.len());
                    forged.body[idx] ^= rng.gen_range(1..=255u8);
                }
                _ => {
                    forged.body = (0..rng.gen_range(0..32)).map(|_| rng.gen()).collect();
                    rng.fill_bytes(&mut forged.nonce);
                }
            }
            assert!(aead_decrypt(&key, &forged, b"ad").is_err());
        }
    }

    #[test]
    fn sealed_box_round_trip_and_size() {
        let mut rng = derive_rng(7, "box");
        let recipient = generate_keypair(Scheme::Agent, &mut rng);
        let sealed = seal_to(&recipient.public, b"hello", b"ad", &mut rng).unwrap();
        assert_eq!(sealed.to_bytes().len(), SealedBox::encoded_len(5));
        assert_eq!(open_sealed(&recipient.secret, &sealed, b"ad").unwrap(), b"hello");
        let other = generate_keypair(Scheme::Agent, &mut rng);
        assert!(open_sealed(&other.secret, &sealed, b"ad").is_err());
    }

    #[test]
    fn key_encodings_round_trip() {
        let mut rng = derive_rng(8, "enc");
        for scheme in [Scheme::Agent, Scheme::Admin] {
            let kp = generate_keypair(scheme, &mut rng);
            assert_eq!(PublicKey::from_bytes(&kp.public.to_bytes()).unwrap(), kp.public);
            assert_eq!(SecretKey::from_bytes(&kp.secret.to_bytes()).unwrap(), kp.secret);
        }
    }
}
