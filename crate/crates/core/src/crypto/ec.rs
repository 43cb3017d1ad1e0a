//! Curve arithmetic on OpenSSL's EC implementation.
//!
//! ECDSA nonces are derived, not drawn: `k = HKDF-SHA512(d || z) mod n`, with
//! 16 surplus bytes so the reduction bias is below 2^-128. Signatures and public
//! points use fixed-width big-endian encodings (`r || s`, SEC1 uncompressed).

use std::sync::OnceLock;

use hkdf::Hkdf;
use openssl::bn::{BigNum, BigNumContext, BigNumRef};
use openssl::ec::{EcGroup, EcKey, EcPoint, PointConversionForm};
use openssl::ecdsa::EcdsaSig;
use openssl::nid::Nid;
use rand_core::CryptoRngCore;
use sha2::{Digest, Sha256, Sha512};

use super::Scheme;

struct Curve {
    group: EcGroup,
    order: BigNum,
    /// Byte width of scalars and of each affine coordinate.
    width: usize,
}

fn curve(scheme: Scheme) -> &'static Curve {
    static P521: OnceLock<Curve> = OnceLock::new();
    static P256: OnceLock<Curve> = OnceLock::new();
    let (cell, nid, width) = match scheme {
        Scheme::Agent => (&P521, Nid::SECP521R1, 66),
        Scheme::Admin => (&P256, Nid::X9_62_PRIME256V1, 32),
    };
    cell.get_or_init(|| {
        let group = EcGroup::from_curve_name(nid).expect("built-in curve");
        let mut order = BigNum::new().expect("bignum");
        let mut ctx = BigNumContext::new().expect("bn context");
        group.order(&mut order, &mut ctx).expect("group order");
        Curve { group, order, width }
    })
}

fn ctx() -> BigNumContext {
    BigNumContext::new().expect("bn context")
}

fn in_range(c: &Curve, x: &BigNumRef) -> bool {
    !x.is_negative() && x.num_bits() > 0 && x.ucmp(&c.order).is_lt()
}

fn parse_scalar(c: &Curve, bytes: &[u8]) -> Option<BigNum> {
    if bytes.len() != c.width {
        return None;
    }
    let d = BigNum::from_slice(bytes).ok()?;
    in_range(c, &d).then_some(d)
}

fn parse_point(c: &Curve, bytes: &[u8]) -> Option<EcPoint> {
    if bytes.len() != 1 + 2 * c.width || bytes[0] != 0x04 {
        return None;
    }
    let point = EcPoint::from_bytes(&c.group, bytes, &mut ctx()).ok()?;
    (!point.is_infinity(&c.group)).then_some(point)
}

fn encode_point(c: &Curve, p: &EcPoint) -> Vec<u8> {
    p.to_bytes(&c.group, PointConversionForm::UNCOMPRESSED, &mut ctx()).expect("finite point encodes")
}

pub(super) fn point_valid(scheme: Scheme, point: &[u8]) -> bool {
    parse_point(curve(scheme), point).is_some()
}

/// Uniform scalar in `[1, n)` by rejection sampling.
pub(super) fn random_scalar(scheme: Scheme, rng: &mut impl CryptoRngCore) -> Vec<u8> {
    let c = curve(scheme);
    let top_mask = match scheme {
        Scheme::Agent => 0x01,
        Scheme::Admin => 0xff,
    };
    loop {
        let mut bytes = vec![0u8; c.width];
        rng.fill_bytes(&mut bytes);
        bytes[0] &= top_mask;
        if parse_scalar(c, &bytes).is_some() {
            return bytes;
        }
    }
}

pub(super) fn public_point(scheme: Scheme, scalar: &[u8]) -> Option<Vec<u8>> {
    let c = curve(scheme);
    let d = parse_scalar(c, scalar)?;
    let mut p = EcPoint::new(&c.group).ok()?;
    p.mul_generator2(&c.group, &d, &mut ctx()).ok()?;
    Some(encode_point(c, &p))
}

/// Message representative: SHA-512 for P-521, SHA-256 for P-256. Neither exceeds the order width.
fn digest(scheme: Scheme, msg: &[u8]) -> Vec<u8> {
    match scheme {
        Scheme::Agent => Sha512::digest(msg).to_vec(),
        Scheme::Admin => Sha256::digest(msg).to_vec(),
    }
}

fn derive_nonce(c: &Curve, scalar: &[u8], z: &[u8], counter: u32, bn: &mut BigNumContext) -> BigNum {
    let hk = Hkdf::<Sha512>::new(Some(b"confid/ecdsa-nonce/v1"), &[scalar, z].concat());
    let mut okm = vec![0u8; c.width + 16];
    hk.expand(&counter.to_be_bytes(), &mut okm).expect("okm within HKDF limit");
    let wide = BigNum::from_slice(&okm).expect("bignum");
    let mut k = BigNum::new().expect("bignum");
    k.nnmod(&wide, &c.order, bn).expect("reduce");
    k
}

/// `None` only for an invalid scalar.
pub(super) fn sign(scheme: Scheme, scalar: &[u8], msg: &[u8]) -> Option<Vec<u8>> {
    let c = curve(scheme);
    let d = parse_scalar(c, scalar)?;
    let z = digest(scheme, msg);
    let mut bn = ctx();
    let mut e = BigNum::new().ok()?;
    let z_num = BigNum::from_slice(&z).ok()?;
    e.nnmod(&z_num, &c.order, &mut bn).ok()?;
    for counter in 0.. {
        let k = derive_nonce(c, scalar, &z, counter, &mut bn);
        if k.num_bits() == 0 {
            continue;
        }
        let mut big_r = EcPoint::new(&c.group).ok()?;
        big_r.mul_generator2(&c.group, &k, &mut bn).ok()?;
        let (mut x, mut y) = (BigNum::new().ok()?, BigNum::new().ok()?);
        big_r.affine_coordinates(&c.group, &mut x, &mut y, &mut bn).ok()?;
        let mut r = BigNum::new().ok()?;
        r.nnmod(&x, &c.order, &mut bn).ok()?;
        if r.num_bits() == 0 {
            continue;
        }
        let (mut rd, mut sum, mut k_inv, mut s) =
            (BigNum::new().ok()?, BigNum::new().ok()?, BigNum::new().ok()?, BigNum::new().ok()?);
        rd.mod_mul(&r, &d, &c.order, &mut bn).ok()?;
        sum.mod_add(&e, &rd, &c.order, &mut bn).ok()?;
        k_inv.mod_inverse(&k, &c.order, &mut bn).ok()?;
        s.mod_mul(&k_inv, &sum, &c.order, &mut bn).ok()?;
        if s.num_bits() == 0 {
            continue;
        }
        let width = c.width as i32;
        let mut out = r.to_vec_padded(width).ok()?;
        out.extend(s.to_vec_padded(width).ok()?);
        return Some(out);
    }
    unreachable!("nonce counter exhausted")
}

pub(super) fn verify(scheme: Scheme, point: &[u8], msg: &[u8], sig: &[u8]) -> bool {
    let c = curve(scheme);
    if sig.len() != 2 * c.width {
        return false;
    }
    let Some(q) = parse_point(c, point) else { return false };
    let Ok(key) = EcKey::from_public_key(&c.group, &q) else { return false };
    let (Ok(r), Ok(s)) = (BigNum::from_slice(&sig[..c.width]), BigNum::from_slice(&sig[c.width..])) else {
        return false;
    };
    if !in_range(c, &r) || !in_range(c, &s) {
        return false;
    }
    let Ok(sig) = EcdsaSig::from_private_components(r, s) else { return false };
    sig.verify(&digest(scheme, msg), &key).unwrap_or(false)
}

/// Raw ECDH secret: the x-coordinate of `d·Q`, fixed width.
pub(super) fn ecdh(scheme: Scheme, scalar: &[u8], point: &[u8]) -> Option<Vec<u8>> {
    let c = curve(scheme);
    let d = parse_scalar(c, scalar)?;
    let q = parse_point(c, point)?;
    let mut bn = ctx();
    let mut shared = EcPoint::new(&c.group).ok()?;
    shared.mul2(&c.group, &q, &d, &mut bn).ok()?;
    if shared.is_infinity(&c.group) {
        return None;
    }
    let (mut x, mut y) = (BigNum::new().ok()?, BigNum::new().ok()?);
    shared.affine_coordinates(&c.group, &mut x, &mut y, &mut bn).ok()?;
    x.to_vec_padded(c.width as i32).ok()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::derive_rng;
    use p256::ecdsa::signature::{Signer, Verifier};

    #[test]
    fn public_points_agree_with_rustcrypto() {
        let mut rng = derive_rng(1, "ec-oracle");
        for _ in 0..8 {
            let d = random_scalar(Scheme::Agent, &mut rng);
            let theirs = p521::SecretKey::from_slice(&d).unwrap().public_key().to_sec1_bytes().to_vec();
            assert_eq!(public_point(Scheme::Agent, &d).unwrap(), theirs);
            let d = random_scalar(Scheme::Admin, &mut rng);
            let theirs = p256::SecretKey::from_slice(&d).unwrap().public_key().to_sec1_bytes().to_vec();
            assert_eq!(public_point(Scheme::Admin, &d).unwrap(), theirs);
        }
    }

    #[test]
    fn signatures_cross_verify_with_rustcrypto() {
        let mut rng = derive_rng(2, "ec-oracle");
        for i in 0..8u8 {
            let msg = vec![i; 40 + i as usize];
            let d = random_scalar(Scheme::Agent, &mut rng);
            let pt = public_point(Scheme::Agent, &d).unwrap();
            let ours = sign(Scheme::Agent, &d, &msg).unwrap();
            let vk = p521::ecdsa::VerifyingKey::from_sec1_bytes(&pt).unwrap();
            assert!(vk.verify(&msg, &p521::ecdsa::Signature::from_slice(&ours).unwrap()).is_ok());

            let d = random_scalar(Scheme::Admin, &mut rng);
            let pt = public_point(Scheme::Admin, &d).unwrap();
            let ours = sign(Scheme::Admin, &d, &msg).unwrap();
            let vk = p256::ecdsa::VerifyingKey::from_sec1_bytes(&pt).unwrap();
            assert!(vk.verify(&msg, &p256::ecdsa::Signature::from_slice(&ours).unwrap()).is_ok());
            let theirs: p256::ecdsa::Signature = p256::ecdsa::SigningKey::from_slice(&d).unwrap().sign(&msg);
            assert!(verify(Scheme::Admin, &pt, &msg, &theirs.to_bytes()));
        }
    }

    #[test]
    fn ecdh_agrees_with_rustcrypto() {
        let mut rng = derive_rng(3, "ec-oracle");
        let a = random_scalar(Scheme::Agent, &mut rng);
        let b = random_scalar(Scheme::Agent, &mut rng);
        let b_pt = public_point(Scheme::Agent, &b).unwrap();
        let sk = p521::SecretKey::from_slice(&a).unwrap();
        let pk = p521::PublicKey::from_sec1_bytes(&b_pt).unwrap();
        let theirs = p521::ecdh::diffie_hellman(sk.to_nonzero_scalar(), pk.as_affine());
        assert_eq!(ecdh(Scheme::Agent, &a, &b_pt).unwrap(), theirs.raw_secret_bytes().to_vec());
    }

    #[test]
    fn signing_is_deterministic_and_nonce_depends_on_message() {
        let mut rng = derive_rng(4, "ec-det");
        let d = random_scalar(Scheme::Agent, &mut rng);
        let s1 = sign(Scheme::Agent, &d, b"m1").unwrap();
        assert_eq!(s1, sign(Scheme::Agent, &d, b"m1").unwrap());
        let s2 = sign(Scheme::Agent, &d, b"m2").unwrap();
        assert_ne!(s1[..66], s2[..66]);
    }

    #[test]
    fn rejects_out_of_range_inputs() {
        let c = curve(Scheme::Admin);
        assert!(parse_scalar(c, &[0u8; 32]).is_none());
        assert!(parse_scalar(c, &c.order.to_vec_padded(32).unwrap()).is_none());
        assert!(parse_scalar(c, &[1u8; 31]).is_none());
        assert!(!point_valid(Scheme::Admin, &[0u8]));
        let mut rng = derive_rng(5, "ec-range");
        let d = random_scalar(Scheme::Admin, &mut rng);
        let pt = public_point(Scheme::Admin, &d).unwrap();
        let mut off_curve = pt.clone();
        off_curve[64] ^= 1;
        assert!(!point_valid(Scheme::Admin, &off_curve));
        let sig = sign(Scheme::Admin, &d, b"m").unwrap();
        let mut high = c.order.to_vec_padded(32).unwrap();
        high.extend_from_slice(&sig[32..]);
        assert!(!verify(Scheme::Admin, &pt, b"m", &high));
    }
}
