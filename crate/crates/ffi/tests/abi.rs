use std::ffi::{CStr, CString};
use std::ptr;

use confid::admin::{Lease, Role};
use confid::codec::Encode;
use confid::crypto::{derive_rng, generate_keypair, hash, HashDigest, Scheme};
use confid::enclave::TrustedTime;
use confid_ffi::*;

fn signed_lease() -> (Lease, Vec<u8>) {
    let kp = generate_keypair(Scheme::Admin, &mut derive_rng(1, "ffi"));
    let mut lease = Lease {
        agent_id: HashDigest([7; 32]),
        admin_id: 2,
        role: Role::LEADER | Role::WRITER,
        upgrade_measurement: None,
        creation_time: 1_000,
        base_trusted_time: TrustedTime { time: 5_000, nonce: [3; 32] },
        expiration: 5_000 + 86_400,
        sig: Vec::new(),
    };
    lease.sign_with(&kp.secret);
    (lease, kp.public.to_bytes())
}

fn last_error() -> String {
    let mut len = 0usize;
    let mut buf = vec![0u8; 256];
    assert_eq!(unsafe { confid_last_error(buf.as_mut_ptr(), buf.len(), &mut len) }, ConfidStatus::Ok);
    String::from_utf8(buf[..len].to_vec()).unwrap()
}

#[test]
fn hash_matches_core() {
    let mut out = [0u8; 32];
    assert_eq!(unsafe { confid_hash(b"abc".as_ptr(), 3, out.as_mut_ptr()) }, ConfidStatus::Ok);
    assert_eq!(out, hash(b"abc").0);
    assert_eq!(unsafe { confid_hash(ptr::null(), 0, out.as_mut_ptr()) }, ConfidStatus::Ok);
    assert_eq!(out, hash(b"").0);
    assert_eq!(unsafe { confid_hash(ptr::null(), 4, out.as_mut_ptr()) }, ConfidStatus::NullPointer);
}

#[test]
fn version_is_nul_terminated() {
    let v = unsafe { CStr::from_ptr(confid_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn lease_round_trip_fields_and_signature() {
    let (lease, admin_pk) = signed_lease();
    let wire = lease.to_wire();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { confid_lease_decode(wire.as_ptr(), wire.len(), &mut handle) }, ConfidStatus::Ok);
    let (mut admin, mut role, mut exp) = (0u32, 0u32, 0u64);
    assert_eq!(unsafe { confid_lease_fields(handle, &mut admin, &mut role, &mut exp) }, ConfidStatus::Ok);
    assert_eq!((admin, role, exp), (2, (Role::LEADER | Role::WRITER).bits(), 91_400));

    let mut len = 0usize;
    assert_eq!(unsafe { confid_lease_encode(handle, ptr::null_mut(), 0, &mut len) }, ConfidStatus::BufferTooSmall);
    assert_eq!(len, wire.len());
    let mut buf = vec![0u8; len];
    assert_eq!(unsafe { confid_lease_encode(handle, buf.as_mut_ptr(), buf.len(), &mut len) }, ConfidStatus::Ok);
    assert_eq!(buf, wire);

    let mut valid = false;
    assert_eq!(unsafe { confid_lease_verify(handle, admin_pk.as_ptr(), admin_pk.len(), &mut valid) }, ConfidStatus::Ok);
    assert!(valid);
    let other = generate_keypair(Scheme::Admin, &mut derive_rng(2, "ffi")).public.to_bytes();
    assert_eq!(unsafe { confid_lease_verify(handle, other.as_ptr(), other.len(), &mut valid) }, ConfidStatus::Ok);
    assert!(!valid);
    assert_eq!(unsafe { confid_lease_verify(handle, [1u8, 2].as_ptr(), 2, &mut valid) }, ConfidStatus::InvalidKey);
    unsafe { confid_lease_free(handle) };
}

#[test]
fn lease_decode_errors_map_to_statuses() {
    let (lease, _) = signed_lease();
    let wire = lease.to_wire();
    let mut handle = ptr::null_mut();
    assert_eq!(unsafe { confid_lease_decode(wire.as_ptr(), 99, &mut handle) }, ConfidStatus::TruncatedLease);
    assert!(handle.is_null());
    assert!(!last_error().is_empty());
    let mut long = wire.clone();
    long.push(0);
    assert_eq!(unsafe { confid_lease_decode(long.as_ptr(), long.len(), &mut handle) }, ConfidStatus::SigLenMismatch);
    let mut bad_role = wire.clone();
    bad_role[36] = 0x80;
    assert_eq!(unsafe { confid_lease_decode(bad_role.as_ptr(), bad_role.len(), &mut handle) }, ConfidStatus::InvalidRole);
    assert_eq!(unsafe { confid_lease_decode(wire.as_ptr(), wire.len(), ptr::null_mut()) }, ConfidStatus::NullPointer);
}

#[test]
fn scenario_run_through_the_abi() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { confid_scenario_baseline(4, 3, 1, 9, &mut cfg) }, ConfidStatus::Ok);
    let mut len = 0usize;
    assert_eq!(unsafe { confid_scenario_toml(cfg, ptr::null_mut(), 0, &mut len) }, ConfidStatus::BufferTooSmall);
    let mut toml = vec![0u8; len];
    assert_eq!(unsafe { confid_scenario_toml(cfg, toml.as_mut_ptr(), len, &mut len) }, ConfidStatus::Ok);
    unsafe { confid_scenario_free(cfg) };

    let text = CString::new(toml).unwrap();
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { confid_scenario_from_toml(text.as_ptr(), &mut cfg) }, ConfidStatus::Ok);
    let mut result = ptr::null_mut();
    assert_eq!(unsafe { confid_run(cfg, &mut result) }, ConfidStatus::Ok);
    let mut pass = false;
    assert_eq!(unsafe { confid_result_all_pass(result, &mut pass) }, ConfidStatus::Ok);
    assert!(pass);
    assert_eq!(unsafe { confid_result_json(result, ptr::null_mut(), 0, &mut len) }, ConfidStatus::BufferTooSmall);
    let mut json = vec![0u8; len];
    assert_eq!(unsafe { confid_result_json(result, json.as_mut_ptr(), len, &mut len) }, ConfidStatus::Ok);
    let json = String::from_utf8(json).unwrap();
    assert!(json.contains("\"inception\": true"), "{json}");
    unsafe {
        confid_result_free(result);
        confid_scenario_free(cfg);
    }
}

#[test]
fn invalid_inputs_are_reported_not_panicked() {
    let mut cfg = ptr::null_mut();
    assert_eq!(unsafe { confid_scenario_baseline(2, 3, 1, 0, &mut cfg) }, ConfidStatus::InvalidConfig);
    assert!(last_error().contains("invalid"));
    let junk = CString::new("n = \"four\"").unwrap();
    assert_eq!(unsafe { confid_scenario_from_toml(junk.as_ptr(), &mut cfg) }, ConfidStatus::InvalidConfig);
    let bad_utf8 = [0xffu8, 0];
    assert_eq!(unsafe { confid_scenario_from_toml(bad_utf8.as_ptr().cast(), &mut cfg) }, ConfidStatus::InvalidUtf8);
    assert_eq!(unsafe { confid_run(ptr::null(), ptr::null_mut()) }, ConfidStatus::NullPointer);
    unsafe {
        confid_scenario_free(ptr::null_mut());
        confid_result_free(ptr::null_mut());
        confid_lease_free(ptr::null_mut());
    }
}

#[test]
fn generated_header_declares_every_export_and_compiles() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/confid.h")).unwrap();
    for f in [
        "confid_last_error", "confid_version", "confid_hash", "confid_scenario_from_toml", "confid_scenario_baseline",
        "confid_scenario_free", "confid_scenario_toml", "confid_run", "confid_result_all_pass", "confid_result_json",
        "confid_result_free", "confid_lease_decode", "confid_lease_encode", "confid_lease_fields",
        "confid_lease_verify", "confid_lease_free",
    ] {
        assert!(header.contains(&format!("{f}(")), "{f} missing from header");
    }
    assert!(header.contains("typedef struct ConfidLease ConfidLease;"));
    assert!(header.contains("CONFID_STATUS_SIG_LEN_MISMATCH = 5"));
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("probe.c");
    std::fs::write(&src, "#include \"confid.h\"\nint main(void) { return CONFID_STATUS_OK; }\n").unwrap();
    let status = std::process::Command::new("cc")
        .args(["-std=c99", "-Wall", "-Werror", "-fsyntax-only", "-I", concat!(env!("CARGO_MANIFEST_DIR"), "/include")])
        .arg(&src)
        .status();
    match status {
        Ok(s) => assert!(s.success(), "header does not compile as C99"),
        Err(e) => eprintln!("no C compiler available ({e}); header compile check skipped"),
    }
}
