//! Match computation over a decrypted ledger snapshot and the fixed-size report layout.
//!
//! `M` maps each perpetrator to its distinct-reporter complaints (first per
//! reporter). Entries before the latest marker's `scanned_count` were covered
//! by an earlier scan; a perpetrator is reported when a new distinct reporter
//! arrives after that point and it then has at least two, or when an earlier
//! scan deferred it for lack of space.

use std::collections::BTreeMap;

use crate::codec::{CodecError, Decode, Encode, Reader, Writer};
use crate::crypto::{HashDigest, SealedBox};
use crate::enclave::TrustedTime;

use super::complaint::Complaint;

pub const DEFAULT_REPORT_SIZE: u32 = 65_536;

/// Bytes a sealed report adds on top of its padded plaintext.
pub const REPORT_OVERHEAD: usize = SealedBox::encoded_len(0);

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScanMarker {
    pub scanned_count: u64,
    pub deferred: Vec<HashDigest>,
    pub time: TrustedTime,
}

impl Encode for ScanMarker {
    fn encode(&self, w: &mut Writer) {
        w.u64(self.scanned_count).list(&self.deferred).put(&self.time);
    }
}

impl Decode for ScanMarker {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(ScanMarker { scanned_count: r.u64()?, deferred: r.list()?, time: r.get()? })
    }
}

/// One decrypted ledger entry as the scanner sees it.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScanItem {
    Complaint(Complaint),
    Marker(ScanMarker),
    Other,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct MatchRecord {
    pub perpetrator_id: HashDigest,
    pub complaints: Vec<Complaint>,
}

impl Encode for MatchRecord {
    fn encode(&self, w: &mut Writer) {
        w.put(&self.perpetrator_id).list(&self.complaints);
    }
}

impl Decode for MatchRecord {
    fn decode(r: &mut Reader<'_>) -> Result<Self, CodecError> {
        Ok(MatchRecord { perpetrator_id: r.get()?, complaints: r.list()? })
    }
}

/// Matches due in this scan: `carry`, then the marker's deferred list, then by arrival of the triggering reporter.
///
/// `carry` holds perpetrators of an earlier report that was never released.
pub fn compute_matches(items: &[ScanItem], carry: &[HashDigest]) -> Vec<MatchRecord> {
    let marker = items.iter().rev().find_map(|i| match i {
        ScanItem::Marker(m) => Some(m),
        _ => None,
    });
    let covered = marker.map_or(0, |m| m.scanned_count);
    let mut table: BTreeMap<HashDigest, Vec<Complaint>> = BTreeMap::new();
    let mut due: Vec<HashDigest> = carry.to_vec();
    for p in marker.map_or(&[][..], |m| &m.deferred[..]) {
        if !due.contains(p) {
            due.push(*p);
        }
    }
    let mut gained: Vec<HashDigest> = Vec::new();
    for (seq, item) in items.iter().enumerate() {
        let ScanItem::Complaint(c) = item else { continue };
        let users = table.entry(c.perpetrator_id).or_default();
        if users.iter().any(|u| u.user_id == c.user_id) {
            continue;
        }
        users.push(c.clone());
        if seq as u64 >= covered && users.len() >= 2 && !gained.contains(&c.perpetrator_id) {
            gained.push(c.perpetrator_id);
        }
    }
    for p in gained {
        if !due.contains(&p) {
            due.push(p);
        }
    }
    due.into_iter()
        .filter_map(|p| {
            let complaints = table.get(&p)?.clone();
            (complaints.len() >= 2).then_some(MatchRecord { perpetrator_id: p, complaints })
        })
        .collect()
}

/// Plaintext of `capacity` bytes holding as many leading records as fit; returns the rest.
pub fn pack_report(records: &[MatchRecord], capacity: usize) -> (Vec<u8>, Vec<MatchRecord>) {
    assert!(capacity >= 4, "report capacity below count field");
    let mut body = Writer::new();
    let mut fitted = 0usize;
    for r in records {
        let enc = r.to_bytes();
        if 4 + body.len() + enc.len() > capacity {
            break;
        }
        body.raw(&enc);
        fitted += 1;
    }
    let mut out = Writer::new();
    out.u32(fitted as u32).raw(&body.into_bytes());
    let mut bytes = out.into_bytes();
    bytes.resize(capacity, 0);
    (bytes, records[fitted..].to_vec())
}

/// Inverse of [`pack_report`]; padding must be zero.
pub fn unpack_report(plaintext: &[u8]) -> Result<Vec<MatchRecord>, CodecError> {
    let mut r = Reader::new(plaintext);
    let n = r.u32()? as usize;
    let mut out = Vec::with_capacity(n.min(1024));
    for _ in 0..n {
        out.push(r.get()?);
    }
    let rest = r.take(r.remaining())?;
    if rest.iter().any(|&b| b != 0) {
        return Err(CodecError::Invalid("report padding"));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::crypto::hash;
    use proptest::prelude::*;
    use std::collections::BTreeSet;

    fn c(p: u8, u: u8, body: &str) -> ScanItem {
        ScanItem::Complaint(Complaint {
            perpetrator_id: hash(&[b'p', p]),
            user_id: hash(&[b'u', u]),
            body: body.as_bytes().to_vec(),
            submitted_at: TrustedTime { time: 0, nonce: [0; 32] },
        })
    }

    fn marker(count: u64) -> ScanItem {
        ScanItem::Marker(ScanMarker { scanned_count: count, deferred: vec![], time: TrustedTime { time: 0, nonce: [0; 32] } })
    }

    #[test]
    fn worked_examples() {
        let two = compute_matches(&[c(1, 1, "a"), c(1, 2, "b")], &[]);
        assert_eq!(two.len(), 1);
        assert_eq!(two[0].complaints.iter().map(|x| x.body.clone()).collect::<Vec<_>>(), vec![b"a".to_vec(), b"b".to_vec()]);
        assert!(compute_matches(&[c(1, 1, "a")], &[]).is_empty());
        assert!(compute_matches(&[c(1, 1, "a"), c(1, 1, "again")], &[]).is_empty());
        assert!(compute_matches(&[c(1, 1, "a"), c(1, 2, "b"), marker(2)], &[]).is_empty());
        let third = compute_matches(&[c(1, 1, "a"), c(1, 2, "b"), marker(2), c(1, 3, "c")], &[]);
        assert_eq!(third[0].complaints.len(), 3);
        let carried = compute_matches(&[c(1, 1, "a"), c(1, 2, "b"), marker(2)], &[hash(&[b'p', 1])]);
        assert_eq!(carried.len(), 1);
    }

    #[test]
    fn packing_is_fixed_size_and_defers_overflow() {
        let items: Vec<ScanItem> = (0..6).flat_map(|p| [c(p, 1, "xxxxxxxx"), c(p, 2, "yyyyyyyy")]).collect();
        let recs = compute_matches(&items, &[]);
        assert_eq!(recs.len(), 6);
        let one = recs[0].to_bytes().len();
        let (bytes, rest) = pack_report(&recs, 4 + 2 * one + 3);
        assert_eq!(bytes.len(), 4 + 2 * one + 3);
        assert_eq!(rest.len(), 4);
        assert_eq!(unpack_report(&bytes).unwrap(), recs[..2].to_vec());
        let (empty, _) = pack_report(&[], 64);
        assert_eq!((empty.len(), unpack_report(&empty).unwrap().len()), (64, 0));
    }

    /// Brute-force reading: a perpetrator is due iff it has ≥2 distinct reporters
    /// overall and some reporter appears for it only at or after the marker.
    fn oracle(items: &[ScanItem]) -> BTreeSet<HashDigest> {
        let covered = items.iter().rev().find_map(|i| if let ScanItem::Marker(m) = i { Some(m.scanned_count) } else { None }).unwrap_or(0);
        let complaints: Vec<(usize, &Complaint)> =
            items.iter().enumerate().filter_map(|(i, it)| if let ScanItem::Complaint(c) = it { Some((i, c)) } else { None }).collect();
        let perps: BTreeSet<HashDigest> = complaints.iter().map(|(_, c)| c.perpetrator_id).collect();
        perps
            .into_iter()
            .filter(|p| {
                let users = |pred: &dyn Fn(usize) -> bool| -> BTreeSet<HashDigest> {
                    complaints.iter().filter(|(i, c)| c.perpetrator_id == *p && pred(*i)).map(|(_, c)| c.user_id).collect()
                };
                let all = users(&|_| true);
                let old = users(&|i| (i as u64) < covered);
                all.len() >= 2 && all.len() > old.len()
            })
            .collect()
    }

    proptest! {
        #[test]
        fn matches_agree_with_oracle(
            raw in proptest::collection::vec((0u8..6, 0u8..5), 0..60),
            cut in 0usize..61,
        ) {
            let mut items: Vec<ScanItem> = raw.iter().enumerate().map(|(i, (p, u))| c(*p, *u, &format!("{i}"))).collect();
            let cut = cut.min(items.len());
            items.insert(cut, marker(cut as u64));
            let got: BTreeSet<HashDigest> = compute_matches(&items, &[]).iter().map(|m| m.perpetrator_id).collect();
            prop_assert_eq!(got, oracle(&items));
        }

        #[test]
        fn report_length_is_constant(n in 0usize..12) {
            let items: Vec<ScanItem> = (0..n as u8).flat_map(|p| [c(p, 1, "b1"), c(p, 2, "b2")]).collect();
            let (bytes, _) = pack_report(&compute_matches(&items, &[]), 4096);
            prop_assert_eq!(bytes.len(), 4096);
        }
    }
}
