//! Digests pinned against an independent SHA-256 implementation.

use autobox::auditcore::{
    canonical_serialize, derive_vehicle_key, identity_hash, parse_golden_vectors, Digest, EventType, ModuleMetadata,
};
use autobox::ledger::{merkle_root, LedgerBlock};
use autobox::masternode::meta_digest;
use chrono::NaiveDate;

const VECTORS: &str = include_str!("data/golden_vectors.tsv");

fn d(hex: &str) -> Digest {
    Digest::from_hex(hex).unwrap()
}

fn fixture_metadata() -> ModuleMetadata {
    ModuleMetadata {
        module_id: "ECU".into(),
        design_date: NaiveDate::from_ymd_opt(2019, 3, 14).unwrap(),
        manufacture_date: NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(),
        manufacture_location: "Detroit".into(),
        supplier_id: "SUP-042".into(),
        production_lot: "LOT-7".into(),
        software_version: "1.0.0".into(),
        variant_code: "V6-AWD".into(),
        serial_number: "SN-0001".into(),
        vin: "1HGCM82633A004352".into(),
    }
}

#[test]
fn vector_file_matches_sha256() {
    let vectors = parse_golden_vectors(VECTORS).unwrap();
    assert_eq!(vectors.len(), 6);
    for v in &vectors {
        assert_eq!(
            Digest::of(&v.canonical_bytes),
            v.expected,
            "{}",
            hex::encode(&v.canonical_bytes)
        );
    }
}

#[test]
fn fixture_metadata_bytes_are_in_vector_file() {
    let bytes = canonical_serialize(&fixture_metadata()).unwrap();
    let vectors = parse_golden_vectors(VECTORS).unwrap();
    let v = vectors
        .iter()
        .find(|v| v.canonical_bytes == bytes)
        .expect("fixture present");
    assert_eq!(
        v.expected,
        d("bfccd9a56c92133a3762584a70e6e3c4e6df15e5c46b0fc2f0910c263bd77b58")
    );
}

#[test]
fn identity_hash_of_fixture() {
    let rec = identity_hash(&fixture_metadata(), 3600, EventType::PeriodicInterval).unwrap();
    assert_eq!(
        rec.payload_hash,
        d("bfccd9a56c92133a3762584a70e6e3c4e6df15e5c46b0fc2f0910c263bd77b58")
    );
    assert_eq!(
        rec.record_key,
        d("96eed70249bf4f1aa8c4dc1772223cb389ad4b64be4ca09859ac8d7ca1888260")
    );
    assert_eq!(rec.payload_summary, "ECU@1.0.0");
}

#[test]
fn vehicle_key_of_fixture_serials() {
    let key = derive_vehicle_key(["A-TCM-0001", "A-ECU-0001", "A-BCM-0001", "A-ECU-0001"], "7.5.2").unwrap();
    assert_eq!(
        key.key,
        d("5d1764ceda9ef64cfc1767d76230c89e7cc7721036030643b7992a2d9bbcd968")
    );
}

#[test]
fn meta_digest_of_three_records() {
    let pairs: Vec<(Digest, Digest)> = [2u8, 0, 1]
        .iter()
        .map(|i| {
            (
                Digest::of(format!("k{i}").as_bytes()),
                Digest::of(format!("p{i}").as_bytes()),
            )
        })
        .collect();
    let got = meta_digest(pairs.iter().map(|(k, p)| (k, p)));
    assert_eq!(
        got,
        d("ba0ef21ea20a08d6910cc02625956c6ce26f5beab8c5900a18fcce3974fdd68f")
    );
    assert_eq!(
        meta_digest(std::iter::empty()),
        d("e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855")
    );
}

#[test]
fn merkle_root_of_three_leaves() {
    let leaves: Vec<Digest> = (0..3).map(|i| Digest::of(format!("l{i}").as_bytes())).collect();
    assert_eq!(
        merkle_root(&leaves),
        d("38be0a6d73af8779aab84391859c001254d2303943fc11808466efa5e0c54a28")
    );
}

#[test]
fn empty_genesis_block_hash_is_in_vector_file() {
    let block = LedgerBlock::new(0, Digest::ZERO, Vec::new());
    let text = format!(
        "entries_root={}\nindex=0\nprev_hash={}",
        block.entries_root,
        Digest::ZERO
    );
    let vectors = parse_golden_vectors(VECTORS).unwrap();
    let v = vectors
        .iter()
        .find(|v| v.canonical_bytes == text.as_bytes())
        .expect("present");
    assert_eq!(block.block_hash, v.expected);
}
