//! Domain types shared by every layer: module metadata, audit records,
//! canonical serialization and the identity / vehicle-key digests.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

/// Maximum byte length of [`AuditRecord::payload_summary`].
pub const PAYLOAD_SUMMARY_MAX: usize = 64;

/// Maximum byte length of a module identifier. Module ids are length-prefixed
/// with a single byte in the node store encoding.
pub const MODULE_ID_MAX: usize = 255;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AuditError {
    #[error("field `{field}` contains a newline")]
    Newline { field: &'static str },
    #[error("field `{field}` must not be empty")]
    Empty { field: &'static str },
    #[error("module id `{0}` contains a tab")]
    TabInModuleId(String),
    #[error("invalid VIN `{0}`: expected 17 characters from [A-HJ-NPR-Z0-9]")]
    InvalidVin(String),
    #[error("module id `{0}` exceeds {MODULE_ID_MAX} bytes")]
    ModuleIdTooLong(String),
    #[error("vehicle key needs at least one serial number")]
    NoSerials,
    #[error("invalid digest hex `{0}`")]
    InvalidDigest(String),
    #[error("unknown event type `{0}`")]
    UnknownEventType(String),
}

/// A 256-bit SHA-256 digest. Rendered as lowercase hex everywhere text is involved.
#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Digest(pub [u8; 32]);

impl Digest {
    pub const ZERO: Digest = Digest([0u8; 32]);

    pub fn of(bytes: &[u8]) -> Self {
        Digest(Sha256::digest(bytes).into())
    }

    pub fn as_bytes(&self) -> &[u8; 32] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }

    /// Parses exactly 64 lowercase hex characters. Uppercase is rejected so
    /// that every digest has a single textual form.
    pub fn from_hex(s: &str) -> Result<Self, AuditError> {
        if s.len() != 64 || !s.bytes().all(|b| matches!(b, b'0'..=b'9' | b'a'..=b'f')) {
            return Err(AuditError::InvalidDigest(s.to_string()));
        }
        let mut out = [0u8; 32];
        hex::decode_to_slice(s, &mut out).map_err(|_| AuditError::InvalidDigest(s.to_string()))?;
        Ok(Digest(out))
    }

    pub fn xor(&self, other: &Digest) -> Digest {
        let mut out = [0u8; 32];
        for (o, (a, b)) in out.iter_mut().zip(self.0.iter().zip(other.0.iter())) {
            *o = a ^ b;
        }
        Digest(out)
    }

    /// Number of leading bits shared with `other` (256 when equal).
    pub fn shared_prefix_len(&self, other: &Digest) -> usize {
        let mut bits = 0;
        for (a, b) in self.0.iter().zip(other.0.iter()) {
            let x = a ^ b;
            if x == 0 {
                bits += 8;
            } else {
                bits += x.leading_zeros() as usize;
                break;
            }
        }
        bits
    }
}

impl fmt::Debug for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Digest({})", &self.to_hex()[..12])
    }
}

impl fmt::Display for Digest {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl FromStr for Digest {
    type Err = AuditError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Digest::from_hex(s)
    }
}

impl Serialize for Digest {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_hex())
    }
}

impl<'de> Deserialize<'de> for Digest {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        Digest::from_hex(&s).map_err(serde::de::Error::custom)
    }
}

/// Kinds of events that cause modules to hash their identity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EventType {
    PeriodicInterval,
    ObdPlugIn,
    ConfigChange,
    Reflash,
    MileageThreshold,
    ServiceNotice,
    StartupCheck,
}

impl EventType {
    pub const ALL: [EventType; 7] = [
        EventType::PeriodicInterval,
        EventType::ObdPlugIn,
        EventType::ConfigChange,
        EventType::Reflash,
        EventType::MileageThreshold,
        EventType::ServiceNotice,
        EventType::StartupCheck,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            EventType::PeriodicInterval => "PeriodicInterval",
            EventType::ObdPlugIn => "ObdPlugIn",
            EventType::ConfigChange => "ConfigChange",
            EventType::Reflash => "Reflash",
            EventType::MileageThreshold => "MileageThreshold",
            EventType::ServiceNotice => "ServiceNotice",
            EventType::StartupCheck => "StartupCheck",
        }
    }

    pub(crate) fn code(&self) -> u8 {
        *self as u8
    }

    pub(crate) fn from_code(code: u8) -> Option<Self> {
        Self::ALL.get(code as usize).copied()
    }
}

impl fmt::Display for EventType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for EventType {
    type Err = AuditError;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .iter()
            .copied()
            .find(|e| e.as_str() == s)
            .ok_or_else(|| AuditError::UnknownEventType(s.to_string()))
    }
}

/// Hardware and software descriptor of one ECU.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModuleMetadata {
    pub module_id: String,
    pub design_date: NaiveDate,
    pub manufacture_date: NaiveDate,
    pub manufacture_location: String,
    pub supplier_id: String,
    pub production_lot: String,
    pub software_version: String,
    pub variant_code: String,
    pub serial_number: String,
    pub vin: String,
}

/// Names of the metadata fields, ascending. This is the canonical field order.
pub const METADATA_FIELDS: [&str; 10] = [
    "design_date",
    "manufacture_date",
    "manufacture_location",
    "module_id",
    "production_lot",
    "serial_number",
    "software_version",
    "supplier_id",
    "variant_code",
    "vin",
];

pub fn is_valid_vin(vin: &str) -> bool {
    vin.len() == 17
        && vin
            .bytes()
            .all(|b| b.is_ascii_digit() || (b.is_ascii_uppercase() && !matches!(b, b'I' | b'O' | b'Q')))
}

fn reject_newline(field: &'static str, value: &str) -> Result<(), AuditError> {
    if value.contains('\n') || value.contains('\r') {
        Err(AuditError::Newline { field })
    } else {
        Ok(())
    }
}

impl ModuleMetadata {
    /// `(name, value)` pairs in canonical (ascending name) order.
    pub fn fields(&self) -> [(&'static str, String); 10] {
        [
            ("design_date", self.design_date.format("%Y-%m-%d").to_string()),
            ("manufacture_date", self.manufacture_date.format("%Y-%m-%d").to_string()),
            ("manufacture_location", self.manufacture_location.clone()),
            ("module_id", self.module_id.clone()),
            ("production_lot", self.production_lot.clone()),
            ("serial_number", self.serial_number.clone()),
            ("software_version", self.software_version.clone()),
            ("supplier_id", self.supplier_id.clone()),
            ("variant_code", self.variant_code.clone()),
            ("vin", self.vin.clone()),
        ]
    }

    /// Sets a string field by name. Dates are parsed as `YYYY-MM-DD`.
    /// Returns `false` for an unknown field or unparseable date.
    pub fn set_field(&mut self, field: &str, value: &str) -> bool {
        let date = || NaiveDate::parse_from_str(value, "%Y-%m-%d").ok();
        match field {
            "design_date" => match date() {
                Some(d) => self.design_date = d,
                None => return false,
            },
            "manufacture_date" => match date() {
                Some(d) => self.manufacture_date = d,
                None => return false,
            },
            "manufacture_location" => self.manufacture_location = value.to_string(),
            "module_id" => self.module_id = value.to_string(),
            "production_lot" => self.production_lot = value.to_string(),
            "serial_number" => self.serial_number = value.to_string(),
            "software_version" => self.software_version = value.to_string(),
            "supplier_id" => self.supplier_id = value.to_string(),
            "variant_code" => self.variant_code = value.to_string(),
            "vin" => self.vin = value.to_string(),
            _ => return false,
        }
        true
    }

    pub fn validate(&self) -> Result<(), AuditError> {
        for (name, value) in self.fields() {
            reject_newline(name, &value)?;
        }
        if self.module_id.is_empty() {
            return Err(AuditError::Empty { field: "module_id" });
        }
        // Tabs would break the tab-separated store dump.
        if self.module_id.contains('\t') {
            return Err(AuditError::TabInModuleId(self.module_id.clone()));
        }
        if self.module_id.len() > MODULE_ID_MAX {
            return Err(AuditError::ModuleIdTooLong(self.module_id.clone()));
        }
        if self.serial_number.is_empty() {
            return Err(AuditError::Empty { field: "serial_number" });
        }
        if !is_valid_vin(&self.vin) {
            return Err(AuditError::InvalidVin(self.vin.clone()));
        }
        Ok(())
    }
}

/// Renders `field=value` lines sorted by field name, newline-joined, no
/// trailing newline.
pub fn canonical_serialize(metadata: &ModuleMetadata) -> Result<Vec<u8>, AuditError> {
    metadata.validate()?;
    Ok(canonical_lines(metadata.fields().iter().map(|(k, v)| (*k, v.as_str()))))
}

fn canonical_lines<'a>(pairs: impl IntoIterator<Item = (&'a str, &'a str)>) -> Vec<u8> {
    let mut pairs: Vec<_> = pairs.into_iter().collect();
    pairs.sort_by(|a, b| a.0.cmp(b.0).then(a.1.cmp(b.1)));
    pairs
        .iter()
        .map(|(k, v)| format!("{k}={v}"))
        .collect::<Vec<_>>()
        .join("\n")
        .into_bytes()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum AirbagStatus {
    Ok,
    Deployed,
    FaultLatched,
}

impl AirbagStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            AirbagStatus::Ok => "Ok",
            AirbagStatus::Deployed => "Deployed",
            AirbagStatus::FaultLatched => "FaultLatched",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "Ok" => Some(AirbagStatus::Ok),
            "Deployed" => Some(AirbagStatus::Deployed),
            "FaultLatched" => Some(AirbagStatus::FaultLatched),
            _ => None,
        }
    }
}

/// Critical data each module keeps a replica of.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SharedCriticalData {
    pub vin: String,
    pub odometer_km: u64,
    pub airbag_status: AirbagStatus,
    pub service_event_count: u64,
}

impl SharedCriticalData {
    pub const FIELDS: [&'static str; 4] = ["airbag_status", "odometer_km", "service_event_count", "vin"];

    pub fn new(vin: impl Into<String>, odometer_km: u64) -> Self {
        Self {
            vin: vin.into(),
            odometer_km,
            airbag_status: AirbagStatus::Ok,
            service_event_count: 0,
        }
    }

    pub fn field(&self, name: &str) -> Option<String> {
        Some(match name {
            "vin" => self.vin.clone(),
            "odometer_km" => self.odometer_km.to_string(),
            "airbag_status" => self.airbag_status.as_str().to_string(),
            "service_event_count" => self.service_event_count.to_string(),
            _ => return None,
        })
    }

    /// Overwrites a field from its textual form. `false` if the field is
    /// unknown or the value does not parse.
    pub fn set_field(&mut self, name: &str, value: &str) -> bool {
        match name {
            "vin" => self.vin = value.to_string(),
            "odometer_km" => match value.parse() {
                Ok(v) => self.odometer_km = v,
                Err(_) => return false,
            },
            "airbag_status" => match AirbagStatus::parse(value) {
                Some(v) => self.airbag_status = v,
                None => return false,
            },
            "service_event_count" => match value.parse() {
                Ok(v) => self.service_event_count = v,
                Err(_) => return false,
            },
            _ => return false,
        }
        true
    }
}

/// One hashed, timestamped event as stored in the DHT.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub record_key: Digest,
    pub module_id: String,
    pub event_type: EventType,
    pub sim_time: u64,
    pub payload_hash: Digest,
    pub payload_summary: String,
}

impl AuditRecord {
    pub fn compute_key(module_id: &str, event_type: EventType, sim_time: u64, payload_hash: &Digest) -> Digest {
        let sim_time = sim_time.to_string();
        let payload = payload_hash.to_hex();
        Digest::of(&canonical_lines([
            ("event_type", event_type.as_str()),
            ("module_id", module_id),
            ("payload_hash", payload.as_str()),
            ("sim_time", sim_time.as_str()),
        ]))
    }

    /// True when `record_key` matches the other fields and the summary fits.
    pub fn is_consistent(&self) -> bool {
        self.payload_summary.len() <= PAYLOAD_SUMMARY_MAX
            && self.record_key == Self::compute_key(&self.module_id, self.event_type, self.sim_time, &self.payload_hash)
    }
}

fn truncate_utf8(s: &str, max: usize) -> &str {
    if s.len() <= max {
        return s;
    }
    let mut end = max;
    while !s.is_char_boundary(end) {
        end -= 1;
    }
    &s[..end]
}

/// Hashes a module's metadata into an [`AuditRecord`] for the given event.
pub fn identity_hash(
    metadata: &ModuleMetadata,
    sim_time: u64,
    event_type: EventType,
) -> Result<AuditRecord, AuditError> {
    let payload_hash = Digest::of(&canonical_serialize(metadata)?);
    let summary = format!("{}@{}", metadata.module_id, metadata.software_version);
    Ok(AuditRecord {
        record_key: AuditRecord::compute_key(&metadata.module_id, event_type, sim_time, &payload_hash),
        module_id: metadata.module_id.clone(),
        event_type,
        sim_time,
        payload_hash,
        payload_summary: truncate_utf8(&summary, PAYLOAD_SUMMARY_MAX).to_string(),
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VehicleKey {
    pub key: Digest,
    pub derived_from_version: String,
}

/// Folds the ECU serial numbers and the latest software version into a key.
/// Duplicate serials collapse; order does not matter.
pub fn derive_vehicle_key<I, S>(serials: I, latest_version: &str) -> Result<VehicleKey, AuditError>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let serials: BTreeSet<String> = serials.into_iter().map(|s| s.as_ref().to_string()).collect();
    if serials.is_empty() {
        return Err(AuditError::NoSerials);
    }
    reject_newline("latest_version", latest_version)?;
    for s in &serials {
        reject_newline("serial", s)?;
    }
    let pairs =
        std::iter::once(("latest_version", latest_version)).chain(serials.iter().map(|s| ("serial", s.as_str())));
    Ok(VehicleKey {
        key: Digest::of(&canonical_lines(pairs)),
        derived_from_version: latest_version.to_string(),
    })
}

/// One `canonical_bytes_hex<TAB>expected_digest_hex` line of a golden vector file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GoldenVector {
    pub canonical_bytes: Vec<u8>,
    pub expected: Digest,
}

pub fn parse_golden_vectors(text: &str) -> Result<Vec<GoldenVector>, AuditError> {
    text.lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|line| {
            let (bytes_hex, digest_hex) = line
                .split_once('\t')
                .ok_or_else(|| AuditError::InvalidDigest(line.to_string()))?;
            let canonical_bytes =
                hex::decode(bytes_hex).map_err(|_| AuditError::InvalidDigest(bytes_hex.to_string()))?;
            Ok(GoldenVector {
                canonical_bytes,
                expected: Digest::from_hex(digest_hex)?,
            })
        })
        .collect()
}

pub fn format_golden_vector(canonical_bytes: &[u8]) -> String {
    format!(
        "{}\t{}",
        hex::encode(canonical_bytes),
        Digest::of(canonical_bytes).to_hex()
    )
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    pub fn metadata(module_id: &str, serial: &str) -> ModuleMetadata {
        ModuleMetadata {
            module_id: module_id.to_string(),
            design_date: NaiveDate::from_ymd_opt(2019, 3, 14).unwrap(),
            manufacture_date: NaiveDate::from_ymd_opt(2020, 7, 1).unwrap(),
            manufacture_location: "Detroit".to_string(),
            supplier_id: "SUP-042".to_string(),
            production_lot: "LOT-7".to_string(),
            software_version: "1.0.0".to_string(),
            variant_code: "V6-AWD".to_string(),
            serial_number: serial.to_string(),
            vin: "1HGCM82633A004352".to_string(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::metadata;
    use super::*;

    #[test]
    fn canonical_form_is_sorted_lines() {
        let bytes = canonical_serialize(&metadata("ECU", "S-1")).unwrap();
        let text = String::from_utf8(bytes).unwrap();
        let names: Vec<_> = text.lines().map(|l| l.split_once('=').unwrap().0).collect();
        assert_eq!(names, METADATA_FIELDS);
        assert!(!text.ends_with('\n'));
        assert!(text.starts_with("design_date=2019-03-14\n"));
    }

    #[test]
    fn single_field_delta_touches_one_line() {
        let a = metadata("ECU", "S-1");
        let mut b = a.clone();
        b.production_lot = "LOT-8".into();
        let la = String::from_utf8(canonical_serialize(&a).unwrap()).unwrap();
        let lb = String::from_utf8(canonical_serialize(&b).unwrap()).unwrap();
        let diff: Vec<_> = la.lines().zip(lb.lines()).filter(|(x, y)| x != y).collect();
        assert_eq!(diff, vec![("production_lot=LOT-7", "production_lot=LOT-8")]);
    }

    #[test]
    fn newline_rejected() {
        let mut m = metadata("ECU", "S-1");
        m.supplier_id = "a\nb".into();
        assert_eq!(
            canonical_serialize(&m),
            Err(AuditError::Newline { field: "supplier_id" })
        );
    }

    #[test]
    fn vin_and_empty_checks() {
        let mut m = metadata("ECU", "S-1");
        m.vin = "1HGCM82633A00435I".into();
        assert!(matches!(m.validate(), Err(AuditError::InvalidVin(_))));
        m.vin = "1HGCM82633A00435".into();
        assert!(matches!(m.validate(), Err(AuditError::InvalidVin(_))));
        let mut m = metadata("ECU", "");
        assert_eq!(m.validate(), Err(AuditError::Empty { field: "serial_number" }));
        m.serial_number = "x".into();
        m.module_id.clear();
        assert_eq!(m.validate(), Err(AuditError::Empty { field: "module_id" }));
    }

    #[test]
    fn identity_hash_is_deterministic_and_version_sensitive() {
        let m = metadata("ECU", "S-1");
        let a = identity_hash(&m, 42, EventType::Reflash).unwrap();
        assert_eq!(a, identity_hash(&m, 42, EventType::Reflash).unwrap());
        assert!(a.is_consistent());
        assert_eq!(a.payload_summary, "ECU@1.0.0");
        let mut m2 = m.clone();
        m2.software_version = "1.0.1".into();
        assert_ne!(
            a.payload_hash,
            identity_hash(&m2, 42, EventType::Reflash).unwrap().payload_hash
        );
    }

    #[test]
    fn summary_truncated_to_64_bytes() {
        let mut m = metadata("ECU", "S-1");
        m.software_version = "é".repeat(40);
        let r = identity_hash(&m, 0, EventType::StartupCheck).unwrap();
        assert!(r.payload_summary.len() <= PAYLOAD_SUMMARY_MAX);
        assert!(r.payload_summary.starts_with("ECU@"));
    }

    #[test]
    fn vehicle_key_sorts_and_tracks_version() {
        let a = derive_vehicle_key(["S2", "S1"], "1.0").unwrap();
        let b = derive_vehicle_key(["S1", "S2"], "1.0").unwrap();
        assert_eq!(a, b);
        let c = derive_vehicle_key(["S1", "S2"], "1.1").unwrap();
        assert_ne!(a.key, c.key);
        assert_eq!(
            derive_vehicle_key(Vec::<String>::new(), "1.0"),
            Err(AuditError::NoSerials)
        );
    }

    #[test]
    fn vehicle_key_hides_serials() {
        let k = derive_vehicle_key(["SERIAL-XYZ"], "1.0").unwrap();
        assert!(!k.key.to_hex().contains("SERIAL"));
    }

    #[test]
    fn digest_hex_is_strict_lowercase() {
        let d = Digest::of(b"abc");
        assert_eq!(Digest::from_hex(&d.to_hex()).unwrap(), d);
        assert!(Digest::from_hex(&d.to_hex().to_uppercase()).is_err());
        assert!(Digest::from_hex("00").is_err());
    }

    #[test]
    fn shared_prefix() {
        let a = Digest::ZERO;
        let mut b = Digest::ZERO;
        assert_eq!(a.shared_prefix_len(&b), 256);
        b.0[1] = 0b0010_0000;
        assert_eq!(a.shared_prefix_len(&b), 10);
    }

    #[test]
    fn event_type_round_trip() {
        for e in EventType::ALL {
            assert_eq!(e.as_str().parse::<EventType>().unwrap(), e);
            assert_eq!(EventType::from_code(e.code()), Some(e));
        }
    }
}
