use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::Submission;
use crate::auditcore::Digest;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VerifyError {
    /// The library has no entry for the variant: an OEM data gap, not a
    /// vehicle fault.
    #[error("variant `{0}` is not in the approved library")]
    UnknownVariant(String),
    #[error("malformed library line {line}")]
    MalformedLibrary { line: usize },
    #[error("malformed verdict line {line}")]
    MalformedVerdict { line: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Provenance {
    pub variant: String,
    pub digest: Digest,
    pub note: String,
}

/// Acceptable meta-hash digests per variant code. Append-only.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct ApprovedLibrary {
    approved: BTreeMap<String, BTreeSet<Digest>>,
    provenance: Vec<Provenance>,
}

impl ApprovedLibrary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register_variant(&mut self, variant: &str) {
        self.approved.entry(variant.to_string()).or_default();
    }

    /// Returns `false` if the digest was already approved for the variant.
    pub fn approve(&mut self, variant: &str, digest: Digest, note: impl Into<String>) -> bool {
        let added = self.approved.entry(variant.to_string()).or_default().insert(digest);
        if added {
            self.provenance.push(Provenance {
                variant: variant.to_string(),
                digest,
                note: note.into(),
            });
        }
        added
    }

    pub fn is_known(&self, variant: &str) -> bool {
        self.approved.contains_key(variant)
    }

    pub fn contains(&self, variant: &str, digest: &Digest) -> bool {
        self.approved.get(variant).is_some_and(|s| s.contains(digest))
    }

    pub fn variants(&self) -> impl Iterator<Item = &str> {
        self.approved.keys().map(String::as_str)
    }

    pub fn provenance(&self) -> &[Provenance] {
        &self.provenance
    }

    /// `variant_code<TAB>meta_digest_hex` per line, sorted.
    pub fn to_file(&self) -> String {
        let mut out = String::new();
        for (variant, digests) in &self.approved {
            for d in digests {
                out.push_str(&format!("{variant}\t{d}\n"));
            }
        }
        out
    }

    pub fn from_file(text: &str) -> Result<Self, VerifyError> {
        let mut lib = Self::new();
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || VerifyError::MalformedLibrary { line: i + 1 };
            let (variant, digest) = line.split_once('\t').ok_or_else(bad)?;
            if variant.is_empty() {
                return Err(bad());
            }
            lib.approve(
                variant,
                digest.parse().map_err(|_| bad())?,
                format!("library file line {}", i + 1),
            );
        }
        Ok(lib)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum VerdictStatus {
    Approved,
    ServiceNeeded,
    EmergencyOta,
    Immobilize,
}

impl VerdictStatus {
    pub fn as_str(&self) -> &'static str {
        match self {
            VerdictStatus::Approved => "Approved",
            VerdictStatus::ServiceNeeded => "ServiceNeeded",
            VerdictStatus::EmergencyOta => "EmergencyOta",
            VerdictStatus::Immobilize => "Immobilize",
        }
    }
}

impl fmt::Display for VerdictStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for VerdictStatus {
    type Err = ();
    fn from_str(s: &str) -> Result<Self, ()> {
        match s {
            "Approved" => Ok(VerdictStatus::Approved),
            "ServiceNeeded" => Ok(VerdictStatus::ServiceNeeded),
            "EmergencyOta" => Ok(VerdictStatus::EmergencyOta),
            "Immobilize" => Ok(VerdictStatus::Immobilize),
            _ => Err(()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Verdict {
    pub status: VerdictStatus,
    pub reason: String,
    pub vehicle_key: Digest,
    pub checkpoint_seq: u64,
}

impl Verdict {
    /// `vehicle_key_hex<TAB>seq<TAB>status<TAB>reason`
    pub fn to_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}",
            self.vehicle_key, self.checkpoint_seq, self.status, self.reason
        )
    }

    pub fn parse_lines(text: &str) -> Result<Vec<Verdict>, VerifyError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| {
                let bad = || VerifyError::MalformedVerdict { line: i + 1 };
                let mut cols = l.splitn(4, '\t');
                let key = cols.next().ok_or_else(bad)?;
                let seq = cols.next().ok_or_else(bad)?;
                let status = cols.next().ok_or_else(bad)?;
                let reason = cols.next().ok_or_else(bad)?;
                Ok(Verdict {
                    vehicle_key: key.parse().map_err(|_| bad())?,
                    checkpoint_seq: seq.parse().map_err(|_| bad())?,
                    status: status.parse().map_err(|_| bad())?,
                    reason: reason.to_string(),
                })
            })
            .collect()
    }
}

/// How a failed checksum escalates, keyed by variant criticality and the
/// vehicle's tamper-flag state.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResponsePolicy {
    pub critical_variants: BTreeSet<String>,
    pub on_mismatch: VerdictStatus,
    pub on_critical_mismatch: VerdictStatus,
    pub on_tamper: VerdictStatus,
}

impl Default for ResponsePolicy {
    fn default() -> Self {
        Self {
            critical_variants: BTreeSet::new(),
            on_mismatch: VerdictStatus::ServiceNeeded,
            on_critical_mismatch: VerdictStatus::EmergencyOta,
            on_tamper: VerdictStatus::Immobilize,
        }
    }
}

/// The OEM-side checksum of one submission.
pub fn oem_checksum(
    submission: &Submission,
    library: &ApprovedLibrary,
    variant: &str,
    tamper_flag: bool,
    policy: &ResponsePolicy,
) -> Result<Verdict, VerifyError> {
    if !library.is_known(variant) {
        return Err(VerifyError::UnknownVariant(variant.to_string()));
    }
    let (status, reason) = if library.contains(variant, &submission.meta_digest) {
        (
            VerdictStatus::Approved,
            format!("meta-hash approved for variant {variant}"),
        )
    } else if tamper_flag {
        (
            policy.on_tamper,
            format!("meta-hash not approved for variant {variant}; tamper flag set"),
        )
    } else if policy.critical_variants.contains(variant) {
        (
            policy.on_critical_mismatch,
            format!("meta-hash not approved for critical variant {variant}"),
        )
    } else {
        (
            policy.on_mismatch,
            format!("meta-hash not approved for variant {variant}"),
        )
    };
    Ok(Verdict {
        status,
        reason,
        vehicle_key: submission.vehicle_key,
        checkpoint_seq: submission.checkpoint_seq,
    })
}
