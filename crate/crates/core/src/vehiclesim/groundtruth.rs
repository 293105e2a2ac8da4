use serde::Serialize;
use serde_json::Value;

/// One ground-truth line.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GroundTruthEntry {
    pub seq: u64,
    pub sim_time: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub vin: Option<String>,
    pub kind: String,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub pre: Value,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub post: Value,
    #[serde(skip_serializing_if = "Value::is_null")]
    pub detail: Value,
}

/// Append-only record of everything the simulator injected or changed.
/// Only the simulator core writes to it.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct GroundTruthLog {
    entries: Vec<GroundTruthEntry>,
}

impl GroundTruthLog {
    pub(crate) fn record(
        &mut self,
        sim_time: u64,
        vin: Option<&str>,
        kind: &str,
        pre: Value,
        post: Value,
        detail: Value,
    ) {
        let seq = self.entries.len() as u64;
        self.entries.push(GroundTruthEntry {
            seq,
            sim_time,
            vin: vin.map(str::to_string),
            kind: kind.to_string(),
            pre,
            post,
            detail,
        });
    }

    pub fn entries(&self) -> &[GroundTruthEntry] {
        &self.entries
    }

    pub fn of_kind<'a>(&'a self, kind: &'a str) -> impl Iterator<Item = &'a GroundTruthEntry> + 'a {
        self.entries.iter().filter(move |e| e.kind == kind)
    }

    /// One JSON object per line.
    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&serde_json::to_string(e).expect("ground truth serializes"));
            out.push('\n');
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize)]
pub enum AlertKind {
    TamperFlagSet,
    TamperFlagCleared,
    ClearRefused,
    ParityRepaired,
    ParityUncorrectable,
    FallbackPlacement,
    StoragePressureCheckpoint,
    RecordLost,
    SubmissionRejected,
    InjectionRejected,
}

/// Something the vehicle or the OEM side noticed at run time.
#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Alert {
    pub sim_time: u64,
    pub vin: String,
    pub kind: AlertKind,
    pub detail: String,
}
