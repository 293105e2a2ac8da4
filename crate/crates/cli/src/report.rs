use std::collections::BTreeMap;

use autobox::ledger::VerdictStatus;
use autobox::vehiclesim::{Alert, ScenarioResult};
use autobox::Digest;
use serde::Serialize;

#[derive(Debug, Serialize)]
pub struct VehicleReport {
    pub vin: String,
    pub variant_code: String,
    pub vehicle_key: Digest,
    pub checkpoints: usize,
    pub verdicts: BTreeMap<VerdictStatus, usize>,
    pub tamper_flag: bool,
    /// Flagged field -> modules named by the majority vote.
    pub tamper_fields: BTreeMap<String, Vec<String>>,
}

/// Machine-readable summary of one run. Holds no wall-clock data, so two
/// runs of the same inputs serialize identically.
#[derive(Debug, Serialize)]
pub struct RunReport {
    pub scenario: String,
    pub seed: u64,
    pub duration: u64,
    pub checkpoints: usize,
    pub blocks: usize,
    pub head_hash: Digest,
    pub vehicles: Vec<VehicleReport>,
    pub alerts: Vec<Alert>,
    pub findings: usize,
    pub expect_findings: bool,
    pub exit_status: u8,
}

impl RunReport {
    pub fn new(result: &ScenarioResult, expect_findings: bool) -> Self {
        let vehicles = result
            .vehicles
            .iter()
            .map(|v| {
                let key = v.identity().key;
                let mut verdicts = BTreeMap::new();
                for verdict in result.verdicts.iter().filter(|x| x.vehicle_key == key) {
                    *verdicts.entry(verdict.status).or_insert(0) += 1;
                }
                let tamper_fields = v
                    .tamper_finding()
                    .map(|f| {
                        f.fields
                            .iter()
                            .map(|(field, d)| (field.clone(), d.modules().into_iter().collect()))
                            .collect()
                    })
                    .unwrap_or_default();
                VehicleReport {
                    vin: v.vin().to_string(),
                    variant_code: v.variant_code().to_string(),
                    vehicle_key: key,
                    checkpoints: result.ledger.query_history(&key).len(),
                    verdicts,
                    tamper_flag: v.tamper_flag(),
                    tamper_fields,
                }
            })
            .collect();
        let findings = result.findings();
        let clean = findings == 0;
        Self {
            scenario: result.name.clone(),
            seed: result.seed,
            duration: result.duration,
            checkpoints: result.ledger.blocks().iter().map(|b| b.entries.len()).sum(),
            blocks: result.ledger.len(),
            head_hash: result.ledger.head_hash(),
            vehicles,
            alerts: result.alerts.clone(),
            findings,
            expect_findings,
            exit_status: if clean != expect_findings { 0 } else { 1 },
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    /// Human summary; `elapsed_ms` appears only here.
    pub fn summary(&self, elapsed_ms: u128) -> String {
        let mut out = format!(
            "scenario {} (seed {}): {} checkpoints in {} blocks, {elapsed_ms} ms\n",
            self.scenario, self.seed, self.checkpoints, self.blocks
        );
        for v in &self.vehicles {
            let verdicts: Vec<String> = v.verdicts.iter().map(|(s, n)| format!("{s} {n}")).collect();
            let verdicts = if verdicts.is_empty() {
                "no verdicts".to_string()
            } else {
                verdicts.join(", ")
            };
            out.push_str(&format!("  {} [{}] {}\n", v.vin, v.variant_code, verdicts));
            out.push_str(&format!("    vehicle key {}\n", v.vehicle_key));
            if v.tamper_flag {
                for (field, modules) in &v.tamper_fields {
                    out.push_str(&format!(
                        "    TAMPER FLAG: {field} disagrees on {}\n",
                        modules.join(", ")
                    ));
                }
            }
        }
        let mut by_kind: BTreeMap<String, usize> = BTreeMap::new();
        for a in &self.alerts {
            *by_kind.entry(format!("{:?}", a.kind)).or_insert(0) += 1;
        }
        if !by_kind.is_empty() {
            let kinds: Vec<String> = by_kind.iter().map(|(k, n)| format!("{k} {n}")).collect();
            out.push_str(&format!("alerts: {}\n", kinds.join(", ")));
        }
        out.push_str(&format!("findings: {}\n", self.findings));
        out
    }
}
