//! Discrete-event simulation of vehicles whose modules record identity
//! hashes into an in-vehicle DHT, with attack and fault injection.
//!
//! Time is an integer tick in seconds. Every event carries its tick and
//! ties are broken by file order, so a scenario and seed fully determine a
//! run: the ledger, verdicts, alerts and ground-truth log are byte-identical
//! across runs.
//!
//! Each vehicle keeps, next to what its modules actually hold, the
//! configuration the OEM has sanctioned for each slot (factory state plus
//! reflashes to approved versions). Every capture files the digest of that
//! sanctioned configuration with the approved library, so the OEM checksum
//! flags exactly the checkpoints where the vehicle drifted from it.

mod groundtruth;
mod scenario;
mod vehicle;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};
use thiserror::Error;

pub use groundtruth::{Alert, AlertKind, GroundTruthEntry, GroundTruthLog};
pub use scenario::{
    ApprovedLibrarySpec, DeviceSpec, EventKind, EventSpec, LibraryEntrySpec, ModuleSpec, Scenario, ScenarioError,
    ScenarioEvent, ScenarioFile, VehicleConfig, VehicleSpec,
};
pub use vehicle::{ClearOutcome, ClusterState, ConsistencyOutcome, ModuleState, TamperFinding, Vehicle};

use crate::auditcore::AuditError;
use crate::dht::DhtError;
use crate::ledger::{oem_checksum, ApprovedLibrary, FullNode, Ledger, Verdict, VerdictStatus, VerifyError};
use crate::masternode::CaptureError;
use crate::parity::ParityError;
use vehicle::Journal;

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Audit(#[from] AuditError),
    #[error(transparent)]
    Dht(#[from] DhtError),
    #[error(transparent)]
    Capture(#[from] CaptureError),
    #[error(transparent)]
    Parity(#[from] ParityError),
    #[error(transparent)]
    Verify(#[from] VerifyError),
    #[error("unknown target: {0}")]
    UnknownTarget(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("ledger persistence: {0}")]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Source {
    Scripted(usize),
    Periodic,
    LinkRestored,
}

#[derive(Debug, Clone, Copy)]
struct Item {
    at: u64,
    vehicle: usize,
    source: Source,
}

/// A scenario in progress.
pub struct Simulation {
    scenario: Scenario,
    vehicles: Vec<Vehicle>,
    full_node: FullNode,
    library: ApprovedLibrary,
    gt: GroundTruthLog,
    alerts: Vec<Alert>,
    verdicts: Vec<Verdict>,
    timeline: Vec<Item>,
    cursor: usize,
    booted: bool,
}

/// Everything a finished run produced.
#[derive(Debug)]
pub struct ScenarioResult {
    pub name: String,
    pub seed: u64,
    pub duration: u64,
    pub ledger: Ledger,
    pub verdicts: Vec<Verdict>,
    pub alerts: Vec<Alert>,
    pub ground_truth: GroundTruthLog,
    pub library: ApprovedLibrary,
    pub vehicles: Vec<Vehicle>,
}

impl ScenarioResult {
    pub fn ledger_bytes(&self) -> Vec<u8> {
        self.ledger.to_file_bytes()
    }

    /// One verdict per line, in ledger order.
    pub fn verdict_text(&self) -> String {
        self.verdicts.iter().map(|v| v.to_line() + "\n").collect()
    }

    pub fn non_approved(&self) -> impl Iterator<Item = &Verdict> {
        self.verdicts.iter().filter(|v| v.status != VerdictStatus::Approved)
    }

    /// Vehicles whose tamper flag is still set at the end of the run.
    pub fn unresolved_tamper(&self) -> impl Iterator<Item = &Vehicle> {
        self.vehicles.iter().filter(|v| v.tamper_flag())
    }

    /// Non-approved verdicts plus vehicles left with a tamper flag.
    pub fn findings(&self) -> usize {
        self.non_approved().count() + self.unresolved_tamper().count()
    }

    pub fn vehicle(&self, vin: &str) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.vin() == vin)
    }
}

impl Simulation {
    pub fn new(scenario: Scenario) -> Result<Self, SimError> {
        Self::build(scenario, FullNode::new())
    }

    /// Like [`Simulation::new`], appending each sealed block to `ledger_path`.
    pub fn with_ledger_file(scenario: Scenario, ledger_path: impl AsRef<Path>) -> Result<Self, SimError> {
        Self::build(scenario, FullNode::persistent(ledger_path)?)
    }

    fn build(scenario: Scenario, full_node: FullNode) -> Result<Self, SimError> {
        let mut rng = ChaCha8Rng::seed_from_u64(scenario.seed);
        let mut vehicles = Vec::new();
        let mut library = ApprovedLibrary::new();
        let mut gt = GroundTruthLog::default();
        for config in &scenario.vehicles {
            let v = Vehicle::commission(config.clone(), &mut rng)?;
            library.register_variant(v.variant_code());
            gt.record(
                0,
                Some(v.vin()),
                "commissioned",
                Value::Null,
                Value::Null,
                json!({
                    "vehicle_key": v.identity().key,
                    "modules": v.modules().map(|m| json!({
                        "module_id": m.metadata.module_id,
                        "serial_number": m.metadata.serial_number,
                        "software_version": m.metadata.software_version,
                        "node": m.node_id.to_string(),
                    })).collect::<Vec<_>>(),
                }),
            );
            vehicles.push(v);
        }
        for (variant, digest) in &scenario.approved_digests {
            library.approve(variant, *digest, "listed in scenario");
        }

        let mut timeline = Vec::new();
        for (i, e) in scenario.events.iter().enumerate() {
            timeline.push(Item {
                at: e.sim_time,
                vehicle: e.vehicle,
                source: Source::Scripted(i),
            });
            if let EventKind::ConnectivityOutage { end, .. } = e.kind {
                timeline.push(Item {
                    at: end,
                    vehicle: e.vehicle,
                    source: Source::LinkRestored,
                });
            }
        }
        for (vi, v) in vehicles.iter().enumerate() {
            let interval = v.config().triggers.interval_s;
            let mut t = interval;
            while t <= scenario.duration {
                timeline.push(Item {
                    at: t,
                    vehicle: vi,
                    source: Source::Periodic,
                });
                t += interval;
            }
        }
        timeline.sort_by_key(|i| {
            let class = match i.source {
                Source::Scripted(_) => 0,
                Source::Periodic => 1,
                Source::LinkRestored => 2,
            };
            (i.at, class)
        });

        Ok(Self {
            scenario,
            vehicles,
            full_node,
            library,
            gt,
            alerts: Vec::new(),
            verdicts: Vec::new(),
            timeline,
            cursor: 0,
            booted: false,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    pub fn vehicles(&self) -> &[Vehicle] {
        &self.vehicles
    }

    pub fn vehicle(&self, vin: &str) -> Option<&Vehicle> {
        self.vehicles.iter().find(|v| v.vin() == vin)
    }

    pub fn full_node(&self) -> &FullNode {
        &self.full_node
    }

    pub fn library(&self) -> &ApprovedLibrary {
        &self.library
    }

    pub fn alerts(&self) -> &[Alert] {
        &self.alerts
    }

    pub fn verdicts(&self) -> &[Verdict] {
        &self.verdicts
    }

    pub fn ground_truth(&self) -> &GroundTruthLog {
        &self.gt
    }

    /// Time of the next tick, if any remain.
    pub fn next_tick(&self) -> Option<u64> {
        if !self.booted {
            return Some(0);
        }
        self.timeline.get(self.cursor).map(|i| i.at)
    }

    /// Runs every tick at or before `t`.
    pub fn run_until(&mut self, t: u64) -> Result<(), SimError> {
        while self.next_tick().is_some_and(|n| n <= t) {
            self.step_tick()?;
        }
        Ok(())
    }

    /// Processes one tick: its events in order, then delivery, sealing and
    /// verification. Returns `false` when nothing was left to run.
    pub fn step_tick(&mut self) -> Result<bool, SimError> {
        let Some(t) = self.next_tick() else {
            return Ok(false);
        };
        if !self.booted {
            self.booted = true;
            for vi in 0..self.vehicles.len() {
                let (v, mut j) = self.split(vi);
                v.maintain_clusters(0, &mut j)?;
                v.boot(0, &mut j)?;
                v.sync_clusters()?;
                v.check_invariants()?;
            }
        }
        while let Some(item) = self.timeline.get(self.cursor).copied().filter(|i| i.at == t) {
            self.cursor += 1;
            self.process(item)?;
        }
        self.end_tick(t)?;
        Ok(true)
    }

    fn split(&mut self, vi: usize) -> (&mut Vehicle, Journal<'_>) {
        (
            &mut self.vehicles[vi],
            Journal {
                gt: &mut self.gt,
                alerts: &mut self.alerts,
                library: &mut self.library,
            },
        )
    }

    fn process(&mut self, item: Item) -> Result<(), SimError> {
        let t = item.at;
        let event = match item.source {
            Source::Scripted(i) => Some(self.scenario.events[i].kind.clone()),
            _ => None,
        };
        let approved = std::mem::take(&mut self.scenario.approved_versions);
        let token = self.scenario.authorization_token.clone();
        let (v, mut j) = self.split(item.vehicle);
        let result = (|| {
            v.maintain_clusters(t, &mut j)?;
            match (&event, item.source) {
                (Some(kind), _) => v.apply(kind, t, &approved, token.as_deref(), &mut j)?,
                (None, Source::Periodic) => v.periodic(t, &mut j)?,
                _ => j.gt.record(
                    t,
                    Some(v.vin()),
                    "link_window_closed",
                    Value::Null,
                    Value::Null,
                    Value::Null,
                ),
            }
            // A freshly injected fault must stay in place until the next scrub.
            if !matches!(event, Some(EventKind::MemoryCorruption { .. })) {
                v.sync_clusters()?;
            }
            v.check_invariants()
        })();
        self.scenario.approved_versions = approved;
        result
    }

    fn end_tick(&mut self, t: u64) -> Result<(), SimError> {
        for vi in 0..self.vehicles.len() {
            let v = &mut self.vehicles[vi];
            let mut j = Journal {
                gt: &mut self.gt,
                alerts: &mut self.alerts,
                library: &mut self.library,
            };
            v.maintain_clusters(t, &mut j)?;
            v.sync_clusters()?;
            v.submit(t, &mut self.full_node, &mut j);
        }
        let outcome = self.full_node.seal()?;
        for (sub, e) in outcome.rejected {
            let vin = self
                .vehicles
                .iter()
                .find(|v| v.identity().key == sub.vehicle_key)
                .map_or_else(String::new, |v| v.vin().to_string());
            self.alerts.push(Alert {
                sim_time: t,
                vin,
                kind: AlertKind::SubmissionRejected,
                detail: format!("checkpoint {}: {e}", sub.checkpoint_seq),
            });
        }
        let Some(block) = outcome.block else {
            return Ok(());
        };
        self.gt.record(
            t,
            None,
            "block_sealed",
            Value::Null,
            Value::Null,
            json!({"index": block.index, "entries": block.entries.len(), "block_hash": block.block_hash}),
        );
        for sub in &block.entries {
            let v = self
                .vehicles
                .iter()
                .find(|v| v.identity().key == sub.vehicle_key)
                .ok_or_else(|| SimError::Invariant(format!("ledger entry for unknown vehicle {}", sub.vehicle_key)))?;
            let verdict = oem_checksum(
                sub,
                &self.library,
                v.variant_code(),
                v.tamper_flag(),
                &self.scenario.policy,
            )?;
            self.gt.record(
                t,
                Some(v.vin()),
                "verdict",
                Value::Null,
                Value::Null,
                json!({"checkpoint_seq": verdict.checkpoint_seq, "status": verdict.status, "reason": verdict.reason}),
            );
            self.verdicts.push(verdict);
        }
        Ok(())
    }

    /// Runs to the end of the scenario.
    pub fn finish(mut self) -> Result<ScenarioResult, SimError> {
        while self.step_tick()? {}
        Ok(ScenarioResult {
            name: self.scenario.name,
            seed: self.scenario.seed,
            duration: self.scenario.duration,
            ledger: self.full_node.ledger().clone(),
            verdicts: self.verdicts,
            alerts: self.alerts,
            ground_truth: self.gt,
            library: self.library,
            vehicles: self.vehicles,
        })
    }
}

pub fn run_scenario(scenario: Scenario) -> Result<ScenarioResult, SimError> {
    Simulation::new(scenario)?.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auditcore::{EventType, SharedCriticalData};
    use crate::dht::Discrepancy;
    use serde_json::json;
    use std::collections::BTreeSet;

    const VIN: &str = "1HGCM82633A004352";

    fn file(events: Value, duration: u64) -> Value {
        json!({
            "name": "unit",
            "seed": 3,
            "duration": duration,
            "authorization_token": "tok",
            "vehicle": {
                "vin": VIN,
                "variant_code": "V6",
                "odometer_km": 1000,
                "parity_clusters": [["ECU", "TCM", "BCM", "HeadUnit"]],
                "modules": [
                    {"module_id": "ECU", "serial_number": "E-1", "software_version": "1.0"},
                    {"module_id": "TCM", "serial_number": "T-1", "software_version": "1.0"},
                    {"module_id": "BCM", "serial_number": "B-1", "software_version": "1.0"},
                    {"module_id": "HeadUnit", "serial_number": "H-1", "software_version": "1.0"}
                ]
            },
            "events": events,
            "approved_library": {"approved_versions": {"ECU": ["1.1"]}}
        })
    }

    fn scenario(events: Value, duration: u64) -> Scenario {
        Scenario::from_json(&file(events, duration).to_string()).unwrap()
    }

    fn run(events: Value, duration: u64) -> ScenarioResult {
        run_scenario(scenario(events, duration)).unwrap()
    }

    fn statuses(r: &ScenarioResult) -> Vec<VerdictStatus> {
        r.verdicts.iter().map(|v| v.status).collect()
    }

    #[test]
    fn one_interval_one_approved_checkpoint() {
        let r = run(json!([]), 3600);
        assert_eq!(r.ledger.blocks().iter().map(|b| b.entries.len()).sum::<usize>(), 1);
        assert_eq!(statuses(&r), vec![VerdictStatus::Approved]);
        assert_eq!(r.findings(), 0);
    }

    #[test]
    fn approved_reflash_is_approved() {
        let r = run(
            json!([{"at": 10, "type": "UdsReflash", "module_id": "ECU", "new_version": "1.1"}]),
            0,
        );
        assert_eq!(statuses(&r), vec![VerdictStatus::Approved]);
        let v = &r.vehicles[0];
        assert_eq!(v.module("ECU").unwrap().metadata.software_version, "1.1");
        let rec = r.ground_truth.of_kind("reflash").next().unwrap();
        assert_eq!((rec.pre.as_str(), rec.post.as_str()), (Some("1.0"), Some("1.1")));
    }

    #[test]
    fn unapproved_reflash_is_not_approved_at_next_checkpoint() {
        let r = run(
            json!([
                {"at": 10, "type": "ObdPlugIn"},
                {"at": 20, "type": "UdsReflash", "module_id": "TCM", "new_version": "6.6.6"}
            ]),
            0,
        );
        assert_eq!(
            statuses(&r),
            vec![VerdictStatus::Approved, VerdictStatus::ServiceNeeded]
        );
    }

    #[test]
    fn same_seed_same_bytes() {
        let events = json!([
            {"at": 5, "type": "Drive", "km": 2500},
            {"at": 50, "type": "EepromTamper", "module_id": "BCM", "field": "software_version", "forged_value": "9"},
            {"at": 4000, "type": "Drive", "km": 3}
        ]);
        let a = run(events.clone(), 7200);
        let b = run(events, 7200);
        assert_eq!(a.ledger_bytes(), b.ledger_bytes());
        assert_eq!(a.verdict_text(), b.verdict_text());
        assert_eq!(a.alerts, b.alerts);
        assert_eq!(a.ground_truth.to_jsonl(), b.ground_truth.to_jsonl());
    }

    #[test]
    fn untampered_boot_is_consistent() {
        let r = run(
            json!([{"at": 1, "type": "Drive", "km": 1}, {"at": 2, "type": "Drive", "km": 1}]),
            0,
        );
        assert!(!r.vehicles[0].tamper_flag());
        assert_eq!(r.findings(), 0);
    }

    #[test]
    fn odometer_rollback_flags_minority() {
        let r = run(
            json!([
                {"at": 10, "type": "EepromTamper", "module_id": "ECU", "field": "odometer_km", "forged_value": "20000"},
                {"at": 20, "type": "Drive", "km": 5}
            ]),
            0,
        );
        let v = &r.vehicles[0];
        assert!(v.modules().all(|m| m.tamper_flag));
        let finding = v.tamper_finding().unwrap();
        assert_eq!(finding.set_at, 20);
        assert_eq!(
            finding.fields["odometer_km"],
            Discrepancy::Minority(BTreeSet::from(["ECU".to_string()]))
        );
    }

    #[test]
    fn junkyard_swap_flags_vin_on_swapped_module() {
        let r = run(
            json!([
                {"at": 10, "type": "ModuleSwap", "module_id": "BCM",
                 "replacement": {"module_id": "BCM", "serial_number": "JY-9", "software_version": "1.0",
                                 "vin": "JH4KA7561PC008269"}},
                {"at": 20, "type": "Drive", "km": 5},
                {"at": 30, "type": "ObdPlugIn"}
            ]),
            0,
        );
        let finding = r.vehicles[0].tamper_finding().unwrap();
        assert_eq!(finding.fields["vin"].modules(), BTreeSet::from(["BCM".to_string()]));
        assert!(r.non_approved().count() > 0);
        assert_eq!(r.ground_truth.of_kind("module_swap").count(), 1);
    }

    #[test]
    fn clear_needs_token_and_retamper_reflags() {
        let mut sim = Simulation::new(scenario(
            json!([
                {"at": 10, "type": "EepromTamper", "module_id": "TCM", "field": "airbag_status", "forged_value": "Deployed"},
                {"at": 20, "type": "Drive", "km": 5},
                {"at": 30, "type": "ClearTamperFlag", "token": "nope"},
                {"at": 40, "type": "EepromTamper", "module_id": "TCM", "field": "airbag_status", "forged_value": "Ok"},
                {"at": 50, "type": "ClearTamperFlag", "token": "tok"},
                {"at": 60, "type": "EepromTamper", "module_id": "ECU", "field": "service_event_count", "forged_value": "0"},
                {"at": 70, "type": "Drive", "km": 5}
            ]),
            0,
        ))
        .unwrap();
        sim.run_until(30).unwrap();
        assert!(sim.vehicles()[0].tamper_flag());
        assert_eq!(sim.alerts().last().unwrap().kind, AlertKind::ClearRefused);
        sim.run_until(50).unwrap();
        let v = &sim.vehicles()[0];
        assert!(!v.tamper_flag());
        // The clear is recorded as a service notice on every module.
        assert!(v.modules().all(|m| m.critical.service_event_count == 1));
        assert!(v
            .master()
            .mirror()
            .values()
            .any(|r| r.sim_time == 50 && r.event_type == EventType::ServiceNotice));
        sim.run_until(70).unwrap();
        let v = &sim.vehicles()[0];
        assert!(v.tamper_flag());
        assert_eq!(v.tamper_finding().unwrap().set_at, 70);
    }

    #[test]
    fn detection_completeness_over_fields_and_modules() {
        let forged = |field: &str| match field {
            "vin" => "JH4KA7561PC008269",
            "odometer_km" => "7",
            "airbag_status" => "FaultLatched",
            _ => "42",
        };
        for field in SharedCriticalData::FIELDS {
            for module in ["ECU", "TCM", "BCM", "HeadUnit"] {
                let r = run(
                    json!([
                        {"at": 10, "type": "EepromTamper", "module_id": module, "field": field, "forged_value": forged(field)},
                        {"at": 20, "type": "Drive", "km": 1}
                    ]),
                    0,
                );
                let finding = r.vehicles[0]
                    .tamper_finding()
                    .unwrap_or_else(|| panic!("{field} on {module}"));
                assert_eq!(finding.set_at, 20);
                assert_eq!(
                    finding.fields[field],
                    Discrepancy::Minority(BTreeSet::from([module.to_string()])),
                    "{field} on {module}"
                );
            }
        }
    }

    #[test]
    fn last_known_hash_survives_node_failure() {
        let mut sim = Simulation::new(scenario(
            json!([
                {"at": 10, "type": "ObdPlugIn"},
                {"at": 20, "type": "ConfigChange"},
                {"at": 30, "type": "NodeFailure", "module_id": "ECU"},
                {"at": 40, "type": "NodeFailure", "module_id": "TCM"}
            ]),
            0,
        ))
        .unwrap();
        sim.run_until(30).unwrap();
        let v = &sim.vehicles()[0];
        for module in ["ECU", "TCM", "BCM", "HeadUnit"] {
            let newest = v
                .master()
                .mirror()
                .values()
                .filter(|r| r.module_id == module)
                .max_by_key(|r| (r.sim_time, r.record_key))
                .unwrap();
            assert_eq!(newest.sim_time, 20);
            assert_eq!(v.last_known_hash(module).as_ref(), Some(newest), "{module}");
        }
    }

    #[test]
    fn memory_corruption_is_located_and_repaired() {
        let events = json!([
            {"at": 10, "type": "ObdPlugIn"},
            {"at": 20, "type": "ConfigChange"},
            {"at": 30, "type": "MemoryCorruption", "cluster": 0, "device": 2, "byte_offset": 5, "mask": 255},
            {"at": 40, "type": "ObdPlugIn"}
        ]);
        let mut sim = Simulation::new(scenario(events.clone(), 0)).unwrap();
        sim.run_until(20).unwrap();
        let before = sim.vehicles()[0].clusters()[0].cluster.data(2).unwrap().to_vec();
        sim.run_until(30).unwrap();
        let v = &sim.vehicles()[0];
        assert_eq!(v.clusters()[0].cluster.data(2).unwrap(), before.as_slice());
        sim.run_until(40).unwrap();
        let repair = sim
            .alerts()
            .iter()
            .find(|a| a.kind == AlertKind::ParityRepaired)
            .unwrap();
        assert!(repair.detail.contains("device 2 (BCM)"));
        let gt = sim.ground_truth().of_kind("memory_corruption").next().unwrap();
        assert_eq!(gt.post.as_u64().unwrap(), gt.pre.as_u64().unwrap() ^ 255);

        let clean: Vec<Value> = events
            .as_array()
            .unwrap()
            .iter()
            .filter(|e| e["type"] != "MemoryCorruption")
            .cloned()
            .collect();
        let clean = run(Value::Array(clean), 0);
        assert_eq!(sim.finish().unwrap().ledger_bytes(), clean.ledger_bytes());
    }

    #[test]
    fn out_of_range_injection_is_rejected() {
        let r = run(
            json!([{"at": 5, "type": "MemoryCorruption", "cluster": 0, "device": "parity", "byte_offset": 100000}]),
            0,
        );
        assert_eq!(r.alerts[0].kind, AlertKind::InjectionRejected);
        assert_eq!(r.ground_truth.of_kind("memory_corruption").count(), 0);
    }

    #[test]
    fn outage_delivers_every_checkpoint_once_after_it_ends() {
        let r = run(
            json!([
                {"at": 10, "type": "ConnectivityOutage", "start": 10, "end": 500},
                {"at": 100, "type": "ObdPlugIn"},
                {"at": 200, "type": "ConfigChange"},
                {"at": 300, "type": "ServiceNotice"}
            ]),
            0,
        );
        assert_eq!(r.ledger.len(), 1);
        let block = &r.ledger.blocks()[0];
        assert_eq!(
            block.entries.iter().map(|e| e.checkpoint_seq).collect::<Vec<_>>(),
            vec![1, 2, 3]
        );
        let history = r.ledger.query_history(&r.vehicles[0].identity().key);
        assert!(history.iter().all(|h| h.block_index == 0));
    }

    #[test]
    fn storage_pressure_forces_checkpoints_without_loss() {
        let mut f = file(json!([]), 36000);
        f["vehicle"]["store_limit_bytes"] = json!(256);
        f["vehicle"]["triggers"] = json!({"interval_s": 60, "mileage_stride_km": 1000});
        let r = run_scenario(Scenario::from_json(&f.to_string()).unwrap()).unwrap();
        assert!(r.alerts.iter().any(|a| a.kind == AlertKind::StoragePressureCheckpoint));
        assert!(!r.alerts.iter().any(|a| a.kind == AlertKind::RecordLost));
        for n in r.vehicles[0].network().nodes() {
            assert!(n.used_bytes() <= 256);
        }
        assert_eq!(r.findings(), 0);
    }

    #[test]
    fn invalid_config_rejected_before_running() {
        let mut f = file(json!([]), 0);
        f["vehicle"]["parity_clusters"] = json!([["ECU", "XYZ", "BCM"]]);
        assert!(matches!(
            Scenario::from_json(&f.to_string()),
            Err(ScenarioError::Invalid { .. })
        ));
    }
}
