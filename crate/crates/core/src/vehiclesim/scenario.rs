//! Scenario files and their validation.
//!
//! A scenario is a JSON object:
//!
//! ```json
//! {
//!   "name": "baseline",
//!   "seed": 7,
//!   "duration": 7200,
//!   "authorization_token": "dealer-tool-secret",
//!   "vehicle": { "vin": "...", "variant_code": "...", "modules": [ ... ] },
//!   "events": [ { "at": 100, "type": "Drive", "km": 120 } ],
//!   "approved_library": { "approved_versions": { "ECU": ["1.1.0"] } },
//!   "policy": { "critical_variants": [] }
//! }
//! ```
//!
//! `fleet` (a list of vehicles) may replace `vehicle`; events then name
//! their target with `"vehicle": "<VIN>"`. The full schema is in the README.

use std::collections::{BTreeMap, BTreeSet};

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::auditcore::{is_valid_vin, AuditError, Digest, ModuleMetadata, SharedCriticalData};
use crate::dht::DEFAULT_STORE_LIMIT;
use crate::ledger::ResponsePolicy;
use crate::masternode::TriggerConfig;
use crate::parity::DeviceRef;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ScenarioError {
    #[error("line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("{path}: {message}")]
    Invalid { path: String, message: String },
}

fn invalid(path: impl Into<String>, message: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid {
        path: path.into(),
        message: message.into(),
    }
}

/// A module as written in a scenario file. Omitted descriptive fields get
/// fixed defaults; `vin` and `variant_code` default to the vehicle's.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModuleSpec {
    pub module_id: String,
    pub serial_number: String,
    pub software_version: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub design_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manufacture_date: Option<NaiveDate>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub manufacture_location: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub supplier_id: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub production_lot: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub variant_code: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vin: Option<String>,
}

impl ModuleSpec {
    pub fn to_metadata(&self, vin: &str, variant_code: &str) -> ModuleMetadata {
        ModuleMetadata {
            module_id: self.module_id.clone(),
            design_date: self
                .design_date
                .unwrap_or(NaiveDate::from_ymd_opt(2020, 1, 15).unwrap()),
            manufacture_date: self
                .manufacture_date
                .unwrap_or(NaiveDate::from_ymd_opt(2021, 6, 1).unwrap()),
            manufacture_location: self.manufacture_location.clone().unwrap_or_else(|| "Plant-1".into()),
            supplier_id: self.supplier_id.clone().unwrap_or_else(|| "SUP-001".into()),
            production_lot: self.production_lot.clone().unwrap_or_else(|| "LOT-001".into()),
            software_version: self.software_version.clone(),
            variant_code: self.variant_code.clone().unwrap_or_else(|| variant_code.to_string()),
            serial_number: self.serial_number.clone(),
            vin: self.vin.clone().unwrap_or_else(|| vin.to_string()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct VehicleSpec {
    pub vin: String,
    pub variant_code: String,
    pub modules: Vec<ModuleSpec>,
    #[serde(default)]
    pub odometer_km: u64,
    #[serde(default)]
    pub store_limit_bytes: Option<usize>,
    #[serde(default)]
    pub master_module: Option<String>,
    #[serde(default)]
    pub triggers: TriggerConfig,
    #[serde(default)]
    pub parity_clusters: Vec<Vec<String>>,
}

/// Which device of a parity cluster: a data index or `"parity"`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum DeviceSpec {
    Index(usize),
    Named(String),
}

impl DeviceSpec {
    pub fn resolve(&self) -> Option<DeviceRef> {
        match self {
            DeviceSpec::Index(i) => Some(DeviceRef::Data(*i)),
            DeviceSpec::Named(s) if s == "parity" => Some(DeviceRef::Parity),
            DeviceSpec::Named(_) => None,
        }
    }
}

fn default_mask() -> u8 {
    0x01
}

/// What happens at a scenario event.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type")]
pub enum EventKind {
    /// An ignition cycle: startup check, then the odometer advances.
    Drive {
        km: u64,
    },
    ObdPlugIn,
    ConfigChange,
    ServiceNotice,
    /// Registered reprogramming through the diagnostic interface.
    UdsReflash {
        module_id: String,
        new_version: String,
    },
    /// Direct memory edit with no software-change event registered.
    EepromTamper {
        module_id: String,
        field: String,
        forged_value: String,
    },
    /// Physical replacement of a module.
    ModuleSwap {
        module_id: String,
        replacement: ModuleSpec,
        #[serde(default)]
        odometer_km: Option<u64>,
    },
    NodeFailure {
        module_id: String,
    },
    NodeRecovery {
        module_id: String,
    },
    MemoryCorruption {
        cluster: usize,
        device: DeviceSpec,
        byte_offset: usize,
        #[serde(default = "default_mask")]
        mask: u8,
    },
    /// Telematics link down for `start <= t < end`.
    ConnectivityOutage {
        start: u64,
        end: u64,
    },
    /// Authorized service tool clearing the tamper flag.
    ClearTamperFlag {
        token: String,
    },
}

impl EventKind {
    pub fn name(&self) -> &'static str {
        match self {
            EventKind::Drive { .. } => "Drive",
            EventKind::ObdPlugIn => "ObdPlugIn",
            EventKind::ConfigChange => "ConfigChange",
            EventKind::ServiceNotice => "ServiceNotice",
            EventKind::UdsReflash { .. } => "UdsReflash",
            EventKind::EepromTamper { .. } => "EepromTamper",
            EventKind::ModuleSwap { .. } => "ModuleSwap",
            EventKind::NodeFailure { .. } => "NodeFailure",
            EventKind::NodeRecovery { .. } => "NodeRecovery",
            EventKind::MemoryCorruption { .. } => "MemoryCorruption",
            EventKind::ConnectivityOutage { .. } => "ConnectivityOutage",
            EventKind::ClearTamperFlag { .. } => "ClearTamperFlag",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EventSpec {
    pub at: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vehicle: Option<String>,
    #[serde(flatten)]
    pub kind: EventKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LibraryEntrySpec {
    pub variant: String,
    pub digest: Digest,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ApprovedLibrarySpec {
    /// Software versions the OEM sanctions for each module id.
    pub approved_versions: BTreeMap<String, BTreeSet<String>>,
    /// Additional meta-hash digests approved up front.
    pub digests: Vec<LibraryEntrySpec>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    #[serde(default)]
    pub name: Option<String>,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub duration: Option<u64>,
    #[serde(default)]
    pub authorization_token: Option<String>,
    #[serde(default)]
    pub vehicle: Option<VehicleSpec>,
    #[serde(default)]
    pub fleet: Vec<VehicleSpec>,
    #[serde(default)]
    pub events: Vec<EventSpec>,
    #[serde(default)]
    pub approved_library: ApprovedLibrarySpec,
    #[serde(default)]
    pub policy: ResponsePolicy,
}

/// A validated vehicle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct VehicleConfig {
    pub vin: String,
    pub variant_code: String,
    pub modules: Vec<ModuleMetadata>,
    pub initial_critical: SharedCriticalData,
    pub dht_store_limit_bytes: usize,
    pub master_module: String,
    pub triggers: TriggerConfig,
    pub parity_clusters: Vec<Vec<String>>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ScenarioEvent {
    pub sim_time: u64,
    pub vehicle: usize,
    pub kind: EventKind,
}

/// A validated scenario. Events are in `(sim_time, file order)` order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Scenario {
    pub name: String,
    pub seed: u64,
    pub duration: u64,
    pub authorization_token: Option<String>,
    pub vehicles: Vec<VehicleConfig>,
    pub events: Vec<ScenarioEvent>,
    pub approved_versions: BTreeMap<String, BTreeSet<String>>,
    pub approved_digests: Vec<(String, Digest)>,
    pub policy: ResponsePolicy,
}

impl Scenario {
    pub fn from_json(text: &str) -> Result<Self, ScenarioError> {
        let file: ScenarioFile = serde_json::from_str(text).map_err(|e| {
            let message = e.to_string();
            let message = match message.rfind(" at line ") {
                Some(i) => message[..i].to_string(),
                None => message,
            };
            ScenarioError::Parse {
                line: e.line(),
                column: e.column(),
                message,
            }
        })?;
        Self::from_file(file)
    }

    pub fn from_file(file: ScenarioFile) -> Result<Self, ScenarioError> {
        let specs: Vec<(String, VehicleSpec)> = match (file.vehicle, file.fleet.is_empty()) {
            (Some(v), true) => vec![("vehicle".to_string(), v)],
            (None, false) => file
                .fleet
                .into_iter()
                .enumerate()
                .map(|(i, v)| (format!("fleet[{i}]"), v))
                .collect(),
            (Some(_), false) => return Err(invalid("fleet", "give either `vehicle` or `fleet`, not both")),
            (None, true) => return Err(invalid("vehicle", "scenario has no vehicle")),
        };

        let mut vehicles = Vec::new();
        let mut serials = BTreeSet::new();
        for (path, spec) in &specs {
            let v = validate_vehicle(path, spec)?;
            if vehicles.iter().any(|o: &VehicleConfig| o.vin == v.vin) {
                return Err(invalid(format!("{path}.vin"), "duplicate VIN in fleet"));
            }
            for m in &v.modules {
                if !serials.insert(m.serial_number.clone()) {
                    return Err(invalid(
                        format!("{path}.modules"),
                        format!("serial number `{}` used twice", m.serial_number),
                    ));
                }
            }
            vehicles.push(v);
        }

        let mut events = Vec::new();
        for (i, e) in file.events.into_iter().enumerate() {
            let path = format!("events[{i}]");
            let vehicle = match &e.vehicle {
                Some(vin) => vehicles
                    .iter()
                    .position(|v| &v.vin == vin)
                    .ok_or_else(|| invalid(format!("{path}.vehicle"), format!("unknown vehicle `{vin}`")))?,
                None if vehicles.len() == 1 => 0,
                None => return Err(invalid(format!("{path}.vehicle"), "fleet events must name a vehicle")),
            };
            validate_event(&path, &e.kind, &vehicles[vehicle])?;
            events.push(ScenarioEvent {
                sim_time: e.at,
                vehicle,
                kind: e.kind,
            });
        }
        events.sort_by_key(|e| e.sim_time);

        let last_event = events
            .iter()
            .map(|e| match e.kind {
                EventKind::ConnectivityOutage { end, .. } => end.max(e.sim_time),
                _ => e.sim_time,
            })
            .max()
            .unwrap_or(0);
        let duration = file.duration.unwrap_or(last_event);

        for (i, d) in file.approved_library.digests.iter().enumerate() {
            if d.variant.is_empty() || d.variant.contains(['\t', '\n']) {
                return Err(invalid(
                    format!("approved_library.digests[{i}].variant"),
                    "bad variant code",
                ));
            }
        }

        Ok(Scenario {
            name: file.name.unwrap_or_else(|| "scenario".to_string()),
            seed: file.seed,
            duration,
            authorization_token: file.authorization_token,
            vehicles,
            events,
            approved_versions: file.approved_library.approved_versions,
            approved_digests: file
                .approved_library
                .digests
                .into_iter()
                .map(|d| (d.variant, d.digest))
                .collect(),
            policy: file.policy,
        })
    }
}

fn audit_msg(e: AuditError) -> String {
    e.to_string()
}

fn validate_vehicle(path: &str, spec: &VehicleSpec) -> Result<VehicleConfig, ScenarioError> {
    if !is_valid_vin(&spec.vin) {
        return Err(invalid(format!("{path}.vin"), format!("invalid VIN `{}`", spec.vin)));
    }
    if spec.variant_code.is_empty() || spec.variant_code.contains(['\t', '\n']) {
        return Err(invalid(format!("{path}.variant_code"), "bad variant code"));
    }
    if spec.modules.len() < 2 {
        return Err(invalid(format!("{path}.modules"), "a vehicle needs at least 2 modules"));
    }
    let mut modules = Vec::new();
    let mut ids = BTreeSet::new();
    for (i, m) in spec.modules.iter().enumerate() {
        let meta = m.to_metadata(&spec.vin, &spec.variant_code);
        meta.validate()
            .map_err(|e| invalid(format!("{path}.modules[{i}]"), audit_msg(e)))?;
        if !ids.insert(meta.module_id.clone()) {
            return Err(invalid(
                format!("{path}.modules[{i}].module_id"),
                format!("duplicate module id `{}`", meta.module_id),
            ));
        }
        modules.push(meta);
    }

    let master_module = match &spec.master_module {
        Some(m) if ids.contains(m) => m.clone(),
        Some(m) => {
            return Err(invalid(
                format!("{path}.master_module"),
                format!("unknown module `{m}`"),
            ))
        }
        None if ids.contains("HeadUnit") => "HeadUnit".to_string(),
        None => modules.last().unwrap().module_id.clone(),
    };

    let mut clustered = BTreeSet::new();
    for (c, members) in spec.parity_clusters.iter().enumerate() {
        let cpath = format!("{path}.parity_clusters[{c}]");
        if members.len() < 3 {
            return Err(invalid(
                cpath,
                "a cluster needs at least 2 data members and 1 parity member",
            ));
        }
        for m in members {
            if !ids.contains(m) {
                return Err(invalid(&cpath, format!("unknown module `{m}`")));
            }
            if !clustered.insert(m.clone()) {
                return Err(invalid(&cpath, format!("module `{m}` is in more than one cluster")));
            }
        }
    }

    let triggers = spec.triggers;
    if triggers.interval_s == 0 || triggers.mileage_stride_km == 0 {
        return Err(invalid(
            format!("{path}.triggers"),
            "interval and stride must be positive",
        ));
    }
    let limit = spec.store_limit_bytes.unwrap_or(DEFAULT_STORE_LIMIT);
    if limit < 256 {
        return Err(invalid(
            format!("{path}.store_limit_bytes"),
            "store limit must be at least 256 bytes",
        ));
    }

    Ok(VehicleConfig {
        vin: spec.vin.clone(),
        variant_code: spec.variant_code.clone(),
        initial_critical: SharedCriticalData::new(&spec.vin, spec.odometer_km),
        modules,
        dht_store_limit_bytes: limit,
        master_module,
        triggers,
        parity_clusters: spec.parity_clusters.clone(),
    })
}

fn validate_event(path: &str, kind: &EventKind, vehicle: &VehicleConfig) -> Result<(), ScenarioError> {
    let module = |id: &str| -> Result<&ModuleMetadata, ScenarioError> {
        vehicle
            .modules
            .iter()
            .find(|m| m.module_id == id)
            .ok_or_else(|| invalid(format!("{path}.module_id"), format!("unknown module `{id}`")))
    };
    match kind {
        EventKind::UdsReflash { module_id, new_version } => {
            let mut m = module(module_id)?.clone();
            m.software_version = new_version.clone();
            m.validate()
                .map_err(|e| invalid(format!("{path}.new_version"), audit_msg(e)))?;
        }
        EventKind::EepromTamper {
            module_id,
            field,
            forged_value,
        } => {
            let mut meta = module(module_id)?.clone();
            let mut critical = vehicle.initial_critical.clone();
            let ok = if SharedCriticalData::FIELDS.contains(&field.as_str()) {
                if field == "vin" {
                    meta.vin = forged_value.clone();
                }
                critical.set_field(field, forged_value)
            } else if field == "module_id" {
                false
            } else {
                meta.set_field(field, forged_value)
            };
            if !ok {
                return Err(invalid(
                    format!("{path}.field"),
                    format!("cannot set `{field}` to `{forged_value}`"),
                ));
            }
            meta.validate()
                .map_err(|e| invalid(format!("{path}.forged_value"), audit_msg(e)))?;
        }
        EventKind::ModuleSwap {
            module_id, replacement, ..
        } => {
            module(module_id)?;
            if &replacement.module_id != module_id {
                return Err(invalid(
                    format!("{path}.replacement.module_id"),
                    "replacement must fill the same module slot",
                ));
            }
            replacement
                .to_metadata(&vehicle.vin, &vehicle.variant_code)
                .validate()
                .map_err(|e| invalid(format!("{path}.replacement"), audit_msg(e)))?;
        }
        EventKind::NodeFailure { module_id } | EventKind::NodeRecovery { module_id } => {
            module(module_id)?;
        }
        EventKind::MemoryCorruption {
            cluster, device, mask, ..
        } => {
            let members = vehicle
                .parity_clusters
                .get(*cluster)
                .ok_or_else(|| invalid(format!("{path}.cluster"), format!("no cluster {cluster}")))?;
            match device.resolve() {
                Some(DeviceRef::Data(i)) if i + 1 < members.len() => {}
                Some(DeviceRef::Parity) => {}
                _ => return Err(invalid(format!("{path}.device"), "no such device in cluster")),
            }
            if *mask == 0 {
                return Err(invalid(format!("{path}.mask"), "mask must be non-zero"));
            }
        }
        EventKind::ConnectivityOutage { start, end } => {
            if start >= end {
                return Err(invalid(path, "outage must have start < end"));
            }
        }
        EventKind::Drive { .. }
        | EventKind::ObdPlugIn
        | EventKind::ConfigChange
        | EventKind::ServiceNotice
        | EventKind::ClearTamperFlag { .. } => {}
    }
    Ok(())
}
