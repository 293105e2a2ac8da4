use std::collections::{BTreeMap, BTreeSet};

use rand::Rng;
use serde_json::{json, Value};

use super::groundtruth::{Alert, AlertKind, GroundTruthLog};
use super::scenario::{EventKind, VehicleConfig};
use super::SimError;
use crate::auditcore::{
    derive_vehicle_key, identity_hash, AuditRecord, Digest, EventType, ModuleMetadata, SharedCriticalData, VehicleKey,
};
use crate::dht::{decode_store, detect_discrepancy, DhtError, DhtNetwork, DhtNodeId, Discrepancy, BUCKET_CAPACITY};
use crate::ledger::{ApprovedLibrary, FullNode};
use crate::masternode::{
    meta_digest, trigger_policy, Connectivity, MasterNode, MetaHash, TriggerDecision, TriggerState,
};
use crate::parity::{DeviceRef, ParityCluster, ScrubReport};

/// Everything a vehicle writes outside itself while it runs.
pub(crate) struct Journal<'a> {
    pub gt: &'a mut GroundTruthLog,
    pub alerts: &'a mut Vec<Alert>,
    pub library: &'a mut ApprovedLibrary,
}

impl Journal<'_> {
    fn log(&mut self, t: u64, vin: &str, kind: &str, pre: Value, post: Value, detail: Value) {
        self.gt.record(t, Some(vin), kind, pre, post, detail);
    }

    fn alert(&mut self, t: u64, vin: &str, kind: AlertKind, detail: String) {
        self.gt.record(
            t,
            Some(vin),
            "alert",
            Value::Null,
            Value::Null,
            json!({"kind": kind, "detail": detail}),
        );
        self.alerts.push(Alert {
            sim_time: t,
            vin: vin.to_string(),
            kind,
            detail,
        });
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModuleState {
    /// What the module actually holds.
    pub metadata: ModuleMetadata,
    /// The configuration the OEM has sanctioned for this slot.
    pub authorized: ModuleMetadata,
    pub critical: SharedCriticalData,
    pub node_id: DhtNodeId,
    pub tamper_flag: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TamperFinding {
    pub set_at: u64,
    pub fields: BTreeMap<String, Discrepancy>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ConsistencyOutcome {
    Consistent,
    Flagged {
        fields: BTreeMap<String, Discrepancy>,
        modules: BTreeSet<String>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClearOutcome {
    Cleared,
    Refused,
}

/// Parity cluster over the DHT stores of its data members; the last
/// configured member hosts the parity store.
#[derive(Debug, Clone)]
pub struct ClusterState {
    pub data_members: Vec<String>,
    pub parity_host: String,
    pub cluster: ParityCluster,
}

#[derive(Debug, Clone)]
pub struct Vehicle {
    config: VehicleConfig,
    identity: VehicleKey,
    current_key: VehicleKey,
    order: Vec<String>,
    modules: BTreeMap<String, ModuleState>,
    network: DhtNetwork,
    clusters: Vec<ClusterState>,
    master: MasterNode,
    shadow: BTreeMap<Digest, Digest>,
    tamper: Option<TamperFinding>,
    outages: Vec<(u64, u64)>,
}

fn key_for(modules: &BTreeMap<String, ModuleState>, master: &str) -> Result<VehicleKey, SimError> {
    Ok(derive_vehicle_key(
        modules.values().map(|m| m.metadata.serial_number.as_str()),
        &modules[master].metadata.software_version,
    )?)
}

impl Vehicle {
    /// Factory state: every module holds its authorized configuration, the
    /// DHT is empty and the ledger identity is fixed from the factory serials.
    pub fn commission<R: Rng>(config: VehicleConfig, rng: &mut R) -> Result<Self, SimError> {
        let mut modules = BTreeMap::new();
        let mut order = Vec::new();
        for m in &config.modules {
            order.push(m.module_id.clone());
            modules.insert(
                m.module_id.clone(),
                ModuleState {
                    metadata: m.clone(),
                    authorized: m.clone(),
                    critical: config.initial_critical.clone(),
                    node_id: DhtNodeId::from_serial(&m.serial_number),
                    tamper_flag: false,
                },
            );
        }
        let network = DhtNetwork::with_nodes(
            order.iter().map(|id| modules[id].node_id),
            BUCKET_CAPACITY,
            config.dht_store_limit_bytes,
            rng,
        )?;
        let clusters = config
            .parity_clusters
            .iter()
            .map(|members| {
                let (parity_host, data) = members.split_last().unwrap();
                Ok(ClusterState {
                    data_members: data.to_vec(),
                    parity_host: parity_host.clone(),
                    cluster: ParityCluster::new(vec![Vec::new(); data.len()])?,
                })
            })
            .collect::<Result<Vec<_>, SimError>>()?;
        let identity = key_for(&modules, &config.master_module)?;
        let master = MasterNode::new(identity.key, config.triggers);
        Ok(Self {
            current_key: identity.clone(),
            identity,
            order,
            modules,
            network,
            clusters,
            master,
            shadow: BTreeMap::new(),
            tamper: None,
            outages: Vec::new(),
            config,
        })
    }

    pub fn vin(&self) -> &str {
        &self.config.vin
    }

    pub fn variant_code(&self) -> &str {
        &self.config.variant_code
    }

    pub fn config(&self) -> &VehicleConfig {
        &self.config
    }

    /// The key the vehicle's ledger history is filed under.
    pub fn identity(&self) -> &VehicleKey {
        &self.identity
    }

    /// The key derived from the modules installed right now.
    pub fn current_key(&self) -> &VehicleKey {
        &self.current_key
    }

    pub fn module(&self, id: &str) -> Option<&ModuleState> {
        self.modules.get(id)
    }

    /// Modules in configuration order.
    pub fn modules(&self) -> impl Iterator<Item = &ModuleState> {
        self.order.iter().map(|id| &self.modules[id])
    }

    pub fn network(&self) -> &DhtNetwork {
        &self.network
    }

    pub fn master(&self) -> &MasterNode {
        &self.master
    }

    pub fn clusters(&self) -> &[ClusterState] {
        &self.clusters
    }

    pub fn tamper_flag(&self) -> bool {
        self.modules.values().any(|m| m.tamper_flag)
    }

    pub fn tamper_finding(&self) -> Option<&TamperFinding> {
        self.tamper.as_ref()
    }

    /// Digest over the authorized counterpart of every mirrored record.
    pub fn authorized_digest(&self) -> Digest {
        meta_digest(self.shadow.iter())
    }

    fn master_odometer(&self) -> u64 {
        self.modules[&self.config.master_module].critical.odometer_km
    }

    fn is_up(&self, module_id: &str) -> bool {
        self.network.is_live(&self.modules[module_id].node_id)
    }

    /// Every module hashes its metadata for `event` and writes the record
    /// into the DHT. A module whose own node is down sends through the first
    /// live node in configuration order.
    pub(crate) fn emit(&mut self, event: EventType, t: u64, j: &mut Journal) -> Result<(), SimError> {
        for id in self.order.clone() {
            let m = &self.modules[&id];
            let record = identity_hash(&m.metadata, t, event)?;
            let authorized = identity_hash(&m.authorized, t, event)?;
            let origin = if self.network.is_live(&m.node_id) {
                Some(m.node_id)
            } else {
                self.order
                    .iter()
                    .map(|o| self.modules[o].node_id)
                    .find(|n| self.network.is_live(n))
            };
            match origin {
                Some(origin) => self.store(origin, record, authorized, event, t, j)?,
                None => self.lose(record, DhtError::NoLiveNodes, t, j)?,
            }
        }
        Ok(())
    }

    fn store(
        &mut self,
        origin: DhtNodeId,
        record: AuditRecord,
        authorized: AuditRecord,
        event: EventType,
        t: u64,
        j: &mut Journal,
    ) -> Result<(), SimError> {
        let receipt = match self.network.put(origin, record.clone()) {
            Ok(r) => r,
            Err(DhtError::CheckpointRequired { node, needed, .. }) => {
                let meta = self.capture(event, t, j)?;
                j.alert(
                    t,
                    self.vin(),
                    AlertKind::StoragePressureCheckpoint,
                    format!(
                        "node {node} needed {needed} bytes; checkpoint {} captured",
                        meta.checkpoint_seq
                    ),
                );
                match self.network.put(origin, record.clone()) {
                    Ok(r) => r,
                    Err(e) => return self.lose(record, e, t, j),
                }
            }
            Err(e @ DhtError::RecordTooLarge { .. }) => return self.lose(record, e, t, j),
            Err(e) => return Err(e.into()),
        };
        if receipt.fallback {
            j.alert(
                t,
                self.vin(),
                AlertKind::FallbackPlacement,
                format!(
                    "record {} from {} stored on fallback node {}",
                    record.record_key, record.module_id, receipt.stored_at
                ),
            );
        }
        j.log(
            t,
            &self.config.vin,
            "record_stored",
            Value::Null,
            Value::Null,
            json!({
                "module_id": record.module_id,
                "event_type": event.as_str(),
                "record_key": record.record_key,
                "node": receipt.stored_at.to_string(),
                "hops": receipt.hops,
                "fallback": receipt.fallback,
                "evicted": receipt.evicted,
                "authorized": record.record_key == authorized.record_key,
            }),
        );
        self.master.mirror_update(record);
        self.shadow.insert(authorized.record_key, authorized.payload_hash);
        Ok(())
    }

    fn lose(&mut self, record: AuditRecord, e: DhtError, t: u64, j: &mut Journal) -> Result<(), SimError> {
        j.alert(
            t,
            self.vin(),
            AlertKind::RecordLost,
            format!("record {} from {} not stored: {e}", record.record_key, record.module_id),
        );
        Ok(())
    }

    /// Captures a meta-hash and files the matching authorized digest with
    /// the OEM library.
    pub(crate) fn capture(&mut self, trigger: EventType, t: u64, j: &mut Journal) -> Result<MetaHash, SimError> {
        let meta = self.master.capture_meta_hash(trigger, t, &mut self.network)?;
        let authorized = self.authorized_digest();
        j.library.approve(
            &self.config.variant_code,
            authorized,
            format!(
                "authorized configuration of {} at checkpoint {}",
                self.config.vin, meta.checkpoint_seq
            ),
        );
        j.log(
            t,
            &self.config.vin,
            "capture",
            Value::Null,
            Value::Null,
            json!({
                "checkpoint_seq": meta.checkpoint_seq,
                "trigger": trigger.as_str(),
                "digest": meta.digest,
                "authorized_digest": authorized,
                "covered_records": meta.covered_records,
            }),
        );
        Ok(meta)
    }

    fn emit_and_maybe_capture(
        &mut self,
        event: EventType,
        t: u64,
        odometer_before_km: u64,
        j: &mut Journal,
    ) -> Result<(), SimError> {
        self.emit(event, t, j)?;
        let state = TriggerState {
            sim_time: t,
            last_capture: self.master.last_capture(),
            odometer_before_km,
            odometer_km: self.master_odometer(),
        };
        if trigger_policy(event, &state, &self.config.triggers) == TriggerDecision::CaptureNow {
            self.capture(event, t, j)?;
        }
        Ok(())
    }

    /// Periodic tick: records are written and the interval rule decides on a capture.
    pub(crate) fn periodic(&mut self, t: u64, j: &mut Journal) -> Result<(), SimError> {
        let odo = self.master_odometer();
        self.emit_and_maybe_capture(EventType::PeriodicInterval, t, odo, j)
    }

    /// Ignition: every live module records the startup, then the replicated
    /// critical data is compared by majority vote.
    pub(crate) fn boot(&mut self, t: u64, j: &mut Journal) -> Result<ConsistencyOutcome, SimError> {
        let odo = self.master_odometer();
        self.emit_and_maybe_capture(EventType::StartupCheck, t, odo, j)?;
        Ok(self.startup_consistency_check(t, j))
    }

    pub(crate) fn startup_consistency_check(&mut self, t: u64, j: &mut Journal) -> ConsistencyOutcome {
        let mut fields = BTreeMap::new();
        for field in SharedCriticalData::FIELDS {
            let readings: BTreeMap<String, String> = self
                .modules
                .iter()
                .map(|(id, m)| (id.clone(), m.critical.field(field).unwrap()))
                .collect();
            if let Ok(d) = detect_discrepancy(field, &readings) {
                if d.is_flagged() {
                    fields.insert(field.to_string(), d);
                }
            }
        }
        if fields.is_empty() {
            return ConsistencyOutcome::Consistent;
        }
        let modules: BTreeSet<String> = fields.values().flat_map(|d| d.modules()).collect();
        let summary: Vec<String> = fields
            .iter()
            .map(|(f, d)| format!("{f}: {}", d.modules().into_iter().collect::<Vec<_>>().join(",")))
            .collect();
        if !self.tamper_flag() {
            for m in self.modules.values_mut() {
                m.tamper_flag = true;
            }
            self.tamper = Some(TamperFinding {
                set_at: t,
                fields: fields.clone(),
            });
            j.alert(
                t,
                self.vin(),
                AlertKind::TamperFlagSet,
                format!("critical data disagrees ({})", summary.join("; ")),
            );
        } else if let Some(finding) = &mut self.tamper {
            for (f, d) in &fields {
                finding.fields.entry(f.clone()).or_insert_with(|| d.clone());
            }
        }
        ConsistencyOutcome::Flagged { fields, modules }
    }

    /// Clears the tamper flag on every module when `token` matches the
    /// vehicle's service authorization, recording a service notice.
    pub(crate) fn clear_tamper_flag(
        &mut self,
        token: &str,
        authorization: Option<&str>,
        t: u64,
        j: &mut Journal,
    ) -> Result<ClearOutcome, SimError> {
        if authorization != Some(token) {
            j.alert(
                t,
                self.vin(),
                AlertKind::ClearRefused,
                "tamper flag clear refused: bad authorization".into(),
            );
            return Ok(ClearOutcome::Refused);
        }
        let was = self.tamper_flag();
        for m in self.modules.values_mut() {
            m.tamper_flag = false;
        }
        self.tamper = None;
        if was {
            j.alert(
                t,
                self.vin(),
                AlertKind::TamperFlagCleared,
                "tamper flag cleared by authorized service".into(),
            );
        }
        self.service_notice(t, j)?;
        Ok(ClearOutcome::Cleared)
    }

    fn service_notice(&mut self, t: u64, j: &mut Journal) -> Result<(), SimError> {
        for m in self.modules.values_mut() {
            m.critical.service_event_count += 1;
        }
        let odo = self.master_odometer();
        self.emit_and_maybe_capture(EventType::ServiceNotice, t, odo, j)
    }

    fn module_mut(&mut self, id: &str) -> Result<&mut ModuleState, SimError> {
        self.modules
            .get_mut(id)
            .ok_or_else(|| SimError::UnknownTarget(format!("module {id}")))
    }

    fn rotate_key(&mut self, t: u64, j: &mut Journal) -> Result<(), SimError> {
        let key = key_for(&self.modules, &self.config.master_module)?;
        if key != self.current_key {
            j.log(
                t,
                &self.config.vin,
                "vehicle_key_rotated",
                json!(self.current_key.key),
                json!(key.key),
                Value::Null,
            );
            self.current_key = key;
        }
        Ok(())
    }

    /// Applies one scripted event.
    pub(crate) fn apply(
        &mut self,
        kind: &EventKind,
        t: u64,
        approved_versions: &BTreeMap<String, BTreeSet<String>>,
        authorization: Option<&str>,
        j: &mut Journal,
    ) -> Result<(), SimError> {
        j.log(
            t,
            &self.config.vin.clone(),
            "event",
            Value::Null,
            Value::Null,
            serde_json::to_value(kind).unwrap(),
        );
        match kind {
            EventKind::Drive { km } => {
                self.boot(t, j)?;
                let before = self.master_odometer();
                for m in self.modules.values_mut() {
                    m.critical.odometer_km = m.critical.odometer_km.saturating_add(*km);
                }
                self.emit_mileage_if_crossed(before, t, j)?;
            }
            EventKind::ObdPlugIn => self.emit_and_maybe_capture(EventType::ObdPlugIn, t, self.master_odometer(), j)?,
            EventKind::ConfigChange => {
                self.emit_and_maybe_capture(EventType::ConfigChange, t, self.master_odometer(), j)?
            }
            EventKind::ServiceNotice => self.service_notice(t, j)?,
            EventKind::UdsReflash { module_id, new_version } => {
                let approved = approved_versions
                    .get(module_id)
                    .is_some_and(|v| v.contains(new_version));
                let m = self.module_mut(module_id)?;
                let before = std::mem::replace(&mut m.metadata.software_version, new_version.clone());
                if approved {
                    m.authorized.software_version = new_version.clone();
                }
                j.log(
                    t,
                    &self.config.vin,
                    "reflash",
                    json!(before),
                    json!(new_version),
                    json!({"module_id": module_id, "approved": approved}),
                );
                self.rotate_key(t, j)?;
                self.emit_and_maybe_capture(EventType::Reflash, t, self.master_odometer(), j)?;
            }
            EventKind::EepromTamper {
                module_id,
                field,
                forged_value,
            } => {
                let vin = self.config.vin.clone();
                let m = self.module_mut(module_id)?;
                let (pre, ok) = if SharedCriticalData::FIELDS.contains(&field.as_str()) {
                    let pre = m.critical.field(field);
                    if field == "vin" {
                        m.metadata.vin = forged_value.clone();
                    }
                    (pre, m.critical.set_field(field, forged_value))
                } else {
                    let pre = m
                        .metadata
                        .fields()
                        .iter()
                        .find(|(n, _)| n == field)
                        .map(|(_, v)| v.clone());
                    (pre, field != "module_id" && m.metadata.set_field(field, forged_value))
                };
                if !ok {
                    return Err(SimError::UnknownTarget(format!("field {field} of {module_id}")));
                }
                j.log(
                    t,
                    &vin,
                    "eeprom_tamper",
                    json!(pre),
                    json!(forged_value),
                    json!({"module_id": module_id, "field": field}),
                );
                self.rotate_key(t, j)?;
            }
            EventKind::ModuleSwap {
                module_id,
                replacement,
                odometer_km,
            } => {
                let vin = self.config.vin.clone();
                let meta = replacement.to_metadata(&vin, &self.config.variant_code);
                let old = self.module_mut(module_id)?.clone();
                let new_id = DhtNodeId::from_serial(&meta.serial_number);
                self.network.remove_node(&old.node_id)?;
                self.network.add_node(new_id)?;
                let mut critical = old.critical.clone();
                critical.vin = meta.vin.clone();
                if let Some(km) = odometer_km {
                    critical.odometer_km = *km;
                }
                j.log(
                    t,
                    &vin,
                    "module_swap",
                    json!({"serial_number": old.metadata.serial_number, "vin": old.metadata.vin, "node": old.node_id.to_string()}),
                    json!({"serial_number": meta.serial_number, "vin": meta.vin, "node": new_id.to_string()}),
                    json!({"module_id": module_id}),
                );
                let m = self.module_mut(module_id)?;
                m.metadata = meta;
                m.critical = critical;
                m.node_id = new_id;
                self.rotate_key(t, j)?;
            }
            EventKind::NodeFailure { module_id } => {
                let id = self.module_mut(module_id)?.node_id;
                self.network.fail_node(&id)?;
                j.log(
                    t,
                    &self.config.vin,
                    "node_failure",
                    Value::Null,
                    Value::Null,
                    json!({"module_id": module_id}),
                );
            }
            EventKind::NodeRecovery { module_id } => {
                let id = self.module_mut(module_id)?.node_id;
                self.network.recover_node(&id)?;
                j.log(
                    t,
                    &self.config.vin,
                    "node_recovery",
                    Value::Null,
                    Value::Null,
                    json!({"module_id": module_id}),
                );
            }
            EventKind::MemoryCorruption {
                cluster,
                device,
                byte_offset,
                mask,
            } => {
                let device = device
                    .resolve()
                    .ok_or_else(|| SimError::UnknownTarget(format!("device {device:?}")))?;
                self.inject_fault(*cluster, device, *byte_offset, *mask, t, j)?;
            }
            EventKind::ConnectivityOutage { start, end } => {
                self.outages.push((*start, *end));
            }
            EventKind::ClearTamperFlag { token } => {
                self.clear_tamper_flag(token, authorization, t, j)?;
            }
        }
        Ok(())
    }

    fn emit_mileage_if_crossed(&mut self, before: u64, t: u64, j: &mut Journal) -> Result<(), SimError> {
        let stride = self.config.triggers.mileage_stride_km;
        if self.master_odometer() / stride > before / stride {
            self.emit_and_maybe_capture(EventType::MileageThreshold, t, before, j)?;
        }
        Ok(())
    }

    /// Flips bits of one byte in a parity cluster. An offset past the end of
    /// the device is rejected with an alert and injects nothing.
    pub(crate) fn inject_fault(
        &mut self,
        cluster: usize,
        device: DeviceRef,
        byte_offset: usize,
        mask: u8,
        t: u64,
        j: &mut Journal,
    ) -> Result<(), SimError> {
        let vin = self.config.vin.clone();
        let c = self
            .clusters
            .get_mut(cluster)
            .ok_or_else(|| SimError::UnknownTarget(format!("cluster {cluster}")))?;
        match c.cluster.flip_byte(device, byte_offset, mask) {
            Ok((pre, post)) => {
                j.log(
                    t,
                    &vin,
                    "memory_corruption",
                    json!(pre),
                    json!(post),
                    json!({"cluster": cluster, "device": device.to_string(), "byte_offset": byte_offset}),
                );
            }
            Err(e) => {
                j.alert(t, &vin, AlertKind::InjectionRejected, format!("cluster {cluster}: {e}"));
            }
        }
        Ok(())
    }

    fn cluster_members_up(&self, c: &ClusterState) -> bool {
        c.data_members.iter().chain([&c.parity_host]).all(|m| self.is_up(m))
    }

    /// Scrubs every cluster whose members are all up and repairs a single
    /// faulty device, reloading a repaired data store into its node.
    pub(crate) fn maintain_clusters(&mut self, t: u64, j: &mut Journal) -> Result<(), SimError> {
        let vin = self.config.vin.clone();
        for i in 0..self.clusters.len() {
            if !self.cluster_members_up(&self.clusters[i]) {
                continue;
            }
            let c = &mut self.clusters[i];
            match c.cluster.scrub_and_repair() {
                Ok(ScrubReport::Clean) => {}
                Ok(ScrubReport::Corrupt { device, records }) => {
                    let host = match device {
                        DeviceRef::Data(d) => c.data_members[d].clone(),
                        DeviceRef::Parity => c.parity_host.clone(),
                    };
                    if let DeviceRef::Data(d) = device {
                        let bytes = c.cluster.data(d).unwrap().to_vec();
                        let node_id = self.modules[&host].node_id;
                        let node = self.network.node_mut(&node_id).expect("cluster member has a node");
                        node.load_store(&bytes)
                            .map_err(|e| SimError::Invariant(format!("repaired store does not decode: {e}")))?;
                    }
                    j.alert(
                        t,
                        &vin,
                        AlertKind::ParityRepaired,
                        format!(
                            "cluster {i} device {device} ({host}) rebuilt; {} records affected",
                            records.len()
                        ),
                    );
                }
                Err(e) => {
                    j.alert(t, &vin, AlertKind::ParityUncorrectable, format!("cluster {i}: {e}"));
                }
            }
        }
        Ok(())
    }

    /// Re-encodes cluster data devices from the node stores that changed.
    pub(crate) fn sync_clusters(&mut self) -> Result<(), SimError> {
        for i in 0..self.clusters.len() {
            if !self.cluster_members_up(&self.clusters[i]) {
                continue;
            }
            for d in 0..self.clusters[i].data_members.len() {
                let node_id = self.modules[&self.clusters[i].data_members[d]].node_id;
                let node = self.network.node(&node_id).expect("cluster member has a node");
                let bytes = node.serialize_store();
                if self.clusters[i].cluster.data(d) == Some(bytes.as_slice()) {
                    continue;
                }
                let mut ranges = Vec::new();
                let mut offset = 0;
                for s in node.records() {
                    let len = s.encoded_len();
                    ranges.push((s.record.record_key, offset, len));
                    offset += len;
                }
                self.clusters[i].cluster.replace_data(d, bytes, &ranges)?;
            }
        }
        Ok(())
    }

    /// Newest record for `module_id` still reachable: live nodes first, then
    /// stores of failed cluster members rebuilt from parity.
    pub fn last_known_hash(&self, module_id: &str) -> Option<AuditRecord> {
        let mut best = self.network.last_known_hash(module_id).cloned();
        for c in &self.clusters {
            let down: Vec<usize> = (0..c.data_members.len())
                .filter(|&d| !self.is_up(&c.data_members[d]))
                .collect();
            if down.len() != 1 || !self.is_up(&c.parity_host) {
                continue;
            }
            let Ok(bytes) = c.cluster.reconstruct(DeviceRef::Data(down[0])) else {
                continue;
            };
            let Ok(records) = decode_store(&bytes) else {
                continue;
            };
            for s in records.into_iter().filter(|s| s.record.module_id == module_id) {
                if best
                    .as_ref()
                    .is_none_or(|b| (s.record.sim_time, s.record.record_key) > (b.sim_time, b.record_key))
                {
                    best = Some(s.record);
                }
            }
        }
        best
    }

    pub fn connectivity_at(&self, t: u64) -> Connectivity {
        if self.outages.iter().any(|&(s, e)| s <= t && t < e) {
            Connectivity::Offline
        } else {
            Connectivity::Online
        }
    }

    /// Delivers pending meta-hashes if the link is up.
    pub(crate) fn submit(&mut self, t: u64, full_node: &mut FullNode, j: &mut Journal) {
        let connectivity = self.connectivity_at(t);
        if connectivity != self.master.buffer.connectivity {
            j.log(
                t,
                &self.config.vin,
                "connectivity",
                json!(self.master.buffer.connectivity),
                json!(connectivity),
                Value::Null,
            );
        }
        self.master.buffer.connectivity = connectivity;
        let out = self.master.buffer.submit_pending(full_node);
        if out.submitted > 0 {
            j.log(
                t,
                &self.config.vin,
                "submitted",
                Value::Null,
                Value::Null,
                json!({"count": out.submitted}),
            );
        }
        if let Some((seq, e)) = out.rejection {
            j.alert(
                t,
                self.vin(),
                AlertKind::SubmissionRejected,
                format!("checkpoint {seq}: {e}"),
            );
        }
    }

    pub(crate) fn check_invariants(&self) -> Result<(), SimError> {
        for node in self.network.nodes() {
            if node.used_bytes() > node.store_limit_bytes() {
                return Err(SimError::Invariant(format!(
                    "node {} uses {} of {} bytes",
                    node.node_id,
                    node.used_bytes(),
                    node.store_limit_bytes()
                )));
            }
            for s in node.records() {
                if !self.master.mirror().contains_key(&s.record.record_key) {
                    return Err(SimError::Invariant(format!(
                        "record {} on node {} is missing from the mirror",
                        s.record.record_key, node.node_id
                    )));
                }
            }
        }
        let flags: BTreeSet<bool> = self.modules.values().map(|m| m.tamper_flag).collect();
        if flags.len() > 1 {
            return Err(SimError::Invariant("tamper flag differs between modules".into()));
        }
        Ok(())
    }
}
