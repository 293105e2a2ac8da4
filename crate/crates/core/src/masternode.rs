//! The master unit: mirrors every record written to the DHT, captures
//! meta-hashes over the mirror, gates DHT eviction on those captures and
//! buffers them in a light client until the full node acknowledges them.

use std::collections::{BTreeMap, BTreeSet, VecDeque};

use serde::{Deserialize, Serialize};
use sha2::{Digest as _, Sha256};
use thiserror::Error;

use crate::auditcore::{AuditRecord, Digest, EventType};
use crate::dht::{dump_records, DhtNetwork, DhtNodeId};
use crate::ledger::{LedgerEndpoint, LedgerError, Submission};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CaptureError {
    /// Some node holds records the mirror has not seen yet; retry once the
    /// network has quiesced.
    #[error("network not quiesced: node {node} holds {missing} unmirrored records")]
    Unquiesced { node: DhtNodeId, missing: usize },
}

/// Digest over `record_key || payload_hash` of every pair, sorted by key.
pub fn meta_digest<'a>(pairs: impl IntoIterator<Item = (&'a Digest, &'a Digest)>) -> Digest {
    let mut pairs: Vec<_> = pairs.into_iter().collect();
    pairs.sort();
    let mut h = Sha256::new();
    for (key, payload) in pairs {
        h.update(key.as_bytes());
        h.update(payload.as_bytes());
    }
    Digest(h.finalize().into())
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetaHash {
    pub digest: Digest,
    pub covered_records: usize,
    pub checkpoint_seq: u64,
    pub sim_time: u64,
    pub trigger: EventType,
}

impl MetaHash {
    pub fn to_submission(&self, vehicle_key: Digest) -> Submission {
        Submission {
            vehicle_key,
            checkpoint_seq: self.checkpoint_seq,
            meta_digest: self.digest,
            trigger: self.trigger,
            sim_time: self.sim_time,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Connectivity {
    Online,
    Offline,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SubmitOutcome {
    pub submitted: usize,
    /// The first rejection; the rejected entry and everything after it stay pending.
    pub rejection: Option<(u64, LedgerError)>,
}

/// Outbound queue of meta-hashes awaiting acknowledgment by the full node.
#[derive(Debug, Clone)]
pub struct LightClientBuffer {
    vehicle_key: Digest,
    pending: VecDeque<MetaHash>,
    submitted: BTreeSet<u64>,
    pub connectivity: Connectivity,
}

impl LightClientBuffer {
    pub fn new(vehicle_key: Digest) -> Self {
        Self {
            vehicle_key,
            pending: VecDeque::new(),
            submitted: BTreeSet::new(),
            connectivity: Connectivity::Online,
        }
    }

    pub fn vehicle_key(&self) -> Digest {
        self.vehicle_key
    }

    pub fn pending(&self) -> impl Iterator<Item = &MetaHash> {
        self.pending.iter()
    }

    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn submitted(&self) -> &BTreeSet<u64> {
        &self.submitted
    }

    /// Queues a capture. Sequence numbers must arrive in ascending order.
    pub fn enqueue(&mut self, meta: MetaHash) {
        let last = self
            .pending
            .back()
            .map(|m| m.checkpoint_seq)
            .or_else(|| self.submitted.last().copied());
        assert!(
            last.is_none_or(|l| meta.checkpoint_seq > l),
            "checkpoint_seq must increase"
        );
        self.pending.push_back(meta);
    }

    /// Drains pending entries in order while online. Stops at the first
    /// rejection, leaving that entry queued.
    pub fn submit_pending(&mut self, endpoint: &mut impl LedgerEndpoint) -> SubmitOutcome {
        let mut submitted = 0;
        if self.connectivity == Connectivity::Offline {
            return SubmitOutcome {
                submitted,
                rejection: None,
            };
        }
        while let Some(meta) = self.pending.front() {
            let wire = meta.to_submission(self.vehicle_key).to_wire();
            match endpoint.submit(&wire) {
                Ok(()) => {
                    let meta = self.pending.pop_front().unwrap();
                    self.submitted.insert(meta.checkpoint_seq);
                    submitted += 1;
                }
                Err(e) => {
                    return SubmitOutcome {
                        submitted,
                        rejection: Some((meta.checkpoint_seq, e)),
                    }
                }
            }
        }
        SubmitOutcome {
            submitted,
            rejection: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TriggerConfig {
    pub interval_s: u64,
    pub mileage_stride_km: u64,
}

impl Default for TriggerConfig {
    fn default() -> Self {
        Self {
            interval_s: 3600,
            mileage_stride_km: 1000,
        }
    }
}

/// The parts of vehicle state the trigger policy looks at.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TriggerState {
    pub sim_time: u64,
    /// Time of the last capture; commissioning (t = 0) when none yet.
    pub last_capture: Option<u64>,
    pub odometer_before_km: u64,
    pub odometer_km: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriggerDecision {
    CaptureNow,
    Defer,
}

pub fn trigger_policy(event: EventType, state: &TriggerState, config: &TriggerConfig) -> TriggerDecision {
    let capture = match event {
        EventType::ObdPlugIn | EventType::ConfigChange | EventType::Reflash | EventType::ServiceNotice => true,
        EventType::PeriodicInterval => {
            state.sim_time.saturating_sub(state.last_capture.unwrap_or(0)) >= config.interval_s
        }
        EventType::MileageThreshold => {
            let stride = config.mileage_stride_km.max(1);
            state.odometer_km / stride > state.odometer_before_km / stride
        }
        EventType::StartupCheck => false,
    };
    if capture {
        TriggerDecision::CaptureNow
    } else {
        TriggerDecision::Defer
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MirrorAck {
    pub record_key: Digest,
    /// `false` when the record was already mirrored.
    pub inserted: bool,
}

/// The head unit's view of one vehicle.
#[derive(Debug, Clone)]
pub struct MasterNode {
    mirror: BTreeMap<Digest, AuditRecord>,
    checkpoint_seq: u64,
    retained: VecDeque<MetaHash>,
    retain_depth: Option<usize>,
    last_capture: Option<u64>,
    pub buffer: LightClientBuffer,
    pub triggers: TriggerConfig,
}

impl MasterNode {
    pub fn new(vehicle_key: Digest, triggers: TriggerConfig) -> Self {
        Self {
            mirror: BTreeMap::new(),
            checkpoint_seq: 0,
            retained: VecDeque::new(),
            retain_depth: None,
            last_capture: None,
            buffer: LightClientBuffer::new(vehicle_key),
            triggers,
        }
    }

    /// Keep at most `depth` captured meta-hashes on the master; `None` keeps all.
    pub fn with_retain_depth(mut self, depth: Option<usize>) -> Self {
        self.retain_depth = depth;
        self
    }

    pub fn mirror_update(&mut self, record: AuditRecord) -> MirrorAck {
        let record_key = record.record_key;
        let inserted = !self.mirror.contains_key(&record_key);
        if inserted {
            self.mirror.insert(record_key, record);
        }
        MirrorAck { record_key, inserted }
    }

    pub fn mirror(&self) -> &BTreeMap<Digest, AuditRecord> {
        &self.mirror
    }

    /// The mirror in node-dump format.
    pub fn mirror_dump(&self) -> String {
        dump_records(self.mirror.values())
    }

    pub fn checkpoint_seq(&self) -> u64 {
        self.checkpoint_seq
    }

    pub fn last_capture(&self) -> Option<u64> {
        self.last_capture
    }

    pub fn retained(&self) -> impl Iterator<Item = &MetaHash> {
        self.retained.iter()
    }

    pub fn current_digest(&self) -> Digest {
        meta_digest(self.mirror.values().map(|r| (&r.record_key, &r.payload_hash)))
    }

    fn check_quiesced(&self, network: &DhtNetwork) -> Result<(), CaptureError> {
        for node in network.nodes() {
            let missing = node
                .records()
                .filter(|s| !self.mirror.contains_key(&s.record.record_key))
                .count();
            if missing > 0 {
                return Err(CaptureError::Unquiesced {
                    node: node.node_id,
                    missing,
                });
            }
        }
        Ok(())
    }

    /// Hashes the mirror, advances the checkpoint floor on every DHT node and
    /// queues the result for submission.
    pub fn capture_meta_hash(
        &mut self,
        trigger: EventType,
        sim_time: u64,
        network: &mut DhtNetwork,
    ) -> Result<MetaHash, CaptureError> {
        self.check_quiesced(network)?;
        self.checkpoint_seq += 1;
        let meta = MetaHash {
            digest: self.current_digest(),
            covered_records: self.mirror.len(),
            checkpoint_seq: self.checkpoint_seq,
            sim_time,
            trigger,
        };
        network.advance_checkpoint_floor();
        self.last_capture = Some(sim_time);
        self.retained.push_back(meta.clone());
        if let Some(depth) = self.retain_depth {
            while self.retained.len() > depth {
                self.retained.pop_front();
            }
        }
        self.buffer.enqueue(meta.clone());
        Ok(meta)
    }
}
