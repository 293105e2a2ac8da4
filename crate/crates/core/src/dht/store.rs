use std::collections::BTreeMap;

use super::{DhtError, DhtNodeId, RoutingTable};
use crate::auditcore::{AuditRecord, Digest, EventType};

/// A record as held in a node store, tagged with the network-wide write
/// sequence number used for checkpoint gating.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoredRecord {
    pub record: AuditRecord,
    pub seq: u64,
}

/// Fixed part of the binary encoding: key, payload hash, sim_time, event
/// code, sequence number and two length bytes.
const FIXED_LEN: usize = 32 + 32 + 8 + 1 + 8 + 1 + 1;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum CodecError {
    #[error("truncated record at offset {0}")]
    Truncated(usize),
    #[error("bad event code {code} at offset {offset}")]
    BadEventCode { code: u8, offset: usize },
    #[error("non-UTF-8 text at offset {0}")]
    Utf8(usize),
}

impl StoredRecord {
    pub fn encoded_len(&self) -> usize {
        FIXED_LEN + self.record.module_id.len() + self.record.payload_summary.len()
    }

    /// `key | payload_hash | sim_time BE | event | seq BE | len | module_id | len | summary`
    pub fn encode_into(&self, out: &mut Vec<u8>) {
        let r = &self.record;
        out.extend_from_slice(r.record_key.as_bytes());
        out.extend_from_slice(r.payload_hash.as_bytes());
        out.extend_from_slice(&r.sim_time.to_be_bytes());
        out.push(r.event_type.code());
        out.extend_from_slice(&self.seq.to_be_bytes());
        out.push(r.module_id.len() as u8);
        out.extend_from_slice(r.module_id.as_bytes());
        out.push(r.payload_summary.len() as u8);
        out.extend_from_slice(r.payload_summary.as_bytes());
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.encoded_len());
        self.encode_into(&mut out);
        out
    }

    /// Decodes one record starting at `offset`; returns it and its length.
    pub fn decode(bytes: &[u8], offset: usize) -> Result<(Self, usize), CodecError> {
        let mut pos = offset;
        let mut take = |n: usize| -> Result<&[u8], CodecError> {
            let s = bytes.get(pos..pos + n).ok_or(CodecError::Truncated(offset))?;
            pos += n;
            Ok(s)
        };
        let record_key = Digest(take(32)?.try_into().unwrap());
        let payload_hash = Digest(take(32)?.try_into().unwrap());
        let sim_time = u64::from_be_bytes(take(8)?.try_into().unwrap());
        let code = take(1)?[0];
        let event_type = EventType::from_code(code).ok_or(CodecError::BadEventCode { code, offset })?;
        let seq = u64::from_be_bytes(take(8)?.try_into().unwrap());
        let n = take(1)?[0] as usize;
        let module_id = std::str::from_utf8(take(n)?)
            .map_err(|_| CodecError::Utf8(offset))?
            .to_string();
        let n = take(1)?[0] as usize;
        let payload_summary = std::str::from_utf8(take(n)?)
            .map_err(|_| CodecError::Utf8(offset))?
            .to_string();
        let rec = StoredRecord {
            record: AuditRecord {
                record_key,
                module_id,
                event_type,
                sim_time,
                payload_hash,
                payload_summary,
            },
            seq,
        };
        Ok((rec, pos - offset))
    }
}

/// Decodes a whole serialized store into records in stored order.
pub fn decode_store(bytes: &[u8]) -> Result<Vec<StoredRecord>, CodecError> {
    let mut out = Vec::new();
    let mut offset = 0;
    while offset < bytes.len() {
        let (rec, len) = StoredRecord::decode(bytes, offset)?;
        offset += len;
        out.push(rec);
    }
    Ok(out)
}

/// One DHT participant hosted on an ECU.
#[derive(Debug, Clone)]
pub struct DhtNode {
    pub node_id: DhtNodeId,
    pub routing_table: RoutingTable,
    local_store: BTreeMap<Digest, StoredRecord>,
    store_limit_bytes: usize,
    used_bytes: usize,
    checkpoint_floor: u64,
}

impl DhtNode {
    pub fn new(node_id: DhtNodeId, bucket_capacity: usize, store_limit_bytes: usize) -> Self {
        Self {
            node_id,
            routing_table: RoutingTable::new(node_id, bucket_capacity),
            local_store: BTreeMap::new(),
            store_limit_bytes,
            used_bytes: 0,
            checkpoint_floor: 0,
        }
    }

    pub fn store_limit_bytes(&self) -> usize {
        self.store_limit_bytes
    }

    /// Serialized size of the local store.
    pub fn used_bytes(&self) -> usize {
        self.used_bytes
    }

    pub fn free_bytes(&self) -> usize {
        self.store_limit_bytes.saturating_sub(self.used_bytes)
    }

    pub fn checkpoint_floor(&self) -> u64 {
        self.checkpoint_floor
    }

    /// Floors never move backwards.
    pub fn set_checkpoint_floor(&mut self, floor: u64) {
        self.checkpoint_floor = self.checkpoint_floor.max(floor);
    }

    pub fn len(&self) -> usize {
        self.local_store.len()
    }

    pub fn is_empty(&self) -> bool {
        self.local_store.is_empty()
    }

    pub fn get(&self, key: &Digest) -> Option<&StoredRecord> {
        self.local_store.get(key)
    }

    pub fn contains(&self, key: &Digest) -> bool {
        self.local_store.contains_key(key)
    }

    /// Records in ascending `record_key` order.
    pub fn records(&self) -> impl Iterator<Item = &StoredRecord> {
        self.local_store.values()
    }

    /// Frees at least `needed_bytes` by removing the oldest checkpointed
    /// records, ordered by `(sim_time, record_key)`.
    ///
    /// Nothing is removed when the space cannot be freed without touching a
    /// record at or above the checkpoint floor.
    pub fn evict(&mut self, needed_bytes: usize) -> Result<Vec<Digest>, DhtError> {
        if needed_bytes > self.store_limit_bytes {
            return Err(DhtError::RecordTooLarge {
                needed: needed_bytes,
                limit: self.store_limit_bytes,
            });
        }
        if self.free_bytes() >= needed_bytes {
            return Ok(Vec::new());
        }
        let mut eligible: Vec<_> = self
            .local_store
            .values()
            .filter(|s| s.seq < self.checkpoint_floor)
            .map(|s| (s.record.sim_time, s.record.record_key, s.encoded_len()))
            .collect();
        eligible.sort();

        let mut free = self.free_bytes();
        let mut victims = Vec::new();
        for (_, key, len) in eligible {
            if free >= needed_bytes {
                break;
            }
            free += len;
            victims.push(key);
        }
        if free < needed_bytes {
            return Err(DhtError::CheckpointRequired {
                node: self.node_id,
                needed: needed_bytes,
                reclaimable: free - self.free_bytes(),
            });
        }
        for key in &victims {
            let removed = self.local_store.remove(key).expect("victim present");
            self.used_bytes -= removed.encoded_len();
        }
        Ok(victims)
    }

    /// Inserts without budget checks; callers evict first.
    pub(crate) fn insert(&mut self, stored: StoredRecord) {
        self.used_bytes += stored.encoded_len();
        if let Some(old) = self.local_store.insert(stored.record.record_key, stored) {
            self.used_bytes -= old.encoded_len();
        }
    }

    /// The store's serialized form: record encodings concatenated in key order.
    pub fn serialize_store(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.used_bytes);
        for s in self.local_store.values() {
            s.encode_into(&mut out);
        }
        out
    }

    /// Replaces the store with the records decoded from `bytes`.
    pub fn load_store(&mut self, bytes: &[u8]) -> Result<(), CodecError> {
        let records = decode_store(bytes)?;
        self.local_store.clear();
        self.used_bytes = 0;
        for r in records {
            self.insert(r);
        }
        Ok(())
    }

    /// Audit dump: `record_key_hex<TAB>module_id<TAB>event_type<TAB>sim_time<TAB>payload_hash_hex` per line.
    pub fn dump(&self) -> String {
        dump_records(self.local_store.values().map(|s| &s.record))
    }
}

pub fn dump_records<'a>(records: impl IntoIterator<Item = &'a AuditRecord>) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&format!(
            "{}\t{}\t{}\t{}\t{}\n",
            r.record_key, r.module_id, r.event_type, r.sim_time, r.payload_hash
        ));
    }
    out
}

/// A parsed line of a node store dump.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DumpLine {
    pub record_key: Digest,
    pub module_id: String,
    pub event_type: EventType,
    pub sim_time: u64,
    pub payload_hash: Digest,
}

pub fn parse_dump(text: &str) -> Result<Vec<DumpLine>, DhtError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, line)| {
            let bad = || DhtError::MalformedDump { line: i + 1 };
            let cols: Vec<_> = line.split('\t').collect();
            let [key, module, event, time, payload] = cols.as_slice() else {
                return Err(bad());
            };
            Ok(DumpLine {
                record_key: key.parse().map_err(|_| bad())?,
                module_id: module.to_string(),
                event_type: event.parse().map_err(|_| bad())?,
                sim_time: time.parse().map_err(|_| bad())?,
                payload_hash: payload.parse().map_err(|_| bad())?,
            })
        })
        .collect()
}
