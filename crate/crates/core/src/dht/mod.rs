//! The in-vehicle distributed hash table.
//!
//! Records are owned by the node whose id is closest to the record key in
//! XOR distance. Lookups are iterative with one outstanding query: each step
//! moves to the closest live peer the current node knows, until no known
//! peer is closer. Because every bucket holds `min(k, live peers in range)`
//! active entries, the walk always terminates at the closest live node.

mod routing;
mod store;

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use rand::seq::SliceRandom;
use rand::Rng;
use thiserror::Error;

use crate::auditcore::{AuditRecord, Digest};

pub use routing::RoutingTable;
pub use store::{decode_store, dump_records, parse_dump, CodecError, DhtNode, DumpLine, StoredRecord};

/// Peers per routing bucket.
pub const BUCKET_CAPACITY: usize = 4;
/// Per-node store budget in bytes.
pub const DEFAULT_STORE_LIMIT: usize = 2048;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DhtError {
    #[error("node set is empty")]
    NoNodes,
    #[error("unknown node {0}")]
    UnknownNode(DhtNodeId),
    #[error("node {0} already present")]
    DuplicateNode(DhtNodeId),
    #[error("origin node {0} is down")]
    OriginDown(DhtNodeId),
    #[error("no live node can accept the record")]
    NoLiveNodes,
    #[error("record of {needed} bytes exceeds store limit {limit}")]
    RecordTooLarge { needed: usize, limit: usize },
    #[error("node {node} needs a meta-hash checkpoint: {needed} bytes needed, {reclaimable} reclaimable")]
    CheckpointRequired {
        node: DhtNodeId,
        needed: usize,
        reclaimable: usize,
    },
    #[error("record {0} fails its key check")]
    InvalidRecord(Digest),
    #[error("discrepancy check on `{field}` needs at least two readings")]
    TooFewReadings { field: String },
    #[error("malformed dump line {line}")]
    MalformedDump { line: usize },
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct DhtNodeId(pub Digest);

impl DhtNodeId {
    /// A node's id is the digest of its hosting module's serial number.
    pub fn from_serial(serial_number: &str) -> Self {
        DhtNodeId(Digest::of(serial_number.as_bytes()))
    }

    pub fn distance(&self, key: &Digest) -> Digest {
        self.0.xor(key)
    }
}

impl fmt::Debug for DhtNodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Node({})", &self.0.to_hex()[..8])
    }
}

impl fmt::Display for DhtNodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(&self.0, f)
    }
}

/// The node id closest to `key` by XOR distance.
pub fn owner_of<'a>(key: &Digest, nodes: impl IntoIterator<Item = &'a DhtNodeId>) -> Result<DhtNodeId, DhtError> {
    nodes
        .into_iter()
        .min_by_key(|n| n.distance(key))
        .copied()
        .ok_or(DhtError::NoNodes)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StoreReceipt {
    pub stored_at: DhtNodeId,
    pub hops: usize,
    /// The owner was down and the record went to the closest live node.
    pub fallback: bool,
    pub evicted: Vec<Digest>,
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Lookup {
    Found {
        record: AuditRecord,
        holder: DhtNodeId,
        hops: usize,
    },
    NotFound {
        hops: usize,
    },
    /// The origin cannot reach any other node.
    Partitioned,
}

/// Outcome of a majority vote over replicated readings.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Discrepancy {
    Consistent,
    /// Modules whose reading differs from the strict majority value.
    Minority(BTreeSet<String>),
    /// Several values share the top count; every participant is listed.
    Tie(BTreeSet<String>),
}

impl Discrepancy {
    pub fn is_flagged(&self) -> bool {
        !matches!(self, Discrepancy::Consistent)
    }

    pub fn modules(&self) -> BTreeSet<String> {
        match self {
            Discrepancy::Consistent => BTreeSet::new(),
            Discrepancy::Minority(m) | Discrepancy::Tie(m) => m.clone(),
        }
    }
}

pub fn detect_discrepancy<V: Ord>(field: &str, readings: &BTreeMap<String, V>) -> Result<Discrepancy, DhtError> {
    if readings.len() < 2 {
        return Err(DhtError::TooFewReadings {
            field: field.to_string(),
        });
    }
    let mut counts: BTreeMap<&V, usize> = BTreeMap::new();
    for v in readings.values() {
        *counts.entry(v).or_default() += 1;
    }
    if counts.len() == 1 {
        return Ok(Discrepancy::Consistent);
    }
    let top = *counts.values().max().unwrap();
    let mut leaders = counts.iter().filter(|(_, &c)| c == top).map(|(v, _)| *v);
    let majority = leaders.next().unwrap();
    if leaders.next().is_some() {
        return Ok(Discrepancy::Tie(readings.keys().cloned().collect()));
    }
    Ok(Discrepancy::Minority(
        readings
            .iter()
            .filter(|(_, v)| *v != majority)
            .map(|(m, _)| m.clone())
            .collect(),
    ))
}

/// All DHT nodes of one vehicle, with scripted liveness.
#[derive(Debug, Clone)]
pub struct DhtNetwork {
    nodes: BTreeMap<DhtNodeId, DhtNode>,
    down: BTreeSet<DhtNodeId>,
    bucket_capacity: usize,
    store_limit_bytes: usize,
    next_seq: u64,
}

impl DhtNetwork {
    pub fn new(bucket_capacity: usize, store_limit_bytes: usize) -> Self {
        Self {
            nodes: BTreeMap::new(),
            down: BTreeSet::new(),
            bucket_capacity,
            store_limit_bytes,
            next_seq: 0,
        }
    }

    /// Builds a network and populates each routing table in an order
    /// shuffled by `rng`.
    pub fn with_nodes<R: Rng>(
        ids: impl IntoIterator<Item = DhtNodeId>,
        bucket_capacity: usize,
        store_limit_bytes: usize,
        rng: &mut R,
    ) -> Result<Self, DhtError> {
        let mut net = Self::new(bucket_capacity, store_limit_bytes);
        for id in ids {
            if net.nodes.contains_key(&id) {
                return Err(DhtError::DuplicateNode(id));
            }
            net.nodes
                .insert(id, DhtNode::new(id, bucket_capacity, store_limit_bytes));
        }
        let all: Vec<DhtNodeId> = net.nodes.keys().copied().collect();
        for node in net.nodes.values_mut() {
            let mut peers = all.clone();
            peers.shuffle(rng);
            for p in peers {
                node.routing_table.insert(p);
            }
        }
        Ok(net)
    }

    /// Joins a node; every existing node learns of it and vice versa.
    pub fn add_node(&mut self, id: DhtNodeId) -> Result<(), DhtError> {
        if self.nodes.contains_key(&id) {
            return Err(DhtError::DuplicateNode(id));
        }
        let mut node = DhtNode::new(id, self.bucket_capacity, self.store_limit_bytes);
        let floor = self.nodes.values().map(|n| n.checkpoint_floor()).max().unwrap_or(0);
        node.set_checkpoint_floor(floor);
        for (other_id, other) in self.nodes.iter_mut() {
            other.routing_table.insert(id);
            node.routing_table.insert(*other_id);
        }
        self.nodes.insert(id, node);
        self.refresh_tables();
        Ok(())
    }

    /// Removes a node and everything it stored.
    pub fn remove_node(&mut self, id: &DhtNodeId) -> Result<DhtNode, DhtError> {
        let node = self.nodes.remove(id).ok_or(DhtError::UnknownNode(*id))?;
        self.down.remove(id);
        for other in self.nodes.values_mut() {
            other.routing_table.remove(id);
        }
        self.refresh_tables();
        Ok(node)
    }

    pub fn fail_node(&mut self, id: &DhtNodeId) -> Result<(), DhtError> {
        if !self.nodes.contains_key(id) {
            return Err(DhtError::UnknownNode(*id));
        }
        self.down.insert(*id);
        self.refresh_tables();
        Ok(())
    }

    pub fn recover_node(&mut self, id: &DhtNodeId) -> Result<(), DhtError> {
        if !self.nodes.contains_key(id) {
            return Err(DhtError::UnknownNode(*id));
        }
        self.down.remove(id);
        self.refresh_tables();
        Ok(())
    }

    fn refresh_tables(&mut self) {
        let down = &self.down;
        for node in self.nodes.values_mut() {
            node.routing_table.refresh(|p| !down.contains(p));
        }
    }

    pub fn is_live(&self, id: &DhtNodeId) -> bool {
        self.nodes.contains_key(id) && !self.down.contains(id)
    }

    pub fn node(&self, id: &DhtNodeId) -> Option<&DhtNode> {
        self.nodes.get(id)
    }

    pub fn node_mut(&mut self, id: &DhtNodeId) -> Option<&mut DhtNode> {
        self.nodes.get_mut(id)
    }

    pub fn nodes(&self) -> impl Iterator<Item = &DhtNode> {
        self.nodes.values()
    }

    pub fn node_ids(&self) -> impl Iterator<Item = &DhtNodeId> {
        self.nodes.keys()
    }

    pub fn live_ids(&self) -> impl Iterator<Item = &DhtNodeId> {
        self.nodes.keys().filter(|id| !self.down.contains(id))
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Sequence number the next stored record will receive.
    pub fn next_seq(&self) -> u64 {
        self.next_seq
    }

    /// Marks everything written so far as eviction-eligible on every node.
    pub fn advance_checkpoint_floor(&mut self) -> u64 {
        let floor = self.next_seq;
        for node in self.nodes.values_mut() {
            node.set_checkpoint_floor(floor);
        }
        floor
    }

    /// Greedy walk from `origin` toward `key`; returns the visited path.
    fn walk(&self, origin: DhtNodeId, key: &Digest) -> Vec<DhtNodeId> {
        let mut path = vec![origin];
        let mut current = origin;
        loop {
            let node = &self.nodes[&current];
            let best = node
                .routing_table
                .peers()
                .filter(|p| self.is_live(p))
                .min_by_key(|p| p.distance(key));
            match best {
                Some(b) if b.distance(key) < current.distance(key) => {
                    current = *b;
                    path.push(current);
                }
                _ => return path,
            }
        }
    }

    pub fn put(&mut self, origin: DhtNodeId, record: AuditRecord) -> Result<StoreReceipt, DhtError> {
        if !self.nodes.contains_key(&origin) {
            return Err(DhtError::UnknownNode(origin));
        }
        if !self.is_live(&origin) {
            return Err(DhtError::OriginDown(origin));
        }
        if !record.is_consistent() {
            return Err(DhtError::InvalidRecord(record.record_key));
        }
        let key = record.record_key;
        let path = self.walk(origin, &key);
        let stored_at = *path.last().unwrap();
        let hops = path.len() - 1;
        let fallback = owner_of(&key, self.nodes.keys())? != stored_at;

        let node = self.nodes.get_mut(&stored_at).unwrap();
        if let Some(existing) = node.get(&key) {
            return Ok(StoreReceipt {
                stored_at,
                hops,
                fallback,
                evicted: Vec::new(),
                seq: existing.seq,
            });
        }
        let stored = StoredRecord {
            record,
            seq: self.next_seq,
        };
        let evicted = node.evict(stored.encoded_len())?;
        node.insert(stored);
        self.next_seq += 1;
        Ok(StoreReceipt {
            stored_at,
            hops,
            fallback,
            evicted,
            seq: self.next_seq - 1,
        })
    }

    /// Hop budget for a lookup from `origin`: twice its non-empty bucket count.
    pub fn max_hops(&self, origin: &DhtNodeId) -> usize {
        self.nodes
            .get(origin)
            .map_or(2, |n| 2 * n.routing_table.bucket_count().max(1))
    }

    pub fn get(&self, origin: DhtNodeId, key: &Digest) -> Result<Lookup, DhtError> {
        let node = self.nodes.get(&origin).ok_or(DhtError::UnknownNode(origin))?;
        if !self.is_live(&origin) {
            return Err(DhtError::OriginDown(origin));
        }
        if let Some(s) = node.get(key) {
            return Ok(Lookup::Found {
                record: s.record.clone(),
                holder: origin,
                hops: 0,
            });
        }
        if self.nodes.len() > 1 && !node.routing_table.peers().any(|p| self.is_live(p)) {
            return Ok(Lookup::Partitioned);
        }
        let budget = self.max_hops(&origin);
        let path = self.walk(origin, key);
        let mut hops = 0;
        for id in path.iter().skip(1) {
            hops += 1;
            if let Some(s) = self.nodes[id].get(key) {
                return Ok(Lookup::Found {
                    record: s.record.clone(),
                    holder: *id,
                    hops,
                });
            }
        }
        // Probe the closest peers of the final node for fallback copies.
        let last = *path.last().unwrap();
        for peer in self.nodes[&last].routing_table.closest(key) {
            if hops >= budget {
                break;
            }
            if path.contains(&peer) || !self.is_live(&peer) {
                continue;
            }
            hops += 1;
            if let Some(s) = self.nodes[&peer].get(key) {
                return Ok(Lookup::Found {
                    record: s.record.clone(),
                    holder: peer,
                    hops,
                });
            }
        }
        Ok(Lookup::NotFound { hops })
    }

    /// Newest record for `module_id` held by any live node.
    pub fn last_known_hash(&self, module_id: &str) -> Option<&AuditRecord> {
        self.live_ids()
            .flat_map(|id| self.nodes[id].records())
            .map(|s| &s.record)
            .filter(|r| r.module_id == module_id)
            .max_by_key(|r| (r.sim_time, r.record_key))
    }
}
