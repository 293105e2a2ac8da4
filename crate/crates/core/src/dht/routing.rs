use std::collections::BTreeMap;

use super::DhtNodeId;
use crate::auditcore::Digest;

#[derive(Debug, Clone, Default)]
struct Bucket {
    active: Vec<DhtNodeId>,
    replacements: Vec<DhtNodeId>,
}

/// Peers bucketized by shared-prefix length with the owning node.
///
/// Each bucket holds at most `k` active peers; further peers in the same
/// range wait in a replacement list and are promoted when an active peer
/// becomes unreachable.
#[derive(Debug, Clone)]
pub struct RoutingTable {
    own: DhtNodeId,
    k: usize,
    buckets: BTreeMap<usize, Bucket>,
}

impl RoutingTable {
    pub fn new(own: DhtNodeId, k: usize) -> Self {
        assert!(k > 0, "bucket capacity must be positive");
        Self {
            own,
            k,
            buckets: BTreeMap::new(),
        }
    }

    pub fn capacity(&self) -> usize {
        self.k
    }

    pub fn bucket_index(&self, peer: &DhtNodeId) -> usize {
        self.own.0.shared_prefix_len(&peer.0)
    }

    pub fn insert(&mut self, peer: DhtNodeId) {
        if peer == self.own || self.contains(&peer) {
            return;
        }
        let k = self.k;
        let bucket = self.buckets.entry(self.own.0.shared_prefix_len(&peer.0)).or_default();
        if bucket.active.len() < k {
            bucket.active.push(peer);
        } else {
            bucket.replacements.push(peer);
        }
    }

    pub fn remove(&mut self, peer: &DhtNodeId) {
        let idx = self.bucket_index(peer);
        if let Some(bucket) = self.buckets.get_mut(&idx) {
            bucket.active.retain(|p| p != peer);
            bucket.replacements.retain(|p| p != peer);
            if bucket.active.is_empty() && bucket.replacements.is_empty() {
                self.buckets.remove(&idx);
            }
        }
    }

    pub fn contains(&self, peer: &DhtNodeId) -> bool {
        self.buckets
            .get(&self.bucket_index(peer))
            .is_some_and(|b| b.active.contains(peer) || b.replacements.contains(peer))
    }

    /// Demotes unreachable active peers and promotes reachable replacements,
    /// in list order, until every bucket holds `min(k, reachable)` actives.
    pub fn refresh(&mut self, is_live: impl Fn(&DhtNodeId) -> bool) {
        for bucket in self.buckets.values_mut() {
            let (live, dead): (Vec<_>, Vec<_>) = bucket.active.drain(..).partition(|p| is_live(p));
            bucket.active = live;
            bucket.replacements.extend(dead);
            let mut i = 0;
            while bucket.active.len() < self.k && i < bucket.replacements.len() {
                if is_live(&bucket.replacements[i]) {
                    let p = bucket.replacements.remove(i);
                    bucket.active.push(p);
                } else {
                    i += 1;
                }
            }
        }
    }

    /// Active peers across all buckets.
    pub fn peers(&self) -> impl Iterator<Item = &DhtNodeId> {
        self.buckets.values().flat_map(|b| b.active.iter())
    }

    pub fn bucket(&self, index: usize) -> &[DhtNodeId] {
        self.buckets.get(&index).map(|b| b.active.as_slice()).unwrap_or(&[])
    }

    /// Number of buckets holding at least one active peer.
    pub fn bucket_count(&self) -> usize {
        self.buckets.values().filter(|b| !b.active.is_empty()).count()
    }

    /// Active peers ordered by XOR distance to `key`.
    pub fn closest(&self, key: &Digest) -> Vec<DhtNodeId> {
        let mut peers: Vec<_> = self.peers().copied().collect();
        peers.sort_by_key(|p| p.0.xor(key));
        peers
    }
}
