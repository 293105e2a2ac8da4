//! The OEM full node: a local append-only, hash-chained block ledger that
//! stands in for a public chain, plus the OEM checksum against the approved
//! meta-hash library.
//!
//! Light clients hand submissions to a [`LedgerEndpoint`] as wire text. The
//! [`FullNode`] stages accepted submissions and seals them into one block per
//! batch. Swapping in a real chain client means implementing
//! [`LedgerEndpoint`] against it.

mod chain;
mod verifier;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

pub use chain::{
    merkle_root, verify_chain, BatchOutcome, ChainStatus, HistoryEntry, Ledger, LedgerBlock, LedgerError, Submission,
    LEDGER_MAGIC,
};
pub use verifier::{oem_checksum, ApprovedLibrary, Provenance, ResponsePolicy, Verdict, VerdictStatus, VerifyError};

/// Where a light client delivers its submissions.
pub trait LedgerEndpoint {
    /// Accepts one wire-format submission line, or rejects it.
    fn submit(&mut self, wire: &str) -> Result<(), LedgerError>;
}

/// A full node with a staging area for the current batch.
#[derive(Debug, Default)]
pub struct FullNode {
    ledger: Ledger,
    staged: Vec<Submission>,
    persist_to: Option<PathBuf>,
}

impl FullNode {
    pub fn new() -> Self {
        Self::default()
    }

    /// A node that appends every sealed block to `path`, writing the file
    /// header first if the file is new or empty.
    pub fn persistent(path: impl AsRef<Path>) -> std::io::Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut file = OpenOptions::new().create(true).append(true).open(&path)?;
        if file.metadata()?.len() == 0 {
            file.write_all(LEDGER_MAGIC.as_bytes())?;
        }
        Ok(Self {
            ledger: Ledger::new(),
            staged: Vec::new(),
            persist_to: Some(path),
        })
    }

    pub fn ledger(&self) -> &Ledger {
        &self.ledger
    }

    pub fn staged(&self) -> &[Submission] {
        &self.staged
    }

    fn staged_last(&self, vehicle_key: &crate::Digest) -> Option<u64> {
        self.staged
            .iter()
            .filter(|s| s.vehicle_key == *vehicle_key)
            .map(|s| s.checkpoint_seq)
            .max()
    }

    /// Seals the staged batch into a block. Entries are ordered by
    /// `(sim_time, vehicle_key, checkpoint_seq)` so the block does not depend
    /// on the order vehicles delivered in.
    pub fn seal(&mut self) -> std::io::Result<BatchOutcome> {
        let mut batch = std::mem::take(&mut self.staged);
        batch.sort_by(|a, b| {
            (a.sim_time, a.vehicle_key, a.checkpoint_seq).cmp(&(b.sim_time, b.vehicle_key, b.checkpoint_seq))
        });
        let outcome = self.ledger.append_submissions(batch);
        if let (Some(block), Some(path)) = (&outcome.block, &self.persist_to) {
            let mut file = OpenOptions::new().append(true).open(path)?;
            file.write_all(&block.to_record())?;
        }
        Ok(outcome)
    }
}

impl LedgerEndpoint for FullNode {
    fn submit(&mut self, wire: &str) -> Result<(), LedgerError> {
        let sub: Submission = wire.parse()?;
        let last = self
            .ledger
            .last_seq(&sub.vehicle_key)
            .max(self.staged_last(&sub.vehicle_key));
        if let Some(last) = last {
            if sub.checkpoint_seq <= last {
                return Err(LedgerError::Replay {
                    vehicle_key: sub.vehicle_key,
                    seq: sub.checkpoint_seq,
                    last,
                });
            }
        }
        self.staged.push(sub);
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::auditcore::{Digest, EventType};

    fn wire(vehicle: u8, seq: u64, t: u64) -> String {
        Submission {
            vehicle_key: Digest([vehicle; 32]),
            checkpoint_seq: seq,
            meta_digest: Digest::of(&[seq as u8]),
            trigger: EventType::ObdPlugIn,
            sim_time: t,
        }
        .to_wire()
    }

    #[test]
    fn batch_order_is_arrival_independent() {
        let mut a = FullNode::new();
        let mut b = FullNode::new();
        let subs = [wire(2, 1, 5), wire(1, 1, 5), wire(1, 2, 3)];
        for s in &subs {
            a.submit(s).unwrap();
        }
        for s in subs.iter().rev() {
            // Vehicle 1's seq 1 must be staged before its seq 2.
            if s == &subs[2] {
                continue;
            }
            b.submit(s).unwrap();
        }
        b.submit(&subs[2]).unwrap();
        a.seal().unwrap();
        b.seal().unwrap();
        assert_eq!(a.ledger().to_file_bytes(), b.ledger().to_file_bytes());
    }

    #[test]
    fn staged_replay_and_malformed_rejected() {
        let mut n = FullNode::new();
        n.submit(&wire(1, 1, 0)).unwrap();
        assert!(matches!(n.submit(&wire(1, 1, 0)), Err(LedgerError::Replay { .. })));
        assert!(matches!(n.submit("garbage"), Err(LedgerError::Malformed(_))));
        n.seal().unwrap();
        assert!(matches!(n.submit(&wire(1, 1, 0)), Err(LedgerError::Replay { .. })));
        assert!(n.seal().unwrap().block.is_none());
    }

    #[test]
    fn persistent_node_writes_verifiable_file() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.log");
        let mut n = FullNode::persistent(&path).unwrap();
        for s in 1..4 {
            n.submit(&wire(1, s, s)).unwrap();
            n.seal().unwrap();
        }
        let bytes = std::fs::read(&path).unwrap();
        assert_eq!(bytes, n.ledger().to_file_bytes());
        assert_eq!(verify_chain(&bytes).unwrap(), ChainStatus::Valid { blocks: 3 });
    }
}
