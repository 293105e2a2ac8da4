use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::auditcore::{Digest, EventType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum LedgerError {
    #[error("malformed submission: {0}")]
    Malformed(String),
    #[error("replay: vehicle {vehicle_key} checkpoint {seq} does not exceed last recorded {last}")]
    Replay { vehicle_key: Digest, seq: u64, last: u64 },
    #[error("ledger file format error: {0}")]
    Format(String),
    #[error("ledger chain broken at block {0}")]
    Broken(u64),
    #[error("malformed history line {line}")]
    MalformedHistory { line: usize },
}

/// One light-client submission as carried on the wire:
/// `vehicle_key_hex | checkpoint_seq | digest_hex | trigger | sim_time`.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Submission {
    pub vehicle_key: Digest,
    pub checkpoint_seq: u64,
    pub meta_digest: Digest,
    pub trigger: EventType,
    pub sim_time: u64,
}

const WIRE_SEP: &str = " | ";

impl Submission {
    pub fn to_wire(&self) -> String {
        format!(
            "{}{WIRE_SEP}{}{WIRE_SEP}{}{WIRE_SEP}{}{WIRE_SEP}{}",
            self.vehicle_key, self.checkpoint_seq, self.meta_digest, self.trigger, self.sim_time
        )
    }

    /// Merkle leaf: digest of the canonical wire text.
    pub fn entry_digest(&self) -> Digest {
        Digest::of(self.to_wire().as_bytes())
    }
}

fn parse_canonical_u64(s: &str) -> Option<u64> {
    let v: u64 = s.parse().ok()?;
    (v.to_string() == s).then_some(v)
}

impl FromStr for Submission {
    type Err = LedgerError;

    /// Strict: the parsed value must re-render to exactly the input.
    fn from_str(line: &str) -> Result<Self, Self::Err> {
        let bad = |why: &str| LedgerError::Malformed(format!("{why}: `{line}`"));
        let cols: Vec<&str> = line.split(WIRE_SEP).collect();
        let [key, seq, digest, trigger, time] = cols.as_slice() else {
            return Err(bad("expected 5 fields"));
        };
        let sub = Submission {
            vehicle_key: key.parse().map_err(|_| bad("vehicle key"))?,
            checkpoint_seq: parse_canonical_u64(seq).ok_or_else(|| bad("checkpoint_seq"))?,
            meta_digest: digest.parse().map_err(|_| bad("digest"))?,
            trigger: trigger.parse().map_err(|_| bad("trigger"))?,
            sim_time: parse_canonical_u64(time).ok_or_else(|| bad("sim_time"))?,
        };
        if sub.to_wire() != line {
            return Err(bad("non-canonical encoding"));
        }
        Ok(sub)
    }
}

/// Binary Merkle root; an odd node at any level is paired with itself.
/// The root of no leaves is the digest of the empty string.
pub fn merkle_root(leaves: &[Digest]) -> Digest {
    if leaves.is_empty() {
        return Digest::of(b"");
    }
    let mut level = leaves.to_vec();
    while level.len() > 1 {
        level = level
            .chunks(2)
            .map(|pair| {
                let right = pair.get(1).unwrap_or(&pair[0]);
                let mut buf = [0u8; 64];
                buf[..32].copy_from_slice(pair[0].as_bytes());
                buf[32..].copy_from_slice(right.as_bytes());
                Digest::of(&buf)
            })
            .collect();
    }
    level[0]
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LedgerBlock {
    pub index: u64,
    pub prev_hash: Digest,
    pub entries: Vec<Submission>,
    pub entries_root: Digest,
    pub block_hash: Digest,
}

impl LedgerBlock {
    pub fn new(index: u64, prev_hash: Digest, entries: Vec<Submission>) -> Self {
        let leaves: Vec<Digest> = entries.iter().map(Submission::entry_digest).collect();
        let entries_root = merkle_root(&leaves);
        let block_hash = Self::compute_hash(index, &prev_hash, &entries_root);
        Self {
            index,
            prev_hash,
            entries,
            entries_root,
            block_hash,
        }
    }

    pub fn compute_hash(index: u64, prev_hash: &Digest, entries_root: &Digest) -> Digest {
        Digest::of(format!("entries_root={entries_root}\nindex={index}\nprev_hash={prev_hash}").as_bytes())
    }

    pub fn is_self_consistent(&self) -> bool {
        let leaves: Vec<Digest> = self.entries.iter().map(Submission::entry_digest).collect();
        self.entries_root == merkle_root(&leaves)
            && self.block_hash == Self::compute_hash(self.index, &self.prev_hash, &self.entries_root)
    }

    /// Header line followed by one line per entry, each newline-terminated.
    pub fn canonical_text(&self) -> String {
        let mut out = format!(
            "{}|{}|{}|{}\n",
            self.index, self.prev_hash, self.entries_root, self.block_hash
        );
        for e in &self.entries {
            out.push_str(&e.to_wire());
            out.push('\n');
        }
        out
    }

    /// Length-prefixed record: `<byte length>\n<canonical text>`.
    pub fn to_record(&self) -> Vec<u8> {
        let text = self.canonical_text();
        format!("{}\n{}", text.len(), text).into_bytes()
    }

    fn parse_text(text: &str) -> Option<Self> {
        let body = text.strip_suffix('\n')?;
        let mut lines = body.split('\n');
        let header: Vec<&str> = lines.next()?.split('|').collect();
        let [index, prev, root, hash] = header.as_slice() else {
            return None;
        };
        let entries = lines.map(|l| l.parse().ok()).collect::<Option<Vec<Submission>>>()?;
        Some(Self {
            index: parse_canonical_u64(index)?,
            prev_hash: prev.parse().ok()?,
            entries_root: root.parse().ok()?,
            block_hash: hash.parse().ok()?,
            entries,
        })
    }
}

pub const LEDGER_MAGIC: &str = "AUTOBOX-LEDGER 1\n";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ChainStatus {
    Valid { blocks: u64 },
    BrokenAt(u64),
}

impl fmt::Display for ChainStatus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChainStatus::Valid { blocks } => write!(f, "valid ({blocks} blocks)"),
            ChainStatus::BrokenAt(i) => write!(f, "broken-at {i}"),
        }
    }
}

/// Walks a persisted ledger, returning the parsed prefix of valid blocks and
/// the index of the first block that fails to parse, link or recompute.
fn scan(bytes: &[u8]) -> Result<(Vec<LedgerBlock>, Option<u64>), LedgerError> {
    let body = bytes
        .strip_prefix(LEDGER_MAGIC.as_bytes())
        .ok_or_else(|| LedgerError::Format("missing ledger header".into()))?;
    let mut blocks: Vec<LedgerBlock> = Vec::new();
    let mut pos = 0;
    while pos < body.len() {
        let index = blocks.len() as u64;
        let Some(block) = parse_record(&body[pos..]).map(|(b, used)| {
            pos += used;
            b
        }) else {
            return Ok((blocks, Some(index)));
        };
        let expected_prev = blocks.last().map_or(Digest::ZERO, |b| b.block_hash);
        if block.index != index || block.prev_hash != expected_prev || !block.is_self_consistent() {
            return Ok((blocks, Some(index)));
        }
        blocks.push(block);
    }
    Ok((blocks, None))
}

fn parse_record(bytes: &[u8]) -> Option<(LedgerBlock, usize)> {
    let nl = bytes.iter().position(|&b| b == b'\n')?;
    let len_str = std::str::from_utf8(&bytes[..nl]).ok()?;
    let len = parse_canonical_u64(len_str)? as usize;
    let start = nl + 1;
    let text = std::str::from_utf8(bytes.get(start..start.checked_add(len)?)?).ok()?;
    let block = LedgerBlock::parse_text(text)?;
    // Every byte must be the canonical rendering of the parsed block.
    (block.canonical_text() == text).then_some((block, start + len))
}

/// Recomputes every block hash and link in a persisted ledger.
pub fn verify_chain(bytes: &[u8]) -> Result<ChainStatus, LedgerError> {
    let (blocks, broken) = scan(bytes)?;
    Ok(match broken {
        Some(i) => ChainStatus::BrokenAt(i),
        None => ChainStatus::Valid {
            blocks: blocks.len() as u64,
        },
    })
}

/// One row of a vehicle's checkpoint history.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HistoryEntry {
    pub checkpoint_seq: u64,
    pub meta_digest: Digest,
    pub trigger: EventType,
    pub sim_time: u64,
    pub block_index: u64,
}

impl HistoryEntry {
    /// `checkpoint_seq<TAB>meta_digest_hex<TAB>trigger<TAB>sim_time<TAB>block_index`
    pub fn to_machine_line(&self) -> String {
        format!(
            "{}\t{}\t{}\t{}\t{}",
            self.checkpoint_seq, self.meta_digest, self.trigger, self.sim_time, self.block_index
        )
    }

    pub fn parse_machine_lines(text: &str) -> Result<Vec<Self>, LedgerError> {
        text.lines()
            .enumerate()
            .filter(|(_, l)| !l.is_empty())
            .map(|(i, l)| {
                let bad = || LedgerError::MalformedHistory { line: i + 1 };
                let cols: Vec<&str> = l.split('\t').collect();
                let [seq, digest, trigger, time, block] = cols.as_slice() else {
                    return Err(bad());
                };
                Ok(HistoryEntry {
                    checkpoint_seq: parse_canonical_u64(seq).ok_or_else(bad)?,
                    meta_digest: digest.parse().map_err(|_| bad())?,
                    trigger: trigger.parse().map_err(|_| bad())?,
                    sim_time: parse_canonical_u64(time).ok_or_else(bad)?,
                    block_index: parse_canonical_u64(block).ok_or_else(bad)?,
                })
            })
            .collect()
    }
}

/// Result of appending one batch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BatchOutcome {
    pub block: Option<LedgerBlock>,
    pub rejected: Vec<(Submission, LedgerError)>,
}

/// The append-only chain held by the full node.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Ledger {
    blocks: Vec<LedgerBlock>,
    last_seq: BTreeMap<Digest, u64>,
}

impl Ledger {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[LedgerBlock] {
        &self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn head_hash(&self) -> Digest {
        self.blocks.last().map_or(Digest::ZERO, |b| b.block_hash)
    }

    pub fn last_seq(&self, vehicle_key: &Digest) -> Option<u64> {
        self.last_seq.get(vehicle_key).copied()
    }

    /// Checks a submission against the per-vehicle sequence index.
    pub fn check(&self, sub: &Submission) -> Result<(), LedgerError> {
        match self.last_seq(&sub.vehicle_key) {
            Some(last) if sub.checkpoint_seq <= last => Err(LedgerError::Replay {
                vehicle_key: sub.vehicle_key,
                seq: sub.checkpoint_seq,
                last,
            }),
            _ => Ok(()),
        }
    }

    /// Appends the acceptable submissions, in the given order, as one block.
    /// Replays (including within the batch) are rejected and reported.
    pub fn append_submissions(&mut self, submissions: Vec<Submission>) -> BatchOutcome {
        let mut accepted = Vec::new();
        let mut rejected = Vec::new();
        for sub in submissions {
            match self.check(&sub) {
                Ok(()) => {
                    self.last_seq.insert(sub.vehicle_key, sub.checkpoint_seq);
                    accepted.push(sub);
                }
                Err(e) => rejected.push((sub, e)),
            }
        }
        if accepted.is_empty() {
            return BatchOutcome { block: None, rejected };
        }
        let block = LedgerBlock::new(self.blocks.len() as u64, self.head_hash(), accepted);
        self.blocks.push(block.clone());
        BatchOutcome {
            block: Some(block),
            rejected,
        }
    }

    pub fn query_history(&self, vehicle_key: &Digest) -> Vec<HistoryEntry> {
        let mut out: Vec<HistoryEntry> = self
            .blocks
            .iter()
            .flat_map(|b| {
                b.entries
                    .iter()
                    .filter(|e| e.vehicle_key == *vehicle_key)
                    .map(|e| HistoryEntry {
                        checkpoint_seq: e.checkpoint_seq,
                        meta_digest: e.meta_digest,
                        trigger: e.trigger,
                        sim_time: e.sim_time,
                        block_index: b.index,
                    })
            })
            .collect();
        out.sort_by_key(|h| h.checkpoint_seq);
        out
    }

    /// The full persisted form: header line then one record per block.
    pub fn to_file_bytes(&self) -> Vec<u8> {
        let mut out = LEDGER_MAGIC.as_bytes().to_vec();
        for b in &self.blocks {
            out.extend_from_slice(&b.to_record());
        }
        out
    }

    /// Loads a persisted ledger; fails unless the whole chain verifies.
    pub fn from_file_bytes(bytes: &[u8]) -> Result<Self, LedgerError> {
        let (blocks, broken) = scan(bytes)?;
        if let Some(i) = broken {
            return Err(LedgerError::Broken(i));
        }
        let mut last_seq = BTreeMap::new();
        for e in blocks.iter().flat_map(|b| &b.entries) {
            last_seq.insert(e.vehicle_key, e.checkpoint_seq);
        }
        Ok(Self { blocks, last_seq })
    }
}
