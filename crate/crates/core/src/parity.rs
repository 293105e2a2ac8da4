//! Single-parity clusters of node stores.
//!
//! A cluster holds `d >= 2` data stores and one parity store whose byte `j`
//! is the XOR of byte `j` of every data store (short stores read as zero).
//! Plain parity detects a fault but cannot say where it is, so every stored
//! record is also indexed with its own digest: a device whose records no
//! longer hash correctly is the faulty one, and XOR of the remaining devices
//! rebuilds it.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use thiserror::Error;

use crate::auditcore::Digest;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParityError {
    #[error("a parity cluster needs at least 2 data stores, got {0}")]
    TooFewStores(usize),
    #[error("uncorrectable: record mismatches on data devices {0:?}")]
    MultiFault(Vec<usize>),
    #[error("no device {0}")]
    NoSuchDevice(DeviceRef),
    #[error("offset {offset} outside device {device} of length {len}")]
    OffsetOutOfRange {
        device: DeviceRef,
        offset: usize,
        len: usize,
    },
    #[error("record range {offset}+{length} outside data device {device}")]
    RecordOutOfRange {
        device: usize,
        offset: usize,
        length: usize,
    },
    #[error("snapshot: {0}")]
    Snapshot(String),
}

/// A device of a cluster.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum DeviceRef {
    Data(usize),
    Parity,
}

impl fmt::Display for DeviceRef {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DeviceRef::Data(i) => write!(f, "{i}"),
            DeviceRef::Parity => f.write_str("parity"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IndexEntry {
    pub device: usize,
    pub offset: usize,
    pub length: usize,
    pub record_hash: Digest,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ScrubReport {
    Clean,
    Corrupt {
        device: DeviceRef,
        records: BTreeSet<Digest>,
    },
}

/// Byte-wise XOR of all stores, as long as the longest one.
pub fn compute_parity<S: AsRef<[u8]>>(data_stores: &[S]) -> Result<Vec<u8>, ParityError> {
    if data_stores.len() < 2 {
        return Err(ParityError::TooFewStores(data_stores.len()));
    }
    let len = data_stores.iter().map(|s| s.as_ref().len()).max().unwrap_or(0);
    let mut out = vec![0u8; len];
    for s in data_stores {
        xor_into(&mut out, s.as_ref());
    }
    Ok(out)
}

fn xor_into(acc: &mut [u8], src: &[u8]) {
    for (a, b) in acc.iter_mut().zip(src) {
        *a ^= b;
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ParityCluster {
    data: Vec<Vec<u8>>,
    parity: Vec<u8>,
    index: BTreeMap<Digest, IndexEntry>,
}

impl ParityCluster {
    pub fn new(data_stores: Vec<Vec<u8>>) -> Result<Self, ParityError> {
        let parity = compute_parity(&data_stores)?;
        Ok(Self {
            data: data_stores,
            parity,
            index: BTreeMap::new(),
        })
    }

    /// Lays out each device as the concatenation of its records and indexes them.
    pub fn from_records(devices: Vec<Vec<(Digest, Vec<u8>)>>) -> Result<Self, ParityError> {
        let mut data = Vec::with_capacity(devices.len());
        let mut entries = Vec::new();
        for (device, records) in devices.iter().enumerate() {
            let mut bytes = Vec::new();
            for (key, rec) in records {
                entries.push((*key, device, bytes.len(), rec.len()));
                bytes.extend_from_slice(rec);
            }
            data.push(bytes);
        }
        let mut cluster = Self::new(data)?;
        for (key, device, offset, length) in entries {
            cluster.index_record(key, device, offset, length)?;
        }
        Ok(cluster)
    }

    /// Indexes a byte range of a data device, hashing its current contents.
    pub fn index_record(
        &mut self,
        key: Digest,
        device: usize,
        offset: usize,
        length: usize,
    ) -> Result<(), ParityError> {
        let store = self
            .data
            .get(device)
            .ok_or(ParityError::NoSuchDevice(DeviceRef::Data(device)))?;
        let bytes = store
            .get(offset..offset + length)
            .ok_or(ParityError::RecordOutOfRange { device, offset, length })?;
        self.index.insert(
            key,
            IndexEntry {
                device,
                offset,
                length,
                record_hash: Digest::of(bytes),
            },
        );
        Ok(())
    }

    pub fn data_count(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self, device: usize) -> Option<&[u8]> {
        self.data.get(device).map(Vec::as_slice)
    }

    pub fn parity(&self) -> &[u8] {
        &self.parity
    }

    pub fn index(&self) -> &BTreeMap<Digest, IndexEntry> {
        &self.index
    }

    pub fn device(&self, device: DeviceRef) -> Result<&[u8], ParityError> {
        match device {
            DeviceRef::Data(i) => self.data(i).ok_or(ParityError::NoSuchDevice(device)),
            DeviceRef::Parity => Ok(&self.parity),
        }
    }

    fn device_mut(&mut self, device: DeviceRef) -> Result<&mut Vec<u8>, ParityError> {
        match device {
            DeviceRef::Data(i) => self.data.get_mut(i).ok_or(ParityError::NoSuchDevice(device)),
            DeviceRef::Parity => Ok(&mut self.parity),
        }
    }

    /// XOR of every store and the parity store is zero at every position.
    pub fn parity_holds(&self) -> bool {
        if self.data.iter().any(|d| d.len() > self.parity.len()) {
            return false;
        }
        let mut acc = self.parity.clone();
        for d in &self.data {
            xor_into(&mut acc, d);
        }
        acc.iter().all(|&b| b == 0)
    }

    fn mismatches_in(&self, device: usize, bytes: &[u8]) -> BTreeSet<Digest> {
        self.index
            .iter()
            .filter(|(_, e)| e.device == device)
            .filter(|(_, e)| {
                bytes
                    .get(e.offset..e.offset + e.length)
                    .is_none_or(|b| Digest::of(b) != e.record_hash)
            })
            .map(|(k, _)| *k)
            .collect()
    }

    /// Records on `device` whose bytes no longer match their indexed digest.
    pub fn mismatched_records(&self, device: usize) -> BTreeSet<Digest> {
        match self.data.get(device) {
            Some(bytes) => self.mismatches_in(device, bytes),
            None => BTreeSet::new(),
        }
    }

    pub fn scrub(&self) -> Result<ScrubReport, ParityError> {
        let bad: Vec<(usize, BTreeSet<Digest>)> = (0..self.data.len())
            .map(|i| (i, self.mismatched_records(i)))
            .filter(|(_, m)| !m.is_empty())
            .collect();
        match bad.len() {
            0 if self.parity_holds() => Ok(ScrubReport::Clean),
            0 => Ok(ScrubReport::Corrupt {
                device: DeviceRef::Parity,
                records: BTreeSet::new(),
            }),
            1 => {
                let (device, records) = bad.into_iter().next().unwrap();
                Ok(ScrubReport::Corrupt {
                    device: DeviceRef::Data(device),
                    records,
                })
            }
            _ => Err(ParityError::MultiFault(bad.into_iter().map(|(i, _)| i).collect())),
        }
    }

    /// Rebuilds `device` as the XOR of every other store, truncated to its
    /// recorded length, and checks the result against the record index.
    pub fn reconstruct(&self, device: DeviceRef) -> Result<Vec<u8>, ParityError> {
        match device {
            DeviceRef::Parity => {
                let bad: Vec<usize> = (0..self.data.len())
                    .filter(|&i| !self.mismatched_records(i).is_empty())
                    .collect();
                if !bad.is_empty() {
                    return Err(ParityError::MultiFault(bad));
                }
                compute_parity(&self.data)
            }
            DeviceRef::Data(target) => {
                let len = self.data.get(target).ok_or(ParityError::NoSuchDevice(device))?.len();
                let mut out = self.parity.clone();
                for (i, d) in self.data.iter().enumerate() {
                    if i != target {
                        xor_into(&mut out, d);
                    }
                }
                out.truncate(len);
                out.resize(len, 0);
                if !self.mismatches_in(target, &out).is_empty() {
                    let mut bad: Vec<usize> = (0..self.data.len())
                        .filter(|&i| i != target && !self.mismatched_records(i).is_empty())
                        .collect();
                    bad.insert(0, target);
                    return Err(ParityError::MultiFault(bad));
                }
                Ok(out)
            }
        }
    }

    /// Reconstructs `device` and writes it back.
    pub fn repair(&mut self, device: DeviceRef) -> Result<(), ParityError> {
        let rebuilt = self.reconstruct(device)?;
        *self.device_mut(device)? = rebuilt;
        Ok(())
    }

    /// Scrubs and, when a single device is at fault, repairs it. Returns the
    /// pre-repair report.
    pub fn scrub_and_repair(&mut self) -> Result<ScrubReport, ParityError> {
        let report = self.scrub()?;
        if let ScrubReport::Corrupt { device, .. } = &report {
            self.repair(*device)?;
        }
        Ok(report)
    }

    /// Replaces a data store and its records, then recomputes parity.
    /// `records` are `(key, offset, length)` ranges within `bytes`.
    pub fn replace_data(
        &mut self,
        device: usize,
        bytes: Vec<u8>,
        records: &[(Digest, usize, usize)],
    ) -> Result<(), ParityError> {
        if device >= self.data.len() {
            return Err(ParityError::NoSuchDevice(DeviceRef::Data(device)));
        }
        self.data[device] = bytes;
        self.index.retain(|_, e| e.device != device);
        for (key, offset, length) in records {
            self.index_record(*key, device, *offset, *length)?;
        }
        self.parity = compute_parity(&self.data)?;
        Ok(())
    }

    /// XORs `mask` into one byte; returns the `(before, after)` values.
    pub fn flip_byte(&mut self, device: DeviceRef, offset: usize, mask: u8) -> Result<(u8, u8), ParityError> {
        let store = self.device_mut(device)?;
        let len = store.len();
        let b = store
            .get_mut(offset)
            .ok_or(ParityError::OffsetOutOfRange { device, offset, len })?;
        let before = *b;
        *b ^= mask;
        Ok((before, *b))
    }

    /// Zero-fills a device, keeping its length.
    pub fn erase(&mut self, device: DeviceRef) -> Result<(), ParityError> {
        self.device_mut(device)?.fill(0);
        Ok(())
    }

    /// Snapshot layout:
    ///
    /// ```text
    /// AUTOBOX-PARITY 1
    /// d=<data store count>
    /// lengths=<len_1>,...,<len_d>,<parity_len>
    /// <raw data stores, then raw parity store>
    /// <record_key_hex>\t<device>\t<offset>\t<length>\t<record_hash_hex>   (one per indexed record)
    /// ```
    ///
    /// The raw section is followed by a single newline before the index.
    pub fn to_snapshot(&self) -> Vec<u8> {
        let lengths: Vec<String> = self
            .data
            .iter()
            .map(|d| d.len().to_string())
            .chain(std::iter::once(self.parity.len().to_string()))
            .collect();
        let mut out = format!(
            "{SNAPSHOT_MAGIC}\nd={}\nlengths={}\n",
            self.data.len(),
            lengths.join(",")
        )
        .into_bytes();
        for d in &self.data {
            out.extend_from_slice(d);
        }
        out.extend_from_slice(&self.parity);
        out.push(b'\n');
        for (key, e) in &self.index {
            out.extend_from_slice(
                format!("{}\t{}\t{}\t{}\t{}\n", key, e.device, e.offset, e.length, e.record_hash).as_bytes(),
            );
        }
        out
    }

    pub fn from_snapshot(bytes: &[u8]) -> Result<Self, ParityError> {
        let err = |m: &str| ParityError::Snapshot(m.to_string());
        let mut pos = 0;
        let mut line = || -> Result<&str, ParityError> {
            let rest = &bytes[pos..];
            let end = rest
                .iter()
                .position(|&b| b == b'\n')
                .ok_or_else(|| err("truncated header"))?;
            pos += end + 1;
            std::str::from_utf8(&rest[..end]).map_err(|_| err("header is not UTF-8"))
        };
        if line()? != SNAPSHOT_MAGIC {
            return Err(err("missing magic line"));
        }
        let d: usize = line()?
            .strip_prefix("d=")
            .and_then(|v| v.parse().ok())
            .ok_or_else(|| err("bad d= line"))?;
        let lengths: Vec<usize> = line()?
            .strip_prefix("lengths=")
            .ok_or_else(|| err("bad lengths= line"))?
            .split(',')
            .map(|v| v.parse().map_err(|_| err("bad length")))
            .collect::<Result<_, _>>()?;
        if lengths.len() != d + 1 {
            return Err(err("lengths count does not match d"));
        }
        let total: usize = lengths.iter().sum();
        let raw = bytes
            .get(pos..pos + total)
            .ok_or_else(|| err("raw section truncated"))?;
        pos += total;
        if bytes.get(pos) != Some(&b'\n') {
            return Err(err("missing separator after raw section"));
        }
        pos += 1;

        let mut stores = Vec::with_capacity(d + 1);
        let mut at = 0;
        for len in &lengths {
            stores.push(raw[at..at + len].to_vec());
            at += len;
        }
        let parity = stores.pop().unwrap();
        if d < 2 {
            return Err(ParityError::TooFewStores(d));
        }

        let text = std::str::from_utf8(&bytes[pos..]).map_err(|_| err("index is not UTF-8"))?;
        let mut index = BTreeMap::new();
        for (n, l) in text.lines().enumerate().filter(|(_, l)| !l.is_empty()) {
            let bad = || ParityError::Snapshot(format!("bad index line {}", n + 1));
            let cols: Vec<&str> = l.split('\t').collect();
            let [key, device, offset, length, hash] = cols.as_slice() else {
                return Err(bad());
            };
            let entry = IndexEntry {
                device: device.parse().map_err(|_| bad())?,
                offset: offset.parse().map_err(|_| bad())?,
                length: length.parse().map_err(|_| bad())?,
                record_hash: hash.parse().map_err(|_| bad())?,
            };
            if entry.device >= d {
                return Err(bad());
            }
            index.insert(key.parse().map_err(|_| bad())?, entry);
        }
        Ok(Self {
            data: stores,
            parity,
            index,
        })
    }
}

const SNAPSHOT_MAGIC: &str = "AUTOBOX-PARITY 1";
