//! A layered, tamper-evident audit trail for vehicle software and critical
//! data.
//!
//! ECUs hash their identity into an in-vehicle DHT ([`dht`]) whose node
//! stores are protected by XOR parity clusters ([`parity`]). A master unit
//! mirrors the DHT, captures order-independent meta-hashes and buffers them
//! in a light client ([`masternode`]) that submits to a hash-chained ledger
//! checked by the OEM ([`ledger`]). [`vehiclesim`] drives whole vehicles and
//! fleets through scripted events, attacks and faults.

pub mod auditcore;
pub mod dht;
pub mod ledger;
pub mod masternode;
pub mod parity;
pub mod vehiclesim;

pub use auditcore::{AuditRecord, Digest, EventType, ModuleMetadata, SharedCriticalData, VehicleKey};
