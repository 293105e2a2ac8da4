//! Randomized invariants across the storage layers.

use autobox::auditcore::{identity_hash, Digest, EventType, ModuleMetadata};
use autobox::dht::{owner_of, DhtError, DhtNetwork, DhtNodeId};
use autobox::ledger::{verify_chain, ChainStatus, Ledger, Submission};
use autobox::masternode::meta_digest;
use autobox::parity::{DeviceRef, ParityCluster, ScrubReport};
use chrono::NaiveDate;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn metadata(module_id: &str, version: &str) -> ModuleMetadata {
    ModuleMetadata {
        module_id: module_id.into(),
        design_date: NaiveDate::from_ymd_opt(2020, 1, 15).unwrap(),
        manufacture_date: NaiveDate::from_ymd_opt(2021, 6, 1).unwrap(),
        manufacture_location: "Plant-1".into(),
        supplier_id: "SUP-001".into(),
        production_lot: "LOT-001".into(),
        software_version: version.into(),
        variant_code: "SEDAN-V6".into(),
        serial_number: format!("S-{module_id}"),
        vin: "1HGCM82633A004352".into(),
    }
}

fn network(n: usize, seed: u64, limit: usize) -> (DhtNetwork, Vec<DhtNodeId>) {
    let ids: Vec<DhtNodeId> = (0..n)
        .map(|i| DhtNodeId::from_serial(&format!("N-{seed}-{i}")))
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (DhtNetwork::with_nodes(ids.clone(), 4, limit, &mut rng).unwrap(), ids)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn parity_rebuilds_any_single_device(
        stores in prop::collection::vec(prop::collection::vec(any::<u8>(), 0..300), 2..6)
    ) {
        let cluster = ParityCluster::new(stores.clone()).unwrap();
        for (i, original) in stores.iter().enumerate() {
            let mut damaged = cluster.clone();
            damaged.erase(DeviceRef::Data(i)).unwrap();
            prop_assert_eq!(&damaged.reconstruct(DeviceRef::Data(i)).unwrap(), original);
        }
        let mut damaged = cluster.clone();
        damaged.erase(DeviceRef::Parity).unwrap();
        prop_assert_eq!(damaged.reconstruct(DeviceRef::Parity).unwrap(), cluster.parity().to_vec());
    }

    #[test]
    fn scrub_locates_a_flipped_record_byte(
        sizes in prop::collection::vec(prop::collection::vec(1usize..40, 1..5), 2..5),
        pick in any::<prop::sample::Index>(),
        mask in 1u8..=255,
    ) {
        let devices: Vec<Vec<(Digest, Vec<u8>)>> = sizes
            .iter()
            .enumerate()
            .map(|(d, lens)| {
                lens.iter()
                    .enumerate()
                    .map(|(r, &len)| {
                        let key = Digest::of(format!("{d}/{r}").as_bytes());
                        (key, key.as_bytes().iter().cycle().take(len).copied().collect())
                    })
                    .collect()
            })
            .collect();
        let mut cluster = ParityCluster::from_records(devices).unwrap();
        prop_assert_eq!(cluster.scrub().unwrap(), ScrubReport::Clean);
        let device = pick.index(sizes.len());
        let len = cluster.data(device).unwrap().len();
        let offset = pick.index(len);
        cluster.flip_byte(DeviceRef::Data(device), offset, mask).unwrap();
        match cluster.scrub_and_repair().unwrap() {
            ScrubReport::Corrupt { device: found, .. } => prop_assert_eq!(found, DeviceRef::Data(device)),
            ScrubReport::Clean => prop_assert!(false, "flip went unnoticed"),
        }
        prop_assert_eq!(cluster.scrub().unwrap(), ScrubReport::Clean);
    }

    #[test]
    fn meta_digest_ignores_order(
        pairs in prop::collection::vec((any::<[u8; 32]>(), any::<[u8; 32]>()), 0..30),
        seed in any::<u64>(),
    ) {
        use rand::seq::SliceRandom;
        let pairs: Vec<(Digest, Digest)> = pairs.into_iter().map(|(k, p)| (Digest(k), Digest(p))).collect();
        let mut shuffled = pairs.clone();
        shuffled.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
        prop_assert_eq!(
            meta_digest(pairs.iter().map(|(k, p)| (k, p))),
            meta_digest(shuffled.iter().map(|(k, p)| (k, p)))
        );
    }

    #[test]
    fn puts_land_on_the_closest_node(n in 1usize..20, seed in any::<u64>(), times in prop::collection::vec(0u64..100_000, 1..20)) {
        let (mut net, ids) = network(n, seed, 1 << 20);
        for (i, t) in times.iter().enumerate() {
            let rec = identity_hash(&metadata("ECU", &format!("1.{i}")), *t, EventType::PeriodicInterval).unwrap();
            let origin = ids[i % ids.len()];
            let receipt = net.put(origin, rec.clone()).unwrap();
            prop_assert_eq!(receipt.stored_at, owner_of(&rec.record_key, &ids).unwrap());
            prop_assert!(!receipt.fallback);
        }
    }

    #[test]
    fn store_budget_holds_under_checkpointing(limit in 256usize..1024, puts in 50usize..300, every in 1usize..6) {
        let (mut net, ids) = network(3, 7, limit);
        for i in 0..puts {
            let rec = identity_hash(&metadata("BCM", "1.0"), i as u64, EventType::ObdPlugIn).unwrap();
            let protected = |net: &DhtNetwork| -> Vec<(DhtNodeId, Digest)> {
                net.nodes()
                    .flat_map(|n| {
                        n.records()
                            .filter(|s| s.seq >= n.checkpoint_floor())
                            .map(|s| (n.node_id, s.record.record_key))
                            .collect::<Vec<_>>()
                    })
                    .collect()
            };
            let mut before = protected(&net);
            match net.put(ids[0], rec.clone()) {
                Ok(_) => {}
                Err(DhtError::CheckpointRequired { .. }) => {
                    net.advance_checkpoint_floor();
                    before = protected(&net);
                    net.put(ids[0], rec).unwrap();
                }
                Err(e) => return Err(TestCaseError::fail(e.to_string())),
            }
            for (node, key) in &before {
                prop_assert!(net.node(node).unwrap().contains(key));
            }
            if i % every == 0 {
                net.advance_checkpoint_floor();
            }
            for node in net.nodes() {
                prop_assert!(node.used_bytes() <= node.store_limit_bytes());
            }
        }
    }

    #[test]
    fn ledger_file_round_trips(batches in prop::collection::vec(1usize..5, 1..8)) {
        let key = Digest::of(b"vehicle");
        let mut ledger = Ledger::new();
        let mut seq = 0;
        for (b, n) in batches.iter().enumerate() {
            let subs = (0..*n)
                .map(|i| {
                    seq += 1;
                    Submission {
                        vehicle_key: key,
                        checkpoint_seq: seq,
                        meta_digest: Digest::of(format!("{b}/{i}").as_bytes()),
                        trigger: EventType::PeriodicInterval,
                        sim_time: seq * 60,
                    }
                })
                .collect();
            let outcome = ledger.append_submissions(subs);
            prop_assert!(outcome.rejected.is_empty());
        }
        let bytes = ledger.to_file_bytes();
        prop_assert_eq!(verify_chain(&bytes).unwrap(), ChainStatus::Valid { blocks: batches.len() as u64 });
        prop_assert_eq!(Ledger::from_file_bytes(&bytes).unwrap(), ledger.clone());
        let history = ledger.query_history(&key);
        prop_assert_eq!(history.len() as u64, seq);
    }
}
