use std::collections::BTreeMap;

use epimem_core::idf::encode;
use epimem_core::ltm::{LtmOptions, LtmStore};
use epimem_core::model::{EntitySnapshot, Tier};
use epimem_core::{MemoryId, Time};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::values::random_value;
use crate::Outcome;

const SNAPSHOTS: i64 = 1_000;

fn options() -> LtmOptions {
    LtmOptions {
        sync: false,
        ..Default::default()
    }
}

fn compare(store: &LtmStore, originals: &BTreeMap<MemoryId, EntitySnapshot>) -> Result<usize, String> {
    let mut bytes = 0;
    for (id, snap) in originals {
        let back = store.recall(id).map_err(|e| format!("{id}: {e}"))?;
        ensure!(back.tier == Tier::LtmOnline, "{id}: tier {:?}", back.tier);
        ensure!(back.timestamp == snap.timestamp, "{id}: timestamp changed");
        ensure!(
            back.instances.len() == snap.instances.len(),
            "{id}: instance count changed"
        );
        for (a, b) in back.instances.iter().zip(&snap.instances) {
            let (ea, eb) = (encode(&a.data), encode(&b.data));
            ensure!(ea == eb, "{id}/{}: encodings differ", a.index);
            ensure!(
                a.metadata == b.metadata && a.index == b.index,
                "{id}/{}: metadata changed",
                a.index
            );
            bytes += ea.len();
        }
    }
    Ok(bytes)
}

pub fn run() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let store = LtmStore::open(dir.path(), "M", options()).map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0007);
    let mut originals = BTreeMap::new();
    for i in 0..SNAPSHOTS {
        let entity = MemoryId::entity_id("M", ["A", "B"][i as usize % 2], "p", &format!("e{}", i % 7)).unwrap();
        let data = (0..rng.gen_range(1..=3)).map(|_| random_value(&mut rng, 3)).collect();
        let mut snap = EntitySnapshot::new(Time(i * 1_000), data, "p");
        snap.instances[0].metadata.committed_at = Some(Time(i * 1_000 + 5));
        let id = entity.snapshot(snap.timestamp);
        let stored = store
            .consolidate(&id, &snap, None, &[], Time(0))
            .map_err(|e| format!("{id}: {e}"))?;
        ensure!(stored.is_some(), "{id}: record not written");
        originals.insert(id, snap);
    }
    let bytes = compare(&store, &originals)?;
    drop(store);
    let reopened = LtmStore::open(dir.path(), "M", options()).map_err(|e| e.to_string())?;
    compare(&reopened, &originals)?;
    Ok(format!(
        "{SNAPSHOTS} snapshots byte-equal after recall and after reopen ({bytes} encoded bytes)"
    ))
}
