use std::collections::{BTreeMap, BTreeSet};
use std::sync::atomic::Ordering;
use std::sync::Arc;
use std::time::{Duration, Instant};

use epimem_core::model::{Commit, EntityUpdate, Query, SnapshotSelector};
use epimem_core::{DataObject, MemoryId, Time};
use epimem_net::pipeline::{run_stage, PipelineStage, StageHandle};
use epimem_net::{MemoryClient, MemoryServer, MnsServer, ServerConfig};
use parking_lot::Mutex;

use crate::Outcome;

const COMMITS: i64 = 1_000;

type Lineage = Arc<Mutex<BTreeMap<MemoryId, BTreeSet<MemoryId>>>>;

fn id(s: &str) -> MemoryId {
    MemoryId::parse(s).unwrap()
}

fn serve(name: &str, cores: &[&str], mns: &MnsServer, root: &std::path::Path) -> MemoryServer {
    MemoryServer::start(ServerConfig {
        memory_name: name.into(),
        core_segments: cores.iter().map(|c| c.to_string()).collect(),
        ltm_root: root.join(name),
        ltm_sync: false,
        mns: Some(mns.endpoint()),
        subscriber_queue: 4096,
        ..Default::default()
    })
    .unwrap()
}

fn int(v: &DataObject) -> i64 {
    v.get("v").and_then(DataObject::as_i64).unwrap()
}

/// Sums its inputs and records the inputs it saw under the output id.
fn summing(input: &str, output: &str, out_prefix: &'static str, lineage: Lineage) -> PipelineStage {
    PipelineStage::new(id(input), output, move |r| {
        let ids: BTreeSet<MemoryId> = r.ids.iter().cloned().collect();
        let newest = ids.iter().max_by_key(|i| i.timestamp()).unwrap();
        let out = id(&format!("{out_prefix}/{}", newest.entity_name().unwrap())).snapshot(newest.timestamp().unwrap());
        let sum: i64 = r.snapshots().map(|(_, s)| int(&s.instances[0].data)).sum();
        lineage.lock().insert(out, ids);
        Ok(vec![DataObject::map([("v", DataObject::Int64(sum + 1))])])
    })
    .coalesce(false)
}

fn wait(stage: &StageHandle, n: u64) -> bool {
    let deadline = Instant::now() + Duration::from_secs(120);
    while stage.stats().outputs.load(Ordering::Relaxed) < n {
        if Instant::now() > deadline {
            return false;
        }
        std::thread::sleep(Duration::from_millis(10));
    }
    true
}

pub fn run() -> Outcome {
    let mns = MnsServer::start("127.0.0.1:0").map_err(|e| e.to_string())?;
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let _vision = serve("Vision", &["Image"], &mns, dir.path());
    let _object = serve("Object", &["Instance", "Class"], &mns, dir.path());
    let client = MemoryClient::new(mns.endpoint());
    let connect = |name: &str| client.connect(name).map_err(|e| e.to_string());
    let lineage: Lineage = Arc::default();
    let detector = summing(
        "Vision/Image",
        "Object/Instance/detector/{entity}",
        "Object/Instance/detector",
        lineage.clone(),
    );
    let classifier = summing(
        "Object/Instance",
        "Object/Class/classifier/{entity}",
        "Object/Class/classifier",
        lineage.clone(),
    );
    let stage_a = run_stage(&connect("Vision")?, connect("Object")?, detector).map_err(|e| e.to_string())?;
    let stage_b = run_stage(&connect("Object")?, connect("Object")?, classifier).map_err(|e| e.to_string())?;

    let mut inputs = BTreeSet::new();
    for t in 0..COMMITS {
        let e = id(&format!("Vision/Image/cam/c{}", t % 4));
        let data = DataObject::map([("v", DataObject::Int64((t * 7919) % 1000))]);
        client
            .commit(&Commit::single(EntityUpdate::new(e.clone(), Time(t), vec![data])))
            .map_err(|e| e.to_string())?;
        inputs.insert(e.snapshot(Time(t)));
    }
    ensure!(wait(&stage_a, COMMITS as u64), "detector stalled");
    ensure!(wait(&stage_b, COMMITS as u64), "classifier stalled");
    for s in [&stage_a, &stage_b] {
        ensure!(s.stats().errors.load(Ordering::Relaxed) == 0, "stage reported errors");
    }

    let vision = connect("Vision")?;
    let object = connect("Object")?;
    let mut audited = 0;
    for (core, upstream) in [("Object/Class", &object), ("Object/Instance", &vision)] {
        let r = object
            .query(&Query::prefix(&id(core), SnapshotSelector::All).with_links())
            .map_err(|e| e.to_string())?
            .result;
        ensure!(r.ids.len() == COMMITS as usize, "{core}: {} outputs", r.ids.len());
        for out in &r.ids {
            let links = r.links.get(out).cloned().unwrap_or_default();
            let seen = lineage.lock().get(out).cloned().unwrap_or_default();
            ensure!(links == seen, "{out}: links {links:?} != inputs {seen:?}");
            let back = upstream
                .query(&Query::snapshots(&links))
                .map_err(|e| e.to_string())?
                .result;
            ensure!(
                back.ids.iter().cloned().collect::<BTreeSet<_>>() == links,
                "{out}: links do not resolve"
            );
            let sum: i64 = back.snapshots().map(|(_, s)| int(&s.instances[0].data)).sum();
            ensure!(
                int(&r.snapshot(out).unwrap().instances[0].data) == sum + 1,
                "{out}: value mismatch"
            );
            audited += 1;
        }
    }
    let first_stage_inputs: BTreeSet<MemoryId> = lineage
        .lock()
        .iter()
        .filter(|(k, _)| k.core_segment() == Some("Instance"))
        .flat_map(|(_, v)| v.iter().cloned())
        .collect();
    ensure!(
        first_stage_inputs == inputs,
        "detector did not consume every input exactly"
    );
    Ok(format!(
        "{audited}/{audited} outputs over {COMMITS} commits link to their exact input sets"
    ))
}
