use std::collections::{BTreeMap, BTreeSet};

use epimem_core::idf::TypeObject;
use epimem_core::model::{Commit, EntitySnapshot, EntityUpdate, Level, Query, SnapshotSelector};
use epimem_core::{DataObject, Memory, MemoryId, Time};
use epimem_net::capacity::{enforce_capacity, CapacityPolicy, ConsolidationSink};
use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const RUNS: u64 = 200;
const NOW: i64 = 100_000_000;
const WINDOW: i64 = 30_000_000;
const HOT: usize = 3;

#[derive(Default)]
struct Recorder {
    ids: Mutex<Vec<MemoryId>>,
    fail: BTreeSet<MemoryId>,
}

impl ConsolidationSink for Recorder {
    fn consolidate(
        &self,
        id: &MemoryId,
        _: &EntitySnapshot,
        _: Option<&TypeObject>,
        _: &[MemoryId],
        _: Time,
    ) -> Result<(), String> {
        if self.fail.contains(id) {
            return Err("write failed".into());
        }
        self.ids.lock().push(id.clone());
        Ok(())
    }
}

/// What was committed, queried and linked, kept apart from the store.
struct Model {
    timelines: BTreeMap<MemoryId, BTreeMap<i64, u64>>,
    queries: BTreeMap<MemoryId, Vec<i64>>,
    links: Vec<(MemoryId, MemoryId)>,
}

impl Model {
    fn hot(&self, e: &MemoryId, now: i64) -> bool {
        let recent = self
            .queries
            .get(e)
            .map_or(0, |ts| ts.iter().filter(|&&t| t >= now - WINDOW && t <= now).count());
        recent >= HOT
    }

    fn protected(&self, now: i64) -> BTreeSet<MemoryId> {
        let mut out: BTreeSet<MemoryId> = self.timelines.keys().filter(|e| self.hot(e, now)).cloned().collect();
        for (from, to) in &self.links {
            if !self.hot(&from.entity_prefix().unwrap(), now) {
                continue;
            }
            for e in self.timelines.keys() {
                if to.entity_prefix().as_ref() == Some(e) || to.is_prefix_of(e) {
                    out.insert(e.clone());
                }
            }
        }
        out
    }

    /// Evicts the globally oldest eligible snapshot, one at a time, until nothing qualifies.
    fn evictions(&self, policy: &CapacityPolicy, failing: &BTreeSet<MemoryId>) -> Vec<MemoryId> {
        let protected = self.protected(NOW);
        let mut tl = self.timelines.clone();
        let mut bytes: u64 = tl.values().flat_map(|t| t.values()).sum();
        let mut out = Vec::new();
        let mut skipped: BTreeSet<MemoryId> = BTreeSet::new();
        loop {
            let mut best: Option<(i64, MemoryId, MemoryId, u64)> = None;
            for (e, t) in tl.iter().filter(|(e, _)| !protected.contains(*e)) {
                let last = *t.keys().next_back().unwrap();
                let count = t.len() - skipped.iter().filter(|s| s.entity_prefix().as_ref() == Some(e)).count();
                let eligible = bytes > policy.max_bytes || count > policy.max_snapshots_per_entity;
                if !eligible {
                    continue;
                }
                for (&ts, &size) in t {
                    let sid = e.snapshot(Time(ts));
                    if ts == last || skipped.contains(&sid) {
                        continue;
                    }
                    if best.as_ref().is_none_or(|b| (b.0, &b.1) > (ts, &sid)) {
                        best = Some((ts, sid, e.clone(), size));
                    }
                }
            }
            let Some((ts, sid, e, size)) = best else { break };
            bytes -= size;
            if failing.contains(&sid) {
                skipped.insert(sid);
                continue;
            }
            tl.get_mut(&e).unwrap().remove(&ts);
            out.push(sid);
        }
        out
    }
}

fn id(s: &str) -> MemoryId {
    MemoryId::parse(s).unwrap()
}

struct RunStats {
    evicted: usize,
    protected: usize,
}

fn random_run(seed: u64) -> Result<RunStats, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut mem = Memory::new("M");
    mem.declare_core_segment("C", None);
    let names = ["a", "b", "c", "d", "e", "f"];
    let mut model = Model {
        timelines: BTreeMap::new(),
        queries: BTreeMap::new(),
        links: Vec::new(),
    };
    for name in &names[..rng.gen_range(2..=names.len())] {
        let prov = if rng.gen_bool(0.5) { "p1" } else { "p2" };
        let e = id(&format!("M/C/{prov}/{name}"));
        let n = rng.gen_range(1..=12);
        let mut times = BTreeSet::new();
        while times.len() < n {
            times.insert(rng.gen_range(0..10_000i64));
        }
        let tl = model.timelines.entry(e.clone()).or_default();
        for t in times {
            let size = rng.gen_range(1..=64usize);
            let v = DataObject::string("x".repeat(size));
            let out = mem.apply_commit(&Commit::single(EntityUpdate::new(e.clone(), Time(t), vec![v])), Time(t));
            ensure!(out.statuses[0].is_ok(), "seed {seed}: commit rejected");
            tl.insert(t, size as u64);
        }
    }
    let entities: Vec<MemoryId> = model.timelines.keys().cloned().collect();
    for _ in 0..rng.gen_range(0..5) {
        let from_e = &entities[rng.gen_range(0..entities.len())];
        let to_e = &entities[rng.gen_range(0..entities.len())];
        if from_e == to_e {
            continue;
        }
        let ts: Vec<i64> = model.timelines[from_e].keys().copied().collect();
        let from = from_e.snapshot(Time(ts[rng.gen_range(0..ts.len())]));
        let to = match rng.gen_range(0..3) {
            0 => to_e.clone(),
            1 => {
                let tt: Vec<i64> = model.timelines[to_e].keys().copied().collect();
                to_e.snapshot(Time(tt[rng.gen_range(0..tt.len())]))
            }
            _ => to_e.truncated(Level::ProviderSegment).unwrap(),
        };
        mem.link(&from, &to).map_err(|e| format!("seed {seed}: link {e}"))?;
        model.links.push((from, to));
    }
    for e in &entities {
        let old = rng.gen_bool(0.3);
        for _ in 0..rng.gen_range(0..=4) {
            let t = if old {
                NOW - WINDOW - rng.gen_range(1..1000)
            } else {
                NOW - rng.gen_range(0..WINDOW)
            };
            mem.query(&Query::prefix(e, SnapshotSelector::Latest), Time(t))
                .map_err(|e| e.to_string())?;
            model.queries.entry(e.clone()).or_default().push(t);
        }
    }
    let total: u64 = model.timelines.values().flat_map(|t| t.values()).sum();
    let policy = CapacityPolicy {
        max_bytes: rng.gen_range(0..=total + 10),
        max_snapshots_per_entity: rng.gen_range(1..=12),
        hot_queries: HOT,
        hot_window_us: WINDOW,
    };
    let mut sink = Recorder::default();
    if rng.gen_bool(0.2) {
        let e = &entities[0];
        for t in model.timelines[e].keys() {
            if rng.gen_bool(0.5) {
                sink.fail.insert(e.snapshot(Time(*t)));
            }
        }
    }
    let report = enforce_capacity(&mut mem, &policy, &sink, Time(NOW));
    let expected = model.evictions(&policy, &sink.fail);
    ensure!(
        report.consolidated == expected,
        "seed {seed}: evicted {:?}, oracle {:?}",
        report.consolidated,
        expected
    );
    ensure!(
        *sink.ids.lock() == expected,
        "seed {seed}: sink saw a different sequence"
    );
    for sid in &expected {
        ensure!(mem.snapshot(sid).is_none(), "seed {seed}: {sid} still resident");
    }
    for (sid, _) in &report.failed {
        ensure!(sink.fail.contains(sid), "seed {seed}: unexpected failure on {sid}");
        ensure!(mem.snapshot(sid).is_some(), "seed {seed}: failed write dropped {sid}");
    }
    for e in &entities {
        let latest = *model.timelines[e].keys().next_back().unwrap();
        ensure!(
            mem.snapshot(&e.snapshot(Time(latest))).is_some(),
            "seed {seed}: latest of {e} evicted"
        );
    }
    Ok(RunStats {
        evicted: expected.len(),
        protected: model.protected(NOW).len(),
    })
}

/// A cold entity linked from a hot one survives; an unlinked cold one does not.
fn hot_link_scenario() -> Result<(), String> {
    let mut mem = Memory::new("M");
    mem.declare_core_segment("C", None);
    for name in ["a", "b", "c"] {
        for t in 0..5 {
            let update = EntityUpdate::new(
                id(&format!("M/C/p/{name}")),
                Time(t),
                vec![DataObject::string("0123456789")],
            );
            mem.apply_commit(&Commit::single(update), Time(t));
        }
    }
    mem.link(&id("M/C/p/b").snapshot(Time(4)), &id("M/C/p/a"))
        .map_err(|e| e.to_string())?;
    for i in 0..HOT as i64 {
        mem.query(&Query::prefix(&id("M/C/p/b"), SnapshotSelector::Latest), Time(NOW - i))
            .map_err(|e| e.to_string())?;
    }
    let policy = CapacityPolicy {
        max_bytes: 1,
        max_snapshots_per_entity: 1,
        hot_queries: HOT,
        hot_window_us: WINDOW,
    };
    let sink = Recorder::default();
    let report = enforce_capacity(&mut mem, &policy, &sink, Time(NOW));
    let touched: BTreeSet<&str> = report.consolidated.iter().filter_map(|s| s.entity_name()).collect();
    ensure!(
        touched == BTreeSet::from(["c"]),
        "consolidated entities {touched:?}, expected only c"
    );
    ensure!(
        report.consolidated.len() == 4,
        "{} snapshots of c consolidated",
        report.consolidated.len()
    );
    let a = mem.entity(&id("M/C/p/a")).map_or(0, |e| e.timeline.len());
    ensure!(a == 5, "linked cold entity lost snapshots: {a} left");

    let later = enforce_capacity(&mut mem, &policy, &sink, Time(NOW + WINDOW + 10));
    ensure!(
        later.consolidated.len() == 8,
        "after cooling down {} consolidated",
        later.consolidated.len()
    );
    Ok(())
}

pub fn run() -> Outcome {
    hot_link_scenario()?;
    let (mut evicted, mut with_protection) = (0, 0);
    for seed in 0..RUNS {
        let s = random_run(seed)?;
        evicted += s.evicted;
        with_protection += usize::from(s.protected > 0);
    }
    ensure!(evicted > RUNS as usize, "workload too light: {evicted} evictions");
    ensure!(with_protection > 50, "only {with_protection} runs exercised protection");
    Ok(format!(
        "hot-link scenario holds; {RUNS}/{RUNS} runs match the oracle ({evicted} evictions, {with_protection} with protection)"
    ))
}
