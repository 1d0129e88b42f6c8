use std::collections::{BTreeMap, BTreeSet};

use epimem_core::model::{
    resolve_query, Commit, CoreQuery, EntityQuery, EntityUpdate, InstanceSelector, NameSelector, ProviderQuery, Query,
    SnapshotQuery, SnapshotSelector,
};
use epimem_core::{DataObject, Memory, MemoryId, Time};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const STORES: usize = 1_000;
const QUERIES_PER_STORE: usize = 4;
const MAX_ENTITIES: usize = 8;
const MAX_SNAPSHOTS: usize = 64;

const CORES: [&str; 3] = ["Obj", "Vision", "Robot"];
const PROVIDERS: [&str; 3] = ["p1", "p2", "cam"];
const ENTITIES: [&str; 6] = ["cup", "box", "cup2", "arm", "b", "cap"];

/// Patterns with hand-written full-string matchers.
type Pattern = (&'static str, fn(&str) -> bool);

const REGEXES: [Pattern; 6] = [
    ("cup.*", |s| s.starts_with("cup")),
    ("[a-c].*", |s| {
        s.chars().next().is_some_and(|c| ('a'..='c').contains(&c))
    }),
    ("p[0-9]", |s| {
        s.len() == 2 && s.starts_with('p') && s.as_bytes()[1].is_ascii_digit()
    }),
    ("b|box", |s| s == "b" || s == "box"),
    (".*2", |s| s.ends_with('2')),
    ("c.p", |s| s.len() == 3 && s.starts_with('c') && s.ends_with('p')),
];

/// (core, provider, entity) -> timestamp -> instance count.
type Store = BTreeMap<(String, String, String), BTreeMap<i64, u32>>;

fn random_store(rng: &mut ChaCha8Rng) -> (Memory, Store) {
    let mut mem = Memory::new("M");
    for c in CORES {
        mem.declare_core_segment(c, None);
    }
    let mut store = Store::new();
    let target = rng.gen_range(0..=MAX_ENTITIES);
    while store.len() < target {
        let key = (
            CORES.choose(rng).unwrap().to_string(),
            PROVIDERS.choose(rng).unwrap().to_string(),
            ENTITIES.choose(rng).unwrap().to_string(),
        );
        let tl = store.entry(key).or_default();
        let n = rng.gen_range(1..=MAX_SNAPSHOTS);
        while tl.len() < n {
            tl.insert(rng.gen_range(0..200), rng.gen_range(1..=3));
        }
    }
    let mut updates = Vec::new();
    for ((c, p, e), tl) in &store {
        let id = MemoryId::entity_id("M", c, p, e).unwrap();
        for (&t, &n) in tl {
            let data = (0..n).map(|i| DataObject::Int64(t * 10 + i64::from(i))).collect();
            updates.push(EntityUpdate::new(id.clone(), Time(t), data));
        }
    }
    updates.shuffle(rng);
    let outcome = mem.apply_commit(&Commit::new(updates), Time(1_000));
    assert!(outcome.statuses.iter().all(Result::is_ok));
    (mem, store)
}

#[derive(Clone, Copy)]
enum Name {
    All,
    Exact(&'static str),
    Regex(usize),
}

impl Name {
    fn selector(self) -> NameSelector {
        match self {
            Name::All => NameSelector::All,
            Name::Exact(n) => NameSelector::Exact(n.into()),
            Name::Regex(i) => NameSelector::Regex(REGEXES[i].0.into()),
        }
    }

    fn matches(self, s: &str) -> bool {
        match self {
            Name::All => true,
            Name::Exact(n) => n == s,
            Name::Regex(i) => (REGEXES[i].1)(s),
        }
    }
}

type Snaps = Vec<(SnapshotSelector, InstanceSelector)>;

struct Branch {
    core: Name,
    providers: Vec<(Name, Vec<(Name, Snaps)>)>,
}

fn random_name(rng: &mut ChaCha8Rng, pool: &[&'static str]) -> Name {
    match rng.gen_range(0..3) {
        0 => Name::All,
        1 => Name::Exact(pool.choose(rng).unwrap()),
        _ => Name::Regex(rng.gen_range(0..REGEXES.len())),
    }
}

fn random_selector(rng: &mut ChaCha8Rng) -> SnapshotSelector {
    let t = |rng: &mut ChaCha8Rng| Time(rng.gen_range(-10..210));
    match rng.gen_range(0..6) {
        0 => SnapshotSelector::Latest,
        1 => SnapshotSelector::LatestN(rng.gen_range(1..80)),
        2 => SnapshotSelector::AtTime(t(rng)),
        3 => SnapshotSelector::BeforeOrAt(t(rng)),
        4 => {
            let (a, b) = (t(rng), t(rng));
            SnapshotSelector::TimeRange(a.min(b), a.max(b))
        }
        _ => SnapshotSelector::All,
    }
}

fn random_query(rng: &mut ChaCha8Rng) -> Vec<Branch> {
    (0..rng.gen_range(1..=3))
        .map(|_| Branch {
            core: random_name(rng, &CORES),
            providers: (0..rng.gen_range(0..=2))
                .map(|_| {
                    let entities = (0..rng.gen_range(0..=2))
                        .map(|_| {
                            let snaps = (0..rng.gen_range(0..=2))
                                .map(|_| {
                                    let inst = if rng.gen_bool(0.7) {
                                        InstanceSelector::All
                                    } else {
                                        InstanceSelector::Index(rng.gen_range(0..4))
                                    };
                                    (random_selector(rng), inst)
                                })
                                .collect();
                            (random_name(rng, &ENTITIES), snaps)
                        })
                        .collect();
                    (random_name(rng, &PROVIDERS), entities)
                })
                .collect(),
        })
        .collect()
}

fn to_query(branches: &[Branch]) -> Query {
    let mut q = Query::default();
    for b in branches {
        q = q.or(CoreQuery {
            name: b.core.selector(),
            providers: b
                .providers
                .iter()
                .map(|(pn, es)| ProviderQuery {
                    name: pn.selector(),
                    entities: es
                        .iter()
                        .map(|(en, ss)| EntityQuery {
                            name: en.selector(),
                            snapshots: ss
                                .iter()
                                .map(|&(selector, instances)| SnapshotQuery { selector, instances })
                                .collect(),
                        })
                        .collect(),
                })
                .collect(),
        });
    }
    q
}

fn selected_times(times: &[i64], sel: SnapshotSelector) -> Vec<i64> {
    let mut desc = times.to_vec();
    desc.sort_unstable_by(|a, b| b.cmp(a));
    match sel {
        SnapshotSelector::Latest => desc.into_iter().take(1).collect(),
        SnapshotSelector::LatestN(n) => desc.into_iter().take(n).collect(),
        SnapshotSelector::AtTime(t) => times.iter().copied().filter(|&x| x == t.0).collect(),
        SnapshotSelector::BeforeOrAt(t) => desc.into_iter().find(|&x| x <= t.0).into_iter().collect(),
        SnapshotSelector::TimeRange(a, b) => times.iter().copied().filter(|&x| a.0 <= x && x <= b.0).collect(),
        SnapshotSelector::All => times.to_vec(),
    }
}

/// Brute force: every entity is tested against every branch. Result is snapshot id -> instance indices.
fn brute_force(store: &Store, branches: &[Branch]) -> BTreeMap<String, BTreeSet<u32>> {
    let everything = (SnapshotSelector::All, InstanceSelector::All);
    let mut out: BTreeMap<String, BTreeSet<u32>> = BTreeMap::new();
    for ((c, p, e), tl) in store {
        let times: Vec<i64> = tl.keys().copied().collect();
        let mut requests = Vec::new();
        for b in branches.iter().filter(|b| b.core.matches(c)) {
            if b.providers.is_empty() {
                requests.push(everything);
            }
            for (_, es) in b.providers.iter().filter(|(pn, _)| pn.matches(p)) {
                if es.is_empty() {
                    requests.push(everything);
                }
                for (_, ss) in es.iter().filter(|(en, _)| en.matches(e)) {
                    if ss.is_empty() {
                        requests.push(everything);
                    }
                    requests.extend(ss.iter().copied());
                }
            }
        }
        for (sel, inst) in requests {
            for t in selected_times(&times, sel) {
                let n = tl[&t];
                let chosen: BTreeSet<u32> = match inst {
                    InstanceSelector::All => (0..n).collect(),
                    InstanceSelector::Index(i) => (0..n).filter(|&x| x == i).collect(),
                };
                out.entry(format!("M/{c}/{p}/{e}/{t}")).or_default().extend(chosen);
            }
        }
    }
    out.retain(|_, s| !s.is_empty());
    out
}

fn key(id: &MemoryId) -> String {
    format!(
        "M/{}/{}/{}/{}",
        id.core_segment().unwrap_or("?"),
        id.provider_segment().unwrap_or("?"),
        id.entity_name().unwrap_or("?"),
        id.timestamp().map_or(i64::MIN, |t| t.0)
    )
}

fn selector_kind(s: SnapshotSelector) -> usize {
    match s {
        SnapshotSelector::Latest => 0,
        SnapshotSelector::LatestN(_) => 1,
        SnapshotSelector::AtTime(_) => 2,
        SnapshotSelector::BeforeOrAt(_) => 3,
        SnapshotSelector::TimeRange(..) => 4,
        SnapshotSelector::All => 5,
    }
}

pub fn run() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xacce_0003);
    let mut nonempty = 0;
    let mut kinds_hit = [0usize; 6];
    for store_no in 0..STORES {
        let (mem, store) = random_store(&mut rng);
        ensure!(
            store.len() <= MAX_ENTITIES && store.values().all(|t| t.len() <= MAX_SNAPSHOTS),
            "store {store_no} exceeds bounds"
        );
        for _ in 0..QUERIES_PER_STORE {
            let branches = random_query(&mut rng);
            let q = to_query(&branches);
            let result = resolve_query(&mem, &q).map_err(|e| format!("store {store_no}: {e}"))?;
            let got: BTreeMap<String, BTreeSet<u32>> = result
                .snapshots()
                .map(|(id, s)| (key(id), s.instances.iter().map(|i| i.index).collect()))
                .collect();
            let expected = brute_force(&store, &branches);
            ensure!(
                got == expected,
                "store {store_no}: resolver {got:?} != oracle {expected:?} for {q:?}"
            );
            for (id, s) in result.snapshots() {
                let t = id.timestamp().unwrap().0;
                for i in &s.instances {
                    ensure!(
                        i.data == DataObject::Int64(t * 10 + i64::from(i.index)),
                        "{id}: wrong instance data"
                    );
                }
            }
            if !expected.is_empty() {
                nonempty += 1;
                for b in &branches {
                    for (_, es) in &b.providers {
                        for (_, ss) in es {
                            for (sel, _) in ss {
                                kinds_hit[selector_kind(*sel)] += 1;
                            }
                        }
                    }
                }
            }
        }
    }
    ensure!(kinds_hit.iter().all(|&n| n > 0), "selector coverage {kinds_hit:?}");
    ensure!(nonempty >= STORES, "only {nonempty} non-empty results");
    Ok(format!(
        "{STORES} stores x {QUERIES_PER_STORE} queries exact, {nonempty} non-empty, selector uses {kinds_hit:?}"
    ))
}
