use epimem_tools::bench::{self, BenchResult, BenchServer, BATCHES};
use epimem_tools::payload::PayloadKind;

use crate::Outcome;

const SAMPLES: usize = 1_000;
const MIN_QUERY_HZ: f64 = 160.0;

/// Index of the first sample whose inner phase exceeds the enclosing one.
fn containment_breach(r: &BenchResult, outer: &str, inner: &str) -> Option<usize> {
    let (o, i) = (&r.phase(outer).samples, &r.phase(inner).samples);
    if o.len() != i.len() {
        return Some(o.len().min(i.len()));
    }
    o.iter().zip(i).position(|(o, i)| i > o)
}

fn check_run(r: &BenchResult, outer: &str, inner: &str) -> Result<f64, String> {
    let label = format!("{} {} b{}", r.scenario, r.payload, r.batch);
    ensure!(r.valid && r.errors == 0, "{label}: {} errors", r.errors);
    let n = r.phase(outer).samples.len();
    ensure!(n == SAMPLES, "{label}: {n} samples");
    if let Some(i) = containment_breach(r, outer, inner) {
        return Err(format!("{label}: {inner} exceeds {outer} at sample {i}"));
    }
    Ok(r.phase(outer).mean())
}

fn monotone(label: &str, means: &[f64]) -> Result<(), String> {
    match means.windows(2).position(|w| w[1] < w[0]) {
        Some(i) => Err(format!(
            "{label}: mean fell from b{} to b{}: {means:?}",
            BATCHES[i],
            BATCHES[i + 1]
        )),
        None => Ok(()),
    }
}

pub fn run() -> Outcome {
    let server = BenchServer::start().map_err(|e| e.to_string())?;
    let conn = server.connect().map_err(|e| e.to_string())?;
    let mut moderate_b1 = f64::NAN;
    let mut grid = Vec::new();
    for (k, kind) in PayloadKind::ALL.into_iter().enumerate() {
        let mut commit = Vec::new();
        let mut query = Vec::new();
        for (b, batch) in BATCHES.into_iter().enumerate() {
            let seed = (k * 10 + b) as u64;
            commit.push(check_run(
                &bench::run_commit_bench(&conn, kind, batch, SAMPLES, seed),
                "full",
                "storage",
            )?);
            query.push(check_run(
                &bench::run_query_bench(&conn, kind, batch, SAMPLES, seed),
                "full",
                "lookup",
            )?);
        }
        monotone(&format!("commit {kind}"), &commit)?;
        monotone(&format!("query {kind}"), &query)?;
        if kind == PayloadKind::Moderate {
            moderate_b1 = query[0];
        }
        grid.push(format!(
            "{kind} commit {:.0}..{:.0}us query {:.0}..{:.0}us",
            commit[0], commit[3], query[0], query[3]
        ));
    }
    let hz = 1e6 / moderate_b1;
    ensure!(
        hz >= MIN_QUERY_HZ,
        "moderate query round trip {hz:.0} Hz < {MIN_QUERY_HZ} Hz"
    );

    let mut ages = Vec::new();
    for kind in PayloadKind::ALL {
        let [memory, p2p, ps] = bench::run_age_compare(kind, SAMPLES, 17).map_err(|e| e.to_string())?;
        for r in [&memory, &p2p, &ps] {
            ensure!(r.drops == 0, "{}: {} dropped", r.payload, r.drops);
            ensure!(r.phase("age").samples.len() == SAMPLES, "{}: short run", r.payload);
        }
        let (m, p, s) = (
            memory.phase("age").mean(),
            p2p.phase("age").mean(),
            ps.phase("age").mean(),
        );
        ensure!(p <= s && s <= m, "{kind}: p2p {p:.0}us ps {s:.0}us memory {m:.0}us");
        ages.push(format!("{kind} {p:.0}/{s:.0}/{m:.0}us"));
    }
    Ok(format!(
        "{SAMPLES} samples per cell, containment and monotone means hold [{}]; moderate query {hz:.0} Hz; age p2p/ps/memory [{}]",
        grid.join("; "),
        ages.join("; ")
    ))
}
