//! Benchmark harness and operator tooling for epimem memory servers.

pub mod bench;
pub mod payload;
pub mod record;
pub mod recording;
pub mod selector;
pub mod transport;

use std::fmt::Write as _;

use epimem_core::model::EntitySnapshot;
use epimem_core::{DataObject, MemoryId};

const ARRAY_PREVIEW: usize = 8;

fn scalar(v: &DataObject) -> Option<String> {
    Some(match v {
        DataObject::Null => "null".into(),
        DataObject::Bool(b) => b.to_string(),
        DataObject::Int32(i) => format!("{i} (int32)"),
        DataObject::Int64(i) => i.to_string(),
        DataObject::Float32(f) => format!("{f} (float32)"),
        DataObject::Float64(f) => f.to_string(),
        DataObject::String(s) => format!("{s:?}"),
        DataObject::Time(t) => format!("{t} ({} us)", t.0),
        DataObject::NdArray(a) => {
            let shown: Vec<String> = (0..a.len().min(ARRAY_PREVIEW))
                .map(|i| a.get_f64(i).to_string())
                .collect();
            let more = if a.len() > ARRAY_PREVIEW { ", ..." } else { "" };
            format!(
                "ndarray<{}>{:?} [{}{more}]",
                a.kind().name(),
                a.dims(),
                shown.join(", ")
            )
        }
        DataObject::List(l) if l.is_empty() => "[]".into(),
        DataObject::Map(m) if m.is_empty() => "{}".into(),
        _ => return None,
    })
}

fn pretty_into(out: &mut String, v: &DataObject, depth: usize) {
    let pad = "  ".repeat(depth);
    match v {
        DataObject::Map(m) if !m.is_empty() => {
            for (k, child) in m {
                match scalar(child) {
                    Some(s) => writeln!(out, "{pad}{k}: {s}"),
                    None => {
                        writeln!(out, "{pad}{k}:").unwrap();
                        pretty_into(out, child, depth + 1);
                        Ok(())
                    }
                }
                .unwrap();
            }
        }
        DataObject::List(l) if !l.is_empty() => {
            for (i, child) in l.iter().enumerate() {
                match scalar(child) {
                    Some(s) => writeln!(out, "{pad}[{i}] {s}").unwrap(),
                    None => {
                        writeln!(out, "{pad}[{i}]").unwrap();
                        pretty_into(out, child, depth + 1);
                    }
                }
            }
        }
        other => writeln!(out, "{pad}{}", scalar(other).unwrap_or_default()).unwrap(),
    }
}

/// Indented multi-line rendering of a value.
pub fn pretty(v: &DataObject) -> String {
    let mut out = String::new();
    pretty_into(&mut out, v, 0);
    out
}

/// A snapshot with its instance metadata and association links.
pub fn pretty_snapshot(id: &MemoryId, s: &EntitySnapshot, links: &[MemoryId]) -> String {
    let mut out = format!("{id}  [{}]\n", s.tier.name());
    for inst in &s.instances {
        let md = &inst.metadata;
        writeln!(
            out,
            "instance {}  provider={} size={}B",
            inst.index, md.provider, md.payload_size
        )
        .unwrap();
        if let Some(t) = md.produced_at {
            writeln!(out, "  produced_at: {t}").unwrap();
        }
        if let Some(t) = md.committed_at {
            writeln!(out, "  committed_at: {t}").unwrap();
        }
        pretty_into(&mut out, &inst.data, 1);
    }
    if !links.is_empty() {
        out.push_str("links:\n");
        for l in links {
            writeln!(out, "  -> {l}").unwrap();
        }
    }
    out
}
