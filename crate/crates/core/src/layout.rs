//! Flattening of data objects into numeric vectors.
//!
//! A value decomposes into numeric leaves (integers, floats, NDArray elements),
//! which form a vector `x ∈ R^d`, and everything else (strings, bools, times,
//! nulls, empty containers and lists excluded by the caller), which is kept
//! verbatim together with its path. [`compose`] inverts the decomposition.

use std::collections::BTreeSet;

use crate::idf::{DataObject, ElemKind, NdArray};

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PathSeg {
    Key(String),
    Index(u32),
}

pub type Path = Vec<PathSeg>;

pub fn path_to_string(path: &[PathSeg]) -> String {
    let parts: Vec<String> = path
        .iter()
        .map(|s| match s {
            PathSeg::Key(k) => k.clone(),
            PathSeg::Index(i) => format!("[{i}]"),
        })
        .collect();
    parts.join(".")
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SlotKind {
    Int32,
    Int64,
    Float32,
    Float64,
    Array(ElemKind),
}

/// One numeric leaf: where it lives and how many vector entries it spans.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Slot {
    pub path: Path,
    pub kind: SlotKind,
    pub dims: Vec<u32>,
}

impl Slot {
    pub fn width(&self) -> usize {
        match self.kind {
            SlotKind::Array(_) => self.dims.iter().map(|&d| d as usize).product(),
            _ => 1,
        }
    }
}

/// Ordered numeric-leaf slots defining the flattening.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Default)]
pub struct Layout {
    pub slots: Vec<Slot>,
}

impl Layout {
    pub fn dim(&self) -> usize {
        self.slots.iter().map(Slot::width).sum()
    }
}

/// A value split into its numeric vector and verbatim remainder.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposed {
    pub layout: Layout,
    pub values: Vec<f64>,
    pub extracted: Vec<(Path, DataObject)>,
}

/// Splits `value`; lists whose path is in `opaque_lists` are extracted whole.
pub fn decompose(value: &DataObject, opaque_lists: &BTreeSet<Path>) -> Decomposed {
    let mut out = Decomposed {
        layout: Layout::default(),
        values: Vec::new(),
        extracted: Vec::new(),
    };
    let mut path = Vec::new();
    walk(value, &mut path, opaque_lists, &mut out);
    out
}

fn walk(value: &DataObject, path: &mut Path, opaque: &BTreeSet<Path>, out: &mut Decomposed) {
    let push = |kind: SlotKind, dims: Vec<u32>, vals: &mut dyn Iterator<Item = f64>, out: &mut Decomposed| {
        out.layout.slots.push(Slot {
            path: path.clone(),
            kind,
            dims,
        });
        out.values.extend(vals);
    };
    match value {
        DataObject::Int32(v) => push(SlotKind::Int32, vec![], &mut std::iter::once(*v as f64), out),
        DataObject::Int64(v) => push(SlotKind::Int64, vec![], &mut std::iter::once(*v as f64), out),
        DataObject::Float32(v) => push(SlotKind::Float32, vec![], &mut std::iter::once(*v as f64), out),
        DataObject::Float64(v) => push(SlotKind::Float64, vec![], &mut std::iter::once(*v), out),
        DataObject::NdArray(a) if !a.is_empty() => push(
            SlotKind::Array(a.kind()),
            a.dims().to_vec(),
            &mut (0..a.len()).map(|i| a.get_f64(i)),
            out,
        ),
        DataObject::List(items) if !items.is_empty() && !opaque.contains(path) => {
            for (i, item) in items.iter().enumerate() {
                path.push(PathSeg::Index(i as u32));
                walk(item, path, opaque, out);
                path.pop();
            }
        }
        DataObject::Map(m) if !m.is_empty() => {
            for (k, v) in m {
                path.push(PathSeg::Key(k.clone()));
                walk(v, path, opaque, out);
                path.pop();
            }
        }
        other => out.extracted.push((path.clone(), other.clone())),
    }
}

/// Paths of lists whose length differs between any two of `values`.
pub fn variable_length_lists<'a>(values: impl IntoIterator<Item = &'a DataObject>) -> BTreeSet<Path> {
    use std::collections::BTreeMap;
    let mut lengths: BTreeMap<Path, BTreeSet<usize>> = BTreeMap::new();
    fn visit(v: &DataObject, path: &mut Path, lengths: &mut BTreeMap<Path, BTreeSet<usize>>) {
        match v {
            DataObject::List(items) => {
                lengths.entry(path.clone()).or_default().insert(items.len());
                for (i, item) in items.iter().enumerate() {
                    path.push(PathSeg::Index(i as u32));
                    visit(item, path, lengths);
                    path.pop();
                }
            }
            DataObject::Map(m) => {
                for (k, item) in m {
                    path.push(PathSeg::Key(k.clone()));
                    visit(item, path, lengths);
                    path.pop();
                }
            }
            _ => {}
        }
    }
    for v in values {
        visit(v, &mut Vec::new(), &mut lengths);
    }
    lengths
        .into_iter()
        .filter(|(_, l)| l.len() > 1)
        .map(|(p, _)| p)
        .collect()
}

/// Rebuilds a value from a layout, its numeric vector and the extracted remainder.
/// Integer leaves are rounded to the nearest representable value.
pub fn compose(layout: &Layout, values: &[f64], extracted: &[(Path, DataObject)]) -> DataObject {
    let mut entries: Vec<(Path, DataObject)> = Vec::with_capacity(layout.slots.len() + extracted.len());
    let mut offset = 0;
    for slot in &layout.slots {
        let w = slot.width();
        let vals = &values[offset..offset + w];
        offset += w;
        let leaf = match slot.kind {
            SlotKind::Int32 => DataObject::Int32(vals[0].round() as i32),
            SlotKind::Int64 => DataObject::Int64(vals[0].round() as i64),
            SlotKind::Float32 => DataObject::Float32(vals[0] as f32),
            SlotKind::Float64 => DataObject::Float64(vals[0]),
            SlotKind::Array(kind) => DataObject::NdArray(
                NdArray::from_f64_as(kind, slot.dims.clone(), vals).expect("slot width matches dims"),
            ),
        };
        entries.push((slot.path.clone(), leaf));
    }
    entries.extend(extracted.iter().cloned());
    entries.sort_by(|a, b| a.0.cmp(&b.0));
    build(&entries, 0)
}

fn build(entries: &[(Path, DataObject)], depth: usize) -> DataObject {
    if entries.len() == 1 && entries[0].0.len() == depth {
        return entries[0].1.clone();
    }
    // Children grouped by the path segment at `depth`; entries are sorted.
    let mut groups: Vec<(&PathSeg, &[(Path, DataObject)])> = Vec::new();
    let mut start = 0;
    while start < entries.len() {
        let seg = &entries[start].0[depth];
        let mut end = start + 1;
        while end < entries.len() && &entries[end].0[depth] == seg {
            end += 1;
        }
        groups.push((seg, &entries[start..end]));
        start = end;
    }
    match groups.first().map(|g| g.0) {
        Some(PathSeg::Index(_)) => DataObject::List(groups.into_iter().map(|(_, g)| build(g, depth + 1)).collect()),
        _ => DataObject::Map(
            groups
                .into_iter()
                .map(|(seg, g)| {
                    let key = match seg {
                        PathSeg::Key(k) => k.clone(),
                        PathSeg::Index(i) => i.to_string(),
                    };
                    (key, build(g, depth + 1))
                })
                .collect(),
        ),
    }
}

/// Numeric vector of a value, with the layout it was flattened under.
pub fn flatten(value: &DataObject) -> (Layout, Vec<f64>) {
    let d = decompose(value, &BTreeSet::new());
    (d.layout, d.values)
}
