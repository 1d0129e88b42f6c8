//! Golden-vector corpus pinning the canonical encoding for other implementations.
//!
//! Text format, one vector per line, tab-separated, `#` starts a comment:
//!
//! ```text
//! ok   <name> <hex>
//! err  <name> <error kind> <offset> <hex>
//! ```

use std::fmt::Write as _;

use crate::idf::codec::{decode, encode};
use crate::idf::{DataObject, ElemKind, NdArray, Time};

#[derive(Debug, Clone, PartialEq)]
pub enum GoldenVector {
    Ok {
        name: String,
        value: DataObject,
    },
    Err {
        name: String,
        kind: String,
        offset: usize,
        bytes: Vec<u8>,
    },
}

fn arr(kind: ElemKind, dims: Vec<u32>) -> DataObject {
    let n: usize = dims.iter().map(|&d| d as usize).product();
    let vals: Vec<f64> = (0..n).map(|i| i as f64 * 1.5 - 2.0).collect();
    DataObject::NdArray(NdArray::from_f64_as(kind, dims, &vals).expect("valid dims"))
}

fn nested_list(depth: usize) -> DataObject {
    (0..depth).fold(DataObject::Int32(7), |v, _| DataObject::List(vec![v]))
}

/// Valid values covering every tag, edge values and nesting pattern.
#[allow(clippy::approx_constant)]
pub fn valid_values() -> Vec<(String, DataObject)> {
    let mut v: Vec<(String, DataObject)> = Vec::new();
    let mut add = |name: &str, value: DataObject| v.push((name.to_owned(), value));
    add("null", DataObject::Null);
    add("bool-true", DataObject::Bool(true));
    add("bool-false", DataObject::Bool(false));
    for (n, x) in [
        ("0", 0),
        ("1", 1),
        ("neg1", -1),
        ("42", 42),
        ("min", i32::MIN),
        ("max", i32::MAX),
        ("256", 256),
    ] {
        add(&format!("int32-{n}"), DataObject::Int32(x));
    }
    for (n, x) in [
        ("0", 0),
        ("42", 42),
        ("neg1", -1),
        ("min", i64::MIN),
        ("max", i64::MAX),
        ("2pow40", 1 << 40),
        ("neg2pow33", -(1 << 33)),
    ] {
        add(&format!("int64-{n}"), DataObject::Int64(x));
    }
    for (n, x) in [
        ("0", 0.0f32),
        ("neg0", -0.0),
        ("1.5", 1.5),
        ("neg2.25", -2.25),
        ("inf", f32::INFINITY),
        ("neginf", f32::NEG_INFINITY),
        ("nan", f32::from_bits(0x7fc0_0000)),
        ("minpos", f32::MIN_POSITIVE),
        ("max", f32::MAX),
        ("subnormal", f32::from_bits(1)),
    ] {
        add(&format!("float32-{n}"), DataObject::Float32(x));
    }
    for (n, x) in [
        ("0", 0.0f64),
        ("neg0", -0.0),
        ("pi", std::f64::consts::PI),
        ("neg1e300", -1e300),
        ("inf", f64::INFINITY),
        ("neginf", f64::NEG_INFINITY),
        ("nan", f64::from_bits(0x7ff8_0000_0000_0000)),
        ("minpos", f64::MIN_POSITIVE),
        ("max", f64::MAX),
        ("subnormal", f64::from_bits(1)),
        ("0.1", 0.1),
    ] {
        add(&format!("float64-{n}"), DataObject::Float64(x));
    }
    for (n, s) in [
        ("empty", String::new()),
        ("a", "a".to_owned()),
        ("hello", "hello".to_owned()),
        ("unicode", "grün €😀".to_owned()),
        ("nul", "a\0b".to_owned()),
        ("slash", "Object/Instance".to_owned()),
        ("newline", "line1\nline2\t".to_owned()),
        ("long", "x".repeat(300)),
    ] {
        add(&format!("string-{n}"), DataObject::String(s));
    }
    for (n, t) in [
        ("epoch", 0),
        ("table2", 1_645_189_616_492_182),
        ("neg1", -1),
        ("max", i64::MAX),
        ("min", i64::MIN),
    ] {
        add(&format!("time-{n}"), DataObject::Time(Time(t)));
    }
    for kind in [ElemKind::U8, ElemKind::I32, ElemKind::I64, ElemKind::F32, ElemKind::F64] {
        let k = kind.name();
        add(&format!("ndarray-{k}-scalar"), arr(kind, vec![]));
        add(&format!("ndarray-{k}-empty"), arr(kind, vec![0]));
        add(&format!("ndarray-{k}-vec3"), arr(kind, vec![3]));
        add(&format!("ndarray-{k}-2x2"), arr(kind, vec![2, 2]));
        add(&format!("ndarray-{k}-1x2x3"), arr(kind, vec![1, 2, 3]));
        add(&format!("ndarray-{k}-0x4"), arr(kind, vec![0, 4]));
    }
    let px: Vec<u8> = (0..4 * 4 * 3).map(|i| (i * 5) as u8).collect();
    add(
        "ndarray-image-4x4x3",
        DataObject::NdArray(NdArray::from_u8(vec![4, 4, 3], px).unwrap()),
    );
    add(
        "ndarray-orientation",
        DataObject::NdArray(NdArray::from_f32(vec![4], &[0.0, 0.0, 0.0, 1.0]).unwrap()),
    );
    add("list-empty", DataObject::List(vec![]));
    add("list-null", DataObject::List(vec![DataObject::Null]));
    add(
        "list-mixed",
        DataObject::List(vec![
            DataObject::Int32(1),
            DataObject::string("two"),
            DataObject::Float64(3.0),
            DataObject::Bool(false),
            DataObject::Time(Time(5)),
        ]),
    );
    add(
        "list-of-lists",
        DataObject::List(vec![
            DataObject::List(vec![DataObject::Int64(1)]),
            DataObject::List(vec![]),
            DataObject::List(vec![DataObject::Int64(2), DataObject::Int64(3)]),
        ]),
    );
    add("list-nested-5", nested_list(5));
    add("list-nested-64", nested_list(64));
    add("list-nested-512", nested_list(511));
    add(
        "list-100-ints",
        DataObject::List((0..100).map(DataObject::Int32).collect()),
    );
    add("map-empty", DataObject::map::<String>([]));
    add("map-one", DataObject::map([("value", DataObject::Int64(42))]));
    add(
        "map-sorted",
        DataObject::map([
            ("zeta", DataObject::Int32(1)),
            ("alpha", DataObject::Int32(2)),
            ("Beta", DataObject::Int32(3)),
            ("_", DataObject::Int32(4)),
        ]),
    );
    add("map-empty-key", DataObject::map([("", DataObject::Null)]));
    add(
        "map-unicode-keys",
        DataObject::map([
            ("ü", DataObject::Int32(1)),
            ("u", DataObject::Int32(2)),
            ("€", DataObject::Int32(3)),
        ]),
    );
    add(
        "map-nested",
        DataObject::map([(
            "a",
            DataObject::map([("b", DataObject::map([("c", DataObject::string("deep"))]))]),
        )]),
    );
    add(
        "map-with-lists",
        DataObject::map([
            (
                "xs",
                DataObject::List(vec![DataObject::Float32(1.0), DataObject::Float32(2.0)]),
            ),
            ("empty", DataObject::List(vec![])),
        ]),
    );
    add(
        "list-of-maps",
        DataObject::List(vec![
            DataObject::map([("i", DataObject::Int32(0))]),
            DataObject::map([("i", DataObject::Int32(1))]),
        ]),
    );
    add(
        "pose",
        DataObject::map([
            ("position", arr(ElemKind::F32, vec![3, 1])),
            (
                "orientation",
                DataObject::NdArray(NdArray::from_f32(vec![4], &[0.0, 0.0, 0.7071068, 0.7071068]).unwrap()),
            ),
            ("frame", DataObject::string("world")),
        ]),
    );
    add(
        "moderate-payload",
        DataObject::map([
            ("value", DataObject::Int64(7)),
            ("label", DataObject::string("abcde")),
            ("link", DataObject::string("Object/Instance/p/e1")),
        ]),
    );
    add(
        "commit-message",
        DataObject::map([(
            "updates",
            DataObject::List(vec![DataObject::map([
                ("entity_id", DataObject::string("Object/Instance/p/cup")),
                ("timestamp", DataObject::Time(Time(100))),
                ("produced_at", DataObject::Time(Time(90))),
                (
                    "instances",
                    DataObject::List(vec![DataObject::map([("value", DataObject::Int64(1))])]),
                ),
            ])]),
        )]),
    );
    add(
        "notify-message",
        DataObject::map([
            ("seq", DataObject::Int64(3)),
            (
                "ids",
                DataObject::List(vec![DataObject::string(
                    "Grasp/Affordance/MyGraspPlanner/blue-cup/2022-02-18 13:06:56.492182",
                )]),
            ),
        ]),
    );
    add(
        "all-tags",
        DataObject::map([
            ("a-null", DataObject::Null),
            ("b-bool", DataObject::Bool(true)),
            ("c-int32", DataObject::Int32(-5)),
            ("d-int64", DataObject::Int64(5)),
            ("e-float32", DataObject::Float32(0.5)),
            ("f-float64", DataObject::Float64(-0.5)),
            ("g-string", DataObject::string("s")),
            ("h-time", DataObject::Time(Time(1))),
            ("i-ndarray", arr(ElemKind::I32, vec![2])),
            ("j-list", DataObject::List(vec![DataObject::Null])),
            ("k-map", DataObject::map([("x", DataObject::Null)])),
        ]),
    );
    v
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().fold(String::with_capacity(bytes.len() * 2), |mut s, b| {
        let _ = write!(s, "{b:02x}");
        s
    })
}

pub fn parse_hex(s: &str) -> Option<Vec<u8>> {
    if !s.len().is_multiple_of(2) {
        return None;
    }
    (0..s.len())
        .step_by(2)
        .map(|i| u8::from_str_radix(s.get(i..i + 2)?, 16).ok())
        .collect()
}

/// Malformed inputs; kinds and offsets are whatever the decoder reports.
pub fn malformed_inputs() -> Vec<(String, Vec<u8>)> {
    let mut too_deep = [0x09, 1, 0, 0, 0].repeat(513);
    too_deep.push(0x00);
    let mut trailing = encode(&DataObject::Int32(1));
    trailing.push(0);
    let dup = {
        let mut b = vec![0x0A, 2, 0, 0, 0];
        for _ in 0..2 {
            b.extend([1, 0, 0, 0, b'k', 0x00]);
        }
        b
    };
    vec![
        ("empty-input".into(), vec![]),
        ("unknown-tag-0b".into(), vec![0x0B]),
        ("unknown-tag-ff".into(), vec![0xFF]),
        ("truncated-int32".into(), vec![0x02, 1, 2]),
        ("truncated-int64".into(), vec![0x03, 1, 2, 3, 4, 5, 6, 7]),
        ("truncated-float64".into(), vec![0x05, 0]),
        ("truncated-time".into(), vec![0x07]),
        ("invalid-bool".into(), vec![0x01, 2]),
        ("string-length-overflow".into(), vec![0x06, 10, 0, 0, 0, b'a']),
        ("string-invalid-utf8".into(), vec![0x06, 2, 0, 0, 0, 0xC3, 0x28]),
        ("ndarray-unknown-kind".into(), vec![0x08, 9, 1, 1, 0, 0, 0, 0]),
        ("ndarray-truncated-dims".into(), vec![0x08, 0, 2, 1, 0, 0, 0]),
        ("ndarray-short-buffer".into(), vec![0x08, 3, 1, 2, 0, 0, 0, 0, 0, 0, 0]),
        ("list-count-overflow".into(), vec![0x09, 0xFF, 0xFF, 0xFF, 0xFF]),
        ("list-truncated-element".into(), vec![0x09, 2, 0, 0, 0, 0x00]),
        ("map-truncated-key".into(), vec![0x0A, 1, 0, 0, 0, 5, 0, 0, 0, b'a']),
        ("map-duplicate-key".into(), dup),
        ("trailing-bytes".into(), trailing),
        ("too-deep".into(), too_deep),
    ]
}

/// The full corpus as decoded by this implementation.
pub fn corpus() -> Vec<GoldenVector> {
    let mut out: Vec<GoldenVector> = valid_values()
        .into_iter()
        .map(|(name, value)| GoldenVector::Ok { name, value })
        .collect();
    for (name, bytes) in malformed_inputs() {
        let err = decode(&bytes).expect_err("malformed input");
        out.push(GoldenVector::Err {
            name,
            kind: err.kind().to_owned(),
            offset: err.offset(),
            bytes,
        });
    }
    out
}

pub fn render(corpus: &[GoldenVector]) -> String {
    let mut s = String::from("# IDF golden vectors, format 1\n");
    for v in corpus {
        match v {
            GoldenVector::Ok { name, value } => {
                let _ = writeln!(s, "ok\t{name}\t{}", hex(&encode(value)));
            }
            GoldenVector::Err {
                name,
                kind,
                offset,
                bytes,
            } => {
                let _ = writeln!(s, "err\t{name}\t{kind}\t{offset}\t{}", hex(bytes));
            }
        }
    }
    s
}

/// Parsed lines: (name, bytes, expected error kind and offset for `err` lines).
pub type GoldenLine = (String, Vec<u8>, Option<(String, usize)>);

pub fn parse(text: &str) -> Result<Vec<GoldenLine>, String> {
    let mut out = Vec::new();
    for (no, line) in text.lines().enumerate() {
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let f: Vec<&str> = line.split('\t').collect();
        let bad = || format!("line {}: malformed", no + 1);
        match f.as_slice() {
            ["ok", name, h] => out.push((name.to_string(), parse_hex(h).ok_or_else(bad)?, None)),
            ["err", name, kind, off, h] => out.push((
                name.to_string(),
                parse_hex(h).ok_or_else(bad)?,
                Some((kind.to_string(), off.parse().map_err(|_| bad())?)),
            )),
            _ => return Err(bad()),
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn corpus_is_large_and_covers_every_tag() {
        let c = corpus();
        assert!(c.len() >= 100, "{}", c.len());
        let mut tags = std::collections::BTreeSet::new();
        for v in &c {
            if let GoldenVector::Ok { value, .. } = v {
                tags.insert(encode(value)[0]);
            }
        }
        assert_eq!(tags.len(), 11);
    }

    #[test]
    fn rendered_corpus_parses_back() {
        let c = corpus();
        let lines = parse(&render(&c)).unwrap();
        assert_eq!(lines.len(), c.len());
        for ((name, bytes, err), v) in lines.iter().zip(&c) {
            match (v, err) {
                (GoldenVector::Ok { name: n, value }, None) => {
                    assert_eq!(name, n);
                    assert_eq!(&decode(bytes).unwrap(), value);
                    assert_eq!(&encode(value), bytes);
                }
                (GoldenVector::Err { kind, offset, .. }, Some((k, o))) => {
                    assert_eq!((kind, offset), (k, o));
                }
                _ => panic!("mismatched line {name}"),
            }
        }
    }
}
