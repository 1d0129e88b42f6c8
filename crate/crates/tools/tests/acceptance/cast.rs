use std::collections::BTreeMap;

use epimem_core::idf::{cast, CastValue, DataObject, Field, FieldState, LeafKind, TypeObject, TypedView};
use epimem_core::Time;
use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use crate::Outcome;

const CASES: u32 = 3_000;

const LEAVES: [LeafKind; 7] = [
    LeafKind::Int,
    LeafKind::Long,
    LeafKind::Float,
    LeafKind::Double,
    LeafKind::Bool,
    LeafKind::String,
    LeafKind::Time,
];

fn candidates() -> [DataObject; 9] {
    [
        DataObject::Int32(3),
        DataObject::Int64(-4),
        DataObject::Float32(0.5),
        DataObject::Float64(2.25),
        DataObject::Bool(true),
        DataObject::string("s"),
        DataObject::Time(Time(9)),
        DataObject::Null,
        DataObject::List(vec![]),
    ]
}

/// Widening table: the value a leaf field takes for a given member, if representable.
fn widened(kind: LeafKind, v: &DataObject) -> Option<DataObject> {
    use DataObject as D;
    match (kind, v) {
        (LeafKind::Int, D::Int32(x)) => Some(D::Int32(*x)),
        (LeafKind::Long, D::Int32(x)) => Some(D::Int64(i64::from(*x))),
        (LeafKind::Long, D::Int64(x)) => Some(D::Int64(*x)),
        (LeafKind::Float, D::Float32(x)) => Some(D::Float32(*x)),
        (LeafKind::Double, D::Float32(x)) => Some(D::Float64(f64::from(*x))),
        (LeafKind::Double, D::Float64(x)) => Some(D::Float64(*x)),
        (LeafKind::Double, D::Int32(x)) => Some(D::Float64(f64::from(*x))),
        (LeafKind::Bool, D::Bool(x)) => Some(D::Bool(*x)),
        (LeafKind::String, D::String(x)) => Some(D::String(x.clone())),
        (LeafKind::Time, D::Time(x)) => Some(D::Time(*x)),
        _ => None,
    }
}

#[derive(Debug, Clone)]
struct Case {
    fields: Vec<(LeafKind, bool)>,
    members: BTreeMap<usize, usize>,
    extra: Vec<(String, usize)>,
    added: (usize, usize),
}

fn arb_case() -> impl Strategy<Value = Case> {
    prop::collection::vec((0usize..7, any::<bool>()), 1..8).prop_flat_map(|fields| {
        let n = fields.len();
        (
            Just(fields.into_iter().map(|(k, o)| (LEAVES[k], o)).collect::<Vec<_>>()),
            prop::collection::btree_map(0..n, 0usize..9, 0..=n),
            prop::collection::vec(("[x-z]{1,3}", 0usize..9), 0..3),
            (0usize..8, 0usize..9),
        )
            .prop_map(|(fields, members, extra, added)| Case {
                fields,
                members,
                extra,
                added,
            })
    })
}

fn type_of(c: &Case) -> TypeObject {
    let fields = c
        .fields
        .iter()
        .enumerate()
        .map(|(i, (k, o))| Field {
            name: format!("f{i}"),
            ty: TypeObject::leaf(*k),
            optional: *o,
        })
        .collect();
    TypeObject::object("T", fields)
}

fn members(c: &Case) -> BTreeMap<String, DataObject> {
    let cands = candidates();
    let mut m: BTreeMap<String, DataObject> = c
        .members
        .iter()
        .map(|(f, v)| (format!("f{f}"), cands[*v].clone()))
        .collect();
    for (k, v) in &c.extra {
        m.insert(k.clone(), cands[*v].clone());
    }
    m
}

fn present(view: &TypedView) -> Vec<String> {
    match &view.root {
        CastValue::Object(f) => f
            .iter()
            .filter(|(_, s)| s.is_present())
            .map(|(k, _)| k.clone())
            .collect(),
        _ => Vec::new(),
    }
}

fn check(c: &Case) -> Result<(), TestCaseError> {
    let ty = type_of(c);
    let value = members(c);
    let view = cast(&DataObject::Map(value.clone()), &ty).map_err(|e| TestCaseError::fail(e.to_string()))?;
    for (i, (kind, optional)) in c.fields.iter().enumerate() {
        let name = format!("f{i}");
        let expected = value.get(&name).and_then(|v| widened(*kind, v));
        let state = view
            .field(&name)
            .ok_or_else(|| TestCaseError::fail(format!("{name} missing from view")))?;
        match (state, expected) {
            (FieldState::Present(v), Some(e)) if v.as_leaf() == Some(&e) => {}
            (FieldState::Uninitialized, None) => {
                prop_assert!(view.uninitialized.contains(&name), "{name} not listed as uninitialized");
                prop_assert_eq!(
                    view.missing_required.contains(&name),
                    !optional,
                    "{} required flag",
                    name
                );
            }
            (state, e) => return Err(TestCaseError::fail(format!("{name}: got {state:?}, expected {e:?}"))),
        }
    }

    let before = present(&view);
    let mut grown = value;
    grown
        .entry(format!("f{}", c.added.0))
        .or_insert_with(|| candidates()[c.added.1].clone());
    grown.insert("unrelated".into(), DataObject::Null);
    let after = present(&cast(&DataObject::Map(grown), &ty).map_err(|e| TestCaseError::fail(e.to_string()))?);
    for f in &before {
        prop_assert!(after.contains(f), "adding members removed {}", f);
    }
    Ok(())
}

pub fn run() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    runner.run(&arb_case(), |c| check(&c)).map_err(|e| e.to_string())?;
    Ok(format!(
        "{CASES} typed casts: present fields widened correctly, absent fields uninitialized, presence monotone"
    ))
}
