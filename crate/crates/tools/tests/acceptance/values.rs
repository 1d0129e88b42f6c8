//! Value generators shared by the criteria.

use epimem_core::idf::{DataObject, ElemKind, NdArray, Time};
use proptest::prelude::*;
use rand::Rng;

const KINDS: [ElemKind; 5] = [ElemKind::U8, ElemKind::I32, ElemKind::I64, ElemKind::F32, ElemKind::F64];

fn arb_ndarray() -> impl Strategy<Value = NdArray> {
    (0usize..5, prop::collection::vec(0u32..4, 0..4)).prop_flat_map(|(k, dims)| {
        let kind = KINDS[k];
        let len = NdArray::byte_len_for(kind, &dims).unwrap();
        prop::collection::vec(any::<u8>(), len..=len)
            .prop_map(move |bytes| NdArray::new(kind, dims.clone(), bytes).unwrap())
    })
}

fn arb_leaf() -> impl Strategy<Value = DataObject> {
    prop_oneof![
        Just(DataObject::Null),
        any::<bool>().prop_map(DataObject::Bool),
        any::<i32>().prop_map(DataObject::Int32),
        any::<i64>().prop_map(DataObject::Int64),
        any::<f32>().prop_map(DataObject::Float32),
        any::<f64>().prop_map(DataObject::Float64),
        "\\PC{0,12}".prop_map(DataObject::String),
        any::<i64>().prop_map(|t| DataObject::Time(Time(t))),
        arb_ndarray().prop_map(DataObject::NdArray),
    ]
}

pub fn arb_value() -> impl Strategy<Value = DataObject> {
    arb_leaf().prop_recursive(5, 96, 8, |inner| {
        prop_oneof![
            prop::collection::vec(inner.clone(), 0..8).prop_map(DataObject::List),
            prop::collection::btree_map("\\PC{0,6}", inner, 0..8).prop_map(DataObject::Map),
        ]
    })
}

pub fn random_value<R: Rng>(rng: &mut R, depth: usize) -> DataObject {
    let pick = if depth == 0 {
        rng.gen_range(0..9)
    } else {
        rng.gen_range(0..11)
    };
    match pick {
        0 => DataObject::Null,
        1 => DataObject::Bool(rng.gen()),
        2 => DataObject::Int32(rng.gen()),
        3 => DataObject::Int64(rng.gen()),
        4 => DataObject::Float32(f32::from_bits(rng.gen())),
        5 => DataObject::Float64(f64::from_bits(rng.gen())),
        6 => {
            let n = rng.gen_range(0..10);
            DataObject::String((0..n).map(|_| rng.gen_range('a'..='z')).collect())
        }
        7 => DataObject::Time(Time(rng.gen())),
        8 => {
            let kind = KINDS[rng.gen_range(0..5)];
            let dims: Vec<u32> = (0..rng.gen_range(0..4)).map(|_| rng.gen_range(0..5)).collect();
            let len = NdArray::byte_len_for(kind, &dims).unwrap();
            DataObject::NdArray(NdArray::new(kind, dims, (0..len).map(|_| rng.gen()).collect()).unwrap())
        }
        9 => DataObject::List((0..rng.gen_range(0..5)).map(|_| random_value(rng, depth - 1)).collect()),
        _ => DataObject::Map(
            (0..rng.gen_range(0..5))
                .map(|i| (format!("k{i}"), random_value(rng, depth - 1)))
                .collect(),
        ),
    }
}
