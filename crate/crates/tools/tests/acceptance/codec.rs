use std::cell::Cell;

use epimem_core::idf::codec::{decode, encode};
use epimem_core::idf::DataObject;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use super::values::arb_value;
use crate::Outcome;

const CASES: u32 = 10_000;

/// Reference writer. With `reversed`, map entries go out in descending key order,
/// which the decoder must still map back to the canonical value.
fn reference(v: &DataObject, reversed: bool, out: &mut Vec<u8>) {
    let len = |n: usize, out: &mut Vec<u8>| out.extend((n as u32).to_le_bytes());
    match v {
        DataObject::Null => out.push(0x00),
        DataObject::Bool(b) => out.extend([0x01, u8::from(*b)]),
        DataObject::Int32(x) => {
            out.push(0x02);
            out.extend(x.to_le_bytes());
        }
        DataObject::Int64(x) => {
            out.push(0x03);
            out.extend(x.to_le_bytes());
        }
        DataObject::Float32(x) => {
            out.push(0x04);
            out.extend(x.to_bits().to_le_bytes());
        }
        DataObject::Float64(x) => {
            out.push(0x05);
            out.extend(x.to_bits().to_le_bytes());
        }
        DataObject::String(s) => {
            out.push(0x06);
            len(s.len(), out);
            out.extend(s.as_bytes());
        }
        DataObject::Time(t) => {
            out.push(0x07);
            out.extend(t.0.to_le_bytes());
        }
        DataObject::NdArray(a) => {
            out.push(0x08);
            out.push(a.kind().code());
            out.push(a.dims().len() as u8);
            for d in a.dims() {
                out.extend(d.to_le_bytes());
            }
            out.extend(a.bytes());
        }
        DataObject::List(items) => {
            out.push(0x09);
            len(items.len(), out);
            for i in items {
                reference(i, reversed, out);
            }
        }
        DataObject::Map(m) => {
            out.push(0x0A);
            len(m.len(), out);
            let mut keys: Vec<&String> = m.keys().collect();
            keys.sort_by(|a, b| a.as_bytes().cmp(b.as_bytes()));
            if reversed {
                keys.reverse();
            }
            for k in keys {
                len(k.len(), out);
                out.extend(k.as_bytes());
                reference(&m[k], reversed, out);
            }
        }
    }
}

pub fn run() -> Outcome {
    let mut runner = TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    });
    let bytes_total = Cell::new(0usize);
    let result = runner.run(&arb_value(), |v| {
        let bytes = encode(&v);
        let mut canonical = Vec::new();
        reference(&v, false, &mut canonical);
        if bytes != canonical {
            return Err(TestCaseError::fail(format!(
                "encoding differs from reference for {v:?}"
            )));
        }
        let back = decode(&bytes).map_err(|e| TestCaseError::fail(format!("decode: {e}")))?;
        if back != v || encode(&back) != bytes {
            return Err(TestCaseError::fail(format!("round trip changed {v:?}")));
        }
        let mut shuffled = Vec::new();
        reference(&v, true, &mut shuffled);
        let back = decode(&shuffled).map_err(|e| TestCaseError::fail(format!("decode reversed: {e}")))?;
        if encode(&back) != canonical {
            return Err(TestCaseError::fail(format!(
                "reversed maps not canonicalized for {v:?}"
            )));
        }
        bytes_total.set(bytes_total.get() + bytes.len());
        Ok(())
    });
    match result {
        Ok(()) => Ok(format!(
            "{CASES} generated values, 0 failures, {} bytes encoded",
            bytes_total.get()
        )),
        Err(e) => Err(e.to_string()),
    }
}
