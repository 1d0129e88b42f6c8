use epimem_tools::payload::{BusinessObject, PayloadKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::Outcome;

const EXPECTED: [(PayloadKind, usize); 3] = [
    (PayloadKind::Simple, 8),
    (PayloadKind::Moderate, 33),
    (PayloadKind::Complex, 49_225),
];
const IMAGE_BYTES: usize = 49_152;
const OBJECTS_PER_KIND: u64 = 200;

/// Information content counted from the business object's own fields.
fn field_bytes(o: &BusinessObject) -> (usize, usize) {
    match o {
        BusinessObject::Simple(_) => (8, 0),
        BusinessObject::Moderate(m) => (8 + m.name.len() + m.link.len(), 0),
        BusinessObject::Complex(c) => {
            let links: usize = c.links.iter().map(String::len).sum();
            let total = links + 8 + c.part.name.len() + 4 * c.weights.len() + c.image.len();
            (total, c.image.len())
        }
    }
}

pub fn run() -> Outcome {
    for (kind, size) in EXPECTED {
        ensure!(
            kind.payload_size() == size,
            "{kind}: declared {} != {size}",
            kind.payload_size()
        );
        for seed in 0..OBJECTS_PER_KIND {
            let o = kind.generate(&mut ChaCha8Rng::seed_from_u64(seed));
            let (fields, image) = field_bytes(&o);
            ensure!(fields == size, "{kind} seed {seed}: fields hold {fields} bytes");
            ensure!(
                o.to_data().payload_size() == size,
                "{kind} seed {seed}: converted size differs"
            );
            if kind == PayloadKind::Complex {
                ensure!(image == IMAGE_BYTES, "image share {image}");
            }
        }
    }
    Ok(format!(
        "simple 8, moderate 33, complex 49225 (image 49152) over {OBJECTS_PER_KIND} objects each"
    ))
}
