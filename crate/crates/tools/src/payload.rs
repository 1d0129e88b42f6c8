//! Benchmark business objects of increasing complexity and their IDF conversion.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use epimem_core::{DataObject, NdArray};
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PayloadKind {
    Simple,
    Moderate,
    Complex,
}

impl PayloadKind {
    pub const ALL: [PayloadKind; 3] = [PayloadKind::Simple, PayloadKind::Moderate, PayloadKind::Complex];

    pub fn name(self) -> &'static str {
        match self {
            PayloadKind::Simple => "simple",
            PayloadKind::Moderate => "moderate",
            PayloadKind::Complex => "complex",
        }
    }

    /// Information content in bytes.
    pub fn payload_size(self) -> usize {
        match self {
            PayloadKind::Simple => 8,
            PayloadKind::Moderate => 33,
            PayloadKind::Complex => 49_225,
        }
    }

    pub fn generate(self, rng: &mut impl Rng) -> BusinessObject {
        match self {
            PayloadKind::Simple => BusinessObject::Simple(Simple::random(rng)),
            PayloadKind::Moderate => BusinessObject::Moderate(Moderate::random(rng)),
            PayloadKind::Complex => BusinessObject::Complex(Box::new(Complex::random(rng))),
        }
    }
}

impl fmt::Display for PayloadKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PayloadKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "simple" => Ok(PayloadKind::Simple),
            "moderate" => Ok(PayloadKind::Moderate),
            "complex" => Ok(PayloadKind::Complex),
            other => Err(format!("unknown payload kind {other:?} (simple, moderate, complex)")),
        }
    }
}

/// Memory links in benchmark payloads are fixed-width ID strings.
pub const LINK_LEN: usize = 20;
pub const IMAGE_SIDE: u32 = 128;

fn random_link(rng: &mut impl Rng) -> String {
    let link = format!("Object/Instance/p/{:02}", rng.gen_range(0..100));
    debug_assert_eq!(link.len(), LINK_LEN);
    link
}

fn random_word(rng: &mut impl Rng, len: usize) -> String {
    (0..len).map(|_| rng.gen_range(b'a'..=b'z') as char).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Simple {
    pub value: i64,
}

impl Simple {
    fn random(rng: &mut impl Rng) -> Self {
        Simple { value: rng.gen() }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Moderate {
    pub value: i64,
    /// Always five characters.
    pub name: String,
    pub link: String,
}

impl Moderate {
    fn random(rng: &mut impl Rng) -> Self {
        Moderate {
            value: rng.gen(),
            name: random_word(rng, 5),
            link: random_link(rng),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Part {
    pub id: i64,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Complex {
    pub links: [String; 2],
    pub part: Part,
    /// Fixed keys `a` to `e`.
    pub weights: BTreeMap<String, f32>,
    /// 128 x 128 x 3 RGB.
    pub image: Vec<u8>,
}

impl Complex {
    fn random(rng: &mut impl Rng) -> Self {
        let side = IMAGE_SIDE as usize;
        let (dx, dy): (u8, u8) = (rng.gen(), rng.gen());
        let mut image = Vec::with_capacity(side * side * 3);
        for y in 0..side {
            for x in 0..side {
                image.extend([(x as u8).wrapping_add(dx), (y as u8).wrapping_add(dy), ((x ^ y) as u8)]);
            }
        }
        Complex {
            links: [random_link(rng), random_link(rng)],
            part: Part {
                id: rng.gen(),
                name: random_word(rng, 5),
            },
            weights: ["a", "b", "c", "d", "e"]
                .iter()
                .map(|k| (k.to_string(), rng.gen()))
                .collect(),
            image,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum BusinessObject {
    Simple(Simple),
    Moderate(Moderate),
    Complex(Box<Complex>),
}

impl BusinessObject {
    pub fn kind(&self) -> PayloadKind {
        match self {
            BusinessObject::Simple(_) => PayloadKind::Simple,
            BusinessObject::Moderate(_) => PayloadKind::Moderate,
            BusinessObject::Complex(_) => PayloadKind::Complex,
        }
    }

    pub fn to_data(&self) -> DataObject {
        match self {
            BusinessObject::Simple(s) => DataObject::map([("value", DataObject::Int64(s.value))]),
            BusinessObject::Moderate(m) => DataObject::map([
                ("value", DataObject::Int64(m.value)),
                ("name", DataObject::string(&m.name)),
                ("link", DataObject::string(&m.link)),
            ]),
            BusinessObject::Complex(c) => DataObject::map([
                (
                    "links",
                    DataObject::List(c.links.iter().map(DataObject::string).collect()),
                ),
                (
                    "part",
                    DataObject::map([
                        ("id", DataObject::Int64(c.part.id)),
                        ("name", DataObject::string(&c.part.name)),
                    ]),
                ),
                (
                    "weights",
                    DataObject::Map(
                        c.weights
                            .iter()
                            .map(|(k, v)| (k.clone(), DataObject::Float32(*v)))
                            .collect(),
                    ),
                ),
                (
                    "image",
                    DataObject::NdArray(
                        NdArray::from_u8(vec![IMAGE_SIDE, IMAGE_SIDE, 3], c.image.clone()).expect("fixed image size"),
                    ),
                ),
            ]),
        }
    }

    pub fn from_data(kind: PayloadKind, v: &DataObject) -> Option<Self> {
        let s = |v: &DataObject, k: &str| v.get(k).and_then(DataObject::as_str).map(str::to_owned);
        let i = |v: &DataObject, k: &str| v.get(k).and_then(DataObject::as_i64);
        Some(match kind {
            PayloadKind::Simple => BusinessObject::Simple(Simple { value: i(v, "value")? }),
            PayloadKind::Moderate => BusinessObject::Moderate(Moderate {
                value: i(v, "value")?,
                name: s(v, "name")?,
                link: s(v, "link")?,
            }),
            PayloadKind::Complex => {
                let links = v.get("links")?.as_list()?;
                let part = v.get("part")?;
                let weights = v
                    .get("weights")?
                    .as_map()?
                    .iter()
                    .map(|(k, w)| match w {
                        DataObject::Float32(f) => Some((k.clone(), *f)),
                        _ => None,
                    })
                    .collect::<Option<_>>()?;
                BusinessObject::Complex(Box::new(Complex {
                    links: [links.first()?.as_str()?.to_owned(), links.get(1)?.as_str()?.to_owned()],
                    part: Part {
                        id: i(part, "id")?,
                        name: s(part, "name")?,
                    },
                    weights,
                    image: v.get("image")?.as_ndarray()?.bytes().to_vec(),
                }))
            }
        })
    }
}
