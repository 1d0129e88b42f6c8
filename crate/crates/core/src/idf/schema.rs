//! XML schema files declaring named object types.
//!
//! ```xml
//! <schema>
//!   <import name="common"/>
//!   <object name="Pose">
//!     <field name="position" type="matrix(3,1,f32)"/>
//!     <field name="orientation" type="orientation"/>
//!     <field name="label" type="string" optional="true"/>
//!   </object>
//! </schema>
//! ```
//!
//! Field types are leaf names, special kinds (`matrix(r,c,elem)`, `orientation`,
//! `image(h,w,c,pixel)`, `pointcloud(f1,f2,…)`), containers (`list(T)`,
//! `map(T)`, `tuple(T1,…)`, `pair(A,B)`), or the name of another object.

use std::collections::{BTreeMap, HashMap};

use crate::error::SchemaError;
use crate::idf::types::{Field, LeafKind, TypeKind, TypeObject};
use crate::idf::value::ElemKind;

/// Position in the schema text, 1-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Location {
    pub line: u32,
    pub column: u32,
}

impl std::fmt::Display for Location {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}:{}", self.line, self.column)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct SchemaDocument {
    /// Object types in declaration order, fully resolved.
    pub types: Vec<TypeObject>,
    pub imports: Vec<String>,
}

impl SchemaDocument {
    pub fn get(&self, name: &str) -> Option<&TypeObject> {
        self.types.iter().find(|t| t.name.as_deref() == Some(name))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.types.iter().filter_map(|t| t.name.as_deref())
    }
}

/// Parses a schema with no imported documents available.
pub fn parse_schema(text: &str) -> Result<SchemaDocument, SchemaError> {
    parse_schema_with(text, &[])
}

/// Parses a schema, resolving names also against previously parsed `imports`.
pub fn parse_schema_with(text: &str, imports: &[&SchemaDocument]) -> Result<SchemaDocument, SchemaError> {
    let doc = roxmltree::Document::parse(text).map_err(|e| SchemaError::Parse {
        message: e.to_string(),
        location: Location {
            line: e.pos().row,
            column: e.pos().col,
        },
    })?;
    let loc = |node: roxmltree::Node| {
        let p = doc.text_pos_at(node.range().start);
        Location {
            line: p.row,
            column: p.col,
        }
    };
    let root = doc.root_element();
    if root.tag_name().name() != "schema" {
        return Err(SchemaError::Parse {
            message: format!("root element must be <schema>, found <{}>", root.tag_name().name()),
            location: loc(root),
        });
    }

    let mut import_names = Vec::new();
    let mut decls: Vec<Decl> = Vec::new();
    for child in root.children().filter(|n| n.is_element()) {
        match child.tag_name().name() {
            "import" => {
                let name = required_attr(child, "name", loc(child))?;
                import_names.push(name.to_owned());
            }
            "object" => {
                let name = required_attr(child, "name", loc(child))?.to_owned();
                if decls.iter().any(|d| d.name == name) {
                    return Err(SchemaError::Duplicate {
                        name,
                        location: loc(child),
                    });
                }
                let mut fields = Vec::new();
                for f in child.children().filter(|n| n.is_element()) {
                    if f.tag_name().name() != "field" {
                        return Err(SchemaError::Parse {
                            message: format!("unexpected element <{}> in object", f.tag_name().name()),
                            location: loc(f),
                        });
                    }
                    let fname = required_attr(f, "name", loc(f))?.to_owned();
                    let ty_text = required_attr(f, "type", loc(f))?;
                    let optional = match f.attribute("optional") {
                        None | Some("false") | Some("0") => false,
                        Some("true") | Some("1") => true,
                        Some(other) => {
                            return Err(SchemaError::Parse {
                                message: format!("optional must be true or false, got {other:?}"),
                                location: loc(f),
                            })
                        }
                    };
                    let term = TermParser::new(ty_text).parse().map_err(|message| SchemaError::Parse {
                        message: format!("bad type expression {ty_text:?}: {message}"),
                        location: loc(f),
                    })?;
                    fields.push(RawField {
                        name: fname,
                        term,
                        optional,
                        location: loc(f),
                    });
                }
                decls.push(Decl {
                    name,
                    fields,
                    location: loc(child),
                });
            }
            other => {
                return Err(SchemaError::Parse {
                    message: format!("unexpected element <{other}>"),
                    location: loc(child),
                })
            }
        }
    }

    let mut external: HashMap<&str, &TypeObject> = HashMap::new();
    for imported in imports {
        for t in &imported.types {
            if let Some(n) = &t.name {
                external.insert(n, t);
            }
        }
    }

    let by_name: HashMap<&str, &Decl> = decls.iter().map(|d| (d.name.as_str(), d)).collect();
    let mut resolver = Resolver {
        decls: &by_name,
        external: &external,
        done: BTreeMap::new(),
        stack: Vec::new(),
    };
    let mut types = Vec::with_capacity(decls.len());
    for d in &decls {
        types.push(resolver.object(d)?);
    }
    Ok(SchemaDocument {
        types,
        imports: import_names,
    })
}

fn required_attr<'a>(node: roxmltree::Node<'a, '_>, attr: &str, location: Location) -> Result<&'a str, SchemaError> {
    node.attribute(attr).ok_or_else(|| SchemaError::Parse {
        message: format!("<{}> is missing attribute {attr:?}", node.tag_name().name()),
        location,
    })
}

struct Decl {
    name: String,
    fields: Vec<RawField>,
    location: Location,
}

struct RawField {
    name: String,
    term: Term,
    optional: bool,
    location: Location,
}

/// Parsed but uninterpreted type expression: `head` or `head(arg, …)`.
#[derive(Debug, Clone)]
struct Term {
    head: String,
    args: Option<Vec<Term>>,
}

struct TermParser<'a> {
    src: &'a [u8],
    pos: usize,
}

impl<'a> TermParser<'a> {
    fn new(text: &'a str) -> Self {
        TermParser {
            src: text.as_bytes(),
            pos: 0,
        }
    }

    fn parse(mut self) -> Result<Term, String> {
        let t = self.term()?;
        self.skip_ws();
        if self.pos != self.src.len() {
            return Err(format!("unexpected input at column {}", self.pos + 1));
        }
        Ok(t)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn term(&mut self) -> Result<Term, String> {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len()
            && (self.src[self.pos].is_ascii_alphanumeric() || matches!(self.src[self.pos], b'_' | b'-' | b':'))
        {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(format!("expected a name at column {}", start + 1));
        }
        let head = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        self.skip_ws();
        if self.src.get(self.pos) != Some(&b'(') {
            return Ok(Term { head, args: None });
        }
        self.pos += 1;
        let mut args = Vec::new();
        self.skip_ws();
        if self.src.get(self.pos) == Some(&b')') {
            self.pos += 1;
            return Ok(Term { head, args: Some(args) });
        }
        loop {
            args.push(self.term()?);
            self.skip_ws();
            match self.src.get(self.pos) {
                Some(b',') => self.pos += 1,
                Some(b')') => {
                    self.pos += 1;
                    return Ok(Term { head, args: Some(args) });
                }
                _ => return Err(format!("expected ',' or ')' at column {}", self.pos + 1)),
            }
        }
    }
}

struct Resolver<'d> {
    decls: &'d HashMap<&'d str, &'d Decl>,
    external: &'d HashMap<&'d str, &'d TypeObject>,
    done: BTreeMap<String, TypeObject>,
    stack: Vec<String>,
}

impl Resolver<'_> {
    fn object(&mut self, decl: &Decl) -> Result<TypeObject, SchemaError> {
        if let Some(t) = self.done.get(&decl.name) {
            return Ok(t.clone());
        }
        if let Some(start) = self.stack.iter().position(|n| n == &decl.name) {
            let mut cycle = self.stack[start..].to_vec();
            cycle.push(decl.name.clone());
            return Err(SchemaError::Cycle {
                names: cycle,
                location: decl.location,
            });
        }
        self.stack.push(decl.name.clone());
        let mut fields = Vec::with_capacity(decl.fields.len());
        for f in &decl.fields {
            if fields.iter().any(|x: &Field| x.name == f.name) {
                return Err(SchemaError::Duplicate {
                    name: format!("{}.{}", decl.name, f.name),
                    location: f.location,
                });
            }
            let ty = self.term(&f.term, f.location)?;
            fields.push(Field {
                name: f.name.clone(),
                ty,
                optional: f.optional,
            });
        }
        self.stack.pop();
        let t = TypeObject::object(decl.name.clone(), fields);
        self.done.insert(decl.name.clone(), t.clone());
        Ok(t)
    }

    fn term(&mut self, term: &Term, location: Location) -> Result<TypeObject, SchemaError> {
        let bad = |message: String| SchemaError::Parse { message, location };
        let args = term.args.as_deref();
        let nargs = args.map_or(0, <[Term]>::len);
        let expect_args = |n: usize| -> Result<&[Term], SchemaError> {
            match args {
                Some(a) if a.len() == n => Ok(a),
                _ => Err(bad(format!("{} takes {n} argument(s), got {nargs}", term.head))),
            }
        };
        let number = |t: &Term| -> Result<u32, SchemaError> {
            match (&t.args, t.head.parse::<u32>()) {
                (None, Ok(n)) => Ok(n),
                _ => Err(bad(format!("expected a non-negative integer, got {:?}", t.head))),
            }
        };
        let elem = |t: &Term| -> Result<ElemKind, SchemaError> {
            match (&t.args, ElemKind::from_name(&t.head)) {
                (None, Some(k)) => Ok(k),
                _ => Err(bad(format!("unknown element kind {:?}", t.head))),
            }
        };
        if let Some(leaf) = LeafKind::from_name(&term.head) {
            if args.is_some() {
                return Err(bad(format!("{} takes no arguments", term.head)));
            }
            return Ok(TypeObject::leaf(leaf));
        }
        let kind = match term.head.as_str() {
            "matrix" => {
                let a = expect_args(3)?;
                TypeKind::Matrix {
                    rows: number(&a[0])?,
                    cols: number(&a[1])?,
                    elem: elem(&a[2])?,
                }
            }
            "orientation" => {
                if args.is_some() {
                    return Err(bad("orientation takes no arguments".into()));
                }
                TypeKind::Orientation
            }
            "image" => {
                let a = expect_args(4)?;
                TypeKind::Image {
                    height: number(&a[0])?,
                    width: number(&a[1])?,
                    channels: number(&a[2])?,
                    pixel: elem(&a[3])?,
                }
            }
            "pointcloud" => {
                let a = args.ok_or_else(|| bad("pointcloud needs a field list".into()))?;
                let mut fields = Vec::with_capacity(a.len());
                for t in a {
                    if t.args.is_some() {
                        return Err(bad(format!("point field {:?} cannot take arguments", t.head)));
                    }
                    fields.push(t.head.clone());
                }
                TypeKind::PointCloud { fields }
            }
            "list" => TypeKind::List(Box::new(self.term(&expect_args(1)?[0], location)?)),
            "map" => TypeKind::Map(Box::new(self.term(&expect_args(1)?[0], location)?)),
            "pair" => {
                let a = expect_args(2)?;
                TypeKind::Pair(
                    Box::new(self.term(&a[0], location)?),
                    Box::new(self.term(&a[1], location)?),
                )
            }
            "tuple" => {
                let a = args.ok_or_else(|| bad("tuple needs element types".into()))?;
                TypeKind::Tuple(a.iter().map(|t| self.term(t, location)).collect::<Result<_, _>>()?)
            }
            name => {
                if args.is_some() {
                    return Err(bad(format!("object reference {name:?} cannot take arguments")));
                }
                if let Some(decl) = self.decls.get(name) {
                    return self.object(decl);
                }
                if let Some(t) = self.external.get(name) {
                    return Ok((*t).clone());
                }
                return Err(SchemaError::Unresolved {
                    name: name.to_owned(),
                    location,
                });
            }
        };
        Ok(TypeObject::new(kind))
    }
}
