//! Template-driven generation of typed bindings ("business objects") from a schema.
//!
//! A [`BindingTemplate`] carries all target-language syntax. Placeholders use
//! `{name}` syntax:
//!
//! * unit template: `{name}`, `{fields}`, `{to_fields}`, `{from_fields}`
//! * field, to_field, from_field templates: `{name}`, `{type}`, `{kind}`, `{optional}`
//! * kind renderings, keyed by kind name (`int`, `matrix`, `list`, `object`, …):
//!   `{rows}`, `{cols}`, `{elem}`, `{height}`, `{width}`, `{channels}`, `{pixel}`,
//!   `{fields}` (point fields), `{count}`, `{args}` (rendered type arguments joined
//!   by `, `), `{0}`, `{1}`, … (individual type arguments) and `{name}` for object references.

use std::collections::{BTreeMap, HashMap};

use crate::error::BindingError;
use crate::idf::schema::SchemaDocument;
use crate::idf::types::{TypeKind, TypeObject};

#[derive(Debug, Clone, Default)]
pub struct BindingTemplate {
    pub unit: String,
    pub field: String,
    pub to_field: String,
    pub from_field: String,
    pub field_separator: String,
    pub kinds: HashMap<String, String>,
}

pub const ALL_KINDS: [&str; 16] = [
    "int",
    "long",
    "float",
    "double",
    "bool",
    "string",
    "time",
    "matrix",
    "orientation",
    "image",
    "pointcloud",
    "list",
    "tuple",
    "map",
    "object",
    "pair",
];

impl BindingTemplate {
    /// A language-neutral template that echoes the type structure.
    pub fn debug() -> Self {
        let mut kinds: HashMap<String, String> = ALL_KINDS.iter().map(|k| (k.to_string(), k.to_string())).collect();
        kinds.insert("matrix".into(), "matrix({rows},{cols},{elem})".into());
        kinds.insert("image".into(), "image({height},{width},{channels},{pixel})".into());
        kinds.insert("pointcloud".into(), "pointcloud({fields})".into());
        kinds.insert("list".into(), "list({0})".into());
        kinds.insert("map".into(), "map({0})".into());
        kinds.insert("pair".into(), "pair({0}, {1})".into());
        kinds.insert("tuple".into(), "tuple({args})".into());
        kinds.insert("object".into(), "{name}".into());
        BindingTemplate {
            unit: "object {name}\n{fields}".into(),
            field: "  field {name}: {type}{optional}\n".into(),
            to_field: String::new(),
            from_field: String::new(),
            field_separator: String::new(),
            kinds,
        }
    }

    pub fn with_kind(mut self, kind: &str, rendering: &str) -> Self {
        self.kinds.insert(kind.to_owned(), rendering.to_owned());
        self
    }

    pub fn without_kind(mut self, kind: &str) -> Self {
        self.kinds.remove(kind);
        self
    }
}

/// Renders one unit per named object type, keyed by type name.
pub fn emit_binding_stubs(
    schema: &SchemaDocument,
    template: &BindingTemplate,
) -> Result<BTreeMap<String, String>, BindingError> {
    let mut out = BTreeMap::new();
    for ty in &schema.types {
        let name = ty.name.clone().unwrap_or_default();
        let mut fields = Vec::new();
        let mut to_fields = Vec::new();
        let mut from_fields = Vec::new();
        for f in ty.fields() {
            let rendered = render_type(&f.ty, template, &name, &f.name)?;
            let vars = [
                ("name", f.name.as_str()),
                ("type", rendered.as_str()),
                ("kind", f.ty.kind_name()),
                ("optional", if f.optional { "?" } else { "" }),
            ];
            fields.push(substitute(&template.field, &vars));
            to_fields.push(substitute(&template.to_field, &vars));
            from_fields.push(substitute(&template.from_field, &vars));
        }
        let sep = template.field_separator.as_str();
        let unit = substitute(
            &template.unit,
            &[
                ("name", name.as_str()),
                ("fields", &fields.join(sep)),
                ("to_fields", &to_fields.join(sep)),
                ("from_fields", &from_fields.join(sep)),
            ],
        );
        out.insert(name, unit);
    }
    Ok(out)
}

fn render_type(ty: &TypeObject, t: &BindingTemplate, unit: &str, field: &str) -> Result<String, BindingError> {
    let kind = ty.kind_name();
    let pattern = t.kinds.get(kind).ok_or_else(|| BindingError::MissingKind {
        kind: kind.to_owned(),
        unit: unit.to_owned(),
        field: field.to_owned(),
    })?;
    let mut vars: Vec<(String, String)> = Vec::new();
    let mut args: Vec<String> = Vec::new();
    match &ty.kind {
        TypeKind::Leaf(_) | TypeKind::Orientation => {}
        TypeKind::Matrix { rows, cols, elem } => {
            vars.push(("rows".into(), rows.to_string()));
            vars.push(("cols".into(), cols.to_string()));
            vars.push(("elem".into(), elem.to_string()));
        }
        TypeKind::Image {
            height,
            width,
            channels,
            pixel,
        } => {
            vars.push(("height".into(), height.to_string()));
            vars.push(("width".into(), width.to_string()));
            vars.push(("channels".into(), channels.to_string()));
            vars.push(("pixel".into(), pixel.to_string()));
        }
        TypeKind::PointCloud { fields } => {
            vars.push(("fields".into(), fields.join(",")));
            vars.push(("count".into(), fields.len().to_string()));
        }
        TypeKind::List(e) | TypeKind::Map(e) => args.push(render_type(e, t, unit, field)?),
        TypeKind::Pair(a, b) => {
            args.push(render_type(a, t, unit, field)?);
            args.push(render_type(b, t, unit, field)?);
        }
        TypeKind::Tuple(es) => {
            for e in es {
                args.push(render_type(e, t, unit, field)?);
            }
        }
        TypeKind::Object(_) => vars.push(("name".into(), ty.name.clone().unwrap_or_default())),
    }
    vars.push(("args".into(), args.join(", ")));
    for (i, a) in args.into_iter().enumerate() {
        vars.push((i.to_string(), a));
    }
    let borrowed: Vec<(&str, &str)> = vars.iter().map(|(k, v)| (k.as_str(), v.as_str())).collect();
    Ok(substitute(pattern, &borrowed))
}

/// Single-pass `{key}` substitution; unknown placeholders and braces that do not
/// enclose an identifier are kept verbatim.
fn substitute(pattern: &str, vars: &[(&str, &str)]) -> String {
    let mut out = String::with_capacity(pattern.len());
    let mut rest = pattern;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let key_len = after
            .find(|c: char| !(c.is_ascii_alphanumeric() || c == '_'))
            .unwrap_or(after.len());
        let key = &after[..key_len];
        let closed = after[key_len..].starts_with('}');
        match vars.iter().find(|(k, _)| closed && *k == key) {
            Some((_, v)) => {
                out.push_str(v);
                rest = &after[key_len + 1..];
            }
            None => {
                out.push('{');
                rest = after;
            }
        }
    }
    out.push_str(rest);
    out
}
