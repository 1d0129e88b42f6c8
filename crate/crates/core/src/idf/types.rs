//! Type objects: schema annotations mirroring the shape of data objects, and
//! the partial cast that binds a data object to one.

use std::collections::BTreeMap;
use std::fmt;

use crate::error::CastError;
use crate::idf::value::{DataObject, ElemKind, NdArray};

/// Leaf kinds of a type object.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum LeafKind {
    Int,
    Long,
    Float,
    Double,
    Bool,
    String,
    Time,
}

impl LeafKind {
    pub fn name(self) -> &'static str {
        match self {
            LeafKind::Int => "int",
            LeafKind::Long => "long",
            LeafKind::Float => "float",
            LeafKind::Double => "double",
            LeafKind::Bool => "bool",
            LeafKind::String => "string",
            LeafKind::Time => "time",
        }
    }

    pub fn from_name(name: &str) -> Option<Self> {
        Some(match name {
            "int" => LeafKind::Int,
            "long" => LeafKind::Long,
            "float" => LeafKind::Float,
            "double" => LeafKind::Double,
            "bool" => LeafKind::Bool,
            "string" => LeafKind::String,
            "time" => LeafKind::Time,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    pub name: String,
    pub ty: TypeObject,
    pub optional: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum TypeKind {
    Leaf(LeafKind),
    Matrix {
        rows: u32,
        cols: u32,
        elem: ElemKind,
    },
    /// Quaternion stored as 4 × f32 in x, y, z, w order.
    Orientation,
    Image {
        height: u32,
        width: u32,
        channels: u32,
        pixel: ElemKind,
    },
    /// `[N, F]` array of f32, one column per named point field.
    PointCloud {
        fields: Vec<String>,
    },
    List(Box<TypeObject>),
    Tuple(Vec<TypeObject>),
    Map(Box<TypeObject>),
    Object(Vec<Field>),
    Pair(Box<TypeObject>, Box<TypeObject>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct TypeObject {
    pub kind: TypeKind,
    pub name: Option<String>,
}

impl TypeObject {
    pub fn new(kind: TypeKind) -> Self {
        TypeObject { kind, name: None }
    }

    pub fn named(name: impl Into<String>, kind: TypeKind) -> Self {
        TypeObject {
            kind,
            name: Some(name.into()),
        }
    }

    pub fn leaf(kind: LeafKind) -> Self {
        Self::new(TypeKind::Leaf(kind))
    }

    pub fn object(name: impl Into<String>, fields: Vec<Field>) -> Self {
        Self::named(name, TypeKind::Object(fields))
    }

    /// Short kind label used by template rendering and error messages.
    pub fn kind_name(&self) -> &'static str {
        match &self.kind {
            TypeKind::Leaf(l) => l.name(),
            TypeKind::Matrix { .. } => "matrix",
            TypeKind::Orientation => "orientation",
            TypeKind::Image { .. } => "image",
            TypeKind::PointCloud { .. } => "pointcloud",
            TypeKind::List(_) => "list",
            TypeKind::Tuple(_) => "tuple",
            TypeKind::Map(_) => "map",
            TypeKind::Object(_) => "object",
            TypeKind::Pair(..) => "pair",
        }
    }

    pub fn fields(&self) -> &[Field] {
        match &self.kind {
            TypeKind::Object(f) => f,
            _ => &[],
        }
    }

    /// Element kind and dims a special kind's NDArray must have. Point clouds
    /// leave the row count open (`None` in the first position).
    pub fn array_layout(&self) -> Option<(ElemKind, Vec<Option<u32>>)> {
        match &self.kind {
            TypeKind::Matrix { rows, cols, elem } => Some((*elem, vec![Some(*rows), Some(*cols)])),
            TypeKind::Orientation => Some((ElemKind::F32, vec![Some(4)])),
            TypeKind::Image {
                height,
                width,
                channels,
                pixel,
            } => Some((*pixel, vec![Some(*height), Some(*width), Some(*channels)])),
            TypeKind::PointCloud { fields } => Some((ElemKind::F32, vec![None, Some(fields.len() as u32)])),
            _ => None,
        }
    }

    /// Names of non-optional object fields.
    pub fn required_fields(&self) -> impl Iterator<Item = &Field> {
        self.fields().iter().filter(|f| !f.optional)
    }
}

impl fmt::Display for TypeObject {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.kind {
            TypeKind::Leaf(l) => f.write_str(l.name()),
            TypeKind::Matrix { rows, cols, elem } => write!(f, "matrix({rows},{cols},{elem})"),
            TypeKind::Orientation => f.write_str("orientation"),
            TypeKind::Image {
                height,
                width,
                channels,
                pixel,
            } => write!(f, "image({height},{width},{channels},{pixel})"),
            TypeKind::PointCloud { fields } => write!(f, "pointcloud({})", fields.join(",")),
            TypeKind::List(t) => write!(f, "list({t})"),
            TypeKind::Map(t) => write!(f, "map({t})"),
            TypeKind::Pair(a, b) => write!(f, "pair({a},{b})"),
            TypeKind::Tuple(ts) => {
                f.write_str("tuple(")?;
                for (i, t) in ts.iter().enumerate() {
                    if i > 0 {
                        f.write_str(",")?;
                    }
                    write!(f, "{t}")?;
                }
                f.write_str(")")
            }
            TypeKind::Object(_) => match &self.name {
                Some(n) => f.write_str(n),
                None => f.write_str("object"),
            },
        }
    }
}

/// A value bound to a type object.
#[derive(Debug, Clone, PartialEq)]
pub enum CastValue {
    /// Leaf value, widened to the declared kind where needed.
    Leaf(DataObject),
    /// NDArray validated against a special kind's layout.
    Array(NdArray),
    List(Vec<CastValue>),
    Map(BTreeMap<String, CastValue>),
    Object(BTreeMap<String, FieldState>),
}

#[derive(Debug, Clone, PartialEq)]
pub enum FieldState {
    Present(CastValue),
    Uninitialized,
}

impl FieldState {
    pub fn is_present(&self) -> bool {
        matches!(self, FieldState::Present(_))
    }

    pub fn value(&self) -> Option<&CastValue> {
        match self {
            FieldState::Present(v) => Some(v),
            FieldState::Uninitialized => None,
        }
    }
}

impl CastValue {
    pub fn field(&self, name: &str) -> Option<&FieldState> {
        match self {
            CastValue::Object(fields) => fields.get(name),
            _ => None,
        }
    }

    pub fn as_leaf(&self) -> Option<&DataObject> {
        match self {
            CastValue::Leaf(v) => Some(v),
            _ => None,
        }
    }

    /// Quaternion components (x, y, z, w) of an orientation-shaped array.
    pub fn as_quaternion(&self) -> Option<[f32; 4]> {
        match self {
            CastValue::Array(a) if a.kind() == ElemKind::F32 && a.dims() == [4] => {
                let mut q = [0f32; 4];
                for (i, c) in q.iter_mut().enumerate() {
                    *c = a.get_f64(i) as f32;
                }
                Some(q)
            }
            _ => None,
        }
    }

    /// Converts back to a plain data object, dropping uninitialized fields.
    pub fn to_data(&self) -> DataObject {
        match self {
            CastValue::Leaf(v) => v.clone(),
            CastValue::Array(a) => DataObject::NdArray(a.clone()),
            CastValue::List(items) => DataObject::List(items.iter().map(CastValue::to_data).collect()),
            CastValue::Map(m) => DataObject::Map(m.iter().map(|(k, v)| (k.clone(), v.to_data())).collect()),
            CastValue::Object(fields) => DataObject::Map(
                fields
                    .iter()
                    .filter_map(|(k, s)| s.value().map(|v| (k.clone(), v.to_data())))
                    .collect(),
            ),
        }
    }
}

/// Result of a partial cast.
#[derive(Debug, Clone, PartialEq)]
pub struct TypedView {
    pub root: CastValue,
    /// Dotted paths of every uninitialized object field, at any depth.
    pub uninitialized: Vec<String>,
    /// Subset of `uninitialized` whose field and all enclosing fields are non-optional.
    pub missing_required: Vec<String>,
}

impl TypedView {
    pub fn field(&self, name: &str) -> Option<&FieldState> {
        self.root.field(name)
    }

    pub fn is_complete(&self) -> bool {
        self.missing_required.is_empty()
    }
}

/// Binds `value` to `ty`. Object fields resolve independently by name; absent or
/// unrepresentable members become [`FieldState::Uninitialized`]. Only leaf,
/// special and container kinds can fail, when the value's variant does not fit.
pub fn cast(value: &DataObject, ty: &TypeObject) -> Result<TypedView, CastError> {
    let mut uninitialized = Vec::new();
    let mut missing_required = Vec::new();
    let root = cast_value(value, ty, "", true, &mut uninitialized, &mut missing_required)?;
    Ok(TypedView {
        root,
        uninitialized,
        missing_required,
    })
}

fn join(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_owned()
    } else {
        format!("{prefix}.{name}")
    }
}

fn cast_value(
    value: &DataObject,
    ty: &TypeObject,
    path: &str,
    required: bool,
    uninit: &mut Vec<String>,
    missing: &mut Vec<String>,
) -> Result<CastValue, CastError> {
    let mismatch = || CastError::Shape {
        path: path.to_owned(),
        expected: ty.to_string(),
        found: value.variant_name(),
    };
    match &ty.kind {
        TypeKind::Leaf(kind) => cast_leaf(value, *kind).map(CastValue::Leaf).ok_or_else(mismatch),
        TypeKind::Matrix { .. } | TypeKind::Orientation | TypeKind::Image { .. } | TypeKind::PointCloud { .. } => {
            let arr = value.as_ndarray().ok_or_else(mismatch)?;
            let (elem, dims) = ty.array_layout().expect("special kind");
            let fits = arr.kind() == elem
                && arr.dims().len() == dims.len()
                && arr
                    .dims()
                    .iter()
                    .zip(&dims)
                    .all(|(have, want)| want.is_none_or(|w| w == *have));
            if !fits {
                return Err(CastError::ArrayLayout {
                    path: path.to_owned(),
                    expected: ty.to_string(),
                    kind: arr.kind(),
                    dims: arr.dims().to_vec(),
                });
            }
            Ok(CastValue::Array(arr.clone()))
        }
        TypeKind::List(elem) => {
            let items = value.as_list().ok_or_else(mismatch)?;
            items
                .iter()
                .enumerate()
                .map(|(i, v)| cast_value(v, elem, &join(path, &i.to_string()), required, uninit, missing))
                .collect::<Result<_, _>>()
                .map(CastValue::List)
        }
        TypeKind::Tuple(elems) => {
            let items = value.as_list().ok_or_else(mismatch)?;
            if items.len() != elems.len() {
                return Err(CastError::Arity {
                    path: path.to_owned(),
                    expected: elems.len(),
                    found: items.len(),
                });
            }
            items
                .iter()
                .zip(elems)
                .enumerate()
                .map(|(i, (v, t))| cast_value(v, t, &join(path, &i.to_string()), required, uninit, missing))
                .collect::<Result<_, _>>()
                .map(CastValue::List)
        }
        TypeKind::Pair(a, b) => {
            let items = value.as_list().ok_or_else(mismatch)?;
            if items.len() != 2 {
                return Err(CastError::Arity {
                    path: path.to_owned(),
                    expected: 2,
                    found: items.len(),
                });
            }
            Ok(CastValue::List(vec![
                cast_value(&items[0], a, &join(path, "0"), required, uninit, missing)?,
                cast_value(&items[1], b, &join(path, "1"), required, uninit, missing)?,
            ]))
        }
        TypeKind::Map(elem) => {
            let m = value.as_map().ok_or_else(mismatch)?;
            m.iter()
                .map(|(k, v)| cast_value(v, elem, &join(path, k), required, uninit, missing).map(|c| (k.clone(), c)))
                .collect::<Result<_, _>>()
                .map(CastValue::Map)
        }
        TypeKind::Object(fields) => {
            let members = value.as_map();
            let mut out = BTreeMap::new();
            for field in fields {
                let fpath = join(path, &field.name);
                let freq = required && !field.optional;
                // Nested failures are tracked separately so a rejected member
                // leaves no partial bookkeeping behind.
                let mut sub_uninit = Vec::new();
                let mut sub_missing = Vec::new();
                let state = match members.and_then(|m| m.get(&field.name)) {
                    Some(member) => {
                        match cast_value(member, &field.ty, &fpath, freq, &mut sub_uninit, &mut sub_missing) {
                            Ok(v) => FieldState::Present(v),
                            Err(_) => FieldState::Uninitialized,
                        }
                    }
                    None => FieldState::Uninitialized,
                };
                if state.is_present() {
                    uninit.append(&mut sub_uninit);
                    missing.append(&mut sub_missing);
                } else {
                    uninit.push(fpath.clone());
                    if freq {
                        missing.push(fpath);
                    }
                }
                out.insert(field.name.clone(), state);
            }
            Ok(CastValue::Object(out))
        }
    }
}

/// Lossless conversions only: int→long, float→double, int→double.
fn cast_leaf(value: &DataObject, kind: LeafKind) -> Option<DataObject> {
    use DataObject as D;
    Some(match (kind, value) {
        (LeafKind::Int, D::Int32(v)) => D::Int32(*v),
        (LeafKind::Long, D::Int32(v)) => D::Int64(*v as i64),
        (LeafKind::Long, D::Int64(v)) => D::Int64(*v),
        (LeafKind::Float, D::Float32(v)) => D::Float32(*v),
        (LeafKind::Double, D::Float32(v)) => D::Float64(*v as f64),
        (LeafKind::Double, D::Float64(v)) => D::Float64(*v),
        (LeafKind::Double, D::Int32(v)) => D::Float64(*v as f64),
        (LeafKind::Bool, D::Bool(v)) => D::Bool(*v),
        (LeafKind::String, D::String(v)) => D::String(v.clone()),
        (LeafKind::Time, D::Time(v)) => D::Time(*v),
        _ => return None,
    })
}
