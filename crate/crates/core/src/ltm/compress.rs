//! Lossless online-tier compression: PNG for image-typed arrays, DEFLATE for the rest.

use std::io::{Read, Write};

use flate2::read::DeflateDecoder;
use flate2::write::DeflateEncoder;

use crate::idf::{codec, DataObject, ElemKind, NdArray, TypeKind, TypeObject};
use crate::layout::{Path, PathSeg};
use crate::ltm::record::Blob;

pub const CODEC_RAW: &str = "raw";
pub const CODEC_DEFLATE: &str = "deflate";
pub const CODEC_PNG: &str = "png";

/// Compresses one instance. Returns the body blob and PNG blobs keyed by the
/// path they were cut from (the body holds `Null` at those paths).
pub fn compress_instance(data: &DataObject, ty: Option<&TypeObject>) -> (Blob, Vec<(Path, Blob)>) {
    let mut body = data.clone();
    let mut images = Vec::new();
    if let Some(ty) = ty {
        let mut paths = Vec::new();
        image_paths(data, ty, &mut Vec::new(), &mut paths);
        for path in paths {
            let slot = at_mut(&mut body, &path).expect("path found by walking the value");
            let DataObject::NdArray(arr) = &*slot else { continue };
            if let Some(png) = png_encode(arr).filter(|p| p.len() < arr.bytes().len()) {
                *slot = DataObject::Null;
                images.push((path, Blob::new(CODEC_PNG, png)));
            }
        }
    }
    (deflate(&codec::encode(&body)), images)
}

pub fn decompress_instance(body: &Blob, images: &[(Path, Blob)]) -> Result<DataObject, String> {
    let bytes = inflate(body)?;
    let mut value = codec::decode(&bytes).map_err(|e| format!("body decode: {e}"))?;
    for (path, blob) in images {
        if blob.codec != CODEC_PNG {
            return Err(format!("unknown image codec {:?}", blob.codec));
        }
        let arr = png_decode(&blob.bytes)?;
        match at_mut(&mut value, path) {
            Some(slot @ DataObject::Null) => *slot = DataObject::NdArray(arr),
            _ => return Err("image path does not address a placeholder".into()),
        }
    }
    Ok(value)
}

/// DEFLATE with a `raw` fallback when compression does not pay off.
pub fn deflate(bytes: &[u8]) -> Blob {
    let mut enc = DeflateEncoder::new(Vec::with_capacity(bytes.len() / 2 + 16), flate2::Compression::default());
    match enc.write_all(bytes).and_then(|_| enc.finish()) {
        Ok(out) if out.len() < bytes.len() => Blob::new(CODEC_DEFLATE, out),
        _ => Blob::new(CODEC_RAW, bytes.to_vec()),
    }
}

pub fn inflate(blob: &Blob) -> Result<Vec<u8>, String> {
    match blob.codec.as_str() {
        CODEC_RAW => Ok(blob.bytes.clone()),
        CODEC_DEFLATE => {
            let mut out = Vec::new();
            DeflateDecoder::new(&blob.bytes[..])
                .read_to_end(&mut out)
                .map_err(|e| format!("inflate: {e}"))?;
            Ok(out)
        }
        other => Err(format!("unknown codec {other:?}")),
    }
}

fn color_type(channels: u32) -> Option<png::ColorType> {
    match channels {
        1 => Some(png::ColorType::Grayscale),
        2 => Some(png::ColorType::GrayscaleAlpha),
        3 => Some(png::ColorType::Rgb),
        4 => Some(png::ColorType::Rgba),
        _ => None,
    }
}

/// PNG encoding of an `[h, w, c]` u8 array with 1 to 4 channels.
pub fn png_encode(arr: &NdArray) -> Option<Vec<u8>> {
    let &[h, w, c] = arr.dims() else { return None };
    if arr.kind() != ElemKind::U8 || h == 0 || w == 0 {
        return None;
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, w, h);
        enc.set_color(color_type(c)?);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_compression(png::Compression::Default);
        enc.set_adaptive_filter(png::AdaptiveFilterType::Adaptive);
        let mut writer = enc.write_header().ok()?;
        writer.write_image_data(arr.bytes()).ok()?;
        writer.finish().ok()?;
    }
    Some(out)
}

pub fn png_decode(bytes: &[u8]) -> Result<NdArray, String> {
    let mut dec = png::Decoder::new(bytes);
    dec.set_transformations(png::Transformations::IDENTITY);
    let mut reader = dec.read_info().map_err(|e| format!("png: {e}"))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader.next_frame(&mut buf).map_err(|e| format!("png: {e}"))?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err("png: unexpected bit depth".into());
    }
    let c = info.color_type.samples() as u32;
    buf.truncate(info.buffer_size());
    NdArray::from_u8(vec![info.height, info.width, c], buf).map_err(|e| format!("png: {e}"))
}

fn image_paths(v: &DataObject, ty: &TypeObject, path: &mut Path, out: &mut Vec<Path>) {
    match (&ty.kind, v) {
        (
            TypeKind::Image {
                pixel: ElemKind::U8, ..
            },
            DataObject::NdArray(a),
        ) if a.kind() == ElemKind::U8 && a.dims().len() == 3 => out.push(path.clone()),
        (TypeKind::Object(fields), DataObject::Map(m)) => {
            for f in fields {
                if let Some(child) = m.get(&f.name) {
                    path.push(PathSeg::Key(f.name.clone()));
                    image_paths(child, &f.ty, path, out);
                    path.pop();
                }
            }
        }
        (TypeKind::Map(t), DataObject::Map(m)) => {
            for (k, child) in m {
                path.push(PathSeg::Key(k.clone()));
                image_paths(child, t, path, out);
                path.pop();
            }
        }
        (TypeKind::List(t), DataObject::List(items)) => {
            for (i, child) in items.iter().enumerate() {
                path.push(PathSeg::Index(i as u32));
                image_paths(child, t, path, out);
                path.pop();
            }
        }
        (TypeKind::Tuple(ts), DataObject::List(items)) => {
            for (i, (t, child)) in ts.iter().zip(items).enumerate() {
                path.push(PathSeg::Index(i as u32));
                image_paths(child, t, path, out);
                path.pop();
            }
        }
        (TypeKind::Pair(a, b), DataObject::List(items)) => {
            for (i, (t, child)) in [a, b].into_iter().zip(items).enumerate() {
                path.push(PathSeg::Index(i as u32));
                image_paths(child, t, path, out);
                path.pop();
            }
        }
        _ => {}
    }
}

pub(crate) fn at_mut<'a>(v: &'a mut DataObject, path: &[PathSeg]) -> Option<&'a mut DataObject> {
    let mut cur = v;
    for seg in path {
        cur = match (seg, cur) {
            (PathSeg::Key(k), DataObject::Map(m)) => m.get_mut(k)?,
            (PathSeg::Index(i), DataObject::List(l)) => l.get_mut(*i as usize)?,
            _ => return None,
        };
    }
    Some(cur)
}
