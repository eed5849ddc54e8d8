//! OBJ and PLY mesh files.

use std::fs;
use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use super::{TriMesh, Vec3};
use crate::error::{Error, Result};

fn parse_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Parse {
        path: path.display().to_string(),
        msg: msg.into(),
    }
}

pub fn read_mesh(path: &Path) -> Result<TriMesh> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "obj" => read_obj(path),
        Some(ext) if ext == "ply" => read_ply(path),
        _ => Err(parse_err(path, "unsupported mesh extension (expected .obj or .ply)")),
    }
}

pub fn write_mesh(mesh: &TriMesh, path: &Path) -> Result<()> {
    match path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()) {
        Some(ext) if ext == "obj" => write_obj(mesh, path),
        _ => write_ply(mesh, None, path),
    }
}

pub fn read_obj(path: &Path) -> Result<TriMesh> {
    let file = BufReader::new(fs::File::open(path)?);
    let mut mesh = TriMesh::default();
    for (lineno, line) in file.lines().enumerate() {
        let line = line?;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(|s| s.parse::<f64>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| parse_err(path, format!("line {}: {e}", lineno + 1)))?;
                if coords.len() != 3 {
                    return Err(parse_err(path, format!("line {}: vertex needs 3 coordinates", lineno + 1)));
                }
                mesh.vertices.push([coords[0], coords[1], coords[2]]);
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first
                            .parse()
                            .map_err(|e| parse_err(path, format!("line {}: {e}", lineno + 1)))?;
                        let n = mesh.vertices.len() as i64;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 || resolved >= n {
                            return Err(parse_err(path, format!("line {}: index {i} out of range", lineno + 1)));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<_>>()?;
                if idx.len() < 3 {
                    return Err(parse_err(path, format!("line {}: face needs 3 vertices", lineno + 1)));
                }
                for k in 1..idx.len() - 1 {
                    mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    Ok(mesh)
}

pub fn write_obj(mesh: &TriMesh, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for v in &mesh.vertices {
        writeln!(out, "v {} {} {}", v[0], v[1], v[2])?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    out.flush()?;
    Ok(())
}

/// ASCII PLY with an optional per-vertex scalar property named `label`.
pub fn write_ply(mesh: &TriMesh, labels: Option<&[f64]>, path: &Path) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "ply\nformat ascii 1.0")?;
    writeln!(out, "element vertex {}", mesh.vertices.len())?;
    writeln!(out, "property double x\nproperty double y\nproperty double z")?;
    if labels.is_some() {
        writeln!(out, "property double label")?;
    }
    writeln!(out, "element face {}", mesh.faces.len())?;
    writeln!(out, "property list uchar int vertex_indices\nend_header")?;
    for (i, v) in mesh.vertices.iter().enumerate() {
        match labels {
            Some(l) => writeln!(out, "{} {} {} {}", v[0], v[1], v[2], l[i])?,
            None => writeln!(out, "{} {} {}", v[0], v[1], v[2])?,
        }
    }
    for f in &mesh.faces {
        writeln!(out, "3 {} {} {}", f[0], f[1], f[2])?;
    }
    out.flush()?;
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    I8,
    U8,
    I16,
    U16,
    I32,
    U32,
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Scalar> {
        Some(match s {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Scalar::I8 | Scalar::U8 => 1,
            Scalar::I16 | Scalar::U16 => 2,
            Scalar::I32 | Scalar::U32 | Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }

    fn read_le(self, b: &[u8]) -> f64 {
        match self {
            Scalar::I8 => b[0] as i8 as f64,
            Scalar::U8 => b[0] as f64,
            Scalar::I16 => i16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::U16 => u16::from_le_bytes([b[0], b[1]]) as f64,
            Scalar::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

#[derive(Debug)]
enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

/// Reads ASCII or binary little-endian PLY (vertex x/y/z and face index lists).
pub fn read_ply(path: &Path) -> Result<TriMesh> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    let header_end = bytes
        .windows(10)
        .position(|w| w == b"end_header")
        .ok_or_else(|| parse_err(path, "missing end_header"))?;
    let mut body_start = header_end + 10;
    while body_start < bytes.len() && (bytes[body_start] == b'\r' || bytes[body_start] == b'\n') {
        body_start += 1;
        if bytes[body_start - 1] == b'\n' {
            break;
        }
    }
    let header = String::from_utf8_lossy(&bytes[..header_end]).to_string();
    let mut lines = header.lines();
    if lines.next().map(str::trim) != Some("ply") {
        return Err(parse_err(path, "missing ply magic"));
    }
    let mut binary = false;
    let mut elements: Vec<Element> = Vec::new();
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", "ascii", ..] => binary = false,
            ["format", "binary_little_endian", ..] => binary = true,
            ["format", other, ..] => return Err(parse_err(path, format!("unsupported PLY format {other}"))),
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count.parse().map_err(|_| parse_err(path, "bad element count"))?,
                props: Vec::new(),
            }),
            ["property", "list", ct, it, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(path, "property before element"))?;
                let ct = Scalar::parse(ct).ok_or_else(|| parse_err(path, "bad list count type"))?;
                let it = Scalar::parse(it).ok_or_else(|| parse_err(path, "bad list item type"))?;
                el.props.push(Property::List(name.to_string(), ct, it));
            }
            ["property", ty, name] => {
                let el = elements.last_mut().ok_or_else(|| parse_err(path, "property before element"))?;
                let ty = Scalar::parse(ty).ok_or_else(|| parse_err(path, format!("bad property type {ty}")))?;
                el.props.push(Property::Scalar(name.to_string(), ty));
            }
            _ => {}
        }
    }

    let mut mesh = TriMesh::default();
    let body = &bytes[body_start.min(bytes.len())..];
    let mut ascii_tokens = if binary {
        None
    } else {
        Some(String::from_utf8_lossy(body).split_whitespace().map(str::to_string).collect::<Vec<_>>().into_iter())
    };
    let mut cursor = 0usize;
    let mut next_value = |ty: Scalar| -> Result<f64> {
        match ascii_tokens.as_mut() {
            Some(tokens) => tokens
                .next()
                .ok_or_else(|| parse_err(path, "unexpected end of ASCII body"))?
                .parse::<f64>()
                .map_err(|e| parse_err(path, e.to_string())),
            None => {
                let size = ty.size();
                if cursor + size > body.len() {
                    return Err(parse_err(path, format!("truncated binary body at byte {cursor}")));
                }
                let v = ty.read_le(&body[cursor..cursor + size]);
                cursor += size;
                Ok(v)
            }
        }
    };
    for el in &elements {
        for _ in 0..el.count {
            let mut xyz = [0.0; 3];
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let v = next_value(*ty)?;
                        if el.name == "vertex" {
                            match name.as_str() {
                                "x" => xyz[0] = v,
                                "y" => xyz[1] = v,
                                "z" => xyz[2] = v,
                                _ => {}
                            }
                        }
                    }
                    Property::List(name, ct, it) => {
                        let count = next_value(*ct)? as usize;
                        let mut idx = Vec::with_capacity(count);
                        for _ in 0..count {
                            idx.push(next_value(*it)? as u32);
                        }
                        if el.name == "face" && (name == "vertex_indices" || name == "vertex_index") {
                            for k in 1..idx.len().saturating_sub(1) {
                                mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                mesh.vertices.push(xyz);
            }
        }
    }
    let nv = mesh.vertices.len() as u32;
    if mesh.faces.iter().flatten().any(|&i| i >= nv) {
        return Err(parse_err(path, "face index out of range"));
    }
    Ok(mesh)
}

/// Reads the optional per-vertex `label` channel written by [`write_ply`].
pub fn read_ply_labels(path: &Path) -> Result<Option<Vec<f64>>> {
    let text = fs::read_to_string(path)?;
    let (header, body) = text.split_once("end_header").ok_or_else(|| parse_err(path, "missing end_header"))?;
    let mut n_vertices = 0usize;
    let mut props = Vec::new();
    let mut in_vertex = false;
    for line in header.lines() {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["element", "vertex", n] => {
                in_vertex = true;
                n_vertices = n.parse().map_err(|_| parse_err(path, "bad vertex count"))?;
            }
            ["element", ..] => in_vertex = false,
            ["property", _, name] if in_vertex => props.push(name.to_string()),
            _ => {}
        }
    }
    let Some(col) = props.iter().position(|p| p == "label") else {
        return Ok(None);
    };
    let mut labels = Vec::with_capacity(n_vertices);
    for line in body.lines().filter(|l| !l.trim().is_empty()).take(n_vertices) {
        let v = line
            .split_whitespace()
            .nth(col)
            .ok_or_else(|| parse_err(path, "short vertex row"))?
            .parse::<f64>()
            .map_err(|e| parse_err(path, e.to_string()))?;
        labels.push(v);
    }
    Ok(Some(labels))
}

pub fn vertices_close(a: &[Vec3], b: &[Vec3], tol: f64) -> bool {
    a.len() == b.len() && a.iter().zip(b).all(|(x, y)| (0..3).all(|k| (x[k] - y[k]).abs() <= tol))
}
