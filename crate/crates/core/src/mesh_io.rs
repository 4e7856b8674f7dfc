//! PLY (binary little-endian) and OBJ mesh serialization.
//!
//! PLY files carry double-precision positions and per-vertex `uchar` RGB.
//! OBJ files use the `v x y z r g b` extension and 1-based `f` records;
//! numbers are written in shortest round-trip form.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use byteorder::{LittleEndian, ReadBytesExt, WriteBytesExt};
use thiserror::Error;

use crate::geometry::{GeometryError, TriangleMesh, Vec3};
use crate::raster::quantize_channel;

#[derive(Debug, Error)]
pub enum MeshIoError {
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse: {0}")]
    Parse(String),
    #[error(transparent)]
    Invalid(#[from] GeometryError),
    #[error("unsupported mesh format for {0}")]
    UnknownFormat(String),
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MeshFormat {
    Obj,
    Ply,
}

impl MeshFormat {
    pub fn from_path(path: &Path) -> Result<Self, MeshIoError> {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase) {
            Some(e) if e == "ply" => Ok(MeshFormat::Ply),
            Some(e) if e == "obj" => Ok(MeshFormat::Obj),
            _ => Err(MeshIoError::UnknownFormat(path.display().to_string())),
        }
    }
}

pub fn export_mesh(mesh: &TriangleMesh, format: MeshFormat) -> Result<Vec<u8>, MeshIoError> {
    let mut buf = Vec::new();
    write_mesh(mesh, format, &mut buf)?;
    Ok(buf)
}

pub fn write_mesh(mesh: &TriangleMesh, format: MeshFormat, out: &mut impl Write) -> Result<(), MeshIoError> {
    mesh.validate()?;
    match format {
        MeshFormat::Ply => write_ply(mesh, out),
        MeshFormat::Obj => write_obj(mesh, out),
    }
}

pub fn import_mesh(bytes: &[u8], format: MeshFormat) -> Result<TriangleMesh, MeshIoError> {
    let mesh = match format {
        MeshFormat::Ply => read_ply(bytes)?,
        MeshFormat::Obj => read_obj(bytes)?,
    };
    mesh.validate()?;
    Ok(mesh)
}

/// Writes `mesh` next to `path` and renames it into place, so a reader never
/// sees a partial file.
pub fn save_mesh(mesh: &TriangleMesh, path: &Path) -> Result<(), MeshIoError> {
    let format = MeshFormat::from_path(path)?;
    let name = path.file_name().map(|n| n.to_string_lossy()).unwrap_or_default();
    let tmp = path.with_file_name(format!(".{name}.partial"));
    let mut file = std::io::BufWriter::new(std::fs::File::create(&tmp)?);
    write_mesh(mesh, format, &mut file)?;
    file.flush()?;
    drop(file);
    std::fs::rename(&tmp, path)?;
    Ok(())
}

pub fn load_mesh(path: &Path) -> Result<TriangleMesh, MeshIoError> {
    let format = MeshFormat::from_path(path)?;
    import_mesh(&std::fs::read(path)?, format)
}

fn write_ply(mesh: &TriangleMesh, out: &mut impl Write) -> Result<(), MeshIoError> {
    write!(
        out,
        "ply\nformat binary_little_endian 1.0\n\
         element vertex {}\n\
         property double x\nproperty double y\nproperty double z\n\
         property uchar red\nproperty uchar green\nproperty uchar blue\n\
         element face {}\n\
         property list uchar uint vertex_indices\n\
         end_header\n",
        mesh.vertex_count(),
        mesh.face_count()
    )?;
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        out.write_f64::<LittleEndian>(v.x)?;
        out.write_f64::<LittleEndian>(v.y)?;
        out.write_f64::<LittleEndian>(v.z)?;
        out.write_all(&[quantize_channel(c[0]), quantize_channel(c[1]), quantize_channel(c[2])])?;
    }
    for f in &mesh.faces {
        out.write_u8(3)?;
        for &ix in f {
            out.write_u32::<LittleEndian>(ix)?;
        }
    }
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
    fn parse(name: &str) -> Result<Self, MeshIoError> {
        Ok(match name {
            "char" | "int8" => Scalar::I8,
            "uchar" | "uint8" => Scalar::U8,
            "short" | "int16" => Scalar::I16,
            "ushort" | "uint16" => Scalar::U16,
            "int" | "int32" => Scalar::I32,
            "uint" | "uint32" => Scalar::U32,
            "float" | "float32" => Scalar::F32,
            "double" | "float64" => Scalar::F64,
            other => return Err(MeshIoError::Parse(format!("unknown ply type {other}"))),
        })
    }

    fn read(self, r: &mut impl Read) -> std::io::Result<f64> {
        Ok(match self {
            Scalar::I8 => r.read_i8()? as f64,
            Scalar::U8 => r.read_u8()? as f64,
            Scalar::I16 => r.read_i16::<LittleEndian>()? as f64,
            Scalar::U16 => r.read_u16::<LittleEndian>()? as f64,
            Scalar::I32 => r.read_i32::<LittleEndian>()? as f64,
            Scalar::U32 => r.read_u32::<LittleEndian>()? as f64,
            Scalar::F32 => r.read_f32::<LittleEndian>()? as f64,
            Scalar::F64 => r.read_f64::<LittleEndian>()?,
        })
    }
}

enum Property {
    Scalar(String, Scalar),
    List(String, Scalar, Scalar),
}

struct Element {
    name: String,
    count: usize,
    props: Vec<Property>,
}

fn read_ply(bytes: &[u8]) -> Result<TriangleMesh, MeshIoError> {
    let mut reader = BufReader::new(bytes);
    let mut line = String::new();
    let mut next_line = |reader: &mut BufReader<&[u8]>| -> Result<String, MeshIoError> {
        line.clear();
        if reader.read_line(&mut line)? == 0 {
            return Err(MeshIoError::Parse("truncated ply header".into()));
        }
        Ok(line.trim_end().to_string())
    };
    if next_line(&mut reader)? != "ply" {
        return Err(MeshIoError::Parse("missing ply magic".into()));
    }
    let mut elements: Vec<Element> = Vec::new();
    loop {
        let l = next_line(&mut reader)?;
        let tokens: Vec<&str> = l.split_whitespace().collect();
        match tokens.as_slice() {
            ["format", "binary_little_endian", _] => {}
            ["format", other, _] => return Err(MeshIoError::Parse(format!("unsupported ply format {other}"))),
            ["comment", ..] | ["obj_info", ..] => {}
            ["element", name, count] => elements.push(Element {
                name: name.to_string(),
                count: count
                    .parse()
                    .map_err(|_| MeshIoError::Parse(format!("bad element count {count}")))?,
                props: Vec::new(),
            }),
            ["property", "list", count_ty, item_ty, name] => elements
                .last_mut()
                .ok_or_else(|| MeshIoError::Parse("property before element".into()))?
                .props
                .push(Property::List(
                    name.to_string(),
                    Scalar::parse(count_ty)?,
                    Scalar::parse(item_ty)?,
                )),
            ["property", ty, name] => elements
                .last_mut()
                .ok_or_else(|| MeshIoError::Parse("property before element".into()))?
                .props
                .push(Property::Scalar(name.to_string(), Scalar::parse(ty)?)),
            ["end_header"] => break,
            _ => return Err(MeshIoError::Parse(format!("unexpected header line {l:?}"))),
        }
    }

    let mut mesh = TriangleMesh::new();
    for el in &elements {
        for _ in 0..el.count {
            let mut pos = [0.0f64; 3];
            let mut rgb = [1.0f32; 3];
            for prop in &el.props {
                match prop {
                    Property::Scalar(name, ty) => {
                        let x = ty.read(&mut reader)?;
                        match (el.name.as_str(), name.as_str()) {
                            ("vertex", "x") => pos[0] = x,
                            ("vertex", "y") => pos[1] = x,
                            ("vertex", "z") => pos[2] = x,
                            ("vertex", "red") => rgb[0] = channel(x, *ty),
                            ("vertex", "green") => rgb[1] = channel(x, *ty),
                            ("vertex", "blue") => rgb[2] = channel(x, *ty),
                            _ => {}
                        }
                    }
                    Property::List(name, count_ty, item_ty) => {
                        let n = count_ty.read(&mut reader)? as usize;
                        let items = (0..n)
                            .map(|_| item_ty.read(&mut reader))
                            .collect::<std::io::Result<Vec<f64>>>()?;
                        if el.name == "face" && name.starts_with("vertex_ind") {
                            if items.len() < 3 {
                                return Err(MeshIoError::Parse("face with < 3 vertices".into()));
                            }
                            // fan-triangulate polygons
                            for k in 1..items.len() - 1 {
                                mesh.faces.push([items[0] as u32, items[k] as u32, items[k + 1] as u32]);
                            }
                        }
                    }
                }
            }
            if el.name == "vertex" {
                mesh.vertices.push(Vec3::new(pos[0], pos[1], pos[2]));
                mesh.colors.push(rgb);
            }
        }
    }
    Ok(mesh)
}

fn channel(x: f64, ty: Scalar) -> f32 {
    match ty {
        Scalar::F32 | Scalar::F64 => x as f32,
        _ => (x / 255.0) as f32,
    }
}

fn write_obj(mesh: &TriangleMesh, out: &mut impl Write) -> Result<(), MeshIoError> {
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        writeln!(out, "v {} {} {} {} {} {}", v.x, v.y, v.z, c[0], c[1], c[2])?;
    }
    for f in &mesh.faces {
        writeln!(out, "f {} {} {}", f[0] + 1, f[1] + 1, f[2] + 1)?;
    }
    Ok(())
}

fn read_obj(bytes: &[u8]) -> Result<TriangleMesh, MeshIoError> {
    let text = std::str::from_utf8(bytes).map_err(|e| MeshIoError::Parse(e.to_string()))?;
    let mut mesh = TriangleMesh::new();
    for (lineno, line) in text.lines().enumerate() {
        let mut tokens = line.split_whitespace();
        let bad = |what: &str| MeshIoError::Parse(format!("line {}: {what}", lineno + 1));
        match tokens.next() {
            Some("v") => {
                let nums = tokens
                    .map(|t| t.parse::<f64>().map_err(|_| bad("bad number")))
                    .collect::<Result<Vec<_>, _>>()?;
                if nums.len() != 3 && nums.len() != 6 {
                    return Err(bad("vertex needs 3 or 6 values"));
                }
                mesh.vertices.push(Vec3::new(nums[0], nums[1], nums[2]));
                mesh.colors.push(if nums.len() == 6 {
                    [nums[3] as f32, nums[4] as f32, nums[5] as f32]
                } else {
                    [1.0; 3]
                });
            }
            Some("f") => {
                let idx = tokens
                    .map(|t| {
                        let head = t.split('/').next().unwrap_or(t);
                        let i: i64 = head.parse().map_err(|_| bad("bad face index"))?;
                        let n = mesh.vertices.len() as i64;
                        let resolved = if i < 0 { n + i } else { i - 1 };
                        if resolved < 0 {
                            return Err(bad("face index out of range"));
                        }
                        Ok(resolved as u32)
                    })
                    .collect::<Result<Vec<_>, _>>()?;
                if idx.len() < 3 {
                    return Err(bad("face with < 3 vertices"));
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
