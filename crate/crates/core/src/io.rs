//! On-disk formats: images, depth, poses, intrinsics, meshes, descriptors,
//! keypoints, matches and segmentation masks.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::{Path, PathBuf};

use nalgebra::{Vector2, Vector3};
use thiserror::Error;

use crate::features::{Keypoint, Match};
use crate::geom::{CameraIntrinsics, Pose};
use crate::mesh::TriMesh;
use crate::raster::{DepthMap, LabelImage, Raster, RgbImage};

#[derive(Debug, Error)]
pub enum IoError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> IoError + '_ {
    move |source| IoError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn format_err(path: &Path, msg: impl Into<String>) -> IoError {
    IoError::Format {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> IoError {
    IoError::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.into(),
    }
}

fn create(path: &Path) -> Result<BufWriter<File>, IoError> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            std::fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
    }
    Ok(BufWriter::new(File::create(path).map_err(io_err(path))?))
}

fn open(path: &Path) -> Result<BufReader<File>, IoError> {
    Ok(BufReader::new(File::open(path).map_err(io_err(path))?))
}

/// Non-empty, non-comment lines with their 1-based line numbers.
fn content_lines(path: &Path) -> Result<Vec<(usize, String)>, IoError> {
    let reader = open(path)?;
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        out.push((i + 1, trimmed.to_string()));
    }
    Ok(out)
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64, IoError> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("expected number, found `{tok}`")))
}

fn parse_usize(path: &Path, line: usize, tok: &str) -> Result<usize, IoError> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(path, line, format!("expected index, found `{tok}`")))
}

// ---------------------------------------------------------------- PNG

fn decode_png(path: &Path) -> Result<(png::OutputInfo, Vec<u8>), IoError> {
    let mut decoder = png::Decoder::new(open(path)?);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| format_err(path, format!("png: {e}")))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| format_err(path, "png: image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| format_err(path, format!("png: {e}")))?;
    buf.truncate(info.buffer_size());
    Ok((info, buf))
}

fn encode_png(
    path: &Path,
    width: usize,
    height: usize,
    color: png::ColorType,
    depth: png::BitDepth,
    data: &[u8],
) -> Result<(), IoError> {
    let w = create(path)?;
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(depth);
    let mut writer = enc
        .write_header()
        .map_err(|e| format_err(path, format!("png: {e}")))?;
    writer
        .write_image_data(data)
        .map_err(|e| format_err(path, format!("png: {e}")))?;
    writer
        .finish()
        .map_err(|e| format_err(path, format!("png: {e}")))
}

pub fn write_rgb_png(path: &Path, image: &RgbImage) -> Result<(), IoError> {
    let data: Vec<u8> = image.data().iter().flatten().copied().collect();
    encode_png(
        path,
        image.width(),
        image.height(),
        png::ColorType::Rgb,
        png::BitDepth::Eight,
        &data,
    )
}

/// Reads any 8-bit gray/RGB(A) PNG as RGB.
pub fn read_rgb_png(path: &Path) -> Result<RgbImage, IoError> {
    let (info, buf) = decode_png(path)?;
    if info.bit_depth != png::BitDepth::Eight {
        return Err(format_err(path, "expected an 8-bit image"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(format_err(path, "unexpanded palette image")),
    };
    let stride = info.line_size;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        let row = &buf[y * stride..];
        for x in 0..w {
            let p = &row[x * channels..];
            data.push(if channels < 3 {
                [p[0], p[0], p[0]]
            } else {
                [p[0], p[1], p[2]]
            });
        }
    }
    Ok(Raster::from_vec(w, h, data).expect("dimensions"))
}

fn write_u16_png(path: &Path, width: usize, height: usize, values: impl Iterator<Item = u16>) -> Result<(), IoError> {
    let data: Vec<u8> = values.flat_map(|v| v.to_be_bytes()).collect();
    encode_png(
        path,
        width,
        height,
        png::ColorType::Grayscale,
        png::BitDepth::Sixteen,
        &data,
    )
}

fn read_u16_png(path: &Path) -> Result<Raster<u16>, IoError> {
    let (info, buf) = decode_png(path)?;
    if info.color_type != png::ColorType::Grayscale || info.bit_depth != png::BitDepth::Sixteen {
        return Err(format_err(path, "expected a 16-bit single-channel image"));
    }
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.line_size;
    let mut data = Vec::with_capacity(w * h);
    for y in 0..h {
        for x in 0..w {
            let o = y * stride + 2 * x;
            data.push(u16::from_be_bytes([buf[o], buf[o + 1]]));
        }
    }
    Ok(Raster::from_vec(w, h, data).expect("dimensions"))
}

// ---------------------------------------------------------------- depth

const DEPTH_MAGIC: &[u8; 4] = b"DLD1";

/// 16-bit PNG in millimeters; values beyond the u16 range saturate.
pub fn write_depth_png(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    write_u16_png(
        path,
        depth.width(),
        depth.height(),
        depth
            .data()
            .iter()
            .map(|&d| if d > 0.0 { (d as f64 * 1000.0).round().min(65535.0) as u16 } else { 0 }),
    )
}

pub fn read_depth_png(path: &Path) -> Result<DepthMap, IoError> {
    Ok(read_u16_png(path)?.map(|&v| v as f32 / 1000.0))
}

pub fn write_depth_bin(path: &Path, depth: &DepthMap) -> Result<(), IoError> {
    let mut w = create(path)?;
    let mut body = Vec::with_capacity(12 + 4 * depth.len());
    body.extend_from_slice(DEPTH_MAGIC);
    body.extend_from_slice(&(depth.width() as u32).to_le_bytes());
    body.extend_from_slice(&(depth.height() as u32).to_le_bytes());
    for d in depth.data() {
        body.extend_from_slice(&d.to_le_bytes());
    }
    w.write_all(&body).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_depth_bin(path: &Path) -> Result<DepthMap, IoError> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(io_err(path))?;
    if bytes.len() < 12 || &bytes[0..4] != DEPTH_MAGIC {
        return Err(format_err(path, "missing DLD1 header"));
    }
    let w = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let h = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    let body = &bytes[12..];
    if body.len() != 4 * w * h {
        return Err(format_err(path, format!("expected {} depth bytes, found {}", 4 * w * h, body.len())));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .map(|d| if d.is_finite() && d > 0.0 { d } else { 0.0 })
        .collect();
    Ok(Raster::from_vec(w, h, data).expect("dimensions"))
}

/// Dispatches on extension: `.bin` or `.png`.
pub fn read_depth(path: &Path) -> Result<DepthMap, IoError> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("bin") => read_depth_bin(path),
        _ => read_depth_png(path),
    }
}

// ---------------------------------------------------------------- poses

pub fn format_pose_line(id: &str, pose: &Pose) -> String {
    let q = pose.quaternion();
    let t = pose.translation();
    format!(
        "{} {} {} {} {} {} {} {}",
        id, q[0], q[1], q[2], q[3], t.x, t.y, t.z
    )
}

pub fn write_poses(path: &Path, poses: &[(String, Pose)]) -> Result<(), IoError> {
    let mut w = create(path)?;
    for (id, pose) in poses {
        writeln!(w, "{}", format_pose_line(id, pose)).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

/// Poses in file order. Quaternions are normalized on read.
pub fn read_poses(path: &Path) -> Result<Vec<(String, Pose)>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in content_lines(path)? {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 8 {
            return Err(parse_err(path, ln, format!("expected 8 fields, found {}", toks.len())));
        }
        let mut v = [0.0; 7];
        for (k, tok) in toks[1..].iter().enumerate() {
            v[k] = parse_f64(path, ln, tok)?;
        }
        let pose = Pose::from_quaternion(v[0], v[1], v[2], v[3], Vector3::new(v[4], v[5], v[6]))
            .map_err(|e| parse_err(path, ln, e.to_string()))?;
        out.push((toks[0].to_string(), pose));
    }
    Ok(out)
}

pub fn write_intrinsics(path: &Path, intr: &CameraIntrinsics) -> Result<(), IoError> {
    let mut w = create(path)?;
    writeln!(
        w,
        "{} {} {} {} {}",
        intr.focal, intr.principal_point.x, intr.principal_point.y, intr.width, intr.height
    )
    .map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_intrinsics(path: &Path) -> Result<CameraIntrinsics, IoError> {
    let lines = content_lines(path)?;
    let (ln, line) = lines.first().ok_or_else(|| format_err(path, "empty intrinsics file"))?;
    let toks: Vec<&str> = line.split_whitespace().collect();
    if toks.len() != 5 {
        return Err(parse_err(path, *ln, "expected `f px py width height`"));
    }
    let f = parse_f64(path, *ln, toks[0])?;
    let px = parse_f64(path, *ln, toks[1])?;
    let py = parse_f64(path, *ln, toks[2])?;
    let w = parse_usize(path, *ln, toks[3])? as u32;
    let h = parse_usize(path, *ln, toks[4])? as u32;
    CameraIntrinsics::new(f, px, py, w, h).map_err(|e| parse_err(path, *ln, e.to_string()))
}

// ---------------------------------------------------------------- mesh (PLY)

pub fn write_ply(path: &Path, mesh: &TriMesh) -> Result<(), IoError> {
    let mut w = create(path)?;
    let header = format!(
        "ply\nformat binary_little_endian 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nproperty uchar red\nproperty uchar green\nproperty uchar blue\nelement face {}\nproperty list uchar int vertex_indices\nend_header\n",
        mesh.vertices.len(),
        mesh.faces.len()
    );
    let mut body = Vec::with_capacity(header.len() + 15 * mesh.vertices.len() + 13 * mesh.faces.len());
    body.extend_from_slice(header.as_bytes());
    for (v, c) in mesh.vertices.iter().zip(&mesh.colors) {
        for x in v {
            body.extend_from_slice(&x.to_le_bytes());
        }
        body.extend_from_slice(c);
    }
    for f in &mesh.faces {
        body.push(3);
        for i in f {
            body.extend_from_slice(&(*i as i32).to_le_bytes());
        }
    }
    w.write_all(&body).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

#[derive(Clone, Copy, PartialEq)]
enum PlyScalar {
    F32,
    F64,
    U8,
    I32,
    U32,
}

impl PlyScalar {
    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "float" | "float32" => Self::F32,
            "double" | "float64" => Self::F64,
            "uchar" | "uint8" => Self::U8,
            "int" | "int32" => Self::I32,
            "uint" | "uint32" => Self::U32,
            _ => return None,
        })
    }

    fn size(self) -> usize {
        match self {
            Self::U8 => 1,
            Self::F32 | Self::I32 | Self::U32 => 4,
            Self::F64 => 8,
        }
    }

    fn read(self, b: &[u8]) -> f64 {
        match self {
            Self::U8 => b[0] as f64,
            Self::F32 => f32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::I32 => i32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::U32 => u32::from_le_bytes(b[..4].try_into().unwrap()) as f64,
            Self::F64 => f64::from_le_bytes(b[..8].try_into().unwrap()),
        }
    }
}

/// Reads binary little-endian PLY with float/double xyz, optional uchar rgb,
/// and triangular faces.
pub fn read_ply(path: &Path) -> Result<TriMesh, IoError> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(io_err(path))?;
    let end = bytes
        .windows(11)
        .position(|w| w == b"end_header\n")
        .ok_or_else(|| format_err(path, "PLY header not terminated"))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| format_err(path, "PLY header not UTF-8"))?;
    let mut lines = header.lines();
    if lines.next() != Some("ply") {
        return Err(format_err(path, "not a PLY file"));
    }
    let mut n_vertices = 0usize;
    let mut n_faces = 0usize;
    let mut vprops: Vec<(String, PlyScalar)> = Vec::new();
    let mut face_types = (PlyScalar::U8, PlyScalar::I32);
    let mut current = "";
    for line in lines {
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["format", fmt, _] if *fmt != "binary_little_endian" => {
                return Err(format_err(path, format!("unsupported PLY format {fmt}")));
            }
            ["element", "vertex", n] => {
                n_vertices = n.parse().map_err(|_| format_err(path, "bad vertex count"))?;
                current = "vertex";
            }
            ["element", "face", n] => {
                n_faces = n.parse().map_err(|_| format_err(path, "bad face count"))?;
                current = "face";
            }
            ["element", ..] => return Err(format_err(path, "unsupported PLY element")),
            ["property", "list", ct, it, _] if current == "face" => {
                face_types = (
                    PlyScalar::parse(ct).ok_or_else(|| format_err(path, "bad list type"))?,
                    PlyScalar::parse(it).ok_or_else(|| format_err(path, "bad list type"))?,
                );
            }
            ["property", ty, name] if current == "vertex" => {
                let t = PlyScalar::parse(ty).ok_or_else(|| format_err(path, format!("bad property type {ty}")))?;
                vprops.push((name.to_string(), t));
            }
            _ => {}
        }
    }
    let find = |n: &str| vprops.iter().position(|(name, _)| name == n);
    let (ix, iy, iz) = match (find("x"), find("y"), find("z")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => return Err(format_err(path, "PLY vertices lack x/y/z")),
    };
    let rgb = match (find("red"), find("green"), find("blue")) {
        (Some(a), Some(b), Some(c)) => Some((a, b, c)),
        _ => None,
    };
    let offsets: Vec<usize> = vprops
        .iter()
        .scan(0, |acc, (_, t)| {
            let o = *acc;
            *acc += t.size();
            Some(o)
        })
        .collect();
    let vstride: usize = vprops.iter().map(|(_, t)| t.size()).sum();
    let mut pos = end + 11;
    let truncated = || format_err(path, "PLY body truncated");
    let mut mesh = TriMesh::new();
    for _ in 0..n_vertices {
        let rec = bytes.get(pos..pos + vstride).ok_or_else(truncated)?;
        let val = |i: usize| vprops[i].1.read(&rec[offsets[i]..]);
        mesh.vertices.push([val(ix) as f32, val(iy) as f32, val(iz) as f32]);
        mesh.colors.push(match rgb {
            Some((r, g, b)) => [val(r) as u8, val(g) as u8, val(b) as u8],
            None => [200, 200, 200],
        });
        pos += vstride;
    }
    for _ in 0..n_faces {
        let count = face_types.0.read(bytes.get(pos..).ok_or_else(truncated)?) as usize;
        pos += face_types.0.size();
        let isz = face_types.1.size();
        let rec = bytes.get(pos..pos + count * isz).ok_or_else(truncated)?;
        let idx: Vec<u32> = (0..count).map(|k| face_types.1.read(&rec[k * isz..]) as u32).collect();
        pos += count * isz;
        if idx.iter().any(|&i| i as usize >= n_vertices) {
            return Err(format_err(path, "PLY face references missing vertex"));
        }
        // Fan-triangulate polygons.
        for k in 1..count.saturating_sub(1) {
            mesh.faces.push([idx[0], idx[k], idx[k + 1]]);
        }
    }
    Ok(mesh)
}

// ---------------------------------------------------------------- descriptors

const GDESC_MAGIC: &[u8; 4] = b"GDS1";
const DESC_MAGIC: &[u8; 4] = b"DSC1";

pub fn write_global_descriptor(path: &Path, values: &[f32]) -> Result<(), IoError> {
    let mut body = Vec::with_capacity(8 + 4 * values.len());
    body.extend_from_slice(GDESC_MAGIC);
    body.extend_from_slice(&(values.len() as u32).to_le_bytes());
    for v in values {
        body.extend_from_slice(&v.to_le_bytes());
    }
    let mut w = create(path)?;
    w.write_all(&body).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_global_descriptor(path: &Path) -> Result<Vec<f32>, IoError> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(io_err(path))?;
    if bytes.len() < 8 || &bytes[0..4] != GDESC_MAGIC {
        return Err(format_err(path, "missing GDS1 header"));
    }
    let n = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    if bytes.len() != 8 + 4 * n {
        return Err(format_err(path, "descriptor length mismatch"));
    }
    Ok(bytes[8..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect())
}

/// Local descriptor block: `DSC1`, u32 count, u32 dim, then f32 LE rows.
pub fn write_descriptors(path: &Path, dim: usize, rows: &[f32]) -> Result<(), IoError> {
    let count = if dim == 0 { 0 } else { rows.len() / dim };
    let mut body = Vec::with_capacity(12 + 4 * rows.len());
    body.extend_from_slice(DESC_MAGIC);
    body.extend_from_slice(&(count as u32).to_le_bytes());
    body.extend_from_slice(&(dim as u32).to_le_bytes());
    for v in rows {
        body.extend_from_slice(&v.to_le_bytes());
    }
    let mut w = create(path)?;
    w.write_all(&body).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

/// Returns `(dim, rows)`.
pub fn read_descriptors(path: &Path) -> Result<(usize, Vec<f32>), IoError> {
    let mut bytes = Vec::new();
    open(path)?.read_to_end(&mut bytes).map_err(io_err(path))?;
    if bytes.len() < 12 || &bytes[0..4] != DESC_MAGIC {
        return Err(format_err(path, "missing DSC1 header"));
    }
    let count = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dim = u32::from_le_bytes(bytes[8..12].try_into().unwrap()) as usize;
    if bytes.len() != 12 + 4 * count * dim {
        return Err(format_err(path, "descriptor block length mismatch"));
    }
    let rows = bytes[12..]
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
        .collect();
    Ok((dim, rows))
}

// ---------------------------------------------------------------- keypoints / matches

pub fn write_keypoints(path: &Path, kps: &[Keypoint]) -> Result<(), IoError> {
    let mut w = create(path)?;
    for k in kps {
        writeln!(w, "{} {} {}", k.position.x, k.position.y, k.response).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_keypoints(path: &Path) -> Result<Vec<Keypoint>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in content_lines(path)? {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(path, ln, "expected `x y response`"));
        }
        out.push(Keypoint {
            position: Vector2::new(parse_f64(path, ln, toks[0])?, parse_f64(path, ln, toks[1])?),
            response: parse_f64(path, ln, toks[2])? as f32,
        });
    }
    Ok(out)
}

pub fn write_matches(path: &Path, matches: &[Match]) -> Result<(), IoError> {
    let mut w = create(path)?;
    for m in matches {
        writeln!(w, "{} {} {}", m.idx_a, m.idx_b, m.score).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_matches(path: &Path) -> Result<Vec<Match>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in content_lines(path)? {
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 3 {
            return Err(parse_err(path, ln, "expected `ia ib score`"));
        }
        out.push(Match {
            idx_a: parse_usize(path, ln, toks[0])?,
            idx_b: parse_usize(path, ln, toks[1])?,
            score: parse_f64(path, ln, toks[2])? as f32,
        });
    }
    Ok(out)
}

/// File name for ingested matches between two images.
pub fn matches_file_name(id_a: &str, id_b: &str) -> String {
    format!("{id_a}__{id_b}.matches")
}

// ---------------------------------------------------------------- masks

pub fn write_label_png(path: &Path, labels: &LabelImage) -> Result<(), IoError> {
    write_u16_png(path, labels.width(), labels.height(), labels.data().iter().copied())
}

pub fn read_label_png(path: &Path) -> Result<LabelImage, IoError> {
    read_u16_png(path)
}

/// Instance table sidecar: one `instance_id class_name` per line.
pub fn write_class_table(path: &Path, table: &[(u16, String)]) -> Result<(), IoError> {
    let mut w = create(path)?;
    for (id, class) in table {
        writeln!(w, "{id} {class}").map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))
}

pub fn read_class_table(path: &Path) -> Result<Vec<(u16, String)>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in content_lines(path)? {
        let mut toks = line.split_whitespace();
        let (Some(id), Some(class), None) = (toks.next(), toks.next(), toks.next()) else {
            return Err(parse_err(path, ln, "expected `instance_id class_name`"));
        };
        let id = id
            .parse::<u16>()
            .map_err(|_| parse_err(path, ln, format!("bad instance id `{id}`")))?;
        out.push((id, class.to_string()));
    }
    Ok(out)
}

/// `(label png, class table)` paths for image `id` inside `dir`.
pub fn mask_paths(dir: &Path, id: &str) -> (PathBuf, PathBuf) {
    (dir.join(format!("{id}.mask.png")), dir.join(format!("{id}.mask.txt")))
}

/// Lines `key value`; `#` comments and blank lines ignored.
pub fn read_key_values(path: &Path) -> Result<Vec<(usize, String, String)>, IoError> {
    let mut out = Vec::new();
    for (ln, line) in content_lines(path)? {
        let mut parts = line.splitn(2, char::is_whitespace);
        let key = parts.next().unwrap_or_default().to_string();
        let value = parts.next().map(str::trim).unwrap_or_default().to_string();
        if value.is_empty() {
            return Err(parse_err(path, ln, format!("key `{key}` has no value")));
        }
        out.push((ln, key, value));
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), IoError> {
    let mut w = create(path)?;
    w.write_all(text.as_bytes()).map_err(io_err(path))?;
    w.flush().map_err(io_err(path))
}

pub fn read_text(path: &Path) -> Result<String, IoError> {
    std::fs::read_to_string(path).map_err(io_err(path))
}

pub fn read_bytes(path: &Path) -> Result<Vec<u8>, IoError> {
    std::fs::read(path).map_err(io_err(path))
}

pub fn list_dir(path: &Path) -> Result<Vec<PathBuf>, IoError> {
    let mut out: Vec<PathBuf> = std::fs::read_dir(path)
        .map_err(io_err(path))?
        .map(|e| e.map(|e| e.path()).map_err(io_err(path)))
        .collect::<Result<_, _>>()?;
    out.sort();
    Ok(out)
}

pub fn create_dir(path: &Path) -> Result<(), IoError> {
    std::fs::create_dir_all(path).map_err(io_err(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pose_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.txt");
        let pose = Pose::from_axis_angle(&Vector3::new(1.0, 2.0, -0.5), 0.7, Vector3::new(0.1, -2.0, 3.5));
        write_poses(&p, &[("img_0".into(), pose)]).unwrap();
        let back = read_poses(&p).unwrap();
        assert_eq!(back[0].0, "img_0");
        assert!((back[0].1.rotation() - pose.rotation()).abs().max() < 1e-14);
        assert_eq!(back[0].1.translation(), pose.translation());
    }

    #[test]
    fn depth_formats_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let d = Raster::from_fn(5, 3, |x, y| if x == 0 { 0.0 } else { 0.5 + x as f32 * 0.25 + y as f32 });
        write_depth_bin(&dir.path().join("d.bin"), &d).unwrap();
        assert_eq!(read_depth(&dir.path().join("d.bin")).unwrap(), d);
        write_depth_png(&dir.path().join("d.png"), &d).unwrap();
        let back = read_depth(&dir.path().join("d.png")).unwrap();
        for (a, b) in back.data().iter().zip(d.data()) {
            assert!((a - b).abs() <= 0.0005);
        }
    }

    #[test]
    fn rgb_and_labels_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let img = Raster::from_fn(7, 4, |x, y| [x as u8 * 30, y as u8 * 60, 9]);
        write_rgb_png(&dir.path().join("a.png"), &img).unwrap();
        assert_eq!(read_rgb_png(&dir.path().join("a.png")).unwrap(), img);
        let lab = Raster::from_fn(7, 4, |x, y| (x * 1000 + y) as u16);
        write_label_png(&dir.path().join("m.png"), &lab).unwrap();
        assert_eq!(read_label_png(&dir.path().join("m.png")).unwrap(), lab);
    }

    #[test]
    fn ply_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let mesh = TriMesh {
            vertices: vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [0.0, 1.5, -2.0]],
            colors: vec![[1, 2, 3], [4, 5, 6], [7, 8, 9]],
            faces: vec![[0, 1, 2]],
        };
        write_ply(&dir.path().join("m.ply"), &mesh).unwrap();
        assert_eq!(read_ply(&dir.path().join("m.ply")).unwrap(), mesh);
    }

    #[test]
    fn descriptor_files() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("x.gdesc");
        write_global_descriptor(&p, &[0.6, 0.8]).unwrap();
        assert_eq!(read_global_descriptor(&p).unwrap(), vec![0.6, 0.8]);
        std::fs::write(&p, b"XXXX").unwrap();
        assert!(read_global_descriptor(&p).is_err());
    }

    #[test]
    fn malformed_pose_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("poses.txt");
        std::fs::write(&p, "# header\na 1 0 0 0 0 0 0\nb 1 0 0\n").unwrap();
        match read_poses(&p) {
            Err(IoError::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("unexpected {other:?}"),
        }
    }
}
