//! On-disk formats: ASCII PLY point clouds, a triangle-only OBJ subset,
//! a raw little-endian depth grid, binary PPM images and PGM masks.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::{DepthMap, Frame, Image, Mask, PointCloud, TriangleMesh};

fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|e| Error::io(path, e))
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn read_text(path: &Path) -> Result<String> {
    String::from_utf8(read_bytes(path)?).map_err(|_| Error::format(path, "not valid UTF-8"))
}

/// `%.9g`-style rendering: 9 significant digits, trailing zeros trimmed.
/// Nine digits are enough to round-trip any `f32`.
pub fn format_sig9(x: f32) -> String {
    if x == 0.0 {
        return if x.is_sign_negative() { "-0".into() } else { "0".into() };
    }
    let sci = format!("{:.8e}", x);
    let (mantissa, exp) = sci.split_once('e').expect("scientific notation");
    let exp: i32 = exp.parse().expect("exponent");
    if (-5..9).contains(&exp) {
        let decimals = (8 - exp).max(0) as usize;
        let fixed = format!("{:.*}", decimals, x);
        trim_zeros(&fixed).to_string()
    } else {
        let m = trim_zeros(mantissa);
        format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs())
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

// ---------------------------------------------------------------- PLY

pub fn encode_ply(cloud: &PointCloud) -> String {
    let mut out = format!(
        "ply\nformat ascii 1.0\nelement vertex {}\nproperty float x\nproperty float y\nproperty float z\nend_header\n",
        cloud.len()
    );
    for p in cloud.points() {
        out.push_str(&format!(
            "{} {} {}\n",
            format_sig9(p[0] as f32),
            format_sig9(p[1] as f32),
            format_sig9(p[2] as f32)
        ));
    }
    out
}

pub fn write_ply(path: &Path, cloud: &PointCloud) -> Result<()> {
    write_bytes(path, encode_ply(cloud).as_bytes())
}

/// Parses the PLY layout written by [`write_ply`]. The frame is not stored
/// in the file; clouds whose coordinates all lie in [0, 1] are still
/// returned as `frame`.
pub fn decode_ply(path: &Path, text: &str, frame: Frame) -> Result<PointCloud> {
    const HEADER: [&str; 2] = ["ply", "format ascii 1.0"];
    let mut lines = text.lines();
    for expected in HEADER {
        match lines.next() {
            Some(l) if l.trim_end() == expected => {}
            other => {
                return Err(Error::format(
                    path,
                    format!("expected `{expected}`, found {other:?}"),
                ))
            }
        }
    }
    let count_line = lines
        .next()
        .ok_or_else(|| Error::format(path, "missing vertex element line"))?;
    let count: usize = count_line
        .trim_end()
        .strip_prefix("element vertex ")
        .and_then(|n| n.parse().ok())
        .ok_or_else(|| Error::format(path, format!("bad element line `{count_line}`")))?;
    for axis in ["x", "y", "z"] {
        let expected = format!("property float {axis}");
        match lines.next() {
            Some(l) if l.trim_end() == expected => {}
            other => {
                return Err(Error::format(
                    path,
                    format!("expected `{expected}`, found {other:?}"),
                ))
            }
        }
    }
    match lines.next() {
        Some(l) if l.trim_end() == "end_header" => {}
        other => return Err(Error::format(path, format!("expected `end_header`, found {other:?}"))),
    }
    let mut points = Vec::with_capacity(count);
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f32> = line
            .split_whitespace()
            .map(|t| t.parse::<f32>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| Error::format(path, format!("vertex {i}: {e}")))?;
        if vals.len() != 3 {
            return Err(Error::format(
                path,
                format!("vertex {i} has {} values, expected 3", vals.len()),
            ));
        }
        points.push([vals[0] as f64, vals[1] as f64, vals[2] as f64]);
    }
    if points.len() != count {
        return Err(Error::format(
            path,
            format!("header declares {count} vertices, body has {}", points.len()),
        ));
    }
    PointCloud::new(points, frame).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_ply(path: &Path, frame: Frame) -> Result<PointCloud> {
    decode_ply(path, &read_text(path)?, frame)
}

// ---------------------------------------------------------------- OBJ

pub fn encode_obj(mesh: &TriangleMesh) -> String {
    let mut out = String::new();
    for v in mesh.vertices() {
        out.push_str(&format!("v {:?} {:?} {:?}\n", v[0], v[1], v[2]));
    }
    for t in mesh.triangles() {
        out.push_str(&format!("f {} {} {}\n", t[0] + 1, t[1] + 1, t[2] + 1));
    }
    out
}

pub fn write_obj(path: &Path, mesh: &TriangleMesh) -> Result<()> {
    write_bytes(path, encode_obj(mesh).as_bytes())
}

/// Accepts only `v x y z` and `f i j k` lines (1-based). Blank lines are skipped.
pub fn decode_obj(path: &Path, text: &str) -> Result<TriangleMesh> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let lineno = lineno + 1;
        let mut tokens = line.split_whitespace();
        let Some(tag) = tokens.next() else { continue };
        let rest: Vec<&str> = tokens.collect();
        match tag {
            "v" => {
                if rest.len() != 3 {
                    return Err(Error::format(path, format!("line {lineno}: `v` needs 3 coordinates")));
                }
                let mut v = [0.0; 3];
                for (k, tok) in rest.iter().enumerate() {
                    v[k] = tok.parse().map_err(|_| {
                        Error::format(path, format!("line {lineno}: bad coordinate `{tok}`"))
                    })?;
                }
                vertices.push(v);
            }
            "f" => {
                if rest.len() != 3 {
                    return Err(Error::format(
                        path,
                        format!("line {lineno}: only triangular faces are supported"),
                    ));
                }
                let mut t = [0u32; 3];
                for (k, tok) in rest.iter().enumerate() {
                    let idx: u32 = tok.parse().map_err(|_| {
                        Error::format(path, format!("line {lineno}: bad index `{tok}`"))
                    })?;
                    if idx == 0 {
                        return Err(Error::format(path, format!("line {lineno}: indices are 1-based")));
                    }
                    t[k] = idx - 1;
                }
                triangles.push(t);
            }
            other => {
                return Err(Error::format(
                    path,
                    format!("line {lineno}: unsupported statement `{other}`"),
                ))
            }
        }
    }
    TriangleMesh::new(vertices, triangles).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_obj(path: &Path) -> Result<TriangleMesh> {
    decode_obj(path, &read_text(path)?)
}

// ---------------------------------------------------------------- DEPTH

pub fn encode_depth(depth: &DepthMap) -> Vec<u8> {
    let mut out = format!("DEPTH {} {}\n", depth.width(), depth.height()).into_bytes();
    out.reserve(depth.values().len() * 4);
    for v in depth.values() {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn write_depth(path: &Path, depth: &DepthMap) -> Result<()> {
    write_bytes(path, &encode_depth(depth))
}

pub fn decode_depth(path: &Path, bytes: &[u8]) -> Result<DepthMap> {
    let newline = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::format(path, "missing DEPTH header line"))?;
    let header = std::str::from_utf8(&bytes[..newline])
        .map_err(|_| Error::format(path, "header is not ASCII"))?;
    let fields: Vec<&str> = header.split(' ').collect();
    let (w, h) = match fields.as_slice() {
        ["DEPTH", w, h] => (
            w.parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad width `{w}`")))?,
            h.parse::<usize>()
                .map_err(|_| Error::format(path, format!("bad height `{h}`")))?,
        ),
        _ => return Err(Error::format(path, format!("bad header `{header}`"))),
    };
    let payload = &bytes[newline + 1..];
    if payload.len() != w * h * 4 {
        return Err(Error::format(
            path,
            format!("expected {} payload bytes, found {}", w * h * 4, payload.len()),
        ));
    }
    let values = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    DepthMap::new(w, h, values).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_depth(path: &Path) -> Result<DepthMap> {
    decode_depth(path, &read_bytes(path)?)
}

// ---------------------------------------------------------------- PPM / PGM

fn quantize(c: f32) -> u8 {
    (c.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    for p in image.pixels() {
        out.extend(p.iter().map(|&c| quantize(c)));
    }
    out
}

pub fn write_ppm(path: &Path, image: &Image) -> Result<()> {
    write_bytes(path, &encode_ppm(image))
}

/// Parses a binary Netpbm header, returning `(width, height, payload offset)`.
fn netpbm_header(path: &Path, bytes: &[u8], magic: &str) -> Result<(usize, usize, usize)> {
    let mut fields = Vec::with_capacity(4);
    let mut i = 0;
    while fields.len() < 4 {
        while i < bytes.len() && bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if i < bytes.len() && bytes[i] == b'#' {
            while i < bytes.len() && bytes[i] != b'\n' {
                i += 1;
            }
            continue;
        }
        let start = i;
        while i < bytes.len() && !bytes[i].is_ascii_whitespace() {
            i += 1;
        }
        if start == i {
            return Err(Error::format(path, "truncated header"));
        }
        fields.push(String::from_utf8_lossy(&bytes[start..i]).into_owned());
    }
    if fields[0] != magic {
        return Err(Error::format(
            path,
            format!("expected magic {magic}, found `{}`", fields[0]),
        ));
    }
    let parse = |s: &str, what: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::format(path, format!("bad {what} `{s}`")))
    };
    let (w, h, maxval) = (
        parse(&fields[1], "width")?,
        parse(&fields[2], "height")?,
        parse(&fields[3], "maxval")?,
    );
    if maxval != 255 {
        return Err(Error::format(path, format!("maxval must be 255, found {maxval}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if i >= bytes.len() {
        return Err(Error::format(path, "missing raster"));
    }
    Ok((w, h, i + 1))
}

pub fn decode_ppm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let (w, h, off) = netpbm_header(path, bytes, "P6")?;
    let payload = &bytes[off..];
    if payload.len() != w * h * 3 {
        return Err(Error::format(
            path,
            format!("expected {} raster bytes, found {}", w * h * 3, payload.len()),
        ));
    }
    let pixels = payload
        .chunks_exact(3)
        .map(|c| [c[0] as f32 / 255.0, c[1] as f32 / 255.0, c[2] as f32 / 255.0])
        .collect();
    Image::new(w, h, pixels).map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    decode_ppm(path, &read_bytes(path)?)
}

pub fn encode_pgm(mask: &Mask) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", mask.width(), mask.height()).into_bytes();
    out.extend(mask.values().iter().map(|&m| if m { 255u8 } else { 0 }));
    out
}

pub fn write_pgm(path: &Path, mask: &Mask) -> Result<()> {
    write_bytes(path, &encode_pgm(mask))
}

/// Any nonzero sample counts as foreground.
pub fn decode_pgm(path: &Path, bytes: &[u8]) -> Result<Mask> {
    let (w, h, off) = netpbm_header(path, bytes, "P5")?;
    let payload = &bytes[off..];
    if payload.len() != w * h {
        return Err(Error::format(
            path,
            format!("expected {} raster bytes, found {}", w * h, payload.len()),
        ));
    }
    Mask::new(w, h, payload.iter().map(|&b| b != 0).collect())
        .map_err(|e| Error::format(path, e.to_string()))
}

pub fn read_pgm(path: &Path) -> Result<Mask> {
    decode_pgm(path, &read_bytes(path)?)
}

/// Writes raw bytes, creating parent directories as needed.
pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    write_bytes(path, bytes)
}

pub fn read_file(path: &Path) -> Result<Vec<u8>> {
    read_bytes(path)
}
