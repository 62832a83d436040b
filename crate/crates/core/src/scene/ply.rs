//! Binary little-endian PLY reader/writer for Gaussian records.
//!
//! Properties are matched by name, so their order in the header is free.
//! Required: `x y z scale_0..2 rot_0..3 opacity red green blue`; optional
//! `feat_0 .. feat_{D-1}`. Scale is a raw standard deviation, opacity a raw
//! value in [0, 1] and rotation is (w, x, y, z).

use std::io::Write;

use super::Gaussian;
use crate::error::{Error, Result};

const REQUIRED: [&str; 14] = [
    "x", "y", "z", "scale_0", "scale_1", "scale_2", "rot_0", "rot_1", "rot_2", "rot_3", "opacity",
    "red", "green", "blue",
];

#[derive(Clone, Copy, Debug, PartialEq)]
enum Scalar {
    F32,
    F64,
}

impl Scalar {
    fn parse(s: &str) -> Option<Self> {
        match s {
            "float" | "float32" => Some(Scalar::F32),
            "double" | "float64" => Some(Scalar::F64),
            _ => None,
        }
    }

    fn size(self) -> usize {
        match self {
            Scalar::F32 => 4,
            Scalar::F64 => 8,
        }
    }
}

struct Property {
    name: String,
    kind: Scalar,
    offset: usize,
}

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Parses Gaussians out of a PLY byte buffer.
pub fn read_gaussians(bytes: &[u8]) -> Result<Vec<Gaussian>> {
    let mut pos = 0usize;
    let next_line = |pos: &mut usize| -> Result<(usize, String)> {
        let start = *pos;
        let end = bytes[start..]
            .iter()
            .position(|&b| b == b'\n')
            .map(|i| start + i)
            .ok_or_else(|| parse_err(start, "unterminated header"))?;
        *pos = end + 1;
        let line = std::str::from_utf8(&bytes[start..end])
            .map_err(|_| parse_err(start, "header is not valid UTF-8"))?;
        Ok((start, line.trim_end_matches('\r').to_string()))
    };

    let (off, magic) = next_line(&mut pos)?;
    if magic != "ply" {
        return Err(parse_err(off, "missing 'ply' magic"));
    }

    let mut vertex_count: Option<usize> = None;
    let mut in_vertex = false;
    let mut seen_other_element_first = false;
    let mut props: Vec<Property> = Vec::new();
    let mut stride = 0usize;
    let mut format_ok = false;
    let header_end;
    loop {
        let (off, line) = next_line(&mut pos)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        match toks.as_slice() {
            ["end_header"] => {
                header_end = off;
                break;
            }
            ["format", "binary_little_endian", "1.0"] => format_ok = true,
            ["format", other, ..] => {
                return Err(parse_err(off, format!("unsupported format '{other}'")));
            }
            ["comment", ..] | ["obj_info", ..] | [] => {}
            ["element", "vertex", n] => {
                if vertex_count.is_some() {
                    return Err(parse_err(off, "duplicate vertex element"));
                }
                if seen_other_element_first {
                    return Err(parse_err(off, "vertex must be the first element"));
                }
                let n = n
                    .parse()
                    .map_err(|_| parse_err(off, format!("bad vertex count '{n}'")))?;
                vertex_count = Some(n);
                in_vertex = true;
            }
            ["element", ..] => {
                if vertex_count.is_none() {
                    seen_other_element_first = true;
                }
                in_vertex = false;
            }
            ["property", ty, name] => {
                if in_vertex {
                    let kind = Scalar::parse(ty).ok_or_else(|| {
                        parse_err(off, format!("unsupported property type '{ty}' for '{name}'"))
                    })?;
                    if props.iter().any(|p| p.name == *name) {
                        return Err(parse_err(off, format!("duplicate property '{name}'")));
                    }
                    props.push(Property {
                        name: name.to_string(),
                        kind,
                        offset: stride,
                    });
                    stride += kind.size();
                }
            }
            _ => return Err(parse_err(off, format!("unrecognized header line '{line}'"))),
        }
    }
    if !format_ok {
        return Err(parse_err(0, "missing 'format binary_little_endian 1.0'"));
    }
    let count = vertex_count.ok_or_else(|| parse_err(header_end, "no vertex element"))?;

    let find = |name: &str| props.iter().find(|p| p.name == name);
    let mut required = Vec::with_capacity(REQUIRED.len());
    for name in REQUIRED {
        required.push(find(name).ok_or_else(|| {
            parse_err(header_end, format!("missing required property '{name}'"))
        })?);
    }
    let mut features = Vec::new();
    while let Some(p) = find(&format!("feat_{}", features.len())) {
        features.push(p);
    }
    let stray = props
        .iter()
        .filter_map(|p| p.name.strip_prefix("feat_"))
        .filter_map(|s| s.parse::<usize>().ok())
        .any(|i| i >= features.len());
    if stray {
        return Err(parse_err(header_end, "feature properties are not contiguous from feat_0"));
    }

    let data = pos;
    let needed = count
        .checked_mul(stride)
        .ok_or_else(|| parse_err(header_end, "vertex count overflows"))?;
    if bytes.len() - data < needed {
        return Err(parse_err(
            bytes.len(),
            format!(
                "truncated vertex data: expected {needed} bytes from offset {data}, found {}",
                bytes.len() - data
            ),
        ));
    }

    let read = |rec: usize, p: &Property| -> Result<f64> {
        let at = rec + p.offset;
        let v = match p.kind {
            Scalar::F32 => f32::from_le_bytes(bytes[at..at + 4].try_into().unwrap()) as f64,
            Scalar::F64 => f64::from_le_bytes(bytes[at..at + 8].try_into().unwrap()),
        };
        if v.is_finite() {
            Ok(v)
        } else {
            Err(parse_err(at, format!("non-finite value in '{}'", p.name)))
        }
    };

    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let rec = data + i * stride;
        let mut v = [0.0f64; 14];
        for (slot, p) in v.iter_mut().zip(&required) {
            *slot = read(rec, p)?;
        }
        let feature = features
            .iter()
            .map(|p| read(rec, p))
            .collect::<Result<Vec<_>>>()?;
        let g = Gaussian::new(
            [v[0], v[1], v[2]],
            [v[3], v[4], v[5]],
            [v[6], v[7], v[8], v[9]],
            v[10],
            [v[11], v[12], v[13]],
            feature,
        )
        .map_err(|e| parse_err(rec, format!("vertex {i}: {e}")))?;
        out.push(g);
    }
    Ok(out)
}

/// Serializes Gaussians as float32 binary PLY.
pub fn write_gaussians(gaussians: &[Gaussian], out: &mut impl Write) -> std::io::Result<()> {
    let dim = gaussians.first().map_or(0, |g| g.feature.len());
    let mut header = String::from("ply\nformat binary_little_endian 1.0\n");
    header.push_str(&format!("element vertex {}\n", gaussians.len()));
    for name in REQUIRED {
        header.push_str(&format!("property float {name}\n"));
    }
    for i in 0..dim {
        header.push_str(&format!("property float feat_{i}\n"));
    }
    header.push_str("end_header\n");
    out.write_all(header.as_bytes())?;

    let mut buf = Vec::with_capacity(gaussians.len() * (14 + dim) * 4);
    for g in gaussians {
        let s = g.scale();
        let q = g.rotation_wxyz();
        let fixed = [
            g.position.x,
            g.position.y,
            g.position.z,
            s.x,
            s.y,
            s.z,
            q[0],
            q[1],
            q[2],
            q[3],
            g.opacity(),
            g.color.x,
            g.color.y,
            g.color.z,
        ];
        for v in fixed.iter().chain(&g.feature) {
            buf.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    out.write_all(&buf)
}
