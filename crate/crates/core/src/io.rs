//! Tensor persistence (NPY, little-endian `f32`, C order) and 8-bit grayscale PNG export.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mask::SoftMask;
use crate::tensor::{LatentTensor, ScalarMap, Shape};

const MAGIC: &[u8; 6] = b"\x93NUMPY";
const HEADER_ALIGN: usize = 64;

/// Reads a rank-2 or rank-3 `<f4` NPY file. Rank-2 files load as single-channel tensors.
pub fn read_tensor(path: impl AsRef<Path>) -> Result<LatentTensor> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut bytes = Vec::new();
    BufReader::new(file)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    decode_npy(&bytes)
}

pub fn write_tensor(t: &LatentTensor, path: impl AsRef<Path>) -> Result<()> {
    let s = t.shape();
    write_npy(path.as_ref(), &[s.channels, s.height, s.width], t.data())
}

/// Writes a map as a rank-2 NPY file.
pub fn write_scalar_map(m: &ScalarMap, path: impl AsRef<Path>) -> Result<()> {
    let data: Vec<f32> = m.data().iter().map(|&v| v as f32).collect();
    if data.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data(
            "map holds values not representable as f32".into(),
        ));
    }
    write_npy(path.as_ref(), &[m.height(), m.width()], &data)
}

pub fn read_scalar_map(path: impl AsRef<Path>) -> Result<ScalarMap> {
    ScalarMap::try_from(&read_tensor(path)?)
}

/// Writes the mask as an 8-bit grayscale PNG, pixel = round(weight * 255), ties away from zero.
pub fn export_mask_image(m: &SoftMask, path: impl AsRef<Path>) -> Result<()> {
    let pixels: Vec<u8> = m
        .weights()
        .iter()
        .map(|&w| (w.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    write_gray_png(m.width(), m.height(), &pixels, path.as_ref())
}

/// Renders a map normalized by its maximum as a grayscale PNG. An all-zero map renders black.
pub fn export_heat_image(m: &ScalarMap, path: impl AsRef<Path>) -> Result<()> {
    let max = m.max();
    let pixels: Vec<u8> = m
        .data()
        .iter()
        .map(|&v| {
            if max > 0.0 && max.is_finite() {
                ((v / max).clamp(0.0, 1.0) * 255.0).round() as u8
            } else {
                0
            }
        })
        .collect();
    write_gray_png(m.width(), m.height(), &pixels, path.as_ref())
}

fn write_gray_png(width: usize, height: usize, pixels: &[u8], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut encoder = png::Encoder::new(BufWriter::new(file), width as u32, height as u32);
    encoder.set_color(png::ColorType::Grayscale);
    encoder.set_depth(png::BitDepth::Eight);
    let to_io = |e: png::EncodingError| match e {
        png::EncodingError::IoError(io) => Error::io(path, io),
        other => Error::io(path, std::io::Error::other(other.to_string())),
    };
    let mut writer = encoder.write_header().map_err(to_io)?;
    writer.write_image_data(pixels).map_err(to_io)?;
    writer.finish().map_err(to_io)?;
    Ok(())
}

fn write_npy(path: &Path, shape: &[usize], data: &[f32]) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    w.write_all(&encode_npy(shape, data))
        .and_then(|_| w.flush())
        .map_err(|e| Error::io(path, e))
}

pub(crate) fn encode_npy(shape: &[usize], data: &[f32]) -> Vec<u8> {
    let dims = match shape {
        [n] => format!("({n},)"),
        _ => format!(
            "({})",
            shape
                .iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!("{{'descr': '<f4', 'fortran_order': False, 'shape': {dims}, }}");
    // magic(6) + version(2) + header_len(2) + header + '\n' must be a multiple of 64
    let unpadded = MAGIC.len() + 4 + header.len() + 1;
    let padding = (HEADER_ALIGN - unpadded % HEADER_ALIGN) % HEADER_ALIGN;
    header.extend(std::iter::repeat_n(' ', padding));
    header.push('\n');

    let mut out = Vec::with_capacity(MAGIC.len() + 4 + header.len() + data.len() * 4);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub(crate) fn decode_npy(bytes: &[u8]) -> Result<LatentTensor> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(Error::Format("missing NPY magic".into()));
    }
    let (header_len, header_start) = match bytes[6] {
        1 => (u16::from_le_bytes([bytes[8], bytes[9]]) as usize, 10),
        2 | 3 => {
            if bytes.len() < 12 {
                return Err(Error::Format("truncated NPY preamble".into()));
            }
            (
                u32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]) as usize,
                12,
            )
        }
        v => return Err(Error::Format(format!("unsupported NPY version {v}"))),
    };
    let payload_start = header_start + header_len;
    if bytes.len() < payload_start {
        return Err(Error::Format("truncated NPY header".into()));
    }
    let header = std::str::from_utf8(&bytes[header_start..payload_start])
        .map_err(|_| Error::Format("NPY header is not valid text".into()))?;
    let header = parse_header(header)?;

    if header.descr != "<f4" {
        return Err(Error::Format(format!(
            "unsupported dtype '{}', expected '<f4'",
            header.descr
        )));
    }
    if header.fortran_order {
        return Err(Error::Format(
            "fortran_order arrays are not supported".into(),
        ));
    }
    let shape = match header.shape.as_slice() {
        &[h, w] => Shape::new(1, h, w),
        &[c, h, w] => Shape::new(c, h, w),
        other => {
            return Err(Error::Shape(format!(
                "expected rank 2 or 3, file has rank {}",
                other.len()
            )))
        }
    };
    let payload = &bytes[payload_start..];
    if payload.len() != shape.len() * 4 {
        return Err(Error::Format(format!(
            "payload holds {} bytes, shape {shape} needs {}",
            payload.len(),
            shape.len() * 4
        )));
    }
    let data = payload
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    LatentTensor::new(shape, data)
}

struct NpyHeader {
    descr: String,
    fortran_order: bool,
    shape: Vec<usize>,
}

fn parse_header(text: &str) -> Result<NpyHeader> {
    let text = text.trim();
    if !(text.starts_with('{') && text.ends_with('}')) {
        return Err(Error::Format(format!("header is not a dict: {text}")));
    }
    let descr = dict_value(text, "descr")?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|d| d.strip_suffix('\''))
        .or_else(|| descr.strip_prefix('"').and_then(|d| d.strip_suffix('"')))
        .ok_or_else(|| Error::Format(format!("descr is not a string: {descr}")))?
        .to_string();
    let fortran_order = match dict_value(text, "fortran_order")? {
        "False" => false,
        "True" => true,
        other => return Err(Error::Format(format!("bad fortran_order value {other}"))),
    };
    let shape_text = dict_value(text, "shape")?;
    let inner = shape_text
        .strip_prefix('(')
        .and_then(|s| s.strip_suffix(')'))
        .ok_or_else(|| Error::Format(format!("shape is not a tuple: {shape_text}")))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<usize>()
                .map_err(|_| Error::Format(format!("bad shape entry '{s}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(NpyHeader {
        descr,
        fortran_order,
        shape,
    })
}

/// Returns the raw text of the value for `key` in a Python dict literal.
fn dict_value<'a>(dict: &'a str, key: &str) -> Result<&'a str> {
    let needle_single = format!("'{key}'");
    let needle_double = format!("\"{key}\"");
    let start = dict
        .find(&needle_single)
        .map(|i| i + needle_single.len())
        .or_else(|| dict.find(&needle_double).map(|i| i + needle_double.len()))
        .ok_or_else(|| Error::Format(format!("header lacks '{key}'")))?;
    let rest = dict[start..]
        .trim_start()
        .strip_prefix(':')
        .ok_or_else(|| Error::Format(format!("no ':' after '{key}'")))?
        .trim_start();
    let end = if rest.starts_with('(') {
        rest.find(')').map(|i| i + 1)
    } else if let Some(q) = rest.chars().next().filter(|c| *c == '\'' || *c == '"') {
        rest[1..].find(q).map(|i| i + 2)
    } else {
        rest.find([',', '}'])
    }
    .ok_or_else(|| Error::Format(format!("unterminated value for '{key}'")))?;
    Ok(rest[..end].trim())
}
