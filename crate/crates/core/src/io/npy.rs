//! NPY version 1.0 reader/writer (little-endian, C order; f4, f8 and u1).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::map::PlanarMap;

const MAGIC: &[u8] = b"\x93NUMPY";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F32,
    F64,
    U8,
}

impl Dtype {
    fn descr(self) -> &'static str {
        match self {
            Dtype::F32 => "<f4",
            Dtype::F64 => "<f8",
            Dtype::U8 => "|u1",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F32 => 4,
            Dtype::F64 => 8,
            Dtype::U8 => 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum NpyData {
    F32(Vec<f32>),
    F64(Vec<f64>),
    U8(Vec<u8>),
}

impl NpyData {
    pub fn len(&self) -> usize {
        match self {
            NpyData::F32(v) => v.len(),
            NpyData::F64(v) => v.len(),
            NpyData::U8(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype(&self) -> Dtype {
        match self {
            NpyData::F32(_) => Dtype::F32,
            NpyData::F64(_) => Dtype::F64,
            NpyData::U8(_) => Dtype::U8,
        }
    }

    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            NpyData::F32(v) => v.iter().map(|&x| x as f64).collect(),
            NpyData::F64(v) => v.clone(),
            NpyData::U8(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub shape: Vec<usize>,
    pub data: NpyData,
}

impl NpyArray {
    pub fn new(shape: Vec<usize>, data: NpyData) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch(format!(
                "shape {shape:?} holds {n} elements, data has {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }
}

/// Parsed header: dtype, shape and the byte offset of the data.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyHeader {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub data_offset: usize,
}

fn unsupported(path: &Path, msg: impl Into<String>) -> Error {
    Error::UnsupportedFormat {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

fn dict_value<'a>(header: &'a str, key: &str) -> Option<&'a str> {
    let pat = format!("'{key}'");
    let start = header.find(&pat)? + pat.len();
    let rest = header[start..].trim_start().strip_prefix(':')?.trim_start();
    Some(rest)
}

pub fn parse_header(bytes: &[u8], path: &Path) -> Result<NpyHeader> {
    if bytes.len() < 10 || &bytes[..6] != MAGIC {
        return Err(unsupported(path, "missing NPY magic"));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(unsupported(path, format!("NPY version {major}.{minor}, only 1.0 is supported")));
    }
    let hlen = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_offset = 10 + hlen;
    if bytes.len() < data_offset {
        return Err(unsupported(path, "truncated header"));
    }
    let header = std::str::from_utf8(&bytes[10..data_offset]).map_err(|_| unsupported(path, "header is not ASCII"))?;

    let descr = dict_value(header, "descr").ok_or_else(|| unsupported(path, "header lacks 'descr'"))?;
    let descr = descr
        .strip_prefix('\'')
        .and_then(|s| s.split('\'').next())
        .ok_or_else(|| unsupported(path, "malformed 'descr'"))?;
    let dtype = match descr {
        "<f4" | "=f4" => Dtype::F32,
        "<f8" | "=f8" => Dtype::F64,
        "|u1" | "<u1" | "=u1" | "u1" => Dtype::U8,
        d if d.starts_with('>') => return Err(unsupported(path, format!("big-endian dtype '{d}'"))),
        d => return Err(unsupported(path, format!("dtype '{d}'"))),
    };

    let fortran = dict_value(header, "fortran_order").ok_or_else(|| unsupported(path, "header lacks 'fortran_order'"))?;
    if fortran.starts_with("True") {
        return Err(unsupported(path, "fortran-ordered arrays"));
    } else if !fortran.starts_with("False") {
        return Err(unsupported(path, "malformed 'fortran_order'"));
    }

    let shape_str = dict_value(header, "shape").ok_or_else(|| unsupported(path, "header lacks 'shape'"))?;
    let inner = shape_str
        .strip_prefix('(')
        .and_then(|s| s.split(')').next())
        .ok_or_else(|| unsupported(path, "malformed 'shape'"))?;
    let shape = inner
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<usize>().map_err(|_| unsupported(path, format!("bad dimension '{s}'"))))
        .collect::<Result<Vec<_>>>()?;

    Ok(NpyHeader {
        dtype,
        shape,
        data_offset,
    })
}

pub fn parse_npy(bytes: &[u8], path: &Path) -> Result<NpyArray> {
    let h = parse_header(bytes, path)?;
    let n: usize = h.shape.iter().product();
    let body = &bytes[h.data_offset..];
    if body.len() != n * h.dtype.size() {
        return Err(unsupported(
            path,
            format!("expected {} data bytes for shape {:?}, found {}", n * h.dtype.size(), h.shape, body.len()),
        ));
    }
    let data = match h.dtype {
        Dtype::F32 => NpyData::F32(body.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
        Dtype::F64 => NpyData::F64(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect()),
        Dtype::U8 => NpyData::U8(body.to_vec()),
    };
    Ok(NpyArray { shape: h.shape, data })
}

pub fn encode_npy(arr: &NpyArray) -> Vec<u8> {
    let shape = match arr.shape.len() {
        1 => format!("({},)", arr.shape[0]),
        _ => format!("({})", arr.shape.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(", ")),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        arr.data.dtype().descr(),
        shape
    );
    // pad so that the data starts on a 64-byte boundary, newline-terminated
    let total = 10 + header.len() + 1;
    header.push_str(&" ".repeat((64 - total % 64) % 64));
    header.push('\n');

    let mut out = Vec::with_capacity(10 + header.len() + arr.data.len() * arr.data.dtype().size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    match &arr.data {
        NpyData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NpyData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        NpyData::U8(v) => out.extend_from_slice(v),
    }
    out
}

pub fn read_npy(path: impl AsRef<Path>) -> Result<NpyArray> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_npy(&bytes, path)
}

/// Reads only the header of an NPY file.
pub fn read_npy_header(path: impl AsRef<Path>) -> Result<NpyHeader> {
    use std::io::Read;
    let path = path.as_ref();
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut head = vec![0u8; 10];
    f.read_exact(&mut head).map_err(|e| Error::io(path, e))?;
    if &head[..6] != MAGIC {
        return Err(unsupported(path, "missing NPY magic"));
    }
    let hlen = u16::from_le_bytes([head[8], head[9]]) as usize;
    head.resize(10 + hlen, 0);
    f.read_exact(&mut head[10..]).map_err(|e| Error::io(path, e))?;
    parse_header(&head, path)
}

pub fn write_npy(path: impl AsRef<Path>, arr: &NpyArray) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_npy(arr)).map_err(|e| Error::io(path, e))
}

/// Reads an `H x W` or `H x W x C` array as a planar map.
pub fn read_map(path: impl AsRef<Path>) -> Result<PlanarMap> {
    let path = path.as_ref();
    let arr = read_npy(path)?;
    let (h, w, c) = match arr.shape[..] {
        [h, w] => (h, w, 1),
        [h, w, c] => (h, w, c),
        _ => {
            return Err(Error::ShapeMismatch(format!(
                "{}: expected HxW or HxWxC, got shape {:?}",
                path.display(),
                arr.shape
            )))
        }
    };
    PlanarMap::new(w, h, c, arr.data.to_f64())
}

/// Writes a map as `H x W` (single channel) or `H x W x C`.
pub fn write_map(path: impl AsRef<Path>, map: &PlanarMap, dtype: Dtype) -> Result<()> {
    let shape = if map.channels() == 1 {
        vec![map.height(), map.width()]
    } else {
        vec![map.height(), map.width(), map.channels()]
    };
    let data = match dtype {
        Dtype::F32 => NpyData::F32(map.data().iter().map(|&v| v as f32).collect()),
        Dtype::F64 => NpyData::F64(map.data().to_vec()),
        Dtype::U8 => NpyData::U8(map.data().iter().map(|&v| v.round().clamp(0.0, 255.0) as u8).collect()),
    };
    write_npy(path, &NpyArray::new(shape, data)?)
}
