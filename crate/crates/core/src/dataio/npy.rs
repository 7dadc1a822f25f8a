//! NPY version 1.0 reader and writer.
//!
//! Only little-endian `<f4`, `<f8`, `<i4` and `<i8` in C order with one or
//! two dimensions are accepted. Other versions, Fortran order and
//! structured dtypes are rejected.

use std::io::Write;

use crate::error::Result;

pub(crate) const MAGIC: &[u8; 6] = b"\x93NUMPY";
const PREAMBLE: usize = MAGIC.len() + 2 + 2;
const ALIGN: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Dtype {
    F4,
    F8,
    I4,
    I8,
}

impl Dtype {
    fn parse(descr: &str) -> Option<Self> {
        match descr {
            "<f4" => Some(Dtype::F4),
            "<f8" => Some(Dtype::F8),
            "<i4" => Some(Dtype::I4),
            "<i8" => Some(Dtype::I8),
            _ => None,
        }
    }

    fn descr(self) -> &'static str {
        match self {
            Dtype::F4 => "<f4",
            Dtype::F8 => "<f8",
            Dtype::I4 => "<i4",
            Dtype::I8 => "<i8",
        }
    }

    fn size(self) -> usize {
        match self {
            Dtype::F4 | Dtype::I4 => 4,
            Dtype::F8 | Dtype::I8 => 8,
        }
    }
}

/// Decoded contents of an NPY file.
#[derive(Debug, Clone, PartialEq)]
pub struct NpyArray {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
}

/// Parse failure with the byte offset it was detected at.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NpyError {
    pub offset: usize,
    pub message: String,
}

impl NpyError {
    fn at(offset: usize, message: impl Into<String>) -> Self {
        Self {
            offset,
            message: message.into(),
        }
    }
}

impl std::fmt::Display for NpyError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{} (at byte {})", self.message, self.offset)
    }
}

/// Decodes an NPY v1.0 byte buffer.
pub fn decode(bytes: &[u8]) -> Result<NpyArray, NpyError> {
    if bytes.len() < PREAMBLE || &bytes[..MAGIC.len()] != MAGIC {
        return Err(NpyError::at(0, "missing NPY magic"));
    }
    let (major, minor) = (bytes[6], bytes[7]);
    if (major, minor) != (1, 0) {
        return Err(NpyError::at(
            6,
            format!("unsupported NPY version {major}.{minor}"),
        ));
    }
    let header_len = u16::from_le_bytes([bytes[8], bytes[9]]) as usize;
    let data_start = PREAMBLE + header_len;
    if bytes.len() < data_start {
        return Err(NpyError::at(8, "header length runs past end of file"));
    }
    let header = std::str::from_utf8(&bytes[PREAMBLE..data_start])
        .map_err(|e| NpyError::at(PREAMBLE + e.valid_up_to(), "header is not ASCII"))?;
    let dict = HeaderParser::new(header, PREAMBLE).parse_dict()?;

    let descr = dict
        .descr
        .ok_or_else(|| NpyError::at(PREAMBLE, "header lacks 'descr'"))?;
    let dtype = Dtype::parse(&descr)
        .ok_or_else(|| NpyError::at(PREAMBLE, format!("unsupported dtype '{descr}'")))?;
    match dict.fortran_order {
        Some(false) => {}
        Some(true) => return Err(NpyError::at(PREAMBLE, "Fortran order is not supported")),
        None => return Err(NpyError::at(PREAMBLE, "header lacks 'fortran_order'")),
    }
    let shape = dict
        .shape
        .ok_or_else(|| NpyError::at(PREAMBLE, "header lacks 'shape'"))?;
    if shape.is_empty() || shape.len() > 2 {
        return Err(NpyError::at(
            PREAMBLE,
            format!("expected 1 or 2 dimensions, got {}", shape.len()),
        ));
    }

    let count = shape
        .iter()
        .try_fold(1usize, |acc, &d| acc.checked_mul(d))
        .ok_or_else(|| NpyError::at(PREAMBLE, "shape overflows"))?;
    let payload = &bytes[data_start..];
    let expected = count * dtype.size();
    if payload.len() != expected {
        return Err(NpyError::at(
            data_start,
            format!(
                "payload has {} bytes, shape needs {expected}",
                payload.len()
            ),
        ));
    }

    let mut values = Vec::with_capacity(count);
    for (i, chunk) in payload.chunks_exact(dtype.size()).enumerate() {
        let v = match dtype {
            Dtype::F4 => f64::from(f32::from_le_bytes(chunk.try_into().unwrap())),
            Dtype::F8 => f64::from_le_bytes(chunk.try_into().unwrap()),
            Dtype::I4 => f64::from(i32::from_le_bytes(chunk.try_into().unwrap())),
            Dtype::I8 => {
                let x = i64::from_le_bytes(chunk.try_into().unwrap());
                if x.unsigned_abs() > 1 << 53 {
                    return Err(NpyError::at(
                        data_start + i * 8,
                        format!("integer {x} is not exactly representable as f64"),
                    ));
                }
                x as f64
            }
        };
        if !v.is_finite() {
            return Err(NpyError::at(
                data_start + i * dtype.size(),
                format!("non-finite value {v} at element {i}"),
            ));
        }
        values.push(v);
    }

    Ok(NpyArray {
        dtype,
        shape,
        values,
    })
}

/// Encodes `values` as NPY v1.0 with the given shape.
///
/// `I4`/`I8` truncate toward zero; callers pass integral values.
pub fn encode(values: &[f64], shape: &[usize], dtype: Dtype) -> Vec<u8> {
    let shape_txt = match shape {
        [n] => format!("({n},)"),
        dims => format!(
            "({})",
            dims.iter()
                .map(|d| d.to_string())
                .collect::<Vec<_>>()
                .join(", ")
        ),
    };
    let mut header = format!(
        "{{'descr': '{}', 'fortran_order': False, 'shape': {}, }}",
        dtype.descr(),
        shape_txt
    );
    // pad with spaces so the payload starts on an aligned offset, ending in '\n'
    let unpadded = PREAMBLE + header.len() + 1;
    let pad = (ALIGN - unpadded % ALIGN) % ALIGN;
    header.extend(std::iter::repeat_n(' ', pad));
    header.push('\n');

    let mut out = Vec::with_capacity(PREAMBLE + header.len() + values.len() * dtype.size());
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&[1, 0]);
    out.extend_from_slice(&(header.len() as u16).to_le_bytes());
    out.extend_from_slice(header.as_bytes());
    for &v in values {
        match dtype {
            Dtype::F4 => out.write_all(&(v as f32).to_le_bytes()),
            Dtype::F8 => out.write_all(&v.to_le_bytes()),
            Dtype::I4 => out.write_all(&(v as i32).to_le_bytes()),
            Dtype::I8 => out.write_all(&(v as i64).to_le_bytes()),
        }
        .expect("writing to a Vec cannot fail");
    }
    out
}

#[derive(Default)]
struct HeaderDict {
    descr: Option<String>,
    fortran_order: Option<bool>,
    shape: Option<Vec<usize>>,
}

/// Minimal parser for the Python dict literal in the NPY header.
struct HeaderParser<'a> {
    src: &'a [u8],
    pos: usize,
    base: usize,
}

impl<'a> HeaderParser<'a> {
    fn new(src: &'a str, base: usize) -> Self {
        Self {
            src: src.as_bytes(),
            pos: 0,
            base,
        }
    }

    fn err(&self, msg: impl Into<String>) -> NpyError {
        NpyError::at(self.base + self.pos, msg)
    }

    fn skip_ws(&mut self) {
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
    }

    fn peek(&mut self) -> Option<u8> {
        self.skip_ws();
        self.src.get(self.pos).copied()
    }

    fn expect(&mut self, c: u8) -> Result<(), NpyError> {
        if self.peek() == Some(c) {
            self.pos += 1;
            Ok(())
        } else {
            Err(self.err(format!("expected '{}'", c as char)))
        }
    }

    fn string(&mut self) -> Result<String, NpyError> {
        let quote = match self.peek() {
            Some(q @ (b'\'' | b'"')) => q,
            _ => return Err(self.err("expected a quoted string")),
        };
        self.pos += 1;
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos] != quote {
            self.pos += 1;
        }
        if self.pos == self.src.len() {
            return Err(self.err("unterminated string"));
        }
        let s = String::from_utf8_lossy(&self.src[start..self.pos]).into_owned();
        self.pos += 1;
        Ok(s)
    }

    fn word(&mut self) -> &'a [u8] {
        self.skip_ws();
        let start = self.pos;
        while self.pos < self.src.len() && self.src[self.pos].is_ascii_alphanumeric() {
            self.pos += 1;
        }
        &self.src[start..self.pos]
    }

    fn boolean(&mut self) -> Result<bool, NpyError> {
        let at = self.pos;
        match self.word() {
            b"True" => Ok(true),
            b"False" => Ok(false),
            _ => {
                self.pos = at;
                Err(self.err("expected True or False"))
            }
        }
    }

    fn shape(&mut self) -> Result<Vec<usize>, NpyError> {
        self.expect(b'(')?;
        let mut dims = Vec::new();
        loop {
            if self.peek() == Some(b')') {
                self.pos += 1;
                return Ok(dims);
            }
            let at = self.pos;
            let w = self.word();
            let d = std::str::from_utf8(w)
                .ok()
                .and_then(|t| t.trim_end_matches('L').parse::<usize>().ok())
                .ok_or_else(|| NpyError::at(self.base + at, "bad shape dimension"))?;
            dims.push(d);
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b')') => {}
                _ => return Err(self.err("expected ',' or ')' in shape")),
            }
        }
    }

    fn parse_dict(&mut self) -> Result<HeaderDict, NpyError> {
        let mut dict = HeaderDict::default();
        self.expect(b'{')?;
        loop {
            if self.peek() == Some(b'}') {
                self.pos += 1;
                break;
            }
            let key = self.string()?;
            self.expect(b':')?;
            match key.as_str() {
                "descr" => {
                    if self.peek() != Some(b'\'') && self.peek() != Some(b'"') {
                        return Err(self.err("structured dtypes are not supported"));
                    }
                    dict.descr = Some(self.string()?);
                }
                "fortran_order" => dict.fortran_order = Some(self.boolean()?),
                "shape" => dict.shape = Some(self.shape()?),
                other => return Err(self.err(format!("unexpected header key '{other}'"))),
            }
            match self.peek() {
                Some(b',') => self.pos += 1,
                Some(b'}') => {}
                _ => return Err(self.err("expected ',' or '}' in header")),
            }
        }
        if self.peek().is_some() {
            return Err(self.err("trailing characters after header dict"));
        }
        Ok(dict)
    }
}
