//! Binary netpbm readers and writers: P6 (PPM) for images, P5 (PGM) for
//! label maps. Images are stored as 8-bit channels; tensors hold the exact
//! k/255 values so a write/read cycle is lossless. Label value 255 encodes
//! void.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::regions::LabelMap;
use crate::tensor::Tensor;

const MAXVAL: u32 = 255;

fn parse_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn skip_space_and_comments(&mut self) -> Result<()> {
        loop {
            match self.bytes.get(self.pos) {
                Some(b) if b.is_ascii_whitespace() => self.pos += 1,
                Some(b'#') => {
                    while let Some(&b) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if b == b'\n' {
                            break;
                        }
                    }
                }
                Some(_) => return Ok(()),
                None => return Err(parse_err(self.pos, "unexpected end of header")),
            }
        }
    }

    fn read_number(&mut self) -> Result<u32> {
        self.skip_space_and_comments()?;
        let start = self.pos;
        let mut value: u32 = 0;
        while let Some(&b) = self.bytes.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            value = value
                .checked_mul(10)
                .and_then(|v| v.checked_add((b - b'0') as u32))
                .ok_or_else(|| parse_err(start, "numeric overflow in header"))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(parse_err(self.pos, "expected a decimal number"));
        }
        Ok(value)
    }
}

/// Parses a `P5`/`P6` header and returns (width, height, payload offset).
fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<(usize, usize, usize)> {
    if bytes.len() < 2 {
        return Err(parse_err(0, "file shorter than magic"));
    }
    if &bytes[..2] != magic {
        return Err(parse_err(
            0,
            format!(
                "expected magic {}, found {:?}",
                String::from_utf8_lossy(magic),
                &bytes[..2.min(bytes.len())]
            ),
        ));
    }
    let mut p = HeaderParser { bytes, pos: 2 };
    let width = p.read_number()?;
    let height = p.read_number()?;
    let maxval = p.read_number()?;
    if maxval != MAXVAL {
        return Err(parse_err(p.pos, format!("maxval must be 255, got {}", maxval)));
    }
    // exactly one whitespace byte separates header and payload
    match bytes.get(p.pos) {
        Some(b) if b.is_ascii_whitespace() => Ok((width as usize, height as usize, p.pos + 1)),
        _ => Err(parse_err(p.pos, "expected single whitespace before payload")),
    }
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    if image.ndim() != 3 || image.dim(2) != 3 {
        return Err(Error::shape("ppm encoder expects an HxWx3 tensor"));
    }
    let (h, w) = (image.dim(0), image.dim(1));
    let mut out = format!("P6\n{} {}\n255\n", w, h).into_bytes();
    out.reserve(w * h * 3);
    for &v in image.data() {
        out.push((v * 255.0).round().clamp(0.0, 255.0) as u8);
    }
    Ok(out)
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let (w, h, offset) = parse_header(bytes, b"P6")?;
    let need = w * h * 3;
    let payload = &bytes[offset..];
    if payload.len() < need {
        return Err(parse_err(
            offset + payload.len(),
            format!("payload truncated: need {} bytes, have {}", need, payload.len()),
        ));
    }
    let data: Vec<f64> = payload[..need].iter().map(|&b| b as f64 / 255.0).collect();
    Tensor::from_vec(&[h, w, 3], data)
}

pub fn encode_pgm(labels: &LabelMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", labels.width(), labels.height()).into_bytes();
    out.extend_from_slice(labels.labels());
    out
}

pub fn decode_pgm(bytes: &[u8]) -> Result<LabelMap> {
    let (w, h, offset) = parse_header(bytes, b"P5")?;
    let need = w * h;
    let payload = &bytes[offset..];
    if payload.len() < need {
        return Err(parse_err(
            offset + payload.len(),
            format!("payload truncated: need {} bytes, have {}", need, payload.len()),
        ));
    }
    LabelMap::from_vec(w, h, payload[..need].to_vec())
}

pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    Ok(fs::write(path, encode_ppm(image)?)?)
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_pgm(path: &Path, labels: &LabelMap) -> Result<()> {
    Ok(fs::write(path, encode_pgm(labels))?)
}

pub fn read_pgm(path: &Path) -> Result<LabelMap> {
    decode_pgm(&fs::read(path)?)
}
