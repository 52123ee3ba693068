//! Binary PGM (`P5`) and PPM (`P6`) codecs.
//!
//! Readers accept comments and any maxval up to 65535 (two bytes per sample,
//! big-endian, above 255). Writers always emit maxval 255.

use crate::error::{Error, Result};
use crate::tensor::Tensor;

struct Header {
    width: usize,
    height: usize,
    maxval: usize,
    data_start: usize,
}

fn parse_header(bytes: &[u8], magic: &[u8; 2]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::parse(0, format!("expected magic {}", String::from_utf8_lossy(magic))));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and `#` comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::parse(pos, "truncated header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        if start == pos {
            return Err(Error::parse(pos, "expected a decimal number"));
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .unwrap()
            .parse()
            .map_err(|_| Error::parse(start, "number out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(Error::parse(pos, "expected whitespace after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(Error::parse(2, "zero image dimension"));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::parse(2, format!("maxval {maxval} outside 1..=65535")));
    }
    Ok(Header {
        width,
        height,
        maxval,
        data_start: pos,
    })
}

fn read_samples(bytes: &[u8], header: &Header, channels: usize) -> Result<Vec<f64>> {
    let wide = header.maxval > 255;
    let n = header.width * header.height * channels;
    let need = n * if wide { 2 } else { 1 };
    let body = &bytes[header.data_start..];
    if body.len() < need {
        return Err(Error::parse(bytes.len(), format!("pixel data truncated: need {need} bytes")));
    }
    let maxval = header.maxval as f64;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let raw = if wide {
            u16::from_be_bytes([body[2 * i], body[2 * i + 1]]) as usize
        } else {
            body[i] as usize
        };
        if raw > header.maxval {
            return Err(Error::parse(header.data_start + i, "sample exceeds maxval"));
        }
        out.push(raw as f64 / maxval);
    }
    Ok(out)
}

/// Decodes a `P5` graymap into a `[1, H, W]` tensor with values in `[0, 1]`.
pub fn decode_pgm(bytes: &[u8]) -> Result<Tensor> {
    let header = parse_header(bytes, b"P5")?;
    let data = read_samples(bytes, &header, 1)?;
    Tensor::from_vec(&[1, header.height, header.width], data)
}

/// Decodes a `P6` pixmap into a `[3, H, W]` tensor with values in `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor> {
    let header = parse_header(bytes, b"P6")?;
    let interleaved = read_samples(bytes, &header, 3)?;
    let hw = header.width * header.height;
    let mut planar = vec![0.0; 3 * hw];
    for (i, px) in interleaved.chunks_exact(3).enumerate() {
        for c in 0..3 {
            planar[c * hw + i] = px[c];
        }
    }
    Tensor::from_vec(&[3, header.height, header.width], planar)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Encodes a `[1, H, W]` tensor (values clamped to `[0, 1]`) as `P5`.
pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    if c != 1 {
        return Err(Error::shape(format!("PGM needs one channel, got {c}")));
    }
    let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

/// Encodes a planar `[3, H, W]` tensor (values clamped to `[0, 1]`) as `P6`.
pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let (c, h, w) = image.chw()?;
    if c != 3 {
        return Err(Error::shape(format!("PPM needs three channels, got {c}")));
    }
    let hw = h * w;
    let d = image.data();
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    for i in 0..hw {
        for ch in 0..3 {
            out.push(quantize(d[ch * hw + i]));
        }
    }
    Ok(out)
}
