//! Binary PPM (P6, maxval 255) images as channel-planar `(1, 3, h, w)`
//! tensors with values in `[0, 255]`.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::{Shape, Tensor};

fn err(offset: usize, msg: impl std::fmt::Display) -> Error {
    Error::Image(format!("{msg} at byte offset {offset}"))
}

struct Header {
    width: usize,
    height: usize,
    data_offset: usize,
}

fn skip_space_and_comments(bytes: &[u8], mut pos: usize) -> usize {
    loop {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' && bytes[pos] != b'\r' {
                pos += 1;
            }
        } else {
            return pos;
        }
    }
}

fn read_uint(bytes: &[u8], pos: usize, what: &str) -> Result<(usize, usize)> {
    let pos = skip_space_and_comments(bytes, pos);
    let start = pos;
    let mut end = pos;
    while end < bytes.len() && bytes[end].is_ascii_digit() {
        end += 1;
    }
    if end == start {
        return Err(err(start, format!("expected {what}")));
    }
    let text = std::str::from_utf8(&bytes[start..end]).expect("ascii digits");
    let value = text
        .parse::<usize>()
        .map_err(|_| err(start, format!("{what} `{text}` out of range")))?;
    Ok((value, end))
}

fn parse_header(bytes: &[u8]) -> Result<Header> {
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(err(0, "missing P6 magic"));
    }
    let (width, pos) = read_uint(bytes, 2, "width")?;
    let (height, pos) = read_uint(bytes, pos, "height")?;
    let maxval_at = skip_space_and_comments(bytes, pos);
    let (maxval, pos) = read_uint(bytes, pos, "maxval")?;
    if maxval != 255 {
        return Err(err(maxval_at, format!("unsupported maxval {maxval}")));
    }
    if width == 0 || height == 0 {
        return Err(err(2, format!("empty image {width}x{height}")));
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => {}
        _ => return Err(err(pos, "expected a single whitespace byte after maxval")),
    }
    Ok(Header {
        width,
        height,
        data_offset: pos + 1,
    })
}

/// Decodes a P6 file held in memory.
pub fn decode_ppm(bytes: &[u8]) -> Result<Tensor<f32>> {
    let header = parse_header(bytes)?;
    let (w, h) = (header.width, header.height);
    let plane = w
        .checked_mul(h)
        .ok_or_else(|| err(2, format!("image {w}x{h} too large")))?;
    let need = plane * 3;
    let pixels = &bytes[header.data_offset..];
    if pixels.len() < need {
        return Err(err(
            header.data_offset + pixels.len(),
            format!("short pixel data: need {need} bytes, found {}", pixels.len()),
        ));
    }
    let mut data = vec![0f32; need];
    for (i, px) in pixels[..need].chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f32;
        }
    }
    Tensor::from_vec(Shape::new(1, 3, h, w), data)
}

/// Encodes `(1, 3, h, w)` as P6, rounding to nearest and clamping to `[0, 255]`.
pub fn encode_ppm(t: &Tensor<f32>) -> Result<Vec<u8>> {
    let shape = t.shape();
    if shape.n() != 1 || shape.c() != 3 {
        return Err(Error::Image(format!("expected a 1x3xHxW tensor, got {shape}")));
    }
    let (h, w, plane) = (shape.h(), shape.w(), shape.plane());
    let mut out = format!("P6\n{w} {h}\n255\n").into_bytes();
    out.reserve(plane * 3);
    let d = t.data();
    for i in 0..plane {
        for c in 0..3 {
            out.push(d[c * plane + i].round().clamp(0.0, 255.0) as u8);
        }
    }
    Ok(out)
}

pub fn load_image(path: impl AsRef<Path>) -> Result<Tensor<f32>> {
    let path = path.as_ref();
    let bytes = fs::read(path)?;
    decode_ppm(&bytes).map_err(|e| match e {
        Error::Image(msg) => Error::Image(format!("{}: {msg}", path.display())),
        other => other,
    })
}

pub fn save_image(t: &Tensor<f32>, path: impl AsRef<Path>) -> Result<()> {
    fs::write(path, encode_ppm(t)?)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn red_image() {
        let mut bytes = b"P6\n2 2\n255\n".to_vec();
        for _ in 0..4 {
            bytes.extend_from_slice(&[255, 0, 0]);
        }
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 2, 2));
        assert_eq!(&t.data()[..4], &[255.0; 4]);
        assert!(t.data()[4..].iter().all(|&v| v == 0.0));
        assert_eq!(encode_ppm(&t).unwrap(), bytes);
    }

    #[test]
    fn comments_and_whitespace_in_header() {
        let mut bytes = b"P6 # a comment\n3\t1 # more\n 255\n".to_vec();
        bytes.extend_from_slice(&[1, 2, 3, 4, 5, 6, 7, 8, 9]);
        let t = decode_ppm(&bytes).unwrap();
        assert_eq!(t.shape(), Shape::new(1, 3, 1, 3));
        assert_eq!(t.data(), &[1.0, 4.0, 7.0, 2.0, 5.0, 8.0, 3.0, 6.0, 9.0]);
    }

    #[test]
    fn rejects_bad_files() {
        let e = decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0").unwrap_err().to_string();
        assert!(e.contains("unsupported maxval"), "{e}");
        let e = decode_ppm(b"P3\n1 1\n255\n1 2 3").unwrap_err().to_string();
        assert!(e.contains("P6"), "{e}");
        let e = decode_ppm(b"P6\n2 2\n255\n\x01\x02").unwrap_err().to_string();
        assert!(e.contains("short pixel data") && e.contains("offset"), "{e}");
        let e = decode_ppm(b"P6\nx 2\n255\n").unwrap_err().to_string();
        assert!(e.contains("width") && e.contains("offset 3"), "{e}");
    }

    #[test]
    fn save_rounds_and_clamps() {
        let t = Tensor::from_vec(Shape::new(1, 3, 1, 1), vec![-3.0, 127.5, 300.0]).unwrap();
        let bytes = encode_ppm(&t).unwrap();
        assert_eq!(&bytes[bytes.len() - 3..], &[0, 128, 255]);
    }
}
