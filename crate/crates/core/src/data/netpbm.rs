//! Binary PPM (P6) and PGM (P5) images with 8-bit samples.
//!
//! Colour images are `(3, H, W)` tensors and grey images `(H, W)` tensors,
//! both with values in [0, 1]. Writing rounds to the nearest of 256 levels.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Nearest 8-bit level of a value in [0, 1]; out-of-range values clamp.
pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// Rounds every value to the 8-bit grid, as a write/read round trip would.
pub fn quantize_tensor(t: &Tensor) -> Tensor {
    t.map(|v| quantize(v) as f64 / 255.0)
}

fn header(magic: &str, w: usize, h: usize) -> Vec<u8> {
    format!("{magic}\n{w} {h}\n255\n").into_bytes()
}

pub fn encode_ppm(image: &Tensor) -> Result<Vec<u8>> {
    let &[3, h, w] = image.shape() else {
        return Err(Error::shape("write_ppm", format!("expected (3, H, W), got {:?}", image.shape())));
    };
    let plane = h * w;
    let d = image.data();
    let mut out = header("P6", w, h);
    out.reserve(3 * plane);
    for i in 0..plane {
        for c in 0..3 {
            out.push(quantize(d[c * plane + i]));
        }
    }
    Ok(out)
}

pub fn encode_pgm(image: &Tensor) -> Result<Vec<u8>> {
    let &[h, w] = image.shape() else {
        return Err(Error::shape("write_pgm", format!("expected (H, W), got {:?}", image.shape())));
    };
    let mut out = header("P5", w, h);
    out.extend(image.data().iter().map(|&v| quantize(v)));
    Ok(out)
}

struct Header {
    magic: [u8; 2],
    width: usize,
    height: usize,
    maxval: usize,
    offset: usize,
}

fn parse_header(buf: &[u8]) -> Result<Header> {
    let bad = |what: &str| Error::Format(format!("netpbm header: {what}"));
    if buf.len() < 2 || buf[0] != b'P' {
        return Err(bad("missing magic number"));
    }
    let magic = [buf[0], buf[1]];
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments between fields
        loop {
            match buf.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while buf.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(bad("truncated")),
            }
        }
        let start = pos;
        while buf.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        let text = std::str::from_utf8(&buf[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| bad("expected a decimal number"))?;
    }
    // exactly one whitespace byte before the raster
    if !buf.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("missing separator before raster"));
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(bad("zero extent"));
    }
    if !(1..=255).contains(&maxval) {
        return Err(bad("only 8-bit samples are supported"));
    }
    Ok(Header { magic, width, height, maxval, offset: pos + 1 })
}

fn raster<'a>(buf: &'a [u8], h: &Header, channels: usize) -> Result<&'a [u8]> {
    let n = h
        .width
        .checked_mul(h.height)
        .and_then(|p| p.checked_mul(channels))
        .ok_or_else(|| Error::Format("netpbm extents overflow".into()))?;
    let data = &buf[h.offset..];
    if data.len() < n {
        return Err(Error::Format(format!("truncated raster: {} of {n} bytes", data.len())));
    }
    Ok(&data[..n])
}

pub fn decode_ppm(buf: &[u8]) -> Result<Tensor> {
    let h = parse_header(buf)?;
    if &h.magic != b"P6" {
        return Err(Error::Format("not a binary PPM (P6)".into()));
    }
    let bytes = raster(buf, &h, 3)?;
    let plane = h.width * h.height;
    let scale = h.maxval as f64;
    let mut data = vec![0.0; 3 * plane];
    for (i, px) in bytes.chunks_exact(3).enumerate() {
        for c in 0..3 {
            data[c * plane + i] = px[c] as f64 / scale;
        }
    }
    Tensor::from_vec(data, &[3, h.height, h.width])
}

pub fn decode_pgm(buf: &[u8]) -> Result<Tensor> {
    let h = parse_header(buf)?;
    if &h.magic != b"P5" {
        return Err(Error::Format("not a binary PGM (P5)".into()));
    }
    let scale = h.maxval as f64;
    let data = raster(buf, &h, 1)?.iter().map(|&b| b as f64 / scale).collect();
    Tensor::from_vec(data, &[h.height, h.width])
}

pub fn write_ppm(image: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_ppm(image)?)?;
    Ok(())
}

pub fn read_ppm(path: &Path) -> Result<Tensor> {
    decode_ppm(&fs::read(path)?)
}

pub fn write_pgm(image: &Tensor, path: &Path) -> Result<()> {
    fs::write(path, encode_pgm(image)?)?;
    Ok(())
}

pub fn read_pgm(path: &Path) -> Result<Tensor> {
    decode_pgm(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zeros_pin() {
        let bytes = encode_ppm(&Tensor::zeros(&[3, 2, 5])).unwrap();
        let mut expected = b"P6\n5 2\n255\n".to_vec();
        expected.extend([0u8; 30]);
        assert_eq!(bytes, expected);
    }

    #[test]
    fn channel_interleaving() {
        // pixel (0, 1) is pure green
        let mut t = Tensor::zeros(&[3, 1, 2]);
        t.data_mut()[2 + 1] = 1.0;
        let bytes = encode_ppm(&t).unwrap();
        assert_eq!(&bytes[bytes.len() - 6..], &[0, 0, 0, 0, 255, 0]);
        assert_eq!(decode_ppm(&bytes).unwrap(), t);
    }

    #[test]
    fn header_comments_and_maxval() {
        let buf = b"P5 # grey\n2 # width\n1\n15\n\x00\x0f";
        let t = decode_pgm(buf).unwrap();
        assert_eq!(t.data(), &[0.0, 1.0]);
    }

    #[test]
    fn malformed_inputs() {
        for buf in [
            &b""[..],
            b"P3\n1 1\n255\n000",
            b"P6\n1 1\n255",
            b"P6\n1 1\n65535\n\x00\x00\x00\x00\x00\x00",
            b"P6\n0 1\n255\n",
            b"P6\nx 1\n255\n\x00\x00\x00",
            b"P6\n2 1\n255\n\x00\x00\x00",
        ] {
            assert!(matches!(decode_ppm(buf), Err(Error::Format(_))), "{buf:?}");
        }
        assert!(decode_pgm(b"P6\n1 1\n255\n\x00\x00\x00").is_err());
        assert!(encode_ppm(&Tensor::zeros(&[1, 2, 2])).is_err());
        assert!(encode_pgm(&Tensor::zeros(&[1, 2, 2])).is_err());
    }

    proptest! {
        #[test]
        fn round_trip_within_half_step(values in proptest::collection::vec(0.0f64..=1.0, 3 * 4 * 3)) {
            let t = Tensor::from_vec(values, &[3, 4, 3]).unwrap();
            let once = decode_ppm(&encode_ppm(&t).unwrap()).unwrap();
            prop_assert!(once.max_abs_diff(&t) <= 1.0 / 510.0 + 1e-15);
            let twice = decode_ppm(&encode_ppm(&once).unwrap()).unwrap();
            prop_assert_eq!(twice, once);
        }
    }
}
