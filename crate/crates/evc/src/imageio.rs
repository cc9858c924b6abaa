//! 8-bit grayscale PGM and PNG reading and writing.

use std::io::Cursor;
use std::path::Path;

use crate::error::{CliError, CliResult};

/// Grayscale pixels normalized to `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

/// `v` clamped to `[0, 1]` and rounded to the nearest of 256 levels.
pub fn to_u8(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(width: usize, height: usize, pixels: &[u8]) -> Vec<u8> {
    assert_eq!(
        pixels.len(),
        width * height,
        "pixel count must match dimensions"
    );
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend_from_slice(pixels);
    out
}

/// Parses binary PGM (P5) with 8- or 16-bit samples.
pub fn decode_pgm(bytes: &[u8]) -> CliResult<GrayImage> {
    let bad = |msg: &str| CliError::data(format!("malformed PGM: {msg}"));
    let mut pos = 0;
    let mut fields = [0usize; 3];
    if bytes.len() < 2 || &bytes[..2] != b"P5" {
        return Err(bad("missing P5 magic"));
    }
    pos += 2;
    for field in fields.iter_mut() {
        // Whitespace and comments may separate header fields.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *field = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| bad("bad header number"))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(bad("header not terminated"));
    }
    pos += 1;
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(bad("bad dimensions or maxval"));
    }
    let n = width * height;
    let data = &bytes[pos..];
    let scale = maxval as f32;
    let pixels: Vec<f32> = if maxval < 256 {
        if data.len() < n {
            return Err(bad("truncated raster"));
        }
        data[..n].iter().map(|&b| b as f32 / scale).collect()
    } else {
        if data.len() < 2 * n {
            return Err(bad("truncated raster"));
        }
        data[..2 * n]
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f32 / scale)
            .collect()
    };
    Ok(GrayImage {
        width,
        height,
        pixels: pixels.into_iter().map(|v| v.min(1.0)).collect(),
    })
}

fn png_encoder<'a>(
    out: &'a mut Vec<u8>,
    width: usize,
    height: usize,
    color: png::ColorType,
) -> png::Encoder<'a, &'a mut Vec<u8>> {
    let mut enc = png::Encoder::new(out, width as u32, height as u32);
    enc.set_color(color);
    enc.set_depth(png::BitDepth::Eight);
    enc.set_compression(png::Compression::Balanced);
    enc.set_filter(png::Filter::Adaptive);
    enc
}

fn encode_png(
    width: usize,
    height: usize,
    color: png::ColorType,
    data: &[u8],
) -> CliResult<Vec<u8>> {
    let mut out = Vec::new();
    {
        let enc = png_encoder(&mut out, width, height, color);
        let mut writer = enc
            .write_header()
            .map_err(|e| CliError::data(e.to_string()))?;
        writer
            .write_image_data(data)
            .map_err(|e| CliError::data(e.to_string()))?;
        writer.finish().map_err(|e| CliError::data(e.to_string()))?;
    }
    Ok(out)
}

/// 8-bit grayscale PNG with fixed encoder settings.
pub fn encode_png_gray(width: usize, height: usize, pixels: &[u8]) -> CliResult<Vec<u8>> {
    assert_eq!(
        pixels.len(),
        width * height,
        "pixel count must match dimensions"
    );
    encode_png(width, height, png::ColorType::Grayscale, pixels)
}

/// 8-bit RGB PNG with fixed encoder settings; `rgb` is interleaved.
pub fn encode_png_rgb(width: usize, height: usize, rgb: &[u8]) -> CliResult<Vec<u8>> {
    assert_eq!(
        rgb.len(),
        3 * width * height,
        "pixel count must match dimensions"
    );
    encode_png(width, height, png::ColorType::Rgb, rgb)
}

/// Decodes any PNG to grayscale. Color is reduced with Rec. 601 luma
/// weights; alpha is ignored.
pub fn decode_png(bytes: &[u8]) -> CliResult<GrayImage> {
    let err = |e: png::DecodingError| CliError::data(format!("malformed PNG: {e}"));
    let mut dec = png::Decoder::new(Cursor::new(bytes));
    dec.set_transformations(png::Transformations::EXPAND);
    let mut reader = dec.read_info().map_err(err)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| CliError::data("PNG too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(err)?;
    let (width, height) = (info.width as usize, info.height as usize);
    let channels = info.color_type.samples();
    let wide = info.bit_depth == png::BitDepth::Sixteen;
    let bytes_per = if wide { 2 } else { 1 };
    let max = if wide { 65535.0 } else { 255.0 };
    let sample = |row: &[u8], i: usize| -> f32 {
        if wide {
            u16::from_be_bytes([row[2 * i], row[2 * i + 1]]) as f32 / max
        } else {
            row[i] as f32 / max
        }
    };
    let mut pixels = Vec::with_capacity(width * height);
    for y in 0..height {
        let row = &buf[y * info.line_size..y * info.line_size + width * channels * bytes_per];
        for x in 0..width {
            let v = match channels {
                1 | 2 => sample(row, x * channels),
                _ => {
                    let (r, g, b) = (
                        sample(row, x * channels),
                        sample(row, x * channels + 1),
                        sample(row, x * channels + 2),
                    );
                    0.299 * r + 0.587 * g + 0.114 * b
                }
            };
            pixels.push(v.clamp(0.0, 1.0));
        }
    }
    Ok(GrayImage {
        width,
        height,
        pixels,
    })
}

/// Reads a PGM or PNG file, chosen by its leading bytes.
pub fn read_gray(path: &Path) -> CliResult<GrayImage> {
    let bytes = std::fs::read(path).map_err(|e| CliError::io(path, e))?;
    let decoded = if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else {
        Err(CliError::data(
            "unsupported image format (expected PGM P5 or PNG)",
        ))
    };
    decoded.map_err(|e| e.context(path.display()))
}

pub fn write_file(path: &Path, bytes: &[u8]) -> CliResult<()> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip() {
        let px: Vec<u8> = (0..12).map(|i| (i * 20) as u8).collect();
        let img = decode_pgm(&encode_pgm(4, 3, &px)).unwrap();
        assert_eq!((img.width, img.height), (4, 3));
        let back: Vec<u8> = img.pixels.iter().map(|&v| to_u8(v)).collect();
        assert_eq!(back, px);
    }

    #[test]
    fn pgm_endpoints_and_comments() {
        let bytes = b"P5 # comment\n2 1\n# another\n255\n\x00\xff";
        let img = decode_pgm(bytes).unwrap();
        assert_eq!(img.pixels, vec![0.0, 1.0]);
    }

    #[test]
    fn pgm_sixteen_bit() {
        let bytes = b"P5\n1 1\n65535\n\xff\xff";
        assert_eq!(decode_pgm(bytes).unwrap().pixels, vec![1.0]);
    }

    #[test]
    fn pgm_rejects_garbage() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
    }

    #[test]
    fn png_gray_round_trip_and_stable() {
        let px: Vec<u8> = (0..64).map(|i| (i * 4) as u8).collect();
        let a = encode_png_gray(8, 8, &px).unwrap();
        assert_eq!(a, encode_png_gray(8, 8, &px).unwrap());
        let img = decode_png(&a).unwrap();
        let back: Vec<u8> = img.pixels.iter().map(|&v| to_u8(v)).collect();
        assert_eq!(back, px);
    }

    #[test]
    fn png_rgb_gray_pixels_decode_to_gray() {
        let rgb = [10u8, 10, 10, 200, 200, 200];
        let img = decode_png(&encode_png_rgb(2, 1, &rgb).unwrap()).unwrap();
        assert_eq!(to_u8(img.pixels[0]), 10);
        assert_eq!(to_u8(img.pixels[1]), 200);
    }
}
