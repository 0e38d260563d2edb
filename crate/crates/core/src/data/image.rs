//! 8-bit PNG (via `png`) and binary PPM/PGM images.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use super::Signal;
use crate::error::{Error, Result};

/// Raw 8-bit image with interleaved channels (1 = gray, 3 = RGB).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Image8 {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub pixels: Vec<u8>,
}

impl Image8 {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if !matches!(channels, 1 | 3) {
            return Err(Error::Data(format!("unsupported channel count {channels}")));
        }
        if pixels.len() != width * height * channels {
            return Err(Error::Data(format!(
                "{width}x{height}x{channels} image needs {} bytes, got {}",
                width * height * channels,
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    /// Values in `[0, 1]`: byte `b` maps to `b / 255`.
    pub fn to_signal(&self) -> Signal {
        Signal {
            dims: vec![self.height, self.width],
            channels: self.channels,
            data: self.pixels.iter().map(|&b| f64::from(b) / 255.0).collect(),
        }
    }

    /// Clamps to `[0, 1]` and rounds to the nearest byte.
    pub fn from_signal(s: &Signal) -> Result<Self> {
        if !s.is_image() {
            return Err(Error::Data(format!("signal of dims {:?} is not an image", s.dims)));
        }
        let pixels = s.data.iter().map(|&x| to_byte(x)).collect();
        Image8::new(s.dims[1], s.dims[0], s.channels, pixels)
    }
}

pub fn to_byte(x: f64) -> u8 {
    if x.is_nan() {
        0
    } else {
        (x.clamp(0.0, 1.0) * 255.0).round() as u8
    }
}

/// Loads a PNG or PPM/PGM file, chosen by its magic bytes.
pub fn load_image(path: &Path) -> Result<Image8> {
    let bytes = std::fs::read(path).map_err(Error::io(path))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else if bytes.starts_with(b"P5") || bytes.starts_with(b"P6") {
        decode_ppm(&bytes)
    } else {
        Err(Error::Parse {
            what: "image",
            offset: 0,
            reason: "neither a PNG nor a binary PPM/PGM signature".into(),
        })
    }
}

pub fn decode_png(bytes: &[u8]) -> Result<Image8> {
    let parse = |reason: String| Error::Parse {
        what: "png",
        offset: 0,
        reason,
    };
    let decoder = png::Decoder::new(bytes);
    let mut reader = decoder.read_info().map_err(|e| parse(e.to_string()))?;
    let info = reader.info();
    if info.bit_depth != png::BitDepth::Eight {
        return Err(Error::Data(format!("unsupported PNG bit depth {:?}", info.bit_depth)));
    }
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::Rgb => 3,
        other => return Err(Error::Data(format!("unsupported PNG color type {other:?}"))),
    };
    let (width, height) = (info.width as usize, info.height as usize);
    let mut buf = vec![0; reader.output_buffer_size()];
    let frame = reader.next_frame(&mut buf).map_err(|e| parse(e.to_string()))?;
    buf.truncate(frame.buffer_size());
    Image8::new(width, height, channels, buf)
}

pub fn encode_png(img: &Image8) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(&mut out, img.width as u32, img.height as u32);
        enc.set_color(if img.channels == 1 {
            png::ColorType::Grayscale
        } else {
            png::ColorType::Rgb
        });
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc.write_header().map_err(|e| Error::Data(e.to_string()))?;
        writer
            .write_image_data(&img.pixels)
            .map_err(|e| Error::Data(e.to_string()))?;
    }
    Ok(out)
}

pub fn save_png(path: &Path, img: &Image8) -> Result<()> {
    let bytes = encode_png(img)?;
    let file = File::create(path).map_err(Error::io(path))?;
    let mut w = BufWriter::new(file);
    std::io::Write::write_all(&mut w, &bytes).map_err(Error::io(path))
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn err(&self, reason: impl Into<String>) -> Error {
        Error::Parse {
            what: "ppm",
            offset: self.pos,
            reason: reason.into(),
        }
    }

    fn skip_space(&mut self) {
        while self.pos < self.bytes.len() {
            match self.bytes[self.pos] {
                b'#' => {
                    while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                        self.pos += 1;
                    }
                }
                b' ' | b'\t' | b'\r' | b'\n' => self.pos += 1,
                _ => break,
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        self.skip_space();
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            self.pos = start;
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("{what} out of range")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image8> {
    let mut h = Header { bytes, pos: 0 };
    let channels = match bytes.get(..2) {
        Some(b"P5") => 1,
        Some(b"P6") => 3,
        _ => return Err(h.err("missing P5/P6 magic")),
    };
    h.pos = 2;
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(Error::Data(format!(
            "unsupported PPM maxval {maxval}, only 8-bit images are read"
        )));
    }
    if !matches!(bytes.get(h.pos), Some(b' ' | b'\t' | b'\r' | b'\n')) {
        return Err(h.err("expected a single whitespace byte after maxval"));
    }
    h.pos += 1;
    let need = width * height * channels;
    let body = &bytes[h.pos..];
    if body.len() < need {
        h.pos = bytes.len();
        return Err(h.err(format!("pixel data truncated: need {need} bytes, have {}", body.len())));
    }
    Image8::new(width, height, channels, body[..need].to_vec())
}

pub fn encode_ppm(img: &Image8) -> Vec<u8> {
    let magic = if img.channels == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend_from_slice(&img.pixels);
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_image(channels: usize, seed: u64) -> Image8 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (w, h) = (7, 5);
        Image8::new(w, h, channels, (0..w * h * channels).map(|_| rng.gen()).collect()).unwrap()
    }

    #[test]
    fn byte_value_scaling() {
        let img = Image8::new(2, 1, 1, vec![255, 0]).unwrap();
        assert_eq!(img.to_signal().data, vec![1.0, 0.0]);
        assert_eq!(Image8::from_signal(&img.to_signal()).unwrap(), img);
    }

    #[test]
    fn png_round_trip_is_byte_exact() {
        for c in [1, 3] {
            let img = random_image(c, c as u64);
            let bytes = encode_png(&img).unwrap();
            let back = decode_png(&bytes).unwrap();
            assert_eq!(back, img);
            assert_eq!(encode_png(&back).unwrap(), bytes);
        }
    }

    #[test]
    fn ppm_round_trip_and_comments() {
        for c in [1, 3] {
            let img = random_image(c, 10 + c as u64);
            let bytes = encode_ppm(&img);
            assert_eq!(decode_ppm(&bytes).unwrap(), img);
        }
        let mut commented = b"P5 # a comment\n2 1\n255\n".to_vec();
        commented.extend_from_slice(&[7, 9]);
        assert_eq!(decode_ppm(&commented).unwrap().pixels, vec![7, 9]);
    }

    #[test]
    fn ppm_errors_carry_offsets() {
        match decode_ppm(b"P6\n3 x\n255\n") {
            Err(Error::Parse { offset, .. }) => assert_eq!(offset, 5),
            other => panic!("{other:?}"),
        }
        match decode_ppm(b"P5\n2 2\n255\n\x01") {
            Err(Error::Parse { offset, reason, .. }) => {
                assert_eq!(offset, 12);
                assert!(reason.contains("truncated"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(decode_ppm(b"P5\n1 1\n65535\n\0\0"), Err(Error::Data(_))));
    }

    #[test]
    fn png_rejects_sixteen_bit() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 1, 1);
            enc.set_color(png::ColorType::Grayscale);
            enc.set_depth(png::BitDepth::Sixteen);
            enc.write_header().unwrap().write_image_data(&[0, 1]).unwrap();
        }
        assert!(matches!(decode_png(&out), Err(Error::Data(_))));
    }
}
