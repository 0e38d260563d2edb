//! 16-bit PCM mono RIFF/WAVE reading and writing.

use std::path::Path;

use super::Signal;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Wav {
    pub sample_rate: u32,
    pub samples: Vec<i16>,
}

impl Wav {
    /// Samples divided by 32768, so `-32768` maps to `-1.0`.
    pub fn to_signal(&self) -> Signal {
        Signal {
            dims: vec![self.samples.len()],
            channels: 1,
            data: self.samples.iter().map(|&s| f64::from(s) / 32768.0).collect(),
        }
    }

    pub fn from_signal(s: &Signal, sample_rate: u32) -> Result<Self> {
        if s.dims.len() != 1 || s.channels != 1 {
            return Err(Error::Data("only mono 1-D signals can be written as WAV".into()));
        }
        let samples = s
            .data
            .iter()
            .map(|&x| (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16)
            .collect();
        Ok(Self { sample_rate, samples })
    }
}

fn parse_err(offset: usize, reason: impl Into<String>) -> Error {
    Error::Parse {
        what: "wav",
        offset,
        reason: reason.into(),
    }
}

fn u16_at(b: &[u8], at: usize) -> Result<u16> {
    b.get(at..at + 2)
        .map(|s| u16::from_le_bytes([s[0], s[1]]))
        .ok_or_else(|| parse_err(at, "unexpected end of file"))
}

fn u32_at(b: &[u8], at: usize) -> Result<u32> {
    b.get(at..at + 4)
        .map(|s| u32::from_le_bytes([s[0], s[1], s[2], s[3]]))
        .ok_or_else(|| parse_err(at, "unexpected end of file"))
}

pub fn decode_wav(bytes: &[u8]) -> Result<Wav> {
    if bytes.get(0..4) != Some(b"RIFF") {
        return Err(parse_err(0, "missing RIFF tag"));
    }
    if bytes.get(8..12) != Some(b"WAVE") {
        return Err(parse_err(8, "missing WAVE tag"));
    }
    let mut pos = 12;
    let mut format: Option<(u32, usize)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4)? as usize;
        let body = pos + 8;
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(parse_err(pos + 4, format!("fmt chunk of {size} bytes is too short")));
                }
                let tag = u16_at(bytes, body)?;
                let channels = u16_at(bytes, body + 2)?;
                let rate = u32_at(bytes, body + 4)?;
                let bits = u16_at(bytes, body + 14)?;
                if tag != 1 {
                    return Err(Error::Data(format!(
                        "unsupported WAV format tag {tag}, only PCM is read"
                    )));
                }
                if bits != 16 {
                    return Err(Error::Data(format!("unsupported WAV bit depth {bits}")));
                }
                if channels != 1 {
                    return Err(Error::Data(format!("unsupported WAV channel count {channels}")));
                }
                format = Some((rate, body));
            }
            b"data" => {
                let (rate, _) = format.ok_or_else(|| parse_err(pos, "data chunk before fmt chunk"))?;
                let end = body + size;
                if end > bytes.len() {
                    return Err(parse_err(
                        bytes.len(),
                        format!("data chunk declares {size} bytes past end of file"),
                    ));
                }
                if !size.is_multiple_of(2) {
                    return Err(parse_err(pos + 4, "odd data chunk size for 16-bit samples"));
                }
                let samples = bytes[body..end]
                    .chunks_exact(2)
                    .map(|s| i16::from_le_bytes([s[0], s[1]]))
                    .collect();
                return Ok(Wav {
                    sample_rate: rate,
                    samples,
                });
            }
            _ => {}
        }
        pos = body + size + (size & 1);
    }
    Err(parse_err(bytes.len(), "no data chunk"))
}

pub fn encode_wav(wav: &Wav) -> Vec<u8> {
    let data_len = (wav.samples.len() * 2) as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&wav.sample_rate.to_le_bytes());
    out.extend_from_slice(&(wav.sample_rate * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for s in &wav.samples {
        out.extend_from_slice(&s.to_le_bytes());
    }
    out
}

pub fn load_wav(path: &Path) -> Result<Wav> {
    decode_wav(&std::fs::read(path).map_err(Error::io(path))?)
}

pub fn save_wav(path: &Path, wav: &Wav) -> Result<()> {
    std::fs::write(path, encode_wav(wav)).map_err(Error::io(path))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn extreme_samples() {
        let wav = Wav {
            sample_rate: 16_000,
            samples: vec![-32768, 0, 16384],
        };
        assert_eq!(wav.to_signal().data, vec![-1.0, 0.0, 0.5]);
        assert_eq!(Wav::from_signal(&wav.to_signal(), 16_000).unwrap(), wav);
    }

    #[test]
    fn round_trip_is_byte_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let wav = Wav {
            sample_rate: 16_000,
            samples: (0..1001).map(|_| rng.gen()).collect(),
        };
        let bytes = encode_wav(&wav);
        let back = decode_wav(&bytes).unwrap();
        assert_eq!(back, wav);
        assert_eq!(encode_wav(&back), bytes);
    }

    #[test]
    fn skips_unknown_chunks() {
        let wav = Wav {
            sample_rate: 8000,
            samples: vec![1, -2, 3],
        };
        let plain = encode_wav(&wav);
        let mut bytes = plain[..36].to_vec();
        bytes.extend_from_slice(b"LIST\x03\0\0\0abc\0");
        bytes.extend_from_slice(&plain[36..]);
        assert_eq!(decode_wav(&bytes).unwrap(), wav);
    }

    #[test]
    fn malformed_headers_report_offsets() {
        let good = encode_wav(&Wav {
            sample_rate: 16_000,
            samples: vec![0; 4],
        });
        let mut bad = good.clone();
        bad[8] = b'X';
        assert!(matches!(decode_wav(&bad), Err(Error::Parse { offset: 8, .. })));
        let truncated = &good[..good.len() - 3];
        assert!(matches!(decode_wav(truncated), Err(Error::Parse { offset, .. }) if offset == truncated.len()));
        let mut stereo = good.clone();
        stereo[22] = 2;
        assert!(matches!(decode_wav(&stereo), Err(Error::Data(_))));
        let mut eight_bit = good;
        eight_bit[34] = 8;
        assert!(matches!(decode_wav(&eight_bit), Err(Error::Data(_))));
    }
}
