//! 16-bit PCM RIFF/WAVE reading and writing.

use std::path::Path;

use crate::dsp::Waveform;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

fn u16_at(b: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([b[i], b[i + 1]])
}

fn u32_at(b: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]])
}

/// Decodes a WAV byte stream. Multi-channel audio is averaged to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Wav("missing RIFF/WAVE header".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(u16, u32, u16)> = None;
    let mut data: Option<&[u8]> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body_start = pos + 8;
        let body_end = body_start
            .checked_add(size)
            .filter(|&e| e <= bytes.len())
            .ok_or_else(|| Error::Wav(format!("chunk {:?} runs past end of file", String::from_utf8_lossy(id))))?;
        let body = &bytes[body_start..body_end];
        match id {
            b"fmt " => {
                if body.len() < 16 {
                    return Err(Error::Wav("fmt chunk shorter than 16 bytes".into()));
                }
                let mut tag = u16_at(body, 0);
                let channels = u16_at(body, 2);
                let rate = u32_at(body, 4);
                let bits = u16_at(body, 14);
                if tag == FORMAT_EXTENSIBLE {
                    if body.len() < 26 {
                        return Err(Error::Wav("truncated extensible fmt chunk".into()));
                    }
                    tag = u16_at(body, 24);
                }
                if tag != FORMAT_PCM {
                    return Err(Error::Wav(format!("unsupported codec tag {tag:#06x}; only PCM is accepted")));
                }
                if bits != 16 {
                    return Err(Error::Wav(format!("unsupported bit depth {bits}; only 16-bit PCM is accepted")));
                }
                if channels == 0 || rate == 0 {
                    return Err(Error::Wav("zero channels or sample rate".into()));
                }
                fmt = Some((channels, rate, bits));
            }
            b"data" => data = Some(body),
            _ => {}
        }
        pos = body_end + (size & 1);
    }
    let (channels, rate, _) = fmt.ok_or_else(|| Error::Wav("missing fmt chunk".into()))?;
    let data = data.ok_or_else(|| Error::Wav("missing data chunk".into()))?;
    let frame = 2 * channels as usize;
    let frames = data.len() / frame;
    let samples = (0..frames)
        .map(|f| {
            let s: f64 = (0..channels as usize)
                .map(|c| i16::from_le_bytes([data[f * frame + 2 * c], data[f * frame + 2 * c + 1]]) as f64 / 32768.0)
                .sum();
            (s / channels as f64) as f32
        })
        .collect();
    Waveform::new(samples, rate)
}

/// Quantizes one sample: scale by 32768, round half away from zero, clip.
pub fn to_pcm16(x: f32) -> i16 {
    (x as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16
}

/// Encodes mono 16-bit PCM.
pub fn encode_wav(w: &Waveform) -> Vec<u8> {
    let n = w.len();
    let data_len = 2 * n as u32;
    let mut out = Vec::with_capacity(44 + 2 * n);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVEfmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&FORMAT_PCM.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(2 * w.sample_rate()).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &s in w.samples() {
        out.extend_from_slice(&to_pcm16(s).to_le_bytes());
    }
    out
}

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes).map_err(|e| match e {
        Error::Wav(m) => Error::Wav(format!("{}: {m}", path.display())),
        other => other,
    })
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode_wav(w)).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stereo(frames: &[(i16, i16)]) -> Vec<u8> {
        let mut b = Vec::new();
        let data: Vec<u8> = frames.iter().flat_map(|&(l, r)| [l.to_le_bytes(), r.to_le_bytes()].concat()).collect();
        b.extend_from_slice(b"RIFF");
        b.extend_from_slice(&(36 + 6 + data.len() as u32).to_le_bytes());
        b.extend_from_slice(b"WAVE");
        // an odd-sized unknown chunk exercises padding
        b.extend_from_slice(b"junk");
        b.extend_from_slice(&1u32.to_le_bytes());
        b.extend_from_slice(&[0, 0]);
        b.extend_from_slice(b"fmt ");
        b.extend_from_slice(&16u32.to_le_bytes());
        b.extend_from_slice(&1u16.to_le_bytes());
        b.extend_from_slice(&2u16.to_le_bytes());
        b.extend_from_slice(&8000u32.to_le_bytes());
        b.extend_from_slice(&32000u32.to_le_bytes());
        b.extend_from_slice(&4u16.to_le_bytes());
        b.extend_from_slice(&16u16.to_le_bytes());
        b.extend_from_slice(b"data");
        b.extend_from_slice(&(data.len() as u32).to_le_bytes());
        b.extend_from_slice(&data);
        b
    }

    #[test]
    fn stereo_is_averaged_and_endpoints_scale() {
        let w = decode_wav(&stereo(&[(16384, -16384), (-32768, -32768), (32767, 32767)])).unwrap();
        assert_eq!(w.sample_rate(), 8000);
        assert_eq!(w.samples()[0], 0.0);
        assert_eq!(w.samples()[1], -1.0);
        assert_eq!(w.samples()[2], 32767.0 / 32768.0);
    }

    #[test]
    fn round_trip_within_one_lsb() {
        let s: Vec<f32> = (0..1000).map(|i| ((i as f32) * 0.37).sin() * 1.2).collect();
        let w = Waveform::new(s.clone(), 22050).unwrap();
        let back = decode_wav(&encode_wav(&w)).unwrap();
        for (a, b) in s.iter().zip(back.samples()) {
            let a = a.clamp(-1.0, 32767.0 / 32768.0);
            assert!((a - b).abs() <= 1.0 / 32768.0);
        }
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(to_pcm16(0.5 / 32768.0), 1);
        assert_eq!(to_pcm16(-0.5 / 32768.0), -1);
        assert_eq!(to_pcm16(2.0), 32767);
        assert_eq!(to_pcm16(-2.0), -32768);
    }

    #[test]
    fn rejects_non_pcm_and_garbage() {
        let mut b = stereo(&[(0, 0)]);
        b[20 + 10] = 3; // float tag
        assert!(matches!(decode_wav(&b), Err(Error::Wav(m)) if m.contains("codec")));
        assert!(matches!(decode_wav(b"RIFF0000WAVX"), Err(Error::Wav(_))));
        let mut t = stereo(&[(0, 0)]);
        t.truncate(t.len() - 2);
        assert!(decode_wav(&t).is_err());
    }
}
