//! Minimal RIFF/WAVE codec for 16-bit PCM, mono or stereo.
//!
//! The decoder accepts any chunk layout (extra chunks are skipped) and the
//! encoder emits a canonical 44-byte header followed by the data chunk, so
//! `encode(decode(f))` preserves the data-chunk bytes of `f` exactly.

use super::{AudioClip, WavError};

const PCM_FORMAT_CODE: u16 = 1;

pub(crate) fn decode(bytes: &[u8]) -> Result<AudioClip, WavError> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(WavError::NotWav);
    }

    let mut fmt: Option<FmtChunk> = None;
    let mut data: Option<&[u8]> = None;
    let mut offset = 12usize;

    while offset + 8 <= bytes.len() {
        let id = &bytes[offset..offset + 4];
        let size = u32::from_le_bytes(bytes[offset + 4..offset + 8].try_into().unwrap()) as usize;
        let body_start = offset + 8;
        if body_start + size > bytes.len() {
            if id == b"data" {
                return Err(WavError::TruncatedDataChunk {
                    declared: size,
                    available: bytes.len() - body_start,
                });
            }
            return Err(WavError::NotWav);
        }
        let body = &bytes[body_start..body_start + size];
        match id {
            b"fmt " => fmt = Some(parse_fmt(body)?),
            b"data" => data = Some(body),
            _ => {}
        }
        // Chunks are word-aligned: odd sizes carry one pad byte.
        offset = body_start + size + (size % 2);
    }

    let fmt = fmt.ok_or(WavError::NotWav)?;
    let data = data.ok_or(WavError::TruncatedDataChunk {
        declared: 0,
        available: 0,
    })?;

    if fmt.format_code != PCM_FORMAT_CODE {
        return Err(WavError::UnsupportedEncoding(fmt.format_code));
    }
    if fmt.bits_per_sample != 16 {
        return Err(WavError::UnsupportedBitDepth(fmt.bits_per_sample));
    }
    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(WavError::UnsupportedChannels(fmt.channels));
    }

    let bytes_per_frame = 2 * fmt.channels as usize;
    if data.is_empty() || data.len() % bytes_per_frame != 0 {
        return Err(WavError::TruncatedDataChunk {
            declared: data.len(),
            available: data.len() / bytes_per_frame * bytes_per_frame,
        });
    }

    let samples = data
        .chunks_exact(2)
        .map(|pair| i16::from_le_bytes([pair[0], pair[1]]))
        .collect();

    AudioClip::new(fmt.sample_rate, fmt.channels, samples)
}

struct FmtChunk {
    format_code: u16,
    channels: u16,
    sample_rate: u32,
    bits_per_sample: u16,
}

fn parse_fmt(body: &[u8]) -> Result<FmtChunk, WavError> {
    if body.len() < 16 {
        return Err(WavError::NotWav);
    }
    Ok(FmtChunk {
        format_code: u16::from_le_bytes([body[0], body[1]]),
        channels: u16::from_le_bytes([body[2], body[3]]),
        sample_rate: u32::from_le_bytes([body[4], body[5], body[6], body[7]]),
        bits_per_sample: u16::from_le_bytes([body[14], body[15]]),
    })
}

pub(crate) fn encode(clip: &AudioClip) -> Vec<u8> {
    let data_len = clip.samples().len() * 2;
    let byte_rate = clip.sample_rate() * clip.channels() as u32 * 2;
    let block_align = clip.channels() * 2;

    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&PCM_FORMAT_CODE.to_le_bytes());
    out.extend_from_slice(&clip.channels().to_le_bytes());
    out.extend_from_slice(&clip.sample_rate().to_le_bytes());
    out.extend_from_slice(&byte_rate.to_le_bytes());
    out.extend_from_slice(&block_align.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for sample in clip.samples() {
        out.extend_from_slice(&sample.to_le_bytes());
    }
    out
}

/// Byte range of the data chunk payload, for byte-exact roundtrip checks.
pub(crate) fn data_chunk_bytes(bytes: &[u8]) -> Option<&[u8]> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return None;
    }
    let mut offset = 12usize;
    while offset + 8 <= bytes.len() {
        let id = &bytes[offset..offset + 4];
        let size = u32::from_le_bytes(bytes[offset + 4..offset + 8].try_into().ok()?) as usize;
        let body_start = offset + 8;
        if body_start + size > bytes.len() {
            return None;
        }
        if id == b"data" {
            return Some(&bytes[body_start..body_start + size]);
        }
        offset = body_start + size + (size % 2);
    }
    None
}
