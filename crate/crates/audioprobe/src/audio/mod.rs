//! PCM WAV clips and sample-accurate segmentation.
//!
//! A clip is partitioned into `n` contiguous segments with boundaries at
//! `floor(k * frame_count / n)`, so the segments tile the clip exactly and
//! their lengths differ by at most one frame. Segments are materialized as
//! ordinary WAV files under a content-addressed cache directory so model
//! requests can attach them as files, and a line-record sidecar index maps
//! `(item_id, n, k)` to the segment path.

mod wav;

use std::collections::BTreeMap;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::util::sha256_hex;

/// Only bit depth supported by the codec.
pub const BITS_PER_SAMPLE: u16 = 16;

#[derive(Debug, Error)]
pub enum WavError {
    #[error("not a RIFF/WAVE file")]
    NotWav,
    #[error("unsupported encoding: format code {0} (only PCM, code 1)")]
    UnsupportedEncoding(u16),
    #[error("unsupported bit depth: {0} (only 16)")]
    UnsupportedBitDepth(u16),
    #[error("unsupported channel count: {0} (only 1 or 2)")]
    UnsupportedChannels(u16),
    #[error("truncated or empty data chunk (declared {declared} bytes, usable {available})")]
    TruncatedDataChunk { declared: usize, available: usize },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Error)]
pub enum SegmentError {
    #[error("cannot split {frame_count} frame(s) into {n} segments")]
    DegenerateClip { frame_count: usize, n: u32 },
    #[error("segment count must be at least 2, got {0}")]
    InvalidSegmentCount(u32),
}

/// Decoded 16-bit PCM audio, interleaved when stereo.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AudioClip {
    sample_rate: u32,
    channels: u16,
    samples: Vec<i16>,
}

impl AudioClip {
    /// Build a clip, enforcing 1–2 channels, whole frames, and at least one frame.
    pub fn new(sample_rate: u32, channels: u16, samples: Vec<i16>) -> Result<Self, WavError> {
        if channels == 0 || channels > 2 {
            return Err(WavError::UnsupportedChannels(channels));
        }
        if samples.is_empty() || !samples.len().is_multiple_of(channels as usize) {
            return Err(WavError::TruncatedDataChunk {
                declared: samples.len() * 2,
                available: samples.len() / channels as usize * channels as usize * 2,
            });
        }
        Ok(Self {
            sample_rate,
            channels,
            samples,
        })
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn channels(&self) -> u16 {
        self.channels
    }

    pub fn samples(&self) -> &[i16] {
        &self.samples
    }

    pub fn frame_count(&self) -> usize {
        self.samples.len() / self.channels as usize
    }

    pub fn duration_secs(&self) -> f64 {
        self.frame_count() as f64 / self.sample_rate as f64
    }
}

/// One segment of a clip: index `k` of `n`, covering `[start_frame, end_frame)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegmentSpec {
    pub n: u32,
    pub k: u32,
    pub start_frame: usize,
    pub end_frame: usize,
}

impl SegmentSpec {
    pub fn len(&self) -> usize {
        self.end_frame - self.start_frame
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_wav(path: &Path) -> Result<AudioClip, WavError> {
    let bytes = fs::read(path).map_err(|source| WavError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    wav::decode(&bytes)
}

pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<(), WavError> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent).map_err(|source| WavError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, wav::encode(clip)).map_err(|source| WavError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Decode raw WAV bytes without touching the filesystem.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioClip, WavError> {
    wav::decode(bytes)
}

/// Encode a clip to WAV bytes.
pub fn encode_wav(clip: &AudioClip) -> Vec<u8> {
    wav::encode(clip)
}

/// Data-chunk payload of a WAV byte stream, if present.
pub fn wav_data_bytes(bytes: &[u8]) -> Option<&[u8]> {
    wav::data_chunk_bytes(bytes)
}

/// The `n` half-open frame intervals tiling `[0, frame_count)`.
///
/// Interval `k` is `[floor(k * frame_count / n), floor((k+1) * frame_count / n))`;
/// lengths differ by at most one frame.
pub fn segment_boundaries(frame_count: usize, n: u32) -> Result<Vec<SegmentSpec>, SegmentError> {
    if n < 2 {
        return Err(SegmentError::InvalidSegmentCount(n));
    }
    if frame_count < n as usize {
        return Err(SegmentError::DegenerateClip { frame_count, n });
    }
    let boundary = |k: u32| -> usize { (k as u128 * frame_count as u128 / n as u128) as usize };
    Ok((0..n)
        .map(|k| SegmentSpec {
            n,
            k,
            start_frame: boundary(k),
            end_frame: boundary(k + 1),
        })
        .collect())
}

/// Split a clip into `n` segments; concatenating them in order reproduces
/// the original frame sequence exactly.
pub fn segment_clip(
    clip: &AudioClip,
    n: u32,
) -> Result<Vec<(SegmentSpec, AudioClip)>, SegmentError> {
    let specs = segment_boundaries(clip.frame_count(), n)?;
    let ch = clip.channels() as usize;
    Ok(specs
        .into_iter()
        .map(|spec| {
            let samples = clip.samples()[spec.start_frame * ch..spec.end_frame * ch].to_vec();
            let seg = AudioClip {
                sample_rate: clip.sample_rate(),
                channels: clip.channels(),
                samples,
            };
            (spec, seg)
        })
        .collect())
}

/// Content-addressed on-disk layout for materialized segments:
/// `<root>/<sha256(source_path + "|" + n)>/<k>.wav`.
#[derive(Debug, Clone)]
pub struct SegmentCache {
    root: PathBuf,
}

/// What `materialize` did for one `(source, n)` pair.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct MaterializeStats {
    pub written: usize,
    pub reused: usize,
}

impl SegmentCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    pub fn dir_for(&self, source: &Path, n: u32) -> PathBuf {
        let key = format!("{}|{}", source.display(), n);
        self.root.join(sha256_hex(key.as_bytes()))
    }

    pub fn segment_path(&self, source: &Path, n: u32, k: u32) -> PathBuf {
        self.dir_for(source, n).join(format!("{k}.wav"))
    }

    /// Write every missing segment of `clip` for each n in `ns`. Existing
    /// files are left untouched, so repeated runs write nothing new.
    pub fn materialize(
        &self,
        source: &Path,
        clip: &AudioClip,
        ns: &[u32],
    ) -> Result<(Vec<(SegmentSpec, PathBuf)>, MaterializeStats), AudioPipelineError> {
        let mut entries = Vec::new();
        let mut stats = MaterializeStats::default();
        for &n in ns {
            let segments = segment_clip(clip, n).map_err(|source_err| {
                AudioPipelineError::Segment {
                    path: source.to_path_buf(),
                    source: source_err,
                }
            })?;
            for (spec, seg) in segments {
                let path = self.segment_path(source, n, spec.k);
                if path.exists() {
                    stats.reused += 1;
                } else {
                    write_wav(&path, &seg).map_err(|source_err| AudioPipelineError::Wav {
                        path: path.clone(),
                        source: source_err,
                    })?;
                    stats.written += 1;
                }
                entries.push((spec, path));
            }
        }
        Ok((entries, stats))
    }
}

#[derive(Debug, Error)]
pub enum AudioPipelineError {
    #[error("{path}: {source}")]
    Wav {
        path: PathBuf,
        #[source]
        source: WavError,
    },
    #[error("{path}: {source}")]
    Segment {
        path: PathBuf,
        #[source]
        source: SegmentError,
    },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One sidecar index line: where the segment for `(item_id, n, k)` lives.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct SegmentIndexEntry {
    pub item_id: String,
    pub n: u32,
    pub k: u32,
    pub path: PathBuf,
    pub source: PathBuf,
    pub start_frame: usize,
    pub end_frame: usize,
}

/// Sidecar index mapping `(item_id, n, k)` to a materialized segment file.
#[derive(Debug, Clone, Default)]
pub struct SegmentIndex {
    entries: BTreeMap<(String, u32, u32), SegmentIndexEntry>,
}

impl SegmentIndex {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, entry: SegmentIndexEntry) {
        self.entries
            .insert((entry.item_id.clone(), entry.n, entry.k), entry);
    }

    pub fn lookup(&self, item_id: &str, n: u32, k: u32) -> Option<&SegmentIndexEntry> {
        self.entries.get(&(item_id.to_string(), n, k))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> impl Iterator<Item = &SegmentIndexEntry> {
        self.entries.values()
    }

    pub fn load(path: &Path) -> Result<Self, AudioPipelineError> {
        let text = fs::read_to_string(path).map_err(|source| AudioPipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let mut index = Self::new();
        for line in text.lines() {
            if line.trim().is_empty() {
                continue;
            }
            let entry: SegmentIndexEntry =
                serde_json::from_str(line).map_err(|err| AudioPipelineError::Io {
                    path: path.to_path_buf(),
                    source: std::io::Error::new(std::io::ErrorKind::InvalidData, err),
                })?;
            index.insert(entry);
        }
        Ok(index)
    }

    pub fn save(&self, path: &Path) -> Result<(), AudioPipelineError> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(|source| AudioPipelineError::Io {
                path: parent.to_path_buf(),
                source,
            })?;
        }
        let mut file = fs::File::create(path).map_err(|source| AudioPipelineError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        for entry in self.entries.values() {
            let line = serde_json::to_string(entry).expect("segment index entries serialize");
            writeln!(file, "{line}").map_err(|source| AudioPipelineError::Io {
                path: path.to_path_buf(),
                source,
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn mono_clip(frames: usize) -> AudioClip {
        let samples: Vec<i16> = (0..frames).map(|i| (i as i32 % 30000 - 15000) as i16).collect();
        AudioClip::new(16_000, 1, samples).unwrap()
    }

    #[test]
    fn one_second_mono_16khz_has_16000_frames() {
        let clip = mono_clip(16_000);
        let bytes = encode_wav(&clip);
        let decoded = decode_wav(&bytes).unwrap();
        assert_eq!(decoded.frame_count(), 16_000);
        assert_eq!(decoded.duration_secs(), 1.0);
    }

    #[test]
    fn float_format_code_is_rejected() {
        let clip = mono_clip(16);
        let mut bytes = encode_wav(&clip);
        // Patch the format code in the fmt chunk (offset 20) to 3 = IEEE float.
        bytes[20] = 3;
        match decode_wav(&bytes) {
            Err(WavError::UnsupportedEncoding(3)) => {}
            other => panic!("expected UnsupportedEncoding(3), got {other:?}"),
        }
    }

    #[test]
    fn non_wav_bytes_are_rejected() {
        assert!(matches!(decode_wav(b"OggS junk"), Err(WavError::NotWav)));
        assert!(matches!(decode_wav(b""), Err(WavError::NotWav)));
    }

    #[test]
    fn truncated_data_chunk_is_rejected() {
        let clip = mono_clip(16);
        let mut bytes = encode_wav(&clip);
        bytes.truncate(bytes.len() - 6);
        assert!(matches!(
            decode_wav(&bytes),
            Err(WavError::TruncatedDataChunk { .. })
        ));
    }

    #[test]
    fn roundtrip_preserves_data_chunk_bytes_with_extra_chunks() {
        // Hand-build a file with a LIST chunk before the data chunk.
        let clip = mono_clip(37);
        let canonical = encode_wav(&clip);
        let fmt = &canonical[12..36];
        let data = &canonical[36..];
        let mut exotic = Vec::new();
        exotic.extend_from_slice(b"RIFF");
        let payload_len = fmt.len() + 12 + data.len();
        exotic.extend_from_slice(&((4 + payload_len) as u32).to_le_bytes());
        exotic.extend_from_slice(b"WAVE");
        exotic.extend_from_slice(fmt);
        exotic.extend_from_slice(b"LIST");
        exotic.extend_from_slice(&4u32.to_le_bytes());
        exotic.extend_from_slice(b"INFO");
        exotic.extend_from_slice(data);

        let decoded = decode_wav(&exotic).unwrap();
        let reencoded = encode_wav(&decoded);
        assert_eq!(
            wav_data_bytes(&exotic).unwrap(),
            wav_data_bytes(&reencoded).unwrap()
        );
    }

    #[test]
    fn boundaries_even_split() {
        let specs = segment_boundaries(10, 2).unwrap();
        let spans: Vec<(usize, usize)> =
            specs.iter().map(|s| (s.start_frame, s.end_frame)).collect();
        assert_eq!(spans, vec![(0, 5), (5, 10)]);
    }

    #[test]
    fn boundaries_with_remainder() {
        let specs = segment_boundaries(10, 3).unwrap();
        let spans: Vec<(usize, usize)> =
            specs.iter().map(|s| (s.start_frame, s.end_frame)).collect();
        assert_eq!(spans, vec![(0, 3), (3, 6), (6, 10)]);
    }

    #[test]
    fn boundaries_16000_by_5_are_uniform() {
        // floor(k * 16000 / 5) = 3200 k for every k, so all lengths are 3200.
        let specs = segment_boundaries(16_000, 5).unwrap();
        assert_eq!(specs.len(), 5);
        for spec in specs {
            assert_eq!(spec.len(), 3200);
        }
    }

    #[test]
    fn seven_frames_by_four_gives_lengths_1_2_2_2() {
        // floor(k*7/4) for k = 0..=4 is 0,1,3,5,7.
        let specs = segment_boundaries(7, 4).unwrap();
        let lens: Vec<usize> = specs.iter().map(|s| s.len()).collect();
        assert_eq!(lens, vec![1, 2, 2, 2]);
    }

    #[test]
    fn degenerate_clip_is_rejected() {
        assert!(matches!(
            segment_boundaries(3, 4),
            Err(SegmentError::DegenerateClip { frame_count: 3, n: 4 })
        ));
        assert!(matches!(
            segment_boundaries(10, 1),
            Err(SegmentError::InvalidSegmentCount(1))
        ));
    }

    #[test]
    fn segments_concatenate_back_to_source() {
        let clip = mono_clip(101);
        for n in 2..=5 {
            let segments = segment_clip(&clip, n).unwrap();
            let mut rebuilt = Vec::new();
            for (_, seg) in &segments {
                rebuilt.extend_from_slice(seg.samples());
            }
            assert_eq!(rebuilt, clip.samples(), "n = {n}");
        }
    }

    #[test]
    fn thirty_second_clip_in_three_gives_three_ten_second_segments() {
        let clip = mono_clip(30 * 16_000);
        let segments = segment_clip(&clip, 3).unwrap();
        assert_eq!(segments.len(), 3);
        for (_, seg) in segments {
            assert_eq!(seg.duration_secs(), 10.0);
        }
    }

    #[test]
    fn materialize_is_idempotent() {
        let dir = tempfile::tempdir().unwrap();
        let cache = SegmentCache::new(dir.path());
        let source = dir.path().join("clip.wav");
        let clip = mono_clip(64);
        write_wav(&source, &clip).unwrap();

        let (entries, stats) = cache.materialize(&source, &clip, &[2, 3]).unwrap();
        assert_eq!(entries.len(), 5);
        assert_eq!(stats.written, 5);
        assert_eq!(stats.reused, 0);

        let (_, stats2) = cache.materialize(&source, &clip, &[2, 3]).unwrap();
        assert_eq!(stats2.written, 0);
        assert_eq!(stats2.reused, 5);
    }

    #[test]
    fn segment_index_roundtrips() {
        let dir = tempfile::tempdir().unwrap();
        let mut index = SegmentIndex::new();
        index.insert(SegmentIndexEntry {
            item_id: "q1".into(),
            n: 2,
            k: 1,
            path: "seg/1.wav".into(),
            source: "audio/q1.wav".into(),
            start_frame: 5,
            end_frame: 10,
        });
        let path = dir.path().join("segments.jsonl");
        index.save(&path).unwrap();
        let loaded = SegmentIndex::load(&path).unwrap();
        assert_eq!(loaded.len(), 1);
        assert_eq!(
            loaded.lookup("q1", 2, 1).unwrap().path,
            PathBuf::from("seg/1.wav")
        );
        assert!(loaded.lookup("q1", 2, 0).is_none());
    }

    proptest! {
        #[test]
        fn decoder_never_panics_on_arbitrary_bytes(bytes in proptest::collection::vec(any::<u8>(), 0..256)) {
            let _ = decode_wav(&bytes);
            // A prefix of a valid file must not panic either.
            let clip = mono_clip(64);
            let mut truncated = encode_wav(&clip);
            truncated.truncate(bytes.len().min(truncated.len()));
            let _ = decode_wav(&truncated);
        }

        #[test]
        fn boundaries_tile_without_gaps(frame_count in 8usize..100_000, n in 2u32..9) {
            prop_assume!(frame_count >= n as usize);
            let specs = segment_boundaries(frame_count, n).unwrap();
            prop_assert_eq!(specs.len(), n as usize);
            prop_assert_eq!(specs[0].start_frame, 0);
            prop_assert_eq!(specs[n as usize - 1].end_frame, frame_count);
            let lo = frame_count / n as usize;
            let hi = frame_count.div_ceil(n as usize);
            for window in specs.windows(2) {
                prop_assert_eq!(window[0].end_frame, window[1].start_frame);
            }
            for spec in &specs {
                prop_assert!(spec.len() == lo || spec.len() == hi);
            }
        }

        #[test]
        fn stereo_segments_reconstruct_exactly(frames in 4usize..4000, n in 2u32..6) {
            prop_assume!(frames >= n as usize);
            let samples: Vec<i16> = (0..frames * 2).map(|i| (i as i32 % 4001 - 2000) as i16).collect();
            let clip = AudioClip::new(8_000, 2, samples).unwrap();
            let mut rebuilt = Vec::new();
            for (_, seg) in segment_clip(&clip, n).unwrap() {
                prop_assert_eq!(seg.channels(), 2);
                rebuilt.extend_from_slice(seg.samples());
            }
            prop_assert_eq!(rebuilt.as_slice(), clip.samples());
        }
    }
}
