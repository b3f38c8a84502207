//! WAV reading and writing.
//!
//! Clips are held as mono f64 in `[-1, 1]`. Readers accept 8/16/24-bit
//! integer and 32-bit float PCM at any channel count (channels are averaged
//! to mono); the writer always emits 16-bit mono PCM. Parse failures,
//! unsupported encodings, and zero-length files are reported as distinct
//! error variants so callers can tell user error from data corruption.

use std::path::Path;

use crate::error::Error;
use crate::Result;

/// A mono audio clip in the time domain.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Self {
        AudioClip {
            samples,
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }

    /// Root-mean-square level of the clip.
    pub fn rms(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        let sum_sq: f64 = self.samples.iter().map(|s| s * s).sum();
        (sum_sq / self.samples.len() as f64).sqrt()
    }

    /// Largest absolute sample value.
    pub fn peak(&self) -> f64 {
        self.samples.iter().fold(0.0, |m, s| m.max(s.abs()))
    }
}

fn path_str(path: &Path) -> String {
    path.display().to_string()
}

fn map_hound_err(err: hound::Error, path: &Path) -> Error {
    match err {
        hound::Error::IoError(e) => Error::Io(e),
        hound::Error::FormatError(detail) => Error::MalformedWav {
            path: path_str(path),
            detail: detail.to_string(),
        },
        hound::Error::Unsupported => Error::UnsupportedWav {
            path: path_str(path),
            detail: "codec or bit depth not supported".into(),
        },
        other => Error::MalformedWav {
            path: path_str(path),
            detail: other.to_string(),
        },
    }
}

/// Reads a WAV file into a mono [`AudioClip`].
///
/// Multi-channel input is averaged across channels sample by sample. Integer
/// samples are scaled by `2^(bits-1)`, so a 16-bit value of 16384 decodes to
/// exactly 0.5.
pub fn read_wav(path: &Path) -> Result<AudioClip> {
    let mut reader = hound::WavReader::open(path).map_err(|e| map_hound_err(e, path))?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(Error::MalformedWav {
            path: path_str(path),
            detail: "zero channels".into(),
        });
    }

    let interleaved: Vec<f64> = match spec.sample_format {
        hound::SampleFormat::Float => {
            if spec.bits_per_sample != 32 {
                return Err(Error::UnsupportedWav {
                    path: path_str(path),
                    detail: format!("{}-bit float", spec.bits_per_sample),
                });
            }
            let samples: std::result::Result<Vec<f32>, _> = reader.samples::<f32>().collect();
            samples
                .map_err(|e| map_hound_err(e, path))?
                .into_iter()
                .map(|s| s as f64)
                .collect()
        }
        hound::SampleFormat::Int => {
            let bits = spec.bits_per_sample;
            if !(bits == 8 || bits == 16 || bits == 24 || bits == 32) {
                return Err(Error::UnsupportedWav {
                    path: path_str(path),
                    detail: format!("{bits}-bit integer"),
                });
            }
            let scale = (1i64 << (bits - 1)) as f64;
            let samples: std::result::Result<Vec<i32>, _> = reader.samples::<i32>().collect();
            samples
                .map_err(|e| map_hound_err(e, path))?
                .into_iter()
                .map(|s| s as f64 / scale)
                .collect()
        }
    };

    if interleaved.is_empty() {
        return Err(Error::EmptyWav {
            path: path_str(path),
        });
    }

    let samples = if channels == 1 {
        interleaved
    } else {
        interleaved
            .chunks(channels)
            .map(|frame| frame.iter().sum::<f64>() / channels as f64)
            .collect()
    };

    Ok(AudioClip::new(samples, spec.sample_rate))
}

/// Writes a clip as 16-bit mono PCM.
///
/// Samples are clamped to `[-1, 1]`, scaled by 32768, rounded to nearest,
/// and clamped to the i16 range (so +1.0 maps to 32767). Round-tripping
/// through [`read_wav`] changes no sample by more than 1/32768.
pub fn write_wav(path: &Path, clip: &AudioClip) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: clip.sample_rate,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(|e| map_hound_err(e, path))?;
    for &x in &clip.samples {
        let q = (x.clamp(-1.0, 1.0) * 32768.0).round();
        let q = q.clamp(-32768.0, 32767.0) as i16;
        writer.write_sample(q).map_err(|e| map_hound_err(e, path))?;
    }
    writer.finalize().map_err(|e| map_hound_err(e, path))?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write as _;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = tempfile::tempdir().unwrap();
        // Keep the dir alive by leaking it; tests are short-lived.
        let path = dir.path().join(name);
        std::mem::forget(dir);
        path
    }

    #[test]
    fn quantization_half_is_exact() {
        let path = tmp("half.wav");
        write_wav(&path, &AudioClip::new(vec![0.5, -0.5, 0.0], 44100)).unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples, vec![0.5, -0.5, 0.0]);
        assert_eq!(clip.sample_rate, 44100);
    }

    #[test]
    fn round_trip_error_bounded() {
        let path = tmp("rt.wav");
        let mut rng = crate::rng::DetRng::new(11);
        let samples: Vec<f64> = (0..2048).map(|_| rng.range(-1.0, 1.0)).collect();
        write_wav(&path, &AudioClip::new(samples.clone(), 44100)).unwrap();
        let back = read_wav(&path).unwrap();
        for (a, b) in samples.iter().zip(&back.samples) {
            assert!((a - b).abs() <= 1.0 / 32768.0, "{a} vs {b}");
        }
    }

    #[test]
    fn clipping_saturates() {
        let path = tmp("clip.wav");
        write_wav(&path, &AudioClip::new(vec![1.5, 1.0, -2.0], 44100)).unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples[0], 32767.0 / 32768.0);
        assert_eq!(clip.samples[1], 32767.0 / 32768.0);
        assert_eq!(clip.samples[2], -1.0);
    }

    #[test]
    fn stereo_averages_to_mono() {
        let path = tmp("stereo.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 22050,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        // Frame 1: (0.5, -0.5) -> 0.0; frame 2: (0.25, 0.75) -> 0.5.
        for q in [16384i16, -16384, 8192, 24576] {
            w.write_sample(q).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples, vec![0.0, 0.5]);
    }

    #[test]
    fn reads_eight_bit() {
        let path = tmp("eight.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 8000,
            bits_per_sample: 8,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for q in [64i8, -128, 0] {
            w.write_sample(q).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples, vec![0.5, -1.0, 0.0]);
    }

    #[test]
    fn reads_twenty_four_bit() {
        let path = tmp("tf.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 48000,
            bits_per_sample: 24,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(1 << 22).unwrap(); // 0.5
        w.write_sample(-(1 << 23)).unwrap(); // -1.0
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples, vec![0.5, -1.0]);
    }

    #[test]
    fn reads_float_wav() {
        let path = tmp("float.wav");
        let spec = hound::WavSpec {
            channels: 1,
            sample_rate: 44100,
            bits_per_sample: 32,
            sample_format: hound::SampleFormat::Float,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        for x in [0.5f32, -0.25, 0.125] {
            w.write_sample(x).unwrap();
        }
        w.finalize().unwrap();
        let clip = read_wav(&path).unwrap();
        assert_eq!(clip.samples, vec![0.5, -0.25, 0.125]);
    }

    #[test]
    fn malformed_header_is_distinct() {
        let path = tmp("junk.wav");
        std::fs::File::create(&path)
            .unwrap()
            .write_all(b"this is not a wav file at all")
            .unwrap();
        match read_wav(&path) {
            Err(Error::MalformedWav { .. }) => {}
            other => panic!("expected MalformedWav, got {other:?}"),
        }
    }

    #[test]
    fn unsupported_codec_is_distinct() {
        // Minimal RIFF/WAVE with fmt tag 0x0055 (MP3), which we do not read.
        let path = tmp("mp3ish.wav");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(b"RIFF");
        bytes.extend_from_slice(&36u32.to_le_bytes());
        bytes.extend_from_slice(b"WAVE");
        bytes.extend_from_slice(b"fmt ");
        bytes.extend_from_slice(&16u32.to_le_bytes());
        bytes.extend_from_slice(&0x0055u16.to_le_bytes()); // format tag
        bytes.extend_from_slice(&1u16.to_le_bytes()); // channels
        bytes.extend_from_slice(&44100u32.to_le_bytes());
        bytes.extend_from_slice(&88200u32.to_le_bytes());
        bytes.extend_from_slice(&2u16.to_le_bytes());
        bytes.extend_from_slice(&16u16.to_le_bytes());
        bytes.extend_from_slice(b"data");
        bytes.extend_from_slice(&0u32.to_le_bytes());
        std::fs::File::create(&path)
            .unwrap()
            .write_all(&bytes)
            .unwrap();
        match read_wav(&path) {
            Err(Error::UnsupportedWav { .. }) => {}
            other => panic!("expected UnsupportedWav, got {other:?}"),
        }
    }

    #[test]
    fn zero_length_is_distinct() {
        let path = tmp("empty.wav");
        write_wav(&path, &AudioClip::new(vec![], 44100)).unwrap();
        match read_wav(&path) {
            Err(Error::EmptyWav { .. }) => {}
            other => panic!("expected EmptyWav, got {other:?}"),
        }
    }
}
