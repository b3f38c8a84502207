//! Log-mel feature extraction.
//!
//! A clip becomes a time × mel × 3 tensor: scaled log-mel energies plus
//! first- and second-order deltas. The frame count law is
//! `1 + floor(len/hop)` (center-aligned STFT with reflect padding), and each
//! delta pass trims two frames per side, so a 10 s clip at 44100 Hz with the
//! default 2048/1024 analysis yields 431 frames and a 423 × 128 × 3 tensor.

use ndarray::{s, Array2, Array3};
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::error::Error;
use crate::Result;

pub const DEFAULT_FFT: usize = 2048;
pub const DEFAULT_WIN: usize = 2048;
pub const DEFAULT_HOP: usize = 1024;
pub const DEFAULT_MELS: usize = 128;
/// Power floor applied before the base-10 log.
pub const LOG_FLOOR: f64 = 1e-10;

#[derive(Debug, Clone)]
pub struct Spectrogram {
    /// frames × bins, bins = fft_size/2 + 1.
    pub magnitudes: Array2<f64>,
    pub frame_hop: usize,
    pub fft_size: usize,
}

impl Spectrogram {
    pub fn frames(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn bins(&self) -> usize {
        self.magnitudes.ncols()
    }
}

#[derive(Debug, Clone)]
pub struct MelFilterbank {
    /// mel × bins, non-negative, each row contiguous.
    pub weights: Array2<f64>,
    /// Center frequency of each filter in Hz.
    pub centers_hz: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureTensor {
    /// time × mel × channel; channel 0 = static, 1 = delta, 2 = delta-delta.
    pub values: Array3<f64>,
}

impl FeatureTensor {
    pub fn time(&self) -> usize {
        self.values.shape()[0]
    }

    pub fn mels(&self) -> usize {
        self.values.shape()[1]
    }

    pub fn channels(&self) -> usize {
        self.values.shape()[2]
    }
}

/// Reflect index (no edge repetition): maps any integer onto `0..n` by
/// bouncing off both ends with period `2n - 2`.
fn reflect_index(i: isize, n: usize) -> usize {
    debug_assert!(n > 0);
    if n == 1 {
        return 0;
    }
    let period = (2 * n - 2) as isize;
    let mut m = i.rem_euclid(period);
    if m >= n as isize {
        m = period - m;
    }
    m as usize
}

/// Periodic Hann window of length `n`.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos())
        .collect()
}

/// Complex short-time Fourier transform.
///
/// The signal is reflect-padded by `window/2` on both sides, cut into
/// `1 + floor(len/hop)` frames of `window` samples, Hann-windowed,
/// zero-padded centered to `fft_size`, and transformed. Each output frame
/// holds the `fft_size/2 + 1` non-negative-frequency bins.
pub fn stft_complex(
    clip: &AudioClip,
    fft_size: usize,
    window: usize,
    hop: usize,
) -> Result<Vec<Vec<Complex<f64>>>> {
    if clip.samples.is_empty() {
        return Err(Error::TooShort {
            context: "stft".into(),
            len: 0,
            need: 1,
        });
    }
    if window > fft_size || hop == 0 || window == 0 {
        return Err(Error::config(format!(
            "stft requires 0 < window <= fft_size and hop > 0 (window {window}, fft {fft_size}, hop {hop})"
        )));
    }

    let n = clip.samples.len();
    let pad = window / 2;
    let padded_len = n + 2 * pad;
    let mut padded = Vec::with_capacity(padded_len);
    for i in 0..padded_len {
        let src = reflect_index(i as isize - pad as isize, n);
        padded.push(clip.samples[src]);
    }

    let frames = 1 + n / hop;
    let bins = fft_size / 2 + 1;
    let win = hann(window);
    let offset = (fft_size - window) / 2;

    let fft = FftPlanner::new().plan_fft_forward(fft_size);
    let mut out = Vec::with_capacity(frames);
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for t in 0..frames {
        let start = t * hop;
        buf.iter_mut().for_each(|c| *c = Complex::new(0.0, 0.0));
        for i in 0..window {
            buf[offset + i] = Complex::new(padded[start + i] * win[i], 0.0);
        }
        fft.process(&mut buf);
        out.push(buf[..bins].to_vec());
    }
    Ok(out)
}

/// Short-time Fourier transform magnitude (see [`stft_complex`] for the
/// framing convention).
pub fn stft(clip: &AudioClip, fft_size: usize, window: usize, hop: usize) -> Result<Spectrogram> {
    let frames = stft_complex(clip, fft_size, window, hop)?;
    let bins = fft_size / 2 + 1;
    let mut magnitudes = Array2::zeros((frames.len(), bins));
    for (t, frame) in frames.iter().enumerate() {
        for (b, value) in frame.iter().enumerate() {
            magnitudes[[t, b]] = value.norm();
        }
    }
    Ok(Spectrogram {
        magnitudes,
        frame_hop: hop,
        fft_size,
    })
}

/// Weighted overlap-add resynthesis from half-spectrum frames.
///
/// Each frame is mirrored to a conjugate-symmetric full spectrum, inverse
/// transformed, windowed again with the same Hann used for analysis, and
/// overlap-added at `hop`; the accumulated squared window is divided out
/// sample by sample. Returns `(frames - 1) * hop + window` samples in the
/// padded domain of [`stft_complex`] — callers crop `window/2 ..
/// window/2 + signal_len` to undo the analysis padding.
pub fn istft(
    frames: &[Vec<Complex<f64>>],
    fft_size: usize,
    window: usize,
    hop: usize,
) -> Result<Vec<f64>> {
    if frames.is_empty() {
        return Err(Error::TooShort {
            context: "istft".into(),
            len: 0,
            need: 1,
        });
    }
    if window > fft_size || hop == 0 || window == 0 {
        return Err(Error::config(format!(
            "istft requires 0 < window <= fft_size and hop > 0 (window {window}, fft {fft_size}, hop {hop})"
        )));
    }
    let bins = fft_size / 2 + 1;
    for (t, frame) in frames.iter().enumerate() {
        if frame.len() != bins {
            return Err(Error::ShapeMismatch {
                context: format!("istft frame {t}"),
                expected: vec![bins],
                got: vec![frame.len()],
            });
        }
    }

    let out_len = (frames.len() - 1) * hop + window;
    let win = hann(window);
    let offset = (fft_size - window) / 2;
    let ifft = FftPlanner::new().plan_fft_inverse(fft_size);
    let mut out = vec![0.0; out_len];
    let mut weight = vec![0.0; out_len];
    let mut buf = vec![Complex::new(0.0, 0.0); fft_size];
    for (t, frame) in frames.iter().enumerate() {
        buf[..bins].copy_from_slice(frame);
        for k in 1..fft_size - bins + 1 {
            buf[fft_size - k] = frame[k].conj();
        }
        ifft.process(&mut buf);
        let start = t * hop;
        let scale = 1.0 / fft_size as f64;
        for i in 0..window {
            let sample = buf[offset + i].re * scale;
            out[start + i] += sample * win[i];
            weight[start + i] += win[i] * win[i];
        }
    }
    for (s, &w) in out.iter_mut().zip(&weight) {
        if w > 1e-12 {
            *s /= w;
        } else {
            *s = 0.0;
        }
    }
    Ok(out)
}

/// Auditory mel scale: linear below 1 kHz, logarithmic above
/// (1000 Hz maps to 15.0).
pub fn hz_to_mel(hz: f64) -> f64 {
    const LIN_STEP: f64 = 200.0 / 3.0;
    if hz < 1000.0 {
        hz / LIN_STEP
    } else {
        15.0 + (hz / 1000.0).ln() / 6.4f64.ln() * 27.0
    }
}

pub fn mel_to_hz(mel: f64) -> f64 {
    const LIN_STEP: f64 = 200.0 / 3.0;
    if mel < 15.0 {
        mel * LIN_STEP
    } else {
        1000.0 * ((mel - 15.0) / 27.0 * 6.4f64.ln()).exp()
    }
}

/// Triangular mel filterbank from 0 Hz to `sample_rate/2`, area-normalized
/// (each triangle scaled by `2 / bandwidth-in-Hz`).
pub fn mel_filterbank(n_mels: usize, fft_size: usize, sample_rate: u32) -> Result<MelFilterbank> {
    if n_mels < 1 || fft_size % 2 != 0 || fft_size == 0 {
        return Err(Error::config(format!(
            "mel_filterbank requires n_mels >= 1 and even fft_size (n_mels {n_mels}, fft {fft_size})"
        )));
    }
    let bins = fft_size / 2 + 1;
    let fmax = sample_rate as f64 / 2.0;
    let mel_max = hz_to_mel(fmax);
    let edges_hz: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mel_max * i as f64 / (n_mels + 1) as f64))
        .collect();

    let bin_hz: Vec<f64> = (0..bins)
        .map(|k| k as f64 * sample_rate as f64 / fft_size as f64)
        .collect();

    let mut weights = Array2::zeros((n_mels, bins));
    for m in 0..n_mels {
        let (lower, center, upper) = (edges_hz[m], edges_hz[m + 1], edges_hz[m + 2]);
        let norm = 2.0 / (upper - lower);
        let mut any = false;
        for k in 0..bins {
            let f = bin_hz[k];
            let rising = (f - lower) / (center - lower);
            let falling = (upper - f) / (upper - center);
            let w = rising.min(falling).max(0.0);
            if w > 0.0 {
                weights[[m, k]] = w * norm;
                any = true;
            }
        }
        if !any {
            return Err(Error::config(format!(
                "mel filter {m} is empty: {n_mels} filters exceed the resolution of a {fft_size}-point transform at {sample_rate} Hz"
            )));
        }
    }

    Ok(MelFilterbank {
        weights,
        centers_hz: edges_hz[1..=n_mels].to_vec(),
    })
}

/// Projects a magnitude spectrogram through the filterbank as power
/// (magnitude squared), then takes `log10(max(power, 1e-10))`.
pub fn log_mel(spec: &Spectrogram, fb: &MelFilterbank) -> Result<Array2<f64>> {
    let bins = spec.bins();
    if fb.weights.ncols() != bins {
        return Err(Error::ShapeMismatch {
            context: "log_mel filterbank".into(),
            expected: vec![fb.weights.nrows(), bins],
            got: vec![fb.weights.nrows(), fb.weights.ncols()],
        });
    }
    let frames = spec.frames();
    let n_mels = fb.weights.nrows();
    let mut out = Array2::zeros((frames, n_mels));
    for t in 0..frames {
        for m in 0..n_mels {
            let mut acc = 0.0;
            for k in 0..bins {
                let w = fb.weights[[m, k]];
                if w > 0.0 {
                    let mag = spec.magnitudes[[t, k]];
                    acc += w * mag * mag;
                }
            }
            out[[t, m]] = acc.max(LOG_FLOOR).log10();
        }
    }
    Ok(out)
}

/// Five-point regression delta: `d[t] = (x[t+1] - x[t-1])/10 +
/// (x[t+2] - x[t-2])/5`, keeping only fully valid frames (trims two per
/// side). `order` 2 applies the pass twice.
pub fn delta(matrix: &Array2<f64>, order: usize) -> Result<Array2<f64>> {
    assert!(order == 1 || order == 2, "delta order must be 1 or 2");
    let one_pass = |x: &Array2<f64>| -> Result<Array2<f64>> {
        let time = x.nrows();
        if time < 5 {
            return Err(Error::TooShort {
                context: "delta".into(),
                len: time,
                need: 5,
            });
        }
        let cols = x.ncols();
        let mut d = Array2::zeros((time - 4, cols));
        for t in 2..time - 2 {
            for c in 0..cols {
                d[[t - 2, c]] = (x[[t + 1, c]] - x[[t - 1, c]]) / 10.0
                    + (x[[t + 2, c]] - x[[t - 2, c]]) / 5.0;
            }
        }
        Ok(d)
    };
    let first = one_pass(matrix)?;
    if order == 1 {
        Ok(first)
    } else {
        one_pass(&first)
    }
}

/// Full pipeline: STFT → log-mel → deltas → stack → min-max scale.
///
/// All three channels are cut to the delta-delta time span: the static
/// channel drops four frames per side and the delta channel two per side.
pub fn feature_tensor(clip: &AudioClip) -> Result<FeatureTensor> {
    feature_tensor_with(clip, DEFAULT_FFT, DEFAULT_WIN, DEFAULT_HOP, DEFAULT_MELS)
}

pub fn feature_tensor_with(
    clip: &AudioClip,
    fft_size: usize,
    window: usize,
    hop: usize,
    n_mels: usize,
) -> Result<FeatureTensor> {
    let spec = stft(clip, fft_size, window, hop)?;
    let fb = mel_filterbank(n_mels, fft_size, clip.sample_rate)?;
    let lm = log_mel(&spec, &fb)?;
    let time = lm.nrows();
    if time < 9 {
        return Err(Error::TooShort {
            context: "feature_tensor".into(),
            len: time,
            need: 9,
        });
    }
    let d1 = delta(&lm, 1)?;
    let d2 = delta(&d1, 1)?;
    let out_time = time - 8;

    let mut values = Array3::zeros((out_time, n_mels, 3));
    values
        .slice_mut(s![.., .., 0])
        .assign(&lm.slice(s![4..time - 4, ..]));
    values
        .slice_mut(s![.., .., 1])
        .assign(&d1.slice(s![2..time - 6, ..]));
    values.slice_mut(s![.., .., 2]).assign(&d2);

    Ok(minmax_scale(&FeatureTensor { values }))
}

/// Scales each channel to `[0, 1]` over the whole utterance. A constant
/// channel maps to all zeros, which makes the operation idempotent.
pub fn minmax_scale(tensor: &FeatureTensor) -> FeatureTensor {
    let mut values = tensor.values.clone();
    let channels = tensor.channels();
    for c in 0..channels {
        let ch = values.slice(s![.., .., c]);
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for &v in ch.iter() {
            lo = lo.min(v);
            hi = hi.max(v);
        }
        let mut ch = values.slice_mut(s![.., .., c]);
        if hi > lo {
            let inv = 1.0 / (hi - lo);
            ch.mapv_inplace(|v| (v - lo) * inv);
        } else {
            ch.fill(0.0);
        }
    }
    FeatureTensor { values }
}

/// Cache filename beside a clip: the clip path with `.feat` appended.
pub fn cache_path(clip_path: &std::path::Path) -> std::path::PathBuf {
    let mut os = clip_path.as_os_str().to_os_string();
    os.push(".feat");
    std::path::PathBuf::from(os)
}

/// Writes a tensor as `(time, mel, channels)` little-endian u32 header
/// followed by row-major little-endian f32 values.
pub fn write_feature_cache(path: &std::path::Path, tensor: &FeatureTensor) -> Result<()> {
    let mut bytes =
        Vec::with_capacity(12 + tensor.values.len() * 4);
    for dim in tensor.values.shape() {
        bytes.extend_from_slice(&(*dim as u32).to_le_bytes());
    }
    for &v in tensor.values.iter() {
        bytes.extend_from_slice(&(v as f32).to_le_bytes());
    }
    std::fs::write(path, bytes)?;
    Ok(())
}

pub fn read_feature_cache(path: &std::path::Path) -> Result<FeatureTensor> {
    let bytes = std::fs::read(path)?;
    let fail = |detail: &str| Error::FeatureCache {
        path: path.display().to_string(),
        detail: detail.into(),
    };
    if bytes.len() < 12 {
        return Err(fail("file shorter than header"));
    }
    let dim = |i: usize| u32::from_le_bytes(bytes[4 * i..4 * i + 4].try_into().unwrap()) as usize;
    let (time, mel, channels) = (dim(0), dim(1), dim(2));
    let count = time
        .checked_mul(mel)
        .and_then(|x| x.checked_mul(channels))
        .ok_or_else(|| fail("header dimensions overflow"))?;
    if bytes.len() != 12 + count * 4 {
        return Err(fail(&format!(
            "expected {} bytes for {}x{}x{}, found {}",
            12 + count * 4,
            time,
            mel,
            channels,
            bytes.len()
        )));
    }
    let mut values = Vec::with_capacity(count);
    for i in 0..count {
        let off = 12 + i * 4;
        values.push(f32::from_le_bytes(bytes[off..off + 4].try_into().unwrap()) as f64);
    }
    let values = Array3::from_shape_vec((time, mel, channels), values)
        .map_err(|e| fail(&e.to_string()))?;
    Ok(FeatureTensor { values })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::DetRng;

    fn noise_clip(len: usize, sr: u32, seed: u64) -> AudioClip {
        let mut rng = DetRng::new(seed);
        AudioClip::new((0..len).map(|_| rng.range(-0.5, 0.5)).collect(), sr)
    }

    #[test]
    fn frame_count_law() {
        let clip = noise_clip(441000, 44100, 1);
        let spec = stft(&clip, 2048, 2048, 1024).unwrap();
        assert_eq!(spec.frames(), 431);
        assert_eq!(spec.bins(), 1025);

        let clip = noise_clip(44100, 44100, 2);
        let spec = stft(&clip, 2048, 2048, 1024).unwrap();
        assert_eq!(spec.frames(), 44);
    }

    #[test]
    fn zero_clip_zero_magnitudes() {
        let clip = AudioClip::new(vec![0.0; 8192], 44100);
        let spec = stft(&clip, 2048, 2048, 1024).unwrap();
        assert!(spec.magnitudes.iter().all(|&m| m == 0.0));
    }

    #[test]
    fn istft_inverts_stft() {
        // Analysis → synthesis → crop must reproduce the signal to roundoff,
        // including at the edges where fewer windows overlap.
        for &(len, fft, win, hop) in &[
            (8192usize, 1024usize, 1024usize, 512usize),
            (8000, 1024, 1024, 256),
            (5000, 512, 256, 128),
        ] {
            let clip = noise_clip(len, 44100, 9);
            let frames = stft_complex(&clip, fft, win, hop).unwrap();
            let padded = istft(&frames, fft, win, hop).unwrap();
            let pad = win / 2;
            let max_err = clip
                .samples
                .iter()
                .zip(&padded[pad..pad + len])
                .map(|(a, b)| (a - b).abs())
                .fold(0.0f64, f64::max);
            assert!(
                max_err < 1e-10,
                "round trip error {max_err} for len={len} fft={fft} win={win} hop={hop}"
            );
        }
    }

    #[test]
    fn sine_at_bin_frequency_peaks_at_that_bin() {
        let freq = 20.0 * 44100.0 / 2048.0; // exactly bin 20
        // Cosine phase and a length of 256k+1 samples make the signal even
        // around both clip edges, so reflect padding continues the sinusoid
        // exactly and every frame, including the edge frames, is pure.
        let n = 12289;
        let samples: Vec<f64> = (0..n)
            .map(|i| (std::f64::consts::TAU * freq * i as f64 / 44100.0).cos() * 0.5)
            .collect();
        let clip = AudioClip::new(samples, 44100);
        let spec = stft(&clip, 2048, 2048, 1024).unwrap();
        for t in 0..spec.frames() {
            let row = spec.magnitudes.row(t);
            let argmax = row
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, 20, "frame {t}");
        }
    }

    #[test]
    fn stft_matches_naive_dft() {
        // Independent oracle: reflect-pad, window, and evaluate the DFT sum
        // directly at O(n^2).
        let clip = noise_clip(200, 8000, 3);
        let (fft_size, window, hop) = (64, 64, 16);
        let spec = stft(&clip, fft_size, window, hop).unwrap();

        let n = clip.samples.len();
        let pad = window / 2;
        let padded: Vec<f64> = (0..n + 2 * pad)
            .map(|i| clip.samples[reflect_index(i as isize - pad as isize, n)])
            .collect();
        let win = hann(window);
        for t in 0..spec.frames() {
            for b in 0..spec.bins() {
                let mut re = 0.0;
                let mut im = 0.0;
                for i in 0..window {
                    let x = padded[t * hop + i] * win[i];
                    let ang = -std::f64::consts::TAU * (b * i) as f64 / fft_size as f64;
                    re += x * ang.cos();
                    im += x * ang.sin();
                }
                let naive = (re * re + im * im).sqrt();
                assert!(
                    (naive - spec.magnitudes[[t, b]]).abs() < 1e-9,
                    "frame {t} bin {b}: naive {naive} vs fft {}",
                    spec.magnitudes[[t, b]]
                );
            }
        }
    }

    #[test]
    fn mel_scale_fixed_points() {
        assert!((hz_to_mel(1000.0) - 15.0).abs() < 1e-12);
        assert!((mel_to_hz(15.0) - 1000.0).abs() < 1e-9);
        assert!((hz_to_mel(400.0) - 6.0).abs() < 1e-12);
        for mel in [0.5, 3.0, 14.9, 15.1, 30.0, 45.0] {
            assert!((hz_to_mel(mel_to_hz(mel)) - mel).abs() < 1e-9);
        }
    }

    #[test]
    fn filterbank_shape_and_monotone_centers() {
        let fb = mel_filterbank(128, 2048, 44100).unwrap();
        assert_eq!(fb.weights.shape(), &[128, 1025]);
        assert_eq!(fb.centers_hz.len(), 128);
        for w in fb.centers_hz.windows(2) {
            assert!(w[1] > w[0]);
        }
        assert!(fb.weights.iter().all(|&w| w >= 0.0 && w.is_finite()));
    }

    #[test]
    fn filterbank_rows_are_contiguous_and_peaked() {
        let fb = mel_filterbank(64, 1024, 22050).unwrap();
        let bin_hz = |k: usize| k as f64 * 22050.0 / 1024.0;
        for m in 0..64 {
            let row = fb.weights.row(m);
            let support: Vec<usize> = (0..row.len()).filter(|&k| row[k] > 0.0).collect();
            assert!(!support.is_empty(), "row {m} empty");
            for pair in support.windows(2) {
                assert_eq!(pair[1], pair[0] + 1, "row {m} support has a gap");
            }
            // Response at own center exceeds response at neighbours' centers.
            let eval = |hz: f64, m: usize| {
                let mut best = 0.0f64;
                for k in 0..row.len() {
                    if (bin_hz(k) - hz).abs() < 22050.0 / 1024.0 {
                        best = best.max(fb.weights[[m, k]]);
                    }
                }
                best
            };
            let own = eval(fb.centers_hz[m], m);
            if m > 0 {
                assert!(own >= eval(fb.centers_hz[m - 1], m), "row {m} left");
            }
            if m < 63 {
                assert!(own >= eval(fb.centers_hz[m + 1], m), "row {m} right");
            }
        }
    }

    #[test]
    fn too_many_mels_is_an_error() {
        // 2000 filters over 513 bins must leave some rows empty.
        assert!(mel_filterbank(2000, 1024, 44100).is_err());
    }

    #[test]
    fn log_mel_floor_and_doubling() {
        let spec = Spectrogram {
            magnitudes: Array2::zeros((4, 513)),
            frame_hop: 1024,
            fft_size: 1024,
        };
        let fb = mel_filterbank(32, 1024, 44100).unwrap();
        let lm = log_mel(&spec, &fb).unwrap();
        assert!(lm.iter().all(|&v| v == -10.0));

        let clip = noise_clip(8000, 44100, 4);
        let spec = stft(&clip, 1024, 1024, 512).unwrap();
        let mut doubled = spec.clone();
        doubled.magnitudes.mapv_inplace(|m| 2.0 * m);
        let a = log_mel(&spec, &fb).unwrap();
        let b = log_mel(&doubled, &fb).unwrap();
        let shift = 4f64.log10();
        for (x, y) in a.iter().zip(b.iter()) {
            if *x > -10.0 + 1e-9 {
                assert!((y - x - shift).abs() < 1e-9, "{x} vs {y}");
            }
        }
    }

    #[test]
    fn energy_monotonicity_under_waveform_gain() {
        let clip = noise_clip(8000, 44100, 5);
        let louder = AudioClip::new(clip.samples.iter().map(|&x| 3.0 * x).collect(), 44100);
        let fb = mel_filterbank(32, 1024, 44100).unwrap();
        let a = log_mel(&stft(&clip, 1024, 1024, 512).unwrap(), &fb).unwrap();
        let b = log_mel(&stft(&louder, 1024, 1024, 512).unwrap(), &fb).unwrap();
        let shift = 2.0 * 3f64.log10();
        for (x, y) in a.iter().zip(b.iter()) {
            if *x > -10.0 + 1e-9 {
                assert!((y - x - shift).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn delta_of_constant_is_zero() {
        let m = Array2::from_elem((10, 4), 3.25);
        let d = delta(&m, 1).unwrap();
        assert_eq!(d.nrows(), 6);
        assert!(d.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn delta_of_ramp_is_exactly_one() {
        let m = Array2::from_shape_fn((20, 3), |(t, _)| t as f64);
        let d = delta(&m, 1).unwrap();
        assert!(d.iter().all(|&v| v == 1.0), "{d:?}");
    }

    #[test]
    fn delta_trim_chain() {
        let m = Array2::from_shape_fn((431, 2), |(t, c)| (t * 2 + c) as f64);
        let d1 = delta(&m, 1).unwrap();
        assert_eq!(d1.nrows(), 427);
        let d2 = delta(&m, 2).unwrap();
        assert_eq!(d2.nrows(), 423);
    }

    #[test]
    fn delta_is_linear() {
        let mut rng = DetRng::new(6);
        let x = Array2::from_shape_fn((15, 5), |_| rng.range(-1.0, 1.0));
        let y = Array2::from_shape_fn((15, 5), |_| rng.range(-1.0, 1.0));
        let (a, b) = (2.5, -0.75);
        let lhs = delta(&(a * &x + b * &y), 1).unwrap();
        let rhs = a * &delta(&x, 1).unwrap() + b * &delta(&y, 1).unwrap();
        for (l, r) in lhs.iter().zip(rhs.iter()) {
            assert!((l - r).abs() < 1e-12);
        }
    }

    #[test]
    fn tensor_shape_ten_seconds() {
        let clip = noise_clip(441000, 44100, 7);
        let t = feature_tensor(&clip).unwrap();
        assert_eq!(t.values.shape(), &[423, 128, 3]);
        assert!(t.values.iter().all(|&v| (0.0..=1.0).contains(&v)));
    }

    #[test]
    fn tensor_shape_one_second() {
        let clip = noise_clip(44100, 44100, 8);
        let t = feature_tensor(&clip).unwrap();
        assert_eq!(t.values.shape(), &[36, 128, 3]);
    }

    #[test]
    fn silence_maps_to_zero_channels() {
        let clip = AudioClip::new(vec![0.0; 44100], 44100);
        let t = feature_tensor(&clip).unwrap();
        assert!(t.values.slice(s![.., .., 1]).iter().all(|&v| v == 0.0));
        assert!(t.values.slice(s![.., .., 2]).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn minmax_examples_and_idempotence() {
        let mut values = Array3::zeros((3, 1, 1));
        values[[0, 0, 0]] = 2.0;
        values[[1, 0, 0]] = 4.0;
        values[[2, 0, 0]] = 6.0;
        let scaled = minmax_scale(&FeatureTensor { values });
        assert_eq!(
            scaled.values.as_slice().unwrap(),
            &[0.0, 0.5, 1.0]
        );
        let twice = minmax_scale(&scaled);
        assert_eq!(twice, scaled);

        let constant = FeatureTensor {
            values: Array3::from_elem((4, 2, 1), 3.0),
        };
        let scaled = minmax_scale(&constant);
        assert!(scaled.values.iter().all(|&v| v == 0.0));
        let twice = minmax_scale(&scaled);
        assert_eq!(twice, scaled);
    }

    #[test]
    fn minmax_hits_both_endpoints() {
        let mut rng = DetRng::new(9);
        let values = Array3::from_shape_fn((6, 4, 3), |_| rng.range(-5.0, 5.0));
        let scaled = minmax_scale(&FeatureTensor { values });
        for c in 0..3 {
            let ch = scaled.values.slice(s![.., .., c]);
            let lo = ch.iter().cloned().fold(f64::INFINITY, f64::min);
            let hi = ch.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(lo, 0.0);
            assert_eq!(hi, 1.0);
        }
    }

    #[test]
    fn cache_round_trip() {
        let mut rng = DetRng::new(10);
        let values = Array3::from_shape_fn((5, 8, 3), |_| rng.range(0.0, 1.0));
        let tensor = FeatureTensor { values };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("clip.wav.feat");
        write_feature_cache(&path, &tensor).unwrap();
        let back = read_feature_cache(&path).unwrap();
        assert_eq!(back.values.shape(), tensor.values.shape());
        for (a, b) in tensor.values.iter().zip(back.values.iter()) {
            assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn cache_rejects_truncation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.feat");
        std::fs::write(&path, [1u8, 2, 3]).unwrap();
        assert!(matches!(
            read_feature_cache(&path),
            Err(Error::FeatureCache { .. })
        ));
    }

    #[test]
    fn cache_path_appends_suffix() {
        let p = cache_path(std::path::Path::new("/x/airport/a.wav"));
        assert_eq!(p, std::path::PathBuf::from("/x/airport/a.wav.feat"));
    }

    #[test]
    fn reflect_index_bounces() {
        // n = 5: expected pattern for -4..9 around [0,1,2,3,4].
        let got: Vec<usize> = (-4..9).map(|i| reflect_index(i, 5)).collect();
        assert_eq!(got, vec![4, 3, 2, 1, 0, 1, 2, 3, 4, 3, 2, 1, 0]);
        assert_eq!(reflect_index(-1, 1), 0);
    }
}
