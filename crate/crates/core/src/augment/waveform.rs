//! Length-preserving waveform transforms.

use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex;

use crate::audio::AudioClip;
use crate::error::Error;
use crate::features::{istft, stft_complex};
use crate::rng::DetRng;
use crate::Result;

/// Linear interpolation of `x` at fractional position `pos` (clamped).
fn interp(x: &[f64], pos: f64) -> f64 {
    if pos <= 0.0 {
        return x[0];
    }
    let last = (x.len() - 1) as f64;
    if pos >= last {
        return x[x.len() - 1];
    }
    let i = pos.floor() as usize;
    let frac = pos - i as f64;
    x[i] * (1.0 - frac) + x[i + 1] * frac
}

/// Indices of local magnitude maxima, the anchors for phase locking.
fn spectral_peaks(mags: &[f64]) -> Vec<usize> {
    let mut peaks = Vec::new();
    for k in 0..mags.len() {
        let left = if k > 0 { mags[k - 1] } else { -1.0 };
        let right = if k + 1 < mags.len() { mags[k + 1] } else { -1.0 };
        if mags[k] > left && mags[k] >= right {
            peaks.push(k);
        }
    }
    if peaks.is_empty() {
        peaks.push(0);
    }
    peaks
}

/// Shifts pitch by `semitones` without changing duration.
///
/// A phase vocoder time-stretches the signal by `2^(semitones/12)` and the
/// stretched signal is linearly resampled back to the input length, which
/// scales all frequencies by the stretch factor. Synthesis phases are
/// accumulated at spectral peaks from their instantaneous-frequency
/// estimates; the bins around each peak reuse the analysis frame's phase
/// offsets relative to that peak (identity phase locking), which keeps each
/// synthesis frame's envelope aligned with the window so overlap-add stays
/// coherent.
pub fn pitch_shift(clip: &AudioClip, semitones: f64) -> Result<AudioClip> {
    if !semitones.is_finite() || semitones.abs() > 12.0 {
        return Err(Error::config(format!(
            "pitch shift must be within ±12 semitones, got {semitones}"
        )));
    }
    let n = clip.samples.len();
    if n == 0 {
        return Err(Error::TooShort {
            context: "pitch_shift".into(),
            len: 0,
            need: 1,
        });
    }
    let factor = 2f64.powf(semitones / 12.0);
    let fft = 2048.min(n.next_power_of_two());
    let win = fft;
    let ha = (win / 4).max(1);
    let hs = ((ha as f64 * factor).round() as usize).max(1);

    let frames = stft_complex(clip, fft, win, ha)?;
    let bins = fft / 2 + 1;
    let mut out_frames: Vec<Vec<Complex<f64>>> = Vec::with_capacity(frames.len());
    let mut prev_phase = vec![0.0f64; bins];
    let mut synth_phase = vec![0.0f64; bins];
    for (t, frame) in frames.iter().enumerate() {
        let mags: Vec<f64> = frame.iter().map(|c| c.norm()).collect();
        let phases: Vec<f64> = frame.iter().map(|c| c.arg()).collect();
        if t == 0 {
            synth_phase.copy_from_slice(&phases);
        } else {
            let peaks = spectral_peaks(&mags);
            let mut next = vec![0.0f64; bins];
            for (i, &p) in peaks.iter().enumerate() {
                let omega = std::f64::consts::TAU * p as f64 / fft as f64;
                let mut delta = phases[p] - prev_phase[p] - omega * ha as f64;
                delta -= std::f64::consts::TAU * (delta / std::f64::consts::TAU).round();
                let true_freq = omega + delta / ha as f64;
                next[p] = synth_phase[p] + true_freq * hs as f64;
                let lo = if i == 0 { 0 } else { (peaks[i - 1] + p + 1) / 2 };
                let hi = if i + 1 < peaks.len() {
                    (p + peaks[i + 1] + 1) / 2
                } else {
                    bins
                };
                for k in lo..hi {
                    if k != p {
                        next[k] = next[p] + (phases[k] - phases[p]);
                    }
                }
            }
            synth_phase = next;
        }
        prev_phase.copy_from_slice(&phases);
        let out: Vec<Complex<f64>> = (0..bins)
            .map(|k| Complex::from_polar(mags[k], synth_phase[k]))
            .collect();
        out_frames.push(out);
    }

    let stretched = istft(&out_frames, fft, win, hs)?;
    // The analysis padding of win/2 maps to win/2 · hs/ha in the stretched
    // domain; the signal body maps to n · hs/ha samples after it.
    let rate = hs as f64 / ha as f64;
    let start = ((win / 2) as f64 * rate).round() as usize;
    let body = ((n as f64) * rate).round() as usize;
    let body = body.min(stretched.len().saturating_sub(start)).max(1);
    let segment = &stretched[start..start + body];

    let step = body as f64 / n as f64;
    let samples = (0..n).map(|i| interp(segment, i as f64 * step)).collect();
    Ok(AudioClip::new(samples, clip.sample_rate))
}

/// Changes playback speed, keeping the output length fixed.
///
/// `rate > 1` plays faster: the signal shortens and the tail is zero-padded.
/// `rate < 1` plays slower: the lengthened signal is truncated. Sample `i`
/// reads the input at position `i·rate` by linear interpolation.
pub fn speed_change(clip: &AudioClip, rate: f64) -> Result<AudioClip> {
    if !(rate > 0.0) || !rate.is_finite() {
        return Err(Error::config(format!(
            "speed rate must be positive, got {rate}"
        )));
    }
    let n = clip.samples.len();
    let last = (n.saturating_sub(1)) as f64;
    let samples = (0..n)
        .map(|i| {
            let pos = i as f64 * rate;
            if pos > last {
                0.0
            } else {
                interp(&clip.samples, pos)
            }
        })
        .collect();
    Ok(AudioClip::new(samples, clip.sample_rate))
}

/// Adds white Gaussian noise of standard deviation `sigma`.
pub fn add_noise(clip: &AudioClip, sigma: f64, rng: &mut DetRng) -> Result<AudioClip> {
    if sigma < 0.0 {
        return Err(Error::config(format!(
            "noise sigma must be non-negative, got {sigma}"
        )));
    }
    let samples = clip
        .samples
        .iter()
        .map(|&v| {
            let g: f64 = StandardNormal.sample(rng);
            v + sigma * g
        })
        .collect();
    Ok(AudioClip::new(samples, clip.sample_rate))
}

/// Averages two clips of the same scene and restores the louder parent's
/// peak. The result belongs to no particular recording device.
pub fn mix_same_class(
    a: &AudioClip,
    scene_a: &str,
    b: &AudioClip,
    scene_b: &str,
) -> Result<AudioClip> {
    if scene_a != scene_b {
        return Err(Error::SceneMismatch {
            a: scene_a.to_string(),
            b: scene_b.to_string(),
        });
    }
    if a.samples.len() != b.samples.len() {
        return Err(Error::ShapeMismatch {
            context: "mix_same_class lengths".into(),
            expected: vec![a.samples.len()],
            got: vec![b.samples.len()],
        });
    }
    if a.sample_rate != b.sample_rate {
        return Err(Error::config(format!(
            "mix_same_class rates differ: {} vs {}",
            a.sample_rate, b.sample_rate
        )));
    }
    let mut samples: Vec<f64> = a
        .samples
        .iter()
        .zip(&b.samples)
        .map(|(&x, &y)| 0.5 * (x + y))
        .collect();
    let target = a.peak().max(b.peak());
    let current = samples.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if current > 0.0 && target > 0.0 {
        let g = target / current;
        samples.iter_mut().for_each(|v| *v *= g);
    }
    Ok(AudioClip::new(samples, a.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rustfft::FftPlanner;

    fn sine(freq: f64, secs: f64, sr: u32, amp: f64) -> AudioClip {
        let n = (secs * sr as f64) as usize;
        AudioClip::new(
            (0..n)
                .map(|i| amp * (std::f64::consts::TAU * freq * i as f64 / sr as f64).sin())
                .collect(),
            sr,
        )
    }

    /// Frequency of the largest spectral peak over the middle of the clip.
    fn dominant_hz(clip: &AudioClip) -> f64 {
        let n = 16384;
        let start = clip.samples.len() / 2 - n / 2;
        let fft = FftPlanner::new().plan_fft_forward(n);
        let mut buf: Vec<Complex<f64>> = clip.samples[start..start + n]
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let w = 0.5 - 0.5 * (std::f64::consts::TAU * i as f64 / n as f64).cos();
                Complex::new(v * w, 0.0)
            })
            .collect();
        fft.process(&mut buf);
        let argmax = (1..n / 2)
            .max_by(|&a, &b| buf[a].norm().partial_cmp(&buf[b].norm()).unwrap())
            .unwrap();
        argmax as f64 * clip.sample_rate as f64 / n as f64
    }

    #[test]
    fn zero_semitones_is_identity() {
        let clip = sine(440.0, 0.5, 44100, 0.5);
        let out = pitch_shift(&clip, 0.0).unwrap();
        assert_eq!(out.samples.len(), clip.samples.len());
        let max_err = clip
            .samples
            .iter()
            .zip(&out.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 1e-3, "identity error {max_err}");
    }

    #[test]
    fn octave_up_doubles_frequency() {
        let clip = sine(440.0, 1.0, 44100, 0.5);
        let out = pitch_shift(&clip, 12.0).unwrap();
        assert_eq!(out.samples.len(), clip.samples.len());
        let hz = dominant_hz(&out);
        assert!((hz - 880.0).abs() / 880.0 < 0.02, "peak at {hz} Hz");
    }

    #[test]
    fn octave_down_halves_frequency() {
        let clip = sine(440.0, 1.0, 44100, 0.5);
        let out = pitch_shift(&clip, -12.0).unwrap();
        let hz = dominant_hz(&out);
        assert!((hz - 220.0).abs() / 220.0 < 0.02, "peak at {hz} Hz");
    }

    #[test]
    fn speed_rate_one_is_identity() {
        let clip = sine(300.0, 0.2, 44100, 0.4);
        let out = speed_change(&clip, 1.0).unwrap();
        let max_err = clip
            .samples
            .iter()
            .zip(&out.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err <= 1e-3);
    }

    #[test]
    fn speed_two_halves_content_and_zero_pads() {
        let n = 10000;
        let clip = AudioClip::new((0..n).map(|i| (i as f64 / n as f64) + 0.1).collect(), 44100);
        let out = speed_change(&clip, 2.0).unwrap();
        assert_eq!(out.samples.len(), n);
        let last_nonzero = out.samples.iter().rposition(|&v| v != 0.0).unwrap();
        // Position i reads i·2; the last in-range read is at i = (n-1)/2.
        assert!((last_nonzero as isize - (n as isize - 1) / 2).abs() <= 1);
        assert!(out.samples[last_nonzero + 1..].iter().all(|&v| v == 0.0));
    }

    #[test]
    fn speed_half_matches_unclipped_resample_prefix() {
        let clip = sine(250.0, 0.25, 44100, 0.5);
        let out = speed_change(&clip, 0.5).unwrap();
        let n = clip.samples.len();
        assert_eq!(out.samples.len(), n);
        for i in 0..n {
            let want = interp(&clip.samples, i as f64 * 0.5);
            assert!((out.samples[i] - want).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_sigma_is_identity() {
        let clip = sine(100.0, 0.1, 44100, 0.3);
        let mut rng = DetRng::new(21);
        let out = add_noise(&clip, 0.0, &mut rng).unwrap();
        assert_eq!(out.samples, clip.samples);
    }

    #[test]
    fn noise_hits_requested_sigma() {
        let clip = AudioClip::new(vec![0.0; 441000], 44100);
        let mut rng = DetRng::new(22);
        let out = add_noise(&clip, 0.01, &mut rng).unwrap();
        let mean: f64 = out.samples.iter().sum::<f64>() / out.samples.len() as f64;
        let var: f64 = out.samples.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / out.samples.len() as f64;
        let sd = var.sqrt();
        assert!((sd - 0.01).abs() / 0.01 < 0.10, "sample sd {sd}");
    }

    #[test]
    fn noise_is_additive_and_input_independent() {
        let a = sine(440.0, 0.05, 44100, 0.5);
        let b = sine(220.0, 0.05, 44100, 0.2);
        let na = add_noise(&a, 0.01, &mut DetRng::new(23)).unwrap();
        let nb = add_noise(&b, 0.01, &mut DetRng::new(23)).unwrap();
        for i in 0..a.samples.len() {
            let da = na.samples[i] - a.samples[i];
            let db = nb.samples[i] - b.samples[i];
            assert!((da - db).abs() < 1e-15);
        }
    }

    #[test]
    fn mixing_a_clip_with_itself_returns_it() {
        let a = sine(330.0, 0.1, 44100, 0.4);
        let out = mix_same_class(&a, "park", &a, "park").unwrap();
        let max_err = a
            .samples
            .iter()
            .zip(&out.samples)
            .map(|(x, y)| (x - y).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-12);
    }

    #[test]
    fn opposite_clips_cancel() {
        let a = sine(330.0, 0.1, 44100, 0.4);
        let b = AudioClip::new(a.samples.iter().map(|v| -v).collect(), 44100);
        let out = mix_same_class(&a, "park", &b, "park").unwrap();
        assert!(out.samples.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn different_scenes_rejected() {
        let a = sine(330.0, 0.05, 44100, 0.4);
        assert!(matches!(
            mix_same_class(&a, "park", &a, "metro"),
            Err(Error::SceneMismatch { .. })
        ));
    }
}
