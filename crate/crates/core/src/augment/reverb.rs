//! Synthetic room reverberation followed by dynamic range compression.
//!
//! Impulse responses are generated, not measured: a unit tap followed by
//! white noise under an exponential envelope calibrated to reach -60 dB at
//! the requested RT60. Convolving with one and compressing the result
//! imitates a recording of the same scene made by a different device in a
//! different room.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::audio::AudioClip;
use crate::error::Error;
use crate::rng::DetRng;
use crate::Result;

#[derive(Debug, Clone, PartialEq)]
pub struct RoomImpulseResponse {
    pub taps: Vec<f64>,
    pub sample_rate: u32,
}

/// Feed-forward compressor settings: hard knee at `threshold_db` with slope
/// `1/ratio` above it, level detector smoothed by one-pole attack/release.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DrcPreset {
    pub threshold_db: f64,
    pub ratio: f64,
    pub attack_ms: f64,
    pub release_ms: f64,
}

impl DrcPreset {
    pub const fn new(threshold_db: f64, ratio: f64, attack_ms: f64, release_ms: f64) -> Self {
        DrcPreset {
            threshold_db,
            ratio,
            attack_ms,
            release_ms,
        }
    }
}

/// The two settings clips are compressed with, chosen uniformly per clip.
pub fn default_drc_presets() -> Vec<DrcPreset> {
    vec![
        DrcPreset::new(-20.0, 4.0, 5.0, 50.0),
        DrcPreset::new(-30.0, 8.0, 1.0, 100.0),
    ]
}

/// Generates an exponentially decaying noise impulse response.
///
/// Tap 0 is the unit direct path; taps n ≥ 1 are uniform noise scaled by
/// `0.9 · exp(-n · ln(1000) / (rt60 · sample_rate))`, which puts the
/// envelope 60 dB down at t = rt60. The result is peak-normalized (the
/// construction already peaks at the direct tap).
pub fn synth_rir(
    rt60: f64,
    length: usize,
    sample_rate: u32,
    rng: &mut DetRng,
) -> Result<RoomImpulseResponse> {
    if !(rt60 > 0.0) {
        return Err(Error::config(format!("rt60 must be positive, got {rt60}")));
    }
    if length == 0 {
        return Err(Error::config("impulse response length must be at least 1"));
    }
    let decay = 1000.0f64.ln() / (rt60 * sample_rate as f64);
    let mut taps = Vec::with_capacity(length);
    taps.push(1.0);
    for n in 1..length {
        taps.push(rng.range(-1.0, 1.0) * 0.9 * (-(n as f64) * decay).exp());
    }
    let peak = taps.iter().fold(0.0f64, |m, t| m.max(t.abs()));
    if peak > 0.0 {
        taps.iter_mut().for_each(|t| *t /= peak);
    }
    Ok(RoomImpulseResponse { taps, sample_rate })
}

/// FFT convolution of `x` with `h`, truncated to `x.len()`.
fn convolve_truncated(x: &[f64], h: &[f64]) -> Vec<f64> {
    let full = x.len() + h.len() - 1;
    let size = full.next_power_of_two();
    let fft = FftPlanner::new().plan_fft_forward(size);
    let ifft = FftPlanner::new().plan_fft_inverse(size);

    let mut xa: Vec<Complex<f64>> = x.iter().map(|&v| Complex::new(v, 0.0)).collect();
    xa.resize(size, Complex::new(0.0, 0.0));
    let mut ha: Vec<Complex<f64>> = h.iter().map(|&v| Complex::new(v, 0.0)).collect();
    ha.resize(size, Complex::new(0.0, 0.0));
    fft.process(&mut xa);
    fft.process(&mut ha);
    for (a, b) in xa.iter_mut().zip(&ha) {
        *a *= b;
    }
    ifft.process(&mut xa);
    let scale = 1.0 / size as f64;
    xa[..x.len()].iter().map(|c| c.re * scale).collect()
}

/// Applies the compressor's gain law sample by sample.
///
/// The level detector is a one-pole follower of `|x|` that charges with the
/// attack coefficient while the input exceeds the envelope and discharges
/// with the release coefficient otherwise. Above threshold the static curve
/// has slope `1/ratio`, i.e. gain in dB is `(1/ratio - 1) · overshoot`.
pub fn compress(x: &[f64], preset: &DrcPreset, sample_rate: u32) -> Vec<f64> {
    let coef = |ms: f64| {
        let samples = (ms * 1e-3 * sample_rate as f64).max(1e-9);
        (-1.0 / samples).exp()
    };
    let attack = coef(preset.attack_ms);
    let release = coef(preset.release_ms);
    let slope = 1.0 / preset.ratio - 1.0;

    let mut env = 0.0f64;
    let mut out = Vec::with_capacity(x.len());
    for &sample in x {
        let level = sample.abs();
        let a = if level > env { attack } else { release };
        env = a * env + (1.0 - a) * level;
        let level_db = 20.0 * env.max(1e-12).log10();
        let overshoot = level_db - preset.threshold_db;
        let gain = if overshoot > 0.0 {
            10f64.powf(slope * overshoot / 20.0)
        } else {
            1.0
        };
        out.push(sample * gain);
    }
    out
}

/// Reverberates a clip and compresses the result.
///
/// The convolution tail is dropped (output length = input length) and the
/// compressed signal is peak-normalized back to the input's peak so the
/// augmented clip sits at a comparable level.
pub fn reverb_drc(
    clip: &AudioClip,
    rir: &RoomImpulseResponse,
    preset: &DrcPreset,
) -> Result<AudioClip> {
    if rir.taps.is_empty() {
        return Err(Error::config("empty impulse response"));
    }
    if rir.sample_rate != clip.sample_rate {
        return Err(Error::config(format!(
            "impulse response rate {} does not match clip rate {}",
            rir.sample_rate, clip.sample_rate
        )));
    }
    let wet = convolve_truncated(&clip.samples, &rir.taps);
    let mut out = compress(&wet, preset, clip.sample_rate);
    let in_peak = clip.peak();
    let out_peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if out_peak > 0.0 && in_peak > 0.0 {
        let g = in_peak / out_peak;
        out.iter_mut().for_each(|v| *v *= g);
    }
    Ok(AudioClip::new(out, clip.sample_rate))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rir_decays_to_minus_sixty_db_at_rt60() {
        let sr = 44100u32;
        let rt60 = 0.5;
        let len = (rt60 * sr as f64 * 1.2) as usize;
        let mut rng = DetRng::new(11);
        let rir = synth_rir(rt60, len, sr, &mut rng).unwrap();

        // Compare windowed noise RMS near the start against a window
        // centered at rt60; the envelope ratio there should be 1e-3.
        let w = 400;
        let rms = |taps: &[f64]| {
            (taps.iter().map(|t| t * t).sum::<f64>() / taps.len() as f64).sqrt()
        };
        let head = rms(&rir.taps[1..1 + w]);
        let center = (rt60 * sr as f64) as usize;
        let tail = rms(&rir.taps[center - w / 2..center + w / 2]);
        // The head window spans samples 1..401 whose envelope has already
        // decayed a little; evaluate the expected ratio at the window
        // centers rather than at zero.
        let decay = 1000.0f64.ln() / (rt60 * sr as f64);
        let expected = (-(center as f64) * decay).exp() / (-(1.0 + w as f64 / 2.0) * decay).exp();
        let ratio = tail / head;
        assert!(
            (ratio / expected - 1.0).abs() < 0.10,
            "decay ratio {ratio} vs expected {expected}"
        );
    }

    #[test]
    fn rir_first_tap_is_unit() {
        let mut rng = DetRng::new(12);
        let rir = synth_rir(0.3, 4000, 44100, &mut rng).unwrap();
        assert_eq!(rir.taps[0], 1.0);
        assert!(rir.taps.iter().all(|t| t.abs() <= 1.0));
    }

    #[test]
    fn rir_seeds_differ_envelope_matches() {
        let sr = 44100;
        let len = 8000;
        let mut r1 = DetRng::new(13);
        let mut r2 = DetRng::new(14);
        let a = synth_rir(0.4, len, sr, &mut r1).unwrap();
        let b = synth_rir(0.4, len, sr, &mut r2).unwrap();
        assert_ne!(a.taps, b.taps);
        let rms = |taps: &[f64]| {
            (taps.iter().map(|t| t * t).sum::<f64>() / taps.len() as f64).sqrt()
        };
        let ra = rms(&a.taps[1000..3000]);
        let rb = rms(&b.taps[1000..3000]);
        assert!((ra / rb - 1.0).abs() < 0.15, "envelope mismatch {ra} vs {rb}");
    }

    #[test]
    fn unit_impulse_below_threshold_is_identity() {
        let sr = 44100;
        let clip = AudioClip::new(
            (0..sr as usize / 10)
                .map(|i| 0.05 * (std::f64::consts::TAU * 440.0 * i as f64 / sr as f64).sin())
                .collect(),
            sr,
        );
        let rir = RoomImpulseResponse {
            taps: vec![1.0],
            sample_rate: sr,
        };
        // 0.05 peak = -26 dB, below the -20 dB threshold.
        let preset = DrcPreset::new(-20.0, 4.0, 5.0, 50.0);
        let out = reverb_drc(&clip, &rir, &preset).unwrap();
        assert_eq!(out.samples.len(), clip.samples.len());
        let max_err = clip
            .samples
            .iter()
            .zip(&out.samples)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0f64, f64::max);
        assert!(max_err < 1e-6, "identity path error {max_err}");
    }

    #[test]
    fn compressor_halves_overshoot_at_ratio_two() {
        let sr = 44100u32;
        let threshold = -20.0;
        // Sine peaking 10 dB above threshold; fast attack and slow release
        // make the envelope follower track the crest closely.
        let amp = 10f64.powf((threshold + 10.0) / 20.0);
        let x: Vec<f64> = (0..sr as usize)
            .map(|i| amp * (std::f64::consts::TAU * 1000.0 * i as f64 / sr as f64).sin())
            .collect();
        let preset = DrcPreset::new(threshold, 2.0, 1.0, 200.0);
        let y = compress(&x, &preset, sr);
        let steady = &y[sr as usize / 2..];
        let peak = steady.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let level_db = 20.0 * peak.log10();
        assert!(
            (level_db - (threshold + 5.0)).abs() < 0.5,
            "steady-state level {level_db} dB, want {} ± 0.5",
            threshold + 5.0
        );
    }

    #[test]
    fn output_length_always_matches_input() {
        let sr = 44100;
        let clip = AudioClip::new(vec![0.1; 5000], sr);
        let mut rng = DetRng::new(15);
        let rir = synth_rir(0.3, 8000, sr, &mut rng).unwrap();
        let preset = DrcPreset::new(-30.0, 8.0, 1.0, 100.0);
        let out = reverb_drc(&clip, &rir, &preset).unwrap();
        assert_eq!(out.samples.len(), 5000);
    }

    #[test]
    fn empty_rir_rejected() {
        let clip = AudioClip::new(vec![0.1; 100], 44100);
        let rir = RoomImpulseResponse {
            taps: vec![],
            sample_rate: 44100,
        };
        let preset = DrcPreset::new(-20.0, 4.0, 5.0, 50.0);
        assert!(reverb_drc(&clip, &rir, &preset).is_err());
    }
}
