//! Device spectrum correction.
//!
//! Recordings from the reference device (id "a") are retinted to sound like
//! the average of the other devices: per frequency bin, each STFT frame's
//! magnitude is scaled by the ratio of the non-A mean spectrum to the A mean
//! spectrum, phase untouched, and the signal is rebuilt by overlap-add.

use crate::audio::{read_wav, AudioClip};
use crate::error::Error;
use crate::features::{istft, stft, stft_complex, DEFAULT_FFT, DEFAULT_HOP, DEFAULT_WIN};
use crate::manifest::{DatasetManifest, Split};
use crate::Result;

const EPS: f64 = 1e-8;

/// Mean magnitude per STFT bin over a population of clips.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceSpectrum {
    /// Length `fft_size/2 + 1`; all entries finite and ≥ 0.
    pub values: Vec<f64>,
}

/// Averages training-clip spectra into (non-A mean, device-A mean).
///
/// Each clip contributes its time-averaged linear STFT magnitude; clips are
/// weighted equally regardless of length. Only the training split counts.
pub fn build_reference_spectrum(
    manifest: &DatasetManifest,
) -> Result<(ReferenceSpectrum, ReferenceSpectrum)> {
    let bins = DEFAULT_FFT / 2 + 1;
    let mut sum_a = vec![0.0; bins];
    let mut sum_other = vec![0.0; bins];
    let mut count_a = 0usize;
    let mut count_other = 0usize;

    for entry in manifest.split(Split::Train) {
        let clip = read_wav(&manifest.clip_path(entry))?;
        let spec = stft(&clip, DEFAULT_FFT, DEFAULT_WIN, DEFAULT_HOP)?;
        let frames = spec.frames() as f64;
        let (sum, count) = if entry.device == "a" {
            (&mut sum_a, &mut count_a)
        } else {
            (&mut sum_other, &mut count_other)
        };
        for b in 0..bins {
            let mean_over_time: f64 =
                spec.magnitudes.column(b).iter().sum::<f64>() / frames;
            sum[b] += mean_over_time;
        }
        *count += 1;
    }

    if count_a == 0 {
        return Err(Error::config(
            "spectrum reference needs training clips from device a",
        ));
    }
    if count_other == 0 {
        return Err(Error::config(
            "spectrum reference needs training clips from at least one device other than a",
        ));
    }
    sum_a.iter_mut().for_each(|v| *v /= count_a as f64);
    sum_other.iter_mut().for_each(|v| *v /= count_other as f64);
    Ok((
        ReferenceSpectrum { values: sum_other },
        ReferenceSpectrum { values: sum_a },
    ))
}

/// Rescales a clip's spectrum toward the reference device population.
///
/// Per bin `f` every frame's magnitude is multiplied by
/// `reference(f) / (src_a(f) + 1e-8)`; the guard keeps the factor finite on
/// silent bins. Output has exactly the input length.
pub fn spectrum_correction(
    clip: &AudioClip,
    reference: &ReferenceSpectrum,
    src_a: &ReferenceSpectrum,
) -> Result<AudioClip> {
    let bins = DEFAULT_FFT / 2 + 1;
    if reference.values.len() != bins || src_a.values.len() != bins {
        return Err(Error::ShapeMismatch {
            context: "spectrum_correction reference".into(),
            expected: vec![bins],
            got: vec![reference.values.len(), src_a.values.len()],
        });
    }
    let factors: Vec<f64> = reference
        .values
        .iter()
        .zip(&src_a.values)
        .map(|(&r, &s)| r / (s + EPS))
        .collect();

    let mut frames = stft_complex(clip, DEFAULT_FFT, DEFAULT_WIN, DEFAULT_HOP)?;
    for frame in frames.iter_mut() {
        for (value, &factor) in frame.iter_mut().zip(&factors) {
            *value *= factor;
        }
    }
    let padded = istft(&frames, DEFAULT_FFT, DEFAULT_WIN, DEFAULT_HOP)?;
    let pad = DEFAULT_WIN / 2;
    let n = clip.samples.len();
    if padded.len() < pad + n {
        return Err(Error::TooShort {
            context: "spectrum_correction resynthesis".into(),
            len: padded.len(),
            need: pad + n,
        });
    }
    Ok(AudioClip::new(padded[pad..pad + n].to_vec(), clip.sample_rate))
}
