//! Batch-level transforms on feature tensors; no new audio is created.

use ndarray::s;
use rand_distr::{Beta, Distribution};

use crate::error::Error;
use crate::features::FeatureTensor;
use crate::rng::DetRng;
use crate::Result;

/// Convexly blends a batch with a shuffled copy of itself.
///
/// One blending weight λ ~ Beta(alpha, alpha) and one permutation π are
/// drawn per call; sample i becomes `λ·x_i + (1-λ)·x_π(i)` and its label the
/// same blend, so labels stay probability vectors.
pub fn mixup(
    batch: &[(FeatureTensor, Vec<f64>)],
    alpha: f64,
    rng: &mut DetRng,
) -> Result<Vec<(FeatureTensor, Vec<f64>)>> {
    let beta = Beta::new(alpha, alpha)
        .map_err(|e| Error::config(format!("mixup alpha {alpha}: {e}")))?;
    let lambda = beta.sample(rng);
    let perm = rng.permutation(batch.len());
    mixup_with(batch, lambda, &perm)
}

/// [`mixup`] with the blending weight and permutation fixed by the caller.
pub fn mixup_with(
    batch: &[(FeatureTensor, Vec<f64>)],
    lambda: f64,
    perm: &[usize],
) -> Result<Vec<(FeatureTensor, Vec<f64>)>> {
    if batch.is_empty() {
        return Err(Error::config("mixup on an empty batch"));
    }
    if perm.len() != batch.len() {
        return Err(Error::ShapeMismatch {
            context: "mixup permutation".into(),
            expected: vec![batch.len()],
            got: vec![perm.len()],
        });
    }
    let shape = batch[0].0.values.shape().to_vec();
    let label_len = batch[0].1.len();
    for (i, (tensor, label)) in batch.iter().enumerate() {
        if tensor.values.shape() != shape.as_slice() {
            return Err(Error::ShapeMismatch {
                context: format!("mixup batch element {i}"),
                expected: shape.clone(),
                got: tensor.values.shape().to_vec(),
            });
        }
        if label.len() != label_len {
            return Err(Error::ShapeMismatch {
                context: format!("mixup label {i}"),
                expected: vec![label_len],
                got: vec![label.len()],
            });
        }
    }

    let mut out = Vec::with_capacity(batch.len());
    for (i, (tensor, label)) in batch.iter().enumerate() {
        let j = perm[i];
        if j >= batch.len() {
            return Err(Error::config(format!(
                "mixup permutation entry {j} out of range for batch of {}",
                batch.len()
            )));
        }
        let (other, other_label) = &batch[j];
        let values = &tensor.values * lambda + &other.values * (1.0 - lambda);
        let blended: Vec<f64> = label
            .iter()
            .zip(other_label)
            .map(|(a, b)| lambda * a + (1.0 - lambda) * b)
            .collect();
        out.push((FeatureTensor { values }, blended));
    }
    Ok(out)
}

/// Takes a contiguous random slice of `crop_frames` frames along time.
pub fn random_crop(
    tensor: &FeatureTensor,
    crop_frames: usize,
    rng: &mut DetRng,
) -> Result<FeatureTensor> {
    let time = tensor.time();
    if crop_frames > time {
        return Err(Error::TooShort {
            context: "random_crop".into(),
            len: time,
            need: crop_frames,
        });
    }
    let offset = rng.below(time - crop_frames + 1);
    let values = tensor
        .values
        .slice(s![offset..offset + crop_frames, .., ..])
        .to_owned();
    Ok(FeatureTensor { values })
}

/// Zeroes one random time stripe and one random frequency stripe.
///
/// Stripe widths are `floor(fraction·dim)`; the time stripe position is
/// drawn first, then the frequency stripe. Both stripes cover all channels;
/// everything outside them is untouched.
pub fn spec_augment(
    tensor: &FeatureTensor,
    fraction: f64,
    rng: &mut DetRng,
) -> Result<FeatureTensor> {
    if !(0.0..1.0).contains(&fraction) || fraction == 0.0 {
        return Err(Error::config(format!(
            "spec_augment fraction must be in (0, 1), got {fraction}"
        )));
    }
    let time = tensor.time();
    let mels = tensor.mels();
    let t_width = (fraction * time as f64).floor() as usize;
    let f_width = (fraction * mels as f64).floor() as usize;
    let t_start = rng.below(time - t_width + 1);
    let f_start = rng.below(mels - f_width + 1);

    let mut values = tensor.values.clone();
    values
        .slice_mut(s![t_start..t_start + t_width, .., ..])
        .fill(0.0);
    values
        .slice_mut(s![.., f_start..f_start + f_width, ..])
        .fill(0.0);
    Ok(FeatureTensor { values })
}
