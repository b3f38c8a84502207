//! Class activation maps.
//!
//! Because every model here ends in a 1×1 class-map convolution followed by
//! global average pooling, each class's pre-pooling map already shows where
//! in (time, frequency) its evidence sits: the map's spatial mean is exactly
//! the class logit. [`compute_cam`] reads that map for one target class and
//! bilinearly upsamples it to the input's resolution; maps are produced for
//! the split-frequency residual family only, whose pooling never collapses
//! the frequency axis. [`export_heatmap`] renders a map as a text matrix and
//! a binary PPM image.

use ndarray::Array2;
use std::fmt::Write as _;
use std::path::Path;

use crate::error::Error;
use crate::features::FeatureTensor;
use crate::models::{to_input_tensor, Family, Model};
use crate::Result;

/// Activation map for one (clip, class) pair.
#[derive(Debug, Clone)]
pub struct CamMap {
    pub clip_id: String,
    /// Class index the map explains.
    pub target: usize,
    /// Map at the network's output resolution: (time', frequency').
    pub raw: Array2<f64>,
    /// Map upsampled to the input resolution: (time, mel).
    pub values: Array2<f64>,
}

/// Computes the activation map of `target` for one clip.
///
/// The map is the classifier head applied to the body's feature maps —
/// bias plus the weighted sum of channels, accumulated in channel order so
/// the result is exactly linear in the head weights.
pub fn compute_cam(
    model: &Model,
    features: &FeatureTensor,
    target: usize,
    clip_id: &str,
) -> Result<CamMap> {
    if model.config.family != Family::Resnet {
        return Err(Error::config(format!(
            "activation maps are computed for the resnet family only (got {})",
            model.config.family
        )));
    }
    if target >= model.config.n_classes {
        return Err(Error::config(format!(
            "target class {target} out of range for a {}-class model",
            model.config.n_classes
        )));
    }
    let x = to_input_tensor(&[features])?;
    let body = model.body_maps(&x)?;
    let head = model.head()?;
    let (_, c, h, w) = body.dims4();

    let mut raw = Array2::zeros((h, w));
    for y in 0..h {
        for xw in 0..w {
            let mut s = head.bias[target];
            for k in 0..c {
                s += head.weight[target * c + k] * body.data[(k * h + y) * w + xw];
            }
            raw[[y, xw]] = s;
        }
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(Error::config(format!(
            "non-finite activation in the class map for {clip_id}"
        )));
    }
    let values = upsample_bilinear(&raw, features.time(), features.mels());
    Ok(CamMap {
        clip_id: clip_id.to_string(),
        target,
        raw,
        values,
    })
}

/// Bilinear resize with corner alignment: output corners sample input
/// corners exactly, and equal sizes reproduce the input unchanged.
pub fn upsample_bilinear(src: &Array2<f64>, out_h: usize, out_w: usize) -> Array2<f64> {
    let (in_h, in_w) = src.dim();
    let scale = |i: usize, out_n: usize, in_n: usize| -> f64 {
        if out_n <= 1 || in_n <= 1 {
            0.0
        } else {
            i as f64 * (in_n - 1) as f64 / (out_n - 1) as f64
        }
    };
    let mut out = Array2::zeros((out_h, out_w));
    for i in 0..out_h {
        let y = scale(i, out_h, in_h);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(in_h - 1);
        let fy = y - y0 as f64;
        for j in 0..out_w {
            let x = scale(j, out_w, in_w);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(in_w - 1);
            let fx = x - x0 as f64;
            out[[i, j]] = (1.0 - fy) * ((1.0 - fx) * src[[y0, x0]] + fx * src[[y0, x1]])
                + fy * ((1.0 - fx) * src[[y1, x0]] + fx * src[[y1, x1]]);
        }
    }
    out
}

/// Mean of the map over each time frame's frequency bins; the argmax of this
/// marginal is the frame the class attends to most.
pub fn time_marginal(cam: &CamMap) -> Vec<f64> {
    let (t, m) = cam.values.dim();
    (0..t)
        .map(|i| (0..m).map(|j| cam.values[[i, j]]).sum::<f64>() / m as f64)
        .collect()
}

/// Min-max normalizes to [0, 1]; a constant map normalizes to all zeros.
fn normalize(values: &Array2<f64>) -> Array2<f64> {
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if hi > lo {
        values.mapv(|v| (v - lo) / (hi - lo))
    } else {
        Array2::zeros(values.dim())
    }
}

/// Writes `<stem>.csv` (one time frame per line, comma-separated mel values)
/// and `<stem>.ppm` (binary P6).
///
/// The image puts time on the horizontal axis and frequency on the vertical
/// with low mel bins at the bottom. Normalized intensity v maps to
/// RGB (128 + 127v, 128(1 − v), 128(1 − v)): mid-gray for the minimum
/// (and for constant maps), saturated red for the maximum.
pub fn export_heatmap(cam: &CamMap, stem: &Path) -> Result<()> {
    let (t, m) = cam.values.dim();

    let mut text = String::new();
    for i in 0..t {
        for j in 0..m {
            if j > 0 {
                text.push(',');
            }
            let _ = write!(text, "{:.9e}", cam.values[[i, j]]);
        }
        text.push('\n');
    }
    std::fs::write(stem.with_extension("csv"), text)?;

    let normed = normalize(&cam.values);
    let mut ppm = format!("P6\n{t} {m}\n255\n").into_bytes();
    for row in 0..m {
        let mel = m - 1 - row;
        for frame in 0..t {
            let v = normed[[frame, mel]];
            let r = (128.0 + 127.0 * v).round().clamp(0.0, 255.0) as u8;
            let gb = (128.0 * (1.0 - v)).round().clamp(0.0, 255.0) as u8;
            ppm.extend_from_slice(&[r, gb, gb]);
        }
    }
    std::fs::write(stem.with_extension("ppm"), ppm)?;
    Ok(())
}
