//! Evaluable training losses: L1 keypoint loss, certain-pixel cross-entropy
//! and the Huber reprojection loss. No gradients here; these are the scalar
//! objectives.

use crate::error::{Error, Result};
use crate::geometry::{KeypointSet2D, KeypointSet3D};
use crate::raster::{MaskGrid, UNCERTAIN};
use crate::uncertainty::LogitsGrid;

/// Sum of absolute coordinate differences over the target's visible
/// keypoints.
pub fn loss_2d(target: &KeypointSet2D, pred: &KeypointSet2D) -> Result<f64> {
    if target.len() != pred.len() {
        return Err(Error::Dimension(format!(
            "target has {} keypoints, prediction {}",
            target.len(),
            pred.len()
        )));
    }
    let mut acc = 0.0;
    for ((t, p), &vis) in target
        .coords
        .iter()
        .zip(&pred.coords)
        .zip(&target.visibility)
    {
        if vis {
            acc += (t[0] - p[0]).abs() + (t[1] - p[1]).abs();
        }
    }
    Ok(acc)
}

/// Cross-entropy over the certain pixels of a pseudo-label.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SegLoss {
    pub value: f64,
    /// Set when the target had no certain pixel at all (value is 0).
    pub no_certain_pixels: bool,
}

/// Mean over non-uncertain pixels of the negative log softmax probability of
/// the target class.
pub fn loss_seg(target: &MaskGrid, logits: &LogitsGrid) -> Result<SegLoss> {
    if target.width() != logits.width() || target.height() != logits.height() {
        return Err(Error::Dimension(format!(
            "target {}x{} vs logits {}x{}",
            target.width(),
            target.height(),
            logits.width(),
            logits.height()
        )));
    }
    let s = logits.classes();
    let mut acc = 0.0;
    let mut count = 0usize;
    for row in 0..target.height() {
        for col in 0..target.width() {
            let class = target.get(row, col);
            if class == UNCERTAIN {
                continue;
            }
            let class = class as usize;
            if class >= s {
                return Err(Error::Dimension(format!(
                    "target class {class} but logits have {s} classes"
                )));
            }
            let pixel = logits.pixel(row, col);
            let max = pixel.iter().copied().fold(f32::NEG_INFINITY, f32::max) as f64;
            let log_sum: f64 = pixel
                .iter()
                .map(|&l| (l as f64 - max).exp())
                .sum::<f64>()
                .ln();
            acc += -(pixel[class] as f64 - max) + log_sum;
            count += 1;
        }
    }
    if count == 0 {
        Ok(SegLoss {
            value: 0.0,
            no_certain_pixels: true,
        })
    } else {
        Ok(SegLoss {
            value: acc / count as f64,
            no_certain_pixels: false,
        })
    }
}

/// Huber kernel with knee `delta`.
pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Default Huber knee in normalized keypoint units.
pub const DEFAULT_HUBER_DELTA: f64 = 1.0;

/// Reprojection loss: elementwise Huber between the 2D estimates and the
/// orthographic projection (x-y) of the 3D estimates, summed.
pub fn loss_reproj(y_hat: &KeypointSet2D, x_hat: &KeypointSet3D, delta: f64) -> Result<f64> {
    if y_hat.len() != x_hat.len() {
        return Err(Error::Dimension(format!(
            "{} 2D keypoints vs {} 3D keypoints",
            y_hat.len(),
            x_hat.len()
        )));
    }
    let mut acc = 0.0;
    for (y, x) in y_hat.coords.iter().zip(&x_hat.coords) {
        acc += huber(y[0] - x[0], delta) + huber(y[1] - x[1], delta);
    }
    Ok(acc)
}

/// Weights for the combined objective; the defaults leave every term at 1.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub w_2d: f64,
    pub w_seg: f64,
    pub w_reproj: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            w_2d: 1.0,
            w_seg: 1.0,
            w_reproj: 1.0,
        }
    }
}

/// Weighted sum of the three loss terms.
pub fn combined_loss(l2d: f64, lseg: f64, lreproj: f64, weights: &LossWeights) -> f64 {
    weights.w_2d * l2d + weights.w_seg * lseg + weights.w_reproj * lreproj
}
