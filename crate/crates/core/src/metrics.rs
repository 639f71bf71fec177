//! Evaluation metrics for keypoint sets.

use crate::error::{Error, Result};
use crate::geometry::{KeypointSet2D, KeypointSet3D};

fn check_len(a: usize, b: usize) -> Result<()> {
    if a != b {
        return Err(Error::Dimension(format!("{a} keypoints vs {b}")));
    }
    if a == 0 {
        return Err(Error::Dimension("empty keypoint sets".into()));
    }
    Ok(())
}

/// Mean per-joint position error: mean Euclidean distance between paired 3D
/// keypoints.
pub fn mpjpe(a: &KeypointSet3D, b: &KeypointSet3D) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let total: f64 = a
        .coords
        .iter()
        .zip(&b.coords)
        .map(|(p, q)| {
            ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
        })
        .sum();
    Ok(total / a.len() as f64)
}

/// Pairwise-distance stress: sum over i < j of the absolute difference of
/// the two sets' pairwise distances, divided by K(K-1). Invariant under
/// independent rigid motions of either set.
pub fn stress(a: &KeypointSet3D, b: &KeypointSet3D) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let k = a.len();
    if k < 2 {
        return Err(Error::Dimension("stress needs at least 2 keypoints".into()));
    }
    let dist = |p: &[f64; 3], q: &[f64; 3]| {
        ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt()
    };
    let mut acc = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            acc += (dist(&a.coords[i], &a.coords[j]) - dist(&b.coords[i], &b.coords[j])).abs();
        }
    }
    Ok(acc / (k * (k - 1)) as f64)
}

/// Mean Euclidean 2D keypoint distance.
pub fn mean_l2_2d(a: &KeypointSet2D, b: &KeypointSet2D) -> Result<f64> {
    check_len(a.len(), b.len())?;
    let total: f64 = a
        .coords
        .iter()
        .zip(&b.coords)
        .map(|(p, q)| ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2)).sqrt())
        .sum();
    Ok(total / a.len() as f64)
}
