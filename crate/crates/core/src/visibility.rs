//! Per-plane visibility from predicted 3D keypoints: occlusion-area
//! reasoning plus depth-flip disambiguation against a segmentation estimate.

use crate::error::Result;
use crate::geometry::{KeypointSet2D, KeypointSet3D};
use crate::hull::Registry;
use crate::raster::{
    for_each_covered_pixel, mean_class_iou, rasterize, MaskGrid, PlanarMap, Viewport,
};

/// Depth comparisons treat planes closer than this as coincident, so shared
/// edges do not occlude each other.
const DEPTH_TOL: f64 = 1e-9;

/// Fraction of each plane's projected footprint that lies strictly behind
/// some other plane. All planes participate regardless of their visibility
/// flags; zero-footprint planes report 0.
pub fn occlusion_fractions(map: &PlanarMap, width: usize, height: usize) -> Vec<f64> {
    let n = width * height;
    // Two-level depth buffer: nearest depth with its plane index, plus the
    // runner-up depth, so each plane can compare against "everyone else".
    let mut best = vec![f64::INFINITY; n];
    let mut best_plane = vec![usize::MAX; n];
    let mut second = vec![f64::INFINITY; n];
    for (pi, poly) in map.planes.iter().enumerate() {
        for_each_covered_pixel(poly, width, height, |row, col, z| {
            let idx = row * width + col;
            if z < best[idx] {
                second[idx] = best[idx];
                best[idx] = z;
                best_plane[idx] = pi;
            } else if z < second[idx] {
                second[idx] = z;
            }
        });
    }
    map.planes
        .iter()
        .enumerate()
        .map(|(pi, poly)| {
            let mut footprint = 0usize;
            let mut occluded = 0usize;
            for_each_covered_pixel(poly, width, height, |row, col, z| {
                let idx = row * width + col;
                footprint += 1;
                let nearest_other = if best_plane[idx] == pi {
                    second[idx]
                } else {
                    best[idx]
                };
                if nearest_other < z - DEPTH_TOL {
                    occluded += 1;
                }
            });
            if footprint == 0 {
                0.0
            } else {
                occluded as f64 / footprint as f64
            }
        })
        .collect()
}

/// A plane is visible unless more than half of its footprint is occluded.
pub fn estimate_visibility(map: &PlanarMap, width: usize, height: usize) -> Vec<bool> {
    occlusion_fractions(map, width, height)
        .into_iter()
        .map(|f| f <= 0.5)
        .collect()
}

/// Copy of `map` with visibility flags replaced by the occlusion estimate.
pub fn with_estimated_visibility(map: &PlanarMap, width: usize, height: usize) -> PlanarMap {
    let flags = estimate_visibility(map, width, height);
    let mut out = map.clone();
    for (poly, flag) in out.planes.iter_mut().zip(flags) {
        poly.visible = flag;
    }
    out
}

/// Orthographic depth ambiguity resolution: renders the planar map with the
/// given and the reversed depths, and keeps the direction whose rasterization
/// agrees best (mean class IOU) with the segmentation estimate. Ties pick +1.
///
/// Returns the chosen sign and the winning map, visibility flags set.
pub fn resolve_depth_flip(
    x: &KeypointSet3D,
    y: &KeypointSet2D,
    registry: &Registry,
    category_id: &str,
    seg_estimate: &MaskGrid,
    viewport: &Viewport,
) -> Result<(i8, PlanarMap)> {
    let cat = registry.category(category_id)?;
    let width = seg_estimate.width();
    let height = seg_estimate.height();
    let pixels = KeypointSet2D {
        coords: viewport.map_all(&y.coords),
        visibility: y.visibility.clone(),
    };
    let all_visible = vec![true; cat.plane_count()];
    let mut scored = Vec::with_capacity(2);
    for sign in [1i8, -1i8] {
        let depths: Vec<f64> = x.coords.iter().map(|p| f64::from(sign) * p[2]).collect();
        let map = crate::raster::build_planar_map(registry, category_id, &pixels, &depths, &all_visible)?;
        let map = with_estimated_visibility(&map, width, height);
        let rendered = rasterize(&map, width, height);
        let score = mean_class_iou(&rendered, seg_estimate, cat.class_range(), true)?;
        scored.push((sign, score, map));
    }
    let (sign_p, score_p, map_p) = scored.remove(0);
    let (sign_m, score_m, map_m) = scored.remove(0);
    if score_p >= score_m {
        Ok((sign_p, map_p))
    } else {
        Ok((sign_m, map_m))
    }
}
