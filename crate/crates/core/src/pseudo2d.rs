//! Exploration-exploitation 2D pseudo-target generation.
//!
//! The current keypoint estimates induce a reference planar map; jittered
//! copies of the keypoints induce candidate maps. For every keypoint we pick
//! the containing reference plane that best matches the segmentation
//! pseudo-label, then the best instance of that plane across all candidate
//! maps, and finally average the selected polygons' vertex positions.

use std::collections::BTreeSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::geometry::{KeypointSet2D, KeypointSet3D};
use crate::hull::{Category, Registry};
use crate::raster::{
    build_planar_map, iou_counts, rasterize, rasterize_polygon, Frame, MaskGrid, PlanarMap,
};
use crate::visibility::{resolve_depth_flip, with_estimated_visibility};

/// Default jitter, in normalized keypoint units.
pub const DEFAULT_NOISE_STD: f64 = 0.01;

/// Knobs for candidate generation and plane selection.
#[derive(Debug, Clone, Copy)]
pub struct PseudoTargetConfig {
    /// Number of jittered candidate maps (the reference map is extra).
    pub n_candidates: usize,
    /// Gaussian noise applied to candidate x-y locations, world units.
    pub noise_std: f64,
    pub rng_seed: u64,
    /// Score each plane's IOU from an isolated rasterization of that polygon
    /// (default) rather than its footprint within the full depth-ordered map.
    pub isolate_planes: bool,
}

impl Default for PseudoTargetConfig {
    fn default() -> Self {
        Self {
            n_candidates: 8,
            noise_std: DEFAULT_NOISE_STD,
            rng_seed: 0,
            isolate_planes: true,
        }
    }
}

/// Reference map plus jittered candidate maps. Index 0 is always the
/// reference; all maps share plane structure and class ids.
#[derive(Debug, Clone)]
pub struct CandidateSet {
    pub maps: Vec<PlanarMap>,
    /// Per-map keypoint coordinates in world units (pre-viewport), used to
    /// read vertex positions back out of selected polygons.
    pub world: Vec<Vec<[f64; 2]>>,
}

impl CandidateSet {
    pub fn reference(&self) -> &PlanarMap {
        &self.maps[0]
    }

    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

/// Builds the reference map from `y` plus `cfg.n_candidates` jittered maps.
/// Depths come from `x` with the resolved `sign` and are never perturbed;
/// per-plane visibility is estimated on every map.
pub fn build_candidates(
    y: &KeypointSet2D,
    x: &KeypointSet3D,
    registry: &Registry,
    category_id: &str,
    cfg: &PseudoTargetConfig,
    sign: i8,
    frame: &Frame,
) -> Result<CandidateSet> {
    let cat = registry.category(category_id)?;
    let k = cat.keypoint_count();
    if y.len() != k || x.len() != k {
        return Err(Error::Dimension(format!(
            "category `{category_id}` has {k} keypoints, got {} 2D and {} 3D",
            y.len(),
            x.len()
        )));
    }
    let depths: Vec<f64> = x.coords.iter().map(|p| f64::from(sign) * p[2]).collect();
    let noise = Normal::new(0.0, cfg.noise_std)
        .map_err(|e| Error::Config(format!("bad noise std {}: {e}", cfg.noise_std)))?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.rng_seed);
    let all_visible = vec![true; cat.plane_count()];

    let mut maps = Vec::with_capacity(cfg.n_candidates + 1);
    let mut world = Vec::with_capacity(cfg.n_candidates + 1);
    for q in 0..=cfg.n_candidates {
        let coords: Vec<[f64; 2]> = if q == 0 {
            y.coords.clone()
        } else {
            y.coords
                .iter()
                .map(|p| [p[0] + noise.sample(&mut rng), p[1] + noise.sample(&mut rng)])
                .collect()
        };
        let pixels = KeypointSet2D {
            coords: frame.viewport.map_all(&coords),
            visibility: y.visibility.clone(),
        };
        let map = build_planar_map(registry, category_id, &pixels, &depths, &all_visible)?;
        maps.push(with_estimated_visibility(&map, frame.width, frame.height));
        world.push(coords);
    }
    Ok(CandidateSet { maps, world })
}

/// Footprint of one plane of a map, either rasterized alone or carved out of
/// the full depth-ordered rendering.
fn plane_footprint(map: &PlanarMap, plane_idx: usize, frame: &Frame, isolate: bool) -> MaskGrid {
    if isolate {
        rasterize_polygon(&map.planes[plane_idx], frame.width, frame.height)
    } else {
        rasterize(map, frame.width, frame.height)
    }
}

/// First selection stage: among the visible reference-map planes containing
/// keypoint `kp`, the plane (index) whose footprint best matches the
/// pseudo-label's class region. `None` when no containing plane is visible
/// or every candidate IOU has an empty denominator. Ties pick the lowest
/// class.
pub fn select_reference_plane(
    category: &Category,
    kp: usize,
    reference: &PlanarMap,
    label: &MaskGrid,
    frame: &Frame,
    isolate: bool,
) -> Result<Option<(usize, f64)>> {
    if kp >= category.keypoint_count() {
        return Err(Error::KeypointOutOfRange {
            index: kp,
            len: category.keypoint_count(),
        });
    }
    let mut best: Option<(usize, f64)> = None;
    for pi in category.planes_containing(kp) {
        let poly = &reference.planes[pi];
        if !poly.visible {
            continue;
        }
        let footprint = plane_footprint(reference, pi, frame, isolate);
        let (inter, union) = iou_counts(&footprint, label, poly.class_id, true)?;
        if union == 0 {
            continue;
        }
        let score = inter as f64 / union as f64;
        if best.map_or(true, |(_, s)| score > s) {
            best = Some((pi, score));
        }
    }
    Ok(best)
}

/// Second selection stage: the best-scoring instance of plane `plane_idx`
/// across all candidate maps. Ties prefer the reference instance (then the
/// lowest map index). Returns `(map_index, iou)`.
pub fn select_best_instance(
    set: &CandidateSet,
    plane_idx: usize,
    label: &MaskGrid,
    frame: &Frame,
    isolate: bool,
) -> Result<(usize, f64)> {
    let class_id = set.maps[0].planes[plane_idx].class_id;
    let mut best = (0usize, f64::NEG_INFINITY);
    for (mi, map) in set.maps.iter().enumerate() {
        let footprint = plane_footprint(map, plane_idx, frame, isolate);
        let (inter, union) = iou_counts(&footprint, label, class_id, true)?;
        let score = if union == 0 {
            0.0
        } else {
            inter as f64 / union as f64
        };
        if score > best.1 {
            best = (mi, score);
        }
    }
    Ok(best)
}

/// Per-keypoint record of what the selection stages chose.
#[derive(Debug, Clone, Serialize)]
pub struct KeypointSelection {
    pub keypoint: usize,
    /// Global class of the selected plane; absent when no plane qualified.
    pub plane_class: Option<u16>,
    /// Candidate map the winning instance came from (0 = reference).
    pub map_index: Option<usize>,
    pub iou: Option<f64>,
}

/// Pseudo-targets plus provenance.
#[derive(Debug, Clone)]
pub struct PseudoTargets {
    pub targets: KeypointSet2D,
    pub sign: i8,
    pub selections: Vec<KeypointSelection>,
}

/// Runs the two selection stages for every keypoint and averages the chosen
/// polygons' vertex positions. Keypoints with no qualifying plane keep their
/// current estimate. With `chosen_sign` absent the depth direction is
/// resolved against `label` itself.
pub fn generate_pseudo_targets(
    y: &KeypointSet2D,
    x: &KeypointSet3D,
    label: &MaskGrid,
    registry: &Registry,
    category_id: &str,
    cfg: &PseudoTargetConfig,
    frame: &Frame,
    chosen_sign: Option<i8>,
) -> Result<PseudoTargets> {
    let cat = registry.category(category_id)?;
    if label.width() != frame.width || label.height() != frame.height {
        return Err(Error::Dimension(format!(
            "label {}x{} vs frame {}x{}",
            label.width(),
            label.height(),
            frame.width,
            frame.height
        )));
    }
    let sign = match chosen_sign {
        Some(s) => s,
        None => resolve_depth_flip(x, y, registry, category_id, label, &frame.viewport)?.0,
    };
    let set = build_candidates(y, x, registry, category_id, cfg, sign, frame)?;

    let k = cat.keypoint_count();
    let mut chosen: Vec<Option<(usize, usize, f64)>> = Vec::with_capacity(k);
    for kp in 0..k {
        let reference =
            select_reference_plane(cat, kp, set.reference(), label, frame, cfg.isolate_planes)?;
        match reference {
            None => chosen.push(None),
            Some((plane_idx, _)) => {
                let (map_idx, score) =
                    select_best_instance(&set, plane_idx, label, frame, cfg.isolate_planes)?;
                chosen.push(Some((plane_idx, map_idx, score)));
            }
        }
    }

    // Union of selected polygons, deduplicated by (map, plane).
    let pool: BTreeSet<(usize, usize)> = chosen
        .iter()
        .flatten()
        .map(|&(plane_idx, map_idx, _)| (map_idx, plane_idx))
        .collect();

    let mut coords = Vec::with_capacity(k);
    let mut selections = Vec::with_capacity(k);
    for kp in 0..k {
        match chosen[kp] {
            None => {
                coords.push(y.coords[kp]);
                selections.push(KeypointSelection {
                    keypoint: kp,
                    plane_class: None,
                    map_index: None,
                    iou: None,
                });
            }
            Some((plane_idx, map_idx, score)) => {
                let positions: Vec<[f64; 2]> = pool
                    .iter()
                    .filter(|(_, pi)| cat.planes[*pi].vertices.contains(&kp))
                    .map(|(mi, _)| set.world[*mi][kp])
                    .collect();
                debug_assert!(!positions.is_empty(), "own selection contains the keypoint");
                coords.push(mean_point(&positions));
                selections.push(KeypointSelection {
                    keypoint: kp,
                    plane_class: Some(cat.class_of_plane(plane_idx)),
                    map_index: Some(map_idx),
                    iou: Some(score),
                });
            }
        }
    }
    Ok(PseudoTargets {
        targets: KeypointSet2D {
            coords,
            visibility: y.visibility.clone(),
        },
        sign,
        selections,
    })
}

/// Mean of 2D points. Identical inputs return the value itself so that the
/// closed loop (no jitter, or reference-only pools) is bit-exact.
fn mean_point(points: &[[f64; 2]]) -> [f64; 2] {
    let first = points[0];
    if points.iter().all(|p| *p == first) {
        return first;
    }
    let n = points.len() as f64;
    let sx: f64 = points.iter().map(|p| p[0]).sum();
    let sy: f64 = points.iter().map(|p| p[1]).sum();
    [sx / n, sy / n]
}
