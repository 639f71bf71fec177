//! Category registry for piecewise planar hulls.
//!
//! A hull is an ordered list of keypoint cliques per category; each clique
//! spans a planar polygon. The registry assigns global keypoint indices and
//! segmentation class ids across categories (class 0 is the shared
//! background) and validates the two hull rules: every keypoint appears in
//! at least one plane, and no two planes of a category may intersect in 3D
//! except along shared edges.

use std::collections::HashSet;
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::KeypointSet3D;

/// On-disk hull description. Canonical serialization keeps the key order of
/// the struct declarations, 2-space indentation and a trailing newline.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HullSchema {
    pub categories: Vec<CategorySchema>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CategorySchema {
    pub id: String,
    pub keypoints: Vec<String>,
    pub planes: Vec<PlaneSchema>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PlaneSchema {
    pub name: String,
    pub vertices: Vec<usize>,
}

/// A planar polygon described by keypoint indices local to its category.
/// Vertex order defines the polygon boundary.
#[derive(Debug, Clone)]
pub struct Plane {
    pub name: String,
    pub vertices: Vec<usize>,
}

impl Plane {
    /// Boundary edges as unordered index pairs.
    fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        let n = self.vertices.len();
        (0..n).map(move |i| {
            let a = self.vertices[i];
            let b = self.vertices[(i + 1) % n];
            (a.min(b), a.max(b))
        })
    }
}

/// One object category: named keypoints plus the planes of its hull.
#[derive(Debug, Clone)]
pub struct Category {
    pub id: String,
    pub keypoint_names: Vec<String>,
    pub planes: Vec<Plane>,
    /// Global segmentation class of this category's first plane.
    pub class_offset: u16,
    /// Global index of this category's first keypoint.
    pub keypoint_offset: usize,
}

impl Category {
    pub fn keypoint_count(&self) -> usize {
        self.keypoint_names.len()
    }

    pub fn plane_count(&self) -> usize {
        self.planes.len()
    }

    /// Global class id of plane `index`.
    pub fn class_of_plane(&self, index: usize) -> u16 {
        self.class_offset + index as u16
    }

    /// Global class ids covered by this category, as a half-open range.
    pub fn class_range(&self) -> std::ops::Range<u16> {
        self.class_offset..self.class_offset + self.planes.len() as u16
    }

    /// Indices of planes whose clique contains the local keypoint `kp`.
    pub fn planes_containing(&self, kp: usize) -> impl Iterator<Item = usize> + '_ {
        self.planes
            .iter()
            .enumerate()
            .filter(move |(_, p)| p.vertices.contains(&kp))
            .map(|(i, _)| i)
    }
}

/// Boolean vector selecting one category's block out of the global keypoint
/// stack.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SelectionMask {
    bits: Vec<bool>,
}

impl SelectionMask {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn len(&self) -> usize {
        self.bits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bits.is_empty()
    }

    pub fn count_ones(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    /// Global indices with a set bit, in ascending order.
    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.bits
            .iter()
            .enumerate()
            .filter(|(_, b)| **b)
            .map(|(i, _)| i)
    }
}

/// Immutable collection of categories with the global keypoint/class layout.
#[derive(Debug, Clone)]
pub struct Registry {
    categories: Vec<Category>,
    total_keypoints: usize,
    total_classes: u16,
}

impl Registry {
    /// Builds a registry from a schema, checking all category invariants and
    /// assigning keypoint and class offsets.
    pub fn from_schema(schema: &HullSchema) -> Result<Self> {
        if schema.categories.is_empty() {
            return Err(Error::Schema("hull has no categories".into()));
        }
        let mut seen = HashSet::new();
        let mut categories = Vec::with_capacity(schema.categories.len());
        let mut keypoint_offset = 0usize;
        let mut class_offset = 1u32; // class 0 is the shared background
        for cat in &schema.categories {
            if !seen.insert(cat.id.clone()) {
                return Err(Error::Schema(format!("duplicate category id `{}`", cat.id)));
            }
            let k = cat.keypoints.len();
            if k < 3 {
                return Err(Error::Schema(format!(
                    "category `{}` has {} keypoints, need at least 3",
                    cat.id, k
                )));
            }
            if cat.planes.is_empty() {
                return Err(Error::Schema(format!("category `{}` has no planes", cat.id)));
            }
            let mut covered = vec![false; k];
            for plane in &cat.planes {
                if plane.vertices.len() < 3 {
                    return Err(Error::Schema(format!(
                        "plane `{}` of category `{}` has fewer than 3 vertices",
                        plane.name, cat.id
                    )));
                }
                let mut in_plane = HashSet::new();
                for &v in &plane.vertices {
                    if v >= k {
                        return Err(Error::Schema(format!(
                            "plane `{}` of category `{}` references keypoint {} (only {} defined)",
                            plane.name, cat.id, v, k
                        )));
                    }
                    if !in_plane.insert(v) {
                        return Err(Error::Schema(format!(
                            "plane `{}` of category `{}` repeats keypoint {}",
                            plane.name, cat.id, v
                        )));
                    }
                    covered[v] = true;
                }
            }
            if let Some(orphan) = covered.iter().position(|c| !c) {
                return Err(Error::Schema(format!(
                    "orphan keypoint: `{}` (index {}) of category `{}` appears in no plane",
                    cat.keypoints[orphan], orphan, cat.id
                )));
            }
            let s_z = cat.planes.len() as u32;
            if class_offset + s_z > u16::MAX as u32 {
                return Err(Error::Schema("too many segmentation classes".into()));
            }
            categories.push(Category {
                id: cat.id.clone(),
                keypoint_names: cat.keypoints.clone(),
                planes: cat
                    .planes
                    .iter()
                    .map(|p| Plane {
                        name: p.name.clone(),
                        vertices: p.vertices.clone(),
                    })
                    .collect(),
                class_offset: class_offset as u16,
                keypoint_offset,
            });
            keypoint_offset += k;
            class_offset += s_z;
        }
        Ok(Registry {
            categories,
            total_keypoints: keypoint_offset,
            total_classes: class_offset as u16,
        })
    }

    /// Loads and validates a hull schema file.
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let schema: HullSchema = serde_json::from_str(&text)?;
        Self::from_schema(&schema)
    }

    /// Writes the canonical form of the registry's schema.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_canonical_json())?;
        Ok(())
    }

    pub fn to_schema(&self) -> HullSchema {
        HullSchema {
            categories: self
                .categories
                .iter()
                .map(|c| CategorySchema {
                    id: c.id.clone(),
                    keypoints: c.keypoint_names.clone(),
                    planes: c
                        .planes
                        .iter()
                        .map(|p| PlaneSchema {
                            name: p.name.clone(),
                            vertices: p.vertices.clone(),
                        })
                        .collect(),
                })
                .collect(),
        }
    }

    /// Canonical JSON: declaration key order, 2-space indent, LF endings,
    /// trailing newline. `save(load(f))` reproduces a canonical `f` byte for
    /// byte.
    pub fn to_canonical_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(&self.to_schema()).expect("schema is serializable");
        text.push('\n');
        text
    }

    pub fn categories(&self) -> &[Category] {
        &self.categories
    }

    /// Total keypoint count across categories.
    pub fn total_keypoints(&self) -> usize {
        self.total_keypoints
    }

    /// Total segmentation class count, including background class 0.
    pub fn total_classes(&self) -> u16 {
        self.total_classes
    }

    pub fn category(&self, id: &str) -> Result<&Category> {
        self.categories
            .iter()
            .find(|c| c.id == id)
            .ok_or_else(|| Error::UnknownCategory(id.to_string()))
    }

    /// Selection vector with ones exactly on `category_id`'s keypoint block.
    pub fn selection_mask(&self, category_id: &str) -> Result<SelectionMask> {
        let cat = self.category(category_id)?;
        let mut bits = vec![false; self.total_keypoints];
        for b in &mut bits[cat.keypoint_offset..cat.keypoint_offset + cat.keypoint_count()] {
            *b = true;
        }
        Ok(SelectionMask { bits })
    }
}

/// A pair of planes whose interiors intersect on the template.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlanePairViolation {
    pub plane_a: usize,
    pub plane_b: usize,
    pub name_a: String,
    pub name_b: String,
}

/// Outcome of checking a category's hull against a 3D template.
#[derive(Debug, Clone, Default)]
pub struct ValidationReport {
    pub violations: Vec<PlanePairViolation>,
    /// Planes whose vertices are collinear on the template (warning only).
    pub degenerate_planes: Vec<usize>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }
}

const INTERSECT_TOL: f64 = 1e-9;

/// Checks that no two hull planes intersect in 3D on `template` except along
/// shared vertices or shared edges. Polygons are fan-triangulated from their
/// first vertex.
pub fn validate_hull(category: &Category, template: &KeypointSet3D) -> Result<ValidationReport> {
    let k = category.keypoint_count();
    if template.len() != k {
        return Err(Error::Dimension(format!(
            "template has {} points, category `{}` has {} keypoints",
            template.len(),
            category.id,
            k
        )));
    }
    let pts: Vec<Vector3<f64>> = template
        .coords
        .iter()
        .map(|p| Vector3::new(p[0], p[1], p[2]))
        .collect();

    let mut report = ValidationReport::default();
    let tris: Vec<Vec<[Vector3<f64>; 3]>> = category
        .planes
        .iter()
        .enumerate()
        .map(|(pi, plane)| {
            let tris = fan_triangles(plane, &pts);
            if tris.is_empty() {
                report.degenerate_planes.push(pi);
            }
            tris
        })
        .collect();

    for a in 0..category.planes.len() {
        for b in a + 1..category.planes.len() {
            let pa = &category.planes[a];
            let pb = &category.planes[b];
            let shared: Vec<usize> = pa
                .vertices
                .iter()
                .copied()
                .filter(|v| pb.vertices.contains(v))
                .collect();
            let shared_points: Vec<Vector3<f64>> = shared.iter().map(|&i| pts[i]).collect();
            let edges_b: HashSet<(usize, usize)> = pb.edges().collect();
            let shared_edges: Vec<(Vector3<f64>, Vector3<f64>)> = pa
                .edges()
                .filter(|e| edges_b.contains(e))
                .map(|(u, v)| (pts[u], pts[v]))
                .collect();

            let mut violated = false;
            'pair: for ta in &tris[a] {
                for tb in &tris[b] {
                    match tri_tri_contact(ta, tb) {
                        Contact::None => {}
                        Contact::Coplanar => {
                            if coplanar_overlap_area(ta, tb) > 1e-12 {
                                violated = true;
                                break 'pair;
                            }
                        }
                        Contact::Span(p, q) => {
                            let probes = [
                                p,
                                q,
                                0.5 * (p + q),
                                0.75 * p + 0.25 * q,
                                0.25 * p + 0.75 * q,
                            ];
                            let confined = probes.iter().all(|x| {
                                on_shared_feature(x, &shared_points, &shared_edges, 1e-7)
                            });
                            if !confined {
                                violated = true;
                                break 'pair;
                            }
                        }
                    }
                }
            }
            if violated {
                report.violations.push(PlanePairViolation {
                    plane_a: a,
                    plane_b: b,
                    name_a: pa.name.clone(),
                    name_b: pb.name.clone(),
                });
            }
        }
    }
    Ok(report)
}

/// Fan triangulation from vertex 0, dropping zero-area triangles.
fn fan_triangles(plane: &Plane, pts: &[Vector3<f64>]) -> Vec<[Vector3<f64>; 3]> {
    let v = &plane.vertices;
    let mut tris = Vec::with_capacity(v.len().saturating_sub(2));
    for i in 1..v.len() - 1 {
        let (a, b, c) = (pts[v[0]], pts[v[i]], pts[v[i + 1]]);
        let area2 = (b - a).cross(&(c - a)).norm();
        if area2 > 1e-12 {
            tris.push([a, b, c]);
        }
    }
    tris
}

enum Contact {
    None,
    Coplanar,
    /// Intersection segment (endpoints may coincide for a point contact).
    Span(Vector3<f64>, Vector3<f64>),
}

/// Triangle/triangle contact via the two-plane clipping formulation: each
/// triangle is sliced by the other's supporting plane and the two slice
/// segments are intersected on the common line.
fn tri_tri_contact(t1: &[Vector3<f64>; 3], t2: &[Vector3<f64>; 3]) -> Contact {
    let n1 = unit_normal(t1);
    let n2 = unit_normal(t2);
    let (n1, n2) = match (n1, n2) {
        (Some(a), Some(b)) => (a, b),
        _ => return Contact::None, // degenerate triangle: no interior to hit
    };
    let d1 = n1.dot(&t1[0]);
    let d2 = n2.dot(&t2[0]);

    let dist2: Vec<f64> = t2.iter().map(|v| n1.dot(v) - d1).collect();
    if dist2.iter().all(|d| d.abs() <= INTERSECT_TOL) {
        return Contact::Coplanar;
    }
    if dist2.iter().all(|d| *d > INTERSECT_TOL) || dist2.iter().all(|d| *d < -INTERSECT_TOL) {
        return Contact::None;
    }
    let dist1: Vec<f64> = t1.iter().map(|v| n2.dot(v) - d2).collect();
    if dist1.iter().all(|d| d.abs() <= INTERSECT_TOL) {
        return Contact::Coplanar;
    }
    if dist1.iter().all(|d| *d > INTERSECT_TOL) || dist1.iter().all(|d| *d < -INTERSECT_TOL) {
        return Contact::None;
    }

    let seg1 = plane_slice(t1, &dist1);
    let seg2 = plane_slice(t2, &dist2);
    let (s1, s2) = match (seg1, seg2) {
        (Some(a), Some(b)) => (a, b),
        _ => return Contact::None,
    };

    // Both segments lie on the intersection line of the two planes.
    let dir = n1.cross(&n2);
    let dn = dir.norm();
    if dn <= INTERSECT_TOL {
        return Contact::None; // nearly parallel but not coplanar
    }
    let dir = dir / dn;
    let param = |p: &Vector3<f64>| dir.dot(p);
    let (a1, b1) = order(param(&s1.0), param(&s1.1));
    let (a2, b2) = order(param(&s2.0), param(&s2.1));
    let lo = a1.max(a2);
    let hi = b1.min(b2);
    if lo > hi + INTERSECT_TOL {
        return Contact::None;
    }
    let origin = s1.0;
    let base = param(&origin);
    let point_at = |t: f64| origin + (t - base) * dir;
    let hi = hi.max(lo);
    Contact::Span(point_at(lo), point_at(hi))
}

fn order(a: f64, b: f64) -> (f64, f64) {
    if a <= b {
        (a, b)
    } else {
        (b, a)
    }
}

fn unit_normal(t: &[Vector3<f64>; 3]) -> Option<Vector3<f64>> {
    let n = (t[1] - t[0]).cross(&(t[2] - t[0]));
    let len = n.norm();
    if len <= 1e-12 {
        None
    } else {
        Some(n / len)
    }
}

/// Segment where a triangle crosses a plane, given the signed vertex
/// distances. Returns `None` when the crossing degenerates to nothing.
fn plane_slice(
    t: &[Vector3<f64>; 3],
    dist: &[f64],
) -> Option<(Vector3<f64>, Vector3<f64>)> {
    let mut points: Vec<Vector3<f64>> = Vec::with_capacity(2);
    let mut push = |p: Vector3<f64>| {
        if !points.iter().any(|q| (q - p).norm() <= 1e-9) {
            points.push(p);
        }
    };
    for i in 0..3 {
        let j = (i + 1) % 3;
        let (di, dj) = (dist[i], dist[j]);
        if di.abs() <= INTERSECT_TOL {
            push(t[i]);
        }
        if (di > INTERSECT_TOL && dj < -INTERSECT_TOL) || (di < -INTERSECT_TOL && dj > INTERSECT_TOL)
        {
            let s = di / (di - dj);
            push(t[i] + s * (t[j] - t[i]));
        }
    }
    match points.len() {
        0 => None,
        1 => Some((points[0], points[0])),
        _ => Some((points[0], points[1])),
    }
}

/// True when `x` lies within `tol` of a shared vertex or shared edge.
fn on_shared_feature(
    x: &Vector3<f64>,
    points: &[Vector3<f64>],
    edges: &[(Vector3<f64>, Vector3<f64>)],
    tol: f64,
) -> bool {
    if points.iter().any(|p| (x - p).norm() <= tol) {
        return true;
    }
    edges.iter().any(|(a, b)| {
        let ab = b - a;
        let len2 = ab.norm_squared();
        let t = if len2 > 0.0 {
            ((x - a).dot(&ab) / len2).clamp(0.0, 1.0)
        } else {
            0.0
        };
        (x - (a + t * ab)).norm() <= tol
    })
}

/// Overlap area of two coplanar triangles (Sutherland-Hodgman clip in the
/// dominant projection plane of the shared normal).
fn coplanar_overlap_area(t1: &[Vector3<f64>; 3], t2: &[Vector3<f64>; 3]) -> f64 {
    let n = match unit_normal(t1) {
        Some(n) => n,
        None => return 0.0,
    };
    let (ax0, ax1) = dominant_axes(&n);
    let proj = |p: &Vector3<f64>| [p[ax0], p[ax1]];
    let mut subject: Vec<[f64; 2]> = t1.iter().map(proj).collect();
    let clip: Vec<[f64; 2]> = t2.iter().map(proj).collect();
    let clip_signed = polygon_area_2d(&clip);
    // Orient the clip polygon counter-clockwise so inside tests agree.
    let clip: Vec<[f64; 2]> = if clip_signed < 0.0 {
        clip.into_iter().rev().collect()
    } else {
        clip
    };
    for i in 0..clip.len() {
        let a = clip[i];
        let b = clip[(i + 1) % clip.len()];
        let inside = |p: &[f64; 2]| (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
        let input = std::mem::take(&mut subject);
        if input.is_empty() {
            return 0.0;
        }
        for j in 0..input.len() {
            let cur = input[j];
            let prev = input[(j + input.len() - 1) % input.len()];
            let dc = inside(&cur);
            let dp = inside(&prev);
            if dc >= 0.0 {
                if dp < 0.0 {
                    subject.push(intersect_2d(prev, cur, dp, dc));
                }
                subject.push(cur);
            } else if dp >= 0.0 {
                subject.push(intersect_2d(prev, cur, dp, dc));
            }
        }
    }
    polygon_area_2d(&subject).abs()
}

fn dominant_axes(n: &Vector3<f64>) -> (usize, usize) {
    let a = [n[0].abs(), n[1].abs(), n[2].abs()];
    if a[0] >= a[1] && a[0] >= a[2] {
        (1, 2)
    } else if a[1] >= a[2] {
        (0, 2)
    } else {
        (0, 1)
    }
}

fn intersect_2d(p: [f64; 2], q: [f64; 2], dp: f64, dq: f64) -> [f64; 2] {
    let t = dp / (dp - dq);
    [p[0] + t * (q[0] - p[0]), p[1] + t * (q[1] - p[1])]
}

fn polygon_area_2d(poly: &[[f64; 2]]) -> f64 {
    if poly.len() < 3 {
        return 0.0;
    }
    let mut acc = 0.0;
    for i in 0..poly.len() {
        let a = poly[i];
        let b = poly[(i + 1) % poly.len()];
        acc += a[0] * b[1] - b[0] * a[1];
    }
    0.5 * acc
}
