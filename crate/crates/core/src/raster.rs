//! Class-ID mask grids and the planar-map rasterizer.
//!
//! Rasterization covers a pixel when its center lies inside (or exactly on
//! the boundary of) any fan triangle of a visible polygon. Among covering
//! polygons the one with the smallest depth at that pixel wins; exact depth
//! ties go to the lower class id. Per-pixel depth comes from the
//! least-squares plane through the polygon's vertices, which is exact for
//! triangles.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::geometry::KeypointSet2D;
use crate::hull::Registry;

/// Reserved sentinel for "uncertain" pixels; distinct from every class id.
pub const UNCERTAIN: u16 = u16::MAX;

/// H x W grid of segmentation class ids (0 = background) or [`UNCERTAIN`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MaskGrid {
    width: usize,
    height: usize,
    classes: Vec<u16>,
}

impl MaskGrid {
    /// All-background grid.
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            classes: vec![0; width * height],
        }
    }

    pub fn from_classes(width: usize, height: usize, classes: Vec<u16>) -> Result<Self> {
        if classes.len() != width * height {
            return Err(Error::Dimension(format!(
                "{} cells for a {}x{} grid",
                classes.len(),
                width,
                height
            )));
        }
        Ok(Self {
            width,
            height,
            classes,
        })
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> u16 {
        self.classes[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, class: u16) {
        self.classes[row * self.width + col] = class;
    }

    pub fn cells(&self) -> &[u16] {
        &self.classes
    }

    pub fn cells_mut(&mut self) -> &mut [u16] {
        &mut self.classes
    }

    pub fn same_shape(&self, other: &MaskGrid) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn count_class(&self, class: u16) -> usize {
        self.classes.iter().filter(|c| **c == class).count()
    }

    pub fn uncertain_fraction(&self) -> f64 {
        if self.classes.is_empty() {
            return 0.0;
        }
        self.count_class(UNCERTAIN) as f64 / self.classes.len() as f64
    }

    /// Writes the grid as binary PGM (P5, maxval 255). Class ids are stored
    /// as bytes; 255 encodes [`UNCERTAIN`], so class ids must stay below 255.
    pub fn write_pgm(&self, mut w: impl Write) -> Result<()> {
        let mut bytes = Vec::with_capacity(self.classes.len());
        for &c in &self.classes {
            if c == UNCERTAIN {
                bytes.push(255u8);
            } else if c < 255 {
                bytes.push(c as u8);
            } else {
                return Err(Error::Schema(format!(
                    "class {c} cannot be stored in a PGM mask (255 is reserved)"
                )));
            }
        }
        write!(w, "P5\n{} {}\n255\n", self.width, self.height)?;
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn save_pgm(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_pgm(std::io::BufWriter::new(file))
    }

    /// Reads a binary PGM mask; byte 255 maps back to [`UNCERTAIN`].
    pub fn read_pgm(mut r: impl Read) -> Result<Self> {
        let mut data = Vec::new();
        r.read_to_end(&mut data)?;
        let mut pos = 0usize;
        let mut token = |data: &[u8]| -> Result<String> {
            while pos < data.len() && (data[pos].is_ascii_whitespace() || data[pos] == b'#') {
                if data[pos] == b'#' {
                    while pos < data.len() && data[pos] != b'\n' {
                        pos += 1;
                    }
                } else {
                    pos += 1;
                }
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(Error::Schema("truncated PGM header".into()));
            }
            Ok(String::from_utf8_lossy(&data[start..pos]).into_owned())
        };
        let magic = token(&data)?;
        if magic != "P5" {
            return Err(Error::Schema(format!("not a binary PGM (magic `{magic}`)")));
        }
        let width: usize = token(&data)?
            .parse()
            .map_err(|_| Error::Schema("bad PGM width".into()))?;
        let height: usize = token(&data)?
            .parse()
            .map_err(|_| Error::Schema("bad PGM height".into()))?;
        let maxval: usize = token(&data)?
            .parse()
            .map_err(|_| Error::Schema("bad PGM maxval".into()))?;
        if maxval != 255 {
            return Err(Error::Schema(format!("mask PGM must have maxval 255, got {maxval}")));
        }
        pos += 1; // single whitespace after maxval
        if data.len() < pos + width * height {
            return Err(Error::Schema("truncated PGM payload".into()));
        }
        let classes = data[pos..pos + width * height]
            .iter()
            .map(|&b| if b == 255 { UNCERTAIN } else { b as u16 })
            .collect();
        Ok(Self {
            width,
            height,
            classes,
        })
    }

    pub fn load_pgm(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_pgm(std::io::BufReader::new(file))
    }
}

/// One projected hull plane: polygon vertices in pixel coordinates with
/// per-vertex camera depth and a visibility flag.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanePolygon2D {
    pub class_id: u16,
    pub vertices: Vec<[f64; 2]>,
    pub depths: Vec<f64>,
    pub visible: bool,
}

/// The projected hull of one sample.
#[derive(Debug, Clone, PartialEq)]
pub struct PlanarMap {
    pub category_id: String,
    pub planes: Vec<PlanePolygon2D>,
}

/// Affine map from keypoint ("world") coordinates to pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Viewport {
    pub center: [f64; 2],
    pub scale: f64,
}

impl Viewport {
    /// Frames normalized keypoints (RMS radius 1 around the origin) inside a
    /// W x H grid with margin: one world unit maps to min(W, H)/4 pixels.
    pub fn fit(width: usize, height: usize) -> Self {
        Self {
            center: [width as f64 / 2.0, height as f64 / 2.0],
            scale: width.min(height) as f64 / 4.0,
        }
    }

    /// Coordinates already in pixels.
    pub fn identity() -> Self {
        Self {
            center: [0.0, 0.0],
            scale: 1.0,
        }
    }

    #[inline]
    pub fn to_pixels(&self, p: [f64; 2]) -> [f64; 2] {
        [
            self.center[0] + self.scale * p[0],
            self.center[1] + self.scale * p[1],
        ]
    }

    pub fn map_all(&self, pts: &[[f64; 2]]) -> Vec<[f64; 2]> {
        pts.iter().map(|p| self.to_pixels(*p)).collect()
    }
}

/// A raster target: grid dimensions plus the world-to-pixel viewport.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Frame {
    pub width: usize,
    pub height: usize,
    pub viewport: Viewport,
}

impl Frame {
    /// Grid with the default framing for normalized keypoints.
    pub fn fit(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            viewport: Viewport::fit(width, height),
        }
    }

    /// Grid whose input coordinates are already pixels.
    pub fn pixels(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            viewport: Viewport::identity(),
        }
    }
}

/// Gathers one polygon per hull plane of `category_id` from the pixel-space
/// keypoints `y` and per-keypoint `depths`; `visibility` supplies each
/// plane's flag. Class ids are the category's global plane classes.
pub fn build_planar_map(
    registry: &Registry,
    category_id: &str,
    y: &KeypointSet2D,
    depths: &[f64],
    visibility: &[bool],
) -> Result<PlanarMap> {
    let cat = registry.category(category_id)?;
    if y.len() != cat.keypoint_count() || depths.len() != cat.keypoint_count() {
        return Err(Error::Dimension(format!(
            "category `{category_id}` has {} keypoints, got {} coordinates and {} depths",
            cat.keypoint_count(),
            y.len(),
            depths.len()
        )));
    }
    if visibility.len() != cat.plane_count() {
        return Err(Error::Dimension(format!(
            "category `{category_id}` has {} planes, got {} visibility flags",
            cat.plane_count(),
            visibility.len()
        )));
    }
    let planes = cat
        .planes
        .iter()
        .enumerate()
        .map(|(i, plane)| PlanePolygon2D {
            class_id: cat.class_of_plane(i),
            vertices: plane.vertices.iter().map(|&v| y.coords[v]).collect(),
            depths: plane.vertices.iter().map(|&v| depths[v]).collect(),
            visible: visibility[i],
        })
        .collect();
    Ok(PlanarMap {
        category_id: category_id.to_string(),
        planes,
    })
}

/// Least-squares plane z = a*x + b*y + c through (vertex, depth) samples,
/// solved on centered coordinates for conditioning. Degenerate footprints
/// (collinear vertices) fall back to the mean depth.
pub(crate) fn fit_depth_plane(vertices: &[[f64; 2]], depths: &[f64]) -> [f64; 3] {
    let n = vertices.len() as f64;
    let mx = vertices.iter().map(|v| v[0]).sum::<f64>() / n;
    let my = vertices.iter().map(|v| v[1]).sum::<f64>() / n;
    let mz = depths.iter().sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy, mut sxz, mut syz) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (v, &z) in vertices.iter().zip(depths) {
        let dx = v[0] - mx;
        let dy = v[1] - my;
        let dz = z - mz;
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
        sxz += dx * dz;
        syz += dy * dz;
    }
    let det = sxx * syy - sxy * sxy;
    if det.abs() <= 1e-12 * (sxx + syy).max(1.0).powi(2) {
        return [0.0, 0.0, mz];
    }
    let a = (syy * sxz - sxy * syz) / det;
    let b = (sxx * syz - sxy * sxz) / det;
    [a, b, mz - a * mx - b * my]
}

/// Inclusive point-in-triangle test: points exactly on an edge count as
/// inside, for either winding.
#[inline]
pub(crate) fn point_in_triangle(p: [f64; 2], a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> bool {
    let d1 = (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0]);
    let d2 = (c[0] - b[0]) * (p[1] - b[1]) - (c[1] - b[1]) * (p[0] - b[0]);
    let d3 = (a[0] - c[0]) * (p[1] - c[1]) - (a[1] - c[1]) * (p[0] - c[0]);
    let has_neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
    let has_pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
    !(has_neg && has_pos)
}

#[inline]
fn triangle_area2(a: [f64; 2], b: [f64; 2], c: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (c[1] - a[1]) - (b[1] - a[1]) * (c[0] - a[0])
}

/// Pixel-center coverage of one polygon: invokes `hit(row, col, depth)` for
/// every covered pixel center. Ignores the visibility flag; callers decide
/// whether hidden planes participate.
pub(crate) fn for_each_covered_pixel(
    poly: &PlanePolygon2D,
    width: usize,
    height: usize,
    mut hit: impl FnMut(usize, usize, f64),
) {
    if poly.vertices.len() < 3 {
        return;
    }
    let plane = fit_depth_plane(&poly.vertices, &poly.depths);
    let xs = poly.vertices.iter().map(|v| v[0]);
    let ys = poly.vertices.iter().map(|v| v[1]);
    let min_x = xs.clone().fold(f64::INFINITY, f64::min);
    let max_x = xs.fold(f64::NEG_INFINITY, f64::max);
    let min_y = ys.clone().fold(f64::INFINITY, f64::min);
    let max_y = ys.fold(f64::NEG_INFINITY, f64::max);
    if !(min_x.is_finite() && max_y.is_finite()) {
        return;
    }
    let col_lo = (min_x - 0.5).ceil().max(0.0) as usize;
    let col_hi = ((max_x - 0.5).floor() as isize).min(width as isize - 1);
    let row_lo = (min_y - 0.5).ceil().max(0.0) as usize;
    let row_hi = ((max_y - 0.5).floor() as isize).min(height as isize - 1);
    if col_hi < col_lo as isize || row_hi < row_lo as isize {
        return;
    }
    let v0 = poly.vertices[0];
    for row in row_lo..=row_hi as usize {
        let py = row as f64 + 0.5;
        for col in col_lo..=col_hi as usize {
            let px = col as f64 + 0.5;
            let mut inside = false;
            for i in 1..poly.vertices.len() - 1 {
                let (b, c) = (poly.vertices[i], poly.vertices[i + 1]);
                if triangle_area2(v0, b, c) == 0.0 {
                    continue; // zero-area fan triangle covers nothing
                }
                if point_in_triangle([px, py], v0, b, c) {
                    inside = true;
                    break;
                }
            }
            if inside {
                hit(row, col, plane[0] * px + plane[1] * py + plane[2]);
            }
        }
    }
}

/// Rasterizes the visible planes of a map into a class-id grid with
/// painter-correct per-pixel depth ordering.
pub fn rasterize(map: &PlanarMap, width: usize, height: usize) -> MaskGrid {
    let mut grid = MaskGrid::new(width, height);
    let mut depth = vec![f64::INFINITY; width * height];
    for poly in &map.planes {
        if !poly.visible {
            continue;
        }
        for_each_covered_pixel(poly, width, height, |row, col, z| {
            let idx = row * width + col;
            let current = depth[idx];
            if z < current || (z == current && poly.class_id < grid.cells()[idx]) {
                depth[idx] = z;
                grid.cells_mut()[idx] = poly.class_id;
            }
        });
    }
    grid
}

/// Rasterizes a single polygon in isolation (used by the per-plane IOU
/// selections).
pub fn rasterize_polygon(poly: &PlanePolygon2D, width: usize, height: usize) -> MaskGrid {
    let mut grid = MaskGrid::new(width, height);
    if poly.visible {
        for_each_covered_pixel(poly, width, height, |row, col, _| {
            grid.set(row, col, poly.class_id);
        });
    }
    grid
}

/// Intersection and union pixel counts for `class_id`. With
/// `ignore_uncertain`, pixels that are [`UNCERTAIN`] in either grid are
/// excluded from both counts.
pub fn iou_counts(
    a: &MaskGrid,
    b: &MaskGrid,
    class_id: u16,
    ignore_uncertain: bool,
) -> Result<(usize, usize)> {
    if !a.same_shape(b) {
        return Err(Error::Dimension(format!(
            "{}x{} vs {}x{} grids",
            a.width(),
            a.height(),
            b.width(),
            b.height()
        )));
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (&ca, &cb) in a.cells().iter().zip(b.cells()) {
        if ignore_uncertain && (ca == UNCERTAIN || cb == UNCERTAIN) {
            continue;
        }
        let ia = ca == class_id;
        let ib = cb == class_id;
        inter += (ia && ib) as usize;
        union += (ia || ib) as usize;
    }
    Ok((inter, union))
}

/// Intersection over union for one class; 1.0 when the union is empty.
pub fn iou(a: &MaskGrid, b: &MaskGrid, class_id: u16, ignore_uncertain: bool) -> Result<f64> {
    let (inter, union) = iou_counts(a, b, class_id, ignore_uncertain)?;
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as f64 / union as f64)
    }
}

/// Mean IOU over a range of class ids, restricted to classes present in
/// either grid; 1.0 if none are present.
pub fn mean_class_iou(
    a: &MaskGrid,
    b: &MaskGrid,
    classes: std::ops::Range<u16>,
    ignore_uncertain: bool,
) -> Result<f64> {
    let mut total = 0.0;
    let mut count = 0usize;
    for class in classes {
        let present =
            a.cells().iter().any(|&c| c == class) || b.cells().iter().any(|&c| c == class);
        if !present {
            continue;
        }
        total += iou(a, b, class, ignore_uncertain)?;
        count += 1;
    }
    if count == 0 {
        Ok(1.0)
    } else {
        Ok(total / count as f64)
    }
}
