//! Shared test support: an independent brute-force reference rasterizer and
//! fixture loading. The reference implementation deliberately avoids the
//! engine's code paths (per-pixel polygon loop, Cramer-rule plane fit) so
//! equivalence checks mean something.

use std::collections::BTreeMap;
use std::path::PathBuf;

use pph_core::geometry::KeypointFile;
use pph_core::hull::Registry;
use pph_core::raster::{MaskGrid, PlanarMap};
use pph_core::KeypointSet3D;

pub fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data")
}

pub fn demo_registry() -> Registry {
    Registry::load(data_dir().join("hulls/demo.json")).expect("demo hull loads")
}

pub fn demo_templates() -> BTreeMap<String, KeypointSet3D> {
    let mut out = BTreeMap::new();
    for id in ["box", "wedge", "toycar"] {
        let file = KeypointFile::load(data_dir().join(format!("templates/{id}.json")))
            .expect("template loads");
        out.insert(id.to_string(), file.to_3d().expect("template is 3D"));
    }
    out
}

fn orient(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
    (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
}

fn covers(vertices: &[[f64; 2]], p: [f64; 2]) -> bool {
    let v0 = vertices[0];
    for i in 1..vertices.len() - 1 {
        let (b, c) = (vertices[i], vertices[i + 1]);
        if orient(v0, b, c) == 0.0 {
            continue;
        }
        let d1 = orient(v0, b, p);
        let d2 = orient(b, c, p);
        let d3 = orient(c, v0, p);
        let neg = d1 < 0.0 || d2 < 0.0 || d3 < 0.0;
        let pos = d1 > 0.0 || d2 > 0.0 || d3 > 0.0;
        if !(neg && pos) {
            return true;
        }
    }
    false
}

/// Least-squares depth plane from the uncentered 3x3 normal equations,
/// solved with Cramer's rule (the engine centers its system instead).
fn fit(vertices: &[[f64; 2]], depths: &[f64]) -> [f64; 3] {
    let n = vertices.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    let (mut sz, mut sxz, mut syz) = (0.0, 0.0, 0.0);
    for (v, &z) in vertices.iter().zip(depths) {
        sx += v[0];
        sy += v[1];
        sxx += v[0] * v[0];
        sxy += v[0] * v[1];
        syy += v[1] * v[1];
        sz += z;
        sxz += v[0] * z;
        syz += v[1] * z;
    }
    let det3 = |m: [[f64; 3]; 3]| {
        m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1])
            - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
            + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0])
    };
    let a = [[sxx, sxy, sx], [sxy, syy, sy], [sx, sy, n]];
    let d = det3(a);
    if d.abs() <= 1e-12 {
        return [0.0, 0.0, sz / n];
    }
    let da = det3([[sxz, sxy, sx], [syz, syy, sy], [sz, sy, n]]);
    let db = det3([[sxx, sxz, sx], [sxy, syz, sy], [sx, sz, n]]);
    let dc = det3([[sxx, sxy, sxz], [sxy, syy, syz], [sx, sy, sz]]);
    [da / d, db / d, dc / d]
}

/// Brute-force reference rasterization: every pixel against every visible
/// polygon, nearest depth wins, exact ties to the lower class id.
pub fn reference_rasterize(map: &PlanarMap, width: usize, height: usize) -> MaskGrid {
    let fits: Vec<Option<[f64; 3]>> = map
        .planes
        .iter()
        .map(|poly| {
            if poly.visible && poly.vertices.len() >= 3 {
                Some(fit(&poly.vertices, &poly.depths))
            } else {
                None
            }
        })
        .collect();
    let mut grid = MaskGrid::new(width, height);
    for row in 0..height {
        for col in 0..width {
            let p = [col as f64 + 0.5, row as f64 + 0.5];
            let mut best: Option<(f64, u16)> = None;
            for (poly, coeffs) in map.planes.iter().zip(&fits) {
                let coeffs = match coeffs {
                    Some(c) => c,
                    None => continue,
                };
                if !covers(&poly.vertices, p) {
                    continue;
                }
                let z = coeffs[0] * p[0] + coeffs[1] * p[1] + coeffs[2];
                best = match best {
                    None => Some((z, poly.class_id)),
                    Some((bz, bc)) => {
                        if z < bz || (z == bz && poly.class_id < bc) {
                            Some((z, poly.class_id))
                        } else {
                            Some((bz, bc))
                        }
                    }
                };
            }
            if let Some((_, c)) = best {
                grid.set(row, col, c);
            }
        }
    }
    grid
}
