//! Regenerates the checked-in fixtures under `data/`: example hulls and
//! templates, the simulation default config, and the golden rasterization.
//!
//! The golden PGM is produced by the brute-force reference rasterizer in
//! this file (per-pixel point-in-polygon with painter depth compare), not by
//! the engine, so the CLI test pins the engine against an independent
//! rendering.
//!
//! Run from the workspace root: `cargo run -p pph-cli --example gen_fixtures`

use std::path::PathBuf;

use pph_core::geometry::KeypointFile;
use pph_core::hull::{CategorySchema, HullSchema, PlaneSchema, Registry};
use pph_core::{KeypointSet2D, KeypointSet3D};

fn box_schema() -> CategorySchema {
    CategorySchema {
        id: "box".into(),
        keypoints: (0..8).map(|i| format!("corner_{i}")).collect(),
        planes: vec![
            PlaneSchema { name: "bottom".into(), vertices: vec![0, 1, 2, 3] },
            PlaneSchema { name: "top".into(), vertices: vec![4, 5, 6, 7] },
            PlaneSchema { name: "front".into(), vertices: vec![0, 1, 5, 4] },
            PlaneSchema { name: "back".into(), vertices: vec![3, 2, 6, 7] },
            PlaneSchema { name: "right".into(), vertices: vec![1, 2, 6, 5] },
            PlaneSchema { name: "left".into(), vertices: vec![0, 3, 7, 4] },
        ],
    }
}

fn box_template() -> Vec<[f64; 3]> {
    vec![
        [-0.5, -0.5, -0.5],
        [0.5, -0.5, -0.5],
        [0.5, 0.5, -0.5],
        [-0.5, 0.5, -0.5],
        [-0.5, -0.5, 0.5],
        [0.5, -0.5, 0.5],
        [0.5, 0.5, 0.5],
        [-0.5, 0.5, 0.5],
    ]
}

fn wedge_schema() -> CategorySchema {
    CategorySchema {
        id: "wedge".into(),
        keypoints: (0..6).map(|i| format!("k{i}")).collect(),
        planes: vec![
            PlaneSchema { name: "base".into(), vertices: vec![0, 1, 2, 3] },
            PlaneSchema { name: "slope_a".into(), vertices: vec![0, 1, 5, 4] },
            PlaneSchema { name: "slope_b".into(), vertices: vec![3, 2, 5, 4] },
            PlaneSchema { name: "end_a".into(), vertices: vec![0, 3, 4] },
            PlaneSchema { name: "end_b".into(), vertices: vec![1, 2, 5] },
        ],
    }
}

fn wedge_template() -> Vec<[f64; 3]> {
    vec![
        [-1.0, -0.6, 0.0],
        [1.0, -0.6, 0.0],
        [1.0, 0.6, 0.0],
        [-1.0, 0.6, 0.0],
        [-1.0, 0.0, 1.0],
        [1.0, 0.0, 1.0],
    ]
}

fn toycar_schema() -> CategorySchema {
    CategorySchema {
        id: "toycar".into(),
        keypoints: vec![
            "floor_fl".into(),
            "floor_fr".into(),
            "floor_rr".into(),
            "floor_rl".into(),
            "belt_fl".into(),
            "belt_fr".into(),
            "belt_rr".into(),
            "belt_rl".into(),
            "roof_fl".into(),
            "roof_fr".into(),
            "roof_rr".into(),
            "roof_rl".into(),
        ],
        planes: vec![
            PlaneSchema { name: "floor".into(), vertices: vec![0, 1, 2, 3] },
            PlaneSchema { name: "side_lower_l".into(), vertices: vec![0, 1, 5, 4] },
            PlaneSchema { name: "side_lower_r".into(), vertices: vec![3, 2, 6, 7] },
            PlaneSchema { name: "front".into(), vertices: vec![1, 2, 6, 5] },
            PlaneSchema { name: "rear".into(), vertices: vec![0, 3, 7, 4] },
            PlaneSchema { name: "window_l".into(), vertices: vec![4, 5, 9, 8] },
            PlaneSchema { name: "window_r".into(), vertices: vec![7, 6, 10, 11] },
            PlaneSchema { name: "hood".into(), vertices: vec![5, 6, 10, 9] },
            PlaneSchema { name: "rear_slope".into(), vertices: vec![4, 7, 11, 8] },
            PlaneSchema { name: "roof".into(), vertices: vec![8, 9, 10, 11] },
        ],
    }
}

fn toycar_template() -> Vec<[f64; 3]> {
    // x along the car, y across, z up; front at x = +1.
    vec![
        [-1.0, -0.45, 0.0],
        [1.0, -0.45, 0.0],
        [1.0, 0.45, 0.0],
        [-1.0, 0.45, 0.0],
        [-1.0, -0.45, 0.5],
        [1.0, -0.45, 0.5],
        [1.0, 0.45, 0.5],
        [-1.0, 0.45, 0.5],
        [-0.55, -0.45, 0.95],
        [0.35, -0.45, 0.95],
        [0.35, 0.45, 0.95],
        [-0.55, 0.45, 0.95],
    ]
}

/// Reference rasterizer: per-pixel point-in-polygon with least-squares
/// depth planes, brute-force occlusion fractions and painter compositing.
mod reference {
    pub struct Poly {
        pub class_id: u16,
        pub vertices: Vec<[f64; 2]>,
        pub depths: Vec<f64>,
    }

    fn orient(a: [f64; 2], b: [f64; 2], p: [f64; 2]) -> f64 {
        (b[0] - a[0]) * (p[1] - a[1]) - (b[1] - a[1]) * (p[0] - a[0])
    }

    fn covers(poly: &Poly, p: [f64; 2]) -> bool {
        let v0 = poly.vertices[0];
        for i in 1..poly.vertices.len() - 1 {
            let (b, c) = (poly.vertices[i], poly.vertices[i + 1]);
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

    /// Uncentered 3x3 normal equations solved by Cramer's rule.
    fn fit(poly: &Poly) -> [f64; 3] {
        let n = poly.vertices.len() as f64;
        let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
        let (mut sz, mut sxz, mut syz) = (0.0, 0.0, 0.0);
        for (v, &z) in poly.vertices.iter().zip(&poly.depths) {
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

    pub fn render(polys: &[Poly], width: usize, height: usize) -> Vec<u8> {
        let fits: Vec<[f64; 3]> = polys.iter().map(fit).collect();
        let depth_at = |pi: usize, p: [f64; 2]| fits[pi][0] * p[0] + fits[pi][1] * p[1] + fits[pi][2];

        // Occlusion fractions with every plane participating.
        let mut visible = vec![true; polys.len()];
        for (pi, poly) in polys.iter().enumerate() {
            let mut footprint = 0usize;
            let mut occluded = 0usize;
            for row in 0..height {
                for col in 0..width {
                    let p = [col as f64 + 0.5, row as f64 + 0.5];
                    if !covers(poly, p) {
                        continue;
                    }
                    footprint += 1;
                    let z = depth_at(pi, p);
                    let behind = polys.iter().enumerate().any(|(qi, q)| {
                        qi != pi && covers(q, p) && depth_at(qi, p) < z - 1e-9
                    });
                    occluded += behind as usize;
                }
            }
            visible[pi] = footprint == 0 || (occluded as f64 / footprint as f64) <= 0.5;
        }

        let mut bytes = vec![0u8; width * height];
        for row in 0..height {
            for col in 0..width {
                let p = [col as f64 + 0.5, row as f64 + 0.5];
                let mut best: Option<(f64, u16)> = None;
                for (pi, poly) in polys.iter().enumerate() {
                    if !visible[pi] || !covers(poly, p) {
                        continue;
                    }
                    let z = depth_at(pi, p);
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
                bytes[row * width + col] = best.map_or(0, |(_, c)| c as u8);
            }
        }
        let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
        out.extend_from_slice(&bytes);
        out
    }
}

fn main() {
    let data = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data");
    for sub in ["hulls", "templates", "golden", "sim"] {
        std::fs::create_dir_all(data.join(sub)).unwrap();
    }

    // Hull schemas, one file per category plus the combined demo registry.
    let cats = [box_schema(), wedge_schema(), toycar_schema()];
    for cat in &cats {
        let reg = Registry::from_schema(&HullSchema { categories: vec![cat.clone()] }).unwrap();
        reg.save(data.join(format!("hulls/{}.json", cat.id))).unwrap();
    }
    Registry::from_schema(&HullSchema { categories: cats.to_vec() })
        .unwrap()
        .save(data.join("hulls/demo.json"))
        .unwrap();

    // Canonical 3D templates.
    for (id, coords) in [
        ("box", box_template()),
        ("wedge", wedge_template()),
        ("toycar", toycar_template()),
    ] {
        let set = KeypointSet3D::new(coords).unwrap();
        KeypointFile::from_3d(id, &set)
            .save(data.join(format!("templates/{id}.json")))
            .unwrap();
    }

    // Golden rasterization scene: the box template under a fixed rotation,
    // centered on a 32x32 grid in pixel units.
    let (ry, rx) = (35f64.to_radians(), 25f64.to_radians());
    let (sy, cy) = ry.sin_cos();
    let (sx, cx) = rx.sin_cos();
    let rotate = |p: [f64; 3]| {
        // R = Rx * Ry
        let q = [cy * p[0] + sy * p[2], p[1], -sy * p[0] + cy * p[2]];
        [q[0], cx * q[1] - sx * q[2], sx * q[1] + cx * q[2]]
    };
    let scale = 9.0;
    let center = 16.0;
    let rotated: Vec<[f64; 3]> = box_template().into_iter().map(rotate).collect();
    let pixels: Vec<[f64; 2]> = rotated
        .iter()
        .map(|p| [center + scale * p[0], center + scale * p[1]])
        .collect();
    let depths: Vec<f64> = rotated.iter().map(|p| p[2]).collect();

    let mut kp = KeypointFile::from_2d("box", &KeypointSet2D::all_visible(pixels.clone()).unwrap());
    kp.pixels = Some(true);
    kp.image_size = Some([32, 32]);
    kp.save(data.join("golden/box_keypoints.json")).unwrap();
    let depths_json = serde_json::json!({ "category": "box", "depths": depths });
    std::fs::write(
        data.join("golden/box_depths.json"),
        format!("{depths_json:#}\n"),
    )
    .unwrap();

    let polys: Vec<reference::Poly> = box_schema()
        .planes
        .iter()
        .enumerate()
        .map(|(i, plane)| reference::Poly {
            class_id: 1 + i as u16,
            vertices: plane.vertices.iter().map(|&v| pixels[v]).collect(),
            depths: plane.vertices.iter().map(|&v| depths[v]).collect(),
        })
        .collect();
    std::fs::write(
        data.join("golden/box_raster.pgm"),
        reference::render(&polys, 32, 32),
    )
    .unwrap();

    // Default simulation config over all three categories.
    let sim = serde_json::json!({
        "hull": "../hulls/demo.json",
        "templates": {
            "box": "../templates/box.json",
            "wedge": "../templates/wedge.json",
            "toycar": "../templates/toycar.json"
        },
        "grid": { "width": 64, "height": 64 },
        "samples": 200,
        "label_fraction": 0.25,
        "recursions": 3,
        "basis": { "deform_rows": 3, "deform_scale": 0.12 },
        "noise": {
            "kp_noise_std": 0.05,
            "depth_flip_prob": 0.0,
            "logit_snr": 6.0,
            "mc_jitter_std": 1.0,
            "dropout_p": 0.2,
            "mc_runs": 50
        },
        "p_threshold": 0.05,
        "exempt_background": true,
        "targets": { "n_candidates": 8, "noise_std": 0.01 },
        "seed": 7
    });
    std::fs::write(data.join("sim/default.json"), format!("{sim:#}\n")).unwrap();

    println!("fixtures written under {}", data.display());
}
