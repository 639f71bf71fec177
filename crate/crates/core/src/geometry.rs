//! Shape-basis composition, rotations, orthographic projection and keypoint
//! normalization.

use std::path::Path;

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hull::SelectionMask;

/// Stacked 2D keypoints of one sample with per-keypoint visibility.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet2D {
    pub coords: Vec<[f64; 2]>,
    pub visibility: Vec<bool>,
}

impl KeypointSet2D {
    pub fn new(coords: Vec<[f64; 2]>, visibility: Vec<bool>) -> Result<Self> {
        if coords.len() != visibility.len() {
            return Err(Error::Dimension(format!(
                "{} coordinates vs {} visibility flags",
                coords.len(),
                visibility.len()
            )));
        }
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite 2D keypoint coordinate".into()));
        }
        Ok(Self { coords, visibility })
    }

    /// All keypoints visible.
    pub fn all_visible(coords: Vec<[f64; 2]>) -> Result<Self> {
        let vis = vec![true; coords.len()];
        Self::new(coords, vis)
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    pub fn visible_count(&self) -> usize {
        self.visibility.iter().filter(|v| **v).count()
    }
}

/// Stacked 3D keypoints in the camera frame.
#[derive(Debug, Clone, PartialEq)]
pub struct KeypointSet3D {
    pub coords: Vec<[f64; 3]>,
}

impl KeypointSet3D {
    pub fn new(coords: Vec<[f64; 3]>) -> Result<Self> {
        if coords.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite 3D keypoint coordinate".into()));
        }
        Ok(Self { coords })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }

    /// Camera-axis depths (z column).
    pub fn depths(&self) -> Vec<f64> {
        self.coords.iter().map(|p| p[2]).collect()
    }

    /// Copy with every depth multiplied by `sign`.
    pub fn with_depth_sign(&self, sign: f64) -> Self {
        Self {
            coords: self
                .coords
                .iter()
                .map(|p| [p[0], p[1], sign * p[2]])
                .collect(),
        }
    }
}

/// Linear shape basis: `d` rows of flattened k-point 3D shapes (x0, y0, z0,
/// x1, ...).
#[derive(Debug, Clone)]
pub struct ShapeBasis {
    matrix: DMatrix<f64>,
}

impl ShapeBasis {
    /// Validates that the rows are linearly independent (rank check with
    /// tolerance 1e-8) and that the column count is a multiple of 3.
    pub fn new(matrix: DMatrix<f64>) -> Result<Self> {
        if matrix.ncols() % 3 != 0 || matrix.ncols() == 0 || matrix.nrows() == 0 {
            return Err(Error::Dimension(format!(
                "basis must be d x 3k, got {}x{}",
                matrix.nrows(),
                matrix.ncols()
            )));
        }
        let rank = matrix.clone().svd(false, false).rank(1e-8);
        if rank < matrix.nrows() {
            return Err(Error::Schema(format!(
                "basis rows are linearly dependent (rank {} < {})",
                rank,
                matrix.nrows()
            )));
        }
        Ok(Self { matrix })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn keypoint_count(&self) -> usize {
        self.matrix.ncols() / 3
    }

    pub fn matrix(&self) -> &DMatrix<f64> {
        &self.matrix
    }
}

/// Validated element of SO(3).
#[derive(Debug, Clone, PartialEq)]
pub struct Rotation {
    matrix: Matrix3<f64>,
}

impl Rotation {
    pub fn new(matrix: Matrix3<f64>) -> Result<Self> {
        let gram = matrix.transpose() * matrix;
        let eye = Matrix3::identity();
        let ortho_err = (gram - eye).abs().max();
        let det = matrix.determinant();
        if ortho_err > 1e-9 || (det - 1.0).abs() > 1e-9 {
            return Err(Error::Schema(format!(
                "not a rotation: |R'R - I| = {ortho_err:.2e}, det = {det:.12}"
            )));
        }
        Ok(Self { matrix })
    }

    pub fn identity() -> Self {
        Self {
            matrix: Matrix3::identity(),
        }
    }

    /// Rotation by `angle` radians about the camera z axis.
    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self {
            matrix: Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0),
        }
    }

    pub fn matrix(&self) -> &Matrix3<f64> {
        &self.matrix
    }
}

/// Shape coefficients: one weight per basis row.
#[derive(Debug, Clone, PartialEq)]
pub struct Coefficients {
    pub values: Vec<f64>,
}

impl Coefficients {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::Schema("non-finite shape coefficient".into()));
        }
        Ok(Self { values })
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

/// Composes a 3D shape as the coefficient-weighted sum of basis rows and
/// reshapes the flat row into k points: point j takes columns
/// (3j, 3j+1, 3j+2) as (x, y, z).
pub fn compose_shape(alpha: &Coefficients, basis: &ShapeBasis) -> Result<KeypointSet3D> {
    if alpha.len() != basis.dim() {
        return Err(Error::Dimension(format!(
            "{} coefficients for a {}-row basis",
            alpha.len(),
            basis.dim()
        )));
    }
    let k = basis.keypoint_count();
    let m = basis.matrix();
    let mut coords = vec![[0.0f64; 3]; k];
    for (row, &w) in alpha.values.iter().enumerate() {
        if w == 0.0 {
            continue;
        }
        for j in 0..k {
            coords[j][0] += w * m[(row, 3 * j)];
            coords[j][1] += w * m[(row, 3 * j + 1)];
            coords[j][2] += w * m[(row, 3 * j + 2)];
        }
    }
    KeypointSet3D::new(coords)
}

/// Orthographic projection: rotate and drop z. All keypoints are marked
/// visible; occlusion reasoning happens downstream.
pub fn project(x: &KeypointSet3D, rotation: &Rotation) -> KeypointSet2D {
    let r = rotation.matrix();
    let coords = x
        .coords
        .iter()
        .map(|p| {
            [
                r[(0, 0)] * p[0] + r[(0, 1)] * p[1] + r[(0, 2)] * p[2],
                r[(1, 0)] * p[0] + r[(1, 1)] * p[1] + r[(1, 2)] * p[2],
            ]
        })
        .collect();
    KeypointSet2D {
        visibility: vec![true; x.len()],
        coords,
    }
}

/// Rotates a shape into the camera frame (full 3D, no projection).
pub fn rotate(x: &KeypointSet3D, rotation: &Rotation) -> KeypointSet3D {
    let r = rotation.matrix();
    KeypointSet3D {
        coords: x
            .coords
            .iter()
            .map(|p| {
                [
                    r[(0, 0)] * p[0] + r[(0, 1)] * p[1] + r[(0, 2)] * p[2],
                    r[(1, 0)] * p[0] + r[(1, 1)] * p[1] + r[(1, 2)] * p[2],
                    r[(2, 0)] * p[0] + r[(2, 1)] * p[1] + r[(2, 2)] * p[2],
                ]
            })
            .collect(),
    }
}

/// Centers the visible keypoints on their centroid and divides by the
/// root-mean-square radius. Returns the transform `(centroid, scale)` so the
/// normalization can be inverted: `y = y_norm * scale + centroid`. A
/// degenerate spread (single point) keeps scale 1.
pub fn normalize(y: &KeypointSet2D) -> Result<(KeypointSet2D, [f64; 2], f64)> {
    let visible: Vec<&[f64; 2]> = y
        .coords
        .iter()
        .zip(&y.visibility)
        .filter(|(_, v)| **v)
        .map(|(c, _)| c)
        .collect();
    if visible.is_empty() {
        return Err(Error::NoVisibleKeypoints);
    }
    let n = visible.len() as f64;
    let centroid = [
        visible.iter().map(|p| p[0]).sum::<f64>() / n,
        visible.iter().map(|p| p[1]).sum::<f64>() / n,
    ];
    let ms = visible
        .iter()
        .map(|p| {
            let dx = p[0] - centroid[0];
            let dy = p[1] - centroid[1];
            dx * dx + dy * dy
        })
        .sum::<f64>()
        / n;
    let mut scale = ms.sqrt();
    if scale <= 0.0 {
        scale = 1.0;
    }
    let coords = y
        .coords
        .iter()
        .map(|p| [(p[0] - centroid[0]) / scale, (p[1] - centroid[1]) / scale])
        .collect();
    Ok((
        KeypointSet2D {
            coords,
            visibility: y.visibility.clone(),
        },
        centroid,
        scale,
    ))
}

/// Gathers the rows of a global keypoint stack selected by `mask`. An
/// all-zero mask yields an empty set.
pub fn apply_selection(full: &[[f64; 2]], mask: &SelectionMask) -> Result<KeypointSet2D> {
    if full.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs mask of length {}",
            full.len(),
            mask.len()
        )));
    }
    let coords: Vec<[f64; 2]> = mask.indices().map(|i| full[i]).collect();
    KeypointSet2D::all_visible(coords)
}

/// Selects a category's block from a globally composed 3D shape.
pub fn select_shape(full: &KeypointSet3D, mask: &SelectionMask) -> Result<KeypointSet3D> {
    if full.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "{} rows vs mask of length {}",
            full.len(),
            mask.len()
        )));
    }
    Ok(KeypointSet3D {
        coords: mask.indices().map(|i| full.coords[i]).collect(),
    })
}

/// Keypoint file: 2D entries are `[x, y]`, the 3D variant uses `[x, y, z]`.
/// Coordinates are in normalized units unless `pixels` is set, in which case
/// `image_size` gives the grid they refer to.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct KeypointFile {
    pub category: String,
    pub coords: Vec<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub visibility: Option<Vec<bool>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pixels: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub image_size: Option<[usize; 2]>,
}

impl KeypointFile {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Ok(serde_json::from_str(&text)?)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn from_2d(category: &str, set: &KeypointSet2D) -> Self {
        Self {
            category: category.to_string(),
            coords: set.coords.iter().map(|p| vec![p[0], p[1]]).collect(),
            visibility: Some(set.visibility.clone()),
            pixels: None,
            image_size: None,
        }
    }

    pub fn from_3d(category: &str, set: &KeypointSet3D) -> Self {
        Self {
            category: category.to_string(),
            coords: set.coords.iter().map(|p| p.to_vec()).collect(),
            visibility: None,
            pixels: None,
            image_size: None,
        }
    }

    pub fn is_pixels(&self) -> bool {
        self.pixels.unwrap_or(false)
    }

    pub fn to_2d(&self) -> Result<KeypointSet2D> {
        let coords = self
            .coords
            .iter()
            .map(|row| {
                if row.len() < 2 {
                    Err(Error::Schema("keypoint entry needs at least x and y".into()))
                } else {
                    Ok([row[0], row[1]])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        let visibility = self
            .visibility
            .clone()
            .unwrap_or_else(|| vec![true; coords.len()]);
        KeypointSet2D::new(coords, visibility)
    }

    pub fn to_3d(&self) -> Result<KeypointSet3D> {
        let coords = self
            .coords
            .iter()
            .map(|row| {
                if row.len() != 3 {
                    Err(Error::Schema(format!(
                        "3D keypoint entry has {} values, need [x, y, z]",
                        row.len()
                    )))
                } else {
                    Ok([row[0], row[1], row[2]])
                }
            })
            .collect::<Result<Vec<_>>>()?;
        KeypointSet3D::new(coords)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    fn basis_from_rows(rows: Vec<Vec<f64>>) -> ShapeBasis {
        let d = rows.len();
        let w = rows[0].len();
        ShapeBasis::new(DMatrix::from_fn(d, w, |r, c| rows[r][c])).unwrap()
    }

    #[test]
    fn identity_composition_recovers_template() {
        let flat = vec![1.0, 2.0, 3.0, -4.0, 0.5, 6.0];
        let basis = basis_from_rows(vec![flat.clone()]);
        let x = compose_shape(&Coefficients::new(vec![1.0]).unwrap(), &basis).unwrap();
        assert_eq!(x.coords, vec![[1.0, 2.0, 3.0], [-4.0, 0.5, 6.0]]);
    }

    #[test]
    fn zero_coefficients_give_zero_shape() {
        let basis = basis_from_rows(vec![vec![1.0, 2.0, 3.0], vec![0.0, 1.0, 0.0]]);
        let x = compose_shape(&Coefficients::new(vec![0.0, 0.0]).unwrap(), &basis).unwrap();
        assert_eq!(x.coords, vec![[0.0, 0.0, 0.0]]);
    }

    #[test]
    fn two_row_composition_matches_vector_addition() {
        // Oracle: adding the raw rows elementwise before reshaping.
        let r1 = vec![0.5, -1.0, 2.0, 3.0, 0.0, 1.0];
        let r2 = vec![1.5, 2.0, -1.0, 0.5, 0.25, -2.0];
        let expect: Vec<f64> = r1.iter().zip(&r2).map(|(a, b)| a + b).collect();
        let basis = basis_from_rows(vec![r1, r2]);
        let x = compose_shape(&Coefficients::new(vec![1.0, 1.0]).unwrap(), &basis).unwrap();
        for j in 0..2 {
            for c in 0..3 {
                assert_eq!(x.coords[j][c], expect[3 * j + c]);
            }
        }
    }

    #[test]
    fn composition_dimension_mismatch() {
        let basis = basis_from_rows(vec![vec![1.0, 2.0, 3.0]]);
        assert!(compose_shape(&Coefficients::new(vec![1.0, 2.0]).unwrap(), &basis).is_err());
    }

    #[test]
    fn rank_deficient_basis_rejected() {
        let m = DMatrix::from_row_slice(2, 3, &[1.0, 2.0, 3.0, 2.0, 4.0, 6.0]);
        assert!(ShapeBasis::new(m).is_err());
    }

    #[test]
    fn projection_drops_z_under_identity() {
        let x = KeypointSet3D::new(vec![[1.0, 2.0, 3.0]]).unwrap();
        let y = project(&x, &Rotation::identity());
        assert_eq!(y.coords, vec![[1.0, 2.0]]);
    }

    #[test]
    fn projection_rotates_about_z() {
        let x = KeypointSet3D::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        let y = project(&x, &Rotation::about_z(std::f64::consts::FRAC_PI_2));
        assert_abs_diff_eq!(y.coords[0][0], 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(y.coords[0][1], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn projection_matches_matrix_multiply_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let q = nalgebra::UnitQuaternion::from_quaternion(nalgebra::Quaternion::new(
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
                rng.random::<f64>() - 0.5,
            ));
            let rot = Rotation::new(*q.to_rotation_matrix().matrix()).unwrap();
            let pts: Vec<[f64; 3]> = (0..6)
                .map(|_| {
                    [
                        rng.random::<f64>() * 4.0 - 2.0,
                        rng.random::<f64>() * 4.0 - 2.0,
                        rng.random::<f64>() * 4.0 - 2.0,
                    ]
                })
                .collect();
            let x = KeypointSet3D::new(pts.clone()).unwrap();
            let y = project(&x, &rot);
            for (i, p) in pts.iter().enumerate() {
                let v = rot.matrix() * nalgebra::Vector3::new(p[0], p[1], p[2]);
                assert_abs_diff_eq!(y.coords[i][0], v[0], epsilon = 1e-12);
                assert_abs_diff_eq!(y.coords[i][1], v[1], epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn invalid_rotation_rejected() {
        let mut m = Matrix3::identity();
        m[(0, 0)] = 1.5;
        assert!(Rotation::new(m).is_err());
        // Reflection: orthonormal but det = -1.
        let refl = Matrix3::new(1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, -1.0);
        assert!(Rotation::new(refl).is_err());
    }

    #[test]
    fn normalize_square_example() {
        // Oracle: centroid (2,2); RMS radius of the centered unit square
        // corners is sqrt(2).
        let y = KeypointSet2D::all_visible(vec![[1.0, 1.0], [3.0, 1.0], [1.0, 3.0], [3.0, 3.0]])
            .unwrap();
        let (n, centroid, scale) = normalize(&y).unwrap();
        assert_eq!(centroid, [2.0, 2.0]);
        assert_abs_diff_eq!(scale, 2.0f64.sqrt(), epsilon = 1e-15);
        let s = 2.0f64.sqrt();
        let expect = [[-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0], [1.0, 1.0]];
        for (got, e) in n.coords.iter().zip(expect) {
            assert_abs_diff_eq!(got[0], e[0] / s, epsilon = 1e-15);
            assert_abs_diff_eq!(got[1], e[1] / s, epsilon = 1e-15);
        }
    }

    #[test]
    fn normalize_single_point_and_idempotence() {
        let y = KeypointSet2D::new(vec![[5.0, -2.0], [9.0, 9.0]], vec![true, false]).unwrap();
        let (n, centroid, scale) = normalize(&y).unwrap();
        assert_eq!(n.coords[0], [0.0, 0.0]);
        assert_eq!(centroid, [5.0, -2.0]);
        assert_eq!(scale, 1.0);

        let y = KeypointSet2D::all_visible(vec![[0.4, 0.1], [-0.6, 0.2], [0.2, -0.3]]).unwrap();
        let (n1, _, _) = normalize(&y).unwrap();
        let (n2, c2, s2) = normalize(&n1).unwrap();
        assert_abs_diff_eq!(c2[0], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(c2[1], 0.0, epsilon = 1e-12);
        assert_abs_diff_eq!(s2, 1.0, epsilon = 1e-12);
        for (a, b) in n1.coords.iter().zip(&n2.coords) {
            assert_abs_diff_eq!(a[0], b[0], epsilon = 1e-12);
            assert_abs_diff_eq!(a[1], b[1], epsilon = 1e-12);
        }
    }

    #[test]
    fn normalize_requires_a_visible_point() {
        let y = KeypointSet2D::new(vec![[1.0, 1.0]], vec![false]).unwrap();
        assert!(matches!(normalize(&y), Err(Error::NoVisibleKeypoints)));
    }

    #[test]
    fn selection_gathers_rows() {
        use crate::hull::{CategorySchema, HullSchema, PlaneSchema, Registry};
        let schema = HullSchema {
            categories: vec![
                CategorySchema {
                    id: "a".into(),
                    keypoints: vec!["0".into(), "1".into(), "2".into()],
                    planes: vec![PlaneSchema { name: "p".into(), vertices: vec![0, 1, 2] }],
                },
                CategorySchema {
                    id: "b".into(),
                    keypoints: vec!["0".into(), "1".into(), "2".into()],
                    planes: vec![PlaneSchema { name: "p".into(), vertices: vec![0, 1, 2] }],
                },
            ],
        };
        let reg = Registry::from_schema(&schema).unwrap();
        let full: Vec<[f64; 2]> = (0..6).map(|i| [i as f64, -(i as f64)]).collect();
        let sel = apply_selection(&full, &reg.selection_mask("b").unwrap()).unwrap();
        assert_eq!(sel.coords, vec![[3.0, -3.0], [4.0, -4.0], [5.0, -5.0]]);
        let all = apply_selection(&full[..3], &reg.selection_mask("a").unwrap());
        assert!(all.is_err(), "mask length mismatch must error");
    }
}
