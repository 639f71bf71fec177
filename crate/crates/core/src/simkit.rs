//! Synthetic-world oracle that stands in for the network: seeded scene
//! generation, corrupted predictions (keypoints, 3D shape, Monte-Carlo
//! logits stacks) and the recursion driver that regenerates pseudo-labels
//! and measures their quality against ground truth.
//!
//! The driver replaces gradient training with an explicit coupling: the
//! oracle's next-recursion prediction noise shrinks with the measured
//! pseudo-target quality of the previous recursion.

use std::collections::BTreeMap;
use std::io::Write;

use nalgebra::{DMatrix, Quaternion, UnitQuaternion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Bernoulli, Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{
    compose_shape, normalize, project, rotate, select_shape, Coefficients, KeypointSet2D,
    KeypointSet3D, Rotation, ShapeBasis,
};
use crate::hull::Registry;
use crate::metrics::{mean_l2_2d, mpjpe};
use crate::pseudo2d::{generate_pseudo_targets, PseudoTargetConfig};
use crate::raster::{build_planar_map, mean_class_iou, rasterize, Frame, MaskGrid};
use crate::uncertainty::{
    generate_semantic_pseudo_label, LogitsStack, SemanticLabelConfig, defaults,
};
use crate::visibility::with_estimated_visibility;

/// One synthetic scene with its ground truth.
#[derive(Debug, Clone)]
pub struct SceneSample {
    pub category_id: String,
    pub alpha: Vec<f64>,
    pub rotation: Rotation,
    pub y_true: KeypointSet2D,
    pub x_true: KeypointSet3D,
    pub mask_true: MaskGrid,
    pub labeled: bool,
}

/// Corruption knobs for the prediction oracle.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
#[serde(default)]
pub struct OracleNoise {
    /// Keypoint noise std at zero improvement, in normalized units.
    pub kp_noise_std: f64,
    /// Probability of flipping the sign of every predicted depth.
    pub depth_flip_prob: f64,
    /// Logit magnitude of the true class in the emitted stacks.
    pub logit_snr: f64,
    /// Per-run additive logit noise std.
    pub mc_jitter_std: f64,
    /// Simulated dropout probability on the true-class logit per run.
    pub dropout_p: f64,
    /// Monte-Carlo runs per stack.
    pub mc_runs: usize,
}

impl Default for OracleNoise {
    fn default() -> Self {
        Self {
            kp_noise_std: 0.05,
            depth_flip_prob: 0.0,
            logit_snr: 6.0,
            mc_jitter_std: 1.0,
            dropout_p: defaults::DROPOUT_P,
            mc_runs: defaults::MC_RUNS,
        }
    }
}

impl OracleNoise {
    pub fn validate(&self) -> Result<()> {
        if self.kp_noise_std < 0.0 || self.logit_snr < 0.0 || self.mc_jitter_std < 0.0 {
            return Err(Error::Config("noise magnitudes must be non-negative".into()));
        }
        if !(0.0..=1.0).contains(&self.depth_flip_prob) {
            return Err(Error::Config("depth_flip_prob must lie in [0, 1]".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::Config("dropout_p must lie in [0, 1)".into()));
        }
        if self.mc_runs < 2 {
            return Err(Error::Config("mc_runs must be at least 2".into()));
        }
        Ok(())
    }
}

/// Random shape basis whose first row concatenates the per-category
/// templates (each in its global keypoint block) and whose remaining rows
/// are seeded Gaussian deformations.
pub fn synthetic_basis(
    registry: &Registry,
    templates: &BTreeMap<String, KeypointSet3D>,
    deform_rows: usize,
    deform_scale: f64,
    seed: u64,
) -> Result<ShapeBasis> {
    let k = registry.total_keypoints();
    let d = deform_rows + 1;
    let mut m = DMatrix::zeros(d, 3 * k);
    for cat in registry.categories() {
        let template = templates
            .get(&cat.id)
            .ok_or_else(|| Error::Config(format!("no template for category `{}`", cat.id)))?;
        if template.len() != cat.keypoint_count() {
            return Err(Error::Dimension(format!(
                "template for `{}` has {} points, expected {}",
                cat.id,
                template.len(),
                cat.keypoint_count()
            )));
        }
        for (local, p) in template.coords.iter().enumerate() {
            let col = 3 * (cat.keypoint_offset + local);
            m[(0, col)] = p[0];
            m[(0, col + 1)] = p[1];
            m[(0, col + 2)] = p[2];
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for row in 1..d {
        for col in 0..3 * k {
            m[(row, col)] = deform_scale * rng.sample::<f64, _>(rand_distr::StandardNormal);
        }
    }
    ShapeBasis::new(m)
}

/// Rotation drawn uniformly over SO(3) via a normalized Gaussian quaternion.
fn random_rotation(rng: &mut ChaCha8Rng) -> Rotation {
    let q = Quaternion::new(
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample::<f64, _>(rand_distr::StandardNormal),
        rng.sample::<f64, _>(rand_distr::StandardNormal),
    );
    if q.norm() < 1e-9 {
        return Rotation::identity();
    }
    let unit = UnitQuaternion::from_quaternion(q);
    Rotation::new(*unit.to_rotation_matrix().matrix()).expect("unit quaternion gives SO(3)")
}

/// Generates `n_samples` scenes: i.i.d. standard-normal coefficients,
/// uniform rotations, normalized projections and rasterized true masks.
/// Samples cycle through the registry's categories; the first
/// ceil(label_fraction * n) are marked labeled. Deterministic given `seed`.
pub fn generate_dataset(
    registry: &Registry,
    n_samples: usize,
    label_fraction: f64,
    basis: &ShapeBasis,
    frame: &Frame,
    seed: u64,
) -> Result<Vec<SceneSample>> {
    if !(0.0..=1.0).contains(&label_fraction) {
        return Err(Error::Config(format!(
            "label_fraction {label_fraction} outside [0, 1]"
        )));
    }
    if basis.keypoint_count() != registry.total_keypoints() {
        return Err(Error::Dimension(format!(
            "basis spans {} keypoints, registry has {}",
            basis.keypoint_count(),
            registry.total_keypoints()
        )));
    }
    let labeled_count = (label_fraction * n_samples as f64).ceil() as usize;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let categories = registry.categories();
    let mut samples = Vec::with_capacity(n_samples);
    for i in 0..n_samples {
        let cat = &categories[i % categories.len()];
        let alpha: Vec<f64> = (0..basis.dim())
            .map(|_| rng.sample::<f64, _>(rand_distr::StandardNormal))
            .collect();
        let rotation = random_rotation(&mut rng);
        let full = compose_shape(&Coefficients::new(alpha.clone())?, basis)?;
        let shape = select_shape(&full, &registry.selection_mask(&cat.id)?)?;
        let cam = rotate(&shape, &rotation);
        let (y_true, centroid, scale) = normalize(&project(&cam, &rotation_identity()))?;
        // Keep the 3D truth consistent with the normalized projection: the
        // x-y transform carries over, depth is centered and equally scaled.
        let mean_z = cam.coords.iter().map(|p| p[2]).sum::<f64>() / cam.len() as f64;
        let x_true = KeypointSet3D::new(
            cam.coords
                .iter()
                .map(|p| {
                    [
                        (p[0] - centroid[0]) / scale,
                        (p[1] - centroid[1]) / scale,
                        (p[2] - mean_z) / scale,
                    ]
                })
                .collect(),
        )?;
        let pixels = KeypointSet2D {
            coords: frame.viewport.map_all(&y_true.coords),
            visibility: y_true.visibility.clone(),
        };
        let map = build_planar_map(
            registry,
            &cat.id,
            &pixels,
            &x_true.depths(),
            &vec![true; cat.plane_count()],
        )?;
        let map = with_estimated_visibility(&map, frame.width, frame.height);
        let mask_true = rasterize(&map, frame.width, frame.height);
        samples.push(SceneSample {
            category_id: cat.id.clone(),
            alpha,
            rotation,
            y_true,
            x_true,
            mask_true,
            labeled: i < labeled_count,
        });
    }
    Ok(samples)
}

// The camera frame is already rotated; projection only drops z.
fn rotation_identity() -> Rotation {
    Rotation::identity()
}

/// Emits corrupted predictions for a scene: noisy keypoints, a possibly
/// depth-flipped noisy shape, and a Monte-Carlo logits stack whose mean
/// encodes the true mask at `logit_snr` with dropout and jitter per run.
/// `improvement` in [0, 1] scales the keypoint noise down to zero.
pub fn oracle_predict(
    sample: &SceneSample,
    noise: &OracleNoise,
    improvement: f64,
    rng: &mut ChaCha8Rng,
) -> Result<(KeypointSet2D, KeypointSet3D, LogitsStack)> {
    noise.validate()?;
    let eff_std = (1.0 - improvement.clamp(0.0, 1.0)) * noise.kp_noise_std;
    let kp_noise = Normal::new(0.0, eff_std).expect("validated std");
    let y_hat = KeypointSet2D {
        coords: sample
            .y_true
            .coords
            .iter()
            .map(|p| [p[0] + kp_noise.sample(rng), p[1] + kp_noise.sample(rng)])
            .collect(),
        visibility: sample.y_true.visibility.clone(),
    };
    let mut x_coords: Vec<[f64; 3]> = sample
        .x_true
        .coords
        .iter()
        .map(|p| {
            [
                p[0] + kp_noise.sample(rng),
                p[1] + kp_noise.sample(rng),
                p[2] + kp_noise.sample(rng),
            ]
        })
        .collect();
    if rng.random::<f64>() < noise.depth_flip_prob {
        for p in &mut x_coords {
            p[2] = -p[2];
        }
    }
    let x_hat = KeypointSet3D::new(x_coords)?;

    let (h, w) = (sample.mask_true.height(), sample.mask_true.width());
    let s = usize::from(
        sample
            .mask_true
            .cells()
            .iter()
            .copied()
            .max()
            .unwrap_or(0),
    )
    .max(1)
        + 1;
    let keep = Bernoulli::new(1.0 - noise.dropout_p).expect("validated dropout");
    let jitter = Normal::new(0.0, noise.mc_jitter_std).expect("validated jitter");
    let scale = noise.logit_snr / (1.0 - noise.dropout_p);
    let mut data = Vec::with_capacity(noise.mc_runs * h * w * s);
    for _ in 0..noise.mc_runs {
        for row in 0..h {
            for col in 0..w {
                let true_class = sample.mask_true.get(row, col) as usize;
                let signal = if keep.sample(rng) { scale } else { 0.0 };
                for class in 0..s {
                    let base = if class == true_class { signal } else { 0.0 };
                    data.push((base + jitter.sample(rng)) as f32);
                }
            }
        }
    }
    let stack = LogitsStack::new(noise.mc_runs, h, w, s, data)?;
    Ok((y_hat, x_hat, stack))
}

/// One recursion's aggregate quality numbers over the unlabeled samples.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RecursionRow {
    pub recursion: usize,
    /// Mean 2D distance of the generated pseudo-targets to ground truth.
    pub mean_2d_err: f64,
    /// Mean per-joint error of the oracle's 3D predictions.
    pub mpjpe: f64,
    /// Mean class IOU of the pseudo-labels against the true masks
    /// (uncertain pixels count as wrong).
    pub miou: f64,
    /// Mean fraction of uncertain pixels in the pseudo-labels.
    pub uncertain_frac: f64,
}

/// Per-recursion report; one row per recursion.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RecursionReport {
    pub rows: Vec<RecursionRow>,
}

impl RecursionReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("recursion,mean_2d_err,mpjpe,miou,uncertain_frac\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{:.9},{:.9},{:.9},{:.9}\n",
                r.recursion, r.mean_2d_err, r.mpjpe, r.miou, r.uncertain_frac
            ));
        }
        out
    }

    pub fn write_csv(&self, mut w: impl Write) -> Result<()> {
        w.write_all(self.to_csv().as_bytes())?;
        Ok(())
    }

    pub fn to_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }
}

/// Settings for [`run_recursion`].
#[derive(Debug, Clone)]
pub struct RecursionConfig {
    pub n_recursions: usize,
    pub noise: OracleNoise,
    pub p_threshold: f64,
    pub exempt_background: bool,
    pub targets: PseudoTargetConfig,
    pub seed: u64,
}

impl Default for RecursionConfig {
    fn default() -> Self {
        Self {
            n_recursions: 3,
            noise: OracleNoise::default(),
            p_threshold: defaults::P_THRESHOLD,
            exempt_background: true,
            targets: PseudoTargetConfig::default(),
            seed: 7,
        }
    }
}

struct SampleStats {
    pred_err: f64,
    target_err: f64,
    mpjpe: f64,
    miou: f64,
    uncertain: f64,
}

/// SplitMix64 scramble for deriving independent per-sample streams.
fn mix_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Runs the pseudo-labelling recursion over the dataset's unlabeled samples.
/// Each recursion predicts with the oracle, generates semantic pseudo-labels
/// and 2D pseudo-targets, and records quality against ground truth. The
/// oracle's improvement for recursion t+1 is
/// `clamp(1 - targetErr_t / predErr_0)`, coupling prediction quality to the
/// previous recursion's pseudo-target error.
///
/// Per-sample noise streams are common across recursions (fresh labels are
/// generated each recursion, but from the same underlying draws), so the
/// reported trend reflects the improvement coupling rather than resampling
/// noise. Deterministic given the seed, independent of thread count.
pub fn run_recursion(
    dataset: &[SceneSample],
    registry: &Registry,
    frame: &Frame,
    cfg: &RecursionConfig,
) -> Result<RecursionReport> {
    if cfg.n_recursions == 0 {
        return Err(Error::Config("n_recursions must be at least 1".into()));
    }
    cfg.noise.validate()?;
    let unlabeled: Vec<usize> = dataset
        .iter()
        .enumerate()
        .filter(|(_, s)| !s.labeled)
        .map(|(i, _)| i)
        .collect();
    if unlabeled.is_empty() {
        return Err(Error::Config("dataset has no unlabeled samples".into()));
    }
    let label_cfg = SemanticLabelConfig {
        p_threshold: cfg.p_threshold,
        exempt_background: cfg.exempt_background,
        viewport: frame.viewport,
    };
    let mut rows = Vec::with_capacity(cfg.n_recursions);
    let mut improvement = 0.0f64;
    let mut baseline_pred_err: Option<f64> = None;
    for rec in 0..cfg.n_recursions {
        let stats: Result<Vec<SampleStats>> = unlabeled
            .par_iter()
            .map(|&idx| {
                let sample = &dataset[idx];
                let cat = registry.category(&sample.category_id)?;
                let mut rng = ChaCha8Rng::seed_from_u64(mix_seed(cfg.seed, idx as u64));
                let (y_hat, x_hat, stack) =
                    oracle_predict(sample, &cfg.noise, improvement, &mut rng)?;
                let (label, sign) = generate_semantic_pseudo_label(
                    &stack,
                    &x_hat,
                    &y_hat,
                    registry,
                    &sample.category_id,
                    &label_cfg,
                )?;
                let mut tcfg = cfg.targets;
                tcfg.rng_seed = mix_seed(cfg.seed ^ 0xa5a5_5a5a_0f0f_f0f0, idx as u64);
                let targets = generate_pseudo_targets(
                    &y_hat,
                    &x_hat,
                    &label,
                    registry,
                    &sample.category_id,
                    &tcfg,
                    frame,
                    Some(sign),
                )?;
                Ok(SampleStats {
                    pred_err: mean_l2_2d(&y_hat, &sample.y_true)?,
                    target_err: mean_l2_2d(&targets.targets, &sample.y_true)?,
                    mpjpe: mpjpe(&x_hat, &sample.x_true)?,
                    miou: mean_class_iou(&label, &sample.mask_true, cat.class_range(), false)?,
                    uncertain: label.uncertain_fraction(),
                })
            })
            .collect();
        let stats = stats?;
        let n = stats.len() as f64;
        let mean_pred = stats.iter().map(|s| s.pred_err).sum::<f64>() / n;
        let mean_target = stats.iter().map(|s| s.target_err).sum::<f64>() / n;
        rows.push(RecursionRow {
            recursion: rec,
            mean_2d_err: mean_target,
            mpjpe: stats.iter().map(|s| s.mpjpe).sum::<f64>() / n,
            miou: stats.iter().map(|s| s.miou).sum::<f64>() / n,
            uncertain_frac: stats.iter().map(|s| s.uncertain).sum::<f64>() / n,
        });
        let baseline = *baseline_pred_err.get_or_insert(mean_pred);
        improvement = if baseline <= 1e-12 {
            1.0
        } else {
            (1.0 - mean_target / baseline).clamp(0.0, 1.0)
        };
    }
    Ok(RecursionReport { rows })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::hull::{CategorySchema, HullSchema, PlaneSchema};
    use crate::losses::loss_reproj;
    use approx::assert_abs_diff_eq;

    pub(crate) fn wedge_registry() -> Registry {
        Registry::from_schema(&HullSchema {
            categories: vec![CategorySchema {
                id: "wedge".into(),
                keypoints: (0..6).map(|i| format!("k{i}")).collect(),
                planes: vec![
                    PlaneSchema { name: "base".into(), vertices: vec![0, 1, 2, 3] },
                    PlaneSchema { name: "slope_a".into(), vertices: vec![0, 1, 5, 4] },
                    PlaneSchema { name: "slope_b".into(), vertices: vec![3, 2, 5, 4] },
                    PlaneSchema { name: "end_a".into(), vertices: vec![0, 3, 4] },
                    PlaneSchema { name: "end_b".into(), vertices: vec![1, 2, 5] },
                ],
            }],
        })
        .unwrap()
    }

    pub(crate) fn wedge_template() -> KeypointSet3D {
        KeypointSet3D::new(vec![
            [-1.0, -0.6, 0.0],
            [1.0, -0.6, 0.0],
            [1.0, 0.6, 0.0],
            [-1.0, 0.6, 0.0],
            [-1.0, 0.0, 1.0],
            [1.0, 0.0, 1.0],
        ])
        .unwrap()
    }

    fn fixture() -> (Registry, ShapeBasis, Frame) {
        let registry = wedge_registry();
        let mut templates = BTreeMap::new();
        templates.insert("wedge".to_string(), wedge_template());
        let basis = synthetic_basis(&registry, &templates, 2, 0.1, 99).unwrap();
        (registry, basis, Frame::fit(48, 48))
    }

    #[test]
    fn dataset_fractions_and_determinism() {
        let (registry, basis, frame) = fixture();
        let all = generate_dataset(&registry, 7, 1.0, &basis, &frame, 5).unwrap();
        assert!(all.iter().all(|s| s.labeled));
        let none = generate_dataset(&registry, 7, 0.0, &basis, &frame, 5).unwrap();
        assert!(none.iter().all(|s| !s.labeled));
        let half = generate_dataset(&registry, 7, 0.5, &basis, &frame, 5).unwrap();
        assert_eq!(half.iter().filter(|s| s.labeled).count(), 4); // ceil(3.5)

        let again = generate_dataset(&registry, 7, 0.5, &basis, &frame, 5).unwrap();
        for (a, b) in half.iter().zip(&again) {
            assert_eq!(a.y_true.coords, b.y_true.coords);
            assert_eq!(a.x_true.coords, b.x_true.coords);
            assert_eq!(a.mask_true, b.mask_true);
        }
        assert!(generate_dataset(&registry, 7, 1.5, &basis, &frame, 5).is_err());
    }

    #[test]
    fn ground_truth_is_self_consistent() {
        let (registry, basis, frame) = fixture();
        let samples = generate_dataset(&registry, 10, 0.5, &basis, &frame, 21).unwrap();
        for s in &samples {
            // Projection consistency between normalized Y and X.
            assert!(loss_reproj(&s.y_true, &s.x_true, 1.0).unwrap() < 1e-10);
            // Mask classes stay within the category's range plus background.
            let cat = registry.category(&s.category_id).unwrap();
            let range = cat.class_range();
            for &c in s.mask_true.cells() {
                assert!(c == 0 || range.contains(&c), "class {c} out of range");
            }
        }
    }

    #[test]
    fn noiseless_oracle_is_exact() {
        let (registry, basis, frame) = fixture();
        let samples = generate_dataset(&registry, 2, 0.0, &basis, &frame, 3).unwrap();
        let noise = OracleNoise {
            kp_noise_std: 0.2,
            depth_flip_prob: 0.0,
            logit_snr: 40.0,
            mc_jitter_std: 0.0,
            dropout_p: 0.0,
            mc_runs: 4,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        // improvement = 1 cancels the keypoint noise entirely.
        let (y, x, stack) = oracle_predict(&samples[0], &noise, 1.0, &mut rng).unwrap();
        assert_eq!(y.coords, samples[0].y_true.coords);
        assert_eq!(x.coords, samples[0].x_true.coords);
        let hardened = crate::uncertainty::mc_mean_argmax(&stack);
        assert_eq!(hardened, samples[0].mask_true);
    }

    #[test]
    fn oracle_noise_statistics_match_configuration() {
        let (registry, basis, frame) = fixture();
        let samples = generate_dataset(&registry, 1, 0.0, &basis, &frame, 3).unwrap();
        let noise = OracleNoise {
            kp_noise_std: 0.08,
            mc_runs: 2,
            mc_jitter_std: 0.0,
            dropout_p: 0.0,
            logit_snr: 1.0,
            depth_flip_prob: 0.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let mut sq_sum = 0.0;
        let mut count = 0usize;
        for _ in 0..1000 {
            let (y, _, _) = oracle_predict(&samples[0], &noise, 0.0, &mut rng).unwrap();
            for (a, b) in y.coords.iter().zip(&samples[0].y_true.coords) {
                sq_sum += (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
                count += 2;
            }
        }
        let measured = (sq_sum / count as f64).sqrt();
        assert!(
            (measured - noise.kp_noise_std).abs() < 0.1 * noise.kp_noise_std,
            "measured std {measured} vs configured {}",
            noise.kp_noise_std
        );
    }

    #[test]
    fn certain_flip_probability_flips_every_depth() {
        let (registry, basis, frame) = fixture();
        let samples = generate_dataset(&registry, 1, 0.0, &basis, &frame, 3).unwrap();
        let noise = OracleNoise {
            kp_noise_std: 0.0,
            depth_flip_prob: 1.0,
            mc_runs: 2,
            mc_jitter_std: 0.0,
            dropout_p: 0.0,
            logit_snr: 1.0,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let (_, x, _) = oracle_predict(&samples[0], &noise, 0.0, &mut rng).unwrap();
        for (p, q) in x.coords.iter().zip(&samples[0].x_true.coords) {
            assert_eq!(p[2], -q[2]);
        }
    }

    #[test]
    fn noiseless_recursion_reports_zero_error() {
        let (registry, basis, frame) = fixture();
        let dataset = generate_dataset(&registry, 4, 0.25, &basis, &frame, 13).unwrap();
        let cfg = RecursionConfig {
            n_recursions: 2,
            noise: OracleNoise {
                kp_noise_std: 0.0,
                depth_flip_prob: 0.0,
                logit_snr: 40.0,
                mc_jitter_std: 0.0,
                dropout_p: 0.0,
                mc_runs: 4,
            },
            targets: PseudoTargetConfig {
                n_candidates: 4,
                noise_std: 0.0,
                rng_seed: 0,
                isolate_planes: true,
            },
            ..Default::default()
        };
        let report = run_recursion(&dataset, &registry, &frame, &cfg).unwrap();
        assert_eq!(report.rows.len(), 2);
        for row in &report.rows {
            assert_abs_diff_eq!(row.mean_2d_err, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row.mpjpe, 0.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row.miou, 1.0, epsilon = 1e-12);
            assert_abs_diff_eq!(row.uncertain_frac, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn single_recursion_report_has_one_row() {
        let (registry, basis, frame) = fixture();
        let dataset = generate_dataset(&registry, 2, 0.0, &basis, &frame, 13).unwrap();
        let cfg = RecursionConfig {
            n_recursions: 1,
            noise: OracleNoise {
                mc_runs: 8,
                ..Default::default()
            },
            targets: PseudoTargetConfig {
                n_candidates: 2,
                ..Default::default()
            },
            ..Default::default()
        };
        let report = run_recursion(&dataset, &registry, &frame, &cfg).unwrap();
        assert_eq!(report.rows.len(), 1);
        let csv = report.to_csv();
        assert!(csv.starts_with("recursion,mean_2d_err,mpjpe,miou,uncertain_frac\n"));
        assert_eq!(csv.lines().count(), 2);
    }

    #[test]
    fn recursion_is_deterministic() {
        let (registry, basis, frame) = fixture();
        let dataset = generate_dataset(&registry, 4, 0.25, &basis, &frame, 13).unwrap();
        let cfg = RecursionConfig {
            n_recursions: 2,
            noise: OracleNoise {
                mc_runs: 6,
                ..Default::default()
            },
            targets: PseudoTargetConfig {
                n_candidates: 3,
                ..Default::default()
            },
            ..Default::default()
        };
        let a = run_recursion(&dataset, &registry, &frame, &cfg).unwrap();
        let b = run_recursion(&dataset, &registry, &frame, &cfg).unwrap();
        assert_eq!(a.to_csv(), b.to_csv());
    }
}
