//! Acceptance suite: one test per criterion, each printing a pass/fail line.
//! Run with `cargo test -p pph-core --test acceptance -- --nocapture`.

mod common;

use std::time::Instant;

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, StandardNormal};

use pph_core::geometry::{KeypointSet2D, KeypointSet3D};
use pph_core::hull::{validate_hull, CategorySchema, HullSchema, PlaneSchema, Registry};
use pph_core::metrics::{mean_l2_2d, mpjpe, stress};
use pph_core::pseudo2d::{generate_pseudo_targets, PseudoTargetConfig};
use pph_core::raster::{rasterize, Frame, MaskGrid, PlanarMap, PlanePolygon2D, UNCERTAIN};
use pph_core::simkit::{
    generate_dataset, oracle_predict, run_recursion, synthetic_basis, OracleNoise, RecursionConfig,
};
use pph_core::uncertainty::{
    apply_visibility_mask, mc_mean_argmax, mc_pseudo_label, plane_agreement_mask, welch_t_pvalue,
};
use pph_core::visibility::resolve_depth_flip;

fn report(criterion: usize, label: &str, ok: bool) {
    println!(
        "criterion {criterion} ({label}): {}",
        if ok { "PASS" } else { "FAIL" }
    );
    assert!(ok, "criterion {criterion} ({label}) failed");
}

fn random_map(rng: &mut ChaCha8Rng, width: usize, height: usize) -> PlanarMap {
    let n_polys = rng.random_range(1..=5);
    let planes = (0..n_polys)
        .map(|_| {
            let n_verts = rng.random_range(3..=6);
            let cx = rng.random_range(-4.0..width as f64 + 4.0);
            let cy = rng.random_range(-4.0..height as f64 + 4.0);
            let radius = rng.random_range(2.0..0.7 * width.max(height) as f64);
            // Star-shaped polygon around the center: angles sorted so the
            // boundary does not self-intersect.
            let mut angles: Vec<f64> = (0..n_verts)
                .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
                .collect();
            angles.sort_by(|a, b| a.partial_cmp(b).unwrap());
            let vertices: Vec<[f64; 2]> = angles
                .iter()
                .map(|a| {
                    let r = radius * rng.random_range(0.35..1.0);
                    [cx + r * a.cos(), cy + r * a.sin()]
                })
                .collect();
            let depths: Vec<f64> = (0..n_verts).map(|_| rng.random_range(-2.0..2.0)).collect();
            PlanePolygon2D {
                class_id: rng.random_range(1..20),
                vertices,
                depths,
                visible: rng.random::<f64>() > 0.15,
            }
        })
        .collect();
    PlanarMap {
        category_id: "random".into(),
        planes,
    }
}

#[test]
fn criterion_1_rasterizer_matches_brute_force_oracle() {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac1);
    for case in 0..500 {
        let width = rng.random_range(8..=64);
        let height = rng.random_range(8..=64);
        let map = random_map(&mut rng, width, height);
        let fast = rasterize(&map, width, height);
        let slow = common::reference_rasterize(&map, width, height);
        assert_eq!(fast, slow, "case {case}: {width}x{height} map diverged");
    }
    let elapsed = start.elapsed();
    report(
        1,
        "rasterizer oracle equivalence",
        elapsed.as_secs_f64() < 30.0,
    );
    println!("  500 random maps, bit-exact, {:.2}s", elapsed.as_secs_f64());
}

#[test]
fn criterion_2_welch_matches_textbook_reference() {
    use statrs::distribution::{ContinuousCDF, StudentsT};
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac2);
    let mut max_err = 0.0f64;
    for _ in 0..1000 {
        let na = rng.random_range(2..=60);
        let nb = rng.random_range(2..=60);
        let loc_a = rng.random_range(-5.0..5.0);
        let loc_b = rng.random_range(-5.0..5.0);
        let sd_a = rng.random_range(0.05..3.0);
        let sd_b = rng.random_range(0.05..3.0);
        let a: Vec<f64> = (0..na)
            .map(|_| loc_a + sd_a * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let b: Vec<f64> = (0..nb)
            .map(|_| loc_b + sd_b * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let p = welch_t_pvalue(&a, &b).unwrap();

        // Independent textbook route: t statistic, Welch-Satterthwaite dof,
        // reference Student-t CDF.
        let mean = |xs: &[f64]| xs.iter().sum::<f64>() / xs.len() as f64;
        let var = |xs: &[f64], m: f64| {
            xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (xs.len() - 1) as f64
        };
        let (ma, mb) = (mean(&a), mean(&b));
        let (va, vb) = (var(&a, ma), var(&b, mb));
        let (fa, fb) = (na as f64, nb as f64);
        let se2 = va / fa + vb / fb;
        let t = (ma - mb) / se2.sqrt();
        let dof = se2 * se2 / ((va / fa).powi(2) / (fa - 1.0) + (vb / fb).powi(2) / (fb - 1.0));
        let expect = 2.0 * StudentsT::new(0.0, 1.0, dof).unwrap().cdf(-t.abs());
        max_err = max_err.max((p - expect).abs());
    }
    // Degenerate zero-variance rules.
    let flat = vec![2.5; 8];
    let ok_rules = welch_t_pvalue(&flat, &flat).unwrap() == 1.0
        && welch_t_pvalue(&flat, &vec![1.0; 8]).unwrap() == 0.0;
    report(
        2,
        "Welch t-test reference agreement",
        max_err < 1e-9 && ok_rules,
    );
    println!("  1000 pairs, max |dp| = {max_err:.2e}");
}

#[test]
fn criterion_3_masking_only_shrinks_the_certain_set() {
    let registry = common::demo_registry();
    let basis = synthetic_basis(&registry, &common::demo_templates(), 3, 0.12, 0x0ac3).unwrap();
    let frame = Frame::fit(48, 48);
    let dataset = generate_dataset(&registry, 200, 0.0, &basis, &frame, 0x0ac3).unwrap();
    for (i, sample) in dataset.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(900 + i as u64);
        let noise = OracleNoise {
            kp_noise_std: rng.random_range(0.0..0.2),
            depth_flip_prob: 0.5,
            logit_snr: rng.random_range(0.0..8.0),
            mc_jitter_std: rng.random_range(0.2..2.0),
            dropout_p: 0.2,
            mc_runs: 12,
        };
        let (y_hat, x_hat, stack) = oracle_predict(sample, &noise, 0.0, &mut rng).unwrap();
        let mc = mc_pseudo_label(&stack, 0.05);
        let seg = mc_mean_argmax(&stack);
        let (_, map) = resolve_depth_flip(
            &x_hat,
            &y_hat,
            &registry,
            &sample.category_id,
            &seg,
            &frame.viewport,
        )
        .unwrap();
        let after_vis = apply_visibility_mask(&mc, &map, &registry).unwrap();
        let rendered = rasterize(&map, frame.width, frame.height);
        let after_agree = plane_agreement_mask(&after_vis, &rendered, true).unwrap();
        for ((&a, &b), &c) in mc
            .cells()
            .iter()
            .zip(after_vis.cells())
            .zip(after_agree.cells())
        {
            // Exact set inclusion: certain pixels only ever disappear, and
            // surviving pixels keep their class.
            assert!(b == UNCERTAIN || b == a, "visibility stage changed a class");
            assert!(c == UNCERTAIN || c == b, "agreement stage changed a class");
            if a == UNCERTAIN {
                assert_eq!(b, UNCERTAIN);
            }
            if b == UNCERTAIN {
                assert_eq!(c, UNCERTAIN);
            }
        }
    }
    report(3, "uncertainty monotonicity", true);
}

#[test]
fn criterion_4_closed_loop_consistency() {
    let registry = common::demo_registry();
    let basis = synthetic_basis(&registry, &common::demo_templates(), 3, 0.12, 0x0ac4).unwrap();
    let frame = Frame::fit(64, 64);
    let dataset = generate_dataset(&registry, 100, 0.0, &basis, &frame, 0x0ac4).unwrap();
    for (i, sample) in dataset.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + i as u64);
        let jitter = Normal::new(0.0, 0.03).unwrap();
        let y = KeypointSet2D {
            coords: sample
                .y_true
                .coords
                .iter()
                .map(|p| [p[0] + jitter.sample(&mut rng), p[1] + jitter.sample(&mut rng)])
                .collect(),
            visibility: sample.y_true.visibility.clone(),
        };
        for cfg in [
            PseudoTargetConfig {
                n_candidates: 0,
                noise_std: 0.01,
                rng_seed: i as u64,
                isolate_planes: true,
            },
            PseudoTargetConfig {
                n_candidates: 32,
                noise_std: 0.0,
                rng_seed: i as u64,
                isolate_planes: true,
            },
        ] {
            let out = generate_pseudo_targets(
                &y,
                &sample.x_true,
                &sample.mask_true,
                &registry,
                &sample.category_id,
                &cfg,
                &frame,
                None,
            )
            .unwrap();
            assert_eq!(
                out.targets.coords, y.coords,
                "scene {i}: closed loop must return the inputs bit-exactly"
            );
        }
    }
    report(4, "closed-loop consistency", true);
}

#[test]
fn criterion_5_pseudo_targets_improve_noisy_keypoints() {
    let start = Instant::now();
    let registry = common::demo_registry();
    let basis = synthetic_basis(&registry, &common::demo_templates(), 3, 0.12, 0x0ac5).unwrap();
    let frame = Frame::fit(256, 256);
    let dataset = generate_dataset(&registry, 200, 0.0, &basis, &frame, 0x0ac5).unwrap();
    let sigma = 0.01;
    let kp_noise = Normal::new(0.0, 5.0 * sigma).unwrap();
    let mut wins = 0usize;
    let mut sum_pred = 0.0;
    let mut sum_target = 0.0;
    for (i, sample) in dataset.iter().enumerate() {
        let mut rng = ChaCha8Rng::seed_from_u64(50_000 + i as u64);
        let y = KeypointSet2D {
            coords: sample
                .y_true
                .coords
                .iter()
                .map(|p| [p[0] + kp_noise.sample(&mut rng), p[1] + kp_noise.sample(&mut rng)])
                .collect(),
            visibility: sample.y_true.visibility.clone(),
        };
        let cfg = PseudoTargetConfig {
            n_candidates: 32,
            noise_std: sigma,
            rng_seed: 77_000 + i as u64,
            isolate_planes: true,
        };
        let out = generate_pseudo_targets(
            &y,
            &sample.x_true,
            &sample.mask_true,
            &registry,
            &sample.category_id,
            &cfg,
            &frame,
            Some(1),
        )
        .unwrap();
        let pred_err = mean_l2_2d(&y, &sample.y_true).unwrap();
        let target_err = mean_l2_2d(&out.targets, &sample.y_true).unwrap();
        if target_err < pred_err {
            wins += 1;
        }
        sum_pred += pred_err;
        sum_target += target_err;
    }
    let elapsed = start.elapsed().as_secs_f64();
    let win_rate = wins as f64 / dataset.len() as f64;
    let reduction = 1.0 - sum_target / sum_pred;
    println!(
        "  win rate {win_rate:.3}, mean error reduction {:.1}%, {elapsed:.1}s",
        100.0 * reduction
    );
    report(
        5,
        "pseudo-target improvement",
        win_rate >= 0.90 && reduction >= 0.20 && elapsed < 120.0,
    );
}

#[test]
fn criterion_6_depth_flip_resolution() {
    let registry = common::demo_registry();
    let basis = synthetic_basis(&registry, &common::demo_templates(), 3, 0.12, 0x0ac6).unwrap();
    let frame = Frame::fit(64, 64);
    let dataset = generate_dataset(&registry, 200, 0.0, &basis, &frame, 0x0ac6).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac6_0001);
    let mut decided = 0usize;
    let mut correct = 0usize;
    for sample in &dataset {
        let flipped = rng.random::<f64>() < 0.5;
        let x = if flipped {
            sample.x_true.with_depth_sign(-1.0)
        } else {
            sample.x_true.clone()
        };
        let (sign, _) = resolve_depth_flip(
            &x,
            &sample.y_true,
            &registry,
            &sample.category_id,
            &sample.mask_true,
            &frame.viewport,
        )
        .unwrap();
        // The anti-symmetric run detects ties: when the two agreement scores
        // are equal both calls return +1.
        let (sign_back, _) = resolve_depth_flip(
            &x.with_depth_sign(-1.0),
            &sample.y_true,
            &registry,
            &sample.category_id,
            &sample.mask_true,
            &frame.viewport,
        )
        .unwrap();
        if sign == sign_back {
            continue; // tied agreement scores
        }
        decided += 1;
        let expected = if flipped { -1 } else { 1 };
        if sign == expected {
            correct += 1;
        }
    }
    let rate = correct as f64 / decided as f64;
    println!("  {decided} decided of 200, accuracy {rate:.3}");
    report(6, "depth-flip resolution", rate >= 0.95);
}

#[test]
fn criterion_7_recursion_trend() {
    let start = Instant::now();
    let registry = common::demo_registry();
    let cfg = RecursionConfig::default();
    let basis = synthetic_basis(
        &registry,
        &common::demo_templates(),
        3,
        0.12,
        cfg.seed ^ 0x5eed_ba5e,
    )
    .unwrap();
    let frame = Frame::fit(64, 64);
    let dataset = generate_dataset(&registry, 200, 0.25, &basis, &frame, cfg.seed).unwrap();
    let report_rows = run_recursion(&dataset, &registry, &frame, &cfg).unwrap().rows;
    let elapsed = start.elapsed().as_secs_f64();
    assert_eq!(report_rows.len(), 3);
    for row in &report_rows {
        println!(
            "  recursion {}: 2d_err {:.5} mpjpe {:.5} miou {:.4} uncertain {:.4}",
            row.recursion, row.mean_2d_err, row.mpjpe, row.miou, row.uncertain_frac
        );
    }
    let mut ok = true;
    for pair in report_rows.windows(2) {
        ok &= pair[1].mean_2d_err <= pair[0].mean_2d_err;
        ok &= pair[1].mpjpe <= pair[0].mpjpe;
        ok &= pair[1].miou >= pair[0].miou;
    }
    println!("  elapsed {elapsed:.1}s");
    report(7, "recursion trend", ok && elapsed < 300.0);
}

#[test]
fn criterion_8_metric_identities() {
    let mut ok = true;
    let x = KeypointSet3D::new(vec![[0.0, 0.0, 0.0], [1.0, 1.0, 1.0]]).unwrap();
    ok &= mpjpe(&x, &x).unwrap() == 0.0;
    ok &= stress(&x, &x).unwrap() == 0.0;

    // 3-4-5 right triangle distance.
    let a = KeypointSet3D::new(vec![[0.0, 0.0, 0.0]]).unwrap();
    let b = KeypointSet3D::new(vec![[3.0, 4.0, 0.0]]).unwrap();
    ok &= mpjpe(&a, &b).unwrap() == 5.0;

    // Rigid-motion invariance of stress at 1e-10.
    let mut rng = ChaCha8Rng::seed_from_u64(0x0ac8);
    let shape = KeypointSet3D::new(
        (0..8)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect(),
    )
    .unwrap();
    let other = KeypointSet3D::new(
        (0..8)
            .map(|_| {
                [
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                    rng.random_range(-1.0..1.0),
                ]
            })
            .collect(),
    )
    .unwrap();
    let base = stress(&shape, &other).unwrap();
    let rot = pph_core::Rotation::about_z(1.234);
    let mut moved = pph_core::geometry::rotate(&shape, &rot);
    for p in &mut moved.coords {
        p[0] += 3.0;
        p[1] -= 7.0;
        p[2] += 0.5;
    }
    ok &= (stress(&moved, &other).unwrap() - base).abs() < 1e-10;

    report(8, "metric identities", ok);
}

#[test]
fn criterion_9_hull_validation() {
    // The shipped cube hull validates.
    let registry = Registry::load(common::data_dir().join("hulls/box.json")).unwrap();
    let template = pph_core::geometry::KeypointFile::load(
        common::data_dir().join("templates/box.json"),
    )
    .unwrap()
    .to_3d()
    .unwrap();
    let cube_ok = validate_hull(registry.category("box").unwrap(), &template)
        .unwrap()
        .is_valid();

    // A constructed interpenetrating pair is rejected with the pair named.
    let schema = HullSchema {
        categories: vec![CategorySchema {
            id: "cross".into(),
            keypoints: (0..8).map(|i| format!("k{i}")).collect(),
            planes: vec![
                PlaneSchema { name: "slab".into(), vertices: vec![0, 1, 2, 3] },
                PlaneSchema { name: "blade".into(), vertices: vec![4, 5, 6, 7] },
            ],
        }],
    };
    let bad_template = KeypointSet3D::new(vec![
        [-1.0, -1.0, 0.0],
        [1.0, -1.0, 0.0],
        [1.0, 1.0, 0.0],
        [-1.0, 1.0, 0.0],
        [-0.5, 0.1, -0.5],
        [0.5, 0.1, -0.5],
        [0.5, -0.1, 0.5],
        [-0.5, -0.1, 0.5],
    ])
    .unwrap();
    let bad_registry = Registry::from_schema(&schema).unwrap();
    let report_bad =
        validate_hull(bad_registry.category("cross").unwrap(), &bad_template).unwrap();
    let named = report_bad.violations.len() == 1
        && report_bad.violations[0].name_a == "slab"
        && report_bad.violations[0].name_b == "blade";

    report(9, "hull validation", cube_ok && named);
}
