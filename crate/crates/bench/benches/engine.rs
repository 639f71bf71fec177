//! End-to-end and kernel benchmarks for the label-generation pipeline.

use std::collections::BTreeMap;
use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use pph_core::hull::{CategorySchema, HullSchema, PlaneSchema, Registry};
use pph_core::pseudo2d::{generate_pseudo_targets, PseudoTargetConfig};
use pph_core::raster::{rasterize, Frame};
use pph_core::simkit::{generate_dataset, oracle_predict, synthetic_basis, OracleNoise};
use pph_core::uncertainty::{mc_pseudo_label, welch_t_pvalue};
use pph_core::KeypointSet3D;

fn wedge_registry() -> Registry {
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

fn wedge_template() -> KeypointSet3D {
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

fn fixtures(grid: usize) -> (Registry, Frame, Vec<pph_core::simkit::SceneSample>) {
    let registry = wedge_registry();
    let mut templates = BTreeMap::new();
    templates.insert("wedge".to_string(), wedge_template());
    let basis = synthetic_basis(&registry, &templates, 2, 0.1, 11).unwrap();
    let frame = Frame::fit(grid, grid);
    let dataset = generate_dataset(&registry, 4, 0.0, &basis, &frame, 11).unwrap();
    (registry, frame, dataset)
}

fn bench_rasterize(c: &mut Criterion) {
    let mut group = c.benchmark_group("rasterize");
    for grid in [64usize, 256] {
        let (registry, frame, dataset) = fixtures(grid);
        let sample = &dataset[0];
        let pixels = pph_core::KeypointSet2D {
            coords: frame.viewport.map_all(&sample.y_true.coords),
            visibility: sample.y_true.visibility.clone(),
        };
        let map = pph_core::raster::build_planar_map(
            &registry,
            "wedge",
            &pixels,
            &sample.x_true.depths(),
            &vec![true; 5],
        )
        .unwrap();
        group.bench_function(format!("{grid}x{grid}"), |b| {
            b.iter(|| rasterize(black_box(&map), grid, grid))
        });
    }
    group.finish();
}

fn bench_welch(c: &mut Criterion) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let a: Vec<f64> = (0..50).map(|_| rng.random::<f64>()).collect();
    let b: Vec<f64> = (0..50).map(|_| 0.2 + rng.random::<f64>()).collect();
    c.bench_function("welch_t_pvalue_50", |bch| {
        bch.iter(|| welch_t_pvalue(black_box(&a), black_box(&b)).unwrap())
    });
}

fn bench_mc_label(c: &mut Criterion) {
    let (_, _, dataset) = fixtures(64);
    let noise = OracleNoise::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let (_, _, stack) = oracle_predict(&dataset[0], &noise, 0.0, &mut rng).unwrap();
    c.bench_function("mc_pseudo_label_50x64x64", |b| {
        b.iter(|| mc_pseudo_label(black_box(&stack), 0.05))
    });
}

fn bench_pseudo_targets(c: &mut Criterion) {
    let (registry, frame, dataset) = fixtures(64);
    let noise = OracleNoise::default();
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let sample = &dataset[0];
    let (y, x, _) = oracle_predict(sample, &noise, 0.0, &mut rng).unwrap();
    let cfg = PseudoTargetConfig {
        n_candidates: 8,
        ..Default::default()
    };
    c.bench_function("pseudo_targets_nq8_64x64", |b| {
        b.iter(|| {
            generate_pseudo_targets(
                black_box(&y),
                black_box(&x),
                black_box(&sample.mask_true),
                &registry,
                "wedge",
                &cfg,
                &frame,
                Some(1),
            )
            .unwrap()
        })
    });
}

criterion_group!(
    benches,
    bench_rasterize,
    bench_welch,
    bench_mc_label,
    bench_pseudo_targets
);
criterion_main!(benches);
