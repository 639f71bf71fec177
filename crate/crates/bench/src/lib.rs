//! Criterion benchmarks for the planar-hull engine live in `benches/`.
