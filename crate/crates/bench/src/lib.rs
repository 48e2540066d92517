//! Criterion benchmarks for posekit live in `benches/`.
