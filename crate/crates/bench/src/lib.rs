//! Criterion benchmarks for the facewarp pipeline; see `benches/`.
