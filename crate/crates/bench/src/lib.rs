//! Criterion benchmarks for seldkit live in `benches/`.
