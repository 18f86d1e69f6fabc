//! Criterion benchmarks for qdtile; see `benches/`.
