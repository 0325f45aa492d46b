//! Criterion benchmarks for `din-core`. See `benches/`.
