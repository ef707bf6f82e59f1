//! Criterion benchmarks for the gradient estimators live in `benches/`.
