//! Criterion benchmarks for the lmnet kernels live in `benches/`.
