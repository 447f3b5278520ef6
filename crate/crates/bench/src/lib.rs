//! Criterion benchmarks for the dense kernels and one online training step; see `benches/`.
