//! Criterion benchmarks for the micfuse kernels; see `benches/`.
