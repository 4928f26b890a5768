//! Criterion benchmarks for the latticeopt kernels; see `benches/`.
