//! Criterion benchmarks for `dlsched-core`; see `benches/`.
