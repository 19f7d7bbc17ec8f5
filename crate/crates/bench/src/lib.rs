//! Criterion benchmarks for overtake-core live in `benches/`.
