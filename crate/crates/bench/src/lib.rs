//! Criterion benchmarks for the aclaw toolkit; see `benches/toolkit.rs`.
