//! Benchmarks for the `fedgengmm` crate live in `benches/`.
