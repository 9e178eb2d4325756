//! Benchmarks for magnet-core; see benches/kernels.rs.
