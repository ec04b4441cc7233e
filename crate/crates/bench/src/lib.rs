//! Benchmark-only crate; see `benches/scenarios.rs`.
