//! Benchmarks live under `benches/`; run with `cargo bench -p cofcn-bench`.

pub use cofcn_core;
