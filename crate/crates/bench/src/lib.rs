//! Benchmarks live in `benches/`; run them with `cargo bench -p i3net-bench`.
