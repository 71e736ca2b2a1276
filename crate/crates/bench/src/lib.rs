//! Criterion benchmarks for sched-core live under `benches/`.
