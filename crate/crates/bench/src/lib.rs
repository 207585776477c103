//! Criterion benchmarks for ratiofit live under `benches/`.
