//! Criterion benchmarks for the calibration pipeline; see `benches/`.
