//! Criterion benchmarks for the motionboost hot paths; see `benches/`.
