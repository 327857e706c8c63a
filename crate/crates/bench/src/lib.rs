//! Criterion benchmarks for the conversion, simulation and scoring stages; see `benches/`.
