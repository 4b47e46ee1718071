//! Criterion benchmarks for the simulation and characterization paths.
