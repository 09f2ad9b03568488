//! Fixed inputs shared by the benchmarks.

use linetime_core::{DiffusionSpec, SimConfig};

/// A diffusion whose scale integrals have no closed form.
pub fn tanh_drift() -> DiffusionSpec {
    DiffusionSpec::parse("0.5*tanh(x)", "1 + 0.1*cos(x)").expect("valid expressions")
}

/// A small simulation configuration for timing one batch.
pub fn small_config(seed: u64) -> SimConfig {
    SimConfig {
        n_reps: 64,
        seed,
        ..SimConfig::default()
    }
}
